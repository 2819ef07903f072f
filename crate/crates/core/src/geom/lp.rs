//! Thin wrapper over `microlp` for the small dense LPs used on polytopes.

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) enum LpOutcome {
    Optimal { value: f64 },
    Infeasible,
    Unbounded,
}

/// `max d·x` subject to `C·x ≤ q` with free `x`.
pub(crate) fn maximize(
    d: &DVector<f64>,
    c: &DMatrix<f64>,
    q: &DVector<f64>,
) -> Result<LpOutcome> {
    let n = d.len();
    let mut problem = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = (0..n)
        .map(|j| problem.add_var(d[j], (f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    for i in 0..c.nrows() {
        let terms: Vec<_> = (0..n)
            .filter(|&j| c[(i, j)] != 0.0)
            .map(|j| (vars[j], c[(i, j)]))
            .collect();
        problem.add_constraint(terms.as_slice(), ComparisonOp::Le, q[i]);
    }
    match problem.solve() {
        Ok(outcome) => {
            let sol = outcome
                .into_solution()
                .map_err(|e| Error::Lp(format!("interrupted: {e:?}")))?;
            let value = (0..n).map(|j| d[j] * sol.var_value(vars[j])).sum();
            Ok(LpOutcome::Optimal { value })
        }
        Err(microlp::Error::Infeasible) => Ok(LpOutcome::Infeasible),
        Err(microlp::Error::Unbounded) => Ok(LpOutcome::Unbounded),
        Err(e) => Err(Error::Lp(e.to_string())),
    }
}

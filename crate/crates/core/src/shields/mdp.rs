use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::{Error, Result};

/// Finite MDP with a safety table and a replacement policy.
///
/// Tables are row-major: `t[(s·A + a)·S + s']`, `r[s·A + a]`,
/// `safe[s·A + a]`, `replacement[s·A + ã]` = π_r(ã | s).
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMDP {
    pub n_states: usize,
    pub n_actions: usize,
    pub t: Vec<f64>,
    pub r: Vec<f64>,
    pub safe: Vec<bool>,
    pub replacement: Vec<f64>,
}

const ROW_TOL: f64 = 1e-12;

impl FiniteMDP {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        t: Vec<f64>,
        r: Vec<f64>,
        safe: Vec<bool>,
        replacement: Vec<f64>,
    ) -> Result<Self> {
        let (ns, na) = (n_states, n_actions);
        if ns == 0 || na == 0 {
            return Err(Error::Input("MDP needs at least one state and one action".into()));
        }
        if t.len() != ns * na * ns {
            return Err(Error::dim("transition tensor", ns * na * ns, t.len()));
        }
        if r.len() != ns * na {
            return Err(Error::dim("reward table", ns * na, r.len()));
        }
        if safe.len() != ns * na {
            return Err(Error::dim("safety table", ns * na, safe.len()));
        }
        if replacement.len() != ns * na {
            return Err(Error::dim("replacement policy", ns * na, replacement.len()));
        }
        if r.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input("reward table has non-finite entries".into()));
        }
        for row in t.chunks(ns) {
            check_distribution(row, "transition row")?;
        }
        for (s, row) in replacement.chunks(na).enumerate() {
            check_distribution(row, "replacement policy")?;
            if let Some(a) = (0..na).find(|&a| row[a] > 0.0 && !safe[s * na + a]) {
                return Err(Error::Input(format!(
                    "replacement policy puts mass on unsafe action {a} in state {s}"
                )));
            }
        }
        Ok(Self { n_states, n_actions, t, r, safe, replacement })
    }

    fn row(&self, s: usize, a: usize) -> &[f64] {
        let ns = self.n_states;
        let start = (s * self.n_actions + a) * ns;
        &self.t[start..start + ns]
    }
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::Input(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_TOL * row.len() as f64 {
        return Err(Error::Input(format!("{what} sums to {sum}")));
    }
    Ok(())
}

/// Transition tensor and reward table seen by an agent whose unsafe actions
/// are replaced by draws from π_r:
/// `T_φ(s,a,·) = Σ_ã π_r(ã|s)·T(s,ã,·)` and `r_φ(s,a) = Σ_ã π_r(ã|s)·r(s,ã)`
/// for unsafe `a`, unchanged otherwise.
pub fn shielded_mdp_model(m: &FiniteMDP) -> (Vec<f64>, Vec<f64>) {
    let (ns, na) = (m.n_states, m.n_actions);
    let mut t = m.t.clone();
    let mut r = m.r.clone();
    for s in 0..ns {
        for a in (0..na).filter(|&a| !m.safe[s * na + a]) {
            let row = &mut t[(s * na + a) * ns..(s * na + a + 1) * ns];
            row.fill(0.0);
            r[s * na + a] = 0.0;
            for alt in 0..na {
                let w = m.replacement[s * na + alt];
                if w == 0.0 {
                    continue;
                }
                for (dst, p) in row.iter_mut().zip(m.row(s, alt)) {
                    *dst += w * p;
                }
                r[s * na + a] += w * m.r[s * na + alt];
            }
        }
    }
    (t, r)
}

/// Monte-Carlo estimate of `T_φ` from `samples` shielded steps per
/// state-action pair.
pub fn simulate_shielded<R: Rng + ?Sized>(m: &FiniteMDP, samples: usize, rng: &mut R) -> Result<Vec<f64>> {
    let (ns, na) = (m.n_states, m.n_actions);
    let weighted = |w: &[f64]| WeightedIndex::new(w).map_err(|e| Error::Input(e.to_string()));
    let next: Vec<WeightedIndex<f64>> =
        (0..ns * na).map(|i| weighted(&m.t[i * ns..(i + 1) * ns])).collect::<Result<_>>()?;
    let policy: Vec<WeightedIndex<f64>> =
        (0..ns).map(|s| weighted(&m.replacement[s * na..(s + 1) * na])).collect::<Result<_>>()?;
    let mut est = vec![0.0; ns * na * ns];
    for s in 0..ns {
        for a in 0..na {
            let mut counts = vec![0usize; ns];
            for _ in 0..samples {
                let executed = if m.safe[s * na + a] { a } else { policy[s].sample(rng) };
                counts[next[s * na + executed].sample(rng)] += 1;
            }
            for (k, c) in counts.into_iter().enumerate() {
                est[(s * na + a) * ns + k] = c as f64 / samples as f64;
            }
        }
    }
    Ok(est)
}

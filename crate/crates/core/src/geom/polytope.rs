use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::lp::{self, LpOutcome};
use super::{check_finite_mat, check_finite_vec, Hyperbox, Zonotope, CONTAINMENT_SLACK};
use crate::{Error, Result};

/// Halfspace polytope `{x : C·x ≤ q}`.
///
/// Rows are stored as given; they need not have unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct HPolytope {
    c: DMatrix<f64>,
    q: DVector<f64>,
}

impl HPolytope {
    pub fn new(c: DMatrix<f64>, q: DVector<f64>) -> Result<Self> {
        if c.nrows() != q.len() {
            return Err(Error::dim("polytope offsets", c.nrows(), q.len()));
        }
        check_finite_mat(&c, "polytope normals")?;
        check_finite_vec(&q, "polytope offsets")?;
        if let Some(i) = (0..c.nrows()).find(|&i| c.row(i).iter().all(|&v| v == 0.0)) {
            return Err(Error::Input(format!("polytope row {i} is all zeros")));
        }
        Ok(Self { c, q })
    }

    /// The `2n` halfspaces of an axis-aligned box.
    pub fn from_box(b: &Hyperbox) -> Self {
        let n = b.dim();
        let mut c = DMatrix::zeros(2 * n, n);
        let mut q = DVector::zeros(2 * n);
        for i in 0..n {
            c[(2 * i, i)] = 1.0;
            q[2 * i] = b.upper()[i];
            c[(2 * i + 1, i)] = -1.0;
            q[2 * i + 1] = -b.lower()[i];
        }
        Self { c, q }
    }

    pub fn dim(&self) -> usize {
        self.c.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.c.nrows()
    }

    pub fn normals(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.q
    }

    /// Stacks the rows of both polytopes.
    pub fn intersect(&self, other: &HPolytope) -> Result<Self> {
        if other.dim() != self.dim() {
            return Err(Error::dim("polytope intersection", self.dim(), other.dim()));
        }
        let (m1, m2, n) = (self.num_rows(), other.num_rows(), self.dim());
        let mut c = DMatrix::zeros(m1 + m2, n);
        c.rows_mut(0, m1).copy_from(&self.c);
        c.rows_mut(m1, m2).copy_from(&other.c);
        let mut q = DVector::zeros(m1 + m2);
        q.rows_mut(0, m1).copy_from(&self.q);
        q.rows_mut(m1, m2).copy_from(&other.q);
        Ok(Self { c, q })
    }

    /// Exact zonotope containment: `C·c + |C·G|·1 ≤ q − slack`.
    pub fn contains_zonotope(&self, z: &Zonotope) -> Result<bool> {
        if z.dim() != self.dim() {
            return Err(Error::dim("zonotope containment", self.dim(), z.dim()));
        }
        let lhs = &self.c * z.center();
        let spread = &self.c * z.generators();
        Ok((0..self.num_rows()).all(|i| {
            let radius: f64 = spread.row(i).iter().map(|v| v.abs()).sum();
            lhs[i] + radius <= self.q[i] - CONTAINMENT_SLACK
        }))
    }

    /// `C·x ≤ q + tol`; false on dimension mismatch.
    pub fn contains_point(&self, x: &DVector<f64>, tol: f64) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        let lhs = &self.c * x;
        (0..self.num_rows()).all(|i| lhs[i] <= self.q[i] + tol)
    }

    /// Largest `λ ∈ [0,1]` with `C·center + λ·|C|·r ≤ q`, and the box
    /// `center ± λ·r`.
    pub fn max_centered_box(
        &self,
        center: &DVector<f64>,
        template_halfwidths: &DVector<f64>,
    ) -> Result<(f64, Hyperbox)> {
        if center.len() != self.dim() {
            return Err(Error::dim("box center", self.dim(), center.len()));
        }
        if template_halfwidths.len() != self.dim() {
            return Err(Error::dim("box template", self.dim(), template_halfwidths.len()));
        }
        if template_halfwidths.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::Input("template halfwidths must be positive".into()));
        }
        let lhs = &self.c * center;
        let mut lambda: f64 = 1.0;
        for i in 0..self.num_rows() {
            let room = self.q[i] - lhs[i];
            if room < -CONTAINMENT_SLACK {
                return Err(Error::Precondition(format!(
                    "box center violates halfspace {i} by {}",
                    -room
                )));
            }
            let reach: f64 = (0..self.dim())
                .map(|j| self.c[(i, j)].abs() * template_halfwidths[j])
                .sum();
            lambda = lambda.min(room.max(0.0) / reach);
        }
        let lambda = lambda.clamp(0.0, 1.0);
        let b = Hyperbox::centered(center, &(template_halfwidths * lambda))?;
        Ok((lambda, b))
    }

    /// `max_{x ∈ P} d·x`; `None` when unbounded, error when empty.
    pub fn support(&self, direction: &DVector<f64>) -> Result<Option<f64>> {
        if direction.len() != self.dim() {
            return Err(Error::dim("support direction", self.dim(), direction.len()));
        }
        match lp::maximize(direction, &self.c, &self.q)? {
            LpOutcome::Optimal { value, .. } => Ok(Some(value)),
            LpOutcome::Unbounded => Ok(None),
            LpOutcome::Infeasible => Err(Error::Input("support of an empty polytope".into())),
        }
    }

    /// Tight axis-aligned bounding box; error when unbounded or empty.
    pub fn bounding_box(&self) -> Result<Hyperbox> {
        let n = self.dim();
        let mut lower = DVector::zeros(n);
        let mut upper = DVector::zeros(n);
        for i in 0..n {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            upper[i] = self
                .support(&e)?
                .ok_or_else(|| Error::Input(format!("polytope unbounded along +axis {i}")))?;
            e[i] = -1.0;
            lower[i] = -self
                .support(&e)?
                .ok_or_else(|| Error::Input(format!("polytope unbounded along -axis {i}")))?;
        }
        // LP round-off can invert degenerate axes by ~1e-12
        for i in 0..n {
            if lower[i] > upper[i] {
                let mid = 0.5 * (lower[i] + upper[i]);
                lower[i] = mid;
                upper[i] = mid;
            }
        }
        Hyperbox::new(lower, upper)
    }

    /// Radius of the largest inscribed Euclidean ball (negative when empty),
    /// capped at `cap`.
    pub fn chebyshev_radius(&self, cap: f64) -> Result<f64> {
        let (m, n) = (self.num_rows(), self.dim());
        let mut c = DMatrix::zeros(m + 1, n + 1);
        let mut q = DVector::zeros(m + 1);
        for i in 0..m {
            for j in 0..n {
                c[(i, j)] = self.c[(i, j)];
            }
            c[(i, n)] = self.c.row(i).norm();
            q[i] = self.q[i];
        }
        c[(m, n)] = 1.0;
        q[m] = cap;
        let mut d = DVector::zeros(n + 1);
        d[n] = 1.0;
        match lp::maximize(&d, &c, &q)? {
            LpOutcome::Optimal { value, .. } => Ok(value),
            other => Err(Error::Lp(format!("chebyshev ball LP returned {other:?}"))),
        }
    }

    /// True when the halfspace `a·x ≤ b` removes nothing from `self`
    /// (up to `tol`). Empty polytopes make every row redundant.
    pub fn implies(&self, a: &DVector<f64>, b: f64, tol: f64) -> Result<bool> {
        match lp::maximize(a, &self.c, &self.q)? {
            LpOutcome::Optimal { value, .. } => Ok(value <= b + tol),
            LpOutcome::Unbounded => Ok(false),
            LpOutcome::Infeasible => Ok(true),
        }
    }

    /// Drops rows implied by the others.
    pub fn remove_redundant(&self, tol: f64) -> Result<Self> {
        let mut keep: Vec<usize> = (0..self.num_rows()).collect();
        let mut i = 0;
        while i < keep.len() {
            let row = keep[i];
            let others: Vec<usize> = keep.iter().copied().filter(|&r| r != row).collect();
            if others.is_empty() {
                break;
            }
            let rest = self.select_rows(&others);
            let a = self.c.row(row).transpose();
            if rest.implies(&a, self.q[row], tol)? {
                keep.remove(i);
            } else {
                i += 1;
            }
        }
        Ok(self.select_rows(&keep))
    }

    /// `self ⊆ other`, checked by LP on each row of `other`.
    pub fn is_subset_of(&self, other: &HPolytope, tol: f64) -> Result<bool> {
        if other.dim() != self.dim() {
            return Err(Error::dim("polytope subset", other.dim(), self.dim()));
        }
        for i in 0..other.num_rows() {
            if !self.implies(&other.c.row(i).transpose(), other.q[i], tol)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub(crate) fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            c: self.c.select_rows(rows.iter()),
            q: self.q.select_rows(rows.iter()),
        }
    }

    /// Parses the text format: a header `n d`, then `n` lines of `d`
    /// normal entries followed by the offset. `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines.next().ok_or(Error::Parse {
            line: 0,
            msg: "missing header".into(),
        })?;
        let dims = parse_floats(header, hline)?;
        if dims.len() != 2 || dims.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
            return Err(Error::Parse {
                line: hline,
                msg: "header must be two non-negative integers `n d`".into(),
            });
        }
        let (n, d) = (dims[0] as usize, dims[1] as usize);
        if d == 0 {
            return Err(Error::Parse {
                line: hline,
                msg: "dimension must be positive".into(),
            });
        }
        let mut c = DMatrix::zeros(n, d);
        let mut q = DVector::zeros(n);
        for i in 0..n {
            let (lno, line) = lines.next().ok_or(Error::Parse {
                line: hline,
                msg: format!("expected {n} rows, found {i}"),
            })?;
            let vals = parse_floats(line, lno)?;
            if vals.len() != d + 1 {
                return Err(Error::Parse {
                    line: lno,
                    msg: format!("expected {} values, found {}", d + 1, vals.len()),
                });
            }
            for j in 0..d {
                c[(i, j)] = vals[j];
            }
            q[i] = vals[d];
        }
        if let Some((lno, _)) = lines.next() {
            return Err(Error::Parse {
                line: lno,
                msg: "trailing data after the last row".into(),
            });
        }
        Self::new(c, q)
    }

    /// Inverse of [`HPolytope::parse`]; floats use the shortest exact
    /// round-trip representation.
    pub fn format(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.num_rows(), self.dim());
        for i in 0..self.num_rows() {
            let row: Vec<String> = self
                .c
                .row(i)
                .iter()
                .chain(std::iter::once(&self.q[i]))
                .map(|v| format!("{v:?}"))
                .collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut text = String::new();
        if let Some(c) = comment {
            for line in c.lines() {
                let _ = writeln!(text, "# {line}");
            }
        }
        text.push_str(&self.format());
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn parse_floats(line: &str, lno: usize) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|e| Error::Parse {
                line: lno,
                msg: format!("bad number `{tok}`: {e}"),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box(n: usize) -> HPolytope {
        HPolytope::from_box(&Hyperbox::new(DVector::from_element(n, -1.0), DVector::from_element(n, 1.0)).unwrap())
    }

    #[test]
    fn origin_point_in_unit_box() {
        let z = Zonotope::point(DVector::zeros(2)).unwrap();
        assert!(unit_box(2).contains_zonotope(&z).unwrap());
        assert!(unit_box(2).contains_point(&DVector::zeros(2), 0.0));
    }

    #[test]
    fn segment_sticking_out() {
        let z = Zonotope::new(DVector::from_vec(vec![0.9, 0.0]), DMatrix::from_column_slice(2, 1, &[0.2, 0.0])).unwrap();
        assert!(!unit_box(2).contains_zonotope(&z).unwrap());
    }

    #[test]
    fn point_tolerance() {
        let tol = 1e-6;
        assert!(!unit_box(2).contains_point(&DVector::from_vec(vec![1.0 + 2.0 * tol, 0.0]), tol));
        assert!(unit_box(2).contains_point(&DVector::from_vec(vec![1.0 + 0.5 * tol, 0.0]), tol));
    }

    #[test]
    fn zero_row_rejected() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(HPolytope::new(c, DVector::from_vec(vec![1.0, 1.0])).is_err());
    }

    #[test]
    fn centered_box_equals_polytope() {
        let (lambda, b) = unit_box(1)
            .max_centered_box(&DVector::zeros(1), &DVector::from_element(1, 1.0))
            .unwrap();
        assert_eq!(lambda, 1.0);
        assert_eq!(b.lower()[0], -1.0);
        assert_eq!(b.upper()[0], 1.0);
    }

    #[test]
    fn centered_box_binding_row() {
        let p = HPolytope::new(DMatrix::from_row_slice(2, 1, &[1.0, -1.0]), DVector::from_vec(vec![0.5, 1.0])).unwrap();
        let (lambda, b) = p.max_centered_box(&DVector::zeros(1), &DVector::from_element(1, 1.0)).unwrap();
        assert_eq!(lambda, 0.5);
        assert_eq!((b.lower()[0], b.upper()[0]), (-0.5, 0.5));
    }

    #[test]
    fn centered_box_rejects_outside_center() {
        let p = unit_box(1);
        let err = p.max_centered_box(&DVector::from_element(1, 1.5), &DVector::from_element(1, 1.0));
        assert!(matches!(err, Err(Error::Precondition(_))));
        // on the boundary the scale collapses to zero
        let (lambda, _) = p.max_centered_box(&DVector::from_element(1, 1.0), &DVector::from_element(1, 1.0)).unwrap();
        assert_eq!(lambda, 0.0);
    }

    #[test]
    fn bounding_box_and_redundancy() {
        // unit box plus a redundant diagonal cut x + y <= 5
        let extra = HPolytope::new(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_vec(vec![5.0])).unwrap();
        let p = unit_box(2).intersect(&extra).unwrap();
        let bb = p.bounding_box().unwrap();
        assert!((bb.lower() - DVector::from_element(2, -1.0)).amax() < 1e-9);
        assert!((bb.upper() - DVector::from_element(2, 1.0)).amax() < 1e-9);
        let reduced = p.remove_redundant(1e-9).unwrap();
        assert_eq!(reduced.num_rows(), 4);
        assert!((unit_box(2).chebyshev_radius(10.0).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn text_round_trip() {
        let p = HPolytope::new(
            DMatrix::from_row_slice(3, 2, &[1.0, 0.1, -0.3333333333333333, 2.0, 0.0, -1.0]),
            DVector::from_vec(vec![1.0 / 3.0, 7.25e-12, 4.0]),
        )
        .unwrap();
        let parsed = HPolytope::parse(&format!("# comment\n{}", p.format())).unwrap();
        assert_eq!(parsed, p);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(HPolytope::parse(""), Err(Error::Parse { .. })));
        assert!(matches!(HPolytope::parse("2 1\n1 1\n"), Err(Error::Parse { .. })));
        assert!(matches!(HPolytope::parse("1 1\n1 x\n"), Err(Error::Parse { .. })));
        assert!(matches!(HPolytope::parse("1 2\n0 0 1\n"), Err(Error::Input(_))));
    }
}

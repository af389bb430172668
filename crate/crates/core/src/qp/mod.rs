//! Small dense convex QPs of the form
//!
//! ```text
//! minimize    ½ zᵀ H z + fᵀ z
//! subject to  A z + c ≥ 0
//! ```
//!
//! solved by a primal active-set method. `H` only needs to be positive
//! semidefinite; zero-curvature directions are followed as rays.

mod active_set;

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::QpError;

pub use active_set::{solve_qp, solve_qp_warm, WarmStart};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub rows: DMatrix<f64>,
    pub offsets: DVector<f64>,
}

impl QuadraticProgram {
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>, rows: DMatrix<f64>, offsets: DVector<f64>) -> Result<Self, QpError> {
        let n = linear.len();
        if hessian.nrows() != n || hessian.ncols() != n {
            return Err(QpError::Malformed(format!("hessian is {}x{}, expected {n}x{n}", hessian.nrows(), hessian.ncols())));
        }
        if rows.ncols() != n || rows.nrows() != offsets.len() {
            return Err(QpError::Malformed(format!(
                "constraint block is {}x{} with {} offsets, expected {n} columns",
                rows.nrows(),
                rows.ncols(),
                offsets.len()
            )));
        }
        if hessian.iter().chain(linear.iter()).chain(rows.iter()).chain(offsets.iter()).any(|v| !v.is_finite()) {
            return Err(QpError::Malformed("non-finite entry".into()));
        }
        let asym = (&hessian - hessian.transpose()).amax();
        if asym > 1e-12 {
            return Err(QpError::Malformed(format!("hessian not symmetric (max asymmetry {asym:e})")));
        }
        if n > 0 {
            let min_eig = SymmetricEigen::new(hessian.clone()).eigenvalues.min();
            if min_eig < -1e-10 {
                return Err(QpError::Malformed(format!("hessian not PSD (eigenvalue {min_eig:e})")));
            }
        }
        Ok(Self { hessian, linear, rows, offsets })
    }

    /// `½ ‖z − target‖²` subject to the given rows.
    pub fn least_distance(target: &DVector<f64>, rows: DMatrix<f64>, offsets: DVector<f64>) -> Result<Self, QpError> {
        let n = target.len();
        Self::new(DMatrix::identity(n, n), -target, rows, offsets)
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn row_count(&self) -> usize {
        self.offsets.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.linear.dot(z)
    }

    /// `A z + c`; feasible when every entry is nonnegative.
    pub fn residuals(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.rows * z + &self.offsets
    }

    /// Plain-text dump: a header, then `H | f`, then one `A | c` line per row.
    pub fn dump_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# qp dim={} rows={}", self.dim(), self.row_count());
        let _ = writeln!(out, "# hessian | linear");
        for r in 0..self.dim() {
            let line: Vec<String> = self.hessian.row(r).iter().map(|v| format!("{v:.17e}")).collect();
            let _ = writeln!(out, "{} | {:.17e}", line.join(" "), self.linear[r]);
        }
        let _ = writeln!(out, "# rows | offset   (row · z + offset >= 0)");
        for r in 0..self.row_count() {
            let line: Vec<String> = self.rows.row(r).iter().map(|v| format!("{v:.17e}")).collect();
            let _ = writeln!(out, "{} | {:.17e}", line.join(" "), self.offsets[r]);
        }
        out
    }

    /// Reads the format written by [`QuadraticProgram::dump_text`].
    pub fn parse_text(text: &str) -> Result<Self, QpError> {
        let bad = |what: &str| QpError::Malformed(format!("qp text: {what}"));
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| bad("empty input"))?;
        let field = |key: &str| -> Result<usize, QpError> {
            header
                .split_whitespace()
                .find_map(|t| t.strip_prefix(key))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(&format!("header lacks {key}")))
        };
        let (n, m) = (field("dim=")?, field("rows=")?);
        let mut body = lines.filter(|l| !l.starts_with('#'));
        let mut read = |count: usize, width: usize| -> Result<(DMatrix<f64>, DVector<f64>), QpError> {
            let mut mat = DMatrix::zeros(count, width);
            let mut vec = DVector::zeros(count);
            for r in 0..count {
                let line = body.next().ok_or_else(|| bad("too few lines"))?;
                let (left, right) = line.split_once('|').ok_or_else(|| bad("missing '|'"))?;
                let values: Vec<f64> = left.split_whitespace().map(str::parse).collect::<Result<_, _>>().map_err(|_| bad("bad number"))?;
                if values.len() != width {
                    return Err(bad(&format!("line has {} entries, expected {width}", values.len())));
                }
                mat.row_mut(r).copy_from_slice(&values);
                vec[r] = right.trim().parse().map_err(|_| bad("bad number"))?;
            }
            Ok((mat, vec))
        };
        let (h, f) = read(n, n)?;
        let (a, c) = read(m, n)?;
        Self::new(h, f, a, c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub status: QpStatus,
    /// Optimal point; for `Infeasible` the least-violation point from phase 1.
    pub z: DVector<f64>,
    /// One nonnegative multiplier per row, with `H z + f = Aᵀ λ` at optimum.
    pub multipliers: DVector<f64>,
    /// Working set at termination.
    pub active: Vec<usize>,
    /// Rows certifying infeasibility (empty unless `Infeasible`).
    pub violating_rows: Vec<usize>,
    pub iterations: usize,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }

    pub fn kkt(&self, p: &QuadraticProgram) -> KktReport {
        kkt_report(p, &self.z, &self.multipliers)
    }

    pub fn warm_start(&self) -> WarmStart {
        WarmStart { z: self.z.clone(), active: self.active.clone() }
    }
}

/// KKT residuals of a candidate primal/dual pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// `‖H z + f − Aᵀ λ‖∞`
    pub stationarity: f64,
    /// Most negative row residual (0 when feasible).
    pub primal: f64,
    /// Most negative multiplier (0 when all are nonnegative).
    pub dual: f64,
    /// `max |λ_r (A z + c)_r|`
    pub complementarity: f64,
}

impl KktReport {
    pub fn certified(&self, tol: f64) -> bool {
        self.stationarity <= tol && self.primal >= -tol && self.dual >= -tol && self.complementarity <= tol
    }
}

pub fn kkt_report(p: &QuadraticProgram, z: &DVector<f64>, lambda: &DVector<f64>) -> KktReport {
    let grad = &p.hessian * z + &p.linear;
    let stationarity = if p.dim() == 0 { 0.0 } else { (grad - p.rows.tr_mul(lambda)).amax() };
    let res = p.residuals(z);
    let primal = res.iter().fold(0.0f64, |m, &v| m.min(v));
    let dual = lambda.iter().fold(0.0f64, |m, &v| m.min(v));
    let complementarity = res.iter().zip(lambda.iter()).fold(0.0f64, |m, (r, l)| m.max((r * l).abs()));
    KktReport { stationarity, primal, dual, complementarity }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_malformed() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(QuadraticProgram::new(h, DVector::zeros(2), DMatrix::zeros(0, 2), DVector::zeros(0)).is_err());
        let h = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        assert!(QuadraticProgram::new(h, DVector::zeros(2), DMatrix::zeros(0, 2), DVector::zeros(0)).is_err());
        assert!(QuadraticProgram::new(DMatrix::identity(2, 2), DVector::zeros(2), DMatrix::zeros(1, 3), DVector::zeros(1)).is_err());
        assert!(QuadraticProgram::new(DMatrix::zeros(2, 2), DVector::zeros(2), DMatrix::zeros(1, 2), DVector::zeros(1)).is_ok());
    }

    #[test]
    fn dump_has_one_line_per_row() {
        let p = QuadraticProgram::least_distance(&DVector::zeros(2), DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]), DVector::zeros(3)).unwrap();
        let text = p.dump_text();
        assert_eq!(text.lines().count(), 3 + 2 + 3);
        assert!(text.starts_with("# qp dim=2 rows=3"));
        assert_eq!(QuadraticProgram::parse_text(&text).unwrap(), p);
    }
}

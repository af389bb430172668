use nalgebra::{DMatrix, DVector, SymmetricEigen, QR};

use super::{QpSolution, QpStatus, QuadraticProgram};
use crate::error::QpError;

/// Starting point and working-set hint from a previous solve. Used only when
/// the point is feasible for the new problem.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WarmStart {
    pub z: DVector<f64>,
    pub active: Vec<usize>,
}

struct Data<'a> {
    h: &'a DMatrix<f64>,
    f: &'a DVector<f64>,
    a: &'a DMatrix<f64>,
    c: &'a DVector<f64>,
}

enum Exit {
    Optimal(DVector<f64>),
    Unbounded,
}

pub fn solve_qp(p: &QuadraticProgram) -> Result<QpSolution, QpError> {
    solve_qp_warm(p, None)
}

pub fn solve_qp_warm(p: &QuadraticProgram, warm: Option<&WarmStart>) -> Result<QpSolution, QpError> {
    let n = p.dim();
    let m = p.row_count();
    let scale = 1.0 + p.offsets.amax().max(if m > 0 { p.rows.amax() } else { 0.0 });
    let feas_tol = 1e-10 * scale;

    if n == 0 {
        let violating: Vec<usize> = (0..m).filter(|&r| p.offsets[r] < -feas_tol).collect();
        let status = if violating.is_empty() { QpStatus::Optimal } else { QpStatus::Infeasible };
        return Ok(QpSolution {
            status,
            z: DVector::zeros(0),
            multipliers: DVector::zeros(m),
            active: Vec::new(),
            violating_rows: violating,
            iterations: 0,
        });
    }

    let cap = 100 * n.max(1);
    let mut iterations = 0;

    let (mut z, mut work) = match warm {
        Some(w) if w.z.len() == n && p.residuals(&w.z).min() >= -feas_tol => {
            let hint = independent_active(p, &w.z, &w.active, feas_tol);
            (w.z.clone(), hint)
        }
        _ => (DVector::zeros(n), Vec::new()),
    };

    let worst = if m > 0 { -p.residuals(&z).min() } else { 0.0 };
    if worst > feas_tol {
        // Phase 1: minimize t subject to A z + c + t ≥ 0, t ≥ 0.
        let mut a1 = DMatrix::zeros(m + 1, n + 1);
        a1.view_mut((0, 0), (m, n)).copy_from(&p.rows);
        a1.view_mut((0, n), (m, 1)).fill(1.0);
        a1[(m, n)] = 1.0;
        let mut c1 = DVector::zeros(m + 1);
        c1.rows_mut(0, m).copy_from(&p.offsets);
        let h1 = DMatrix::zeros(n + 1, n + 1);
        let mut f1 = DVector::zeros(n + 1);
        f1[n] = 1.0;
        let mut z1 = DVector::zeros(n + 1);
        z1.rows_mut(0, n).copy_from(&z);
        z1[n] = worst;
        let mut w1 = Vec::new();
        let data = Data { h: &h1, f: &f1, a: &a1, c: &c1 };
        let (exit, used) = run(&data, &mut z1, &mut w1, 100 * (n + 1))?;
        iterations += used;
        let slack = z1[n];
        z = z1.rows(0, n).into_owned();
        let lambda = match exit {
            Exit::Optimal(l) => l,
            Exit::Unbounded => return Err(QpError::Malformed("phase-1 problem unbounded".into())),
        };
        if slack > 1e-9 * scale {
            let violating = w1.iter().zip(lambda.iter()).filter(|&(&r, &l)| r < m && l > 0.0).map(|(&r, _)| r).collect();
            let mut multipliers = DVector::zeros(m);
            for (&r, &l) in w1.iter().zip(lambda.iter()) {
                if r < m {
                    multipliers[r] = l.max(0.0);
                }
            }
            return Ok(QpSolution {
                status: QpStatus::Infeasible,
                z,
                multipliers,
                active: Vec::new(),
                violating_rows: violating,
                iterations,
            });
        }
        work.clear();
    }

    let data = Data { h: &p.hessian, f: &p.linear, a: &p.rows, c: &p.offsets };
    let (exit, used) = run(&data, &mut z, &mut work, cap)?;
    iterations += used;
    let mut multipliers = DVector::zeros(m);
    let status = match exit {
        Exit::Optimal(lambda) => {
            for (&r, &l) in work.iter().zip(lambda.iter()) {
                multipliers[r] = l.max(0.0);
            }
            QpStatus::Optimal
        }
        Exit::Unbounded => QpStatus::Unbounded,
    };
    let mut active = work;
    active.sort_unstable();
    Ok(QpSolution { status, z, multipliers, active, violating_rows: Vec::new(), iterations })
}

// Keeps the hinted rows that are active at z and linearly independent.
fn independent_active(p: &QuadraticProgram, z: &DVector<f64>, hint: &[usize], tol: f64) -> Vec<usize> {
    let res = p.residuals(z);
    let mut kept: Vec<usize> = Vec::new();
    let mut sorted: Vec<usize> = hint.iter().copied().filter(|&r| r < p.row_count() && res[r].abs() <= tol).collect();
    sorted.sort_unstable();
    sorted.dedup();
    for r in sorted {
        let mut trial = kept.clone();
        trial.push(r);
        if trial.len() <= p.dim() && rank(&gather(p.rows.as_view(), &trial)) == trial.len() {
            kept = trial;
        }
    }
    kept
}

fn gather(a: nalgebra::DMatrixView<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), a.ncols(), |i, j| a[(rows[i], j)])
}

fn rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.max();
    sv.iter().filter(|&&s| s > 1e-10 * top.max(1.0)).count()
}

/// Orthonormal basis of the null space of the working rows (which are kept
/// linearly independent).
fn null_basis(a: &DMatrix<f64>, work: &[usize], n: usize) -> DMatrix<f64> {
    let k = work.len();
    if k == 0 {
        return DMatrix::identity(n, n);
    }
    let mut padded = DMatrix::zeros(n, n);
    for (col, &r) in work.iter().enumerate() {
        padded.set_column(col, &a.row(r).transpose());
    }
    let q = QR::new(padded).q();
    q.columns(k, n - k).into_owned()
}

fn run(d: &Data<'_>, z: &mut DVector<f64>, work: &mut Vec<usize>, cap: usize) -> Result<(Exit, usize), QpError> {
    let n = z.len();
    // Row dropped at the last stationary point with the multipliers there.
    let mut dropped: Option<(usize, Vec<usize>, DVector<f64>)> = None;
    for iter in 0..cap {
        let g = d.h * &*z + d.f;
        let k = work.len();

        let mut step = DVector::zeros(n);
        let mut ray = false;
        // With an ill-conditioned reduced Hessian round-off in the step can
        // exceed the step tolerance; a negligible reduced gradient also counts
        // as stationary.
        let mut flat_gradient = true;
        if k < n {
            let basis = null_basis(d.a, work, n);
            let reduced_h = basis.tr_mul(&(d.h * &basis));
            let reduced_g = basis.tr_mul(&g);
            flat_gradient = reduced_g.amax() <= 1e-13 * (1.0 + g.amax());
            let eig = SymmetricEigen::new(reduced_h);
            let mu_tol = 1e-10 * (1.0 + eig.eigenvalues.amax());
            let g_tol = 1e-13 * (1.0 + g.amax());
            let mut flat = DVector::zeros(n - k);
            let mut curved = DVector::zeros(n - k);
            for idx in 0..(n - k) {
                let v = eig.eigenvectors.column(idx);
                let gamma = v.dot(&reduced_g);
                let mu = eig.eigenvalues[idx];
                if mu <= mu_tol {
                    if gamma.abs() > g_tol {
                        flat -= v * gamma;
                        ray = true;
                    }
                } else {
                    curved -= v * (gamma / mu);
                }
            }
            step = if ray { &basis * flat } else { &basis * curved };
        }

        let step_norm = step.amax();
        if !ray && (step_norm <= 1e-12 * (1.0 + z.amax()) || flat_gradient) {
            // Stationary on the working set: check multiplier signs.
            if k == 0 {
                return Ok((Exit::Optimal(DVector::zeros(0)), iter));
            }
            let aw_t = gather(d.a.as_view(), work).transpose();
            let lambda = aw_t
                .svd(true, true)
                .solve(&g, 1e-14)
                .map_err(|e| QpError::Malformed(format!("multiplier solve failed: {e}")))?;
            let lambda_tol = 1e-10 * (1.0 + g.amax());
            // Lowest row index with a negative multiplier leaves first.
            let leaving = work
                .iter()
                .zip(lambda.iter())
                .filter(|&(_, &l)| l < -lambda_tol)
                .map(|(&r, _)| r)
                .min();
            match leaving {
                None => return Ok((Exit::Optimal(lambda), iter)),
                Some(r) => {
                    dropped = Some((r, work.clone(), lambda));
                    work.retain(|&w| w != r);
                    continue;
                }
            }
        }

        // Ratio test; ties go to the lowest row index. A row that depends on
        // the working rows has zero slope up to round-off and is skipped.
        let mut dependent = Vec::new();
        let (limit, blocking) = loop {
            let (limit, blocking) = ratio_test(d, z, &step, work, &dependent, ray, step_norm);
            match blocking {
                Some(r) if !work.is_empty() && rank(&gather(d.a.as_view(), &[work.as_slice(), &[r]].concat())) <= work.len() => dependent.push(r),
                _ => break (limit, blocking),
            }
        };
        if ray && blocking.is_none() {
            return Ok((Exit::Unbounded, iter));
        }
        if let (Some(r), Some((prev, prev_work, lambda))) = (blocking, dropped.take()) {
            if r == prev && limit * step_norm <= 1e-12 * (1.0 + z.amax()) {
                // The dropped row blocks at once: its negative multiplier was
                // round-off. Stop at the earlier point with it clamped to 0.
                *work = prev_work;
                return Ok((Exit::Optimal(lambda.map(|l| l.max(0.0))), iter));
            }
        }
        *z += &step * limit;
        if let Some(r) = blocking {
            work.push(r);
        }
    }
    Err(QpError::MaxIterations(cap))
}

fn ratio_test(d: &Data<'_>, z: &DVector<f64>, step: &DVector<f64>, work: &[usize], skip: &[usize], ray: bool, step_norm: f64) -> (f64, Option<usize>) {
    let mut limit = if ray { f64::INFINITY } else { 1.0 };
    let mut blocking = None;
    for r in 0..d.c.len() {
        if work.contains(&r) || skip.contains(&r) {
            continue;
        }
        let row = d.a.row(r);
        let slope = row.transpose().dot(step);
        if slope < -1e-13 * row.norm() * step_norm.max(1e-300) {
            let resid = (row.transpose().dot(z) + d.c[r]).max(0.0);
            let t = resid / -slope;
            if t < limit {
                limit = t;
                blocking = Some(r);
            }
        }
    }
    (limit, blocking)
}

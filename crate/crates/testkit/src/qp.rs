//! Random strictly convex QPs and an active-set enumeration oracle.

use ccbf::qp::QuadraticProgram;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Strictly convex QP with `dim ≤ max_dim`, `rows ≤ max_rows`, built around
/// a feasible point. About a third of the rows pass exactly through it.
pub fn random_qp(rng: &mut impl Rng, max_dim: usize, max_rows: usize) -> QuadraticProgram {
    let n = rng.gen_range(1..=max_dim);
    let m = rng.gen_range(0..=max_rows);
    let root = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let hessian = root.transpose() * &root + DMatrix::identity(n, n) * 0.1;
    let linear = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
    let rows = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
    let z0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let slack = DVector::from_fn(m, |_, _| if rng.gen_bool(0.35) { 0.0 } else { rng.gen_range(0.0..1.0) });
    let offsets = -(&rows * &z0) + slack;
    QuadraticProgram::new(hessian, linear, rows, offsets).expect("well-formed random QP")
}

/// Optimal objective by enumerating every candidate active set: each subset
/// of at most `dim` rows is solved as an equality-constrained KKT system,
/// and the best point that is primal and dual feasible wins. `None` if no
/// subset qualifies. Intended for strictly convex problems with ≤ 12 rows.
pub fn brute_force(p: &QuadraticProgram, tol: f64) -> Option<(f64, DVector<f64>)> {
    let n = p.dim();
    let m = p.row_count();
    assert!(m <= 12, "enumeration oracle is exponential in the row count");
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let set: Vec<usize> = (0..m).filter(|r| mask & (1 << r) != 0).collect();
        if set.len() > n {
            continue;
        }
        let k = set.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.hessian);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&-&p.linear);
        for (s, &r) in set.iter().enumerate() {
            for c in 0..n {
                kkt[(n + s, c)] = p.rows[(r, c)];
                kkt[(c, n + s)] = -p.rows[(r, c)];
            }
            rhs[n + s] = -p.offsets[r];
        }
        let Some(sol) = kkt.clone().lu().solve(&rhs) else { continue };
        if (&kkt * &sol - &rhs).amax() > 1e-9 * (1.0 + rhs.amax()) {
            continue;
        }
        let z = sol.rows(0, n).into_owned();
        if sol.rows(n, k).iter().any(|&l| l < -tol) {
            continue;
        }
        if p.residuals(&z).iter().any(|&g| g < -tol) {
            continue;
        }
        let value = p.objective(&z);
        if best.as_ref().map_or(true, |(b, _)| value < *b) {
            best = Some((value, z));
        }
    }
    best
}

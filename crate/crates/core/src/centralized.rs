//! Centralized safety filters over the stacked input of all agents.
//!
//! Row order is fixed: one `ψ_j ≥ 0` row per barrier owner (ascending), then
//! one first-order row per owner. The auxiliary form replaces each `ψ_j` row
//! by one row per member `i ∈ N_j⁺`, coupled through variables `y_i^j`.

use nalgebra::{DMatrix, DVector};

use crate::barrier::{assemble_coefficients, CcbfCoefficients};
use crate::dynamics::JointState;
use crate::error::{ModelError, SolveError};
use crate::model::MultiAgentSystem;
use crate::qp::{solve_qp_warm, QpSolution, QpStatus, QuadraticProgram, WarmStart};

/// Coefficients for every agent at one joint state; `None` for agents
/// without a barrier.
pub fn assemble_all(sys: &MultiAgentSystem, x: &[DVector<f64>]) -> Result<Vec<Option<CcbfCoefficients>>, ModelError> {
    sys.check_state(x)?;
    (0..sys.agent_count())
        .map(|i| if sys.agents[i].safety.is_some() { assemble_coefficients(sys, i, x).map(Some) } else { Ok(None) })
        .collect()
}

/// `ψ_j` as a row over the stacked input plus its constant.
pub fn psi_row(sys: &MultiAgentSystem, coeffs: &CcbfCoefficients) -> (DVector<f64>, f64) {
    let (offsets, total) = sys.input_offsets();
    let mut row = DVector::zeros(total);
    for t in &coeffs.terms {
        row.rows_mut(offsets[t.j], t.a.len()).copy_from(&t.a);
    }
    (row, coeffs.b_total())
}

fn first_order_stacked(sys: &MultiAgentSystem, coeffs: &CcbfCoefficients) -> (DVector<f64>, f64) {
    let (offsets, total) = sys.input_offsets();
    let (lgh, scalar) = coeffs.first_order_row();
    let mut row = DVector::zeros(total);
    let m = sys.agents[coeffs.agent].input_dim();
    // An uncontrolled owner keeps a zero row: the condition reduces to γ h ≥ 0.
    if m == lgh.len() {
        row.rows_mut(offsets[coeffs.agent], m).copy_from(&lgh);
    }
    (row, scalar)
}

fn stack_rows(rows: Vec<(DVector<f64>, f64)>, cols: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut a = DMatrix::zeros(rows.len(), cols);
    let mut c = DVector::zeros(rows.len());
    for (r, (row, off)) in rows.into_iter().enumerate() {
        a.view_mut((r, 0), (1, row.len())).copy_from(&row.transpose());
        c[r] = off;
    }
    (a, c)
}

/// The joint filter from precomputed coefficients. Objective `½‖u − u_nom‖²`.
pub fn centralized_from(sys: &MultiAgentSystem, coeffs: &[Option<CcbfCoefficients>], u_nom: &[DVector<f64>]) -> Result<QuadraticProgram, SolveError> {
    sys.check_inputs(u_nom)?;
    let owners: Vec<&CcbfCoefficients> = coeffs.iter().flatten().collect();
    let mut rows: Vec<(DVector<f64>, f64)> = owners.iter().map(|c| psi_row(sys, c)).collect();
    rows.extend(owners.iter().map(|c| first_order_stacked(sys, c)));
    let target = sys.stack_inputs(u_nom);
    let (a, c) = stack_rows(rows, target.len());
    Ok(QuadraticProgram::least_distance(&target, a, c)?)
}

pub fn assemble_centralized(sys: &MultiAgentSystem, x: &[DVector<f64>], u_nom: &[DVector<f64>]) -> Result<QuadraticProgram, SolveError> {
    centralized_from(sys, &assemble_all(sys, x)?, u_nom)
}

/// The auxiliary-variable form: decision `[u; y]` with `y` ordered as `pairs`.
#[derive(Debug, Clone)]
pub struct CentralizedAux {
    pub qp: QuadraticProgram,
    /// `(owner j, member i)` for every `y_i^j`, owners ascending then members ascending.
    pub pairs: Vec<(usize, usize)>,
    pub input_len: usize,
}

impl CentralizedAux {
    pub fn split(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (z.rows(0, self.input_len).into_owned(), z.rows(self.input_len, self.pairs.len()).into_owned())
    }
}

pub fn centralized_aux_from(sys: &MultiAgentSystem, coeffs: &[Option<CcbfCoefficients>], u_nom: &[DVector<f64>]) -> Result<CentralizedAux, SolveError> {
    sys.check_inputs(u_nom)?;
    let (offsets, input_len) = sys.input_offsets();
    let owners: Vec<&CcbfCoefficients> = coeffs.iter().flatten().collect();
    let pairs: Vec<(usize, usize)> = owners.iter().flat_map(|c| c.terms.iter().map(move |t| (c.agent, t.j))).collect();
    let dim = input_len + pairs.len();

    let mut rows = Vec::new();
    for c in &owners {
        let group: Vec<usize> = pairs.iter().enumerate().filter(|(_, p)| p.0 == c.agent).map(|(k, _)| input_len + k).collect();
        for (pos, t) in c.terms.iter().enumerate() {
            let mut row = DVector::zeros(dim);
            row.rows_mut(offsets[t.j], t.a.len()).copy_from(&t.a);
            // Σ_{k ∈ N_j⁺} (y_i^j − y_k^j)
            for &col in &group {
                row[col] -= 1.0;
            }
            row[group[pos]] += group.len() as f64;
            rows.push((row, t.b));
        }
    }
    for c in &owners {
        let (r, s) = first_order_stacked(sys, c);
        let mut row = DVector::zeros(dim);
        row.rows_mut(0, input_len).copy_from(&r);
        rows.push((row, s));
    }
    let (a, c) = stack_rows(rows, dim);
    let mut hessian = DMatrix::zeros(dim, dim);
    hessian.view_mut((0, 0), (input_len, input_len)).fill_with_identity();
    let mut linear = DVector::zeros(dim);
    linear.rows_mut(0, input_len).copy_from(&-sys.stack_inputs(u_nom));
    Ok(CentralizedAux { qp: QuadraticProgram::new(hessian, linear, a, c)?, pairs, input_len })
}

pub fn assemble_centralized_aux(sys: &MultiAgentSystem, x: &[DVector<f64>], u_nom: &[DVector<f64>]) -> Result<CentralizedAux, SolveError> {
    centralized_aux_from(sys, &assemble_all(sys, x)?, u_nom)
}

/// Solves a centralized filter and checks the status; returns the joint input.
pub fn solve_filter(sys: &MultiAgentSystem, qp: &QuadraticProgram, warm: Option<&WarmStart>) -> Result<(JointState, QpSolution), SolveError> {
    let sol = solve_qp_warm(qp, warm)?;
    match sol.status {
        QpStatus::Optimal => Ok((sys.split_inputs(&sol.z.rows(0, sys.input_offsets().1).into_owned()), sol)),
        QpStatus::Infeasible => Err(SolveError::Infeasible { rows: sol.violating_rows }),
        QpStatus::Unbounded => Err(SolveError::Qp(crate::error::QpError::Malformed("filter reported unbounded".into()))),
    }
}

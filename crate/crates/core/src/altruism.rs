//! Safety-importance weights, relatedness, and the Hamilton's-rule
//! altruism constraint.
//!
//! `w_i = η_i / h_i(x_i)` is undefined at `h_i = 0`; here `h_i` is floored at
//! `floor` so the weight stays finite.

use log::debug;
use nalgebra::DVector;

use crate::barrier::CcbfCoefficients;
use crate::consensus::{run_rounds, solve_local_with, ConsensusOutcome, ConsensusState, LocalSolution, RoundOptions, RoundRecord};
use crate::error::{ModelError, SolveError};
use crate::model::MultiAgentSystem;

pub const DEFAULT_H_FLOOR: f64 = 1e-6;

pub fn compute_weight(eta: f64, h: f64, floor: f64) -> f64 {
    assert!(floor > 0.0, "weight floor must be positive");
    if eta == 0.0 {
        return 0.0;
    }
    eta / h.max(floor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafetyWeights {
    pub eta: Vec<f64>,
    pub w: Vec<f64>,
    pub floor: f64,
}

impl SafetyWeights {
    /// Weights at the current state. Agents without a barrier get weight 0.
    pub fn at_state(eta: &[f64], coeffs: &[Option<CcbfCoefficients>], floor: f64) -> Result<Self, ModelError> {
        if eta.len() != coeffs.len() {
            return Err(ModelError::Dimension { what: "eta", expected: coeffs.len(), got: eta.len() });
        }
        if !(floor > 0.0) {
            return Err(ModelError::InvalidParameter { name: "h_floor".into(), reason: format!("must be > 0, got {floor}") });
        }
        if let Some(bad) = eta.iter().position(|&e| !(e >= 0.0 && e.is_finite())) {
            return Err(ModelError::InvalidParameter { name: format!("eta[{}]", bad + 1), reason: "must be finite and >= 0".into() });
        }
        let w = eta.iter().zip(coeffs).map(|(&e, c)| c.as_ref().map_or(0.0, |c| compute_weight(e, c.h, floor))).collect();
        Ok(Self { eta: eta.to_vec(), w, floor })
    }
}

/// `r_ij = w_j / w_i`.
pub fn compute_relatedness(w: &SafetyWeights, i: usize, j: usize) -> Result<f64, SolveError> {
    let wi = *w.w.get(i).ok_or(ModelError::AgentOutOfRange { agent: i + 1, n: w.w.len() })?;
    let wj = *w.w.get(j).ok_or(ModelError::AgentOutOfRange { agent: j + 1, n: w.w.len() })?;
    if i == j {
        return Ok(1.0);
    }
    if wi <= 0.0 {
        return Err(SolveError::ZeroWeight { agent: i + 1 });
    }
    Ok(wj / wi)
}

/// `C_i = −a_iiᵀ u_i − b_ii`, exactly as the cost is defined (a negative
/// value means `u_i` helps agent `i`'s own condition).
pub fn safety_cost(coeffs_i: &CcbfCoefficients, u_i: &DVector<f64>) -> Result<f64, ModelError> {
    let t = coeffs_i.term(coeffs_i.agent).ok_or(ModelError::NotCoupled { agent: coeffs_i.agent + 1, owner: coeffs_i.agent + 1 })?;
    if t.a.len() != u_i.len() {
        return Err(ModelError::Dimension { what: "agent input", expected: t.a.len(), got: u_i.len() });
    }
    Ok(-t.a.dot(u_i) - t.b)
}

/// Benefit of donor `i`'s input to the constraint owned by `coeffs_j.agent`:
/// `a_jiᵀ u_i + b_ji`.
pub fn safety_benefit(coeffs_j: &CcbfCoefficients, i: usize, u_i: &DVector<f64>) -> Result<f64, ModelError> {
    let t = coeffs_j.term(i).ok_or(ModelError::NotCoupled { agent: i + 1, owner: coeffs_j.agent + 1 })?;
    if t.a.len() != u_i.len() {
        return Err(ModelError::Dimension { what: "agent input", expected: t.a.len(), got: u_i.len() });
    }
    Ok(t.a.dot(u_i) + t.b)
}

/// `(Σ_j r_ij a_ji, Σ_j r_ij b_ji)` over barrier owners `j ∈ N_i⁻`, so the
/// altruism condition reads `row · u_i + scalar ≥ 0`.
pub fn altruism_row(
    sys: &MultiAgentSystem,
    i: usize,
    coeffs: &[Option<CcbfCoefficients>],
    w: &SafetyWeights,
) -> Result<(DVector<f64>, f64), SolveError> {
    let m = sys.agents.get(i).ok_or(ModelError::AgentOutOfRange { agent: i + 1, n: sys.agent_count() })?.input_dim();
    let mut row = DVector::zeros(m);
    let mut scalar = 0.0;
    for &j in sys.graph.out_neighbors(i)? {
        let Some(Some(cj)) = coeffs.get(j) else { continue };
        let Some(t) = cj.term(i) else { continue };
        let r = compute_relatedness(w, i, j)?;
        row += &t.a * r;
        scalar += r * t.b;
    }
    Ok((row, scalar))
}

/// Local problem of agent `i` plus its altruism row.
pub fn solve_local_altruistic(
    sys: &MultiAgentSystem,
    i: usize,
    coeffs: &[Option<CcbfCoefficients>],
    u_ref: &DVector<f64>,
    cs: &mut ConsensusState,
    w: &SafetyWeights,
) -> Result<LocalSolution, SolveError> {
    let row = altruism_row(sys, i, coeffs, w)?;
    solve_local_with(sys, i, coeffs, u_ref, cs, Some(row), None)
}

/// Altruistic rounds. Agents with zero weight (no barrier or `η_i = 0`)
/// solve their plain local problem, since their relatedness is undefined.
pub fn run_altruistic_rounds(
    sys: &MultiAgentSystem,
    coeffs: &[Option<CcbfCoefficients>],
    u_ref: &[DVector<f64>],
    cs: &mut ConsensusState,
    w: &SafetyWeights,
    opts: &RoundOptions,
    observe: impl FnMut(&RoundRecord),
) -> Result<ConsensusOutcome, SolveError> {
    let extra = |i: usize| -> Result<Option<(DVector<f64>, f64)>, SolveError> {
        if w.w[i] <= 0.0 {
            debug!("agent {} has zero weight; no altruism row", i + 1);
            return Ok(None);
        }
        altruism_row(sys, i, coeffs, w).map(Some)
    };
    run_rounds(sys, coeffs, u_ref, cs, opts, Some(&extra), observe)
}

/// `u^min = −(b_ii + Σ_{j ≠ i} (a_ijᵀ u_j + b_ij)) / a_ii` for an agent with
/// a scalar input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputBound {
    pub value: f64,
    /// `a_ii < 0`: the safe inputs are `u_i ≤ value`, not `u_i ≥ value`.
    pub upper: bool,
}

impl InputBound {
    /// Whether `other`'s safe half-line contains this one's, with `slack`.
    pub fn contained_in(&self, other: &InputBound, slack: f64) -> bool {
        assert_eq!(self.upper, other.upper, "bounds face opposite directions");
        if self.upper {
            self.value <= other.value + slack
        } else {
            self.value >= other.value - slack
        }
    }
}

pub fn u_min_metric(coeffs_i: &CcbfCoefficients, u: &[DVector<f64>]) -> Result<InputBound, SolveError> {
    let own = coeffs_i.term(coeffs_i.agent).ok_or(ModelError::NotCoupled { agent: coeffs_i.agent + 1, owner: coeffs_i.agent + 1 })?;
    if own.a.len() != 1 {
        return Err(ModelError::Dimension { what: "scalar input for u_min", expected: 1, got: own.a.len() }.into());
    }
    let a = own.a[0];
    if a.abs() < 1e-12 {
        return Err(SolveError::DegenerateRow(a.abs()));
    }
    let rest = own.b + coeffs_i.neighbor_contribution(u)?;
    Ok(InputBound { value: -rest / a, upper: a < 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::{eval_psi, ClassKGains, SafetySpec, VirtualController};
    use crate::centralized::assemble_all;
    use crate::dynamics::{FormationParams, JointState};
    use crate::topology::CouplingGraph;
    use approx::assert_abs_diff_eq;

    fn pair() -> (MultiAgentSystem, JointState) {
        let params = FormationParams::new(2.5, vec![-0.7, 0.7]).unwrap();
        let spec = SafetySpec::ball(0.5, ClassKGains::new(10.0, 10.0, 10.0).unwrap(), VirtualController::Zero).unwrap();
        let sys = MultiAgentSystem::formation(CouplingGraph::complete(2).unwrap(), &params, &[true, true], vec![Some(spec.clone()), Some(spec)]).unwrap();
        (sys, vec![DVector::from_element(1, -0.3), DVector::from_element(1, 0.3)])
    }

    fn s(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    #[test]
    fn weights() {
        assert_abs_diff_eq!(compute_weight(1000.0, 0.08, DEFAULT_H_FLOOR), 12500.0, epsilon = 1e-9);
        assert_eq!(compute_weight(0.0, -3.0, DEFAULT_H_FLOOR), 0.0);
        assert_abs_diff_eq!(compute_weight(1.0, 1e-9, DEFAULT_H_FLOOR), 1e6, epsilon = 1e-6);
    }

    #[test]
    fn relatedness() {
        let w = SafetyWeights { eta: vec![1.0, 1000.0], w: vec![12.5, 12500.0], floor: DEFAULT_H_FLOOR };
        assert_abs_diff_eq!(compute_relatedness(&w, 0, 1).unwrap(), 1000.0, epsilon = 1e-9);
        assert_eq!(compute_relatedness(&w, 1, 1).unwrap(), 1.0);
        assert_abs_diff_eq!(compute_relatedness(&w, 0, 1).unwrap() * compute_relatedness(&w, 1, 0).unwrap(), 1.0, epsilon = 1e-12);
        let zero = SafetyWeights { eta: vec![0.0, 1.0], w: vec![0.0, 3.0], floor: DEFAULT_H_FLOOR };
        assert_eq!(compute_relatedness(&zero, 0, 1), Err(SolveError::ZeroWeight { agent: 1 }));
    }

    #[test]
    fn cost_and_benefit() {
        let (sys, x) = pair();
        let coeffs = assemble_all(&sys, &x).unwrap();
        let c2 = coeffs[1].as_ref().unwrap();
        assert_abs_diff_eq!(safety_cost(c2, &s(0.0)).unwrap(), 6.5, epsilon = 1e-12);
        assert_abs_diff_eq!(safety_cost(c2, &s(1.0)).unwrap(), 10.75, epsilon = 1e-12);
        assert_abs_diff_eq!(safety_benefit(c2, 0, &s(-4.0)).unwrap(), 4.5, epsilon = 1e-12);
        assert_abs_diff_eq!(safety_benefit(c2, 0, &s(0.0)).unwrap(), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn row_expansion() {
        let (sys, x) = pair();
        let coeffs = assemble_all(&sys, &x).unwrap();
        let w = SafetyWeights { eta: vec![1.0, 1000.0], w: vec![1.0, 1000.0], floor: DEFAULT_H_FLOOR };
        let (row, scalar) = altruism_row(&sys, 0, &coeffs, &w).unwrap();
        let c1 = coeffs[0].as_ref().unwrap();
        let c2 = coeffs[1].as_ref().unwrap();
        assert_abs_diff_eq!(row[0], c1.a(0).unwrap()[0] + 1000.0 * c2.a(0).unwrap()[0], epsilon = 1e-9);
        assert_abs_diff_eq!(scalar, c1.b(0).unwrap() + 1000.0 * c2.b(0).unwrap(), epsilon = 1e-9);
    }

    #[test]
    fn single_agent_row_is_own_term() {
        let params = FormationParams::new(1.0, vec![0.0]).unwrap();
        let spec = SafetySpec::ball(0.5, ClassKGains::new(1.0, 1.0, 1.0).unwrap(), VirtualController::Zero).unwrap();
        let sys = MultiAgentSystem::formation(CouplingGraph::new(1, []).unwrap(), &params, &[true], vec![Some(spec)]).unwrap();
        let coeffs = assemble_all(&sys, &[s(0.2)]).unwrap();
        let w = SafetyWeights::at_state(&[1.0], &coeffs, DEFAULT_H_FLOOR).unwrap();
        let (row, scalar) = altruism_row(&sys, 0, &coeffs, &w).unwrap();
        let c = coeffs[0].as_ref().unwrap();
        assert_eq!(row, c.a(0).unwrap().clone());
        assert_eq!(scalar, c.b(0).unwrap());
    }

    #[test]
    fn u_min_at_initial_state() {
        let (sys, x) = pair();
        let coeffs = assemble_all(&sys, &x).unwrap();
        let bound = u_min_metric(coeffs[1].as_ref().unwrap(), &[s(0.0), s(0.0)]).unwrap();
        assert_abs_diff_eq!(bound.value, -5.0 / 4.25, epsilon = 1e-12);
        assert!(bound.upper);
    }

    #[test]
    fn symmetric_pair_gives_opposite_inputs() {
        let (sys, x) = pair();
        let coeffs = assemble_all(&sys, &x).unwrap();
        let w = SafetyWeights::at_state(&[1.0, 1.0], &coeffs, DEFAULT_H_FLOOR).unwrap();
        let mut cs = ConsensusState::new(&sys, 5.0, 0.01).unwrap();
        let mut worst = f64::INFINITY;
        let out = run_altruistic_rounds(&sys, &coeffs, &sys.zero_inputs(), &mut cs, &w, &RoundOptions::new(300), |r| {
            for c in coeffs.iter().flatten() {
                worst = worst.min(eval_psi(c, &r.u).unwrap());
            }
        })
        .unwrap();
        assert_abs_diff_eq!(out.u[0][0], -out.u[1][0], epsilon = 1e-9);
        assert!(worst >= -1e-6);
    }
}

//! Barrier functions, the high-order candidate `h⁺`, virtual controllers and
//! assembly of the collaborative safety constraint coefficients.
//!
//! For agent `i` with barrier `h_i`, virtual controller `k_i` and gains
//! `α, β, γ`:
//!
//! ```text
//! h⁺_i = L_f h_i + L_g h_i k_i + α h_i
//! ψ_i  = ḣ⁺_i + β h⁺_i = Σ_{j ∈ N_i⁺} a_ijᵀ u_j + b_ij
//! ```
//!
//! Writing `Φ_i = L_f h_i + L_g h_i k_i`, the coefficients are
//! `a_ij = g_jᵀ ∂Φ_i/∂x_j` and `b_ij = ∂Φ_i/∂x_j · f_j`, with the extra terms
//! `α L_g h_i` in `a_ii` and `α L_f h_i + β h⁺_i` in `b_ii`.

use std::fmt;
use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::dynamics::JointState;
use crate::error::ModelError;
use crate::model::MultiAgentSystem;
use crate::sim::integrator::step_rk4;

/// Default weight of `b²` under the square root of the half-Sontag gain.
pub const DEFAULT_SONTAG_EPS: f64 = 0.1;
/// Below this `‖L_g h‖²` the half-Sontag controller returns zero.
pub const SONTAG_B_TOL: f64 = 1e-12;
/// Central-difference step for derivatives of `L_g h_i k_i`.
pub const COMPOSITE_FD_STEP: f64 = 1e-6;

pub trait BarrierFunction: Send + Sync + fmt::Debug {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// `h(x) = ½ (r² − ‖x‖²)`: stay within distance `r` of the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallBarrier {
    pub radius: f64,
}

impl BallBarrier {
    pub fn new(radius: f64) -> Result<Self, ModelError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(ModelError::InvalidParameter { name: "radius".into(), reason: format!("must be > 0, got {radius}") });
        }
        Ok(Self { radius })
    }
}

impl BarrierFunction for BallBarrier {
    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * (self.radius * self.radius - x.norm_squared())
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        -x
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        -DMatrix::identity(x.len(), x.len())
    }
}

/// Linear class-K gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassKGains {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl ClassKGains {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, ModelError> {
        let bad = |name: &str, reason: &str| Err(ModelError::InvalidParameter { name: name.into(), reason: reason.into() });
        if !(alpha > 0.0 && alpha.is_finite()) {
            return bad("alpha", "must be > 0");
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return bad("beta", "must be > 0");
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return bad("gamma", "must be >= 0");
        }
        Ok(Self { alpha, beta, gamma })
    }
}

/// Reads the joint state and returns the agent's virtual input. Must only
/// depend on the states of the agent's in-neighbors.
pub type ControllerFn = Arc<dyn Fn(&[DVector<f64>]) -> DVector<f64> + Send + Sync>;

#[derive(Clone)]
pub enum VirtualController {
    Zero,
    HalfSontag { sontag_eps: f64 },
    Custom(ControllerFn),
}

impl VirtualController {
    pub fn half_sontag() -> Self {
        Self::HalfSontag { sontag_eps: DEFAULT_SONTAG_EPS }
    }
}

impl fmt::Debug for VirtualController {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::HalfSontag { sontag_eps } => write!(f, "HalfSontag {{ sontag_eps: {sontag_eps} }}"),
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SafetySpec {
    pub barrier: Arc<dyn BarrierFunction>,
    pub gains: ClassKGains,
    pub controller: VirtualController,
}

impl SafetySpec {
    pub fn ball(radius: f64, gains: ClassKGains, controller: VirtualController) -> Result<Self, ModelError> {
        Ok(Self { barrier: Arc::new(BallBarrier::new(radius)?), gains, controller })
    }
}

/// Lie derivatives of one agent's barrier at a joint state.
#[derive(Debug, Clone)]
pub struct LieTerms {
    pub h: f64,
    pub grad: DVector<f64>,
    pub drift: DVector<f64>,
    pub input_map: DMatrix<f64>,
    pub lfh: f64,
    /// `(L_g h)ᵀ`, one entry per input channel.
    pub lgh: DVector<f64>,
}

pub fn lie_terms(sys: &MultiAgentSystem, i: usize, x: &[DVector<f64>]) -> Result<LieTerms, ModelError> {
    let spec = sys.safety(i)?;
    let dynamics = &sys.agents[i].dynamics;
    let x_i = x.get(i).ok_or(ModelError::MissingState { agent: i + 1, available: x.len() })?;
    let h = spec.barrier.value(x_i);
    let grad = spec.barrier.gradient(x_i);
    let drift = dynamics.drift(x)?;
    let input_map = dynamics.input_map(x_i);
    let lfh = grad.dot(&drift);
    let lgh = input_map.tr_mul(&grad);
    Ok(LieTerms { h, grad, drift, input_map, lfh, lgh })
}

/// `λ(a, b) = (−a + √(a² + ε b²)) / (2b)`, evaluated without cancellation and
/// returning 0 for `b < SONTAG_B_TOL`.
pub fn half_sontag_gain(a: f64, b: f64, sontag_eps: f64) -> f64 {
    if b < SONTAG_B_TOL {
        if a <= 0.0 {
            warn!("half-Sontag gain requested at ‖L_g h‖ = 0 with a = {a}; returning 0");
        }
        return 0.0;
    }
    let root = (a * a + sontag_eps * b * b).sqrt();
    if a > 0.0 {
        // Rationalized form of the same expression.
        sontag_eps * b / (2.0 * (a + root))
    } else {
        (root - a) / (2.0 * b)
    }
}

fn sontag_input(terms: &LieTerms, alpha: f64, sontag_eps: f64) -> DVector<f64> {
    let a = terms.lfh + alpha * terms.h;
    let b = terms.lgh.norm_squared();
    &terms.lgh * half_sontag_gain(a, b, sontag_eps)
}

/// Half-Sontag virtual input `λ(a, b) (L_g h)ᵀ` with `a = L_f h + α h`,
/// `b = ‖L_g h‖²`. Uses the agent's configured `sontag_eps` when its
/// controller is half-Sontag and the default otherwise.
pub fn eval_half_sontag(sys: &MultiAgentSystem, i: usize, x: &[DVector<f64>]) -> Result<DVector<f64>, ModelError> {
    let spec = sys.safety(i)?;
    let eps = match spec.controller {
        VirtualController::HalfSontag { sontag_eps } => sontag_eps,
        _ => DEFAULT_SONTAG_EPS,
    };
    Ok(sontag_input(&lie_terms(sys, i, x)?, spec.gains.alpha, eps))
}

fn controller_input(sys: &MultiAgentSystem, i: usize, x: &[DVector<f64>], terms: &LieTerms) -> Result<DVector<f64>, ModelError> {
    let spec = sys.safety(i)?;
    let m = sys.agents[i].input_dim();
    let k = match &spec.controller {
        VirtualController::Zero => DVector::zeros(m),
        VirtualController::HalfSontag { sontag_eps } => sontag_input(terms, spec.gains.alpha, *sontag_eps),
        VirtualController::Custom(f) => f(x),
    };
    if k.len() != m {
        return Err(ModelError::Dimension { what: "virtual controller output", expected: m, got: k.len() });
    }
    Ok(k)
}

/// Virtual input `k_i` at the joint state.
pub fn virtual_input(sys: &MultiAgentSystem, i: usize, x: &[DVector<f64>]) -> Result<DVector<f64>, ModelError> {
    let terms = lie_terms(sys, i, x)?;
    controller_input(sys, i, x, &terms)
}

/// `h⁺_i = L_f h_i + L_g h_i k_i + α_i h_i`.
pub fn eval_h_plus(sys: &MultiAgentSystem, i: usize, x: &[DVector<f64>]) -> Result<f64, ModelError> {
    let terms = lie_terms(sys, i, x)?;
    let k = controller_input(sys, i, x, &terms)?;
    Ok(terms.lfh + terms.lgh.dot(&k) + sys.safety(i)?.gains.alpha * terms.h)
}

// L_g h_i k_i as a function of the joint state.
fn composite(sys: &MultiAgentSystem, i: usize, x: &[DVector<f64>]) -> Result<f64, ModelError> {
    let terms = lie_terms(sys, i, x)?;
    let k = controller_input(sys, i, x, &terms)?;
    Ok(terms.lgh.dot(&k))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingTerm {
    pub j: usize,
    pub a: DVector<f64>,
    pub b: f64,
}

/// Coefficients of agent `i`'s constraint `ψ_i ≥ 0`, frozen at one joint state.
/// Holds a term for every `j ∈ N_i⁺` and nothing else.
#[derive(Debug, Clone, PartialEq)]
pub struct CcbfCoefficients {
    pub agent: usize,
    pub terms: Vec<CouplingTerm>,
    pub h: f64,
    pub h_plus: f64,
    pub lgh: DVector<f64>,
    pub k: DVector<f64>,
    pub gamma: f64,
}

impl CcbfCoefficients {
    pub fn term(&self, j: usize) -> Option<&CouplingTerm> {
        self.terms.iter().find(|t| t.j == j)
    }

    pub fn a(&self, j: usize) -> Option<&DVector<f64>> {
        self.term(j).map(|t| &t.a)
    }

    pub fn b(&self, j: usize) -> Option<f64> {
        self.term(j).map(|t| t.b)
    }

    /// `Σ_j b_ij`.
    pub fn b_total(&self) -> f64 {
        self.terms.iter().map(|t| t.b).sum()
    }

    /// `Σ_{j ≠ i} a_ijᵀ u_j + b_ij`: what the neighbors contribute to `ψ_i`.
    pub fn neighbor_contribution(&self, u: &[DVector<f64>]) -> Result<f64, ModelError> {
        let mut acc = 0.0;
        for t in self.terms.iter().filter(|t| t.j != self.agent) {
            acc += dot_checked(&t.a, u, t.j)? + t.b;
        }
        Ok(acc)
    }

    /// Row of the first-order condition `L_g h u_i + γ h − L_g h k_i ≥ 0`.
    pub fn first_order_row(&self) -> (DVector<f64>, f64) {
        (self.lgh.clone(), self.gamma * self.h - self.lgh.dot(&self.k))
    }
}

fn dot_checked(a: &DVector<f64>, u: &[DVector<f64>], j: usize) -> Result<f64, ModelError> {
    let uj = u.get(j).ok_or(ModelError::Dimension { what: "joint input", expected: j + 1, got: u.len() })?;
    if uj.len() != a.len() {
        return Err(ModelError::Dimension { what: "agent input", expected: a.len(), got: uj.len() });
    }
    Ok(a.dot(uj))
}

/// Assembles `a_ij`, `b_ij` for all `j ∈ N_i⁺` at the joint state `x`.
/// Needs states of the whole 2-hop neighborhood of `i`.
pub fn assemble_coefficients(sys: &MultiAgentSystem, i: usize, x: &[DVector<f64>]) -> Result<CcbfCoefficients, ModelError> {
    let spec = sys.safety(i)?;
    let dynamics = &sys.agents[i].dynamics;
    let terms = lie_terms(sys, i, x)?;
    let k = controller_input(sys, i, x, &terms)?;
    let ClassKGains { alpha, beta, gamma } = spec.gains;
    let h_plus = terms.lfh + terms.lgh.dot(&k) + alpha * terms.h;
    let analytic_composite = matches!(spec.controller, VirtualController::Zero);

    let mut out = Vec::new();
    let mut probe: JointState = x.to_vec();
    for &j in sys.graph.in_neighbors(i)? {
        let x_j = x.get(j).ok_or(ModelError::MissingState { agent: j + 1, available: x.len() })?;
        // ∂(L_f h_i)/∂x_j as a column.
        let mut d = dynamics.drift_jacobian(x, j)?.tr_mul(&terms.grad);
        if j == i {
            d += spec.barrier.hessian(&x[i]) * &terms.drift;
        }
        if !analytic_composite {
            for c in 0..x_j.len() {
                let base = x_j[c];
                probe[j][c] = base + COMPOSITE_FD_STEP;
                let plus = composite(sys, i, &probe)?;
                probe[j][c] = base - COMPOSITE_FD_STEP;
                let minus = composite(sys, i, &probe)?;
                probe[j][c] = base;
                d[c] += (plus - minus) / (2.0 * COMPOSITE_FD_STEP);
            }
        }
        let other = &sys.agents[j].dynamics;
        let mut a = other.input_map(x_j).tr_mul(&d);
        let mut b = d.dot(&other.drift(x)?);
        if j == i {
            a += &terms.lgh * alpha;
            b += alpha * terms.lfh + beta * h_plus;
        }
        out.push(CouplingTerm { j, a, b });
    }
    Ok(CcbfCoefficients { agent: i, terms: out, h: terms.h, h_plus, lgh: terms.lgh, k, gamma })
}

/// `ψ_i = Σ_{j ∈ N_i⁺} a_ijᵀ u_j + b_ij` for a joint input `u`.
pub fn eval_psi(coeffs: &CcbfCoefficients, u: &[DVector<f64>]) -> Result<f64, ModelError> {
    let mut acc = 0.0;
    for t in &coeffs.terms {
        acc += dot_checked(&t.a, u, t.j)? + t.b;
    }
    Ok(acc)
}

/// Returns `(L_g h_i, γ_i h_i − L_g h_i k_i)`; the first-order condition is
/// `row · u_i + scalar ≥ 0`.
pub fn first_order_condition_row(sys: &MultiAgentSystem, i: usize, x: &[DVector<f64>]) -> Result<(DVector<f64>, f64), ModelError> {
    let terms = lie_terms(sys, i, x)?;
    let k = controller_input(sys, i, x, &terms)?;
    let gamma = sys.safety(i)?.gains.gamma;
    let scalar = gamma * terms.h - terms.lgh.dot(&k);
    Ok((terms.lgh, scalar))
}

/// Independent check of the coefficient assembly: differentiates
/// `t ↦ h⁺_i(x(t))` along the closed-loop flow (constant `u`, RK4 steps of
/// `±dt`) and returns `ḣ⁺_i + β_i h⁺_i`.
pub fn fd_psi_oracle(sys: &MultiAgentSystem, i: usize, x: &[DVector<f64>], u: &[DVector<f64>], dt: f64) -> Result<f64, ModelError> {
    assert!(dt > 0.0, "oracle step must be positive");
    let forward = step_rk4(sys, x, u, dt)?;
    let backward = step_rk4(sys, x, u, -dt)?;
    let rate = (eval_h_plus(sys, i, &forward)? - eval_h_plus(sys, i, &backward)?) / (2.0 * dt);
    Ok(rate + sys.safety(i)?.gains.beta * eval_h_plus(sys, i, x)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::FormationParams;
    use crate::topology::CouplingGraph;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn gains() -> ClassKGains {
        ClassKGains::new(10.0, 10.0, 10.0).unwrap()
    }

    // The two-input pair at x = (−0.3, 0.3), ξ = 2.5, Δ₂₁ = 1.4, r = 0.5.
    fn pair(controller: VirtualController) -> (MultiAgentSystem, JointState) {
        let params = FormationParams::new(2.5, vec![-0.7, 0.7]).unwrap();
        let safety = SafetySpec::ball(0.5, gains(), controller).unwrap();
        let sys = MultiAgentSystem::formation(CouplingGraph::complete(2).unwrap(), &params, &[true, true], vec![
            Some(safety.clone()),
            Some(safety),
        ])
        .unwrap();
        (sys, vec![DVector::from_element(1, -0.3), DVector::from_element(1, 0.3)])
    }

    fn scalars(v: &[f64]) -> JointState {
        v.iter().map(|&s| DVector::from_element(1, s)).collect()
    }

    #[test]
    fn h_plus_zero_controller() {
        let (sys, x) = pair(VirtualController::Zero);
        assert_abs_diff_eq!(eval_h_plus(&sys, 1, &x).unwrap(), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn h_plus_at_origin_is_class_k_term() {
        let params = FormationParams::new(1.0, vec![0.0]).unwrap();
        let safety = SafetySpec::ball(0.5, gains(), VirtualController::Zero).unwrap();
        let sys = MultiAgentSystem::formation(CouplingGraph::new(1, []).unwrap(), &params, &[true], vec![Some(safety)]).unwrap();
        let x = scalars(&[0.0]);
        assert_abs_diff_eq!(eval_h_plus(&sys, 0, &x).unwrap(), 1.25, epsilon = 1e-15);
        let c = assemble_coefficients(&sys, 0, &x).unwrap();
        assert_eq!(c.a(0).unwrap()[0], 0.0);
        assert_abs_diff_eq!(c.b(0).unwrap(), 10.0 * 1.25, epsilon = 1e-12);
    }

    // Reference values from a 40-digit evaluation of λ(a, b).
    #[test]
    fn half_sontag_values() {
        assert_abs_diff_eq!(half_sontag_gain(0.2, 0.09, 0.1), 0.011193616329064961, epsilon = 1e-15);
        assert_abs_diff_eq!(half_sontag_gain(0.0, 1.0, 0.1), 0.15811388300841897, epsilon = 1e-15);
        assert_eq!(half_sontag_gain(0.3, 0.0, 0.1), 0.0);
        assert_eq!(half_sontag_gain(-0.3, 0.0, 0.1), 0.0);
        // Both branches agree near a = 0.
        let l = half_sontag_gain(1e-9, 0.5, 0.1);
        let r = half_sontag_gain(-1e-9, 0.5, 0.1);
        assert_abs_diff_eq!(l, r, epsilon = 1e-8);

        let (sys, x) = pair(VirtualController::half_sontag());
        let k = eval_half_sontag(&sys, 1, &x).unwrap();
        assert_abs_diff_eq!(k[0], -0.0033580848987194882, epsilon = 1e-15);
        assert_abs_diff_eq!(eval_h_plus(&sys, 1, &x).unwrap(), 0.20100742546961585, epsilon = 1e-14);
        let (row, scalar) = first_order_condition_row(&sys, 1, &x).unwrap();
        assert_abs_diff_eq!(row[0], -0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(scalar, 0.7989925745303842, epsilon = 1e-14);
    }

    #[test]
    fn half_sontag_zero_gradient() {
        let (sys, _) = pair(VirtualController::half_sontag());
        let x = scalars(&[-0.3, 0.0]);
        assert_eq!(eval_half_sontag(&sys, 1, &x).unwrap()[0], 0.0);
    }

    #[test]
    fn coefficients_pair_zero_controller() {
        let (sys, x) = pair(VirtualController::Zero);
        let c = assemble_coefficients(&sys, 1, &x).unwrap();
        assert_abs_diff_eq!(c.a(1).unwrap()[0], -4.25, epsilon = 1e-12);
        assert_abs_diff_eq!(c.a(0).unwrap()[0], -0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(c.b(0).unwrap(), 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(c.b(1).unwrap(), -6.5, epsilon = 1e-12);
        assert_eq!(c.terms.len(), 2);

        assert_abs_diff_eq!(eval_psi(&c, &scalars(&[0.0, 0.0])).unwrap(), -5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eval_psi(&c, &scalars(&[-4.0, 0.0])).unwrap(), -2.0, epsilon = 1e-12);
        assert!(eval_psi(&c, &scalars(&[0.0])).is_err());

        let (row, scalar) = first_order_condition_row(&sys, 1, &x).unwrap();
        assert_abs_diff_eq!(row[0], -0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(scalar, 10.0 * 0.08, epsilon = 1e-14);
    }

    #[test]
    fn zero_coefficients_give_zero_psi() {
        let c = CcbfCoefficients {
            agent: 0,
            terms: vec![CouplingTerm { j: 0, a: DVector::zeros(1), b: 0.0 }],
            h: 0.0,
            h_plus: 0.0,
            lgh: DVector::zeros(1),
            k: DVector::zeros(1),
            gamma: 0.0,
        };
        assert_eq!(eval_psi(&c, &scalars(&[3.0])).unwrap(), 0.0);
        // γ = 0, k = 0, on the boundary: the row reduces to row·u ≥ 0.
        assert_eq!(c.first_order_row().1, 0.0);
    }

    #[test]
    fn uncontrolled_neighbor_has_empty_row() {
        let params = FormationParams::new(2.5, vec![-0.7, 0.7]).unwrap();
        let safety = SafetySpec::ball(0.5, gains(), VirtualController::Zero).unwrap();
        let sys = MultiAgentSystem::formation(CouplingGraph::complete(2).unwrap(), &params, &[true, false], vec![
            None,
            Some(safety),
        ])
        .unwrap();
        let c = assemble_coefficients(&sys, 1, &scalars(&[-0.3, 0.3])).unwrap();
        assert_eq!(c.a(1).unwrap().len(), 0);
        assert_abs_diff_eq!(c.a(0).unwrap()[0], -0.75, epsilon = 1e-12);
        assert!(matches!(assemble_coefficients(&sys, 0, &scalars(&[-0.3, 0.3])), Err(ModelError::NoBarrier { agent: 1 })));
    }

    #[test]
    fn oracle_matches_assembly_at_pair_state() {
        for controller in [VirtualController::Zero, VirtualController::half_sontag()] {
            let (sys, x) = pair(controller);
            let u = scalars(&[-4.0, 0.7]);
            for i in 0..2 {
                let psi = eval_psi(&assemble_coefficients(&sys, i, &x).unwrap(), &u).unwrap();
                let oracle = fd_psi_oracle(&sys, i, &x, &u, 1e-6).unwrap();
                assert!((psi - oracle).abs() / (1.0 + psi.abs()) <= 1e-3, "{psi} vs {oracle}");
            }
        }
    }

    #[test]
    fn oracle_with_zero_dynamics() {
        #[derive(Debug)]
        struct Still;
        impl crate::dynamics::AgentDynamics for Still {
            fn state_dim(&self) -> usize {
                1
            }
            fn input_dim(&self) -> usize {
                1
            }
            fn drift(&self, _: &[DVector<f64>]) -> Result<DVector<f64>, ModelError> {
                Ok(DVector::zeros(1))
            }
            fn input_map(&self, _: &DVector<f64>) -> DMatrix<f64> {
                DMatrix::zeros(1, 1)
            }
            fn drift_jacobian(&self, _: &[DVector<f64>], _: usize) -> Result<DMatrix<f64>, ModelError> {
                Ok(DMatrix::zeros(1, 1))
            }
        }
        let safety = SafetySpec::ball(0.5, gains(), VirtualController::Zero).unwrap();
        let sys = MultiAgentSystem::new(CouplingGraph::new(1, []).unwrap(), vec![crate::model::AgentModel {
            dynamics: Arc::new(Still),
            safety: Some(safety),
        }])
        .unwrap();
        let x = scalars(&[0.2]);
        let expected = 10.0 * eval_h_plus(&sys, 0, &x).unwrap();
        assert_eq!(fd_psi_oracle(&sys, 0, &x, &scalars(&[0.0]), 1e-6).unwrap(), expected);
    }

    #[test]
    fn custom_controller_dimension_checked() {
        let bad: ControllerFn = Arc::new(|_x| DVector::zeros(2));
        let (sys, x) = pair(VirtualController::Custom(bad));
        assert!(matches!(eval_h_plus(&sys, 0, &x), Err(ModelError::Dimension { .. })));
    }

    #[test]
    fn gains_validation() {
        assert!(ClassKGains::new(0.0, 1.0, 1.0).is_err());
        assert!(ClassKGains::new(1.0, -1.0, 1.0).is_err());
        assert!(ClassKGains::new(1.0, 1.0, -0.1).is_err());
        assert!(ClassKGains::new(1.0, 1.0, 0.0).is_ok());
        assert!(BallBarrier::new(0.0).is_err());
    }

    proptest! {
        #[test]
        fn ball_derivatives_match_finite_differences(v in proptest::collection::vec(-2.0f64..2.0, 1..4), r in 0.1f64..3.0) {
            let ball = BallBarrier::new(r).unwrap();
            let x = DVector::from_vec(v);
            let step = 1e-5;
            let g = ball.gradient(&x);
            let hess = ball.hessian(&x);
            for c in 0..x.len() {
                let mut p = x.clone();
                let mut m = x.clone();
                p[c] += step;
                m[c] -= step;
                let fd = (ball.value(&p) - ball.value(&m)) / (2.0 * step);
                prop_assert!((fd - g[c]).abs() <= 1e-4 * g[c].abs().max(1.0));
                let fd_col = (ball.gradient(&p) - ball.gradient(&m)) / (2.0 * step);
                for r in 0..x.len() {
                    prop_assert!((fd_col[r] - hess[(r, c)]).abs() <= 1e-4 * hess[(r, c)].abs().max(1.0));
                }
            }
        }

        #[test]
        fn half_sontag_makes_h_plus_positive(x1 in -0.49f64..0.49, x2 in -0.49f64..0.49, xi in 0.1f64..5.0, alpha in 0.1f64..20.0) {
            let params = FormationParams::new(xi, vec![-0.7, 0.7]).unwrap();
            let safety = SafetySpec::ball(0.5, ClassKGains::new(alpha, 1.0, 1.0).unwrap(), VirtualController::half_sontag()).unwrap();
            let sys = MultiAgentSystem::formation(CouplingGraph::complete(2).unwrap(), &params, &[true, true], vec![Some(safety.clone()), Some(safety)]).unwrap();
            let x = scalars(&[x1, x2]);
            for i in 0..2 {
                if x[i][0].abs() > 1e-6 {
                    prop_assert!(eval_h_plus(&sys, i, &x).unwrap() > 0.0);
                }
            }
        }
    }
}

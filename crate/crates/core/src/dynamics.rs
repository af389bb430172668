//! Control-affine agent dynamics with neighbor coupling,
//! `ẋ_i = f_i(x_i, x_{N_i⁺}) + g_i(x_i) u_i`.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::ModelError;
use crate::topology::CouplingGraph;

/// One state vector per agent, indexed by 0-based agent number.
pub type JointState = Vec<DVector<f64>>;

/// Per-agent dynamics. Implementations know their own agent index and read
/// neighbor states out of the joint state.
pub trait AgentDynamics: Send + Sync + fmt::Debug {
    fn state_dim(&self) -> usize;

    /// Zero means the agent is uncontrolled.
    fn input_dim(&self) -> usize;

    fn drift(&self, x: &[DVector<f64>]) -> Result<DVector<f64>, ModelError>;

    /// `g_i(x_i)`, a `state_dim × input_dim` matrix.
    fn input_map(&self, x_i: &DVector<f64>) -> DMatrix<f64>;

    /// `∂f_i/∂x_j`, a `state_dim × dim(x_j)` matrix.
    fn drift_jacobian(&self, x: &[DVector<f64>], j: usize) -> Result<DMatrix<f64>, ModelError>;
}

/// Formation-control coupling for 1D single integrators.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationParams {
    pub xi: f64,
    /// Desired absolute position x_i^δ per agent; Δ_ij = x_i^δ − x_j^δ.
    pub desired_positions: Vec<f64>,
}

impl FormationParams {
    pub fn new(xi: f64, desired_positions: Vec<f64>) -> Result<Self, ModelError> {
        if !(xi > 0.0 && xi.is_finite()) {
            return Err(ModelError::InvalidParameter { name: "xi".into(), reason: format!("must be > 0, got {xi}") });
        }
        Ok(Self { xi, desired_positions })
    }

    pub fn offset(&self, i: usize, j: usize) -> f64 {
        self.desired_positions[i] - self.desired_positions[j]
    }

    /// Dynamics object for agent `i`; `controlled` selects input dimension 1 or 0.
    pub fn agent_dynamics(&self, graph: &CouplingGraph, i: usize, controlled: bool) -> Result<FormationAgent, ModelError> {
        if self.desired_positions.len() != graph.agent_count() {
            return Err(ModelError::Dimension {
                what: "desired positions",
                expected: graph.agent_count(),
                got: self.desired_positions.len(),
            });
        }
        let couplings = graph
            .in_neighbors(i)?
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| (j, self.offset(i, j)))
            .collect();
        Ok(FormationAgent { agent: i, xi: self.xi, couplings, input_dim: usize::from(controlled) })
    }
}

fn scalar_state(x: &[DVector<f64>], j: usize) -> Result<f64, ModelError> {
    let v = x.get(j).ok_or(ModelError::MissingState { agent: j + 1, available: x.len() })?;
    if v.len() != 1 {
        return Err(ModelError::Dimension { what: "1D agent state", expected: 1, got: v.len() });
    }
    Ok(v[0])
}

/// `u_i^f = −ξ Σ_{j ∈ N_i⁺ \ {i}} ((x_i − x_j) − Δ_ij)`.
pub fn formation_drift(params: &FormationParams, graph: &CouplingGraph, i: usize, x: &[DVector<f64>]) -> Result<f64, ModelError> {
    let xi_state = scalar_state(x, i)?;
    let mut sum = 0.0;
    for &j in graph.in_neighbors(i)? {
        if j != i {
            sum += (xi_state - scalar_state(x, j)?) - params.offset(i, j);
        }
    }
    Ok(-params.xi * sum)
}

/// Single integrator driven by the formation law plus an optional direct input.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationAgent {
    agent: usize,
    xi: f64,
    couplings: Vec<(usize, f64)>,
    input_dim: usize,
}

impl AgentDynamics for FormationAgent {
    fn state_dim(&self) -> usize {
        1
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn drift(&self, x: &[DVector<f64>]) -> Result<DVector<f64>, ModelError> {
        let own = scalar_state(x, self.agent)?;
        let mut sum = 0.0;
        for &(j, offset) in &self.couplings {
            sum += (own - scalar_state(x, j)?) - offset;
        }
        Ok(DVector::from_element(1, -self.xi * sum))
    }

    fn input_map(&self, _x_i: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, self.input_dim, 1.0)
    }

    fn drift_jacobian(&self, x: &[DVector<f64>], j: usize) -> Result<DMatrix<f64>, ModelError> {
        scalar_state(x, j)?;
        let entry = if j == self.agent {
            -self.xi * self.couplings.len() as f64
        } else if self.couplings.iter().any(|&(k, _)| k == j) {
            self.xi
        } else {
            0.0
        };
        Ok(DMatrix::from_element(1, 1, entry))
    }
}

/// `ẋ_i = f_i + g_i u_i` for one agent.
pub fn eval_dynamics(dynamics: &dyn AgentDynamics, agent: usize, x: &[DVector<f64>], u_i: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
    if u_i.len() != dynamics.input_dim() {
        return Err(ModelError::Dimension { what: "agent input", expected: dynamics.input_dim(), got: u_i.len() });
    }
    let x_i = x.get(agent).ok_or(ModelError::MissingState { agent: agent + 1, available: x.len() })?;
    if x_i.len() != dynamics.state_dim() {
        return Err(ModelError::Dimension { what: "agent state", expected: dynamics.state_dim(), got: x_i.len() });
    }
    let mut xdot = dynamics.drift(x)?;
    if u_i.len() > 0 {
        xdot += dynamics.input_map(x_i) * u_i;
    }
    Ok(xdot)
}

/// Worst relative error between `drift_jacobian` and a central finite
/// difference of `drift`, over every `j` in `coupled` (normally N_i⁺).
///
/// The error of each entry is measured as `|fd − analytic| / max(|analytic|, 1)`.
pub fn check_jacobian(dynamics: &dyn AgentDynamics, coupled: &[usize], x: &[DVector<f64>], step: f64) -> Result<f64, ModelError> {
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut worst: f64 = 0.0;
    let mut probe: JointState = x.to_vec();
    for &j in coupled {
        let analytic = dynamics.drift_jacobian(x, j)?;
        let xj = x.get(j).ok_or(ModelError::MissingState { agent: j + 1, available: x.len() })?;
        for c in 0..xj.len() {
            probe[j][c] = xj[c] + step;
            let plus = dynamics.drift(&probe)?;
            probe[j][c] = xj[c] - step;
            let minus = dynamics.drift(&probe)?;
            probe[j][c] = xj[c];
            for r in 0..plus.len() {
                let fd = (plus[r] - minus[r]) / (2.0 * step);
                let exact = analytic[(r, c)];
                worst = worst.max((fd - exact).abs() / exact.abs().max(1.0));
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pair() -> (FormationParams, CouplingGraph, JointState) {
        let params = FormationParams::new(2.5, vec![-0.7, 0.7]).unwrap();
        let graph = CouplingGraph::complete(2).unwrap();
        (params, graph, vec![DVector::from_element(1, -0.3), DVector::from_element(1, 0.3)])
    }

    #[derive(Debug)]
    struct Square;

    impl AgentDynamics for Square {
        fn state_dim(&self) -> usize {
            1
        }
        fn input_dim(&self) -> usize {
            0
        }
        fn drift(&self, x: &[DVector<f64>]) -> Result<DVector<f64>, ModelError> {
            Ok(x[0].map(|v| v * v))
        }
        fn input_map(&self, _: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::zeros(1, 0)
        }
        fn drift_jacobian(&self, x: &[DVector<f64>], _j: usize) -> Result<DMatrix<f64>, ModelError> {
            Ok(DMatrix::from_element(1, 1, 2.0 * x[0][0]))
        }
    }

    #[derive(Debug)]
    struct Constant;

    impl AgentDynamics for Constant {
        fn state_dim(&self) -> usize {
            2
        }
        fn input_dim(&self) -> usize {
            0
        }
        fn drift(&self, _: &[DVector<f64>]) -> Result<DVector<f64>, ModelError> {
            Ok(DVector::from_vec(vec![1.0, -3.0]))
        }
        fn input_map(&self, _: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::zeros(2, 0)
        }
        fn drift_jacobian(&self, _: &[DVector<f64>], _j: usize) -> Result<DMatrix<f64>, ModelError> {
            Ok(DMatrix::zeros(2, 2))
        }
    }

    #[test]
    fn formation_drift_at_initial_state() {
        let (p, g, x) = pair();
        assert_abs_diff_eq!(p.offset(1, 0), 1.4, epsilon = 1e-15);
        assert_abs_diff_eq!(formation_drift(&p, &g, 1, &x).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(formation_drift(&p, &g, 0, &x).unwrap(), -2.0, epsilon = 1e-12);
    }

    #[test]
    fn formation_at_rest() {
        let (p, g, _) = pair();
        let x = vec![DVector::from_element(1, -0.2), DVector::from_element(1, 1.2)];
        assert_abs_diff_eq!(formation_drift(&p, &g, 0, &x).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(formation_drift(&p, &g, 1, &x).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn missing_neighbor() {
        let (p, g, x) = pair();
        let err = formation_drift(&p, &g, 1, &x[1..]).unwrap_err();
        assert!(matches!(err, ModelError::MissingState { .. }));
    }

    #[test]
    fn eval_matches_formation() {
        let (p, g, x) = pair();
        let uncontrolled = p.agent_dynamics(&g, 1, false).unwrap();
        let xdot = eval_dynamics(&uncontrolled, 1, &x, &DVector::zeros(0)).unwrap();
        assert_abs_diff_eq!(xdot[0], 2.0, epsilon = 1e-12);
        let controlled = p.agent_dynamics(&g, 0, true).unwrap();
        let xdot = eval_dynamics(&controlled, 0, &x, &DVector::from_element(1, -1.0)).unwrap();
        assert_abs_diff_eq!(xdot[0], -3.0, epsilon = 1e-12);
        assert!(eval_dynamics(&controlled, 0, &x, &DVector::zeros(0)).is_err());
        let xdot = eval_dynamics(&Constant, 0, &[DVector::zeros(2)], &DVector::zeros(0)).unwrap();
        assert_eq!(xdot, DVector::from_vec(vec![1.0, -3.0]));
    }

    #[test]
    fn jacobians() {
        let (p, g, x) = pair();
        for i in 0..2 {
            let d = p.agent_dynamics(&g, i, true).unwrap();
            assert!(check_jacobian(&d, g.in_neighbors(i).unwrap(), &x, 1e-6).unwrap() <= 1e-6);
            assert_eq!(d.drift_jacobian(&x, i).unwrap()[(0, 0)], -2.5);
            assert_eq!(d.drift_jacobian(&x, 1 - i).unwrap()[(0, 0)], 2.5);
        }
        assert!(check_jacobian(&Square, &[0], &[DVector::from_element(1, 1.0)], 1e-4).unwrap() <= 1e-7);
        assert_eq!(check_jacobian(&Constant, &[0], &[DVector::zeros(2)], 1e-3).unwrap(), 0.0);
    }

    #[test]
    fn rejects_nonpositive_gain() {
        assert!(FormationParams::new(-1.0, vec![0.0]).is_err());
        assert!(FormationParams::new(0.0, vec![0.0]).is_err());
    }
}

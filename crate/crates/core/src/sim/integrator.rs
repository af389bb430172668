//! Fixed-step integrators for the coupled system under zero-order-hold inputs.

use nalgebra::DVector;

use crate::dynamics::JointState;
use crate::error::ModelError;
use crate::model::MultiAgentSystem;

fn axpy(x: &[DVector<f64>], k: &[DVector<f64>], s: f64) -> JointState {
    x.iter().zip(k).map(|(xi, ki)| xi + ki * s).collect()
}

/// Classical fourth-order Runge–Kutta step. `dt` may be negative.
pub fn step_rk4(sys: &MultiAgentSystem, x: &[DVector<f64>], u: &[DVector<f64>], dt: f64) -> Result<JointState, ModelError> {
    let k1 = sys.flow(x, u)?;
    let k2 = sys.flow(&axpy(x, &k1, 0.5 * dt), u)?;
    let k3 = sys.flow(&axpy(x, &k2, 0.5 * dt), u)?;
    let k4 = sys.flow(&axpy(x, &k3, dt), u)?;
    Ok(x
        .iter()
        .enumerate()
        .map(|(i, xi)| xi + (&k1[i] + &k2[i] * 2.0 + &k3[i] * 2.0 + &k4[i]) * (dt / 6.0))
        .collect())
}

pub fn step_euler(sys: &MultiAgentSystem, x: &[DVector<f64>], u: &[DVector<f64>], dt: f64) -> Result<JointState, ModelError> {
    Ok(axpy(x, &sys.flow(x, u)?, dt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{AgentDynamics, FormationParams};
    use crate::model::AgentModel;
    use crate::topology::CouplingGraph;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    #[derive(Debug)]
    struct Decay(f64);

    impl AgentDynamics for Decay {
        fn state_dim(&self) -> usize {
            1
        }
        fn input_dim(&self) -> usize {
            0
        }
        fn drift(&self, x: &[DVector<f64>]) -> Result<DVector<f64>, ModelError> {
            Ok(&x[0] * -self.0)
        }
        fn input_map(&self, _: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::zeros(1, 0)
        }
        fn drift_jacobian(&self, _: &[DVector<f64>], _: usize) -> Result<DMatrix<f64>, ModelError> {
            Ok(DMatrix::from_element(1, 1, -self.0))
        }
    }

    fn single(rate: f64) -> MultiAgentSystem {
        MultiAgentSystem::new(CouplingGraph::new(1, []).unwrap(), vec![AgentModel { dynamics: Arc::new(Decay(rate)), safety: None }]).unwrap()
    }

    #[test]
    fn still_system_unchanged() {
        let sys = single(0.0);
        let x = vec![DVector::from_element(1, 0.7)];
        assert_eq!(step_rk4(&sys, &x, &[DVector::zeros(0)], 0.1).unwrap(), x);
    }

    #[test]
    fn exponential_decay() {
        let sys = single(1.0);
        let x = step_rk4(&sys, &[DVector::from_element(1, 1.0)], &[DVector::zeros(0)], 0.1).unwrap();
        assert!((x[0][0] - (-0.1f64).exp()).abs() <= 1e-7);
    }

    // Self-convergence against a fine-step reference.
    #[test]
    fn formation_pair_global_error() {
        let params = FormationParams::new(2.5, vec![-0.7, 0.7]).unwrap();
        let sys = MultiAgentSystem::formation(CouplingGraph::complete(2).unwrap(), &params, &[true, true], vec![None, None]).unwrap();
        let u = sys.zero_inputs();
        let run = |dt: f64| {
            let steps = (1.0 / dt).round() as usize;
            let mut x = vec![DVector::from_element(1, -0.3), DVector::from_element(1, 0.3)];
            for _ in 0..steps {
                x = step_rk4(&sys, &x, &u, dt).unwrap();
            }
            x
        };
        let coarse = run(1e-3);
        let fine = run(1e-5);
        for i in 0..2 {
            assert!((coarse[i][0] - fine[i][0]).abs() <= 1e-8);
        }
        // Antisymmetric offsets conserve the centroid.
        assert!((coarse[0][0] + coarse[1][0]).abs() <= 1e-6);
    }

    #[test]
    fn euler_is_first_order_step() {
        let sys = single(2.0);
        let x = step_euler(&sys, &[DVector::from_element(1, 1.0)], &[DVector::zeros(0)], 0.1).unwrap();
        assert!((x[0][0] - 0.8).abs() < 1e-15);
    }
}

//! The full model bundle: coupling graph plus per-agent dynamics and safety specs.

use std::sync::Arc;

use nalgebra::DVector;

use crate::barrier::SafetySpec;
use crate::dynamics::{eval_dynamics, AgentDynamics, FormationParams, JointState};
use crate::error::ModelError;
use crate::topology::CouplingGraph;

#[derive(Debug, Clone)]
pub struct AgentModel {
    pub dynamics: Arc<dyn AgentDynamics>,
    /// `None` for agents without a safety constraint of their own.
    pub safety: Option<SafetySpec>,
}

impl AgentModel {
    pub fn input_dim(&self) -> usize {
        self.dynamics.input_dim()
    }
}

#[derive(Debug, Clone)]
pub struct MultiAgentSystem {
    pub graph: CouplingGraph,
    pub agents: Vec<AgentModel>,
}

impl MultiAgentSystem {
    pub fn new(graph: CouplingGraph, agents: Vec<AgentModel>) -> Result<Self, ModelError> {
        if agents.len() != graph.agent_count() {
            return Err(ModelError::Dimension { what: "agent models", expected: graph.agent_count(), got: agents.len() });
        }
        Ok(Self { graph, agents })
    }

    /// 1D single integrators coupled through the formation law.
    /// `controlled[i]` selects whether agent `i` has a direct input.
    pub fn formation(
        graph: CouplingGraph,
        params: &FormationParams,
        controlled: &[bool],
        safety: Vec<Option<SafetySpec>>,
    ) -> Result<Self, ModelError> {
        let n = graph.agent_count();
        if controlled.len() != n || safety.len() != n {
            return Err(ModelError::Dimension { what: "per-agent settings", expected: n, got: controlled.len().min(safety.len()) });
        }
        let agents = safety
            .into_iter()
            .enumerate()
            .map(|(i, safety)| {
                Ok(AgentModel { dynamics: Arc::new(params.agent_dynamics(&graph, i, controlled[i])?), safety })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        Self::new(graph, agents)
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn safety(&self, i: usize) -> Result<&SafetySpec, ModelError> {
        self.agents
            .get(i)
            .ok_or(ModelError::AgentOutOfRange { agent: i + 1, n: self.agents.len() })?
            .safety
            .as_ref()
            .ok_or(ModelError::NoBarrier { agent: i + 1 })
    }

    /// Agents that own a barrier constraint, ascending.
    pub fn owners(&self) -> Vec<usize> {
        (0..self.agents.len()).filter(|&i| self.agents[i].safety.is_some()).collect()
    }

    /// Offsets of each agent's input block in the stacked input vector, plus
    /// the total length.
    pub fn input_offsets(&self) -> (Vec<usize>, usize) {
        let mut offsets = Vec::with_capacity(self.agents.len());
        let mut total = 0;
        for a in &self.agents {
            offsets.push(total);
            total += a.input_dim();
        }
        (offsets, total)
    }

    pub fn zero_inputs(&self) -> JointState {
        self.agents.iter().map(|a| DVector::zeros(a.input_dim())).collect()
    }

    pub fn stack_inputs(&self, u: &[DVector<f64>]) -> DVector<f64> {
        let (_, total) = self.input_offsets();
        let mut out = DVector::zeros(total);
        let mut at = 0;
        for ui in u {
            out.rows_mut(at, ui.len()).copy_from(ui);
            at += ui.len();
        }
        out
    }

    pub fn split_inputs(&self, stacked: &DVector<f64>) -> JointState {
        let (offsets, _) = self.input_offsets();
        self.agents
            .iter()
            .zip(offsets)
            .map(|(a, at)| stacked.rows(at, a.input_dim()).into_owned())
            .collect()
    }

    pub fn check_state(&self, x: &[DVector<f64>]) -> Result<(), ModelError> {
        if x.len() != self.agents.len() {
            return Err(ModelError::MissingState { agent: x.len().min(self.agents.len()) + 1, available: x.len() });
        }
        for (xi, a) in x.iter().zip(&self.agents) {
            if xi.len() != a.dynamics.state_dim() {
                return Err(ModelError::Dimension { what: "agent state", expected: a.dynamics.state_dim(), got: xi.len() });
            }
        }
        Ok(())
    }

    pub fn check_inputs(&self, u: &[DVector<f64>]) -> Result<(), ModelError> {
        if u.len() != self.agents.len() {
            return Err(ModelError::Dimension { what: "joint input", expected: self.agents.len(), got: u.len() });
        }
        for (ui, a) in u.iter().zip(&self.agents) {
            if ui.len() != a.input_dim() {
                return Err(ModelError::Dimension { what: "agent input", expected: a.input_dim(), got: ui.len() });
            }
        }
        Ok(())
    }

    /// Vector field of the coupled system under inputs `u`.
    pub fn flow(&self, x: &[DVector<f64>], u: &[DVector<f64>]) -> Result<JointState, ModelError> {
        self.agents
            .iter()
            .enumerate()
            .map(|(i, a)| eval_dynamics(a.dynamics.as_ref(), i, x, &u[i]))
            .collect()
    }
}

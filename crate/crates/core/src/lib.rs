//! Collaborative control barrier functions (CCBFs) for dynamically coupled
//! multi-agent systems, a distributed auxiliary-variable QP solver, and an
//! altruistic safety filter based on Hamilton's rule.
//!
//! Agents are 0-based in this API. Error messages and the CLI use 1-based
//! agent numbers.

pub mod altruism;
pub mod barrier;
pub mod centralized;
pub mod consensus;
pub mod dynamics;
pub mod error;
pub mod model;
pub mod qp;
pub mod sim;
pub mod topology;

pub use barrier::{assemble_coefficients, eval_psi, CcbfCoefficients, ClassKGains, SafetySpec, VirtualController};
pub use dynamics::{AgentDynamics, FormationParams, JointState};
pub use error::{ModelError, QpError, SimError, SolveError};
pub use model::{AgentModel, MultiAgentSystem};
pub use topology::CouplingGraph;

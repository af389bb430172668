//! Formation scenarios: the two-agent example used throughout and seeded
//! random coupled instances.

use ccbf::centralized::{assemble_all, assemble_centralized, solve_filter};
use ccbf::consensus::{solve_local, ConsensusState};
use ccbf::dynamics::JointState;
use ccbf::{ClassKGains, CouplingGraph, FormationParams, MultiAgentSystem, SafetySpec, VirtualController};
use nalgebra::DVector;
use rand::Rng;

pub fn scalar(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

pub fn scalars(v: &[f64]) -> JointState {
    v.iter().map(|&e| scalar(e)).collect()
}

/// Two agents, complete graph, ξ = 2.5, desired positions ∓0.7, r = 0.5 and
/// all gains 10. `controlled`/`owners` pick which agents have an input and a
/// barrier.
pub fn pair(controller: VirtualController, controlled: [bool; 2], owners: [bool; 2]) -> MultiAgentSystem {
    let params = FormationParams::new(2.5, vec![-0.7, 0.7]).unwrap();
    let spec = SafetySpec::ball(0.5, ClassKGains::new(10.0, 10.0, 10.0).unwrap(), controller).unwrap();
    let safety = owners.iter().map(|&o| o.then(|| spec.clone())).collect();
    MultiAgentSystem::formation(CouplingGraph::complete(2).unwrap(), &params, &controlled, safety).unwrap()
}

pub fn pair_state() -> JointState {
    scalars(&[-0.3, 0.3])
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub system: MultiAgentSystem,
    pub x: JointState,
    pub u_nom: JointState,
    pub radii: Vec<Option<f64>>,
}

/// Random 1D formation with 2..=`max_agents` controlled agents, at least one
/// coupling edge between distinct agents and at least one barrier owner.
/// Owners start strictly inside their safe set.
pub fn random_formation(rng: &mut impl Rng, max_agents: usize) -> Instance {
    let n = rng.gen_range(2..=max_agents);
    let mut edges = Vec::new();
    while edges.is_empty() {
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.gen_bool(0.5) {
                    edges.push((i, j));
                }
            }
        }
    }
    let graph = CouplingGraph::new(n, edges).unwrap();
    let desired: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let params = FormationParams::new(rng.gen_range(0.5..3.0), desired).unwrap();
    let mut radii: Vec<Option<f64>> = (0..n).map(|_| rng.gen_bool(0.8).then(|| rng.gen_range(0.5..1.5))).collect();
    if radii.iter().all(Option::is_none) {
        radii[rng.gen_range(0..n)] = Some(rng.gen_range(0.5..1.5));
    }
    let safety = radii
        .iter()
        .map(|r| {
            r.map(|r| {
                let gains = ClassKGains::new(rng.gen_range(1.0..10.0), rng.gen_range(1.0..10.0), rng.gen_range(1.0..10.0)).unwrap();
                let controller = if rng.gen_bool(0.5) { VirtualController::Zero } else { VirtualController::half_sontag() };
                SafetySpec::ball(r, gains, controller).unwrap()
            })
        })
        .collect();
    let system = MultiAgentSystem::formation(graph, &params, &vec![true; n], safety).unwrap();
    let x = radii.iter().map(|r| scalar(rng.gen_range(-0.9..0.9) * r.unwrap_or(1.0))).collect();
    let u_nom = (0..n).map(|_| scalar(rng.gen_range(-2.0..2.0))).collect();
    Instance { system, x, u_nom, radii }
}

/// Whether the centralized filter is feasible and every local problem is
/// feasible with all auxiliary variables at zero.
pub fn distributed_feasible(inst: &Instance) -> bool {
    let Ok(qp) = assemble_centralized(&inst.system, &inst.x, &inst.u_nom) else { return false };
    if solve_filter(&inst.system, &qp, None).is_err() {
        return false;
    }
    let coeffs = assemble_all(&inst.system, &inst.x).unwrap();
    let mut cs = ConsensusState::new(&inst.system, 1.0, 0.01).unwrap();
    (0..inst.system.agent_count()).all(|i| solve_local(&inst.system, i, &coeffs, &inst.u_nom[i], &mut cs).is_ok())
}

/// Draws until [`distributed_feasible`] holds.
pub fn random_feasible_formation(rng: &mut impl Rng, max_agents: usize) -> Instance {
    loop {
        let inst = random_formation(rng, max_agents);
        if distributed_feasible(&inst) {
            return inst;
        }
    }
}

//! Time stepping, the two-timescale control loop and trace recording.
//!
//! Each control step assembles the constraint coefficients at the measured
//! state, runs the configured filter, holds the resulting input over the step
//! and integrates.

pub mod integrator;
mod trace;

use log::debug;
use nalgebra::DVector;

use crate::altruism::{run_altruistic_rounds, u_min_metric, SafetyWeights, DEFAULT_H_FLOOR};
use crate::barrier::{eval_psi, CcbfCoefficients};
use crate::centralized::{assemble_all, centralized_from, psi_row, solve_filter};
use crate::consensus::{run_rounds, ConsensusOutcome, solve_local_with, ConsensusState, RoundOptions, RoundRecord, DEFAULT_ELASTIC_PENALTY, DISAGREEMENT_TOL};
use crate::dynamics::JointState;
use crate::error::{SimError, SolveError};
use crate::model::MultiAgentSystem;
use crate::qp::WarmStart;

pub use integrator::{step_euler, step_rk4};
pub use trace::{check_forward_invariance, AgentInvariance, InvarianceReport, RoundRow, SimTrace, TraceRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    Rk4,
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Inputs stay at their nominal values.
    NoIntervention,
    /// Minimum-norm correction of the stacked input onto the single owner's
    /// `ψ ≥ 0` half-space.
    CcbfSingle,
    DistributedBase,
    DistributedAltruistic,
    Centralized,
}

impl Mode {
    pub fn is_distributed(self) -> bool {
        matches!(self, Mode::DistributedBase | Mode::DistributedAltruistic)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsensusConfig {
    pub k0: f64,
    pub inner_dt: f64,
    /// Round budget per control step.
    pub rounds: usize,
    pub tol: f64,
    /// Penalty of the elastic fallback for locally infeasible problems;
    /// `None` makes local infeasibility abort the run.
    pub elastic: Option<f64>,
}

impl ConsensusConfig {
    pub fn round_options(&self) -> RoundOptions {
        RoundOptions { rounds: self.rounds, tol: self.tol, elastic: self.elastic }
    }
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self { k0: 1.0, inner_dt: 0.01, rounds: 100, tol: DISAGREEMENT_TOL, elastic: Some(DEFAULT_ELASTIC_PENALTY) }
    }
}

/// Objective reference of the altruistic local problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AltruismReference {
    #[default]
    Nominal,
    /// The agent's plain local solution at the current `y`.
    Baseline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AltruismConfig {
    pub eta: Vec<f64>,
    pub h_floor: f64,
    pub reference: AltruismReference,
}

impl AltruismConfig {
    pub fn new(eta: Vec<f64>) -> Self {
        Self { eta, h_floor: DEFAULT_H_FLOOR, reference: AltruismReference::Nominal }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub horizon: f64,
    pub control_dt: f64,
    pub integrator: Integrator,
    pub mode: Mode,
    pub consensus: ConsensusConfig,
    pub altruism: Option<AltruismConfig>,
    /// Keep per-round diagnostics in [`SimTrace::rounds`].
    pub record_rounds: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            control_dt: 1e-3,
            integrator: Integrator::Rk4,
            mode: Mode::NoIntervention,
            consensus: ConsensusConfig::default(),
            altruism: None,
            record_rounds: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.control_dt > 0.0 && self.control_dt.is_finite()) {
            return Err(SimError::Config(format!("control_dt must be > 0, got {}", self.control_dt)));
        }
        if !(self.horizon >= self.control_dt && self.horizon.is_finite()) {
            return Err(SimError::Config(format!("horizon {} shorter than control_dt {}", self.horizon, self.control_dt)));
        }
        if self.mode.is_distributed() {
            let c = &self.consensus;
            if !(c.k0 > 0.0 && c.inner_dt > 0.0 && c.rounds >= 1 && c.tol >= 0.0) {
                return Err(SimError::Config(format!("consensus settings out of range: {c:?}")));
            }
        }
        if self.mode == Mode::DistributedAltruistic && self.altruism.is_none() {
            return Err(SimError::Config("altruistic mode needs eta weights".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.control_dt).round() as usize
    }
}

/// A model bundle with its initial state and constant nominal inputs.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub system: MultiAgentSystem,
    pub x0: JointState,
    pub u_nom: JointState,
}

struct Control {
    u: JointState,
    disagreement: Option<f64>,
    rounds: Option<usize>,
    slack: Option<f64>,
}

impl Control {
    fn plain(u: JointState) -> Self {
        Self { u, disagreement: None, rounds: None, slack: None }
    }

    fn distributed(out: ConsensusOutcome) -> Self {
        Self { u: out.u, disagreement: Some(out.disagreement), rounds: Some(out.rounds), slack: Some(out.slack) }
    }
}

struct Controller {
    cs: Option<ConsensusState>,
    warm: Option<WarmStart>,
}

fn at(time: f64) -> impl Fn(SolveError) -> SimError {
    move |source| SimError::Solve { time, source }
}

fn project_single(sys: &MultiAgentSystem, coeffs: &[Option<CcbfCoefficients>], u_nom: &[DVector<f64>]) -> Result<JointState, SolveError> {
    let owner = coeffs.iter().flatten().next().expect("checked before the run");
    let (row, offset) = psi_row(sys, owner);
    let mut u = sys.stack_inputs(u_nom);
    let value = row.dot(&u) + offset;
    if value < 0.0 {
        let norm2 = row.norm_squared();
        if norm2 < 1e-24 {
            return Err(SolveError::Infeasible { rows: vec![0] });
        }
        u -= &row * (value / norm2);
    }
    Ok(sys.split_inputs(&u))
}

fn control(
    cfg: &SimConfig,
    sc: &Scenario,
    ctl: &mut Controller,
    coeffs: &[Option<CcbfCoefficients>],
    t: f64,
    rounds_out: &mut Vec<RoundRow>,
) -> Result<Control, SolveError> {
    let sys = &sc.system;
    let record = |rows: &mut Vec<RoundRow>, r: &RoundRecord| {
        if cfg.record_rounds {
            rows.push(RoundRow { t, round: r.round, disagreement: r.disagreement, step: r.step.label(), slack: r.slack, u: sys.stack_inputs(&r.u).iter().copied().collect() });
        }
    };
    match cfg.mode {
        Mode::NoIntervention => Ok(Control::plain(sc.u_nom.clone())),
        Mode::CcbfSingle => Ok(Control::plain(project_single(sys, coeffs, &sc.u_nom)?)),
        Mode::Centralized => {
            let qp = centralized_from(sys, coeffs, &sc.u_nom)?;
            let (u, sol) = solve_filter(sys, &qp, ctl.warm.as_ref())?;
            ctl.warm = Some(sol.warm_start());
            Ok(Control::plain(u))
        }
        Mode::DistributedBase => {
            let cs = ctl.cs.as_mut().expect("consensus state initialized");
            let c = &cfg.consensus;
            let out = run_rounds(sys, coeffs, &sc.u_nom, cs, &c.round_options(), None, |r| record(rounds_out, r))?;
            Ok(Control::distributed(out))
        }
        Mode::DistributedAltruistic => {
            let alt = cfg.altruism.as_ref().expect("validated");
            let cs = ctl.cs.as_mut().expect("consensus state initialized");
            let w = SafetyWeights::at_state(&alt.eta, coeffs, alt.h_floor)?;
            let u_ref = match alt.reference {
                AltruismReference::Nominal => sc.u_nom.clone(),
                AltruismReference::Baseline => {
                    let mut probe = cs.clone();
                    (0..sys.agent_count()).map(|i| solve_local_with(sys, i, coeffs, &sc.u_nom[i], &mut probe, None, cfg.consensus.elastic).map(|s| s.u)).collect::<Result<_, _>>()?
                }
            };
            let c = &cfg.consensus;
            let out = run_altruistic_rounds(sys, coeffs, &u_ref, cs, &w, &c.round_options(), |r| record(rounds_out, r))?;
            Ok(Control::distributed(out))
        }
    }
}

fn u2_applicable(sys: &MultiAgentSystem) -> bool {
    sys.agent_count() == 2 && sys.agents[1].safety.is_some() && sys.agents[1].input_dim() == 1
}

pub fn run_scenario(cfg: &SimConfig, sc: &Scenario) -> Result<SimTrace, SimError> {
    cfg.validate()?;
    let sys = &sc.system;
    sys.check_state(&sc.x0)?;
    sys.check_inputs(&sc.u_nom)?;
    if cfg.mode == Mode::CcbfSingle && sys.owners().len() != 1 {
        return Err(SimError::Config(format!("single-constraint mode needs exactly one barrier owner, found {}", sys.owners().len())));
    }
    let cs = if cfg.mode.is_distributed() { Some(ConsensusState::new(sys, cfg.consensus.k0, cfg.consensus.inner_dt)?) } else { None };
    let mut ctl = Controller { cs, warm: None };
    let with_u2 = u2_applicable(sys);

    let steps = cfg.steps();
    let mut x = sc.x0.clone();
    let mut rows = Vec::with_capacity(steps + 1);
    let mut round_rows = Vec::new();
    for k in 0..=steps {
        let t = k as f64 * cfg.control_dt;
        let coeffs = assemble_all(sys, &x)?;
        let Control { u, disagreement, rounds, slack } = control(cfg, sc, &mut ctl, &coeffs, t, &mut round_rows).map_err(at(t))?;
        let psi = coeffs.iter().map(|c| c.as_ref().map(|c| eval_psi(c, &u)).transpose()).collect::<Result<Vec<_>, _>>()?;
        let u2_min = if with_u2 { coeffs[1].as_ref().and_then(|c| u_min_metric(c, &u).ok()) } else { None };
        rows.push(TraceRow {
            t,
            x: x.clone(),
            u: u.clone(),
            h: coeffs.iter().map(|c| c.as_ref().map(|c| c.h)).collect(),
            h_plus: coeffs.iter().map(|c| c.as_ref().map(|c| c.h_plus)).collect(),
            psi,
            disagreement,
            u2_min,
            rounds,
            slack,
        });
        if k == steps {
            break;
        }
        x = match cfg.integrator {
            Integrator::Rk4 => step_rk4(sys, &x, &u, cfg.control_dt)?,
            Integrator::Euler => step_euler(sys, &x, &u, cfg.control_dt)?,
        };
        if let Some(agent) = x.iter().position(|v| v.iter().any(|e| !e.is_finite())) {
            return Err(SimError::NonFinite { time: t + cfg.control_dt, agent: agent + 1 });
        }
    }
    debug!("{:?} run finished after {} steps", cfg.mode, steps);
    Ok(SimTrace { mode: cfg.mode, rows, rounds: round_rows })
}

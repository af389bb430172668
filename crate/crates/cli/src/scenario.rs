//! Scenario files: TOML text in a strict schema, validated in full before any
//! model is built.

use std::fmt;

use ccbf::sim::{AltruismConfig, AltruismReference, ConsensusConfig, Integrator, Mode, Scenario, SimConfig};
use ccbf::{ClassKGains, CouplingGraph, FormationParams, MultiAgentSystem, SafetySpec, VirtualController};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub name: String,
    pub graph: GraphSpec,
    pub dynamics: DynamicsSpec,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub sim: SimSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub edges: Edges,
}

/// `"complete"` or a list of 1-based `[i, j]` pairs meaning "agent j's state
/// enters agent i's drift". Self-loops are implied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Edges {
    Keyword(String),
    List(Vec<[i64; 2]>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSpec {
    pub xi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub x0: f64,
    pub desired: f64,
    #[serde(default = "yes")]
    pub controlled: bool,
    #[serde(default)]
    pub u_nom: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barrier: Option<BarrierSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierSpec {
    pub radius: f64,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub controller: ControllerKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    #[default]
    Zero,
    HalfSontag,
}

impl ControllerKind {
    pub const NAMES: [&'static str; 2] = ["zero", "half_sontag"];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "zero" => Some(Self::Zero),
            "half_sontag" => Some(Self::HalfSontag),
            _ => None,
        }
    }

    fn controller(self) -> VirtualController {
        match self {
            Self::Zero => VirtualController::Zero,
            Self::HalfSontag => VirtualController::half_sontag(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default = "default_k0")]
    pub k0: f64,
    #[serde(default = "default_inner_dt")]
    pub inner_dt: f64,
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "yes")]
    pub elastic: bool,
    #[serde(default = "default_penalty")]
    pub elastic_penalty: f64,
    #[serde(default)]
    pub altruism_reference: ReferenceKind,
    #[serde(default = "default_h_floor")]
    pub h_floor: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            k0: default_k0(),
            inner_dt: default_inner_dt(),
            rounds: default_rounds(),
            tol: default_tol(),
            elastic: true,
            elastic_penalty: default_penalty(),
            altruism_reference: ReferenceKind::Nominal,
            h_floor: default_h_floor(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    #[default]
    Nominal,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_control_dt")]
    pub control_dt: f64,
    #[serde(default)]
    pub mode: ModeKind,
    #[serde(default)]
    pub integrator: IntegratorKind,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self { horizon: default_horizon(), control_dt: default_control_dt(), mode: ModeKind::NoIntervention, integrator: IntegratorKind::Rk4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    #[default]
    NoIntervention,
    CcbfSingle,
    DistributedBase,
    DistributedAltruistic,
    Centralized,
}

impl ModeKind {
    pub const NAMES: [&'static str; 5] = ["no_intervention", "ccbf_single", "distributed_base", "distributed_altruistic", "centralized"];

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "no_intervention" => Self::NoIntervention,
            "ccbf_single" => Self::CcbfSingle,
            "distributed_base" => Self::DistributedBase,
            "distributed_altruistic" => Self::DistributedAltruistic,
            "centralized" => Self::Centralized,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::NoIntervention => "no_intervention",
            Self::CcbfSingle => "ccbf_single",
            Self::DistributedBase => "distributed_base",
            Self::DistributedAltruistic => "distributed_altruistic",
            Self::Centralized => "centralized",
        }
    }

    fn mode(self) -> Mode {
        match self {
            Self::NoIntervention => Mode::NoIntervention,
            Self::CcbfSingle => Mode::CcbfSingle,
            Self::DistributedBase => Mode::DistributedBase,
            Self::DistributedAltruistic => Mode::DistributedAltruistic,
            Self::Centralized => Mode::Centralized,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorKind {
    #[default]
    Rk4,
    Euler,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Output directory, relative to the working directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    /// Also write per-round consensus diagnostics.
    #[serde(default)]
    pub rounds: bool,
}

fn yes() -> bool {
    true
}
fn default_gamma() -> f64 {
    10.0
}
fn default_k0() -> f64 {
    1.0
}
fn default_inner_dt() -> f64 {
    0.01
}
fn default_rounds() -> u32 {
    100
}
fn default_tol() -> f64 {
    ccbf::consensus::DISAGREEMENT_TOL
}
fn default_penalty() -> f64 {
    ccbf::consensus::DEFAULT_ELASTIC_PENALTY
}
fn default_h_floor() -> f64 {
    ccbf::altruism::DEFAULT_H_FLOOR
}
fn default_horizon() -> f64 {
    1.0
}
fn default_control_dt() -> f64 {
    1e-3
}

/// One problem found in a scenario file. `line` is set for syntax errors,
/// `field` (a dotted path such as `agents[2].barrier.alpha`) for the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaError {
    pub line: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.line, &self.field) {
            (Some(l), _) => write!(f, "line {l}: {}", self.message),
            (None, Some(p)) => write!(f, "{p}: {}", self.message),
            (None, None) => write!(f, "{}", self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("parse error: {}", join(.0))]
    Parse(Vec<SchemaError>),
    #[error("validation failed: {}", join(.0))]
    Validation(Vec<SchemaError>),
}

impl ScenarioError {
    pub fn errors(&self) -> &[SchemaError] {
        match self {
            Self::Parse(e) | Self::Validation(e) => e,
        }
    }
}

fn join(errors: &[SchemaError]) -> String {
    errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

fn at(field: impl Into<String>, message: impl Into<String>) -> SchemaError {
    SchemaError { line: None, field: Some(field.into()), message: message.into() }
}

#[derive(Clone, Copy)]
enum Kind {
    Int,
    Float,
    Bool,
    Str(&'static [&'static str]),
    Edges,
    Table(&'static [Key]),
    Tables(&'static [Key]),
}

#[derive(Clone, Copy)]
struct Key {
    name: &'static str,
    kind: Kind,
    required: bool,
}

const fn req(name: &'static str, kind: Kind) -> Key {
    Key { name, kind, required: true }
}

const fn opt(name: &'static str, kind: Kind) -> Key {
    Key { name, kind, required: false }
}

const BARRIER: &[Key] = &[
    req("radius", Kind::Float),
    req("alpha", Kind::Float),
    req("beta", Kind::Float),
    opt("gamma", Kind::Float),
    opt("controller", Kind::Str(&ControllerKind::NAMES)),
];

const AGENT: &[Key] = &[
    req("x0", Kind::Float),
    req("desired", Kind::Float),
    opt("controlled", Kind::Bool),
    opt("u_nom", Kind::Float),
    opt("eta", Kind::Float),
    opt("barrier", Kind::Table(BARRIER)),
];

const ROOT: &[Key] = &[
    req("schema_version", Kind::Int),
    req("name", Kind::Str(&[])),
    req("graph", Kind::Table(&[req("edges", Kind::Edges)])),
    req("dynamics", Kind::Table(&[req("xi", Kind::Float)])),
    req("agents", Kind::Tables(AGENT)),
    opt(
        "solver",
        Kind::Table(&[
            opt("k0", Kind::Float),
            opt("inner_dt", Kind::Float),
            opt("rounds", Kind::Int),
            opt("tol", Kind::Float),
            opt("elastic", Kind::Bool),
            opt("elastic_penalty", Kind::Float),
            opt("altruism_reference", Kind::Str(&["nominal", "baseline"])),
            opt("h_floor", Kind::Float),
        ]),
    ),
    opt(
        "sim",
        Kind::Table(&[
            opt("horizon", Kind::Float),
            opt("control_dt", Kind::Float),
            opt("mode", Kind::Str(&ModeKind::NAMES)),
            opt("integrator", Kind::Str(&["rk4", "euler"])),
        ]),
    ),
    opt("output", Kind::Table(&[opt("dir", Kind::Str(&[])), opt("rounds", Kind::Bool)])),
];

fn check_table(table: &Table, keys: &[Key], path: &str, errors: &mut Vec<SchemaError>) {
    let join_path = |k: &str| if path.is_empty() { k.to_string() } else { format!("{path}.{k}") };
    for (name, _) in table.iter().filter(|(name, _)| !keys.iter().any(|k| k.name == name.as_str())) {
        errors.push(at(join_path(name), "unknown key"));
    }
    for key in keys {
        match table.get(key.name) {
            Some(v) => check_value(v, key.kind, &join_path(key.name), errors),
            None if key.required => errors.push(at(join_path(key.name), "missing required key")),
            None => {}
        }
    }
}

fn check_value(v: &Value, kind: Kind, path: &str, errors: &mut Vec<SchemaError>) {
    let wrong = |errors: &mut Vec<SchemaError>, want: &str| errors.push(at(path, format!("expected {want}, found {}", v.type_str())));
    match kind {
        Kind::Int if !v.is_integer() => wrong(errors, "an integer"),
        Kind::Float if !(v.is_float() || v.is_integer()) => wrong(errors, "a number"),
        Kind::Bool if !v.is_bool() => wrong(errors, "a boolean"),
        Kind::Str(allowed) => match v.as_str() {
            None => wrong(errors, "a string"),
            Some(s) if !allowed.is_empty() && !allowed.contains(&s) => errors.push(at(path, format!("unknown value {s:?}; expected one of {allowed:?}"))),
            Some(_) => {}
        },
        Kind::Edges => match v {
            Value::String(s) if s == "complete" => {}
            Value::String(s) => errors.push(at(path, format!("unknown keyword {s:?}; expected \"complete\" or a list of [i, j] pairs"))),
            Value::Array(items) => {
                for (k, item) in items.iter().enumerate() {
                    let ok = item.as_array().is_some_and(|p| p.len() == 2 && p.iter().all(Value::is_integer));
                    if !ok {
                        errors.push(at(format!("{path}[{}]", k + 1), "expected a pair of integers [i, j]"));
                    }
                }
            }
            _ => wrong(errors, "\"complete\" or a list of [i, j] pairs"),
        },
        Kind::Table(keys) => match v.as_table() {
            Some(t) => check_table(t, keys, path, errors),
            None => wrong(errors, "a table"),
        },
        Kind::Tables(keys) => match v.as_array() {
            Some(items) => {
                for (k, item) in items.iter().enumerate() {
                    let p = format!("{path}[{}]", k + 1);
                    match item.as_table() {
                        Some(t) => check_table(t, keys, &p, errors),
                        None => errors.push(at(p, format!("expected a table, found {}", item.type_str()))),
                    }
                }
            }
            None => wrong(errors, "an array of tables"),
        },
        _ => {}
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses and validates a scenario, reporting every problem found rather
/// than only the first.
pub fn parse_scenario(text: &str) -> Result<ScenarioFile, ScenarioError> {
    if text.trim().is_empty() {
        return Err(ScenarioError::Parse(vec![SchemaError { line: Some(1), field: None, message: "empty scenario file".into() }]));
    }
    let table: Table = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_of(text, s.start));
        ScenarioError::Parse(vec![SchemaError { line, field: None, message: e.message().to_string() }])
    })?;
    let mut errors = Vec::new();
    check_table(&table, ROOT, "", &mut errors);
    if !errors.is_empty() {
        return Err(ScenarioError::Validation(errors));
    }
    let file: ScenarioFile = Value::Table(table).try_into().map_err(|e: toml::de::Error| ScenarioError::Validation(vec![at("", e.message())]))?;
    let errors = file.validate();
    if errors.is_empty() {
        Ok(file)
    } else {
        Err(ScenarioError::Validation(errors))
    }
}

impl ScenarioFile {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario types serialize")
    }

    /// Every range and consistency check; empty when the file is usable.
    pub fn validate(&self) -> Vec<SchemaError> {
        let mut e = Vec::new();
        let n = self.agents.len();
        let positive = |e: &mut Vec<SchemaError>, path: String, v: f64| {
            if !(v > 0.0 && v.is_finite()) {
                e.push(at(path, format!("must be > 0, got {v}")));
            }
        };
        let finite = |e: &mut Vec<SchemaError>, path: String, v: f64| {
            if !v.is_finite() {
                e.push(at(path, format!("must be finite, got {v}")));
            }
        };
        if self.schema_version != SCHEMA_VERSION {
            e.push(at("schema_version", format!("unsupported version {}; expected {SCHEMA_VERSION}", self.schema_version)));
        }
        if self.name.trim().is_empty() {
            e.push(at("name", "must not be empty"));
        }
        if n == 0 {
            e.push(at("agents", "at least one agent is required"));
        }
        match &self.graph.edges {
            Edges::Keyword(k) if k != "complete" => e.push(at("graph.edges", format!("unknown keyword {k:?}"))),
            Edges::Keyword(_) => {}
            Edges::List(pairs) => {
                for (k, &[i, j]) in pairs.iter().enumerate() {
                    for v in [i, j] {
                        if v < 1 || v as usize > n {
                            e.push(at(format!("graph.edges[{}]", k + 1), format!("agent {v} does not exist (agents are 1..={n})")));
                        }
                    }
                    if pairs[..k].contains(&[i, j]) {
                        e.push(at(format!("graph.edges[{}]", k + 1), format!("duplicate edge [{i}, {j}]")));
                    }
                }
            }
        }
        positive(&mut e, "dynamics.xi".into(), self.dynamics.xi);
        for (k, a) in self.agents.iter().enumerate() {
            let p = format!("agents[{}]", k + 1);
            finite(&mut e, format!("{p}.x0"), a.x0);
            finite(&mut e, format!("{p}.desired"), a.desired);
            finite(&mut e, format!("{p}.u_nom"), a.u_nom);
            if !a.controlled && a.u_nom != 0.0 {
                e.push(at(format!("{p}.u_nom"), "an uncontrolled agent has no input"));
            }
            if let Some(eta) = a.eta {
                if !(eta >= 0.0 && eta.is_finite()) {
                    e.push(at(format!("{p}.eta"), format!("must be >= 0, got {eta}")));
                }
            }
            if let Some(b) = &a.barrier {
                positive(&mut e, format!("{p}.barrier.radius"), b.radius);
                positive(&mut e, format!("{p}.barrier.alpha"), b.alpha);
                positive(&mut e, format!("{p}.barrier.beta"), b.beta);
                if !(b.gamma >= 0.0 && b.gamma.is_finite()) {
                    e.push(at(format!("{p}.barrier.gamma"), format!("must be >= 0, got {}", b.gamma)));
                }
            }
        }
        let s = &self.solver;
        positive(&mut e, "solver.k0".into(), s.k0);
        positive(&mut e, "solver.inner_dt".into(), s.inner_dt);
        if s.rounds == 0 {
            e.push(at("solver.rounds", "must be >= 1"));
        }
        if !(s.tol >= 0.0 && s.tol.is_finite()) {
            e.push(at("solver.tol", format!("must be >= 0, got {}", s.tol)));
        }
        positive(&mut e, "solver.elastic_penalty".into(), s.elastic_penalty);
        positive(&mut e, "solver.h_floor".into(), s.h_floor);
        positive(&mut e, "sim.control_dt".into(), self.sim.control_dt);
        if !(self.sim.horizon >= self.sim.control_dt && self.sim.horizon.is_finite()) {
            e.push(at("sim.horizon", format!("must be finite and >= control_dt, got {}", self.sim.horizon)));
        }
        let owners = self.agents.iter().filter(|a| a.barrier.is_some()).count();
        match self.sim.mode {
            ModeKind::CcbfSingle if owners != 1 => e.push(at("sim.mode", format!("ccbf_single needs exactly one agent with a barrier, found {owners}"))),
            ModeKind::DistributedAltruistic => {
                for (k, a) in self.agents.iter().enumerate() {
                    if a.eta.is_none() {
                        e.push(at(format!("agents[{}].eta", k + 1), "required in distributed_altruistic mode"));
                    }
                }
            }
            _ => {}
        }
        if self.sim.mode != ModeKind::NoIntervention && owners == 0 {
            e.push(at("agents", "no agent has a barrier, so there is nothing to filter"));
        }
        e
    }

    /// Replaces every barrier's virtual controller.
    pub fn set_controller(&mut self, kind: ControllerKind) {
        for b in self.agents.iter_mut().filter_map(|a| a.barrier.as_mut()) {
            b.controller = kind;
        }
    }

    pub fn graph(&self) -> Result<CouplingGraph, ccbf::ModelError> {
        match &self.graph.edges {
            Edges::Keyword(_) => CouplingGraph::complete(self.agents.len()),
            Edges::List(pairs) => {
                let pairs: Vec<(usize, usize)> = pairs.iter().map(|&[i, j]| (i as usize, j as usize)).collect();
                CouplingGraph::from_one_based(self.agents.len(), &pairs)
            }
        }
    }

    /// Model bundle and simulation settings. Call on validated files only.
    pub fn build(&self) -> Result<(SimConfig, Scenario), ccbf::ModelError> {
        let graph = self.graph()?;
        let params = FormationParams::new(self.dynamics.xi, self.agents.iter().map(|a| a.desired).collect())?;
        let controlled: Vec<bool> = self.agents.iter().map(|a| a.controlled).collect();
        let safety = self
            .agents
            .iter()
            .map(|a| {
                a.barrier
                    .as_ref()
                    .map(|b| SafetySpec::ball(b.radius, ClassKGains::new(b.alpha, b.beta, b.gamma)?, b.controller.controller()))
                    .transpose()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let system = MultiAgentSystem::formation(graph, &params, &controlled, safety)?;
        let x0 = self.agents.iter().map(|a| DVector::from_element(1, a.x0)).collect();
        let u_nom = self.agents.iter().map(|a| if a.controlled { DVector::from_element(1, a.u_nom) } else { DVector::zeros(0) }).collect();

        let s = &self.solver;
        let consensus = ConsensusConfig {
            k0: s.k0,
            inner_dt: s.inner_dt,
            rounds: s.rounds as usize,
            tol: s.tol,
            elastic: s.elastic.then_some(s.elastic_penalty),
        };
        let altruism = (self.sim.mode == ModeKind::DistributedAltruistic).then(|| AltruismConfig {
            eta: self.agents.iter().map(|a| a.eta.unwrap_or(0.0)).collect(),
            h_floor: s.h_floor,
            reference: match s.altruism_reference {
                ReferenceKind::Nominal => AltruismReference::Nominal,
                ReferenceKind::Baseline => AltruismReference::Baseline,
            },
        });
        let cfg = SimConfig {
            horizon: self.sim.horizon,
            control_dt: self.sim.control_dt,
            integrator: match self.sim.integrator {
                IntegratorKind::Rk4 => Integrator::Rk4,
                IntegratorKind::Euler => Integrator::Euler,
            },
            mode: self.sim.mode.mode(),
            consensus,
            altruism,
            record_rounds: self.output.rounds,
        };
        Ok((cfg, Scenario { system, x0, u_nom }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
name = "pair"

[graph]
edges = "complete"

[dynamics]
xi = 2.5

[[agents]]
x0 = -0.3
desired = -0.7

[[agents]]
x0 = 0.3
desired = 0.7
barrier = { radius = 0.5, alpha = 10, beta = 10 }

[sim]
mode = "centralized"
"#;

    fn fields(err: ScenarioError) -> Vec<String> {
        err.errors().iter().filter_map(|e| e.field.clone()).collect()
    }

    #[test]
    fn minimal_file_gets_defaults() {
        let f = parse_scenario(MINIMAL).unwrap();
        assert_eq!(f.solver, SolverSpec::default());
        assert!(f.agents[0].controlled);
        assert_eq!(f.agents[1].barrier.as_ref().unwrap().gamma, 10.0);
        assert_eq!(f.agents[1].barrier.as_ref().unwrap().controller, ControllerKind::Zero);
    }

    #[test]
    fn round_trip() {
        let mut f = parse_scenario(MINIMAL).unwrap();
        f.agents[0].eta = Some(1.0);
        f.graph.edges = Edges::List(vec![[1, 2], [2, 1]]);
        f.output.dir = Some("out/x".into());
        let again = parse_scenario(&f.to_toml()).unwrap();
        assert_eq!(again, f);
    }

    #[test]
    fn empty_file_is_a_parse_error() {
        assert!(matches!(parse_scenario(""), Err(ScenarioError::Parse(_))));
        assert!(matches!(parse_scenario("  \n"), Err(ScenarioError::Parse(_))));
    }

    #[test]
    fn syntax_error_reports_line() {
        let err = parse_scenario("schema_version = 1\nname = \"x\"\nxi = = 3\n").unwrap_err();
        assert!(matches!(err, ScenarioError::Parse(_)));
        assert_eq!(err.errors()[0].line, Some(3));
    }

    #[test]
    fn negative_xi_names_the_field() {
        let err = parse_scenario(&MINIMAL.replace("xi = 2.5", "xi = -2.5")).unwrap_err();
        assert!(matches!(err, ScenarioError::Validation(_)));
        assert_eq!(fields(err), ["dynamics.xi"]);
    }

    #[test]
    fn collects_every_problem() {
        let text = MINIMAL
            .replace("xi = 2.5", "xi = -1\nspeed = 3")
            .replace("alpha = 10", "alpha = -1")
            .replace("mode = \"centralized\"", "mode = \"fastest\"");
        let got = fields(parse_scenario(&text).unwrap_err());
        assert!(got.contains(&"dynamics.speed".to_string()), "{got:?}");
        assert!(got.contains(&"sim.mode".to_string()), "{got:?}");

        let text = MINIMAL.replace("xi = 2.5", "xi = -1").replace("alpha = 10", "alpha = -1").replace("beta = 10", "beta = 0");
        let got = fields(parse_scenario(&text).unwrap_err());
        assert_eq!(got, ["dynamics.xi", "agents[2].barrier.alpha", "agents[2].barrier.beta"]);
    }

    #[test]
    fn unknown_and_missing_keys() {
        let got = fields(parse_scenario(&MINIMAL.replace("desired = -0.7", "wanted = -0.7")).unwrap_err());
        assert_eq!(got, ["agents[1].wanted", "agents[1].desired"]);
    }

    #[test]
    fn edges_must_reference_agents() {
        let text = MINIMAL.replace("edges = \"complete\"", "edges = [[1, 2], [2, 3], [1, 2]]");
        let got = fields(parse_scenario(&text).unwrap_err());
        assert_eq!(got, ["graph.edges[2]", "graph.edges[3]"]);
    }

    #[test]
    fn mode_specific_checks() {
        let text = MINIMAL.replace("mode = \"centralized\"", "mode = \"distributed_altruistic\"");
        assert_eq!(fields(parse_scenario(&text).unwrap_err()), ["agents[1].eta", "agents[2].eta"]);
        let text = MINIMAL.replace("x0 = -0.3\ndesired = -0.7", "x0 = -0.3\ndesired = -0.7\nbarrier = { radius = 0.5, alpha = 10, beta = 10 }");
        let text = text.replace("mode = \"centralized\"", "mode = \"ccbf_single\"");
        assert_eq!(fields(parse_scenario(&text).unwrap_err()), ["sim.mode"]);
    }

    #[test]
    fn builds_the_model() {
        let (cfg, sc) = parse_scenario(MINIMAL).unwrap().build().unwrap();
        assert_eq!(cfg.mode, Mode::Centralized);
        assert_eq!(sc.system.owners(), [1]);
        assert_eq!(sc.system.graph.in_neighbors(0).unwrap(), [0, 1]);
        assert_eq!(sc.x0[1][0], 0.3);
    }
}

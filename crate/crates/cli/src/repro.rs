//! The three bundled scenarios, their run variants and the assertions checked
//! on the resulting traces.

use std::path::Path;

use ccbf::sim::{check_forward_invariance, run_scenario, SimTrace};
use serde::Serialize;

use crate::output::{self, VIOLATION_TOL};
use crate::parallel::run_parallel;
use crate::scenario::{parse_scenario, ControllerKind, ModeKind, ScenarioError, ScenarioFile};
use crate::CliError;

pub const FIG1: &str = include_str!("../../../scenarios/fig1.scenario");
pub const FIG2: &str = include_str!("../../../scenarios/fig2.scenario");
pub const FIG3: &str = include_str!("../../../scenarios/fig3.scenario");

/// Slack of the every-step comparison of the altruistic and baseline runs.
pub const U2_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assertion {
    pub figure: String,
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Assertion {
    fn new(figure: &str, name: &str, pass: bool, detail: String) -> Self {
        Self { figure: figure.into(), name: name.into(), pass, detail }
    }

    pub fn line(&self) -> String {
        format!("{} {} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.figure, self.name, self.detail)
    }
}

/// A scenario file with one override applied.
#[derive(Debug, Clone)]
pub struct Variant {
    pub figure: &'static str,
    pub label: &'static str,
    pub file: ScenarioFile,
}

pub struct Bundle {
    pub fig1: ScenarioFile,
    pub fig2: ScenarioFile,
    pub fig3: ScenarioFile,
}

impl Bundle {
    /// The scenario files compiled into the binary.
    pub fn builtin() -> Self {
        let parse = |t: &str| parse_scenario(t).expect("bundled scenarios are valid");
        Self { fig1: parse(FIG1), fig2: parse(FIG2), fig3: parse(FIG3) }
    }

    /// `fig1.scenario`, `fig2.scenario` and `fig3.scenario` from `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, CliError> {
        let load = |name: &str| -> Result<ScenarioFile, CliError> {
            let path = dir.join(name);
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            parse_scenario(&text).map_err(|e| CliError::scenario(&path, e))
        };
        Ok(Self { fig1: load("fig1.scenario")?, fig2: load("fig2.scenario")?, fig3: load("fig3.scenario")? })
    }

    pub fn variants(&self) -> Vec<Variant> {
        let with_mode = |f: &ScenarioFile, mode| {
            let mut f = f.clone();
            f.sim.mode = mode;
            f
        };
        let with_controller = |f: &ScenarioFile, kind| {
            let mut f = f.clone();
            f.set_controller(kind);
            f
        };
        vec![
            Variant { figure: "fig1", label: "ccbf", file: with_mode(&self.fig1, ModeKind::CcbfSingle) },
            Variant { figure: "fig1", label: "no_intervention", file: with_mode(&self.fig1, ModeKind::NoIntervention) },
            Variant { figure: "fig2", label: "zero", file: with_controller(&self.fig2, ControllerKind::Zero) },
            Variant { figure: "fig2", label: "half_sontag", file: with_controller(&self.fig2, ControllerKind::HalfSontag) },
            Variant { figure: "fig3", label: "baseline", file: with_mode(&self.fig3, ModeKind::DistributedBase) },
            Variant { figure: "fig3", label: "altruistic", file: with_mode(&self.fig3, ModeKind::DistributedAltruistic) },
        ]
    }
}

pub fn simulate(file: &ScenarioFile) -> Result<SimTrace, CliError> {
    let errors = file.validate();
    if !errors.is_empty() {
        return Err(CliError::scenario(Path::new(&file.name), ScenarioError::Validation(errors)));
    }
    let (cfg, sc) = file.build().map_err(|e| CliError::Validation(e.to_string()))?;
    run_scenario(&cfg, &sc).map_err(CliError::from)
}

fn min_h(trace: &SimTrace) -> f64 {
    (0..trace.agent_count()).filter_map(|i| trace.min_h(i)).fold(f64::INFINITY, f64::min)
}

/// Smallest `r − |x_i(T)|` over the barrier owners.
pub fn boundary_gap(file: &ScenarioFile, trace: &SimTrace) -> f64 {
    let last = trace.rows.last().expect("nonempty trace");
    file.agents.iter().enumerate().filter_map(|(i, a)| a.barrier.as_ref().map(|b| b.radius - last.x[i][0].abs())).fold(f64::INFINITY, f64::min)
}

fn safe(figure: &str, label: &str, trace: &SimTrace) -> Assertion {
    let m = min_h(trace);
    Assertion::new(figure, &format!("{label}_safe"), m >= -VIOLATION_TOL, format!("min h = {m:.6e}"))
}

/// The single-constraint run stays inside and the uncontrolled run leaves.
pub fn fig1(file: &ScenarioFile, enforced: &SimTrace, free: &SimTrace) -> Vec<Assertion> {
    let owner = file.agents.iter().position(|a| a.barrier.is_some()).expect("validated: one owner");
    let radius = file.agents[owner].barrier.as_ref().unwrap().radius;
    let report = check_forward_invariance(enforced, VIOLATION_TOL);
    let inv = report.agent(owner).expect("owner has a barrier");
    let max_x = enforced.max_state(owner, 0);
    let violation = check_forward_invariance(free, VIOLATION_TOL).agent(owner).and_then(|a| a.first_violation);
    let leaves = free.rows.iter().find(|r| r.x[owner][0].abs() > radius).map(|r| r.t);
    vec![
        Assertion::new(
            "fig1",
            "ccbf_safe",
            inv.min_h >= -VIOLATION_TOL && max_x <= radius + VIOLATION_TOL,
            format!("min h_{} = {:.6e}, max x_{} = {max_x:.6}", owner + 1, inv.min_h, owner + 1),
        ),
        Assertion::new(
            "fig1",
            "no_intervention_violates",
            violation.is_some_and(f64::is_finite) && leaves.is_some(),
            format!("first h_{} < -{VIOLATION_TOL:e} at t = {violation:?}, first |x| > r at t = {leaves:?}", owner + 1),
        ),
    ]
}

/// Both controller choices stay safe and the zero controller leaves the
/// larger gap to the boundary.
pub fn fig2(zero_file: &ScenarioFile, zero: &SimTrace, sontag_file: &ScenarioFile, sontag: &SimTrace) -> Vec<Assertion> {
    let (gz, gs) = (boundary_gap(zero_file, zero), boundary_gap(sontag_file, sontag));
    vec![
        safe("fig2", "zero", zero),
        safe("fig2", "half_sontag", sontag),
        Assertion::new("fig2", "zero_more_conservative", gz >= gs + 1e-3, format!("final gap {gz:.6e} (zero) vs {gs:.6e} (half-Sontag)")),
    ]
}

/// `u₂^min` of the altruistic run minus that of the baseline run, per step.
pub fn u2_difference(base: &SimTrace, alt: &SimTrace) -> Vec<f64> {
    base.u2_min_series().iter().zip(alt.u2_min_series()).map(|(b, a)| a.expect("u2_min recorded").value - b.expect("u2_min recorded").value).collect()
}

pub fn fig3(base: &SimTrace, alt: &SimTrace) -> Vec<Assertion> {
    let diff = u2_difference(base, alt);
    let n = diff.len();
    let above: Vec<usize> = (0..n).filter(|&k| diff[k] > U2_SLACK).collect();
    let worst = diff.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let middle = &diff[n / 3..2 * n / 3];
    let deepest = middle.iter().copied().fold(f64::INFINITY, f64::min);
    let dt = base.rows.get(1).map_or(0.0, |r| r.t);
    let span = match (above.first(), above.last()) {
        (Some(&a), Some(&b)) => format!(", above at {} steps in t ∈ [{:.3}, {:.3}]", above.len(), a as f64 * dt, b as f64 * dt),
        _ => String::new(),
    };
    vec![
        safe("fig3", "baseline", base),
        safe("fig3", "altruistic", alt),
        Assertion::new("fig3", "u2_min_never_above_baseline", above.is_empty(), format!("max(alt − base) = {worst:.6e}{span}")),
        Assertion::new("fig3", "u2_min_below_baseline_mid_run", deepest < -U2_SLACK, format!("min(alt − base) over the middle third = {deepest:.6e}")),
    ]
}

pub struct ReproOutcome {
    pub assertions: Vec<Assertion>,
    pub traces: Vec<(Variant, SimTrace)>,
}

/// Runs every variant, at most `threads` at a time, and checks all assertions.
pub fn repro_all(bundle: &Bundle, threads: usize) -> Result<ReproOutcome, CliError> {
    let variants = bundle.variants();
    let traces: Vec<SimTrace> = run_parallel(variants.iter().collect(), threads, |v| simulate(&v.file)).into_iter().collect::<Result<_, _>>()?;
    let mut assertions = fig1(&variants[0].file, &traces[0], &traces[1]);
    assertions.extend(fig2(&variants[2].file, &traces[2], &variants[3].file, &traces[3]));
    assertions.extend(fig3(&traces[4], &traces[5]));
    Ok(ReproOutcome { assertions, traces: variants.into_iter().zip(traces).collect() })
}

/// Writes each run under `out/<figure>/<label>/`, the fig3 difference series
/// and `repro.json`.
pub fn write_repro(out: &Path, outcome: &ReproOutcome) -> Result<(), CliError> {
    for (v, trace) in &outcome.traces {
        let dir = out.join(v.figure).join(v.label);
        output::write_run(&dir, &v.file, trace).map_err(|e| CliError::io(&dir, e))?;
    }
    let base = &outcome.traces[4].1;
    let alt = &outcome.traces[5].1;
    let path = out.join("fig3").join("u2_min_diff.csv");
    let mut text = String::from("t,u2_min_baseline,u2_min_altruistic,diff\n");
    for ((row, b), a) in base.rows.iter().zip(base.u2_min_series()).zip(alt.u2_min_series()) {
        let (b, a) = (b.expect("u2_min recorded").value, a.expect("u2_min recorded").value);
        text += &format!("{},{b},{a},{}\n", row.t, a - b);
    }
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    let path = out.join("repro.json");
    let json = serde_json::to_string_pretty(&outcome.assertions).expect("assertions serialize");
    std::fs::write(&path, json + "\n").map_err(|e| CliError::io(&path, e))
}

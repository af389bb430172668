//! Scenario runner for the collaborative barrier filters: strict TOML
//! scenario files, trace and plot-data output, run comparison, property
//! verification and the bundled figure scenarios.
//!
//! Exit codes: 0 success, 1 usage, 2 validation, 3 failure at run time
//! (infeasible or non-finite), 4 a checked property failed. Failures also
//! print one JSON object on stderr.

pub mod output;
pub mod parallel;
pub mod repro;
pub mod scenario;
pub mod verify;

use std::path::{Path, PathBuf};

use ccbf::{ModelError, SimError, SolveError};
use clap::{Parser, Subcommand};
use log::info;
use serde_json::json;

use crate::repro::{Assertion, Bundle};
use crate::scenario::{parse_scenario, ControllerKind, ModeKind, ScenarioError, ScenarioFile};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Scenario { path: PathBuf, source: ScenarioError },
    #[error("{0}")]
    Runtime(String),
    #[error("{} propert{} failed: {}", .0.len(), if .0.len() == 1 { "y" } else { "ies" }, .0.join(", "))]
    Property(Vec<String>),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::Usage(format!("{}: {e}", path.display()))
    }

    pub fn scenario(path: &Path, source: ScenarioError) -> Self {
        Self::Scenario { path: path.to_path_buf(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Validation(_) | Self::Scenario { .. } => 2,
            Self::Runtime(_) => 3,
            Self::Property(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Self::Usage(_) => "usage",
            Self::Scenario { source: ScenarioError::Parse(_), .. } => "parse",
            Self::Validation(_) | Self::Scenario { .. } => "validation",
            Self::Runtime(_) => "runtime",
            Self::Property(_) => "property",
        }
    }

    /// The machine-readable error line.
    pub fn json_line(&self) -> String {
        let mut v = json!({ "error": self.kind(), "exit_code": self.exit_code(), "message": self.to_string() });
        match self {
            Self::Scenario { source, .. } => {
                v["errors"] = source.errors().iter().map(|e| json!({ "line": e.line, "field": e.field, "message": e.message })).collect();
            }
            Self::Property(names) => v["failed"] = json!(names),
            _ => {}
        }
        v.to_string()
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Model(_) | SimError::Config(_) => Self::Validation(e.to_string()),
            SimError::Solve { .. } | SimError::NonFinite { .. } => Self::Runtime(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        Self::Validation(e.to_string())
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        Self::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "ccbf-sim", version, about = "Collaborative and altruistic CBF safety filter simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and write its trace, summary and plot manifest.
    Run {
        scenario: PathBuf,
        /// Output directory; overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override `sim.mode`.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<ModeKind>,
        /// Override every barrier's virtual controller.
        #[arg(long, value_parser = parse_controller)]
        controller: Option<ControllerKind>,
        /// Also write per-round consensus diagnostics.
        #[arg(long)]
        rounds: bool,
    },
    /// Difference `B − A` of one trace column between two runs.
    Compare {
        /// Run directory or trace CSV.
        run_a: PathBuf,
        run_b: PathBuf,
        #[arg(long, default_value = "u2_min")]
        metric: String,
        /// Where to write the difference series (default `<run_b>/<metric>_diff.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fail (exit 4) if any difference exceeds this.
        #[arg(long)]
        max: Option<f64>,
    },
    /// Run a scenario and check invariance, the coefficient oracle, filter
    /// feasibility, KKT certificates and determinism.
    Verify { scenario: PathBuf },
    /// Run the three bundled figure scenarios and check their assertions.
    ReproAll {
        #[arg(long, default_value = "out/repro")]
        out: PathBuf,
        /// Read fig1/fig2/fig3.scenario from here instead of the built-in copies.
        #[arg(long)]
        scenarios: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<ModeKind, String> {
    ModeKind::parse(s).ok_or_else(|| format!("expected one of {:?}", ModeKind::NAMES))
}

fn parse_controller(s: &str) -> Result<ControllerKind, String> {
    ControllerKind::parse(s).ok_or_else(|| format!("expected one of {:?}", ControllerKind::NAMES))
}

pub fn load_scenario(path: &Path) -> Result<ScenarioFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_scenario(&text).map_err(|e| CliError::scenario(path, e))
}

fn revalidate(path: &Path, file: &ScenarioFile) -> Result<(), CliError> {
    let errors = file.validate();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(CliError::scenario(path, ScenarioError::Validation(errors)))
    }
}

fn property_result(assertions: &[Assertion]) -> Result<(), CliError> {
    let failed: Vec<String> = assertions.iter().filter(|a| !a.pass).map(|a| format!("{} {}", a.figure, a.name)).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Property(failed))
    }
}

fn trace_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(output::TRACE_FILE)
    } else {
        p.to_path_buf()
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { scenario, out, mode, controller, rounds } => {
            let mut file = load_scenario(&scenario)?;
            if let Some(m) = mode {
                file.sim.mode = m;
            }
            if let Some(c) = controller {
                file.set_controller(c);
            }
            file.output.rounds |= rounds;
            revalidate(&scenario, &file)?;
            let trace = repro::simulate(&file)?;
            let dir = out.or_else(|| file.output.dir.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out").join(&file.name));
            let written = output::write_run(&dir, &file, &trace).map_err(|e| CliError::io(&dir, e))?;
            let summary = output::Summary::new(&file, &trace);
            println!("{} ({}): {} steps, safe = {}", summary.scenario, summary.mode, summary.steps, summary.safe);
            for a in summary.agents.iter().filter(|a| a.min_h.is_some()) {
                println!("min h_{} = {:.6e}", a.agent, a.min_h.unwrap());
            }
            for p in written {
                info!("wrote {}", p.display());
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Compare { run_a, run_b, metric, out, max } => {
            let read = |p: &Path| -> Result<output::Series, CliError> {
                let path = trace_path(p);
                let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
                output::read_series(&text, &metric).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
            };
            let (a, b) = (read(&run_a)?, read(&run_b)?);
            let diff = output::difference(&a, &b).map_err(CliError::Validation)?;
            let path = out.unwrap_or_else(|| if run_b.is_dir() { run_b.join(format!("{metric}_diff.csv")) } else { PathBuf::from(format!("{metric}_diff.csv")) });
            output::write_difference(&path, &metric, &a, &b, &diff).map_err(|e| CliError::io(&path, e))?;
            let values: Vec<f64> = diff.iter().filter_map(|d| d.1).collect();
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            println!("{metric}: {} rows compared, diff in [{lo:.6e}, {hi:.6e}]", values.len());
            println!("wrote {}", path.display());
            if let Some(limit) = max {
                let above = values.iter().filter(|&&d| d > limit).count();
                let a = Assertion {
                    figure: "compare".into(),
                    name: format!("{metric}_diff_at_most_{limit:e}"),
                    pass: above == 0,
                    detail: format!("{above} rows above"),
                };
                println!("{}", a.line());
                property_result(&[a])?;
            }
            Ok(())
        }
        Command::Verify { scenario } => {
            let file = load_scenario(&scenario)?;
            let assertions = verify::verify(&file)?;
            for a in &assertions {
                println!("{}", a.line());
            }
            property_result(&assertions)
        }
        Command::ReproAll { out, scenarios } => {
            let bundle = match scenarios {
                Some(dir) => Bundle::from_dir(&dir)?,
                None => Bundle::builtin(),
            };
            let outcome = repro::repro_all(&bundle, parallel::thread_limit()?)?;
            repro::write_repro(&out, &outcome)?;
            for a in &outcome.assertions {
                println!("{}", a.line());
            }
            println!("wrote {}", out.display());
            property_result(&outcome.assertions)
        }
    }
}

/// Parses `args`, runs the command and returns the exit code.
pub fn main_with(args: impl IntoIterator<Item = std::ffi::OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            if code != 0 {
                eprintln!("{}", CliError::Usage(e.kind().to_string()).json_line());
            }
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.json_line());
            e.exit_code()
        }
    }
}

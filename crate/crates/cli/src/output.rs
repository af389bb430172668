//! Files written for a run: the per-step trace, optional per-round
//! diagnostics, a JSON summary and a plot manifest.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ccbf::sim::{check_forward_invariance, SimTrace};
use serde::Serialize;

use crate::scenario::ScenarioFile;

pub const TRACE_FILE: &str = "trace.csv";
pub const ROUNDS_FILE: &str = "rounds.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PLOT_FILE: &str = "plot.json";

/// Tolerance on `h` used for violation reports.
pub const VIOLATION_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentSummary {
    pub agent: usize,
    pub min_h: Option<f64>,
    pub min_h_plus: Option<f64>,
    pub first_violation: Option<f64>,
    pub max_x: f64,
    pub min_x: f64,
    pub final_x: f64,
    /// `r − |x(T)|` for agents with a barrier.
    pub final_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub mode: String,
    pub steps: usize,
    pub horizon: f64,
    pub control_dt: f64,
    pub agents: Vec<AgentSummary>,
    pub safe: bool,
    pub relaxed_steps: usize,
    pub total_rounds: Option<usize>,
}

impl Summary {
    pub fn new(file: &ScenarioFile, trace: &SimTrace) -> Self {
        let report = check_forward_invariance(trace, VIOLATION_TOL);
        let last = trace.rows.last().expect("a run has at least one row");
        let agents = (0..trace.agent_count())
            .map(|i| {
                let xs = trace.rows.iter().map(|r| r.x[i][0]);
                let inv = report.agent(i);
                AgentSummary {
                    agent: i + 1,
                    min_h: inv.map(|a| a.min_h),
                    min_h_plus: inv.map(|a| a.min_h_plus),
                    first_violation: inv.and_then(|a| a.first_violation),
                    max_x: xs.clone().fold(f64::NEG_INFINITY, f64::max),
                    min_x: xs.fold(f64::INFINITY, f64::min),
                    final_x: last.x[i][0],
                    final_gap: file.agents[i].barrier.as_ref().map(|b| b.radius - last.x[i][0].abs()),
                }
            })
            .collect();
        let rounds: Vec<usize> = trace.rows.iter().filter_map(|r| r.rounds).collect();
        Self {
            scenario: file.name.clone(),
            mode: file.sim.mode.name().into(),
            steps: trace.rows.len() - 1,
            horizon: file.sim.horizon,
            control_dt: file.sim.control_dt,
            agents,
            safe: report.holds(),
            relaxed_steps: trace.relaxed_steps(),
            total_rounds: (!rounds.is_empty()).then(|| rounds.iter().sum()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Panel {
    pub title: String,
    pub x: String,
    pub y: Vec<String>,
    /// Horizontal reference lines, e.g. the barrier radii.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub reference: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotManifest {
    pub scenario: String,
    pub trace: String,
    pub panels: Vec<Panel>,
}

impl PlotManifest {
    pub fn new(file: &ScenarioFile, trace: &SimTrace) -> Self {
        let columns = trace.columns();
        let with = |prefix: &str| columns.iter().filter(|c| c.starts_with(prefix)).cloned().collect::<Vec<_>>();
        let panel = |title: &str, y: Vec<String>, reference: Vec<f64>| Panel { title: title.into(), x: "t".into(), y, reference };
        let radii: Vec<f64> = file.agents.iter().filter_map(|a| a.barrier.as_ref()).flat_map(|b| [b.radius, -b.radius]).collect();
        let mut panels = vec![panel("positions", with("x_"), radii), panel("inputs", with("u_"), vec![]), panel("barrier values", with("h_"), vec![0.0])];
        if columns.iter().any(|c| c == "disagreement") {
            panels.push(panel("consensus disagreement", vec!["disagreement".into()], vec![]));
        }
        if columns.iter().any(|c| c == "u2_min") {
            panels.push(panel("smallest safe input of agent 2", vec!["u2_min".into()], vec![]));
        }
        panels.retain(|p| !p.y.is_empty());
        Self { scenario: file.name.clone(), trace: TRACE_FILE.into(), panels }
    }
}

fn create(path: &Path) -> std::io::Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// Writes all run files into `dir` and returns their paths.
pub fn write_run(dir: &Path, file: &ScenarioFile, trace: &SimTrace) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let path = dir.join(TRACE_FILE);
    let mut out = create(&path)?;
    trace.write_csv(&mut out)?;
    out.flush()?;
    written.push(path);
    if file.output.rounds {
        let path = dir.join(ROUNDS_FILE);
        let mut out = create(&path)?;
        trace.write_rounds_csv(&mut out)?;
        out.flush()?;
        written.push(path);
    }
    for (name, json) in [
        (SUMMARY_FILE, serde_json::to_string_pretty(&Summary::new(file, trace))?),
        (PLOT_FILE, serde_json::to_string_pretty(&PlotManifest::new(file, trace))?),
    ] {
        let path = dir.join(name);
        fs::write(&path, json + "\n")?;
        written.push(path);
    }
    Ok(written)
}

/// One named column of a trace CSV with its time stamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub t: Vec<f64>,
    pub values: Vec<Option<f64>>,
}

/// Reads `column` from a trace CSV. Empty cells become `None`.
pub fn read_series(text: &str, column: &str) -> Result<Series, String> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty trace file")?.split(',').collect();
    let ti = header.iter().position(|&c| c == "t").ok_or("trace has no t column")?;
    let ci = header.iter().position(|&c| c == column).ok_or_else(|| format!("trace has no {column} column (columns: {})", header.join(",")))?;
    let mut series = Series { t: Vec::new(), values: Vec::new() };
    for (k, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let cells: Vec<&str> = line.split(',').collect();
        let cell = |i: usize| cells.get(i).copied().ok_or_else(|| format!("row {} is short", k + 2));
        let num = |s: &str| s.parse::<f64>().map_err(|e| format!("row {}: {s:?}: {e}", k + 2));
        series.t.push(num(cell(ti)?)?);
        let v = cell(ci)?;
        series.values.push(if v.is_empty() { None } else { Some(num(v)?) });
    }
    Ok(series)
}

/// `b − a` per row. Both series must share their time stamps.
pub fn difference(a: &Series, b: &Series) -> Result<Vec<(f64, Option<f64>)>, String> {
    if a.t.len() != b.t.len() {
        return Err(format!("traces have {} and {} rows", a.t.len(), b.t.len()));
    }
    a.t.iter()
        .zip(&b.t)
        .zip(a.values.iter().zip(&b.values))
        .map(|((&ta, &tb), (va, vb))| {
            if (ta - tb).abs() > 1e-9 * (1.0 + ta.abs()) {
                return Err(format!("time stamps differ ({ta} vs {tb})"));
            }
            Ok((ta, va.zip(*vb).map(|(x, y)| y - x)))
        })
        .collect()
}

pub fn write_difference(path: &Path, metric: &str, a: &Series, b: &Series, diff: &[(f64, Option<f64>)]) -> std::io::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut out = create(path)?;
    writeln!(out, "t,{metric}_a,{metric}_b,diff")?;
    let cell = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for (k, (t, d)) in diff.iter().enumerate() {
        writeln!(out, "{t},{},{},{}", cell(a.values[k]), cell(b.values[k]), cell(*d))?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_columns_and_blanks() {
        let s = read_series("t,x_1,u2_min\n0,1,2\n0.5,1,\n", "u2_min").unwrap();
        assert_eq!(s.t, [0.0, 0.5]);
        assert_eq!(s.values, [Some(2.0), None]);
        assert!(read_series("t,x_1\n0,1\n", "u2_min").is_err());
        assert!(read_series("", "t").is_err());
    }

    #[test]
    fn difference_needs_matching_times() {
        let a = Series { t: vec![0.0, 1.0], values: vec![Some(1.0), Some(2.0)] };
        let b = Series { t: vec![0.0, 1.0], values: vec![Some(0.5), None] };
        assert_eq!(difference(&a, &b).unwrap(), [(0.0, Some(-0.5)), (1.0, None)]);
        let c = Series { t: vec![0.0, 2.0], values: vec![None, None] };
        assert!(difference(&a, &c).is_err());
    }
}

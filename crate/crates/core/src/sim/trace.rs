use std::io::{self, Write};

use crate::altruism::InputBound;
use crate::dynamics::JointState;

use super::Mode;

/// One control step. `u` is the input held over `[t, t + control_dt)`;
/// `psi` is evaluated at `x` with that input.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub x: JointState,
    pub u: JointState,
    pub h: Vec<Option<f64>>,
    pub h_plus: Vec<Option<f64>>,
    pub psi: Vec<Option<f64>>,
    pub disagreement: Option<f64>,
    pub u2_min: Option<InputBound>,
    pub rounds: Option<usize>,
    /// Largest elastic slack of the last round; positive means some local
    /// problem had to be relaxed at this step.
    pub slack: Option<f64>,
}

/// One inner consensus round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRow {
    pub t: f64,
    pub round: usize,
    pub disagreement: f64,
    /// How `y` was updated before this round.
    pub step: String,
    pub slack: f64,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub mode: Mode,
    pub rows: Vec<TraceRow>,
    pub rounds: Vec<RoundRow>,
}

fn component_names(prefix: &str, agent: usize, dim: usize) -> Vec<String> {
    if dim == 1 {
        vec![format!("{prefix}_{}", agent + 1)]
    } else {
        (0..dim).map(|c| format!("{prefix}_{}_{}", agent + 1, c + 1)).collect()
    }
}

impl SimTrace {
    pub fn agent_count(&self) -> usize {
        self.rows.first().map_or(0, |r| r.x.len())
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    /// Column header in the documented order; columns that do not apply to
    /// this run are left out.
    pub fn columns(&self) -> Vec<String> {
        let Some(first) = self.rows.first() else { return vec!["t".into()] };
        let n = first.x.len();
        let mut cols = vec!["t".to_string()];
        for i in 0..n {
            cols.extend(component_names("x", i, first.x[i].len()));
        }
        for i in 0..n {
            cols.extend(component_names("u", i, first.u[i].len()));
        }
        for (prefix, series) in [("h", &first.h), ("hplus", &first.h_plus), ("psi", &first.psi)] {
            for (i, v) in series.iter().enumerate() {
                if v.is_some() {
                    cols.push(format!("{prefix}_{}", i + 1));
                }
            }
        }
        if first.disagreement.is_some() {
            cols.push("disagreement".into());
        }
        if self.rows.iter().any(|r| r.u2_min.is_some()) {
            cols.push("u2_min".into());
        }
        cols
    }

    pub fn write_csv(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "{}", self.columns().join(","))?;
        let with_u2 = self.rows.iter().any(|r| r.u2_min.is_some());
        for r in &self.rows {
            let mut cells = vec![r.t.to_string()];
            cells.extend(r.x.iter().flat_map(|v| v.iter().map(f64::to_string)));
            cells.extend(r.u.iter().flat_map(|v| v.iter().map(f64::to_string)));
            for series in [&r.h, &r.h_plus, &r.psi] {
                cells.extend(series.iter().flatten().map(f64::to_string));
            }
            if let Some(d) = r.disagreement {
                cells.push(d.to_string());
            }
            if with_u2 {
                cells.push(r.u2_min.map_or(String::new(), |b| b.value.to_string()));
            }
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn write_rounds_csv(&self, mut out: impl Write) -> io::Result<()> {
        let width = self.rounds.first().map_or(0, |r| r.u.len());
        let mut header = vec!["t".to_string(), "round".into(), "disagreement".into(), "step".into(), "slack".into()];
        header.extend((0..width).map(|k| format!("u{}", k + 1)));
        writeln!(out, "{}", header.join(","))?;
        for r in &self.rounds {
            let mut cells = vec![r.t.to_string(), r.round.to_string(), r.disagreement.to_string(), r.step.clone(), r.slack.to_string()];
            cells.extend(r.u.iter().map(f64::to_string));
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }

    /// Minimum of `h_i` over the run, if agent `i` has a barrier.
    pub fn min_h(&self, i: usize) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.h[i]).reduce(f64::min)
    }

    pub fn max_state(&self, i: usize, component: usize) -> f64 {
        self.rows.iter().map(|r| r.x[i][component]).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Scalar series of agent `i`'s input (first component).
    pub fn input_series(&self, i: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.u[i].get(0).copied().unwrap_or(0.0)).collect()
    }

    pub fn u2_min_series(&self) -> Vec<Option<InputBound>> {
        self.rows.iter().map(|r| r.u2_min).collect()
    }

    /// Number of steps whose inputs came from relaxed local problems.
    pub fn relaxed_steps(&self) -> usize {
        self.rows.iter().filter(|r| r.slack.is_some_and(|s| s > 0.0)).count()
    }

    pub fn all_finite(&self) -> bool {
        self.rows.iter().all(|r| {
            r.t.is_finite()
                && r.x.iter().chain(&r.u).all(|v| v.iter().all(|e| e.is_finite()))
                && r.h.iter().chain(&r.h_plus).chain(&r.psi).flatten().all(|e| e.is_finite())
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentInvariance {
    pub agent: usize,
    pub min_h: f64,
    pub min_h_plus: f64,
    /// First time with `h_i < −tol`.
    pub first_violation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceReport {
    pub tol: f64,
    pub agents: Vec<AgentInvariance>,
}

impl InvarianceReport {
    pub fn holds(&self) -> bool {
        self.agents.iter().all(|a| a.first_violation.is_none())
    }

    pub fn agent(&self, i: usize) -> Option<&AgentInvariance> {
        self.agents.iter().find(|a| a.agent == i)
    }
}

/// Per-agent minimum of `h` and `h⁺` and the first time `h < −tol`.
pub fn check_forward_invariance(trace: &SimTrace, tol: f64) -> InvarianceReport {
    let mut agents = Vec::new();
    for i in 0..trace.agent_count() {
        if trace.rows[0].h[i].is_none() {
            continue;
        }
        let min_h = trace.rows.iter().filter_map(|r| r.h[i]).fold(f64::INFINITY, f64::min);
        let min_h_plus = trace.rows.iter().filter_map(|r| r.h_plus[i]).fold(f64::INFINITY, f64::min);
        let first_violation = trace.rows.iter().find(|r| r.h[i].is_some_and(|h| h < -tol)).map(|r| r.t);
        agents.push(AgentInvariance { agent: i, min_h, min_h_plus, first_violation });
    }
    InvarianceReport { tol, agents }
}

//! Property checks on one scenario run.

use ccbf::barrier::{eval_psi, fd_psi_oracle};
use ccbf::centralized::{assemble_all, centralized_from};
use ccbf::qp::{solve_qp, QpStatus};
use ccbf::sim::{check_forward_invariance, SimTrace};

use crate::output::VIOLATION_TOL;
use crate::repro::{simulate, Assertion};
use crate::scenario::{ModeKind, ScenarioFile};
use crate::CliError;

/// Number of control steps sampled by the oracle checks.
pub const SAMPLES: usize = 50;

fn sampled(trace: &SimTrace) -> impl Iterator<Item = usize> + '_ {
    let stride = (trace.rows.len() / SAMPLES).max(1);
    (0..trace.rows.len()).step_by(stride)
}

pub fn verify(file: &ScenarioFile) -> Result<Vec<Assertion>, CliError> {
    let trace = simulate(file)?;
    let (_, sc) = file.build().map_err(|e| CliError::Validation(e.to_string()))?;
    let sys = &sc.system;
    let name = file.name.as_str();
    let mut out = Vec::new();

    let report = check_forward_invariance(&trace, VIOLATION_TOL);
    let detail = report
        .agents
        .iter()
        .map(|a| format!("agent {}: min h = {:.6e}, first violation {:?}", a.agent + 1, a.min_h, a.first_violation))
        .collect::<Vec<_>>()
        .join("; ");
    out.push(Assertion { figure: name.into(), name: "forward_invariance".into(), pass: report.holds(), detail });

    let mut worst_psi = 0.0f64;
    let mut worst_row = f64::INFINITY;
    let mut uncertified = Vec::new();
    for k in sampled(&trace) {
        let row = &trace.rows[k];
        let coeffs = assemble_all(sys, &row.x)?;
        for c in coeffs.iter().flatten() {
            let psi = eval_psi(c, &row.u)?;
            let oracle = fd_psi_oracle(sys, c.agent, &row.x, &row.u, 1e-5)?;
            worst_psi = worst_psi.max((psi - oracle).abs() / (1.0 + psi.abs()));
        }
        let qp = centralized_from(sys, &coeffs, &sc.u_nom)?;
        match file.sim.mode {
            ModeKind::NoIntervention => {}
            ModeKind::CcbfSingle => worst_row = worst_row.min(row.psi.iter().flatten().copied().fold(f64::INFINITY, f64::min)),
            _ => worst_row = worst_row.min(qp.residuals(&sys.stack_inputs(&row.u)).min()),
        }
        match solve_qp(&qp) {
            Ok(sol) if sol.status == QpStatus::Optimal && sol.kkt(&qp).certified(1e-8) => {}
            Ok(sol) if sol.status == QpStatus::Infeasible => {}
            Ok(sol) => uncertified.push(format!("t = {}: {:?}", row.t, sol.kkt(&qp))),
            Err(e) => uncertified.push(format!("t = {}: {e}", row.t)),
        }
    }
    out.push(Assertion {
        figure: name.into(),
        name: "psi_matches_finite_differences".into(),
        pass: worst_psi <= 1e-3,
        detail: format!("worst relative error {worst_psi:.2e} over {SAMPLES} sampled steps"),
    });
    if file.sim.mode != ModeKind::NoIntervention {
        out.push(Assertion {
            figure: name.into(),
            name: "inputs_satisfy_filter_rows".into(),
            pass: worst_row >= -1e-6,
            detail: format!("most negative row residual {worst_row:.2e}"),
        });
    }
    out.push(Assertion {
        figure: name.into(),
        name: "centralized_qp_kkt".into(),
        pass: uncertified.is_empty(),
        detail: if uncertified.is_empty() { "all sampled solutions certified to 1e-8".into() } else { uncertified.join("; ") },
    });
    let again = simulate(file)?;
    out.push(Assertion {
        figure: name.into(),
        name: "deterministic".into(),
        pass: again == trace,
        detail: "second run compared bit for bit".into(),
    });
    Ok(out)
}

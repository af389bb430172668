//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always show; exits nonzero if any criterion fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ccbf_sim::repro::{self, simulate, Assertion, Bundle};
use ccbf_testkit::suites::{aux_equivalence, consensus_properties, dominant_weight, psi_oracle, qp_oracle, Verdict};

struct Outcome {
    pass: bool,
    detail: String,
}

fn from_assertions(assertions: Vec<Assertion>) -> Outcome {
    Outcome {
        pass: assertions.iter().all(|a| a.pass),
        detail: assertions.iter().map(|a| format!("[{}] {}: {}", if a.pass { "ok" } else { "FAILED" }, a.name, a.detail)).collect::<Vec<_>>().join("; "),
    }
}

fn from_verdicts(verdicts: &[(&str, Verdict)]) -> Outcome {
    Outcome {
        pass: verdicts.iter().all(|(_, v)| v.pass),
        detail: verdicts.iter().map(|(name, v)| format!("[{}] {name}: {}", if v.pass { "ok" } else { "FAILED" }, v.detail)).collect::<Vec<_>>().join("; "),
    }
}

fn main() -> ExitCode {
    let bundle = Bundle::from_dir(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")).expect("bundled scenarios load");
    let variants = bundle.variants();
    let run = |k: usize| simulate(&variants[k].file).unwrap_or_else(|e| panic!("{} {}: {e}", variants[k].figure, variants[k].label));

    let consensus = std::sync::OnceLock::new();
    let consensus = || consensus.get_or_init(|| consensus_properties(4, 50, 0.01, 5000));
    let criteria: Vec<(&str, Option<Duration>, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("single-constraint replication", Some(Duration::from_secs(5)), Box::new(|| from_assertions(repro::fig1(&variants[0].file, &run(0), &run(1))))),
        (
            "two-constraint replication, zero vs half-Sontag",
            Some(Duration::from_secs(30)),
            Box::new(|| from_assertions(repro::fig2(&variants[2].file, &run(2), &variants[3].file, &run(3)))),
        ),
        ("altruistic replication", Some(Duration::from_secs(60)), Box::new(|| from_assertions(repro::fig3(&run(4), &run(5))))),
        ("distributed rounds stay centrally feasible", None, Box::new(|| from_verdicts(&[("rows", consensus().feasibility())]))),
        ("distributed rounds converge, faster with k0", None, Box::new(|| from_verdicts(&[("convergence", consensus().convergence())]))),
        ("coefficient oracle", None, Box::new(|| from_verdicts(&[("psi", psi_oracle(6, 100))]))),
        ("QP oracle", None, Box::new(|| from_verdicts(&[("qp", qp_oracle(7, 500, 6, 10))]))),
        (
            "dominant-weight altruism",
            None,
            Box::new(|| {
                let report = dominant_weight(8, 200, 1e6, 1000);
                from_verdicts(&[("psi bound", report.psi_bound()), ("intersection", report.intersection())])
            }),
        ),
        ("auxiliary-variable equivalence", None, Box::new(|| from_verdicts(&[("inputs", aux_equivalence(9, 100))]))),
    ];

    let mut failed = 0;
    for (k, (name, limit, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let mut outcome = check();
        let took = start.elapsed();
        if let Some(limit) = limit {
            if took > *limit {
                outcome.pass = false;
                outcome.detail += &format!("; runtime {took:.2?} exceeds {limit:?}");
            }
        }
        if !outcome.pass {
            failed += 1;
        }
        println!("{} criterion {} ({name}, {took:.2?}): {}", if outcome.pass { "PASS" } else { "FAIL" }, k + 1, outcome.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

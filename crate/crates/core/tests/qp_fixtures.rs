//! Problems captured from consensus runs where the active-set loop used to
//! stall or cycle.

use ccbf::qp::{solve_qp, QpStatus, QuadraticProgram};

fn load(name: &str) -> QuadraticProgram {
    let path = format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    QuadraticProgram::parse_text(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn check(name: &str) {
    let p = load(name);
    let sol = solve_qp(&p).unwrap();
    assert_eq!(sol.status, QpStatus::Optimal, "{name}");
    let report = sol.kkt(&p);
    assert!(report.certified(1e-8), "{name}: {report:?}");
}

#[test]
fn ill_conditioned_projection() {
    // Input weights 1e-6 against unit weights on the auxiliary block.
    check("ill_conditioned_projection.qp");
}

#[test]
fn round_off_multiplier() {
    // Optimal with a multiplier of order 1e-10 on a degenerate row.
    check("round_off_multiplier.qp");
}

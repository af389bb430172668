use ccbf_testkit::suites::consensus_properties;

#[test]
fn rounds_stay_centrally_feasible_and_converge() {
    let report = consensus_properties(21, 15, 0.01, 5000);
    let f = report.feasibility();
    assert!(f.pass, "{}", f.detail);
    let c = report.convergence();
    assert!(c.pass, "{}", c.detail);
}

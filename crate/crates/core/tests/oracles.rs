use ccbf_testkit::suites::{aux_equivalence, dominant_weight, psi_oracle, qp_oracle};

#[test]
fn active_set_matches_enumeration() {
    let v = qp_oracle(101, 200, 6, 10);
    assert!(v.pass, "{}", v.detail);
}

#[test]
fn active_set_matches_enumeration_on_tall_problems() {
    let v = qp_oracle(111, 100, 3, 12);
    assert!(v.pass, "{}", v.detail);
}

#[test]
fn assembled_psi_matches_finite_differences() {
    let v = psi_oracle(102, 60);
    assert!(v.pass, "{}", v.detail);
}

#[test]
fn auxiliary_form_has_same_optimal_input() {
    let v = aux_equivalence(103, 60);
    assert!(v.pass, "{}", v.detail);
}

#[test]
fn dominant_weight_keeps_own_constraint_up_to_relatedness() {
    // On the altruism boundary ψ_i is off by the relatedness-weighted benefit,
    // so the residual shrinks in proportion to the weight ratio.
    let coarse = dominant_weight(104, 100, 1e6, 200);
    assert!(coarse.worst_violation <= 1e-4, "{}", coarse.psi_bound().detail);
    let fine = dominant_weight(104, 100, 1e9, 200);
    assert!(fine.worst_violation <= coarse.worst_violation * 1e-2, "{}", fine.psi_bound().detail);
    assert!(fine.psi_bound().pass, "{}", fine.psi_bound().detail);
}

#[test]
fn dominant_weight_altruism_meets_safe_set() {
    let v = dominant_weight(105, 100, 1e6, 10).intersection();
    assert!(v.pass, "{}", v.detail);
}

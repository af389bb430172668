//! Property suites parameterized by seed and instance count. The core
//! integration tests run them small; the acceptance target runs them at
//! full size and prints one verdict per suite.

use ccbf::altruism::{altruism_row, SafetyWeights};
use ccbf::barrier::{eval_psi, fd_psi_oracle};
use ccbf::centralized::{assemble_all, centralized_aux_from, centralized_from, solve_filter};
use ccbf::consensus::{run_rounds, ConsensusState, RoundOptions};
use ccbf::qp::{solve_qp, QpStatus, QuadraticProgram};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::formation::{random_feasible_formation, random_formation, scalar};
use crate::qp::{brute_force, random_qp};
use crate::rng;

#[derive(Debug, Clone)]
pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

/// `solve_qp` against [`brute_force`] on random strictly convex QPs.
pub fn qp_oracle(seed: u64, count: usize, max_dim: usize, max_rows: usize) -> Verdict {
    let mut r = rng(seed);
    let mut worst_gap = 0.0f64;
    let mut uncertified = 0;
    let mut mismatched = Vec::new();
    for k in 0..count {
        let p = random_qp(&mut r, max_dim, max_rows);
        let sol = match solve_qp(&p) {
            Ok(s) => s,
            Err(e) => {
                mismatched.push(format!("#{k}: {e}"));
                continue;
            }
        };
        let Some((best, _)) = brute_force(&p, 1e-9) else {
            mismatched.push(format!("#{k}: oracle found no optimum"));
            continue;
        };
        if sol.status != QpStatus::Optimal {
            mismatched.push(format!("#{k}: status {:?}", sol.status));
            continue;
        }
        let gap = (p.objective(&sol.z) - best).abs();
        worst_gap = worst_gap.max(gap);
        if gap > 1e-6 {
            mismatched.push(format!("#{k}: objective gap {gap:e}"));
        }
        if !sol.kkt(&p).certified(1e-8) {
            uncertified += 1;
        }
    }
    let pass = mismatched.is_empty() && uncertified == 0;
    Verdict::new(pass, format!("{count} QPs, worst objective gap {worst_gap:.1e}, {uncertified} not KKT-certified, mismatches {mismatched:?}"))
}

/// Assembled `ψ_i` against the finite-difference oracle on random formation
/// states and inputs, one barrier owner per instance.
pub fn psi_oracle(seed: u64, count: usize) -> Verdict {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let inst = random_formation(&mut r, 4);
        let owners = inst.system.owners();
        let i = owners[r.gen_range(0..owners.len())];
        let u: Vec<_> = (0..inst.system.agent_count()).map(|_| scalar(r.gen_range(-3.0..3.0))).collect();
        let coeffs = ccbf::assemble_coefficients(&inst.system, i, &inst.x).expect("owner has coefficients");
        let psi = eval_psi(&coeffs, &u).unwrap();
        let oracle = fd_psi_oracle(&inst.system, i, &inst.x, &u, 1e-5).unwrap();
        worst = worst.max((psi - oracle).abs() / (1.0 + psi.abs()));
    }
    Verdict::new(worst <= 1e-3, format!("{count} states, worst relative error {worst:.1e}"))
}

/// Optimal inputs of the plain centralized filter and its auxiliary-variable
/// form, on random instances where the centralized filter is feasible.
pub fn aux_equivalence(seed: u64, count: usize) -> Verdict {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < count {
        let inst = random_formation(&mut r, 4);
        let sys = &inst.system;
        let coeffs = assemble_all(sys, &inst.x).unwrap();
        let plain = centralized_from(sys, &coeffs, &inst.u_nom).unwrap();
        let Ok((u, _)) = solve_filter(sys, &plain, None) else { continue };
        let aux = centralized_aux_from(sys, &coeffs, &inst.u_nom).unwrap();
        let sol = solve_qp(&aux.qp).unwrap();
        if sol.status != QpStatus::Optimal {
            return Verdict::new(false, format!("auxiliary form reports {:?} where the plain filter is feasible", sol.status));
        }
        let (u_aux, _) = aux.split(&sol.z);
        worst = worst.max((sys.stack_inputs(&u) - u_aux).amax());
        done += 1;
    }
    Verdict::new(worst <= 1e-6, format!("{count} instances, worst input difference {worst:.1e}"))
}

#[derive(Debug, Clone)]
pub struct ConsensusReport {
    pub instances: usize,
    /// Most negative centralized row residual over every round of every run.
    pub worst_row: f64,
    /// Instances whose final input is farther than 1e-3 from the optimum.
    pub unconverged: Vec<usize>,
    /// Instances where the rounds needed do not decrease with `k₀`.
    pub non_monotone: Vec<usize>,
    pub errors: Vec<String>,
}

impl ConsensusReport {
    pub fn feasibility(&self) -> Verdict {
        Verdict::new(
            self.worst_row >= -1e-6 && self.errors.is_empty(),
            format!("{} instances, worst centralized row residual {:.1e}, errors {:?}", self.instances, self.worst_row, self.errors),
        )
    }

    pub fn convergence(&self) -> Verdict {
        Verdict::new(
            self.unconverged.is_empty() && self.non_monotone.is_empty() && self.errors.is_empty(),
            format!("{} instances, unconverged {:?}, rounds increasing in k0 {:?}", self.instances, self.unconverged, self.non_monotone),
        )
    }
}

pub const CONSENSUS_GAINS: [f64; 3] = [1.0, 5.0, 25.0];

/// Runs the distributed rounds at a fixed state for each gain in
/// [`CONSENSUS_GAINS`]. The rounds needed are counted up to the first round
/// after which the input stays within 1e-3 of the centralized optimum.
pub fn consensus_properties(seed: u64, count: usize, inner_dt: f64, budget: usize) -> ConsensusReport {
    let mut r = rng(seed);
    let mut report = ConsensusReport { instances: count, worst_row: f64::INFINITY, unconverged: vec![], non_monotone: vec![], errors: vec![] };
    for k in 0..count {
        let inst = random_feasible_formation(&mut r, 4);
        let sys = &inst.system;
        let coeffs = assemble_all(sys, &inst.x).unwrap();
        let qp = centralized_from(sys, &coeffs, &inst.u_nom).unwrap();
        let (star, _) = solve_filter(sys, &qp, None).unwrap();
        let star = sys.stack_inputs(&star);
        let mut needed = Vec::new();
        for k0 in CONSENSUS_GAINS {
            let mut cs = ConsensusState::new(sys, k0, inner_dt).unwrap();
            let mut errs = Vec::new();
            let opts = RoundOptions { rounds: budget, tol: 1e-10, elastic: None };
            let out = run_rounds(sys, &coeffs, &inst.u_nom, &mut cs, &opts, None, |rec| {
                let u = sys.stack_inputs(&rec.u);
                errs.push((&u - &star).norm());
                report.worst_row = report.worst_row.min(qp.residuals(&u).min());
            });
            if let Err(e) = out {
                report.errors.push(format!("#{k} k0={k0}: {e}"));
                needed.push(usize::MAX);
                continue;
            }
            needed.push(match errs.iter().rposition(|&e| e > 1e-3) {
                None => 1,
                Some(p) if p + 1 < errs.len() => p + 2,
                Some(_) => usize::MAX,
            });
        }
        if needed.contains(&usize::MAX) {
            report.unconverged.push(k);
        } else if needed.windows(2).any(|w| w[1] > w[0]) {
            report.non_monotone.push(k);
        }
    }
    report
}

/// Altruism under a dominant own weight: agent `i`'s weight is at least
/// `min_ratio` times every other weight.
///
/// The ψ bound samples inputs of `i` on and inside the altruism half-space, with
/// the other inputs drawn so that their contribution to `ψ_i` is
/// nonnegative, and checks `ψ_i`. The intersection check tests by LP that the altruism
/// half-space meets `{u_i : ψ_i ≥ 0}` whenever the latter is nonempty.
/// The ratio is drawn log-uniformly from `[min_ratio, 1000 min_ratio]`.
#[derive(Debug, Clone)]
pub struct AltruismReport {
    pub instances: usize,
    /// Largest `−ψ_i / (1 + |ψ_i|)` over all samples.
    pub worst_violation: f64,
    pub safe_nonempty: usize,
    pub intersection_nonempty: usize,
}

impl AltruismReport {
    pub fn psi_bound(&self) -> Verdict {
        Verdict::new(self.worst_violation <= 1e-6, format!("{} instances, worst normalized ψ violation {:.1e}", self.instances, self.worst_violation))
    }

    pub fn intersection(&self) -> Verdict {
        Verdict::new(
            self.safe_nonempty == self.intersection_nonempty,
            format!("{} instances, safe set nonempty in {}, intersection nonempty in {}", self.instances, self.safe_nonempty, self.intersection_nonempty),
        )
    }
}

pub fn dominant_weight(seed: u64, count: usize, min_ratio: f64, samples: usize) -> AltruismReport {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    let (mut safe_nonempty, mut met) = (0, 0);
    for _ in 0..count {
        let inst = random_formation(&mut r, 4);
        let sys = &inst.system;
        let n = sys.agent_count();
        let owners = sys.owners();
        let i = owners[r.gen_range(0..owners.len())];
        let coeffs = assemble_all(sys, &inst.x).unwrap();
        let ci = coeffs[i].as_ref().unwrap();
        let ratio = min_ratio * 10f64.powf(r.gen_range(0.0..3.0));
        let w: Vec<f64> = (0..n).map(|j| if j == i { 1.0 } else if coeffs[j].is_some() { 1.0 / ratio } else { 0.0 }).collect();
        let weights = SafetyWeights { eta: w.clone(), w, floor: 1e-6 };
        let (row, offset) = altruism_row(sys, i, &coeffs, &weights).unwrap();

        let mut u: Vec<DVector<f64>> = (0..n).map(|_| scalar(r.gen_range(-3.0..3.0))).collect();
        let contribution = |u: &[DVector<f64>]| ci.neighbor_contribution(u).unwrap();
        for _ in 0..100 {
            if contribution(&u) >= 0.0 {
                break;
            }
            for (j, uj) in u.iter_mut().enumerate() {
                if j != i {
                    *uj = scalar(r.gen_range(-3.0..3.0));
                }
            }
        }
        if contribution(&u) >= 0.0 && row[0].abs() > 1e-12 {
            let edge = -offset / row[0];
            let inward = row[0].signum();
            for s in 0..samples {
                let depth = if s % 2 == 0 { 0.0 } else { r.gen_range(0.0..1.0) };
                u[i] = scalar(edge + inward * depth);
                let psi = eval_psi(ci, &u).unwrap();
                worst = worst.max(-psi / (1.0 + psi.abs()));
            }
        }

        // Feasibility over u_i with the other inputs fixed.
        let rest = ci.neighbor_contribution(&u).unwrap();
        let own = ci.term(i).unwrap();
        let safe = (DMatrix::from_row_slice(1, 1, &[own.a[0]]), DVector::from_element(1, own.b + rest));
        if lp_feasible(&safe.0, &safe.1) {
            safe_nonempty += 1;
            let rows = DMatrix::from_row_slice(2, 1, &[own.a[0], row[0]]);
            if lp_feasible(&rows, &DVector::from_vec(vec![own.b + rest, offset])) {
                met += 1;
            }
        }
    }
    AltruismReport { instances: count, worst_violation: worst, safe_nonempty, intersection_nonempty: met }
}

fn lp_feasible(rows: &DMatrix<f64>, offsets: &DVector<f64>) -> bool {
    let p = QuadraticProgram::least_distance(&DVector::zeros(rows.ncols()), rows.clone(), offsets.clone()).unwrap();
    solve_qp(&p).is_ok_and(|s| s.status == QpStatus::Optimal)
}

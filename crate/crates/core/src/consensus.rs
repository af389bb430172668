//! Distributed solver: per-agent local problems coupled through auxiliary
//! variables `y_i^j`, updated from the local multipliers `c_i^j`.
//!
//! For each barrier owner `j`, the members `i ∈ N_j⁺` share a group. Agent
//! `i` solves
//!
//! ```text
//! min ½‖u_i − u_i^ref‖²
//! s.t. a_jiᵀ u_i + Σ_{k ∈ N_j⁺} (y_i^j − y_k^j) + b_ji ≥ 0   for owners j with i ∈ N_j⁺
//!      L_g h_i u_i + γ_i h_i − L_g h_i k_i ≥ 0              if i owns a barrier
//! ```
//!
//! with `y` held fixed, then every group takes one forward-Euler step of
//! `ẏ_i^j = −k₀ Σ_{k ∈ N_j⁺} (c_i^j − c_k^j)`.
//!
//! `c_i^j` is stored with the sign of the Lagrangian `J + c·g` for rows
//! written `g ≥ 0`, so active rows carry `c ≤ 0`. Under this convention the
//! update is gradient descent on the sum of local optimal values, and the
//! rows summed over a group reproduce `ψ_j`, so every round's inputs satisfy
//! the centralized constraints whenever all local problems are feasible.

use nalgebra::{DMatrix, DVector};

use crate::barrier::CcbfCoefficients;
use crate::error::{ModelError, SolveError};
use crate::model::MultiAgentSystem;
use crate::qp::{solve_qp_warm, QpStatus, QuadraticProgram, WarmStart};

/// Default early-exit threshold on multiplier disagreement.
pub const DISAGREEMENT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusGroup {
    pub owner: usize,
    /// `N_owner⁺`, ascending.
    pub members: Vec<usize>,
    pub y: Vec<f64>,
    pub c: Vec<f64>,
}

impl ConsensusGroup {
    fn position(&self, agent: usize) -> Option<usize> {
        self.members.iter().position(|&m| m == agent)
    }

    /// `Σ_{k} (y_pos − y_k)`.
    fn y_offset(&self, pos: usize) -> f64 {
        self.members.len() as f64 * self.y[pos] - self.y.iter().sum::<f64>()
    }

    pub fn disagreement(&self) -> f64 {
        let max = self.c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = self.c.iter().cloned().fold(f64::INFINITY, f64::min);
        if self.c.is_empty() {
            0.0
        } else {
            max - min
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusState {
    pub k0: f64,
    pub inner_dt: f64,
    pub groups: Vec<ConsensusGroup>,
    // Warm starts of each agent's last local solve.
    warm: Vec<Option<WarmStart>>,
}

impl ConsensusState {
    /// One group per barrier owner, all `y` and `c` zero.
    pub fn new(sys: &MultiAgentSystem, k0: f64, inner_dt: f64) -> Result<Self, ModelError> {
        if !(k0 > 0.0 && k0.is_finite()) {
            return Err(ModelError::InvalidParameter { name: "k0".into(), reason: format!("must be > 0, got {k0}") });
        }
        if !(inner_dt > 0.0 && inner_dt.is_finite()) {
            return Err(ModelError::InvalidParameter { name: "inner_dt".into(), reason: format!("must be > 0, got {inner_dt}") });
        }
        let mut groups = Vec::new();
        for j in sys.owners() {
            let members = sys.graph.in_neighbors(j)?.to_vec();
            let len = members.len();
            groups.push(ConsensusGroup { owner: j, members, y: vec![0.0; len], c: vec![0.0; len] });
        }
        Ok(Self { k0, inner_dt, groups, warm: vec![None; sys.agent_count()] })
    }

    pub fn group(&self, owner: usize) -> Option<&ConsensusGroup> {
        self.groups.iter().find(|g| g.owner == owner)
    }

    /// `y_member^owner`, if the pair exists.
    pub fn y(&self, owner: usize, member: usize) -> Option<f64> {
        let g = self.group(owner)?;
        g.position(member).map(|p| g.y[p])
    }

    pub fn set_y(&mut self, owner: usize, member: usize, value: f64) -> Result<(), ModelError> {
        let g = self.groups.iter_mut().find(|g| g.owner == owner).ok_or(ModelError::NoBarrier { agent: owner + 1 })?;
        let p = g.position(member).ok_or(ModelError::NotCoupled { agent: member + 1, owner: owner + 1 })?;
        g.y[p] = value;
        Ok(())
    }

    /// `c_member^owner`; zero for pairs outside the graph.
    pub fn c(&self, owner: usize, member: usize) -> f64 {
        self.group(owner).and_then(|g| g.position(member).map(|p| g.c[p])).unwrap_or(0.0)
    }

    pub fn set_c(&mut self, owner: usize, member: usize, value: f64) -> Result<(), ModelError> {
        let g = self.groups.iter_mut().find(|g| g.owner == owner).ok_or(ModelError::NoBarrier { agent: owner + 1 })?;
        let p = g.position(member).ok_or(ModelError::NotCoupled { agent: member + 1, owner: owner + 1 })?;
        g.c[p] = value;
        Ok(())
    }

    /// Adds `delta` to every `y_·^owner`; no local problem changes.
    pub fn shift_group(&mut self, owner: usize, delta: f64) {
        if let Some(g) = self.groups.iter_mut().find(|g| g.owner == owner) {
            g.y.iter_mut().for_each(|y| *y += delta);
        }
    }

    /// `max_j max_{i,k ∈ N_j⁺} |c_i^j − c_k^j|`.
    pub fn disagreement(&self) -> f64 {
        self.groups.iter().map(ConsensusGroup::disagreement).fold(0.0, f64::max)
    }

    pub fn group_sums(&self) -> Vec<f64> {
        self.groups.iter().map(|g| g.y.iter().sum()).collect()
    }
}

/// Forward-Euler step of the auxiliary dynamics using the multipliers
/// currently stored in `cs`.
pub fn update_aux(cs: &mut ConsensusState) {
    let step = cs.k0 * cs.inner_dt;
    for g in &mut cs.groups {
        let total: f64 = g.c.iter().sum();
        let len = g.c.len() as f64;
        for (y, &c) in g.y.iter_mut().zip(&g.c) {
            *y -= step * (len * c - total);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalSolution {
    pub agent: usize,
    pub u: DVector<f64>,
    /// `(owner j, c_i^j)` for every coupling row of the local problem.
    pub multipliers: Vec<(usize, f64)>,
    /// Elastic slack; 0 unless the hard problem was infeasible.
    pub slack: f64,
    /// `½‖u_i − u_i^ref‖²` plus the slack penalty.
    pub objective: f64,
    pub iterations: usize,
}

/// The coupling rows of agent `i`'s local problem: `(owner, a_ji, offset)`
/// where the offset already includes the `y` terms.
pub fn local_rows(i: usize, coeffs: &[Option<CcbfCoefficients>], cs: &ConsensusState) -> Vec<(usize, DVector<f64>, f64)> {
    let mut rows = Vec::new();
    for g in &cs.groups {
        let Some(pos) = g.position(i) else { continue };
        let Some(Some(cj)) = coeffs.get(g.owner) else { continue };
        if let Some(t) = cj.term(i) {
            rows.push((g.owner, t.a.clone(), g.y_offset(pos) + t.b));
        }
    }
    rows
}

/// Local problem of agent `i` with `y` held at its current value. The
/// multipliers are returned, not written back into `cs`.
pub fn solve_local(
    sys: &MultiAgentSystem,
    i: usize,
    coeffs: &[Option<CcbfCoefficients>],
    u_ref: &DVector<f64>,
    cs: &mut ConsensusState,
) -> Result<LocalSolution, SolveError> {
    solve_local_with(sys, i, coeffs, u_ref, cs, None, None)
}

/// As [`solve_local`], with one extra row `row · u_i + offset ≥ 0` appended
/// last. With `elastic = Some(M)`, an infeasible problem is replaced by
/// `min ½‖u_i − u_i^ref‖² + M t` over rows relaxed by a common slack `t ≥ 0`.
pub fn solve_local_with(
    sys: &MultiAgentSystem,
    i: usize,
    coeffs: &[Option<CcbfCoefficients>],
    u_ref: &DVector<f64>,
    cs: &mut ConsensusState,
    extra: Option<(DVector<f64>, f64)>,
    elastic: Option<f64>,
) -> Result<LocalSolution, SolveError> {
    let m = sys.agents.get(i).ok_or(ModelError::AgentOutOfRange { agent: i + 1, n: sys.agent_count() })?.input_dim();
    if u_ref.len() != m {
        return Err(ModelError::Dimension { what: "reference input", expected: m, got: u_ref.len() }.into());
    }
    let coupling = local_rows(i, coeffs, cs);
    let mut rows: Vec<(DVector<f64>, f64)> = coupling.iter().map(|(_, a, off)| (a.clone(), *off)).collect();
    if let Some(Some(own)) = coeffs.get(i) {
        let (lgh, scalar) = own.first_order_row();
        rows.push((if lgh.len() == m { lgh } else { DVector::zeros(m) }, scalar));
    }
    if let Some(extra) = extra {
        rows.push(extra);
    }
    let mut a = DMatrix::zeros(rows.len(), m);
    let mut c = DVector::zeros(rows.len());
    for (r, (row, off)) in rows.iter().enumerate() {
        if row.len() != m {
            return Err(ModelError::Dimension { what: "local row", expected: m, got: row.len() }.into());
        }
        a.set_row(r, &row.transpose());
        c[r] = *off;
    }
    let qp = QuadraticProgram::least_distance(u_ref, a.clone(), c.clone())?;
    let sol = solve_qp_warm(&qp, cs.warm[i].as_ref())?;
    let multipliers_of = |lambda: &DVector<f64>| coupling.iter().enumerate().map(|(r, (owner, _, _))| (*owner, -lambda[r])).collect();
    if sol.status == QpStatus::Optimal {
        cs.warm[i] = Some(sol.warm_start());
        let objective = qp.objective(&sol.z) + 0.5 * u_ref.norm_squared();
        let lambda = least_norm_multipliers(&a, &c, &sol.z, &(&sol.z - u_ref)).unwrap_or(sol.multipliers);
        return Ok(LocalSolution { agent: i, multipliers: multipliers_of(&lambda), u: sol.z, slack: 0.0, objective, iterations: sol.iterations });
    }
    let Some(penalty) = elastic else {
        return Err(SolveError::LocalInfeasible { agent: i + 1 });
    };
    let k = rows.len();
    let mut ae = DMatrix::zeros(k + 1, m + 1);
    ae.view_mut((0, 0), (k, m)).copy_from(&a);
    ae.view_mut((0, m), (k, 1)).fill(1.0);
    ae[(k, m)] = 1.0;
    let mut ce = DVector::zeros(k + 1);
    ce.rows_mut(0, k).copy_from(&c);
    let mut h = DMatrix::zeros(m + 1, m + 1);
    h.view_mut((0, 0), (m, m)).fill_with_identity();
    let mut f = DVector::zeros(m + 1);
    f.rows_mut(0, m).copy_from(&-u_ref);
    f[m] = penalty;
    let qe = QuadraticProgram::new(h, f, ae, ce)?;
    let se = solve_qp_warm(&qe, None)?;
    if se.status != QpStatus::Optimal {
        return Err(SolveError::LocalInfeasible { agent: i + 1 });
    }
    cs.warm[i] = None;
    let u = se.z.rows(0, m).into_owned();
    let slack = se.z[m];
    let objective = 0.5 * (&u - u_ref).norm_squared() + penalty * slack;
    Ok(LocalSolution { agent: i, multipliers: multipliers_of(&se.multipliers), u, slack, objective, iterations: sol.iterations + se.iterations })
}

/// The least-norm multipliers `λ ≥ 0` with `Σ λ_r a_r = grad` over the rows
/// active at `z`. `None` when the active rows are independent (the
/// multipliers are then unique) or the small problem fails.
///
/// With dependent active rows the solver's multipliers are one vertex of a
/// set; in one dimension all active rows are parallel and the vertex puts
/// the whole weight on one of them, so the update relaxes only that group.
fn least_norm_multipliers(a: &DMatrix<f64>, c: &DVector<f64>, z: &DVector<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let residual = a * z + c;
    let active: Vec<usize> = (0..a.nrows())
        .filter(|&r| residual[r].abs() <= 1e-9 * (1.0 + c[r].abs() + a.row(r).norm() * z.norm()))
        .collect();
    if active.len() < 2 {
        return None;
    }
    let rows = a.select_rows(&active);
    if rows.rank(1e-10 * (1.0 + rows.amax())) == active.len() {
        return None;
    }
    let k = active.len();
    let m = a.ncols();
    let mut cons = DMatrix::zeros(k + 2 * m, k);
    cons.view_mut((0, 0), (k, k)).fill_with_identity();
    cons.view_mut((k, 0), (m, k)).copy_from(&rows.transpose());
    cons.view_mut((k + m, 0), (m, k)).copy_from(&-rows.transpose());
    let mut off = DVector::zeros(k + 2 * m);
    off.rows_mut(k, m).copy_from(&-grad);
    off.rows_mut(k + m, m).copy_from(grad);
    let qp = QuadraticProgram::new(DMatrix::identity(k, k), DVector::zeros(k), cons, off).ok()?;
    let sol = solve_qp_warm(&qp, None).ok()?;
    if sol.status != QpStatus::Optimal {
        return None;
    }
    let mut lambda = DVector::zeros(a.nrows());
    for (&r, &l) in active.iter().zip(sol.z.iter()) {
        lambda[r] = l.max(0.0);
    }
    Some(lambda)
}

/// Maximum number of step halvings tried per auxiliary update.
pub const MAX_HALVINGS: usize = 40;

/// Default penalty of the elastic fallback.
pub const DEFAULT_ELASTIC_PENALTY: f64 = 1e3;

// Weight of the input block in the projection objective; only there to make
// the problem strictly convex.
const PROJECTION_INPUT_WEIGHT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundOptions {
    pub rounds: usize,
    /// Early exit once the disagreement is at most this.
    pub tol: f64,
    /// Penalty of the elastic fallback; `None` turns local infeasibility
    /// into an error.
    pub elastic: Option<f64>,
}

impl RoundOptions {
    pub fn new(rounds: usize) -> Self {
        Self { rounds, tol: DISAGREEMENT_TOL, elastic: None }
    }
}

/// How the auxiliary variables reached their value for a round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Step {
    /// Values at entry (possibly projected onto the feasible set).
    Start { projected: bool },
    /// Forward-Euler step of the update law.
    Explicit,
    /// Backward-Euler step with the same step length.
    Implicit,
    /// Forward-Euler step scaled by `scale`, on the elastic problems.
    Elastic { scale: f64 },
}

impl Step {
    pub fn label(&self) -> String {
        match self {
            Step::Start { projected: false } => "start".into(),
            Step::Start { projected: true } => "start_projected".into(),
            Step::Explicit => "explicit".into(),
            Step::Implicit => "implicit".into(),
            Step::Elastic { scale } => format!("elastic_{scale}"),
        }
    }
}

/// Diagnostics of one inner round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub disagreement: f64,
    pub u: Vec<DVector<f64>>,
    pub step: Step,
    /// Largest elastic slack among the local problems (0 when all are feasible).
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusOutcome {
    pub u: Vec<DVector<f64>>,
    pub disagreement: f64,
    pub rounds: usize,
    pub slack: f64,
}

/// Extra row generator for a local problem (used by the altruistic variant).
pub type ExtraRow<'a> = &'a dyn Fn(usize) -> Result<Option<(DVector<f64>, f64)>, SolveError>;

fn extra_row(extra: Option<ExtraRow<'_>>, i: usize) -> Result<Option<(DVector<f64>, f64)>, SolveError> {
    match extra {
        Some(f) => f(i),
        None => Ok(None),
    }
}

fn solve_all(
    sys: &MultiAgentSystem,
    coeffs: &[Option<CcbfCoefficients>],
    u_ref: &[DVector<f64>],
    cs: &mut ConsensusState,
    extra: Option<ExtraRow<'_>>,
    elastic: Option<f64>,
) -> Result<Vec<LocalSolution>, SolveError> {
    (0..sys.agent_count()).map(|i| solve_local_with(sys, i, coeffs, &u_ref[i], cs, extra_row(extra, i)?, elastic)).collect()
}

/// Moves `y` to the nearest point (Euclidean) at which every local problem
/// is feasible. Returns `false`, leaving `y` alone, if there is no such point.
///
/// Unlike the local solves this couples all agents in one problem over the
/// stacked inputs and all auxiliary variables.
pub fn project_feasible(
    sys: &MultiAgentSystem,
    coeffs: &[Option<CcbfCoefficients>],
    u_ref: &[DVector<f64>],
    cs: &mut ConsensusState,
    extra: Option<ExtraRow<'_>>,
) -> Result<bool, SolveError> {
    joint_step(sys, coeffs, u_ref, cs, extra, PROJECTION_INPUT_WEIGHT, 1.0)
}

/// Backward-Euler step of the update law: `y⁺` minimizes the summed local
/// objectives plus `‖y⁺ − y‖² / (2 k₀ dt)`. Returns `false` if no `y` makes
/// every local problem feasible.
pub fn implicit_step(
    sys: &MultiAgentSystem,
    coeffs: &[Option<CcbfCoefficients>],
    u_ref: &[DVector<f64>],
    cs: &mut ConsensusState,
    extra: Option<ExtraRow<'_>>,
) -> Result<bool, SolveError> {
    let weight = 1.0 / (cs.k0 * cs.inner_dt);
    joint_step(sys, coeffs, u_ref, cs, extra, 1.0, weight)
}

// min ½ wu‖u − u_ref‖² + ½ wy‖y⁺ − y‖² over all local rows.
fn joint_step(
    sys: &MultiAgentSystem,
    coeffs: &[Option<CcbfCoefficients>],
    u_ref: &[DVector<f64>],
    cs: &mut ConsensusState,
    extra: Option<ExtraRow<'_>>,
    input_weight: f64,
    y_weight: f64,
) -> Result<bool, SolveError> {
    let (offsets, input_len) = sys.input_offsets();
    let mut columns = Vec::new();
    for g in &cs.groups {
        let start = input_len + columns.iter().map(Vec::len).sum::<usize>();
        columns.push((start..start + g.members.len()).collect::<Vec<usize>>());
    }
    let dim = input_len + columns.iter().map(Vec::len).sum::<usize>();
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    let block_row = |i: usize, a: &DVector<f64>| -> Result<DVector<f64>, SolveError> {
        let m = sys.agents[i].input_dim();
        if a.len() != m {
            return Err(ModelError::Dimension { what: "local row", expected: m, got: a.len() }.into());
        }
        let mut row = DVector::zeros(dim);
        row.rows_mut(offsets[i], m).copy_from(a);
        Ok(row)
    };
    for i in 0..sys.agent_count() {
        let m = sys.agents[i].input_dim();
        for (g, cols) in cs.groups.iter().zip(&columns) {
            let Some(pos) = g.position(i) else { continue };
            let Some(Some(cj)) = coeffs.get(g.owner) else { continue };
            let Some(t) = cj.term(i) else { continue };
            let mut row = block_row(i, &t.a)?;
            for &col in cols {
                row[col] -= 1.0;
            }
            row[cols[pos]] += cols.len() as f64;
            rows.push((row, t.b));
        }
        if let Some(Some(own)) = coeffs.get(i) {
            let (lgh, scalar) = own.first_order_row();
            let lgh = if lgh.len() == m { lgh } else { DVector::zeros(m) };
            rows.push((block_row(i, &lgh)?, scalar));
        }
        if let Some((a, off)) = extra_row(extra, i)? {
            rows.push((block_row(i, &a)?, off));
        }
    }
    let mut a = DMatrix::zeros(rows.len(), dim);
    let mut c = DVector::zeros(rows.len());
    for (r, (row, off)) in rows.iter().enumerate() {
        a.set_row(r, &row.transpose());
        c[r] = *off;
    }
    let mut hessian = DMatrix::identity(dim, dim) * y_weight;
    let mut linear = DVector::zeros(dim);
    let target = sys.stack_inputs(u_ref);
    for k in 0..input_len {
        hessian[(k, k)] = input_weight;
        linear[k] = -input_weight * target[k];
    }
    for (g, cols) in cs.groups.iter().zip(&columns) {
        for (&col, &y) in cols.iter().zip(&g.y) {
            linear[col] = -y_weight * y;
        }
    }
    let qp = QuadraticProgram::new(hessian, linear, a, c)?;
    let sol = solve_qp_warm(&qp, None)?;
    if sol.status != QpStatus::Optimal {
        return Ok(false);
    }
    for (g, cols) in cs.groups.iter_mut().zip(&columns) {
        for (y, &col) in g.y.iter_mut().zip(cols) {
            *y = sol.z[col];
        }
    }
    Ok(true)
}

/// Local solves at the current `y`, projecting `y` first if some local
/// problem is infeasible there. `Ok(None)` if no feasible `y` exists.
fn solve_feasible(
    sys: &MultiAgentSystem,
    coeffs: &[Option<CcbfCoefficients>],
    u_ref: &[DVector<f64>],
    cs: &mut ConsensusState,
    extra: Option<ExtraRow<'_>>,
) -> Result<Option<(Vec<LocalSolution>, bool)>, SolveError> {
    match solve_all(sys, coeffs, u_ref, cs, extra, None) {
        Ok(sols) => return Ok(Some((sols, false))),
        Err(SolveError::LocalInfeasible { .. }) => {}
        Err(e) => return Err(e),
    }
    if !project_feasible(sys, coeffs, u_ref, cs, extra)? {
        return Ok(None);
    }
    match solve_all(sys, coeffs, u_ref, cs, extra, None) {
        Ok(sols) => Ok(Some((sols, true))),
        // The projection lands on the boundary; a solve can still miss it by
        // round-off.
        Err(SolveError::LocalInfeasible { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn store_multipliers(cs: &mut ConsensusState, sols: &[LocalSolution]) -> Result<(), ModelError> {
    for s in sols {
        for &(owner, value) in &s.multipliers {
            cs.set_c(owner, s.agent, value)?;
        }
    }
    Ok(())
}

fn max_slack(sols: &[LocalSolution]) -> f64 {
    sols.iter().map(|s| s.slack).fold(0.0, f64::max)
}

fn total_objective(sols: &[LocalSolution]) -> f64 {
    sols.iter().map(|s| s.objective).sum()
}

fn snapshot(cs: &ConsensusState) -> Vec<Vec<f64>> {
    cs.groups.iter().map(|g| g.y.clone()).collect()
}

fn restore(cs: &mut ConsensusState, ys: &[Vec<f64>]) {
    for (g, y) in cs.groups.iter_mut().zip(ys) {
        g.y.clone_from(y);
    }
}

/// Runs up to `opts.rounds` bulk-synchronous rounds: all local solves, then
/// one auxiliary update. Returns the inputs of the last round.
///
/// The update is the forward-Euler step of the auxiliary dynamics when every
/// local problem stays feasible, the summed local objectives do not increase
/// and the next Euler step differs from this one by at most half its length.
/// Otherwise the round takes the backward-Euler step ([`implicit_step`]) of
/// the same length. The rounds stop early once `y` no longer moves.
///
/// If no `y` makes every local problem feasible, the rounds use the elastic
/// local problems of `opts.elastic` (or fail without it) with forward-Euler
/// steps halved up to [`MAX_HALVINGS`] times.
pub fn run_rounds(
    sys: &MultiAgentSystem,
    coeffs: &[Option<CcbfCoefficients>],
    u_ref: &[DVector<f64>],
    cs: &mut ConsensusState,
    opts: &RoundOptions,
    extra: Option<ExtraRow<'_>>,
    mut observe: impl FnMut(&RoundRecord),
) -> Result<ConsensusOutcome, SolveError> {
    if opts.rounds == 0 {
        return Err(ModelError::InvalidParameter { name: "rounds".into(), reason: "must be at least 1".into() }.into());
    }
    sys.check_inputs(u_ref)?;
    let entry = snapshot(cs);
    let (mut sols, mut step, elastic) = match solve_feasible(sys, coeffs, u_ref, cs, extra)? {
        Some((sols, projected)) => (sols, Step::Start { projected }, None),
        None => {
            let Some(penalty) = opts.elastic else {
                let agent = first_infeasible(sys, coeffs, u_ref, cs, extra)?;
                return Err(SolveError::LocalInfeasible { agent });
            };
            restore(cs, &entry);
            (solve_all(sys, coeffs, u_ref, cs, extra, Some(penalty))?, Step::Start { projected: false }, Some(penalty))
        }
    };
    store_multipliers(cs, &sols)?;
    let mut scale = 1.0_f64;
    for round in 1..=opts.rounds {
        let u: Vec<DVector<f64>> = sols.iter().map(|s| s.u.clone()).collect();
        let disagreement = cs.disagreement();
        let slack = max_slack(&sols);
        observe(&RoundRecord { round, disagreement, u: u.clone(), step, slack });
        if (disagreement <= opts.tol && slack == 0.0) || round == opts.rounds {
            return Ok(ConsensusOutcome { u, disagreement, rounds: round, slack });
        }
        let base = snapshot(cs);
        let mut probe = cs.clone();
        update_aux(&mut probe);
        let delta: Vec<Vec<f64>> = probe.groups.iter().zip(&base).map(|(g, b)| g.y.iter().zip(b).map(|(n, o)| n - o).collect()).collect();
        let reference = total_objective(&sols);
        let allowed = reference + 1e-12 * (1.0 + reference.abs());
        let trial = |s: f64| -> Vec<Vec<f64>> { base.iter().zip(&delta).map(|(b, d)| b.iter().zip(d).map(|(b, d)| b + s * d).collect()).collect() };
        let mut accepted = None;
        if elastic.is_none() {
            restore(cs, &trial(1.0));
            let mut best = None;
            if let Ok(next) = solve_all(sys, coeffs, u_ref, cs, extra, None) {
                // Accept only while the gradient changes little over the
                // step; stiff or kinked rounds go implicit.
                let mut probe = cs.clone();
                store_multipliers(&mut probe, &next)?;
                let before = snapshot(&probe);
                update_aux(&mut probe);
                let change: f64 = probe.groups.iter().zip(&before).zip(&delta).flat_map(|((g, b), d)| g.y.iter().zip(b).zip(d).map(|((n, o), d)| (n - o - d).powi(2))).sum();
                let length: f64 = delta.iter().flatten().map(|d| d * d).sum();
                if change <= 0.25 * length && total_objective(&next) <= allowed {
                    best = Some((next, Step::Explicit, snapshot(cs)));
                }
            }
            if let Some((next, kind, y)) = best {
                restore(cs, &y);
                accepted = Some((next, kind));
            } else {
                restore(cs, &base);
                if implicit_step(sys, coeffs, u_ref, cs, extra)? {
                    if let Some((next, _)) = solve_feasible(sys, coeffs, u_ref, cs, extra)? {
                        accepted = Some((next, Step::Implicit));
                    }
                }
            }
        } else {
            // Start from twice the last accepted scale: most full steps are
            // rejected once the slack is small.
            scale = (2.0 * scale).min(1.0);
            for _ in 0..=MAX_HALVINGS {
                restore(cs, &trial(scale));
                let next = solve_all(sys, coeffs, u_ref, cs, extra, elastic)?;
                if total_objective(&next) <= allowed {
                    accepted = Some((next, Step::Elastic { scale }));
                    break;
                }
                scale *= 0.5;
            }
        }
        let moved = cs.groups.iter().zip(&base).flat_map(|(g, b)| g.y.iter().zip(b).map(|(n, o)| (n - o).abs())).fold(0.0, f64::max);
        let size = base.iter().flatten().fold(1.0_f64, |m, y| m.max(y.abs()));
        match accepted {
            Some((next, kind)) if moved > 4.0 * f64::EPSILON * size => {
                sols = next;
                step = kind;
            }
            _ => {
                restore(cs, &base);
                return Ok(ConsensusOutcome { u, disagreement, rounds: round, slack });
            }
        }
        store_multipliers(cs, &sols)?;
    }
    unreachable!("loop returns on its last round")
}

fn first_infeasible(
    sys: &MultiAgentSystem,
    coeffs: &[Option<CcbfCoefficients>],
    u_ref: &[DVector<f64>],
    cs: &mut ConsensusState,
    extra: Option<ExtraRow<'_>>,
) -> Result<usize, SolveError> {
    for i in 0..sys.agent_count() {
        match solve_local_with(sys, i, coeffs, &u_ref[i], cs, extra_row(extra, i)?, None) {
            Err(SolveError::LocalInfeasible { agent }) => return Ok(agent),
            Err(e) => return Err(e),
            Ok(_) => {}
        }
    }
    Ok(1)
}

/// Plain distributed rounds with the default early-exit threshold.
pub fn run_consensus_round(
    sys: &MultiAgentSystem,
    coeffs: &[Option<CcbfCoefficients>],
    u_nom: &[DVector<f64>],
    cs: &mut ConsensusState,
    rounds: usize,
) -> Result<ConsensusOutcome, SolveError> {
    run_rounds(sys, coeffs, u_nom, cs, &RoundOptions::new(rounds), None, |_| {})
}

//! Tabular MDP over a rectangular grid of cells.
//!
//! Nine deterministic actions (the 8-connected moves plus stay). A move that
//! would leave the grid or enter a blocked cell resolves to staying put, so
//! every `(state, action)` pair has exactly one successor. Terminal cells are
//! absorbing: a trajectory that reaches one ends there, its value is pinned to
//! the cell reward and it passes no visitation mass onwards.
//!
//! Two soft Bellman solvers share the same backup
//! `V(s) = r(s) + log sum_a exp(gamma * V(T(s, a)))`:
//!
//! - [`soft_value_iteration`] returns a stationary Boltzmann policy.
//! - [`soft_value_iteration_horizon`] keeps the time-indexed policies of a
//!   finite horizon `H`. Its `log_partition` map `V_H` satisfies
//!   `dV_H(s0)/dr = sum_t gamma^t P(s_t = . | s0)` exactly, which is what makes
//!   `mu_D - E[mu]` the exact gradient of the MaxEnt objective
//!   [`maxent_log_likelihood`].

use rand::Rng;

use crate::error::{Error, Result};

pub const N_ACTIONS: usize = 9;
pub const STAY: usize = 4;

/// `(d_row, d_col)` of each action; index 4 is stay.
pub const ACTIONS: [(i32, i32); N_ACTIONS] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 0),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Dense row-major scalar grid. Row 0 is the top (north) edge.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

/// Per-cell reward.
pub type RewardMap = GridMap;
/// Per-cell (discounted) visitation mass.
pub type SvfMap = GridMap;

impl GridMap {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self {
            rows,
            cols,
            values: vec![v; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} grid",
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    /// Unit mass on one cell.
    pub fn point_mass(rows: usize, cols: usize, cell: usize) -> Self {
        let mut m = Self::zeros(rows, cols);
        m.values[cell] = 1.0;
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.values[row * self.cols + col] = v;
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn same_shape(&self, other: &GridMap) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn max_abs_diff(&self, other: &GridMap) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Grid MDP: deterministic 9-action transitions, blocked cells, optional
/// absorbing terminal cells and a discount.
#[derive(Debug, Clone)]
pub struct GridMdp {
    rows: usize,
    cols: usize,
    gamma: f64,
    blocked: Vec<bool>,
    terminal: Vec<bool>,
    next: Vec<usize>,
}

impl GridMdp {
    /// Open grid, no blocked or terminal cells.
    pub fn open(rows: usize, cols: usize, gamma: f64) -> Result<Self> {
        Self::new(rows, cols, gamma, vec![false; rows * cols], vec![false; rows * cols])
    }

    pub fn new(
        rows: usize,
        cols: usize,
        gamma: f64,
        blocked: Vec<bool>,
        terminal: Vec<bool>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument("grid must have at least one cell".into()));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("gamma {gamma} outside [0, 1]")));
        }
        let n = rows * cols;
        if blocked.len() != n || terminal.len() != n {
            return Err(Error::ShapeMismatch("blocked/terminal masks do not match grid".into()));
        }
        let mut next = Vec::with_capacity(n * N_ACTIONS);
        for s in 0..n {
            let (r, c) = ((s / cols) as i32, (s % cols) as i32);
            for &(dr, dc) in &ACTIONS {
                let (nr, nc) = (r + dr, c + dc);
                let inside = nr >= 0 && nc >= 0 && (nr as usize) < rows && (nc as usize) < cols;
                let t = if inside {
                    let cand = nr as usize * cols + nc as usize;
                    if blocked[cand] {
                        s
                    } else {
                        cand
                    }
                } else {
                    s
                };
                next.push(t);
            }
        }
        Ok(Self {
            rows,
            cols,
            gamma,
            blocked,
            terminal,
            next,
        })
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("gamma {gamma} outside [0, 1]")));
        }
        self.gamma = gamma;
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn n_states(&self) -> usize {
        self.rows * self.cols
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn is_blocked(&self, s: usize) -> bool {
        self.blocked[s]
    }

    pub fn terminal_mask(&self) -> &[bool] {
        &self.terminal
    }

    #[inline]
    pub fn next_state(&self, s: usize, a: usize) -> usize {
        self.next[s * N_ACTIONS + a]
    }

    fn check_map(&self, map: &GridMap, what: &str) -> Result<()> {
        if map.rows != self.rows || map.cols != self.cols {
            return Err(Error::ShapeMismatch(format!(
                "{what} is {}x{}, MDP is {}x{}",
                map.rows, map.cols, self.rows, self.cols
            )));
        }
        Ok(())
    }

    /// One soft Bellman backup. Writes `V_new` into `out` and, if requested,
    /// the Boltzmann action distribution into `policy`.
    fn backup(
        &self,
        reward: &[f64],
        values: &[f64],
        out: &mut [f64],
        mut policy: Option<&mut [f64]>,
    ) {
        let g = self.gamma;
        let mut q = [0.0f64; N_ACTIONS];
        for s in 0..self.n_states() {
            if self.terminal[s] {
                out[s] = reward[s];
                if let Some(p) = policy.as_deref_mut() {
                    let row = &mut p[s * N_ACTIONS..(s + 1) * N_ACTIONS];
                    row.fill(0.0);
                    row[STAY] = 1.0;
                }
                continue;
            }
            let base = s * N_ACTIONS;
            let mut m = f64::NEG_INFINITY;
            for a in 0..N_ACTIONS {
                q[a] = g * values[self.next[base + a]];
                m = m.max(q[a]);
            }
            let mut z = 0.0;
            for qa in q.iter_mut() {
                *qa = (*qa - m).exp();
                z += *qa;
            }
            out[s] = reward[s] + m + z.ln();
            if let Some(p) = policy.as_deref_mut() {
                let inv = 1.0 / z;
                for a in 0..N_ACTIONS {
                    p[base + a] = q[a] * inv;
                }
            }
        }
    }
}

/// Stochastic policy: one distribution over the nine actions per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    rows: usize,
    cols: usize,
    probs: Vec<f64>,
}

impl PolicyTable {
    pub fn uniform(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            probs: vec![1.0 / N_ACTIONS as f64; rows * cols * N_ACTIONS],
        }
    }

    /// Deterministic policy choosing `action` everywhere.
    pub fn constant(rows: usize, cols: usize, action: usize) -> Self {
        let mut probs = vec![0.0; rows * cols * N_ACTIONS];
        for s in 0..rows * cols {
            probs[s * N_ACTIONS + action] = 1.0;
        }
        Self { rows, cols, probs }
    }

    pub fn from_vec(rows: usize, cols: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != rows * cols * N_ACTIONS {
            return Err(Error::ShapeMismatch("policy table size".into()));
        }
        Ok(Self { rows, cols, probs })
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * N_ACTIONS + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * N_ACTIONS..(s + 1) * N_ACTIONS]
    }

    pub fn n_states(&self) -> usize {
        self.rows * self.cols
    }

    /// Most probable action per cell (lowest index on ties).
    pub fn greedy_action(&self, s: usize) -> usize {
        let row = self.row(s);
        let mut best = 0;
        for a in 1..N_ACTIONS {
            if row[a] > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn max_abs_diff(&self, other: &PolicyTable) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A policy that may depend on the time step.
pub trait PolicySchedule {
    fn policy_at(&self, t: usize) -> &PolicyTable;
}

impl PolicySchedule for PolicyTable {
    fn policy_at(&self, _t: usize) -> &PolicyTable {
        self
    }
}

/// Output of the stationary solver.
#[derive(Debug, Clone)]
pub struct SoftSolution {
    pub values: GridMap,
    pub policy: PolicyTable,
}

/// Output of the finite-horizon solver.
#[derive(Debug, Clone)]
pub struct HorizonPolicy {
    horizon: usize,
    /// `policies[t]` acts at step `t`, for `t < horizon - 1`.
    policies: Vec<PolicyTable>,
    /// `V_H`: soft value of an `H`-state trajectory from each start cell.
    pub log_partition: GridMap,
}

impl HorizonPolicy {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn policies(&self) -> &[PolicyTable] {
        &self.policies
    }
}

impl PolicySchedule for HorizonPolicy {
    fn policy_at(&self, t: usize) -> &PolicyTable {
        &self.policies[t.min(self.policies.len().saturating_sub(1))]
    }
}

/// Stationary soft value iteration.
///
/// Starting from `V_1 = r` the soft backup is applied `n_iters` times; the
/// returned policy is the Boltzmann distribution
/// `pi(a|s) ∝ exp(r(s) + gamma * V(s') - V(s))` over the resulting values.
pub fn soft_value_iteration(mdp: &GridMdp, reward: &RewardMap, n_iters: usize) -> Result<SoftSolution> {
    if n_iters == 0 {
        return Err(Error::InvalidArgument("soft value iteration needs n_iters >= 1".into()));
    }
    mdp.check_map(reward, "reward")?;
    if !reward.is_finite() {
        return Err(Error::NonFinite("reward map".into()));
    }
    let n = mdp.n_states();
    let r = reward.values();
    let mut v = r.to_vec();
    let mut tmp = vec![0.0; n];
    for _ in 0..n_iters {
        mdp.backup(r, &v, &mut tmp, None);
        std::mem::swap(&mut v, &mut tmp);
    }
    let mut probs = vec![0.0; n * N_ACTIONS];
    mdp.backup(r, &v, &mut tmp, Some(&mut probs));
    Ok(SoftSolution {
        values: GridMap::from_vec(mdp.rows, mdp.cols, v)?,
        policy: PolicyTable {
            rows: mdp.rows,
            cols: mdp.cols,
            probs,
        },
    })
}

/// Finite-horizon soft value iteration over trajectories of `horizon` states.
pub fn soft_value_iteration_horizon(
    mdp: &GridMdp,
    reward: &RewardMap,
    horizon: usize,
) -> Result<HorizonPolicy> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    mdp.check_map(reward, "reward")?;
    if !reward.is_finite() {
        return Err(Error::NonFinite("reward map".into()));
    }
    let n = mdp.n_states();
    let r = reward.values();
    let mut v = r.to_vec();
    let mut tmp = vec![0.0; n];
    // built back to front: the policy computed from V_k acts with k steps left
    let mut policies = Vec::with_capacity(horizon.saturating_sub(1));
    for _ in 1..horizon {
        let mut probs = vec![0.0; n * N_ACTIONS];
        mdp.backup(r, &v, &mut tmp, Some(&mut probs));
        std::mem::swap(&mut v, &mut tmp);
        policies.push(PolicyTable {
            rows: mdp.rows,
            cols: mdp.cols,
            probs,
        });
    }
    policies.reverse();
    Ok(HorizonPolicy {
        horizon,
        policies,
        log_partition: GridMap::from_vec(mdp.rows, mdp.cols, v)?,
    })
}

/// Discounted expected state visitation `sum_{t < horizon} gamma^t D_t` with
/// `D_0 = initial`. Mass on terminal cells is counted once and not propagated.
pub fn expected_svf<P: PolicySchedule + ?Sized>(
    mdp: &GridMdp,
    policy: &P,
    initial: &GridMap,
    horizon: usize,
) -> Result<SvfMap> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    mdp.check_map(initial, "initial distribution")?;
    let n = mdp.n_states();
    let mut d = initial.values().to_vec();
    let mut nd = vec![0.0; n];
    let mut total = vec![0.0; n];
    let mut disc = 1.0;
    for t in 0..horizon {
        for (acc, &x) in total.iter_mut().zip(&d) {
            *acc += disc * x;
        }
        if t + 1 == horizon {
            break;
        }
        let pi = policy.policy_at(t);
        if pi.n_states() != n {
            return Err(Error::ShapeMismatch("policy does not match MDP".into()));
        }
        nd.fill(0.0);
        for s in 0..n {
            let mass = d[s];
            if mass == 0.0 || mdp.terminal[s] {
                continue;
            }
            let row = pi.row(s);
            let base = s * N_ACTIONS;
            for a in 0..N_ACTIONS {
                nd[mdp.next[base + a]] += mass * row[a];
            }
        }
        std::mem::swap(&mut d, &mut nd);
        disc *= mdp.gamma;
    }
    GridMap::from_vec(mdp.rows, mdp.cols, total)
}

/// `dL_D/dR = mu_D - E[mu]`, the reward-map gradient handed to backprop.
pub fn maxent_gradient(expert_svf: &SvfMap, expected: &SvfMap) -> Result<GridMap> {
    if !expert_svf.same_shape(expected) {
        return Err(Error::ShapeMismatch(format!(
            "expert SVF {}x{} vs expected SVF {}x{}",
            expert_svf.rows, expert_svf.cols, expected.rows, expected.cols
        )));
    }
    let values = expert_svf
        .values
        .iter()
        .zip(&expected.values)
        .map(|(a, b)| a - b)
        .collect();
    GridMap::from_vec(expert_svf.rows, expert_svf.cols, values)
}

/// MaxEnt objective of one demonstration:
/// `L_D = sum_s mu_D(s) r(s) - V_H(start)`.
///
/// Its gradient with respect to the reward map is exactly
/// `mu_D - E[mu]` when `E[mu]` is the SVF of the same horizon policy from
/// `start`. With `gamma = 1` it is the log-probability of the demonstration.
pub fn maxent_log_likelihood(
    reward: &RewardMap,
    expert_svf: &SvfMap,
    solution: &HorizonPolicy,
    start: usize,
) -> Result<f64> {
    if !reward.same_shape(expert_svf) || !reward.same_shape(&solution.log_partition) {
        return Err(Error::ShapeMismatch("likelihood inputs".into()));
    }
    let fit: f64 = reward.values.iter().zip(&expert_svf.values).map(|(r, m)| r * m).sum();
    Ok(fit - solution.log_partition.values[start])
}

/// Per-cell feature vectors, `n_features` values per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFeatures {
    n_cells: usize,
    n_features: usize,
    data: Vec<f64>,
}

impl CellFeatures {
    pub fn new(n_cells: usize, n_features: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_cells * n_features {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values for {n_cells} cells x {n_features} features",
                data.len()
            )));
        }
        Ok(Self {
            n_cells,
            n_features,
            data,
        })
    }

    /// One indicator feature per cell.
    pub fn one_hot(n_cells: usize) -> Self {
        let mut data = vec![0.0; n_cells * n_cells];
        for i in 0..n_cells {
            data[i * n_cells + i] = 1.0;
        }
        Self {
            n_cells,
            n_features: n_cells,
            data,
        }
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn cell(&self, s: usize) -> &[f64] {
        &self.data[s * self.n_features..(s + 1) * self.n_features]
    }

    /// `r(s) = theta . f(s)`.
    pub fn linear_reward(&self, theta: &[f64], rows: usize, cols: usize) -> Result<RewardMap> {
        if theta.len() != self.n_features || rows * cols != self.n_cells {
            return Err(Error::ShapeMismatch("theta/features".into()));
        }
        let values = (0..self.n_cells)
            .map(|s| self.cell(s).iter().zip(theta).map(|(f, w)| f * w).sum())
            .collect();
        GridMap::from_vec(rows, cols, values)
    }

    /// `sum_s svf(s) f(s)`.
    pub fn weighted_sum(&self, svf: &SvfMap) -> Result<Vec<f64>> {
        if svf.len() != self.n_cells {
            return Err(Error::ShapeMismatch("SVF/features".into()));
        }
        let mut out = vec![0.0; self.n_features];
        for (s, &mu) in svf.values.iter().enumerate() {
            if mu == 0.0 {
                continue;
            }
            for (o, f) in out.iter_mut().zip(self.cell(s)) {
                *o += mu * f;
            }
        }
        Ok(out)
    }
}

/// Feature expectations `f_bar(pi) = sum_s mu_s f(s)` with `mu` the
/// discounted SVF of `policy` from `initial` over `horizon` steps.
pub fn feature_expectations<P: PolicySchedule + ?Sized>(
    mdp: &GridMdp,
    policy: &P,
    features: &CellFeatures,
    initial: &GridMap,
    horizon: usize,
) -> Result<Vec<f64>> {
    if features.n_cells != mdp.n_states() {
        return Err(Error::ShapeMismatch(format!(
            "features cover {} cells, MDP has {}",
            features.n_cells,
            mdp.n_states()
        )));
    }
    let svf = expected_svf(mdp, policy, initial, horizon)?;
    features.weighted_sum(&svf)
}

/// Empirical discounted visitation of a cell sequence, stopping after the
/// first terminal cell.
pub fn demo_svf(mdp: &GridMdp, cells: &[usize]) -> Result<SvfMap> {
    let mut svf = GridMap::zeros(mdp.rows, mdp.cols);
    let mut disc = 1.0;
    for &c in cells {
        if c >= mdp.n_states() {
            return Err(Error::InvalidArgument(format!("demo cell {c} outside grid")));
        }
        svf.values[c] += disc;
        if mdp.terminal[c] {
            break;
        }
        disc *= mdp.gamma;
    }
    Ok(svf)
}

/// Linear MaxEnt IRL by gradient ascent on `sum_D L_D(theta)` with
/// `r = theta . f`. Each demonstration is a cell sequence; its horizon is its
/// length and its start is its first cell.
pub fn linear_maxent_irl(
    mdp: &GridMdp,
    demos: &[Vec<usize>],
    features: &CellFeatures,
    learning_rate: f64,
    iters: usize,
) -> Result<Vec<f64>> {
    if demos.is_empty() || demos.iter().any(|d| d.is_empty()) {
        return Err(Error::InvalidArgument("linear MaxEnt IRL needs non-empty demonstrations".into()));
    }
    if features.n_cells != mdp.n_states() {
        return Err(Error::ShapeMismatch("features do not cover the grid".into()));
    }
    let demo_mu: Vec<SvfMap> = demos.iter().map(|d| demo_svf(mdp, d)).collect::<Result<_>>()?;
    let mut theta = vec![0.0; features.n_features];
    for _ in 0..iters {
        let reward = features.linear_reward(&theta, mdp.rows, mdp.cols)?;
        let mut grad = vec![0.0; features.n_features];
        for (demo, mu_d) in demos.iter().zip(&demo_mu) {
            let h = demo.len();
            let sol = soft_value_iteration_horizon(mdp, &reward, h)?;
            let init = GridMap::point_mass(mdp.rows, mdp.cols, demo[0]);
            let mu = expected_svf(mdp, &sol, &init, h)?;
            let g = features.weighted_sum(&maxent_gradient(mu_d, &mu)?)?;
            for (acc, gi) in grad.iter_mut().zip(g) {
                *acc += gi;
            }
        }
        let scale = learning_rate / demos.len() as f64;
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t += scale * g;
        }
        let norm = theta.iter().fold(0.0f64, |m, t| m.max(t.abs()));
        if !norm.is_finite() || norm > 1e6 {
            return Err(Error::Diverged(format!("|theta|_inf = {norm}")));
        }
    }
    Ok(theta)
}

/// Follows the most probable action from `start` for at most `max_steps`
/// moves, stopping early on terminal cells or when the chosen action is stay.
pub fn greedy_rollout(mdp: &GridMdp, policy: &PolicyTable, start: usize, max_steps: usize) -> Vec<usize> {
    let mut path = vec![start];
    let mut s = start;
    for _ in 0..max_steps {
        if mdp.terminal[s] {
            break;
        }
        let a = policy.greedy_action(s);
        let n = mdp.next_state(s, a);
        if n == s {
            break;
        }
        path.push(n);
        s = n;
    }
    path
}

/// Samples a trajectory of at most `horizon` states from a policy schedule.
pub fn sample_trajectory<P: PolicySchedule + ?Sized, R: Rng>(
    mdp: &GridMdp,
    policy: &P,
    start: usize,
    horizon: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut path = vec![start];
    let mut s = start;
    for t in 0..horizon.saturating_sub(1) {
        if mdp.terminal[s] {
            break;
        }
        let row = policy.policy_at(t).row(s);
        let mut u: f64 = rng.gen();
        let mut a = N_ACTIONS - 1;
        for (i, &p) in row.iter().enumerate() {
            if u < p {
                a = i;
                break;
            }
            u -= p;
        }
        s = mdp.next_state(s, a);
        path.push(s);
    }
    path
}

//! Independent reference computations and the self-check suites built on
//! them: exhaustive path enumeration on tiny grids and central finite
//! differences through the MDP, the network and the full training chain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dockworld::{build_world, VesselState, WorldConfig};
use crate::error::Result;
use crate::expert_gen::Trajectory;
use crate::featurizer::{FeatureStack, GridSpec, N_CHANNELS};
use crate::gridmdp::{
    demo_svf, expected_svf, linear_maxent_irl, maxent_gradient, soft_value_iteration,
    soft_value_iteration_horizon, CellFeatures, GridMap, GridMdp, PolicySchedule, RewardMap, SvfMap, N_ACTIONS,
};
use crate::rewardnet::{backward, forward, init_params, NetParams};
use crate::trainer::{prepare_sample, sample_log_likelihood, train_step_on, TrainConfig};

/// One enumerated action sequence and the states it visits. Sequences stop
/// at a terminal cell or after `horizon` states.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumeratedPath {
    pub actions: Vec<usize>,
    pub states: Vec<usize>,
}

/// Every action sequence from `start`, depth first in action order.
pub fn enumerate_paths(mdp: &GridMdp, start: usize, horizon: usize) -> Vec<EnumeratedPath> {
    fn rec(mdp: &GridMdp, horizon: usize, cur: &mut EnumeratedPath, out: &mut Vec<EnumeratedPath>) {
        let s = *cur.states.last().unwrap();
        if cur.states.len() == horizon || mdp.is_terminal(s) {
            out.push(cur.clone());
            return;
        }
        for a in 0..N_ACTIONS {
            cur.actions.push(a);
            cur.states.push(mdp.next_state(s, a));
            rec(mdp, horizon, cur, out);
            cur.actions.pop();
            cur.states.pop();
        }
    }
    let mut out = Vec::new();
    if horizon == 0 {
        return out;
    }
    let mut cur = EnumeratedPath {
        actions: Vec::new(),
        states: vec![start],
    };
    rec(mdp, horizon, &mut cur, &mut out);
    out
}

/// `P(path) ∝ exp(sum of rewards along the path)`.
pub fn maxent_path_probabilities(paths: &[EnumeratedPath], reward: &RewardMap) -> Vec<f64> {
    let returns: Vec<f64> = paths
        .iter()
        .map(|p| p.states.iter().map(|&s| reward.values()[s]).sum())
        .collect();
    let m = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = returns.iter().map(|r| (r - m).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter().map(|x| x / z).collect()
}

/// Probability of each path when actions are drawn from `policy`.
pub fn policy_path_probabilities<P: PolicySchedule + ?Sized>(paths: &[EnumeratedPath], policy: &P) -> Vec<f64> {
    paths
        .iter()
        .map(|p| {
            p.actions
                .iter()
                .enumerate()
                .map(|(t, &a)| policy.policy_at(t).prob(p.states[t], a))
                .product()
        })
        .collect()
}

/// Discounted visitation `sum_paths P(path) sum_k gamma^k [s_k = s]`.
pub fn enumerated_svf(mdp: &GridMdp, paths: &[EnumeratedPath], probs: &[f64]) -> SvfMap {
    let mut svf = GridMap::zeros(mdp.rows(), mdp.cols());
    for (p, &w) in paths.iter().zip(probs) {
        let mut disc = 1.0;
        for &s in &p.states {
            svf.values_mut()[s] += w * disc;
            disc *= mdp.gamma();
        }
    }
    svf
}

/// `(f(x + h) - f(x - h)) / 2h`.
pub fn central_difference<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Values smaller than this are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl SuiteResult {
    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn random_map(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> GridMap {
    let v = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    GridMap::from_vec(rows, cols, v).expect("shape")
}

/// Random MDP on `rows x cols`: possibly one blocked and one terminal cell,
/// neither at `start`.
fn random_mdp(rows: usize, cols: usize, gamma: f64, rng: &mut ChaCha8Rng) -> (GridMdp, usize) {
    let n = rows * cols;
    let start = rng.gen_range(0..n);
    let mut blocked = vec![false; n];
    let mut terminal = vec![false; n];
    if n > 2 && rng.gen_bool(0.3) {
        let b = (start + 1 + rng.gen_range(0..n - 1)) % n;
        blocked[b] = true;
    }
    if n > 1 && rng.gen_bool(0.5) {
        let t = (start + 1 + rng.gen_range(0..n - 1)) % n;
        if !blocked[t] {
            terminal[t] = true;
        }
    }
    (GridMdp::new(rows, cols, gamma, blocked, terminal).expect("valid mdp"), start)
}

/// Max absolute errors of soft-VI path probabilities (at gamma = 1) and of
/// expected SVF (at a random gamma) against enumeration, over every grid up
/// to `max_side x max_side`, horizons 1..=`max_horizon` and `maps` reward
/// maps each.
pub fn svf_enumeration_errors(max_side: usize, max_horizon: usize, maps: usize, seed: u64) -> Result<(f64, f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut dist_err, mut svf_err, mut cases) = (0.0f64, 0.0f64, 0usize);
    for rows in 1..=max_side {
        for cols in 1..=max_side {
            for horizon in 1..=max_horizon {
                for _ in 0..maps {
                    let reward = random_map(rows, cols, 2.0, &mut rng);

                    let (mdp, start) = random_mdp(rows, cols, 1.0, &mut rng);
                    let sol = soft_value_iteration_horizon(&mdp, &reward, horizon)?;
                    let paths = enumerate_paths(&mdp, start, horizon);
                    let p_ref = maxent_path_probabilities(&paths, &reward);
                    let p_pol = policy_path_probabilities(&paths, &sol);
                    for (a, b) in p_ref.iter().zip(&p_pol) {
                        dist_err = dist_err.max((a - b).abs());
                    }
                    let init = GridMap::point_mass(rows, cols, start);
                    let mu = expected_svf(&mdp, &sol, &init, horizon)?;
                    svf_err = svf_err.max(mu.max_abs_diff(&enumerated_svf(&mdp, &paths, &p_ref)));

                    let gamma = rng.gen_range(0.5..1.0);
                    let mdp = mdp.with_gamma(gamma)?;
                    let sol = soft_value_iteration_horizon(&mdp, &reward, horizon)?;
                    let probs = policy_path_probabilities(&paths, &sol);
                    let mu = expected_svf(&mdp, &sol, &init, horizon)?;
                    svf_err = svf_err.max(mu.max_abs_diff(&enumerated_svf(&mdp, &paths, &probs)));
                    cases += 1;
                }
            }
        }
    }
    Ok((dist_err, svf_err, cases))
}

pub fn suite_svf_enumeration() -> Result<SuiteResult> {
    let (d, s, cases) = svf_enumeration_errors(4, 6, 5, 0x5f5f)?;
    Ok(SuiteResult {
        name: "svf_enumeration",
        passed: d <= 1e-6 && s <= 1e-6,
        detail: format!("{cases} cases, path probability error {d:.2e}, SVF error {s:.2e}"),
    })
}

/// Feature expectations on random 3x3 features against enumeration.
pub fn suite_feature_expectations() -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xfea7);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let (mdp, start) = random_mdp(3, 3, rng.gen_range(0.5..1.0), &mut rng);
        let reward = random_map(3, 3, 1.0, &mut rng);
        let k = 4;
        let data: Vec<f64> = (0..9 * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let feats = CellFeatures::new(9, k, data)?;
        let h = 5;
        let sol = soft_value_iteration_horizon(&mdp, &reward, h)?;
        let init = GridMap::point_mass(3, 3, start);
        let fe = crate::gridmdp::feature_expectations(&mdp, &sol, &feats, &init, h)?;
        let paths = enumerate_paths(&mdp, start, h);
        let probs = policy_path_probabilities(&paths, &sol);
        let mut reference = vec![0.0; k];
        for (p, w) in paths.iter().zip(&probs) {
            let mut disc = 1.0;
            for &s in &p.states {
                for (r, f) in reference.iter_mut().zip(feats.cell(s)) {
                    *r += w * disc * f;
                }
                disc *= mdp.gamma();
            }
        }
        for (a, b) in fe.iter().zip(&reference) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(SuiteResult {
        name: "feature_expectations",
        passed: worst <= 1e-6,
        detail: format!("max error {worst:.2e}"),
    })
}

/// Demonstration log-likelihood as a function of the reward map alone.
fn tabular_log_likelihood(mdp: &GridMdp, reward: &RewardMap, mu_d: &SvfMap, start: usize, horizon: usize) -> Result<f64> {
    let sol = soft_value_iteration_horizon(mdp, reward, horizon)?;
    crate::gridmdp::maxent_log_likelihood(reward, mu_d, &sol, start)
}

/// Worst relative error of `mu_D - E[mu]` against finite differences of the
/// log-likelihood over every reward cell of random 4x4 instances.
pub fn maxent_gradient_fd_error(instances: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (mdp, start) = random_mdp(4, 4, rng.gen_range(0.8..1.0), &mut rng);
        let reward = random_map(4, 4, 1.0, &mut rng);
        let horizon = rng.gen_range(2..=8);
        // random walk demonstration
        let mut cells = vec![start];
        while cells.len() < horizon && !mdp.is_terminal(*cells.last().unwrap()) {
            let s = *cells.last().unwrap();
            cells.push(mdp.next_state(s, rng.gen_range(0..N_ACTIONS)));
        }
        let mu_d = demo_svf(&mdp, &cells)?;
        let sol = soft_value_iteration_horizon(&mdp, &reward, horizon)?;
        let mu = expected_svf(&mdp, &sol, &GridMap::point_mass(4, 4, start), horizon)?;
        let grad = maxent_gradient(&mu_d, &mu)?;
        for s in 0..16 {
            let fd = central_difference(
                |x| {
                    let mut r = reward.clone();
                    r.values_mut()[s] = x;
                    tabular_log_likelihood(&mdp, &r, &mu_d, start, horizon).expect("finite")
                },
                reward.values()[s],
                1e-5,
            );
            worst = worst.max(relative_error(fd, grad.values()[s]));
        }
    }
    Ok(worst)
}

pub fn suite_maxent_gradient_fd() -> Result<SuiteResult> {
    let worst = maxent_gradient_fd_error(10, 0x9d)?;
    Ok(SuiteResult {
        name: "maxent_gradient_fd",
        passed: worst <= 1e-4,
        detail: format!("160 cells, max relative error {worst:.2e}"),
    })
}

/// Finite-difference check of the network gradient of `sum(d * forward(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetFdReport {
    pub checked: usize,
    /// Draws discarded because a perturbation flipped a ReLU.
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
}

pub fn rewardnet_fd_check(n_params: usize, side: usize, h: f64, seed: u64) -> Result<NetFdReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init_params(seed);
    for (p, _) in params.tensors_mut() {
        if p.len() <= 16 {
            p.iter_mut().for_each(|b| *b = rng.gen_range(-0.1..0.1));
        }
    }
    let x = FeatureStack::from_vec(
        N_CHANNELS,
        side,
        (0..N_CHANNELS * side * side).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;
    let d = random_map(side, side, 1.0, &mut rng);
    let objective = |p: &NetParams| -> Result<(f64, Vec<bool>)> {
        let (r, cache) = forward(p, &x)?;
        Ok((r.values().iter().zip(d.values()).map(|(a, b)| a * b).sum(), cache.relu_pattern()))
    };
    let (_, cache) = forward(&params, &x)?;
    let base_pattern = cache.relu_pattern();
    params.zero_grad();
    backward(&mut params, &cache, &d)?;

    let total = params.n_params();
    let mut report = NetFdReport {
        checked: 0,
        skipped_kinks: 0,
        max_rel_error: 0.0,
    };
    let mut attempts = 0;
    while report.checked < n_params && attempts < 20 * n_params {
        attempts += 1;
        let i = rng.gen_range(0..total);
        let w = params.param(i);
        let mut q = params.clone();
        q.set_param(i, w + h);
        let (up, pu) = objective(&q)?;
        q.set_param(i, w - h);
        let (down, pd) = objective(&q)?;
        if pu != base_pattern || pd != base_pattern {
            report.skipped_kinks += 1;
            continue;
        }
        let fd = (up - down) / (2.0 * h);
        report.max_rel_error = report.max_rel_error.max(relative_error(fd, params.grad(i)));
        report.checked += 1;
    }
    Ok(report)
}

pub fn suite_rewardnet_fd() -> Result<SuiteResult> {
    let r = rewardnet_fd_check(256, 8, 1e-4, 0x4e7)?;
    Ok(SuiteResult {
        name: "rewardnet_fd",
        passed: r.checked >= 200 && r.max_rel_error <= 1e-4,
        detail: format!(
            "{} parameters ({} kink draws skipped), max relative error {:.2e}",
            r.checked, r.skipped_kinks, r.max_rel_error
        ),
    })
}

/// Straight constant-speed run from the spawn towards the goal centre; only
/// used as a deterministic sample for gradient checks.
pub fn synthetic_trajectory(seed: u64, n_states: usize, step_m: f64) -> Result<Trajectory> {
    let world = build_world(&WorldConfig::with_seed(seed))?;
    let (gx, gy) = world.goal_center();
    let s0 = world.spawn_pose;
    let (dx, dy) = (gx - s0.x, gy - s0.y);
    let len = dx.hypot(dy);
    let (ux, uy) = (dx / len, dy / len);
    let psi = uy.atan2(ux);
    let speed = step_m / 0.1;
    let states = (0..n_states)
        .map(|k| {
            let d = (k as f64 * step_m).min(len);
            VesselState {
                x: s0.x + ux * d,
                y: s0.y + uy * d,
                psi,
                u: speed,
                v: 0.0,
                r: 0.0,
                t: k as f64 * 0.1,
            }
        })
        .collect();
    Ok(Trajectory { states, world })
}

/// End-to-end check: `d L_D / d theta` from the trainer against central
/// differences of the recomputed log-likelihood, on an 8x8 window.
pub fn end_to_end_fd_check(n_params: usize, h: f64, seed: u64) -> Result<NetFdReport> {
    let traj = synthetic_trajectory(seed, 40, 0.08)?;
    let config = TrainConfig {
        grid: GridSpec::new(8, 2.0)?,
        ..TrainConfig::default()
    };
    let problem = prepare_sample(&traj.world, &traj, 5, &config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe2e);
    let mut params = init_params(seed);
    for (p, _) in params.tensors_mut() {
        if p.len() <= 16 {
            p.iter_mut().for_each(|b| *b = rng.gen_range(-0.1..0.1));
        }
    }
    params.zero_grad();
    train_step_on(&mut params, &problem)?;
    let (_, cache) = forward(&params, &problem.features)?;
    let base_pattern = cache.relu_pattern();

    let total = params.n_params();
    let mut report = NetFdReport {
        checked: 0,
        skipped_kinks: 0,
        max_rel_error: 0.0,
    };
    let mut attempts = 0;
    while report.checked < n_params && attempts < 20 * n_params {
        attempts += 1;
        let i = rng.gen_range(0..total);
        let w = params.param(i);
        let mut q = params.clone();
        q.set_param(i, w + h);
        let pu = forward(&q, &problem.features)?.1.relu_pattern();
        let up = sample_log_likelihood(&q, &problem)?;
        q.set_param(i, w - h);
        let pd = forward(&q, &problem.features)?.1.relu_pattern();
        let down = sample_log_likelihood(&q, &problem)?;
        if pu != base_pattern || pd != base_pattern {
            report.skipped_kinks += 1;
            continue;
        }
        let fd = (up - down) / (2.0 * h);
        // buffers hold the gradient of -L_D
        let analytic = -params.grad(i);
        report.max_rel_error = report.max_rel_error.max(relative_error(fd, analytic));
        report.checked += 1;
    }
    Ok(report)
}

pub fn suite_end_to_end_fd() -> Result<SuiteResult> {
    let r = end_to_end_fd_check(64, 1e-4, 3)?;
    Ok(SuiteResult {
        name: "end_to_end_fd",
        passed: r.checked >= 32 && r.max_rel_error <= 1e-3,
        detail: format!(
            "{} parameters ({} kink draws skipped), max relative error {:.2e}",
            r.checked, r.skipped_kinks, r.max_rel_error
        ),
    })
}

/// Outcome of the linear MaxEnt IRL self-consistency experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearIrlReport {
    pub theta: Vec<f64>,
    pub reached: usize,
    pub starts: usize,
}

/// Steepest ascent on the reward map: step to the best-rewarded successor
/// while it improves on the current cell. Ties go to the lower action index.
pub fn reward_ascent(mdp: &GridMdp, reward: &RewardMap, start: usize, max_steps: usize) -> Vec<usize> {
    let r = reward.values();
    let mut path = vec![start];
    let mut s = start;
    for _ in 0..max_steps {
        if mdp.is_terminal(s) {
            break;
        }
        let mut best = s;
        for a in 0..N_ACTIONS {
            let n = mdp.next_state(s, a);
            if r[n] > r[best] {
                best = n;
            }
        }
        if best == s {
            break;
        }
        path.push(best);
        s = best;
    }
    path
}

/// 5x5 grid with an absorbing goal; demonstrations climb a known linear
/// reward from the four corners. Paths climbing the recovered reward are
/// replayed from the 20 remaining cells.
pub fn linear_irl_experiment() -> Result<LinearIrlReport> {
    let side = 5;
    let n = side * side;
    let goal = 2 * side + 3;
    let (gr, gc) = (goal / side, goal % side);
    let mut terminal = vec![false; n];
    terminal[goal] = true;
    let mdp = GridMdp::new(side, side, 0.95, vec![false; n], terminal)?;

    // features: bias, goal indicator, Chebyshev distance to the goal, row, column
    let k = 5;
    let mut data = Vec::with_capacity(n * k);
    for s in 0..n {
        let (r, c) = (s / side, s % side);
        let cheb = r.abs_diff(gr).max(c.abs_diff(gc)) as f64;
        data.extend([1.0, (s == goal) as u8 as f64, cheb / 4.0, r as f64 / 4.0, c as f64 / 4.0]);
    }
    let feats = CellFeatures::new(n, k, data)?;
    let true_theta = [-1.0, 5.0, -2.0, 0.0, 0.0];
    let true_reward = feats.linear_reward(&true_theta, side, side)?;

    let corners = [0, side - 1, n - side, n - 1];
    let demos: Vec<Vec<usize>> = corners.iter().map(|&s| reward_ascent(&mdp, &true_reward, s, 2 * n)).collect();
    let theta = linear_maxent_irl(&mdp, &demos, &feats, 0.1, 200)?;

    let learned = feats.linear_reward(&theta, side, side)?;
    let held_out: Vec<usize> = (0..n).filter(|s| *s != goal && !corners.contains(s)).collect();
    let reached = held_out
        .iter()
        .filter(|&&s| reward_ascent(&mdp, &learned, s, 2 * n).last() == Some(&goal))
        .count();
    Ok(LinearIrlReport {
        theta,
        reached,
        starts: held_out.len(),
    })
}

pub fn suite_linear_irl() -> Result<SuiteResult> {
    let r = linear_irl_experiment()?;
    Ok(SuiteResult {
        name: "linear_maxent_irl",
        passed: r.reached * 10 >= r.starts * 9,
        detail: format!("{}/{} held-out starts reach the demonstrated goal", r.reached, r.starts),
    })
}

/// Adding a constant to the reward leaves the stationary soft policy alone.
pub fn suite_shift_invariance() -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5417);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let (mdp, _) = random_mdp(4, 4, 1.0, &mut rng);
        let mdp = GridMdp::new(4, 4, 1.0, (0..16).map(|s| mdp.is_blocked(s)).collect(), vec![false; 16])?;
        let r = random_map(4, 4, 1.0, &mut rng);
        let c = rng.gen_range(-5.0..5.0);
        let shifted = GridMap::from_vec(4, 4, r.values().iter().map(|v| v + c).collect())?;
        let a = soft_value_iteration(&mdp, &r, 20)?.policy;
        let b = soft_value_iteration(&mdp, &shifted, 20)?.policy;
        worst = worst.max(a.max_abs_diff(&b));
    }
    Ok(SuiteResult {
        name: "reward_shift_invariance",
        passed: worst <= 1e-9,
        detail: format!("max policy difference {worst:.2e}"),
    })
}

/// Every suite, in a fixed order.
pub fn run_all() -> Vec<SuiteResult> {
    let suites: [(&'static str, fn() -> Result<SuiteResult>); 7] = [
        ("svf_enumeration", suite_svf_enumeration),
        ("feature_expectations", suite_feature_expectations),
        ("maxent_gradient_fd", suite_maxent_gradient_fd),
        ("reward_shift_invariance", suite_shift_invariance),
        ("linear_maxent_irl", suite_linear_irl),
        ("rewardnet_fd", suite_rewardnet_fd),
        ("end_to_end_fd", suite_end_to_end_fd),
    ];
    suites
        .iter()
        .map(|(name, f)| {
            f().unwrap_or_else(|e| SuiteResult {
                name,
                passed: false,
                detail: format!("error: {e}"),
            })
        })
        .collect()
}

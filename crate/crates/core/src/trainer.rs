//! MEDIRL training and evaluation.
//!
//! Every training sample is one time index of one demonstration. The window
//! around the vessel becomes a grid MDP (environment cells blocked, goal
//! region cells absorbing), the network's reward map is solved with
//! finite-horizon soft value iteration, and the reward gradient is the gap
//! between the policy's and the demonstration's visitation frequencies.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dockworld::World;
use crate::error::{Error, Result};
use crate::expert_gen::{Dataset, Record, Trajectory};
use crate::featurizer::{
    expert_svf_window_until, extract_features, FeatureStack, GridSpec, CH_ENVIRONMENT, CH_GOAL_REGION,
};
use crate::gridmdp::{
    expected_svf, maxent_log_likelihood, soft_value_iteration_horizon, GridMap, GridMdp, RewardMap, SvfMap,
};
use crate::io::{fmt_sig6, triptych_pgm, write_atomic};
use crate::rewardnet::{apply_update, backward, forward, init_params, AdamW, NetParams};

/// Samples per optimiser step.
pub const MINIBATCH: usize = 8;
/// Rewards beyond this magnitude are clamped and stop passing gradient.
pub const REWARD_CLAMP: f64 = 50.0;
/// Fixed time indices per training record used to track the NLL curve.
pub const PROBE_SAMPLES_PER_TRAJECTORY: usize = 2;

/// Per-epoch learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from `learning_rate` in the first epoch towards zero after
    /// the last.
    Cosine,
}

impl LrSchedule {
    pub fn name(&self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        }
    }

    /// Learning rate of 1-based `epoch` out of `epochs`.
    pub fn rate(&self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let f = (epoch - 1) as f64 / epochs.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * f).cos())
            }
        }
    }
}

impl std::str::FromStr for LrSchedule {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub samples_per_trajectory: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub l2_lambda: f64,
    pub gamma: f64,
    pub svf_horizon: usize,
    pub soft_vi_iters: usize,
    pub seed: u64,
    /// Epoch interval between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    pub grid: GridSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            samples_per_trajectory: 8,
            learning_rate: 1e-3,
            lr_schedule: LrSchedule::Cosine,
            l2_lambda: 1e-4,
            gamma: 0.99,
            svf_horizon: 64,
            soft_vi_iters: 128,
            seed: 0,
            checkpoint_every: 10,
            grid: GridSpec::default(),
        }
    }
}

const CONFIG_KEYS: [&str; 12] = [
    "epochs",
    "samples_per_trajectory",
    "learning_rate",
    "lr_schedule",
    "l2_lambda",
    "gamma",
    "svf_horizon",
    "soft_vi_iters",
    "seed",
    "checkpoint_every",
    "cells_per_side",
    "window_m",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.samples_per_trajectory == 0 || self.svf_horizon == 0 || self.soft_vi_iters == 0 {
            return bad("samples_per_trajectory, svf_horizon and soft_vi_iters must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return bad(format!("l2_lambda must be non-negative, got {}", self.l2_lambda));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma));
        }
        GridSpec::new(self.grid.cells_per_side, self.grid.window_m).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    /// Longest horizon any sample may use.
    pub fn max_horizon(&self) -> usize {
        self.svf_horizon.min(self.soft_vi_iters)
    }

    /// Flat `key = value` text; `#` starts a comment. Missing keys keep their
    /// defaults, unknown keys are rejected.
    pub fn parse(text: &str) -> Result<TrainConfig> {
        let mut c = TrainConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let err = || Error::InvalidConfig(format!("line {}: bad value {v:?} for {k}", n + 1));
            match k {
                "epochs" => c.epochs = v.parse().map_err(|_| err())?,
                "samples_per_trajectory" => c.samples_per_trajectory = v.parse().map_err(|_| err())?,
                "learning_rate" => c.learning_rate = v.parse().map_err(|_| err())?,
                "lr_schedule" => c.lr_schedule = v.parse().map_err(|_| err())?,
                "l2_lambda" => c.l2_lambda = v.parse().map_err(|_| err())?,
                "gamma" => c.gamma = v.parse().map_err(|_| err())?,
                "svf_horizon" => c.svf_horizon = v.parse().map_err(|_| err())?,
                "soft_vi_iters" => c.soft_vi_iters = v.parse().map_err(|_| err())?,
                "seed" => c.seed = v.parse().map_err(|_| err())?,
                "checkpoint_every" => c.checkpoint_every = v.parse().map_err(|_| err())?,
                "cells_per_side" => c.grid.cells_per_side = v.parse().map_err(|_| err())?,
                "window_m" => c.grid.window_m = v.parse().map_err(|_| err())?,
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "line {}: unknown key {k:?} (expected one of {})",
                        n + 1,
                        CONFIG_KEYS.join(", ")
                    )))
                }
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        format!(
            "epochs = {}\nsamples_per_trajectory = {}\nlearning_rate = {}\nlr_schedule = {}\nl2_lambda = {}\ngamma = {}\n\
             svf_horizon = {}\nsoft_vi_iters = {}\nseed = {}\ncheckpoint_every = {}\ncells_per_side = {}\nwindow_m = {}\n",
            self.epochs,
            self.samples_per_trajectory,
            self.learning_rate,
            self.lr_schedule.name(),
            self.l2_lambda,
            self.gamma,
            self.svf_horizon,
            self.soft_vi_iters,
            self.seed,
            self.checkpoint_every,
            self.grid.cells_per_side,
            self.grid.window_m,
        )
    }
}

/// Parameter-independent part of a sample.
#[derive(Debug, Clone)]
pub struct SampleProblem {
    pub features: FeatureStack,
    pub mdp: GridMdp,
    pub expert_svf: SvfMap,
    pub expert_cells: Vec<usize>,
    pub reached_terminal: bool,
    pub horizon: usize,
    pub start: usize,
}

/// Builds the window MDP and the demonstration's visitation for
/// `trajectory.states[t_index]`. The horizon is the number of demonstrated
/// steps counted in the window, capped by the configured horizons.
pub fn prepare_sample(
    world: &World,
    trajectory: &Trajectory,
    t_index: usize,
    config: &TrainConfig,
) -> Result<SampleProblem> {
    let spec = &config.grid;
    let features = extract_features(world, trajectory, t_index, spec)?;
    let side = spec.cells_per_side;
    let blocked: Vec<bool> = features.channel(CH_ENVIRONMENT).iter().map(|&v| v > 0.5).collect();
    let terminal: Vec<bool> = features
        .channel(CH_GOAL_REGION)
        .iter()
        .zip(&blocked)
        .map(|(&g, &b)| g > 0.5 && !b)
        .collect();
    let expert = expert_svf_window_until(
        trajectory,
        t_index,
        spec,
        config.max_horizon(),
        config.gamma,
        Some(&terminal),
    )?;
    let mdp = GridMdp::new(side, side, config.gamma, blocked, terminal)?;
    let horizon = expert.cells.len().max(1);
    Ok(SampleProblem {
        features,
        mdp,
        expert_svf: expert.svf,
        expert_cells: expert.cells,
        reached_terminal: expert.reached_terminal,
        horizon,
        start: spec.center_cell(),
    })
}

/// Clamps to `±REWARD_CLAMP`; the mask marks cells whose gradient survives.
fn clamp_reward(raw: &RewardMap) -> (RewardMap, Vec<bool>, usize) {
    let mut r = raw.clone();
    let mut pass = vec![true; raw.len()];
    let mut clamped = 0;
    for (v, p) in r.values_mut().iter_mut().zip(pass.iter_mut()) {
        if v.abs() > REWARD_CLAMP {
            *v = v.clamp(-REWARD_CLAMP, REWARD_CLAMP);
            *p = false;
            clamped += 1;
        }
    }
    (r, pass, clamped)
}

/// Result of solving one sample under the current reward.
#[derive(Debug, Clone)]
pub struct SampleSolution {
    pub reward: RewardMap,
    pub expected_svf: SvfMap,
    /// `L_D = sum(mu_D * r) - log Z`, the demonstration log-likelihood.
    pub log_likelihood: f64,
    pub clamped: usize,
}

fn solve_sample(problem: &SampleProblem, raw_reward: &RewardMap) -> Result<(SampleSolution, Vec<bool>)> {
    let (reward, pass, clamped) = clamp_reward(raw_reward);
    let h = problem.horizon;
    let sol = soft_value_iteration_horizon(&problem.mdp, &reward, h)?;
    let init = GridMap::point_mass(problem.mdp.rows(), problem.mdp.cols(), problem.start);
    let mu = expected_svf(&problem.mdp, &sol, &init, h)?;
    let ll = maxent_log_likelihood(&reward, &problem.expert_svf, &sol, problem.start)?;
    if !ll.is_finite() {
        return Err(Error::NonFinite("sample log-likelihood".into()));
    }
    Ok((
        SampleSolution {
            reward,
            expected_svf: mu,
            log_likelihood: ll,
            clamped,
        },
        pass,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleStats {
    /// Negative demonstration log-likelihood.
    pub nll: f64,
    /// `|mu_D - E[mu]|_1`.
    pub svf_l1: f64,
    pub horizon: usize,
    pub clamped: usize,
}

/// Forward, solve and backward for one sample. Gradients of `-L_D` are added
/// to the parameter buffers.
pub fn train_step(
    params: &mut NetParams,
    world: &World,
    trajectory: &Trajectory,
    t_index: usize,
    config: &TrainConfig,
) -> Result<SampleStats> {
    let problem = prepare_sample(world, trajectory, t_index, config)?;
    train_step_on(params, &problem)
}

pub fn train_step_on(params: &mut NetParams, problem: &SampleProblem) -> Result<SampleStats> {
    let (raw, cache) = forward(params, &problem.features)?;
    let (sol, pass) = solve_sample(problem, &raw)?;
    let mut d_reward = GridMap::zeros(raw.rows(), raw.cols());
    let mut l1 = 0.0;
    for (i, d) in d_reward.values_mut().iter_mut().enumerate() {
        let gap = sol.expected_svf.values()[i] - problem.expert_svf.values()[i];
        l1 += gap.abs();
        if pass[i] {
            *d = gap;
        }
    }
    backward(params, &cache, &d_reward)?;
    Ok(SampleStats {
        nll: -sol.log_likelihood,
        svf_l1: l1,
        horizon: problem.horizon,
        clamped: sol.clamped,
    })
}

/// Demonstration log-likelihood `L_D` of one sample; no gradients.
pub fn sample_log_likelihood(params: &NetParams, problem: &SampleProblem) -> Result<f64> {
    let (raw, _) = forward(params, &problem.features)?;
    Ok(solve_sample(problem, &raw)?.0.log_likelihood)
}

pub fn solve_with_params(params: &NetParams, problem: &SampleProblem) -> Result<SampleSolution> {
    let (raw, _) = forward(params, &problem.features)?;
    Ok(solve_sample(problem, &raw)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    /// Mean NLL over the fixed probe samples after the epoch's updates.
    pub probe_nll: f64,
    /// Mean NLL over the epoch's training samples, before their update.
    pub train_nll: f64,
    pub svf_l1: f64,
    pub grad_norm: f64,
    pub learning_rate: f64,
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Probe NLL of the initial parameters.
    pub initial_nll: f64,
    pub epochs: Vec<EpochRow>,
}

impl TrainReport {
    pub fn final_nll(&self) -> f64 {
        self.epochs.last().map_or(self.initial_nll, |r| r.probe_nll)
    }

    /// Fraction of consecutive probe-NLL pairs (including the initial value)
    /// that do not increase.
    pub fn non_increasing_fraction(&self) -> f64 {
        let mut curve = vec![self.initial_nll];
        curve.extend(self.epochs.iter().map(|r| r.probe_nll));
        if curve.len() < 2 {
            return 1.0;
        }
        let ok = curve.windows(2).filter(|w| w[1] <= w[0]).count();
        ok as f64 / (curve.len() - 1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,probe_nll,train_nll,svf_l1,grad_norm,learning_rate,wall_s\n");
        let _ = writeln!(out, "0,{},,,,,", fmt_sig6(self.initial_nll));
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{:.3}",
                r.epoch,
                fmt_sig6(r.probe_nll),
                fmt_sig6(r.train_nll),
                fmt_sig6(r.svf_l1),
                fmt_sig6(r.grad_norm),
                fmt_sig6(r.learning_rate),
                r.wall_s
            );
        }
        out
    }
}

fn train_records(dataset: &Dataset) -> Vec<&Record> {
    dataset.train().collect()
}

fn probe_problems(records: &[&Record], config: &TrainConfig) -> Result<Vec<SampleProblem>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x0b5e_55ed_cafe_f00d);
    let picks: Vec<(usize, usize)> = records
        .iter()
        .enumerate()
        .flat_map(|(i, r)| {
            let n = r.trajectory.len();
            (0..PROBE_SAMPLES_PER_TRAJECTORY)
                .map(|_| (i, rng.gen_range(0..n)))
                .collect::<Vec<_>>()
        })
        .collect();
    picks
        .par_iter()
        .map(|&(i, t)| prepare_sample(records[i].world(), &records[i].trajectory, t, config))
        .collect()
}

fn mean_nll(params: &NetParams, problems: &[SampleProblem]) -> Result<f64> {
    let lls: Vec<f64> = problems
        .par_iter()
        .map(|p| sample_log_likelihood(params, p))
        .collect::<Result<_>>()?;
    let m = -lls.iter().sum::<f64>() / lls.len().max(1) as f64;
    if !m.is_finite() {
        return Err(Error::Diverged("non-finite probe NLL".into()));
    }
    Ok(m)
}

/// Trains from `init_params(config.seed)`. `on_checkpoint(epoch, params)` runs
/// after every `checkpoint_every`-th epoch (1-based).
pub fn train<F>(dataset: &Dataset, config: &TrainConfig, mut on_checkpoint: F) -> Result<(NetParams, TrainReport)>
where
    F: FnMut(usize, &NetParams) -> Result<()>,
{
    config.validate()?;
    let records = train_records(dataset);
    if records.is_empty() {
        return Err(Error::InvalidArgument("dataset has no training records".into()));
    }
    let mut params = init_params(config.seed);
    let mut report = TrainReport::default();
    if config.epochs == 0 {
        return Ok((params, report));
    }
    let probes = probe_problems(&records, config)?;
    report.initial_nll = mean_nll(&params, &probes)?;

    let mut opt = AdamW::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5a3d_1e55_7a11_0c8e);
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let lr = config.lr_schedule.rate(config.learning_rate, epoch, config.epochs);
        let mut samples: Vec<(usize, usize)> = Vec::with_capacity(records.len() * config.samples_per_trajectory);
        for (i, r) in records.iter().enumerate() {
            for _ in 0..config.samples_per_trajectory {
                samples.push((i, rng.gen_range(0..r.trajectory.len())));
            }
        }
        samples.shuffle(&mut rng);

        let (mut nll_sum, mut l1_sum, mut gn_sum) = (0.0, 0.0, 0.0);
        let mut n_batches = 0usize;
        for batch in samples.chunks(MINIBATCH) {
            let results: Vec<(NetParams, SampleStats)> = batch
                .par_iter()
                .map(|&(i, t)| {
                    let mut local = params.clone();
                    local.zero_grad();
                    let stats = train_step(&mut local, records[i].world(), &records[i].trajectory, t, config)?;
                    Ok((local, stats))
                })
                .collect::<Result<_>>()?;
            params.zero_grad();
            for (local, stats) in &results {
                params.add_grads(local);
                nll_sum += stats.nll;
                l1_sum += stats.svf_l1;
            }
            params.scale_grads(1.0 / batch.len() as f64);
            gn_sum += params.grad_norm();
            n_batches += 1;
            apply_update(&mut params, lr, config.l2_lambda, &mut opt)?;
            if !params.is_finite() {
                return Err(Error::Diverged(format!("non-finite parameters in epoch {epoch}")));
            }
        }
        let n = samples.len() as f64;
        let train_nll = nll_sum / n;
        if !train_nll.is_finite() {
            return Err(Error::Diverged(format!("non-finite training loss in epoch {epoch}")));
        }
        let probe_nll = mean_nll(&params, &probes)?;
        report.epochs.push(EpochRow {
            epoch,
            probe_nll,
            train_nll,
            svf_l1: l1_sum / n,
            grad_norm: gn_sum / n_batches as f64,
            learning_rate: lr,
            wall_s: started.elapsed().as_secs_f64(),
        });
        if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
            on_checkpoint(epoch, &params)?;
        }
    }
    Ok((params, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Evenly spaced time indices along the demonstration.
    Along,
    /// Final, docked state.
    InsideDock,
    /// First state within reach of the goal bay, still outside it.
    GoForward,
    /// Waterway state between the goal bay and an occupied neighbour.
    Midway,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Along => "along",
            Scenario::InsideDock => "inside_dock",
            Scenario::GoForward => "go_forward",
            Scenario::Midway => "midway",
        }
    }
}

/// Distance from the goal bay centre that starts the approach scenario.
pub const GO_FORWARD_RADIUS: f64 = 2.5;
/// Maximum distance from the berth line for midway samples.
pub const MIDWAY_BAND: f64 = 3.0;
pub const ALONG_SAMPLES: usize = 4;

fn inside_goal(world: &World, x: f64, y: f64) -> bool {
    world.goal_rect().contains(x, y)
}

/// Time indices of the evaluation scenarios for one demonstration.
pub fn scenario_samples(traj: &Trajectory) -> Vec<(Scenario, usize)> {
    let world = &traj.world;
    let n = traj.len();
    let mut out: Vec<(Scenario, usize)> = (0..ALONG_SAMPLES).map(|k| (Scenario::Along, k * n / ALONG_SAMPLES)).collect();
    out.push((Scenario::InsideDock, n - 1));

    let (gx, gy) = world.goal_center();
    if let Some(t) = traj
        .states
        .iter()
        .position(|s| (s.x - gx).hypot(s.y - gy) <= GO_FORWARD_RADIUS && !inside_goal(world, s.x, s.y))
    {
        out.push((Scenario::GoForward, t));
    }

    let midway: Vec<usize> = (0..n).filter(|&t| is_midway(world, traj.states[t].x, traj.states[t].y)).collect();
    if !midway.is_empty() {
        out.push((Scenario::Midway, midway[0]));
        let mid = midway[midway.len() / 2];
        if mid != midway[0] {
            out.push((Scenario::Midway, mid));
        }
    }
    out
}

/// Between the goal bay centre and the centre of an occupied neighbouring
/// bay in the same row, in the waterway, within `MIDWAY_BAND` of the row.
pub fn is_midway(world: &World, x: f64, y: f64) -> bool {
    let per_side = world.config.docks_per_side;
    let g = world.goal_bay;
    let row_start = if world.is_north_bay(g) { per_side } else { 0 };
    let col = g - row_start;
    let goal = world.goal_rect();
    let line = if world.is_north_bay(g) { goal.y0 } else { goal.y1 };
    let ww = world.config.waterway();
    if !ww.contains(x, y) || (y - line).abs() > MIDWAY_BAND {
        return false;
    }
    let gx = goal.center().0;
    [col.checked_sub(1), Some(col + 1)]
        .into_iter()
        .flatten()
        .filter(|&c| c < per_side && world.occupied[row_start + c])
        .any(|c| {
            let ox = world.bays[row_start + c].center().0;
            x > gx.min(ox) && x < gx.max(ox)
        })
}

/// Share of the map's mass on the cells flagged in `mask`.
pub fn mass_fraction(map: &GridMap, mask: &[bool]) -> f64 {
    let total = map.sum();
    if total <= 0.0 {
        return 0.0;
    }
    map.values().iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| v).sum::<f64>() / total
}

/// Angle in degrees between the SVF-weighted mean displacement from the
/// window centre and `direction`.
pub fn displacement_angle_deg(svf: &GridMap, spec: &GridSpec, direction: (f64, f64)) -> f64 {
    let side = spec.cells_per_side;
    let (mut sx, mut sy, mut m) = (0.0, 0.0, 0.0);
    for row in 0..side {
        for col in 0..side {
            let w = svf.get(row, col);
            let (dx, dy) = spec.cell_offset(row, col);
            sx += w * dx;
            sy += w * dy;
            m += w;
        }
    }
    if m <= 0.0 {
        return 180.0;
    }
    let (mx, my) = (sx / m, sy / m);
    let norm = mx.hypot(my) * direction.0.hypot(direction.1);
    if norm == 0.0 {
        return 180.0;
    }
    ((mx * direction.0 + my * direction.1) / norm).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Minimum share of the remaining mass for a branch to count.
pub const BRANCH_MIN_MASS: f64 = 0.05;
/// Cells below this fraction of the peak are not part of any branch.
pub const BRANCH_ACTIVE_FRACTION: f64 = 0.1;
/// Branches are only looked for when at least this share of the SVF lies
/// outside the excluded cells.
pub const BRANCH_MIN_ANALYSED_SHARE: f64 = 0.25;
/// Cells within this Chebyshev distance of the start are excluded.
pub const BRANCH_START_RADIUS: usize = 2;

/// Masses (as shares of the analysed mass) of the 8-connected components of
/// active cells, after removing the start neighbourhood and excluded cells.
pub fn svf_branches(svf: &GridMap, start: usize, excluded: &[bool]) -> Vec<f64> {
    let (rows, cols) = (svf.rows(), svf.cols());
    let (sr, sc) = (start / cols, start % cols);
    let keep: Vec<bool> = (0..rows * cols)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            !excluded[i] && r.abs_diff(sr).max(c.abs_diff(sc)) > BRANCH_START_RADIUS
        })
        .collect();
    let v = svf.values();
    let total: f64 = (0..v.len()).filter(|&i| keep[i]).map(|i| v[i]).sum();
    let peak = (0..v.len()).filter(|&i| keep[i]).map(|i| v[i]).fold(0.0, f64::max);
    if total <= 0.0 || peak <= 0.0 || total < BRANCH_MIN_ANALYSED_SHARE * svf.sum() {
        return Vec::new();
    }
    let active: Vec<bool> = (0..v.len()).map(|i| keep[i] && v[i] >= BRANCH_ACTIVE_FRACTION * peak).collect();
    let mut seen = vec![false; v.len()];
    let mut out = Vec::new();
    for s in 0..v.len() {
        if !active[s] || seen[s] {
            continue;
        }
        let mut mass = 0.0;
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(i) = stack.pop() {
            mass += v[i];
            let (r, c) = ((i / cols) as isize, (i % cols) as isize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= rows as isize || nc >= cols as isize {
                        continue;
                    }
                    let j = nr as usize * cols + nc as usize;
                    if active[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        out.push(mass / total);
    }
    out
}

/// L1 distance between the two maps after normalising each to unit mass.
pub fn normalized_l1(a: &GridMap, b: &GridMap) -> f64 {
    let (sa, sb) = (a.sum(), b.sum());
    if sa <= 0.0 || sb <= 0.0 {
        return if sa <= 0.0 && sb <= 0.0 { 0.0 } else { 2.0 };
    }
    a.values().iter().zip(b.values()).map(|(x, y)| (x / sa - y / sb).abs()).sum()
}

#[derive(Debug, Clone)]
pub struct EvalSample {
    pub record: usize,
    pub t_index: usize,
    pub scenario: Scenario,
    pub nll: f64,
    pub svf_l1: f64,
    /// Share of the policy SVF on goal-region cells.
    pub goal_mass: f64,
    /// Angle to the goal direction for approach samples.
    pub forward_angle_deg: Option<f64>,
    /// Branch masses for midway samples.
    pub branches: Vec<f64>,
    pub environment: GridMap,
    pub reward: RewardMap,
    /// Policy SVF over the full configured horizon.
    pub policy_svf: SvfMap,
    pub expert_svf: SvfMap,
}

impl EvalSample {
    pub fn n_branches(&self) -> usize {
        self.branches.iter().filter(|&&m| m >= BRANCH_MIN_MASS).count()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioSummary {
    pub total: usize,
    pub passed: usize,
}

#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub samples: Vec<EvalSample>,
    pub mean_nll: f64,
    pub mean_svf_l1: f64,
    /// Goal-region share of at least 90%.
    pub inside_dock: ScenarioSummary,
    /// Mean displacement within 45 degrees of the goal direction.
    pub go_forward: ScenarioSummary,
    /// At least two branches.
    pub two_branches: ScenarioSummary,
}

pub const INSIDE_DOCK_MIN_MASS: f64 = 0.9;
pub const GO_FORWARD_MAX_ANGLE_DEG: f64 = 45.0;

fn evaluate_sample(
    params: &NetParams,
    record_index: usize,
    traj: &Trajectory,
    scenario: Scenario,
    t_index: usize,
    config: &TrainConfig,
) -> Result<EvalSample> {
    let problem = prepare_sample(&traj.world, traj, t_index, config)?;
    let sol = solve_with_params(params, &problem)?;

    let h = config.max_horizon();
    let long = soft_value_iteration_horizon(&problem.mdp, &sol.reward, h)?;
    let init = GridMap::point_mass(problem.mdp.rows(), problem.mdp.cols(), problem.start);
    let policy_svf = expected_svf(&problem.mdp, &long, &init, h)?;

    let goal_mask: Vec<bool> = problem.mdp.terminal_mask().to_vec();
    let goal_mass = mass_fraction(&policy_svf, &goal_mask);
    let s = &traj.states[t_index];
    let forward_angle_deg = (scenario == Scenario::GoForward).then(|| {
        let (gx, gy) = traj.world.goal_center();
        displacement_angle_deg(&policy_svf, &config.grid, (gx - s.x, gy - s.y))
    });
    let branches = if scenario == Scenario::Midway {
        svf_branches(&policy_svf, problem.start, &goal_mask)
    } else {
        Vec::new()
    };
    Ok(EvalSample {
        record: record_index,
        t_index,
        scenario,
        nll: -sol.log_likelihood,
        svf_l1: normalized_l1(&sol.expected_svf, &problem.expert_svf),
        goal_mass,
        forward_angle_deg,
        branches,
        environment: problem.features.channel_map(CH_ENVIRONMENT),
        reward: sol.reward,
        policy_svf,
        expert_svf: problem.expert_svf,
    })
}

/// Evaluates every scenario sample of the dataset's test split.
pub fn evaluate(params: &NetParams, dataset: &Dataset, config: &TrainConfig) -> Result<EvalReport> {
    config.validate()?;
    let tests: Vec<&Record> = dataset.test().collect();
    let jobs: Vec<(usize, Scenario, usize)> = tests
        .iter()
        .enumerate()
        .flat_map(|(i, r)| {
            scenario_samples(&r.trajectory)
                .into_iter()
                .map(move |(sc, t)| (i, sc, t))
        })
        .collect();
    let samples: Vec<EvalSample> = jobs
        .par_iter()
        .map(|&(i, sc, t)| evaluate_sample(params, i, &tests[i].trajectory, sc, t, config))
        .collect::<Result<_>>()?;

    let mut report = EvalReport::default();
    let n = samples.len().max(1) as f64;
    report.mean_nll = samples.iter().map(|s| s.nll).sum::<f64>() / n;
    report.mean_svf_l1 = samples.iter().map(|s| s.svf_l1).sum::<f64>() / n;
    for s in &samples {
        match s.scenario {
            Scenario::InsideDock => {
                report.inside_dock.total += 1;
                report.inside_dock.passed += (s.goal_mass >= INSIDE_DOCK_MIN_MASS) as usize;
            }
            Scenario::GoForward => {
                report.go_forward.total += 1;
                report.go_forward.passed +=
                    s.forward_angle_deg.is_some_and(|a| a <= GO_FORWARD_MAX_ANGLE_DEG) as usize;
            }
            Scenario::Midway => {
                report.two_branches.total += 1;
                report.two_branches.passed += (s.n_branches() >= 2) as usize;
            }
            Scenario::Along => {}
        }
    }
    report.samples = samples;
    Ok(report)
}

impl EvalReport {
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("sample,record,t_index,scenario,nll,svf_l1,goal_mass,forward_angle_deg,branches\n");
        for (i, s) in self.samples.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i},{},{},{},{},{},{},{},{}",
                s.record,
                s.t_index,
                s.scenario.name(),
                fmt_sig6(s.nll),
                fmt_sig6(s.svf_l1),
                fmt_sig6(s.goal_mass),
                s.forward_angle_deg.map(fmt_sig6).unwrap_or_default(),
                s.n_branches()
            );
        }
        out
    }

    pub fn summary_text(&self) -> String {
        format!(
            "samples = {}\nmean_nll = {}\nmean_svf_l1 = {}\ninside_dock = {}/{}\ngo_forward = {}/{}\ntwo_branches = {}/{}\n",
            self.samples.len(),
            fmt_sig6(self.mean_nll),
            fmt_sig6(self.mean_svf_l1),
            self.inside_dock.passed,
            self.inside_dock.total,
            self.go_forward.passed,
            self.go_forward.total,
            self.two_branches.passed,
            self.two_branches.total,
        )
    }

    /// `metrics.csv`, `summary.txt` and one environment / reward / SVF
    /// triptych per sample, named by sample index.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_atomic(&dir.join("metrics.csv"), self.metrics_csv().as_bytes())?;
        write_atomic(&dir.join("summary.txt"), self.summary_text().as_bytes())?;
        for (i, s) in self.samples.iter().enumerate() {
            let img = triptych_pgm(&[&s.environment, &s.reward, &s.policy_svf]);
            write_atomic(&dir.join(format!("sample_{i:04}.pgm")), &img)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_round_trips() {
        let c = TrainConfig {
            epochs: 3,
            seed: 9,
            learning_rate: 2.5e-3,
            lr_schedule: LrSchedule::Constant,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
        assert!(TrainConfig::parse("lr_schedule = linear\n").is_err());
        assert!(TrainConfig::parse("epochs = 3\nbogus = 1\n").is_err());
        assert!(TrainConfig::parse("epochs 3\n").is_err());
        assert!(TrainConfig::parse("gamma = 1.5\n").is_err());
        assert!(TrainConfig::parse("learning_rate = 0\n").is_err());
        assert_eq!(TrainConfig::parse("# comment only\n\n").unwrap(), TrainConfig::default());
    }

    #[test]
    fn cosine_schedule_decays_from_base() {
        let s = LrSchedule::Cosine;
        assert_eq!(s.rate(1e-3, 1, 30), 1e-3);
        let rates: Vec<f64> = (1..=30).map(|e| s.rate(1e-3, e, 30)).collect();
        assert!(rates.windows(2).all(|w| w[1] < w[0]));
        assert!(rates[29] > 0.0 && rates[29] < 1e-5);
        assert!((s.rate(1e-3, 16, 30) - 5e-4).abs() < 1e-12);
        assert_eq!(LrSchedule::Constant.rate(1e-3, 30, 30), 1e-3);
    }

    #[test]
    fn branches_count_separated_blobs() {
        let mut m = GridMap::zeros(9, 9);
        m.set(0, 0, 1.0);
        m.set(0, 1, 1.0);
        m.set(8, 8, 1.0);
        m.set(4, 4, 5.0);
        let b = svf_branches(&m, 40, &[false; 81]);
        assert_eq!(b.len(), 2);
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // diagonal contact joins components
        m.set(1, 2, 1.0);
        m.set(7, 7, 1.0);
        assert_eq!(svf_branches(&m, 40, &[false; 81]).len(), 2);
    }

    #[test]
    fn normalized_l1_of_identical_maps_is_zero() {
        let m = GridMap::from_vec(2, 2, vec![1.0, 2.0, 0.0, 3.0]).unwrap();
        let scaled = GridMap::from_vec(2, 2, vec![2.0, 4.0, 0.0, 6.0]).unwrap();
        assert_eq!(normalized_l1(&m, &scaled), 0.0);
        assert!((normalized_l1(&m, &GridMap::point_mass(2, 2, 2)) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn displacement_angle_points_towards_mass() {
        let spec = GridSpec::new(8, 1.0).unwrap();
        let mut m = GridMap::zeros(8, 8);
        m.set(0, 4, 1.0);
        assert!(displacement_angle_deg(&m, &spec, (0.0, 1.0)) < 10.0);
        assert!(displacement_angle_deg(&m, &spec, (0.0, -1.0)) > 170.0);
    }
}

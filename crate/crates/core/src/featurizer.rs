//! Vessel-centred feature stack.
//!
//! A square window of `window_m` metres, translated (not rotated) to the
//! vessel position, is split into `cells_per_side` square cells. Row 0 is the
//! north edge, column 0 the west edge. The vessel position falls on the corner
//! shared by the four middle cells; the cell containing it (row and column
//! `cells_per_side / 2`) is the window's centre cell.
//!
//! Channel order:
//!
//! | idx | content                                   | range        |
//! |-----|-------------------------------------------|--------------|
//! | 0   | environment (obstacle / outside world)    | {0, 1}       |
//! | 1   | goal proximity                            | [0, 1]       |
//! | 2   | goal region                               | {0, 1}       |
//! | 3   | past trajectory (last 20 positions)       | {0, 1}       |
//! | 4-6 | world-frame vx, vy and yaw rate           | constant     |
//! | 7-8 | cell-centre x / y offset in the window    | [-1, 1]      |

use crate::dockworld::World;
use crate::error::{Error, Result};
use crate::expert_gen::Trajectory;
use crate::gridmdp::{GridMap, SvfMap};

pub const N_CHANNELS: usize = 9;
pub const N_ENV_CHANNELS: usize = 4;
pub const CH_ENVIRONMENT: usize = 0;
pub const CH_GOAL_PROXIMITY: usize = 1;
pub const CH_GOAL_REGION: usize = 2;
pub const CH_PAST_TRAJECTORY: usize = 3;
pub const CH_VX: usize = 4;
pub const CH_VY: usize = 5;
pub const CH_OMEGA: usize = 6;
pub const CH_POS_X: usize = 7;
pub const CH_POS_Y: usize = 8;

/// Number of past positions (including the current one) in channel 3.
pub const PAST_POSITIONS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub cells_per_side: usize,
    pub window_m: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            cells_per_side: 32,
            window_m: 4.0,
        }
    }
}

impl GridSpec {
    pub fn new(cells_per_side: usize, window_m: f64) -> Result<Self> {
        if cells_per_side < 8 || cells_per_side % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "cells_per_side must be even and >= 8, got {cells_per_side}"
            )));
        }
        if !(window_m.is_finite() && window_m > 0.0) {
            return Err(Error::InvalidArgument(format!("window_m must be positive, got {window_m}")));
        }
        Ok(Self {
            cells_per_side,
            window_m,
        })
    }

    pub fn resolution(&self) -> f64 {
        self.window_m / self.cells_per_side as f64
    }

    pub fn n_cells(&self) -> usize {
        self.cells_per_side * self.cells_per_side
    }

    pub fn center_cell(&self) -> usize {
        let h = self.cells_per_side / 2;
        h * self.cells_per_side + h
    }

    /// Offset of a cell centre from the window centre, in metres.
    pub fn cell_offset(&self, row: usize, col: usize) -> (f64, f64) {
        let res = self.resolution();
        let half = 0.5 * self.window_m;
        ((col as f64 + 0.5) * res - half, half - (row as f64 + 0.5) * res)
    }

    /// World coordinates of a cell centre for a window centred at `center`.
    pub fn cell_center(&self, center: (f64, f64), row: usize, col: usize) -> (f64, f64) {
        let (dx, dy) = self.cell_offset(row, col);
        (center.0 + dx, center.1 + dy)
    }

    /// `(row, col)` of the cell containing `p`, or `None` outside the window.
    pub fn cell_of(&self, center: (f64, f64), p: (f64, f64)) -> Option<(usize, usize)> {
        let res = self.resolution();
        let half = 0.5 * self.window_m;
        let col = ((p.0 - center.0 + half) / res).floor();
        let row = ((center.1 - p.1 + half) / res).floor();
        let n = self.cells_per_side as f64;
        if col >= 0.0 && row >= 0.0 && col < n && row < n {
            Some((row as usize, col as usize))
        } else {
            None
        }
    }

    pub fn cell_index_of(&self, center: (f64, f64), p: (f64, f64)) -> Option<usize> {
        self.cell_of(center, p).map(|(r, c)| r * self.cells_per_side + c)
    }
}

/// Dense `[channels x side x side]` feature tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    channels: usize,
    side: usize,
    data: Vec<f64>,
}

impl FeatureStack {
    pub fn zeros(channels: usize, side: usize) -> Self {
        Self {
            channels,
            side,
            data: vec![0.0; channels * side * side],
        }
    }

    pub fn from_vec(channels: usize, side: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * side * side {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {channels}x{side}x{side}",
                data.len()
            )));
        }
        Ok(Self { channels, side, data })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.side * self.side;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.side * self.side;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn channel_map(&self, c: usize) -> GridMap {
        GridMap::from_vec(self.side, self.side, self.channel(c).to_vec()).expect("square channel")
    }

    /// Checks the per-channel value ranges of a 9-channel stack.
    pub fn check_ranges(&self) -> std::result::Result<(), String> {
        if self.channels != N_CHANNELS {
            return Err(format!("expected {N_CHANNELS} channels, got {}", self.channels));
        }
        let binary = |v: f64| v == 0.0 || v == 1.0;
        for &c in &[CH_ENVIRONMENT, CH_GOAL_REGION, CH_PAST_TRAJECTORY] {
            if !self.channel(c).iter().all(|&v| binary(v)) {
                return Err(format!("channel {c} is not binary"));
            }
        }
        if !self.channel(CH_GOAL_PROXIMITY).iter().all(|&v| (0.0..=1.0).contains(&v)) {
            return Err("goal proximity outside [0, 1]".into());
        }
        for &c in &[CH_POS_X, CH_POS_Y] {
            if !self.channel(c).iter().all(|&v| (-1.0..=1.0).contains(&v)) {
                return Err(format!("positional channel {c} outside [-1, 1]"));
            }
        }
        for &c in &[CH_VX, CH_VY, CH_OMEGA] {
            let ch = self.channel(c);
            if !ch.iter().all(|&v| v == ch[0] && v.is_finite()) {
                return Err(format!("kinematic channel {c} is not spatially constant"));
            }
        }
        Ok(())
    }
}

/// Rasterises the context of `trajectory.states[t_index]` into a 9-channel
/// feature stack.
pub fn extract_features(
    world: &World,
    trajectory: &Trajectory,
    t_index: usize,
    spec: &GridSpec,
) -> Result<FeatureStack> {
    let states = &trajectory.states;
    if t_index >= states.len() {
        return Err(Error::InvalidArgument(format!(
            "t_index {t_index} outside trajectory of {} states",
            states.len()
        )));
    }
    let s = &states[t_index];
    let center = (s.x, s.y);
    let side = spec.cells_per_side;
    let n = spec.n_cells();
    let mut fs = FeatureStack::zeros(N_CHANNELS, side);

    let goal = world.goal_rect();
    let (gx, gy) = goal.center();
    let d_max = 0.5 * world.bounds.width().hypot(world.bounds.height());
    let half = 0.5 * spec.window_m;
    let (vx, vy) = s.world_velocity();

    for row in 0..side {
        for col in 0..side {
            let i = row * side + col;
            let (px, py) = spec.cell_center(center, row, col);
            let (ox, oy) = spec.cell_offset(row, col);
            let data = fs.data_mut();
            data[CH_ENVIRONMENT * n + i] = world.is_blocked_point(px, py) as u8 as f64;
            data[CH_GOAL_PROXIMITY * n + i] = (1.0 - (px - gx).hypot(py - gy) / d_max).max(0.0);
            data[CH_GOAL_REGION * n + i] = goal.contains(px, py) as u8 as f64;
            data[CH_VX * n + i] = vx;
            data[CH_VY * n + i] = vy;
            data[CH_OMEGA * n + i] = s.r;
            data[CH_POS_X * n + i] = ox / half;
            data[CH_POS_Y * n + i] = oy / half;
        }
    }

    let first = (t_index + 1).saturating_sub(PAST_POSITIONS);
    let past = fs.channel_mut(CH_PAST_TRAJECTORY);
    for p in &states[first..=t_index] {
        if let Some(i) = spec.cell_index_of(center, (p.x, p.y)) {
            past[i] = 1.0;
        }
    }
    Ok(fs)
}

/// Empirical visitation of the demonstrated future from `t_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertWindowSvf {
    pub svf: SvfMap,
    /// Window cell of each counted future state, in order.
    pub cells: Vec<usize>,
    /// True when counting stopped on a terminal cell.
    pub reached_terminal: bool,
}

/// Discounted empirical SVF of the demonstration inside the window centred at
/// `states[t_index]`: `gamma^k` is added to the cell of `states[t_index + k]`
/// for `k < horizon`, stopping at the end of the trajectory or at the first
/// future position outside the window.
pub fn expert_svf_window(
    trajectory: &Trajectory,
    t_index: usize,
    spec: &GridSpec,
    horizon: usize,
    gamma: f64,
) -> Result<SvfMap> {
    Ok(expert_svf_window_until(trajectory, t_index, spec, horizon, gamma, None)?.svf)
}

/// As [`expert_svf_window`], additionally stopping after the first cell
/// flagged in `terminal` (that cell is counted).
pub fn expert_svf_window_until(
    trajectory: &Trajectory,
    t_index: usize,
    spec: &GridSpec,
    horizon: usize,
    gamma: f64,
    terminal: Option<&[bool]>,
) -> Result<ExpertWindowSvf> {
    let states = &trajectory.states;
    if t_index >= states.len() {
        return Err(Error::InvalidArgument(format!(
            "t_index {t_index} outside trajectory of {} states",
            states.len()
        )));
    }
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    if let Some(t) = terminal {
        if t.len() != spec.n_cells() {
            return Err(Error::ShapeMismatch("terminal mask does not match window".into()));
        }
    }
    let side = spec.cells_per_side;
    let center = (states[t_index].x, states[t_index].y);
    let mut svf = GridMap::zeros(side, side);
    let mut cells = Vec::new();
    let mut reached_terminal = false;
    let mut disc = 1.0;
    for k in 0..horizon {
        let Some(p) = states.get(t_index + k) else {
            break;
        };
        let Some(i) = spec.cell_index_of(center, (p.x, p.y)) else {
            break;
        };
        svf.values_mut()[i] += disc;
        cells.push(i);
        if terminal.is_some_and(|t| t[i]) {
            reached_terminal = true;
            break;
        }
        disc *= gamma;
    }
    Ok(ExpertWindowSvf {
        svf,
        cells,
        reached_terminal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dockworld::{build_world, Pose, VesselState, WorldConfig};

    fn world() -> World {
        build_world(&WorldConfig::with_seed(5)).unwrap()
    }

    #[test]
    fn window_centre_lies_in_centre_cell() {
        let spec = GridSpec::default();
        for i in 0..10_000 {
            let c = (0.001731 * i as f64, 18.0 - 0.0017 * i as f64);
            assert_eq!(spec.cell_index_of(c, c), Some(spec.center_cell()), "centre {c:?}");
        }
    }

    fn single(world: &World, s: VesselState) -> Trajectory {
        Trajectory {
            states: vec![s],
            world: world.clone(),
        }
    }

    #[test]
    fn spec_validation() {
        assert!(GridSpec::new(7, 4.0).is_err());
        assert!(GridSpec::new(6, 4.0).is_err());
        assert!(GridSpec::new(32, 0.0).is_err());
        let g = GridSpec::new(32, 4.0).unwrap();
        assert_eq!(g.resolution(), 0.125);
        assert_eq!(g.cell_of((0.0, 0.0), (0.0, 0.0)), Some((16, 16)));
        assert_eq!(g.cell_of((0.0, 0.0), (2.0, 0.0)), None);
        assert_eq!(g.cell_of((0.0, 0.0), (-2.0, 1.99)), Some((0, 0)));
    }

    #[test]
    fn open_water_window_is_empty() {
        let w = world();
        let (cx, cy) = w.config.waterway().center();
        let t = single(&w, VesselState::at_rest(Pose { x: cx, y: cy, psi: 0.0 }));
        let fs = extract_features(&w, &t, 0, &GridSpec::default()).unwrap();
        assert!(fs.channel(CH_ENVIRONMENT).iter().all(|&v| v == 0.0));
        assert!(fs.channel(CH_GOAL_REGION).iter().all(|&v| v == 0.0));
        for c in [CH_VX, CH_VY, CH_OMEGA] {
            assert!(fs.channel(c).iter().all(|&v| v == 0.0));
        }
        let past = fs.channel(CH_PAST_TRAJECTORY);
        assert_eq!(past.iter().filter(|&&v| v == 1.0).count(), 1);
        assert_eq!(past[GridSpec::default().center_cell()], 1.0);
        fs.check_ranges().unwrap();
    }

    #[test]
    fn kinematic_channels_use_world_frame() {
        let w = world();
        let (cx, cy) = w.config.waterway().center();
        let mut s = VesselState::at_rest(Pose { x: cx, y: cy, psi: std::f64::consts::FRAC_PI_2 });
        s.u = 0.5;
        s.r = -0.2;
        let fs = extract_features(&w, &single(&w, s), 0, &GridSpec::default()).unwrap();
        assert!(fs.channel(CH_VX)[0].abs() < 1e-12);
        assert!((fs.channel(CH_VY)[0] - 0.5).abs() < 1e-12);
        assert_eq!(fs.channel(CH_OMEGA)[7], -0.2);
        fs.check_ranges().unwrap();
    }

    #[test]
    fn positional_encoding_is_symmetric() {
        let w = world();
        let (cx, cy) = w.config.waterway().center();
        let fs = extract_features(
            &w,
            &single(&w, VesselState::at_rest(Pose { x: cx, y: cy, psi: 0.0 })),
            0,
            &GridSpec::default(),
        )
        .unwrap();
        let px = fs.channel(CH_POS_X);
        let py = fs.channel(CH_POS_Y);
        assert_eq!(px[0], -31.0 / 32.0);
        assert_eq!(px[31], 31.0 / 32.0);
        assert_eq!(py[0], 31.0 / 32.0);
        assert_eq!(py[31 * 32], -31.0 / 32.0);
    }

    #[test]
    fn rejects_bad_index() {
        let w = world();
        let t = single(&w, VesselState::at_rest(w.spawn_pose));
        assert!(extract_features(&w, &t, 1, &GridSpec::default()).is_err());
        assert!(expert_svf_window(&t, 3, &GridSpec::default(), 4, 0.9).is_err());
        assert!(expert_svf_window(&t, 0, &GridSpec::default(), 0, 0.9).is_err());
    }

    #[test]
    fn terminal_stop_counts_the_terminal_cell() {
        let w = world();
        let spec = GridSpec::default();
        let states = (0..10)
            .map(|k| VesselState::at_rest(Pose { x: 9.0 + 0.1 * k as f64, y: 9.0, psi: 0.0 }))
            .collect();
        let traj = Trajectory { states, world: w };
        let mut term = vec![false; spec.n_cells()];
        let stop = spec.cell_index_of((9.0, 9.0), (9.35, 9.0)).unwrap();
        term[stop] = true;
        let e = expert_svf_window_until(&traj, 0, &spec, 10, 1.0, Some(&term)).unwrap();
        assert!(e.reached_terminal);
        assert_eq!(*e.cells.last().unwrap(), stop);
        assert!(e.cells.len() < 10);
        assert!((e.svf.sum() - e.cells.len() as f64).abs() < 1e-12);
    }
}

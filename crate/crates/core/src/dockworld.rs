//! Dock environment and vessel model.
//!
//! The quay is two facing rows of berths separated by a waterway. Each row is
//! a U-shaped structure: piers between (and at the ends of) the berths and a
//! back wall behind them. The world origin is the lower-left corner of the
//! bounding box; `+y` points from the south row towards the north row.

use std::f64::consts::PI;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::round_sig6;

const SPAWN_ATTEMPTS: usize = 1000;

/// Axis-aligned rectangle, `x0 <= x1`, `y0 <= y1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    /// Closed containment.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    /// Euclidean distance from a point to the rectangle (0 inside).
    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        let dx = (self.x0 - x).max(0.0).max(x - self.x1);
        let dy = (self.y0 - y).max(0.0).max(y - self.y1);
        dx.hypot(dy)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)
    }

    fn corners(&self) -> [(f64, f64); 4] {
        [
            (self.x0, self.y0),
            (self.x1, self.y0),
            (self.x1, self.y1),
            (self.x0, self.y1),
        ]
    }
}

/// Planar pose in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub dock_size_m: f64,
    pub docks_per_side: usize,
    pub waterway_width_m: f64,
    pub pier_width_m: f64,
    pub margin_m: f64,
    pub vessel_length_m: f64,
    pub vessel_beam_m: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            dock_size_m: 3.0,
            docks_per_side: 4,
            waterway_width_m: 8.0,
            pier_width_m: 1.0,
            margin_m: 2.0,
            vessel_length_m: 1.0,
            vessel_beam_m: 0.5,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lengths = [
            ("dock_size_m", self.dock_size_m),
            ("waterway_width_m", self.waterway_width_m),
            ("pier_width_m", self.pier_width_m),
            ("margin_m", self.margin_m),
            ("vessel_length_m", self.vessel_length_m),
            ("vessel_beam_m", self.vessel_beam_m),
        ];
        for (name, v) in lengths {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.docks_per_side == 0 {
            return Err(Error::InvalidConfig("docks_per_side must be at least 1".into()));
        }
        Ok(())
    }

    pub fn world_width(&self) -> f64 {
        let n = self.docks_per_side as f64;
        n * self.dock_size_m + (n - 1.0) * self.pier_width_m + 2.0 * self.margin_m
    }

    pub fn world_height(&self) -> f64 {
        2.0 * self.dock_size_m + self.waterway_width_m + 2.0 * self.margin_m
    }

    /// The waterway between the two berth rows, spanning the full world width.
    pub fn waterway(&self) -> Rect {
        let y0 = self.margin_m + self.dock_size_m;
        Rect::new(0.0, y0, self.world_width(), y0 + self.waterway_width_m)
    }
}

/// Immutable dock world: geometry, berth occupancy, goal berth and spawn pose.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub config: WorldConfig,
    pub bounds: Rect,
    /// South row (left to right) followed by the north row.
    pub bays: Vec<Rect>,
    /// Piers between berths plus the end piers closing each row.
    pub piers: Vec<Rect>,
    /// Back walls behind each berth row.
    pub walls: Vec<Rect>,
    pub occupied: Vec<bool>,
    pub goal_bay: usize,
    pub spawn_pose: Pose,
}

struct Geometry {
    bounds: Rect,
    bays: Vec<Rect>,
    piers: Vec<Rect>,
    walls: Vec<Rect>,
}

fn geometry(cfg: &WorldConfig) -> Geometry {
    let w = cfg.world_width();
    let h = cfg.world_height();
    let m = cfg.margin_m;
    let d = cfg.dock_size_m;
    let p = cfg.pier_width_m;
    let n = cfg.docks_per_side;
    // end piers and back walls live inside the margin
    let t = p.min(m);

    let rows = [m, h - m - d];
    let mut bays = Vec::with_capacity(2 * n);
    let mut piers = Vec::new();
    let mut walls = Vec::with_capacity(2);
    for &y0 in &rows {
        for i in 0..n {
            let x0 = m + i as f64 * (d + p);
            bays.push(Rect::new(x0, y0, x0 + d, y0 + d));
        }
        piers.push(Rect::new(m - t, y0, m, y0 + d));
        for i in 0..n.saturating_sub(1) {
            let x0 = m + (i + 1) as f64 * d + i as f64 * p;
            piers.push(Rect::new(x0, y0, x0 + p, y0 + d));
        }
        piers.push(Rect::new(w - m, y0, w - m + t, y0 + d));
    }
    walls.push(Rect::new(m - t, m - t, w - m + t, m));
    walls.push(Rect::new(m - t, h - m, w - m + t, h - m + t));

    Geometry {
        bounds: Rect::new(0.0, 0.0, w, h),
        bays,
        piers,
        walls,
    }
}

/// Builds the world for `config`. Every random draw comes from one ChaCha8
/// stream seeded with `config.seed`.
pub fn build_world(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let geo = geometry(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let n_bays = geo.bays.len();
    let n_occupied = n_bays / 2;
    let mut occupied = vec![false; n_bays];
    for i in index::sample(&mut rng, n_bays, n_occupied).into_iter() {
        occupied[i] = true;
    }

    let mut world = World {
        config: config.clone(),
        bounds: geo.bounds,
        bays: geo.bays,
        piers: geo.piers,
        walls: geo.walls,
        occupied,
        goal_bay: 0,
        spawn_pose: Pose {
            x: 0.0,
            y: 0.0,
            psi: 0.0,
        },
    };

    let clearance = config.vessel_length_m;
    let ww = config.waterway();
    let (x_lo, x_hi) = (config.margin_m, config.world_width() - config.margin_m);
    let (y_lo, y_hi) = (ww.y0 + clearance, ww.y1 - clearance);
    let mut spawn = None;
    if y_lo <= y_hi && x_lo <= x_hi {
        for _ in 0..SPAWN_ATTEMPTS {
            let pose = Pose {
                x: round_sig6(rng.gen_range(x_lo..=x_hi)),
                y: round_sig6(rng.gen_range(y_lo..=y_hi)),
                psi: round_sig6(wrap_angle(rng.gen_range(-PI..PI))),
            };
            let state = VesselState::at_rest(pose);
            if !is_collision(&world, &state) && world.obstacle_distance(pose.x, pose.y) >= clearance {
                spawn = Some(pose);
                break;
            }
        }
    }
    world.spawn_pose = spawn.ok_or(Error::NoSpawn(SPAWN_ATTEMPTS))?;
    world.goal_bay = world
        .nearest_free_bay(world.spawn_pose.x, world.spawn_pose.y)
        .ok_or_else(|| Error::InvalidConfig("no unoccupied bay".into()))?;
    Ok(world)
}

impl World {
    /// Piers, back walls and occupied berths.
    pub fn obstacles(&self) -> impl Iterator<Item = &Rect> + '_ {
        self.piers
            .iter()
            .chain(self.walls.iter())
            .chain(self.bays.iter().zip(&self.occupied).filter(|(_, &o)| o).map(|(b, _)| b))
    }

    pub fn goal_rect(&self) -> Rect {
        self.bays[self.goal_bay]
    }

    pub fn goal_center(&self) -> (f64, f64) {
        self.goal_rect().center()
    }

    /// True for berths in the north row.
    pub fn is_north_bay(&self, bay: usize) -> bool {
        bay >= self.config.docks_per_side
    }

    /// Heading of a vessel that has entered `bay` bow first.
    pub fn bay_entry_heading(&self, bay: usize) -> f64 {
        if self.is_north_bay(bay) {
            PI / 2.0
        } else {
            -PI / 2.0
        }
    }

    /// Index of the unoccupied berth whose centre is closest to `(x, y)`;
    /// ties resolve to the lower index.
    pub fn nearest_free_bay(&self, x: f64, y: f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, bay) in self.bays.iter().enumerate() {
            if self.occupied[i] {
                continue;
            }
            let (cx, cy) = bay.center();
            let d = (cx - x).hypot(cy - y);
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }

    /// Distance from a point to the closest obstacle or to the world boundary.
    pub fn obstacle_distance(&self, x: f64, y: f64) -> f64 {
        let b = &self.bounds;
        let border = (x - b.x0).min(b.x1 - x).min(y - b.y0).min(b.y1 - y);
        self.obstacles().map(|r| r.distance_to(x, y)).fold(border, f64::min)
    }

    /// Cell-level occupancy used by the feature maps: inside an obstacle or
    /// outside the world.
    pub fn is_blocked_point(&self, x: f64, y: f64) -> bool {
        !self.bounds.contains(x, y) || self.obstacles().any(|r| r.contains(x, y))
    }

    /// Shifts every piece of geometry and the spawn pose.
    pub fn translated(&self, dx: f64, dy: f64) -> World {
        let mut w = self.clone();
        w.bounds = w.bounds.translated(dx, dy);
        for r in w.bays.iter_mut().chain(w.piers.iter_mut()).chain(w.walls.iter_mut()) {
            *r = r.translated(dx, dy);
        }
        w.spawn_pose.x += dx;
        w.spawn_pose.y += dy;
        w
    }

    /// Single-line JSON with a fixed field order and 6-significant-digit floats.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_wire()).expect("world serialises")
    }

    pub(crate) fn to_wire(&self) -> WorldWire {
        let c = &self.config;
        WorldWire {
            config: WorldConfig {
                dock_size_m: round_sig6(c.dock_size_m),
                docks_per_side: c.docks_per_side,
                waterway_width_m: round_sig6(c.waterway_width_m),
                pier_width_m: round_sig6(c.pier_width_m),
                margin_m: round_sig6(c.margin_m),
                vessel_length_m: round_sig6(c.vessel_length_m),
                vessel_beam_m: round_sig6(c.vessel_beam_m),
                seed: c.seed,
            },
            bays: self
                .bays
                .iter()
                .map(|r| [r.x0, r.y0, r.x1, r.y1].map(round_sig6))
                .collect(),
            occupied: self.occupied.clone(),
            goal_bay: self.goal_bay,
            spawn: [self.spawn_pose.x, self.spawn_pose.y, self.spawn_pose.psi].map(round_sig6),
        }
    }

    pub fn from_json(text: &str) -> Result<World> {
        let wire: WorldWire = serde_json::from_str(text)?;
        World::from_wire(wire)
    }

    pub(crate) fn from_wire(wire: WorldWire) -> Result<World> {
        wire.config.validate()?;
        let geo = geometry(&wire.config);
        if wire.bays.len() != geo.bays.len() || wire.occupied.len() != geo.bays.len() {
            return Err(Error::Format("bay count does not match config".into()));
        }
        for (r, w) in geo.bays.iter().zip(&wire.bays) {
            let expect = [r.x0, r.y0, r.x1, r.y1];
            if expect.iter().zip(w).any(|(a, b)| (a - b).abs() > 1e-4) {
                return Err(Error::Format("bay rectangles do not match config".into()));
            }
        }
        if wire.goal_bay >= geo.bays.len() || wire.occupied[wire.goal_bay] {
            return Err(Error::Format("goal bay missing or occupied".into()));
        }
        Ok(World {
            config: wire.config,
            bounds: geo.bounds,
            bays: geo.bays,
            piers: geo.piers,
            walls: geo.walls,
            occupied: wire.occupied,
            goal_bay: wire.goal_bay,
            spawn_pose: Pose {
                x: wire.spawn[0],
                y: wire.spawn[1],
                psi: wire.spawn[2],
            },
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct WorldWire {
    config: WorldConfig,
    bays: Vec<[f64; 4]>,
    occupied: Vec<bool>,
    goal_bay: usize,
    spawn: [f64; 3],
}

/// 3-DOF vessel state: world pose, body-frame velocities, time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VesselState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub u: f64,
    pub v: f64,
    pub r: f64,
    pub t: f64,
}

impl VesselState {
    pub fn at_rest(pose: Pose) -> Self {
        Self {
            x: pose.x,
            y: pose.y,
            psi: pose.psi,
            u: 0.0,
            v: 0.0,
            r: 0.0,
            t: 0.0,
        }
    }

    pub fn pose(&self) -> Pose {
        Pose {
            x: self.x,
            y: self.y,
            psi: self.psi,
        }
    }

    /// World-frame linear velocity.
    pub fn world_velocity(&self) -> (f64, f64) {
        let (s, c) = self.psi.sin_cos();
        (c * self.u - s * self.v, s * self.u + c * self.v)
    }

    pub fn speed(&self) -> f64 {
        self.u.hypot(self.v)
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.psi, self.u, self.v, self.r, self.t]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Corners of the rectangular footprint in the world frame.
    pub fn footprint(&self, length: f64, beam: f64) -> [(f64, f64); 4] {
        let (s, c) = self.psi.sin_cos();
        let (hl, hb) = (0.5 * length, 0.5 * beam);
        [(hl, hb), (-hl, hb), (-hl, -hb), (hl, -hb)].map(|(bx, by)| {
            (self.x + c * bx - s * by, self.y + s * bx + c * by)
        })
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let w = a - two_pi * ((a + PI) / two_pi).floor();
    if w <= -PI {
        w + two_pi
    } else {
        w
    }
}

fn project(points: &[(f64, f64); 4], axis: (f64, f64)) -> (f64, f64) {
    points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let d = p.0 * axis.0 + p.1 * axis.1;
        (lo.min(d), hi.max(d))
    })
}

/// Separating-axis test between a convex quadrilateral with axes `axes` and an
/// axis-aligned rectangle. Touching boundaries do not count as overlap.
fn quad_overlaps_rect(quad: &[(f64, f64); 4], axes: [(f64, f64); 2], rect: &Rect) -> bool {
    let rc = rect.corners();
    for axis in [(1.0, 0.0), (0.0, 1.0), axes[0], axes[1]] {
        let (a0, a1) = project(quad, axis);
        let (b0, b1) = project(&rc, axis);
        if a1 <= b0 || b1 <= a0 {
            return false;
        }
    }
    true
}

/// True when the vessel footprint at `state` overlaps a pier, wall or occupied
/// berth, or extends outside the world.
pub fn is_collision(world: &World, state: &VesselState) -> bool {
    let cfg = &world.config;
    let quad = state.footprint(cfg.vessel_length_m, cfg.vessel_beam_m);
    if quad.iter().any(|&(x, y)| !world.bounds.contains(x, y)) {
        return true;
    }
    let (s, c) = state.psi.sin_cos();
    let axes = [(c, s), (-s, c)];
    world.obstacles().any(|r| quad_overlaps_rect(&quad, axes, r))
}

/// Diagonal rigid-body parameters of the vessel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VesselParams {
    pub mass: f64,
    pub inertia_z: f64,
    pub damping_u: f64,
    pub damping_v: f64,
    pub damping_r: f64,
}

impl Default for VesselParams {
    fn default() -> Self {
        Self {
            mass: 20.0,
            inertia_z: 5.0,
            damping_u: 10.0,
            damping_v: 10.0,
            damping_r: 2.0,
        }
    }
}

impl VesselParams {
    pub fn kinetic_energy(&self, s: &VesselState) -> f64 {
        0.5 * self.mass * (s.u * s.u + s.v * s.v) + 0.5 * self.inertia_z * s.r * s.r
    }
}

/// Exact solution of `inertia * w' = force - damping * w` over `dt` with the
/// force held constant. Returns the new rate and its integral over the step.
fn damped_axis(w0: f64, force: f64, inertia: f64, damping: f64, dt: f64) -> (f64, f64) {
    let k = damping / inertia;
    if k * dt < 1e-12 {
        let a = force / inertia;
        return (w0 + a * dt, w0 * dt + 0.5 * a * dt * dt);
    }
    let w_inf = force / damping;
    let decay = -(-k * dt).exp_m1(); // 1 - e^{-k dt}
    let w1 = w0 + (w_inf - w0) * decay;
    let travel = w_inf * dt + (w0 - w_inf) * decay / k;
    (w1, travel)
}

/// Advances the vessel by `dt` under body-frame generalised forces
/// `[surge force, sway force, yaw moment]` with default parameters.
pub fn step_vessel(state: &VesselState, force: [f64; 3], dt: f64) -> VesselState {
    step_vessel_with(&VesselParams::default(), state, force, dt)
}

/// Velocities are updated first (exactly, for a force held over the step);
/// the pose then advances by the integrated body velocities rotated at the
/// mid-step heading.
pub fn step_vessel_with(
    params: &VesselParams,
    state: &VesselState,
    force: [f64; 3],
    dt: f64,
) -> VesselState {
    debug_assert!(dt > 0.0);
    let (u1, du) = damped_axis(state.u, force[0], params.mass, params.damping_u, dt);
    let (v1, dv) = damped_axis(state.v, force[1], params.mass, params.damping_v, dt);
    let (r1, dpsi) = damped_axis(state.r, force[2], params.inertia_z, params.damping_r, dt);
    let (s, c) = (state.psi + 0.5 * dpsi).sin_cos();
    VesselState {
        x: state.x + c * du - s * dv,
        y: state.y + s * du + c * dv,
        psi: wrap_angle(state.psi + dpsi),
        u: u1,
        v: v1,
        r: r1,
        t: state.t + dt,
    }
}

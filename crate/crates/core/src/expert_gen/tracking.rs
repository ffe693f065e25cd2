//! Carrot-following PD tracking of a planned path.

use crate::dockworld::{is_collision, step_vessel_with, wrap_angle, VesselParams, VesselState, World};
use crate::error::{Error, Result};

use super::rrt::{Path, Point};
use super::Trajectory;

/// PD gains on `(x, y, psi)` and actuator limits on
/// `(surge force, sway force, yaw moment)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdGains {
    pub kp: [f64; 3],
    pub kd: [f64; 3],
    pub limits: [f64; 3],
}

impl Default for PdGains {
    fn default() -> Self {
        Self {
            kp: [40.0, 40.0, 10.0],
            kd: [25.0, 25.0, 6.0],
            limits: [50.0, 50.0, 20.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingParams {
    pub gains: PdGains,
    pub dt: f64,
    /// Arc-length lead of the carrot ahead of the vessel's projection.
    pub lookahead: f64,
    pub max_time: f64,
    pub max_cross_track: f64,
    /// Distance over which the reference heading turns to face into the bay.
    pub blend_distance: f64,
    pub settle_distance: f64,
    pub settle_speed: f64,
    pub vessel: VesselParams,
}

impl Default for TrackingParams {
    fn default() -> Self {
        Self {
            gains: PdGains::default(),
            dt: 0.1,
            lookahead: 0.4,
            max_time: 300.0,
            max_cross_track: 1.0,
            blend_distance: 1.5,
            settle_distance: 0.05,
            settle_speed: 0.05,
            vessel: VesselParams::default(),
        }
    }
}

/// Arc-length parametrised polyline with a reference heading profile.
struct Reference<'a> {
    pts: &'a [Point],
    /// Cumulative arc length at each waypoint.
    s: Vec<f64>,
    final_heading: f64,
    blend: f64,
}

impl<'a> Reference<'a> {
    fn new(pts: &'a [Point], final_heading: f64, blend: f64) -> Self {
        let mut s = Vec::with_capacity(pts.len());
        let mut acc = 0.0;
        s.push(0.0);
        for w in pts.windows(2) {
            acc += (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
            s.push(acc);
        }
        Self {
            pts,
            s,
            final_heading,
            blend,
        }
    }

    fn length(&self) -> f64 {
        *self.s.last().unwrap()
    }

    fn segment_at(&self, s: f64) -> usize {
        let n = self.pts.len();
        if n < 2 {
            return 0;
        }
        self.s[1..].partition_point(|&x| x < s).min(n - 2)
    }

    fn point_at(&self, s: f64) -> Point {
        if self.pts.len() < 2 {
            return self.pts[0];
        }
        let i = self.segment_at(s);
        let len = self.s[i + 1] - self.s[i];
        let t = if len > 0.0 { ((s - self.s[i]) / len).clamp(0.0, 1.0) } else { 0.0 };
        let (a, b) = (self.pts[i], self.pts[i + 1]);
        (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
    }

    /// Segment direction, blended towards `final_heading` over the last
    /// `blend` metres of the path.
    fn heading_at(&self, s: f64) -> f64 {
        if self.pts.len() < 2 {
            return self.final_heading;
        }
        let i = self.segment_at(s);
        let (a, b) = (self.pts[i], self.pts[i + 1]);
        let seg = (b.1 - a.1).atan2(b.0 - a.0);
        let to_end = self.length() - s;
        if to_end >= self.blend {
            return seg;
        }
        let w = (1.0 - to_end / self.blend).clamp(0.0, 1.0);
        wrap_angle(seg + w * wrap_angle(self.final_heading - seg))
    }

    /// Closest point with arc length in `[lo, hi]`: `(s, distance)`.
    fn project(&self, p: Point, lo: f64, hi: f64) -> (f64, f64) {
        if self.pts.len() < 2 {
            let q = self.pts[0];
            return (0.0, (p.0 - q.0).hypot(p.1 - q.1));
        }
        let mut best = (lo, f64::INFINITY);
        for i in 0..self.pts.len() - 1 {
            if self.s[i + 1] < lo || self.s[i] > hi {
                continue;
            }
            let (a, b) = (self.pts[i], self.pts[i + 1]);
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            let len2 = dx * dx + dy * dy;
            let mut t = if len2 > 0.0 {
                ((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2
            } else {
                0.0
            };
            let len = len2.sqrt();
            let (t_lo, t_hi) = if len > 0.0 {
                (((lo - self.s[i]) / len).max(0.0), ((hi - self.s[i]) / len).min(1.0))
            } else {
                (0.0, 0.0)
            };
            t = t.clamp(t_lo, t_hi.max(t_lo));
            let q = (a.0 + t * dx, a.1 + t * dy);
            let d = (p.0 - q.0).hypot(p.1 - q.1);
            if d < best.1 {
                best = (self.s[i] + t * len, d);
            }
        }
        best
    }
}

/// Tracks `path` from the world's spawn pose with default parameters apart
/// from `gains` and `dt`.
pub fn track_path(world: &World, path: &Path, gains: &PdGains, dt: f64) -> Result<Trajectory> {
    let params = TrackingParams {
        gains: *gains,
        dt,
        ..TrackingParams::default()
    };
    track_path_with(world, path, &params)
}

/// Simulates the vessel from the spawn pose under a PD law towards a carrot
/// that leads the vessel's projection onto the path by `lookahead`. Stops once
/// the vessel has settled on the final waypoint.
pub fn track_path_with(world: &World, path: &Path, params: &TrackingParams) -> Result<Trajectory> {
    if path.waypoints.is_empty() {
        return Err(Error::InvalidArgument("empty path".into()));
    }
    if !(params.dt > 0.0) {
        return Err(Error::InvalidArgument("dt must be positive".into()));
    }
    let reference = Reference::new(
        &path.waypoints,
        world.bay_entry_heading(world.goal_bay),
        params.blend_distance,
    );
    let end = *path.waypoints.last().unwrap();
    let total = reference.length();
    let g = &params.gains;

    let mut state = VesselState::at_rest(world.spawn_pose);
    let mut states = vec![state];
    let mut progress = 0.0;
    let max_steps = (params.max_time / params.dt).ceil() as usize;
    for k in 1..=max_steps + 1 {
        let settled = (state.x - end.0).hypot(state.y - end.1) < params.settle_distance
            && state.speed() < params.settle_speed;
        if settled {
            return Ok(Trajectory {
                states,
                world: world.clone(),
            });
        }
        if k > max_steps {
            break;
        }

        let window = 2.0 * params.lookahead + 1.0;
        let (s_proj, cross_track) = reference.project((state.x, state.y), progress, progress + window);
        if cross_track > params.max_cross_track {
            return Err(Error::TrackingDiverged(format!(
                "cross-track error {cross_track:.3} m at t = {:.1} s",
                state.t
            )));
        }
        progress = progress.max(s_proj);
        let s_carrot = (progress + params.lookahead).min(total);
        let carrot = reference.point_at(s_carrot);
        let psi_ref = reference.heading_at(s_carrot);

        let (vx, vy) = state.world_velocity();
        let fx = g.kp[0] * (carrot.0 - state.x) - g.kd[0] * vx;
        let fy = g.kp[1] * (carrot.1 - state.y) - g.kd[1] * vy;
        let mz = g.kp[2] * wrap_angle(psi_ref - state.psi) - g.kd[2] * state.r;
        let (s, c) = state.psi.sin_cos();
        let force = [
            (c * fx + s * fy).clamp(-g.limits[0], g.limits[0]),
            (-s * fx + c * fy).clamp(-g.limits[1], g.limits[1]),
            mz.clamp(-g.limits[2], g.limits[2]),
        ];

        state = step_vessel_with(&params.vessel, &state, force, params.dt);
        state.t = k as f64 * params.dt;
        if !state.is_finite() {
            return Err(Error::TrackingDiverged("non-finite vessel state".into()));
        }
        if is_collision(world, &state) {
            return Err(Error::TrackingDiverged(format!("collision at t = {:.1} s", state.t)));
        }
        states.push(state);
    }
    Err(Error::TrackingDiverged(format!(
        "did not settle within {} s",
        params.max_time
    )))
}

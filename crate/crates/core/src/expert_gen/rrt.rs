//! RRT* over the vessel's position.
//!
//! The vessel is planned as a point whose clearance from every obstacle is at
//! least the radius of the circle enclosing its footprint (plus a tracking
//! margin), so every configuration along a collision-free edge is free for
//! any heading.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dockworld::{Rect, World};
use crate::error::{Error, Result};

pub type Point = (f64, f64);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RrtStarParams {
    pub max_iters: usize,
    pub step_size: f64,
    pub neighbor_radius: f64,
    pub goal_bias: f64,
    pub goal_tolerance: f64,
    /// Spacing of collision samples along an edge.
    pub collision_step: f64,
    /// Extra clearance beyond the footprint's enclosing circle.
    pub clearance_margin: f64,
}

impl Default for RrtStarParams {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            step_size: 0.3,
            neighbor_radius: 1.0,
            goal_bias: 0.05,
            goal_tolerance: 0.3,
            collision_step: 0.05,
            clearance_margin: 0.1,
        }
    }
}

/// Ordered waypoints from start to goal and their total Euclidean length.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub waypoints: Vec<Point>,
    pub cost: f64,
}

impl Path {
    pub fn new(waypoints: Vec<Point>) -> Self {
        let cost = polyline_length(&waypoints);
        Self { waypoints, cost }
    }
}

pub fn polyline_length(points: &[Point]) -> f64 {
    points.windows(2).map(|w| dist(w[0], w[1])).sum()
}

#[inline]
fn dist(a: Point, b: Point) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Free space for a disc of `radius` among axis-aligned obstacles.
#[derive(Debug, Clone)]
pub struct PlanningSpace {
    pub bounds: Rect,
    pub obstacles: Vec<Rect>,
    pub radius: f64,
}

impl PlanningSpace {
    pub fn from_world(world: &World, margin: f64) -> Self {
        let c = &world.config;
        Self {
            bounds: world.bounds,
            obstacles: world.obstacles().copied().collect(),
            radius: 0.5 * c.vessel_length_m.hypot(c.vessel_beam_m) + margin,
        }
    }

    pub fn open(bounds: Rect, radius: f64) -> Self {
        Self {
            bounds,
            obstacles: Vec::new(),
            radius,
        }
    }

    pub fn point_free(&self, p: Point) -> bool {
        let b = &self.bounds;
        let r = self.radius;
        if p.0 < b.x0 + r || p.0 > b.x1 - r || p.1 < b.y0 + r || p.1 > b.y1 - r {
            return false;
        }
        self.obstacles.iter().all(|o| o.distance_to(p.0, p.1) >= r)
    }

    /// Samples the segment at `step` spacing, endpoints included.
    pub fn segment_free(&self, a: Point, b: Point, step: f64) -> bool {
        let len = dist(a, b);
        let n = (len / step).ceil().max(1.0) as usize;
        (0..=n).all(|i| {
            let t = i as f64 / n as f64;
            self.point_free((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)))
        })
    }
}

/// Uniform bucket grid over the planning bounds for neighbour queries.
struct NodeIndex {
    x0: f64,
    y0: f64,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

impl NodeIndex {
    fn new(bounds: &Rect, cell: f64) -> Self {
        let nx = ((bounds.width() / cell).ceil() as usize).max(1);
        let ny = ((bounds.height() / cell).ceil() as usize).max(1);
        Self {
            x0: bounds.x0,
            y0: bounds.y0,
            cell,
            nx,
            ny,
            buckets: vec![Vec::new(); nx * ny],
        }
    }

    fn key(&self, p: Point) -> (usize, usize) {
        let ix = (((p.0 - self.x0) / self.cell).floor().max(0.0) as usize).min(self.nx - 1);
        let iy = (((p.1 - self.y0) / self.cell).floor().max(0.0) as usize).min(self.ny - 1);
        (ix, iy)
    }

    fn insert(&mut self, p: Point, id: usize) {
        let (ix, iy) = self.key(p);
        self.buckets[iy * self.nx + ix].push(id as u32);
    }

    fn nearest(&self, p: Point, pts: &[Point]) -> usize {
        let (ix, iy) = self.key(p);
        let mut best = (usize::MAX, f64::INFINITY);
        let max_ring = self.nx.max(self.ny);
        for ring in 0..=max_ring {
            let (x_lo, x_hi) = (ix as i64 - ring as i64, ix as i64 + ring as i64);
            let (y_lo, y_hi) = (iy as i64 - ring as i64, iy as i64 + ring as i64);
            for cy in y_lo..=y_hi {
                for cx in x_lo..=x_hi {
                    let on_ring = cx == x_lo || cx == x_hi || cy == y_lo || cy == y_hi;
                    if !on_ring || cx < 0 || cy < 0 || cx >= self.nx as i64 || cy >= self.ny as i64 {
                        continue;
                    }
                    for &id in &self.buckets[cy as usize * self.nx + cx as usize] {
                        let id = id as usize;
                        let d = dist(p, pts[id]);
                        if d < best.1 || (d == best.1 && id < best.0) {
                            best = (id, d);
                        }
                    }
                }
            }
            if best.0 != usize::MAX && best.1 <= ring as f64 * self.cell {
                break;
            }
        }
        best.0
    }

    fn within(&self, p: Point, radius: f64, pts: &[Point], out: &mut Vec<usize>) {
        out.clear();
        let span = (radius / self.cell).ceil() as i64;
        let (ix, iy) = self.key(p);
        for cy in (iy as i64 - span).max(0)..=(iy as i64 + span).min(self.ny as i64 - 1) {
            for cx in (ix as i64 - span).max(0)..=(ix as i64 + span).min(self.nx as i64 - 1) {
                for &id in &self.buckets[cy as usize * self.nx + cx as usize] {
                    if dist(p, pts[id as usize]) <= radius {
                        out.push(id as usize);
                    }
                }
            }
        }
        out.sort_unstable();
    }
}

struct Tree {
    points: Vec<Point>,
    parent: Vec<usize>,
    cost: Vec<f64>,
    children: Vec<Vec<usize>>,
}

impl Tree {
    fn add(&mut self, p: Point, parent: usize, cost: f64) -> usize {
        let id = self.points.len();
        self.points.push(p);
        self.parent.push(parent);
        self.cost.push(cost);
        self.children.push(Vec::new());
        if parent != usize::MAX {
            self.children[parent].push(id);
        }
        id
    }

    fn reparent(&mut self, node: usize, new_parent: usize, new_cost: f64) {
        let old = self.parent[node];
        self.children[old].retain(|&c| c != node);
        self.children[new_parent].push(node);
        self.parent[node] = new_parent;
        let delta = new_cost - self.cost[node];
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            self.cost[n] += delta;
            stack.extend_from_slice(&self.children[n]);
        }
    }
}

/// RRT* in `world` with the default parameters and the given budget.
pub fn plan_rrt_star(world: &World, start: Point, goal: Point, max_iters: usize, seed: u64) -> Result<Path> {
    let params = RrtStarParams {
        max_iters,
        ..RrtStarParams::default()
    };
    let space = PlanningSpace::from_world(world, params.clearance_margin);
    plan_rrt_star_in(&space, start, goal, &params, seed)
}

/// Runs exactly `params.max_iters` iterations of RRT* (sample, nearest,
/// steer, collision check, choose parent, rewire) and returns the cheapest
/// tree path ending within `goal_tolerance` of `goal`.
pub fn plan_rrt_star_in(
    space: &PlanningSpace,
    start: Point,
    goal: Point,
    params: &RrtStarParams,
    seed: u64,
) -> Result<Path> {
    if !space.point_free(start) {
        return Err(Error::InvalidArgument(format!("start {start:?} is not collision-free")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = space.bounds;
    let mut index = NodeIndex::new(&b, params.neighbor_radius);
    let mut tree = Tree {
        points: Vec::with_capacity(params.max_iters + 1),
        parent: Vec::with_capacity(params.max_iters + 1),
        cost: Vec::with_capacity(params.max_iters + 1),
        children: Vec::with_capacity(params.max_iters + 1),
    };
    tree.add(start, usize::MAX, 0.0);
    index.insert(start, 0);
    let mut goal_nodes = Vec::new();
    if dist(start, goal) <= params.goal_tolerance {
        goal_nodes.push(0);
    }

    let mut neighbors = Vec::new();
    let mut candidates: Vec<(f64, usize)> = Vec::new();
    for _ in 0..params.max_iters {
        let sample = if rng.gen::<f64>() < params.goal_bias {
            goal
        } else {
            (rng.gen_range(b.x0..b.x1), rng.gen_range(b.y0..b.y1))
        };
        let nearest = index.nearest(sample, &tree.points);
        let from = tree.points[nearest];
        let d = dist(from, sample);
        if d < 1e-9 {
            continue;
        }
        let reach = d.min(params.step_size);
        let new = (
            from.0 + (sample.0 - from.0) * reach / d,
            from.1 + (sample.1 - from.1) * reach / d,
        );
        if !space.point_free(new) || !space.segment_free(from, new, params.collision_step) {
            continue;
        }

        index.within(new, params.neighbor_radius, &tree.points, &mut neighbors);
        candidates.clear();
        candidates.extend(neighbors.iter().map(|&n| (tree.cost[n] + dist(tree.points[n], new), n)));
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut chosen = (tree.cost[nearest] + reach, nearest);
        for &(c, n) in &candidates {
            if c >= chosen.0 {
                break;
            }
            if n == nearest || space.segment_free(tree.points[n], new, params.collision_step) {
                chosen = (c, n);
                break;
            }
        }
        let id = tree.add(new, chosen.1, chosen.0);
        index.insert(new, id);
        if dist(new, goal) <= params.goal_tolerance {
            goal_nodes.push(id);
        }

        for &n in &neighbors {
            if n == chosen.1 {
                continue;
            }
            let via = tree.cost[id] + dist(new, tree.points[n]);
            if via + 1e-12 < tree.cost[n]
                && space.segment_free(new, tree.points[n], params.collision_step)
            {
                tree.reparent(n, id, via);
            }
        }
    }

    let best = goal_nodes
        .iter()
        .copied()
        .min_by(|&a, &b| tree.cost[a].total_cmp(&tree.cost[b]).then(a.cmp(&b)))
        .ok_or(Error::NoPathFound(params.max_iters))?;
    let mut waypoints = Vec::new();
    let mut n = best;
    while n != usize::MAX {
        waypoints.push(tree.points[n]);
        n = tree.parent[n];
    }
    waypoints.reverse();
    Ok(Path::new(waypoints))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dockworld::{build_world, WorldConfig};

    #[test]
    fn free_space_is_near_straight() {
        let space = PlanningSpace::open(Rect::new(0.0, 0.0, 4.0, 4.0), 0.1);
        let params = RrtStarParams {
            max_iters: 3000,
            ..RrtStarParams::default()
        };
        let path = plan_rrt_star_in(&space, (1.5, 2.0), (2.5, 2.0), &params, 11).unwrap();
        assert!(path.cost <= 1.05 * 1.0, "cost {}", path.cost);
        assert_eq!(path.waypoints[0], (1.5, 2.0));
    }

    #[test]
    fn blocked_start_is_rejected() {
        let w = build_world(&WorldConfig::with_seed(2)).unwrap();
        let pier = w.piers[1].center();
        assert!(matches!(
            plan_rrt_star(&w, pier, w.goal_center(), 100, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn unreachable_goal_reports_no_path() {
        let w = build_world(&WorldConfig::with_seed(2)).unwrap();
        let s = w.spawn_pose;
        let occ = w.occupied.iter().position(|&o| o).unwrap();
        assert!(matches!(
            plan_rrt_star(&w, (s.x, s.y), w.bays[occ].center(), 300, 0),
            Err(Error::NoPathFound(300))
        ));
    }

    #[test]
    fn nearest_matches_linear_scan() {
        let b = Rect::new(0.0, 0.0, 10.0, 7.0);
        let mut idx = NodeIndex::new(&b, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Point> = (0..300)
            .map(|_| (rng.gen_range(0.0..10.0), rng.gen_range(0.0..7.0)))
            .collect();
        for (i, &p) in pts.iter().enumerate() {
            idx.insert(p, i);
        }
        let mut near = Vec::new();
        for _ in 0..200 {
            let q = (rng.gen_range(-1.0..11.0), rng.gen_range(-1.0..8.0));
            let brute = (0..pts.len())
                .min_by(|&a, &b| dist(q, pts[a]).total_cmp(&dist(q, pts[b])))
                .unwrap();
            assert_eq!(idx.nearest(q, &pts), brute);
            idx.within(q, 1.0, &pts, &mut near);
            let brute_near: Vec<usize> = (0..pts.len()).filter(|&i| dist(q, pts[i]) <= 1.0).collect();
            assert_eq!(near, brute_near);
        }
    }
}

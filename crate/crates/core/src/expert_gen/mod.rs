//! Expert docking demonstrations: plan with RRT*, track with a PD controller,
//! persist as line-delimited JSON.

mod rrt;
mod tracking;

pub use rrt::{plan_rrt_star, plan_rrt_star_in, polyline_length, Path, PlanningSpace, Point, RrtStarParams};
pub use tracking::{track_path, track_path_with, PdGains, TrackingParams};

use std::fmt;
use std::path::Path as FsPath;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dockworld::{build_world, is_collision, VesselState, World, WorldConfig};
use crate::error::{Error, Result};
use crate::io::{round_sig6, write_atomic};

/// Fraction of attempted seeds allowed to fail before generation gives up.
const MAX_FAILURE_RATE: f64 = 0.2;
/// Failure rate is only judged once this many seeds have been tried.
const MIN_ATTEMPTS_FOR_STALL: usize = 10;

/// Fixed-step vessel states recorded in one world.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<VesselState>,
    pub world: World,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> &VesselState {
        self.states.last().expect("trajectory has at least one state")
    }

    /// Checks the stored-trajectory invariants: constant time step,
    /// collision-free states and a final position within `goal_tolerance`
    /// of the goal bay centre.
    pub fn validate(&self, goal_tolerance: f64) -> std::result::Result<(), String> {
        if self.states.is_empty() {
            return Err("empty trajectory".into());
        }
        if self.states.len() > 1 {
            let dt = self.states[1].t - self.states[0].t;
            if !(dt > 0.0) {
                return Err("time is not increasing".into());
            }
            for w in self.states.windows(2) {
                let step = w[1].t - w[0].t;
                if !(step > 0.0) || (step - dt).abs() > 1e-6 * dt.max(1.0) + 1e-9 {
                    return Err(format!("irregular time step {step} at t = {}", w[0].t));
                }
            }
        }
        if let Some(s) = self.states.iter().find(|s| !s.is_finite() || is_collision(&self.world, s)) {
            return Err(format!("collision or non-finite state at t = {}", s.t));
        }
        let (gx, gy) = self.world.goal_center();
        let last = self.last();
        let err = (last.x - gx).hypot(last.y - gy);
        if err > goal_tolerance {
            return Err(format!("final position {err:.3} m from the goal bay centre"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub trajectory: Trajectory,
    pub split: Split,
}

impl Record {
    pub fn world(&self) -> &World {
        &self.trajectory.world
    }
}

#[derive(Serialize, Deserialize)]
struct RecordWire {
    world: crate::dockworld::WorldWire,
    states: Vec<[f64; 7]>,
    split: Split,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Record> + '_ {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn train(&self) -> impl Iterator<Item = &Record> + '_ {
        self.split(Split::Train)
    }

    pub fn test(&self) -> impl Iterator<Item = &Record> + '_ {
        self.split(Split::Test)
    }

    /// New dataset holding the first `n` records of `split`.
    pub fn take(&self, split: Split, n: usize) -> Dataset {
        Dataset {
            records: self.split(split).take(n).cloned().collect(),
        }
    }

    /// One JSON object per line:
    /// `{"world":{..},"states":[[t,x,y,psi,u,v,r],..],"split":"train"}`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&record_to_json(r));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Dataset> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let wire: RecordWire = serde_json::from_str(line)
                .map_err(|e| Error::Format(format!("dataset line {}: {e}", i + 1)))?;
            let world = World::from_wire(wire.world)?;
            let states = wire
                .states
                .iter()
                .map(|&[t, x, y, psi, u, v, r]| VesselState { x, y, psi, u, v, r, t })
                .collect();
            records.push(Record {
                trajectory: Trajectory { states, world },
                split: wire.split,
            });
        }
        Ok(Dataset { records })
    }

    pub fn write(&self, path: &FsPath) -> Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }

    pub fn read(path: &FsPath) -> Result<Dataset> {
        Dataset::from_jsonl(&std::fs::read_to_string(path)?)
    }
}

fn record_to_json(r: &Record) -> String {
    let wire = RecordWire {
        world: r.trajectory.world.to_wire(),
        states: r
            .trajectory
            .states
            .iter()
            .map(|s| [s.t, s.x, s.y, s.psi, s.u, s.v, s.r].map(round_sig6))
            .collect(),
        split: r.split,
    };
    serde_json::to_string(&wire).expect("record serialises")
}

fn quantize(s: &VesselState) -> VesselState {
    VesselState {
        x: round_sig6(s.x),
        y: round_sig6(s.y),
        psi: round_sig6(s.psi),
        u: round_sig6(s.u),
        v: round_sig6(s.v),
        r: round_sig6(s.r),
        t: round_sig6(s.t),
    }
}

/// Everything that shapes a generated demonstration apart from its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    /// Template world; its `seed` is replaced per record.
    pub world: WorldConfig,
    pub rrt: RrtStarParams,
    pub tracking: TrackingParams,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            rrt: RrtStarParams::default(),
            tracking: TrackingParams::default(),
        }
    }
}

/// One demonstration for world `seed`: build, plan to the goal bay centre,
/// track, quantise to the file precision and re-check the invariants.
pub fn generate_record(seed: u64, cfg: &GenConfig) -> Result<Trajectory> {
    let world = build_world(&WorldConfig {
        seed,
        ..cfg.world.clone()
    })?;
    let space = PlanningSpace::from_world(&world, cfg.rrt.clearance_margin);
    let start = (world.spawn_pose.x, world.spawn_pose.y);
    let path = plan_rrt_star_in(&space, start, world.goal_center(), &cfg.rrt, seed)?;
    let mut traj = track_path_with(&world, &path, &cfg.tracking)?;
    for s in traj.states.iter_mut() {
        *s = quantize(s);
    }
    traj.validate(cfg.rrt.goal_tolerance)
        .map_err(Error::TrackingDiverged)?;
    Ok(traj)
}

pub fn generate_dataset(n_train: usize, n_test: usize, base_seed: u64) -> Result<Dataset> {
    generate_dataset_with(n_train, n_test, base_seed, &GenConfig::default())
}

/// Generates `n_train + n_test` demonstrations from consecutive seeds
/// starting at `base_seed`. Seeds whose plan or tracking fails are skipped.
/// Records are taken in seed order, train first, so the result does not
/// depend on how the work is scheduled.
pub fn generate_dataset_with(
    n_train: usize,
    n_test: usize,
    base_seed: u64,
    cfg: &GenConfig,
) -> Result<Dataset> {
    if n_train + n_test == 0 {
        return Err(Error::InvalidArgument("dataset needs at least one record".into()));
    }
    let needed = n_train + n_test;
    let mut trajectories = Vec::with_capacity(needed);
    let mut attempted = 0usize;
    let mut failed = 0usize;
    let mut next_seed = base_seed;
    while trajectories.len() < needed {
        let missing = needed - trajectories.len();
        let batch = missing + missing / 8 + 1;
        let seeds: Vec<u64> = (0..batch as u64).map(|i| next_seed.wrapping_add(i)).collect();
        next_seed = next_seed.wrapping_add(batch as u64);
        let results: Vec<Result<Trajectory>> = seeds.par_iter().map(|&s| generate_record(s, cfg)).collect();
        for res in results {
            if trajectories.len() == needed {
                break;
            }
            attempted += 1;
            match res {
                Ok(t) => trajectories.push(t),
                Err(_) => failed += 1,
            }
        }
        if attempted >= MIN_ATTEMPTS_FOR_STALL && failed as f64 > MAX_FAILURE_RATE * attempted as f64 {
            return Err(Error::GenerationStalled { failed, attempted });
        }
    }
    let records = trajectories
        .into_iter()
        .enumerate()
        .map(|(i, trajectory)| Record {
            trajectory,
            split: if i < n_train { Split::Train } else { Split::Test },
        })
        .collect();
    Ok(Dataset { records })
}

//! Learning docking behaviour for a fully actuated surface vessel from expert
//! demonstrations.
//!
//! The pipeline is split into the following modules:
//!
//! - [`dockworld`]: dock geometry, berth occupancy, collision checks and the
//!   3-DOF vessel model.
//! - [`expert_gen`]: RRT* planning, PD path tracking and dataset persistence.
//! - [`featurizer`]: the 9-channel vessel-centred feature stack.
//! - [`gridmdp`]: the window MDP, soft value iteration, state visitation
//!   frequencies and the linear MaxEnt IRL baseline.
//! - [`rewardnet`]: the two-stage convolutional reward network with hand
//!   written backpropagation, AdamW and checkpoints.
//! - [`trainer`]: MaxEnt deep IRL training and evaluation.
//! - [`oracle`]: brute-force and finite-difference references used by the
//!   test suites and the `oracle-check` command.

pub mod dockworld;
pub mod error;
pub mod expert_gen;
pub mod featurizer;
pub mod gridmdp;
pub mod io;
pub mod oracle;
pub mod rewardnet;
pub mod trainer;

pub use error::{Error, Result};

//! Non-intrusive reduced-order surrogates for parameterized dynamical systems.
//!
//! The offline phase simulates a black-box full-order model over a family of
//! time-dependent input trajectories, compresses the snapshots with proper
//! orthogonal decomposition and trains a windowed LSTM on the reduced-state
//! differences. The online phase rolls the network out autoregressively and
//! lifts the reduced trajectory back to full space.

mod binfmt;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod hifi;
pub mod lstm;
pub mod metrics;
pub mod reduction;
pub mod rollout;
pub mod trajectory;

pub use error::{Error, Result};
pub use harness::{run_benchmark, run_evaluate, run_offline, run_online, ExperimentConfig};
pub use hifi::{generate_parameter_set, simulate, ExcitationSpec, HifiModelConfig, InputHold, Topology};
pub use lstm::{Architecture, LstmModel, TrainConfig};
pub use metrics::{mean_score, node_distance, relative_score, score_triplet, ScoreSeries, SimulationReport};
pub use reduction::{assemble_snapshots, compute_pod, ReducedBasis, SnapshotMatrix};
pub use rollout::{rollout_full, rollout_reduced, DifferencePredictor, SurrogateBundle};
pub use trajectory::{ParameterTrajectory, Simulation, StateTrajectory, TimeGrid};

//! Single-timescale actor-critic for the stochastic discrete-time LQR.
//!
//! The crate is split into a model-free training path ([`sampler`],
//! [`trainer`]) and a model-based analytic layer ([`model`]) that computes
//! exact stationary quantities, used only to measure errors and as test
//! oracles.
//!
//! With the default `parallel` feature, trajectory sampling and sweep runs are
//! distributed with rayon. Results do not depend on scheduling: every random
//! draw is addressed by `(seed, run, iteration, trajectory, subsample)` and
//! reductions are taken in index order.

pub mod error;
pub mod exec;
pub mod experiment;
pub mod model;
pub mod numerics;
pub mod sampler;
pub mod systems;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use exec::Execution;
pub use experiment::{run_sweep, run_sweep_with, ExperimentSpec, SweepOutput, SweepResult};
pub use model::{CriticParam, GainMatrix, LqrModel, RiccatiSolution, StationaryOperators};
pub use numerics::Mat;
pub use sampler::{Environment, LinearEnv, RngStream, SampleConfig, StreamPath};
pub use trainer::{train, train_with, IterateLog, TrainConfig, TrainRun};

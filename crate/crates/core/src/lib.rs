//! Unsupervised identification of piecewise-smooth hybrid systems from
//! unlabeled trajectories, and particle-filter tracking with the learned
//! model.

pub mod baselines;
pub mod classify;
pub mod cli;
pub mod clustering;
pub mod config;
pub mod error;
pub mod experiment;
pub mod gp;
pub mod io;
pub mod learner;
pub mod linalg;
pub mod metrics;
pub mod oversample;
pub mod rng;
pub mod sims;
pub mod tracking;
pub mod types;

pub use error::{Error, Result};
pub use types::{Gaussian, GaussianMixture, LabeledDataset, ModeLabel, StateVec, Trajectory};

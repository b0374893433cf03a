//! Comparison methods: a single unimodal GP, a switching GP with
//! state-independent Markov mode switches, and an extended Kalman filter
//! given the true equations of motion.

pub mod ekf;
pub mod single_gp;
pub mod switching;

pub use ekf::{BallMotion, BoxMotion, Ekf, EkfBelief, EkfModel, LinearMotion, MotionModel};
pub use single_gp::SingleGp;
pub use switching::SwitchingGp;

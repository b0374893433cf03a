//! Extended Kalman filter with experiment-specific piecewise motion.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, symmetrize};
use crate::sims::{BallConfig, BoxConfig};
use crate::tracking::Forecaster;
use crate::types::{Gaussian, GaussianMixture, StateVec};

/// Deterministic motion `x_{k+1} = f(x_k, k)` with its Jacobian.
pub trait MotionModel: Sync + Send {
    fn dim(&self) -> usize;
    fn step(&self, x: &DVector<f64>, k: usize) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>, k: usize) -> DMatrix<f64>;
}

/// Free fall with an elastic reset (`y ← −y`, `ẏ ← −ẏ`) when the predicted
/// height is negative.
#[derive(Debug, Clone, Copy)]
pub struct BallMotion {
    pub g: f64,
    pub dt: f64,
}

impl BallMotion {
    pub fn from_config(cfg: &BallConfig) -> Self {
        BallMotion { g: cfg.g, dt: cfg.dt }
    }

    fn free(&self, x: &DVector<f64>) -> (f64, f64) {
        (x[0] + x[1] * self.dt + 0.5 * self.g * self.dt * self.dt, x[1] + self.g * self.dt)
    }
}

impl MotionModel for BallMotion {
    fn dim(&self) -> usize {
        2
    }

    fn step(&self, x: &DVector<f64>, _k: usize) -> DVector<f64> {
        let (y, v) = self.free(x);
        if y < 0.0 {
            DVector::from_vec(vec![-y, -v])
        } else {
            DVector::from_vec(vec![y, v])
        }
    }

    fn jacobian(&self, x: &DVector<f64>, _k: usize) -> DMatrix<f64> {
        let f = DMatrix::from_row_slice(2, 2, &[1.0, self.dt, 0.0, 1.0]);
        if self.free(x).0 < 0.0 {
            -f
        } else {
            f
        }
    }
}

/// Box-pushing equations of motion on `(x_o, v_o, x_r, y_r, v_r)`. The robot
/// velocity follows its fixed schedule, indexed by step.
#[derive(Debug, Clone)]
pub struct BoxMotion {
    pub cfg: BoxConfig,
}

impl BoxMotion {
    fn scheduled_speed(&self, k: usize) -> f64 {
        let push = (self.cfg.push_duration / self.cfg.dt).round() as usize;
        if k < push {
            self.cfg.robot_speed
        } else {
            0.0
        }
    }

    fn contact(&self, x: &DVector<f64>) -> bool {
        self.cfg.in_contact(x[0], x[2], x[3])
    }
}

impl MotionModel for BoxMotion {
    fn dim(&self) -> usize {
        5
    }

    fn step(&self, x: &DVector<f64>, k: usize) -> DVector<f64> {
        let dt = self.cfg.dt;
        let v_o = if self.contact(x) { x[4] } else { 0.0 };
        DVector::from_vec(vec![x[0] + x[1] * dt, v_o, x[2] + x[4] * dt, x[3], self.scheduled_speed(k + 1)])
    }

    fn jacobian(&self, x: &DVector<f64>, _k: usize) -> DMatrix<f64> {
        let dt = self.cfg.dt;
        let mut j = DMatrix::zeros(5, 5);
        j[(0, 0)] = 1.0;
        j[(0, 1)] = dt;
        if self.contact(x) {
            j[(1, 4)] = 1.0;
        }
        j[(2, 2)] = 1.0;
        j[(2, 4)] = dt;
        j[(3, 3)] = 1.0;
        j
    }
}

/// `x_{k+1} = A·x_k`.
#[derive(Debug, Clone)]
pub struct LinearMotion {
    pub a: DMatrix<f64>,
}

impl MotionModel for LinearMotion {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn step(&self, x: &DVector<f64>, _k: usize) -> DVector<f64> {
        &self.a * x
    }

    fn jacobian(&self, _x: &DVector<f64>, _k: usize) -> DMatrix<f64> {
        self.a.clone()
    }
}

pub struct EkfModel {
    pub motion: Box<dyn MotionModel>,
    pub process_cov: DMatrix<f64>,
    pub obs_cov: DMatrix<f64>,
}

impl EkfModel {
    pub fn new(motion: Box<dyn MotionModel>, process_cov: DMatrix<f64>, obs_cov: DMatrix<f64>) -> Result<Self> {
        let d = motion.dim();
        if process_cov.shape() != (d, d) || obs_cov.shape() != (d, d) {
            return Err(Error::input("EKF covariances must match the motion dimension"));
        }
        Ok(EkfModel { motion, process_cov, obs_cov })
    }

    /// Ball EKF with the simulator's true noise.
    pub fn ball(cfg: &BallConfig) -> Self {
        EkfModel {
            motion: Box::new(BallMotion::from_config(cfg)),
            process_cov: DMatrix::from_diagonal(&DVector::from_column_slice(&cfg.process_noise)),
            obs_cov: DMatrix::from_diagonal(&DVector::from_column_slice(&cfg.obs_noise)),
        }
    }

    /// Box EKF; the simulator has no process noise.
    pub fn boxes(cfg: &BoxConfig) -> Self {
        EkfModel {
            motion: Box::new(BoxMotion { cfg: cfg.clone() }),
            process_cov: DMatrix::zeros(5, 5),
            obs_cov: DMatrix::from_diagonal_element(5, 5, cfg.obs_noise),
        }
    }
}

/// Predict one step from step index `k`, then optionally condition on `obs`.
pub fn ekf_step(
    model: &EkfModel,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    k: usize,
    obs: Option<&DVector<f64>>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let j = model.motion.jacobian(mean, k);
    let m = model.motion.step(mean, k);
    let mut p = &j * cov * j.transpose() + &model.process_cov;
    symmetrize(&mut p);
    match obs {
        None => Ok((m, p)),
        Some(z) => ekf_update(model, &m, &p, z),
    }
}

/// Kalman update with an identity observation model (Joseph form).
pub fn ekf_update(
    model: &EkfModel,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    z: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let s = cov + &model.obs_cov;
    let (chol, _) = cholesky_jittered(&s, "baselines")?;
    // K = P S⁻¹, with S and P symmetric.
    let gain = chol.solve(cov).transpose();
    let m = mean + &gain * (z - mean);
    let d = mean.len();
    let ikh = DMatrix::identity(d, d) - &gain;
    let mut p = &ikh * cov * ikh.transpose() + &gain * &model.obs_cov * gain.transpose();
    symmetrize(&mut p);
    Ok((m, p))
}

#[derive(Debug, Clone)]
pub struct EkfBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Step index of the belief.
    pub k: usize,
}

/// [`Forecaster`] wrapper around an [`EkfModel`].
pub struct Ekf<'a> {
    pub model: &'a EkfModel,
}

impl Ekf<'_> {
    fn gaussian(&self, mean: &DVector<f64>, cov: &DMatrix<f64>) -> GaussianMixture {
        let g = Gaussian::new(StateVec::new(mean.clone()).expect("finite mean"), cov.clone())
            .expect("EKF covariance is kept symmetric PSD");
        GaussianMixture::single(g)
    }
}

impl Forecaster for Ekf<'_> {
    type Belief = EkfBelief;

    fn init(&self, x0: &StateVec, _seed: u64) -> Result<EkfBelief> {
        Ok(EkfBelief {
            mean: x0.as_vector().clone(),
            cov: self.model.obs_cov.clone(),
            k: 0,
        })
    }

    fn predict(&self, b: &EkfBelief, _seed: u64) -> Result<EkfBelief> {
        let (mean, cov) = ekf_step(self.model, &b.mean, &b.cov, b.k, None)?;
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("baselines", "EKF mean is not finite"));
        }
        Ok(EkfBelief { mean, cov, k: b.k + 1 })
    }

    fn update(&self, b: &EkfBelief, obs: &StateVec, _seed: u64) -> Result<(EkfBelief, bool)> {
        let (mean, cov) = ekf_update(self.model, &b.mean, &b.cov, obs.as_vector())?;
        Ok((EkfBelief { mean, cov, k: b.k }, false))
    }

    fn summary(&self, b: &EkfBelief) -> GaussianMixture {
        self.gaussian(&b.mean, &b.cov)
    }

    fn observation_mixture(&self, b: &EkfBelief) -> GaussianMixture {
        self.gaussian(&b.mean, &(&b.cov + &self.model.obs_cov))
    }

    fn mode_weights(&self, _b: &EkfBelief) -> Vec<f64> {
        vec![1.0]
    }
}

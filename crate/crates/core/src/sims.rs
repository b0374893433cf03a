//! Seeded generators for the bouncing-ball and box-pushing experiments.
//!
//! Emitted states carry observation noise; the `mode` labels are simulator
//! ground truth and are meant for evaluation only.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::types::{LabeledDataset, ModeLabel, StateVec, Trajectory};

/// Ball ground-truth modes.
pub const BALL_FALLING: ModeLabel = ModeLabel(0);
pub const BALL_RISING: ModeLabel = ModeLabel(1);
/// Box ground-truth modes.
pub const BOX_FREE: ModeLabel = ModeLabel(0);
pub const BOX_CONTACT: ModeLabel = ModeLabel(1);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BallConfig {
    /// Gravity, m/s² (negative is down).
    pub g: f64,
    pub dt: f64,
    /// Initial height range, uniform.
    pub y0_range: (f64, f64),
    /// Per-step process noise variances on (y, ẏ).
    pub process_noise: [f64; 2],
    /// Observation noise variances on (y, ẏ).
    pub obs_noise: [f64; 2],
    /// States per trajectory.
    pub steps: usize,
    pub train: usize,
    pub test: usize,
}

impl Default for BallConfig {
    fn default() -> Self {
        BallConfig {
            g: -9.8,
            dt: 0.05,
            y0_range: (0.8, 1.2),
            process_noise: [0.01, 0.01],
            obs_noise: [0.01, 0.01],
            steps: 100,
            train: 20,
            test: 5,
        }
    }
}

impl BallConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("ball dt must be > 0"));
        }
        if !self.g.is_finite() {
            return Err(Error::config("ball g must be finite"));
        }
        if !(self.y0_range.0 <= self.y0_range.1 && self.y0_range.0 >= 0.0) {
            return Err(Error::config("ball y0_range must be an ordered non-negative interval"));
        }
        if self.process_noise.iter().chain(&self.obs_noise).any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::config("ball noise variances must be >= 0"));
        }
        if self.steps < 2 {
            return Err(Error::config("ball trajectories need at least 2 states"));
        }
        Ok(())
    }
}

/// One noiseless ball step, with elastic reflection at `y = 0`.
pub fn ball_step(cfg: &BallConfig, y: f64, v: f64) -> (f64, f64) {
    let yn = y + v * cfg.dt + 0.5 * cfg.g * cfg.dt * cfg.dt;
    let vn = v + cfg.g * cfg.dt;
    reflect(yn, vn)
}

fn reflect(y: f64, v: f64) -> (f64, f64) {
    if y < 0.0 {
        (-y, v.abs())
    } else {
        (y, v)
    }
}

fn ball_label(v: f64) -> ModeLabel {
    if v > 0.0 {
        BALL_RISING
    } else {
        BALL_FALLING
    }
}

/// Simulator output: noisy observations with true labels, plus the latent
/// noiseless-observation states.
#[derive(Debug, Clone)]
pub struct SimData {
    pub observed: LabeledDataset,
    pub truth: Vec<Trajectory>,
}

impl SimData {
    /// First `n` trajectories and the rest.
    pub fn split(&self, n: usize) -> Result<(SimData, SimData)> {
        let total = self.truth.len();
        if n > total {
            return Err(Error::input(format!("cannot take {n} of {total} trajectories")));
        }
        let a: Vec<usize> = (0..n).collect();
        let b: Vec<usize> = (n..total).collect();
        Ok((
            SimData {
                observed: self.observed.subset(&a)?,
                truth: a.iter().map(|&i| self.truth[i].clone()).collect(),
            },
            SimData {
                observed: self.observed.subset(&b)?,
                truth: b.iter().map(|&i| self.truth[i].clone()).collect(),
            },
        ))
    }
}

fn gaussian(var: f64) -> Normal<f64> {
    Normal::new(0.0, var.sqrt()).expect("validated variance")
}

/// `cfg.train + cfg.test` ball trajectories.
pub fn gen_ball(cfg: &BallConfig, seed: u64) -> Result<SimData> {
    cfg.validate()?;
    let n = cfg.train + cfg.test;
    let pn: Vec<Normal<f64>> = cfg.process_noise.iter().map(|&v| gaussian(v)).collect();
    let on: Vec<Normal<f64>> = cfg.obs_noise.iter().map(|&v| gaussian(v)).collect();
    let runs: Vec<(Trajectory, Trajectory, Vec<ModeLabel>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(rng::derive(seed, &[rng::tag("ball")]), i as u64);
            let (lo, hi) = cfg.y0_range;
            let mut y = if hi > lo { r.random_range(lo..=hi) } else { lo };
            let mut v = 0.0;
            let mut truth = Vec::with_capacity(cfg.steps);
            let mut obs = Vec::with_capacity(cfg.steps);
            let mut labels = Vec::with_capacity(cfg.steps);
            for k in 0..cfg.steps {
                if k > 0 {
                    let yn = y + v * cfg.dt + 0.5 * cfg.g * cfg.dt * cfg.dt + pn[0].sample(&mut r);
                    let vn = v + cfg.g * cfg.dt + pn[1].sample(&mut r);
                    (y, v) = reflect(yn, vn);
                }
                truth.push(StateVec::from_slice(&[y, v]).expect("finite"));
                obs.push(
                    StateVec::from_slice(&[y + on[0].sample(&mut r), v + on[1].sample(&mut r)])
                        .expect("finite"),
                );
                labels.push(ball_label(v));
            }
            (
                Trajectory::new(obs, cfg.dt).expect("valid"),
                Trajectory::new(truth, cfg.dt).expect("valid"),
                labels,
            )
        })
        .collect();
    assemble(runs)
}

fn assemble(runs: Vec<(Trajectory, Trajectory, Vec<ModeLabel>)>) -> Result<SimData> {
    let mut obs = Vec::new();
    let mut truth = Vec::new();
    let mut labels = Vec::new();
    for (o, t, l) in runs {
        obs.push(o);
        truth.push(t);
        labels.push(l);
    }
    Ok(SimData {
        observed: LabeledDataset::new(obs, labels)?,
        truth,
    })
}

/// Which sign convention the contact test uses on the centre gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactRule {
    /// Contact once the gap has closed: `x_o − x_r ≤ d`.
    Closing,
    /// The inequality read literally: `x_o − x_r ≥ d`.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoxConfig {
    /// cm
    pub robot_radius: f64,
    /// cm
    pub box_size: f64,
    /// Initial centre-to-centre distance along x, cm.
    pub initial_gap: f64,
    /// Robot speed while pushing, cm/s.
    pub robot_speed: f64,
    /// Seconds of robot motion before it stops.
    pub push_duration: f64,
    /// Total trajectory length, seconds.
    pub duration: f64,
    pub dt: f64,
    /// Minimum lateral robot position for contact, cm.
    pub contact_y: f64,
    pub y_r_mean: f64,
    pub y_r_var: f64,
    /// Observation noise variance on every coordinate.
    pub obs_noise: f64,
    pub contact_rule: ContactRule,
    pub train: usize,
    pub test: usize,
}

impl Default for BoxConfig {
    fn default() -> Self {
        BoxConfig {
            robot_radius: 2.0,
            box_size: 4.0,
            initial_gap: 6.0,
            robot_speed: 4.0,
            push_duration: 1.0,
            duration: 2.0,
            dt: 0.2,
            contact_y: 6.0,
            y_r_mean: 6.0,
            y_r_var: 0.5,
            obs_noise: 0.1,
            contact_rule: ContactRule::Closing,
            train: 30,
            test: 6,
        }
    }
}

impl BoxConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            self.robot_radius,
            self.box_size,
            self.initial_gap,
            self.robot_speed,
            self.push_duration,
            self.duration,
            self.dt,
        ];
        if pos.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::config("box geometry, speeds and times must be > 0"));
        }
        if !(self.y_r_var >= 0.0 && self.obs_noise >= 0.0) {
            return Err(Error::config("box noise variances must be >= 0"));
        }
        if self.steps() < 2 {
            return Err(Error::config("box duration must cover at least one step"));
        }
        Ok(())
    }

    /// States per trajectory.
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize + 1
    }

    fn push_steps(&self) -> usize {
        (self.push_duration / self.dt).round() as usize
    }

    /// Centre gap at which robot and box touch.
    pub fn contact_distance(&self) -> f64 {
        self.robot_radius + self.box_size / 2.0
    }

    pub fn in_contact(&self, x_o: f64, x_r: f64, y_r: f64) -> bool {
        let gap = x_o - x_r;
        let along = match self.contact_rule {
            ContactRule::Closing => gap <= self.contact_distance(),
            ContactRule::Literal => gap >= self.contact_distance(),
        };
        along && y_r >= self.contact_y
    }

    /// Noiseless states `(x_o, v_o, x_r, y_r, v_r)` for a given lateral offset.
    pub fn rollout(&self, y_r: f64) -> Vec<[f64; 5]> {
        let n = self.steps();
        let push = self.push_steps();
        let mut s = [self.initial_gap, 0.0, 0.0, y_r, self.robot_speed];
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            if k > 0 {
                s = self.step(s);
            }
            s[4] = if k < push { self.robot_speed } else { 0.0 };
            out.push(s);
        }
        out
    }

    /// Advance one step from the state at index `k - 1`.
    fn step(&self, s: [f64; 5]) -> [f64; 5] {
        let [x_o, v_o, x_r, y_r, v_r] = s;
        let v_o_next = if self.in_contact(x_o, x_r, y_r) { v_r } else { 0.0 };
        [x_o + v_o * self.dt, v_o_next, x_r + v_r * self.dt, y_r, v_r]
    }
}

/// `cfg.train + cfg.test` box-pushing trajectories.
pub fn gen_box(cfg: &BoxConfig, seed: u64) -> Result<SimData> {
    cfg.validate()?;
    let n = cfg.train + cfg.test;
    let yr = Normal::new(cfg.y_r_mean, cfg.y_r_var.sqrt()).expect("validated");
    let on = gaussian(cfg.obs_noise);
    let runs: Vec<(Trajectory, Trajectory, Vec<ModeLabel>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(rng::derive(seed, &[rng::tag("box")]), i as u64);
            let y_r = yr.sample(&mut r);
            let states = cfg.rollout(y_r);
            let mut truth = Vec::with_capacity(states.len());
            let mut obs = Vec::with_capacity(states.len());
            let mut labels = Vec::with_capacity(states.len());
            for s in &states {
                truth.push(StateVec::from_slice(s).expect("finite"));
                let noisy: Vec<f64> = s.iter().map(|v| v + on.sample(&mut r)).collect();
                obs.push(StateVec::from_slice(&noisy).expect("finite"));
                labels.push(if cfg.in_contact(s[0], s[2], s[3]) {
                    BOX_CONTACT
                } else {
                    BOX_FREE
                });
            }
            (
                Trajectory::new(obs, cfg.dt).expect("valid"),
                Trajectory::new(truth, cfg.dt).expect("valid"),
                labels,
            )
        })
        .collect();
    assemble(runs)
}

/// Indices `s` where `labels[s] != labels[s-1]`.
pub fn transitions(labels: &[ModeLabel]) -> Vec<usize> {
    (1..labels.len()).filter(|&s| labels[s] != labels[s - 1]).collect()
}

/// Indices `s` where the label switches from `from` to `to` at `s`.
pub fn transitions_of(labels: &[ModeLabel], from: ModeLabel, to: ModeLabel) -> Vec<usize> {
    (1..labels.len())
        .filter(|&s| labels[s - 1] == from && labels[s] == to)
        .collect()
}

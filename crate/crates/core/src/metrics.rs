//! n-step prediction and tracking log-likelihoods, split by distance to the
//! nearest ground-truth mode transition.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::sims::transitions;
use crate::tracking::{self, axis_loglik, count_components, Forecaster, StepRecord};
use crate::types::{GaussianMixture, LabeledDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Near,
    Far,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Near => "near",
            Regime::Far => "far",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Longest prediction horizon.
    pub n_max: usize,
    /// Steps of slack around a transition that still count as near it.
    pub window: usize,
    /// State coordinates the log-likelihood is computed on.
    pub axes: Vec<usize>,
    /// Skip the open-loop rollouts and report tracking only.
    pub tracking_only: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_max: 5,
            window: 2,
            axes: vec![1],
            tracking_only: false,
        }
    }
}

/// One `(trajectory, t, n)` evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub method: String,
    pub trajectory: usize,
    pub t: usize,
    pub n: usize,
    pub regime: Regime,
    /// Open-loop prediction from the posterior at `t`, scored at `t + n`.
    pub prior_ll: f64,
    /// Filter posterior at `t + n`, scored at `t + n`.
    pub posterior_ll: f64,
}

/// Whether any transition `s` lies in `(t − w, t + n + w]`.
pub fn near_transition(trans: &[usize], t: usize, n: usize, w: usize) -> bool {
    trans.iter().any(|&s| s + w > t && s <= t + n + w)
}

/// Evaluate one method on every test trajectory.
///
/// Transitions are read from the labels of `test` (simulator ground truth).
pub fn nstep_eval<F: Forecaster>(
    method: &str,
    f: &F,
    test: &LabeledDataset,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<Vec<EvalRow>> {
    if cfg.n_max == 0 {
        return Err(Error::config("n_max must be >= 1"));
    }
    let mut rows = Vec::new();
    for (i, (traj, labels)) in test.trajectories().iter().zip(test.labels()).enumerate() {
        let trans = transitions(labels);
        let tseed = rng::derive(seed, &[rng::tag("traj"), i as u64]);
        let (records, beliefs) = tracking::track_beliefs(f, traj, &cfg.axes, tseed)?;
        let big_t = traj.len();
        let per_t: Vec<Result<Vec<EvalRow>>> = (0..big_t - 1)
            .into_par_iter()
            .map(|t| {
                let horizon = cfg.n_max.min(big_t - 1 - t);
                let mut out = Vec::with_capacity(horizon);
                let mut b = beliefs[t].clone();
                for n in 1..=horizon {
                    let prior_ll = if cfg.tracking_only {
                        f64::NAN
                    } else {
                        b = f.predict(&b, rng::derive(tseed, &[rng::tag("nstep"), t as u64, n as u64]))?;
                        axis_loglik(&f.observation_mixture(&b), &traj.states()[t + n], &cfg.axes)?
                    };
                    out.push(EvalRow {
                        method: method.to_string(),
                        trajectory: i,
                        t,
                        n,
                        regime: if near_transition(&trans, t, n, cfg.window) {
                            Regime::Near
                        } else {
                            Regime::Far
                        },
                        prior_ll,
                        posterior_ll: records[t + n].posterior_ll,
                    });
                }
                Ok(out)
            })
            .collect();
        for r in per_t {
            rows.extend(r?);
        }
    }
    Ok(rows)
}

/// Aggregate of one `(method, n, regime)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub n: usize,
    pub regime: Regime,
    pub mean_ll: f64,
    pub median_ll: f64,
    pub count: usize,
}

/// Which log-likelihood column to aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    Prediction,
    Tracking,
}

/// Mean/median/count per cell, ordered by method (first appearance), n, regime.
pub fn summarize(rows: &[EvalRow], col: Column) -> Vec<SummaryRow> {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let n_max = rows.iter().map(|r| r.n).max().unwrap_or(0);
    let mut out = Vec::new();
    for m in methods {
        for n in 1..=n_max {
            for regime in [Regime::Near, Regime::Far] {
                let mut v: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.method == m && r.n == n && r.regime == regime)
                    .map(|r| match col {
                        Column::Prediction => r.prior_ll,
                        Column::Tracking => r.posterior_ll,
                    })
                    .filter(|v| !v.is_nan())
                    .collect();
                if v.is_empty() {
                    continue;
                }
                v.sort_by(f64::total_cmp);
                let count = v.len();
                let median = if count % 2 == 1 {
                    v[count / 2]
                } else {
                    0.5 * (v[count / 2 - 1] + v[count / 2])
                };
                out.push(SummaryRow {
                    method: m.to_string(),
                    n,
                    regime,
                    mean_ll: v.iter().sum::<f64>() / count as f64,
                    median_ll: median,
                    count,
                });
            }
        }
    }
    out
}

/// Look up one cell's mean.
pub fn cell_mean(summary: &[SummaryRow], method: &str, n: usize, regime: Regime) -> Option<f64> {
    summary
        .iter()
        .find(|s| s.method == method && s.n == n && s.regime == regime)
        .map(|s| s.mean_ll)
}

/// Components with weight ≥ `threshold`, per mixture.
pub fn multimodality_report(mixtures: &[GaussianMixture], threshold: f64) -> Vec<usize> {
    mixtures.iter().map(|m| count_components(m, threshold)).collect()
}

/// Shape of one predictive mixture along a single coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityRow {
    pub step: usize,
    /// Components with weight ≥ the threshold.
    pub components: usize,
    /// Some pair of those components has means of opposite sign on the axis.
    pub opposite_signs: bool,
}

/// Inspect the one-step predictive mixtures `records[s].prior` at `steps`.
pub fn modality_at(records: &[StepRecord], steps: &[usize], axis: usize, threshold: f64) -> Vec<ModalityRow> {
    steps
        .iter()
        .filter(|&&s| s < records.len())
        .map(|&s| {
            let mix = &records[s].prior;
            let means: Vec<f64> = mix
                .components()
                .iter()
                .filter(|(w, _)| *w >= threshold)
                .map(|(_, g)| g.mean().as_slice()[axis])
                .collect();
            let opposite_signs = means.iter().any(|&a| a > 0.0) && means.iter().any(|&a| a < 0.0);
            ModalityRow {
                step: s,
                components: means.len(),
                opposite_signs,
            }
        })
        .collect()
}

pub fn write_summary<W: Write>(w: W, rows: &[SummaryRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::input(format!("csv: {e}"));
    out.write_record(["method", "n", "regime", "mean_ll", "median_ll", "count"]).map_err(err)?;
    for r in rows {
        out.write_record([
            r.method.clone(),
            r.n.to_string(),
            r.regime.as_str().to_string(),
            format!("{}", r.mean_ll),
            format!("{}", r.median_ll),
            r.count.to_string(),
        ])
        .map_err(err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_raw<W: Write>(w: W, rows: &[EvalRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::input(format!("csv: {e}"));
    out.write_record(["method", "trajectory", "t", "n", "regime", "prior_ll", "posterior_ll"])
        .map_err(err)?;
    for r in rows {
        out.write_record([
            r.method.clone(),
            r.trajectory.to_string(),
            r.t.to_string(),
            r.n.to_string(),
            r.regime.as_str().to_string(),
            format!("{}", r.prior_ll),
            format!("{}", r.posterior_ll),
        ])
        .map_err(err)?;
    }
    out.flush()?;
    Ok(())
}

/// Tracking CSV: `[method,]step,n_ahead,prior_ll,posterior_ll,n_components,w0..`.
pub fn write_tracking<W: Write>(
    w: W,
    method: Option<&str>,
    records: &[StepRecord],
    num_modes: usize,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::input(format!("csv: {e}"));
    let mut header: Vec<String> = Vec::new();
    if method.is_some() {
        header.push("method".into());
    }
    header.extend(
        ["step", "n_ahead", "prior_ll", "posterior_ll", "n_components"]
            .iter()
            .map(|s| s.to_string()),
    );
    header.extend((0..num_modes).map(|m| format!("w{m}")));
    out.write_record(&header).map_err(err)?;
    for r in records {
        let mut rec: Vec<String> = Vec::new();
        if let Some(m) = method {
            rec.push(m.to_string());
        }
        rec.push(r.step.to_string());
        rec.push("1".into());
        rec.push(format!("{}", r.prior_ll));
        rec.push(format!("{}", r.posterior_ll));
        rec.push(count_components(&r.prior, 0.1).to_string());
        for m in 0..num_modes {
            rec.push(format!("{}", r.mode_weights.get(m).copied().unwrap_or(0.0)));
        }
        out.write_record(&rec).map_err(err)?;
    }
    out.flush()?;
    Ok(())
}

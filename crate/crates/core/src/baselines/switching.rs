//! Switching GP: per-mode dynamics GPs and a state-independent Markov chain
//! over modes. After a switch the particle moves with the new mode's
//! dynamics; there are no reset maps.
//!
//! This is a simplified stand-in for full switching-GP inference, sharing the
//! hybrid learner's initial clustering so both start from the same labels.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::{self, Classifier};
use crate::clustering::{self, ClusterConfig};
use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::learner::{build_pairs, dyn_seed, fit_pairs, LearnConfig};
use crate::rng;
use crate::tracking::{sample_gp, TransitionModel};
use crate::types::{LabeledDataset, ModeLabel};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SwitchingGp {
    pub dynamics: Vec<GpModel>,
    /// Row-stochastic `K×K` matrix, `transition[(from, to)]`.
    pub transition: DMatrix<f64>,
    pub mode_clf: Classifier,
}

/// Add-one smoothed, row-normalized bigram counts of consecutive labels.
pub fn bigram_matrix(labels: &[Vec<ModeLabel>], k: usize) -> DMatrix<f64> {
    let mut c = DMatrix::from_element(k, k, 1.0);
    for l in labels {
        for w in l.windows(2) {
            c[(w[0].0, w[1].0)] += 1.0;
        }
    }
    for mut row in c.row_iter_mut() {
        let s: f64 = row.sum();
        row /= s;
    }
    c
}

impl SwitchingGp {
    /// Learn from unlabeled data with the hybrid learner's clustering seed.
    pub fn learn(ds: &LabeledDataset, cfg: &LearnConfig) -> Result<Self> {
        if cfg.num_modes < 2 {
            return Err(Error::config("switching GP needs at least 2 modes"));
        }
        let labeled = clustering::initial_modes(
            ds,
            &ClusterConfig {
                num_modes: cfg.num_modes,
                beta0: cfg.cluster_beta0,
                seed: rng::derive(cfg.seed, &[rng::tag("cluster")]),
            },
        )?;
        Self::learn_from_labels(&labeled, cfg)
    }

    pub fn learn_from_labels(labeled: &LabeledDataset, cfg: &LearnConfig) -> Result<Self> {
        let k = cfg.num_modes;
        let pairs = build_pairs(labeled);
        let mut dynamics = Vec::with_capacity(k);
        for m in 0..k {
            let m = ModeLabel(m);
            let bucket = match pairs.dyn_pairs.get(&m) {
                Some(p) if !p.is_empty() => p.clone(),
                // A mode seen only at switches still needs some dynamics:
                // use every pair leaving it.
                _ => pairs
                    .guard_pairs
                    .iter()
                    .filter(|((a, _), _)| *a == m)
                    .flat_map(|(_, v)| v.iter().cloned())
                    .collect(),
            };
            if bucket.is_empty() {
                return Err(Error::numerical("baselines", format!("switching mode {m} has no pairs")));
            }
            dynamics.push(fit_pairs(&bucket, &cfg.gp, dyn_seed(cfg.seed, m))?);
        }
        Ok(SwitchingGp {
            dynamics,
            transition: bigram_matrix(labeled.labels(), k),
            mode_clf: classify::train_mode_classifier(labeled, &cfg.classifier)?,
        })
    }
}

impl TransitionModel for SwitchingGp {
    fn num_modes(&self) -> usize {
        self.dynamics.len()
    }

    fn dim(&self) -> usize {
        self.dynamics[0].input_dim()
    }

    fn initial_mode_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.mode_clf.proba_over_modes(x, self.num_modes())
    }

    fn next_mode_probs(&self, m: ModeLabel, _x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.transition.row(m.0).iter().copied().collect())
    }

    fn sample_next(&self, _from: ModeLabel, to: ModeLabel, x: &[f64], rng: &mut ChaCha8Rng) -> Result<DVector<f64>> {
        sample_gp(&self.dynamics[to.0], x, rng)
    }
}

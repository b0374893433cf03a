//! One GP over every consecutive pair, ignoring modes.

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gp::{FitConfig, GpModel};
use crate::learner::{dyn_seed, fit_pairs};
use crate::oversample::TuplePair;
use crate::tracking::{sample_gp, TransitionModel};
use crate::types::{LabeledDataset, ModeLabel};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SingleGp {
    pub gp: GpModel,
}

impl SingleGp {
    /// Seeded exactly like mode 0 of a one-mode hybrid model, so the two
    /// coincide on the same data.
    pub fn learn(ds: &LabeledDataset, cfg: &FitConfig, seed: u64) -> Result<Self> {
        let pairs: Vec<TuplePair> = ds
            .trajectories()
            .iter()
            .flat_map(|t| {
                t.states()
                    .windows(2)
                    .map(|w| TuplePair { pre: w[0].clone(), post: w[1].clone() })
            })
            .collect();
        Ok(SingleGp {
            gp: fit_pairs(&pairs, cfg, dyn_seed(seed, ModeLabel(0)))?,
        })
    }
}

impl TransitionModel for SingleGp {
    fn num_modes(&self) -> usize {
        1
    }

    fn dim(&self) -> usize {
        self.gp.input_dim()
    }

    fn initial_mode_probs(&self, _x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![1.0])
    }

    fn next_mode_probs(&self, _m: ModeLabel, _x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![1.0])
    }

    fn sample_next(&self, _f: ModeLabel, _t: ModeLabel, x: &[f64], rng: &mut ChaCha8Rng) -> Result<DVector<f64>> {
        sample_gp(&self.gp, x, rng)
    }
}

//! End-to-end pipeline shared by the CLI and the acceptance tests:
//! simulate, train every method, evaluate every method.

use log::info;

use crate::baselines::{Ekf, EkfModel, SingleGp, SwitchingGp};
use crate::config::{Experiment, ExperimentConfig};
use crate::error::Result;
use crate::learner::{self, HybridModel, LearnConfig};
use crate::metrics::{self, EvalRow, ModalityRow};
use crate::rng;
use crate::sims::{self, SimData, BALL_FALLING, BALL_RISING};
use crate::tracking::{self, Forecaster, ParticleFilter};
use crate::types::LabeledDataset;

/// Method names as they appear in output tables.
pub const HYBRID: &str = "hybrid";
pub const SINGLE_GP: &str = "gp";
pub const SWITCHING: &str = "switching";
pub const EKF: &str = "ekf";
pub const METHODS: [&str; 4] = [HYBRID, SINGLE_GP, SWITCHING, EKF];

/// Generate data for `cfg.experiment` and split it into train and test.
pub fn simulate(cfg: &ExperimentConfig, seed: u64) -> Result<(SimData, SimData)> {
    let data = match cfg.experiment {
        Experiment::Ball => sims::gen_ball(&cfg.ball, seed)?,
        Experiment::Box => sims::gen_box(&cfg.boxes, seed)?,
    };
    data.split(cfg.split_sizes().0)
}

/// Learner settings with the run seed applied.
pub fn learn_config(cfg: &ExperimentConfig, seed: u64) -> LearnConfig {
    LearnConfig {
        seed,
        ..cfg.learn.clone()
    }
}

pub struct Models {
    pub hybrid: HybridModel,
    pub single: SingleGp,
    pub switching: SwitchingGp,
}

/// Train the hybrid model and both GP baselines on unlabeled trajectories.
pub fn train(cfg: &ExperimentConfig, train: &LabeledDataset, seed: u64) -> Result<Models> {
    let lc = learn_config(cfg, seed);
    let unlabeled = LabeledDataset::unlabeled(train.trajectories().to_vec())?;
    let hybrid = learner::learn(&unlabeled, &lc)?;
    info!("hybrid: change counts {:?}", hybrid.change_counts());
    let single = SingleGp::learn(&unlabeled, &lc.gp, seed)?;
    let switching = SwitchingGp::learn(&unlabeled, &lc)?;
    Ok(Models {
        hybrid,
        single,
        switching,
    })
}

/// The EKF baseline, built from the simulator's true equations and noise.
pub fn ekf_model(cfg: &ExperimentConfig) -> EkfModel {
    match cfg.experiment {
        Experiment::Ball => EkfModel::ball(&cfg.ball),
        Experiment::Box => EkfModel::boxes(&cfg.boxes),
    }
}

/// Seed shared by every method during evaluation.
pub fn eval_seed(seed: u64) -> u64 {
    rng::derive(seed, &[rng::tag("eval")])
}

pub struct Evaluation {
    pub rows: Vec<EvalRow>,
    /// Hybrid one-step predictive mixtures at the step before each bounce
    /// (ball only).
    pub modality: Vec<(usize, ModalityRow)>,
}

/// Run every method on the same test stream with the same seed.
pub fn evaluate(cfg: &ExperimentConfig, models: &Models, test: &LabeledDataset, seed: u64) -> Result<Evaluation> {
    let es = eval_seed(seed);
    let hybrid = ParticleFilter::new(&models.hybrid, cfg.filter.clone())?;
    let single = ParticleFilter::new(&models.single, cfg.filter.clone())?;
    let switching = ParticleFilter::new(&models.switching, cfg.filter.clone())?;
    let ekf_model = ekf_model(cfg);
    let ekf = Ekf { model: &ekf_model };

    let mut rows = Vec::new();
    rows.extend(metrics::nstep_eval(HYBRID, &hybrid, test, &cfg.eval, es)?);
    rows.extend(metrics::nstep_eval(SINGLE_GP, &single, test, &cfg.eval, es)?);
    rows.extend(metrics::nstep_eval(SWITCHING, &switching, test, &cfg.eval, es)?);
    rows.extend(metrics::nstep_eval(EKF, &ekf, test, &cfg.eval, es)?);

    let modality = match cfg.experiment {
        Experiment::Ball => bounce_modality(&hybrid, test, &cfg.eval.axes, es)?,
        Experiment::Box => Vec::new(),
    };
    Ok(Evaluation { rows, modality })
}

/// For each ground-truth bounce with first rising index `s`, the shape of
/// the one-step predictive mixture for step `s − 1`, the last falling step.
/// Returns `(trajectory, row)` pairs.
pub fn bounce_modality<F: Forecaster>(
    f: &F,
    test: &LabeledDataset,
    axes: &[usize],
    seed: u64,
) -> Result<Vec<(usize, ModalityRow)>> {
    let axis = axes.first().copied().unwrap_or(1);
    let mut out = Vec::new();
    for (i, (traj, labels)) in test.trajectories().iter().zip(test.labels()).enumerate() {
        // Same per-trajectory seed as `nstep_eval`, so this is the filter run
        // behind the tracking tables.
        let tseed = rng::derive(seed, &[rng::tag("traj"), i as u64]);
        let records = tracking::track(f, traj, axes, tseed)?;
        let before: Vec<usize> = sims::transitions_of(labels, BALL_FALLING, BALL_RISING)
            .into_iter()
            .filter(|&s| s >= 1)
            .map(|s| s - 1)
            .collect();
        for row in metrics::modality_at(&records, &before, axis, 0.1) {
            out.push((i, row));
        }
    }
    Ok(out)
}

//! Command-line interface.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use crate::baselines::{Ekf, SingleGp, SwitchingGp};
use crate::config::{Experiment, ExperimentConfig};
use crate::error::{Error, Result};
use crate::experiment::{self, Evaluation, Models};
use crate::io;
use crate::learner::{HybridModel, SCHEMA_VERSION};
use crate::metrics::{self, Column};
use crate::rng;
use crate::tracking::{self, ParticleFilter};
use crate::types::LabeledDataset;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "PWSHS_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "pwshs", version, about = "Learn and track piecewise-smooth hybrid systems")]
pub struct Cli {
    /// Worker threads; defaults to the number of available cores. Results do
    /// not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train and test trajectories.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = OUT_DIR_ENV, default_value = "pwshs-out")]
        out: PathBuf,
    },
    /// Learn the hybrid model and the GP baselines from a trajectory directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Filter one trajectory CSV and write per-step log-likelihoods.
    Track {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Hybrid)]
        method: Method,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate every method on a test directory.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = OUT_DIR_ENV, default_value = "pwshs-out")]
        out: PathBuf,
    },
    /// Simulate, train and evaluate for every replicate seed.
    Repro {
        #[arg(value_enum)]
        experiment: ExperimentArg,
        /// Overrides the built-in configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, env = OUT_DIR_ENV, default_value = "pwshs-out")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Hybrid,
    Gp,
    Switching,
    Ekf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentArg {
    Ball,
    Box,
}

impl From<ExperimentArg> for Experiment {
    fn from(e: ExperimentArg) -> Self {
        match e {
            ExperimentArg::Ball => Experiment::Ball,
            ExperimentArg::Box => Experiment::Box,
        }
    }
}

/// Everything needed to regenerate a run's outputs.
#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    experiment: &'a str,
    seed: u64,
    replicates: Vec<u64>,
    config_hash: String,
    config: &'a ExperimentConfig,
    pwshs_version: &'static str,
    model_schema: u32,
}

fn write_manifest(dir: &Path, command: &str, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let m = RunManifest {
        command,
        experiment: cfg.experiment.as_str(),
        seed: cfg.seed,
        replicates: cfg.replicate_seeds(),
        config_hash: cfg.hash(),
        config: cfg,
        pwshs_version: env!("CARGO_PKG_VERSION"),
        model_schema: SCHEMA_VERSION,
    };
    fs::write(dir.join("run_manifest.json"), serde_json::to_string_pretty(&m)?)?;
    Ok(())
}

/// Parse arguments from the process and run. Returns the exit code.
pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("pwshs: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli.command))
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            cmd_simulate(&cfg, cfg.seed, &out)?;
            write_manifest(&out, "simulate", &cfg)
        }
        Command::Train { data, config, model } => {
            let cfg = ExperimentConfig::load(&config)?;
            cmd_train(&cfg, cfg.seed, &data, &model)?;
            write_manifest(&model, "train", &cfg)
        }
        Command::Track {
            model,
            data,
            method,
            config,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            cmd_track(&cfg, &model, &data, method, &out)
        }
        Command::Eval {
            model,
            test,
            config,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            cmd_eval(&cfg, cfg.seed, &model, &test, &out)?;
            write_manifest(&out, "eval", &cfg)
        }
        Command::Repro { experiment, config, out } => {
            let cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::builtin(experiment.into()),
            };
            if cfg.experiment != Experiment::from(experiment) {
                return Err(Error::Config(format!(
                    "config is for experiment '{}'",
                    cfg.experiment.as_str()
                )));
            }
            cmd_repro(&cfg, &out)
        }
    }
}

/// Write `out/train/*.csv` and `out/test/*.csv` with ground-truth modes, and
/// the latent states under `out/truth/`.
pub fn cmd_simulate(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<()> {
    let (train, test) = experiment::simulate(cfg, seed)?;
    for (name, d) in [("train", &train), ("test", &test)] {
        io::write_dataset_dir(&out.join(name), &d.observed, true)?;
        let truth = LabeledDataset::new(d.truth.clone(), d.observed.labels().to_vec())?;
        io::write_dataset_dir(&out.join("truth").join(name), &truth, true)?;
    }
    info!(
        "simulated {} train and {} test trajectories into {}",
        train.truth.len(),
        test.truth.len(),
        out.display()
    );
    Ok(())
}

/// Train on the trajectories in `data` (mode columns ignored) and save the
/// hybrid model at `model/`, baselines under `model/baselines/`.
pub fn cmd_train(cfg: &ExperimentConfig, seed: u64, data: &Path, model: &Path) -> Result<Models> {
    let ds = io::read_dataset_dir(data)?;
    let models = experiment::train(cfg, &ds, seed)?;
    save_models(&models, model)?;
    Ok(models)
}

pub fn save_models(models: &Models, dir: &Path) -> Result<()> {
    models.hybrid.save(dir)?;
    let mut log = String::from("iteration,change_count\n");
    for (i, c) in models.hybrid.change_counts().iter().enumerate() {
        log.push_str(&format!("{},{c}\n", i + 1));
    }
    fs::write(dir.join("train_log.csv"), log)?;
    let b = dir.join("baselines");
    fs::create_dir_all(&b)?;
    fs::write(b.join("single_gp.json"), serde_json::to_vec(&models.single)?)?;
    fs::write(b.join("switching.json"), serde_json::to_vec(&models.switching)?)?;
    Ok(())
}

pub fn load_models(dir: &Path) -> Result<Models> {
    let b = dir.join("baselines");
    Ok(Models {
        hybrid: HybridModel::load(dir)?,
        single: serde_json::from_slice(&fs::read(b.join("single_gp.json"))?)?,
        switching: serde_json::from_slice(&fs::read(b.join("switching.json"))?)?,
    })
}

pub fn cmd_track(cfg: &ExperimentConfig, model: &Path, data: &Path, method: Method, out: &Path) -> Result<()> {
    let (traj, _) = io::read_trajectory_file(data)?;
    let seed = rng::derive(cfg.seed, &[rng::tag("track")]);
    let axes = &cfg.eval.axes;
    let file = fs::File::create(out)?;
    match method {
        Method::Hybrid => {
            let m = HybridModel::load(model)?;
            let pf = ParticleFilter::new(&m, cfg.filter.clone())?;
            let rec = tracking::track(&pf, &traj, axes, seed)?;
            metrics::write_tracking(file, None, &rec, m.num_modes())
        }
        Method::Gp => {
            let m: SingleGp = serde_json::from_slice(&fs::read(model.join("baselines/single_gp.json"))?)?;
            let pf = ParticleFilter::new(&m, cfg.filter.clone())?;
            let rec = tracking::track(&pf, &traj, axes, seed)?;
            metrics::write_tracking(file, Some(experiment::SINGLE_GP), &rec, 1)
        }
        Method::Switching => {
            let m: SwitchingGp = serde_json::from_slice(&fs::read(model.join("baselines/switching.json"))?)?;
            let pf = ParticleFilter::new(&m, cfg.filter.clone())?;
            let rec = tracking::track(&pf, &traj, axes, seed)?;
            metrics::write_tracking(file, Some(experiment::SWITCHING), &rec, m.dynamics.len())
        }
        Method::Ekf => {
            let m = experiment::ekf_model(cfg);
            let rec = tracking::track(&Ekf { model: &m }, &traj, axes, seed)?;
            metrics::write_tracking(file, Some(experiment::EKF), &rec, 1)
        }
    }
}

pub fn cmd_eval(cfg: &ExperimentConfig, seed: u64, model: &Path, test: &Path, out: &Path) -> Result<Evaluation> {
    let models = load_models(model)?;
    let test = io::read_dataset_dir(test)?;
    let ev = experiment::evaluate(cfg, &models, &test, seed)?;
    write_evaluation(&ev, out)?;
    Ok(ev)
}

/// `prediction.csv` and `tracking.csv` summaries, `raw.csv`, and for the
/// ball `modality.csv`.
pub fn write_evaluation(ev: &Evaluation, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    metrics::write_summary(
        fs::File::create(out.join("prediction.csv"))?,
        &metrics::summarize(&ev.rows, Column::Prediction),
    )?;
    metrics::write_summary(
        fs::File::create(out.join("tracking.csv"))?,
        &metrics::summarize(&ev.rows, Column::Tracking),
    )?;
    metrics::write_raw(fs::File::create(out.join("raw.csv"))?, &ev.rows)?;
    if !ev.modality.is_empty() {
        let mut s = String::from("trajectory,step,components,opposite_signs\n");
        for (i, r) in &ev.modality {
            s.push_str(&format!("{i},{},{},{}\n", r.step, r.components, r.opposite_signs));
        }
        fs::write(out.join("modality.csv"), s)?;
    }
    Ok(())
}

/// Full pipeline per replicate seed into `out/seed_<s>/{data,model,metrics}`.
pub fn cmd_repro(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    for seed in cfg.replicate_seeds() {
        let dir = out.join(format!("seed_{seed}"));
        let data = dir.join("data");
        cmd_simulate(cfg, seed, &data)?;
        let model = dir.join("model");
        cmd_train(cfg, seed, &data.join("train"), &model)?;
        cmd_eval(cfg, seed, &model, &data.join("test"), &dir.join("metrics"))?;
        info!("replicate {seed} done");
    }
    write_manifest(out, "repro", cfg)
}

//! Hybrid-system identification: pair partitioning, GP training, MAPCL
//! relabeling and the outer loop that iterates them to a fixed point.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::{info, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{self, Classifier, LogisticConfig};
use crate::clustering::{self, ClusterConfig};
use crate::error::{Error, Result};
use crate::gp::{self, FitConfig, GpModel};
use crate::oversample::{self, TuplePair};
use crate::rng;
use crate::types::{isotropic_logpdf, LabeledDataset, ModeLabel, StateVec};

pub const SCHEMA_VERSION: u32 = 1;

/// Where a pair came from: trajectory index and time index of `x_t`.
pub type PairOrigin = (usize, usize);

/// Consecutive pairs split into same-mode buckets and mode-change buckets.
#[derive(Debug, Clone, Default)]
pub struct TransitionPairSet {
    pub dyn_pairs: BTreeMap<ModeLabel, Vec<TuplePair>>,
    pub dyn_origins: BTreeMap<ModeLabel, Vec<PairOrigin>>,
    pub guard_pairs: BTreeMap<(ModeLabel, ModeLabel), Vec<TuplePair>>,
    pub guard_origins: BTreeMap<(ModeLabel, ModeLabel), Vec<PairOrigin>>,
}

impl TransitionPairSet {
    pub fn total(&self) -> usize {
        self.dyn_pairs.values().map(Vec::len).sum::<usize>()
            + self.guard_pairs.values().map(Vec::len).sum::<usize>()
    }

    pub fn dyn_count(&self, m: ModeLabel) -> usize {
        self.dyn_pairs.get(&m).map_or(0, Vec::len)
    }
}

/// Partition every `(x_t, x_{t+1})` by the labels at `t` and `t+1`.
pub fn build_pairs(ds: &LabeledDataset) -> TransitionPairSet {
    let mut out = TransitionPairSet::default();
    for (i, (traj, labels)) in ds.trajectories().iter().zip(ds.labels()).enumerate() {
        let s = traj.states();
        for t in 0..s.len() - 1 {
            let pair = TuplePair {
                pre: s[t].clone(),
                post: s[t + 1].clone(),
            };
            let (a, b) = (labels[t], labels[t + 1]);
            if a == b {
                out.dyn_pairs.entry(a).or_default().push(pair);
                out.dyn_origins.entry(a).or_default().push((i, t));
            } else {
                out.guard_pairs.entry((a, b)).or_default().push(pair);
                out.guard_origins.entry((a, b)).or_default().push((i, t));
            }
        }
    }
    out
}

fn pair_matrices(pairs: &[TuplePair]) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = pairs[0].pre.dim();
    let x = DMatrix::from_fn(pairs.len(), d, |i, j| pairs[i].pre[j]);
    let y = DMatrix::from_fn(pairs.len(), d, |i, j| pairs[i].post[j]);
    (x, y)
}

/// Fit a GP from `x_t` to `x_{t+1}` on `pairs`.
pub fn fit_pairs(pairs: &[TuplePair], cfg: &FitConfig, seed: u64) -> Result<GpModel> {
    if pairs.is_empty() {
        return Err(Error::input("cannot fit a GP to an empty bucket"));
    }
    let (x, y) = pair_matrices(pairs);
    let init = gp::default_init(&x);
    gp::fit(&x, &y, init, &FitConfig { seed, ..cfg.clone() })
}

/// Seed for mode `m`'s dynamics GP.
pub fn dyn_seed(seed: u64, m: ModeLabel) -> u64 {
    rng::derive(seed, &[rng::tag("dyn"), m.0 as u64])
}

fn reset_seed(seed: u64, from: ModeLabel, to: ModeLabel) -> u64 {
    rng::derive(seed, &[rng::tag("reset"), from.0 as u64, to.0 as u64])
}

/// Result of one MAPCL pass.
#[derive(Debug, Clone)]
pub struct Reassignment {
    pub labels: Vec<Vec<ModeLabel>>,
    pub change_count: usize,
}

/// Score of explaining `post` from `pre` with `gp`.
fn explain(gp: &GpModel, pre: &StateVec, post: &StateVec) -> Result<f64> {
    let (mean, var) = gp.predict_mean_var(pre.as_slice())?;
    Ok(isotropic_logpdf(mean.as_slice(), var, post.as_slice()))
}

/// Relabel every point by the mode whose dynamics or outgoing reset best
/// explains its successor. The last point of a trajectory takes the
/// successor mode implied by the winning GP at the point before it.
/// The incumbent label survives unless beaten by more than `margin` nats.
///
/// `dynamics[m]` is `None` for modes without a dynamics GP; such modes are
/// never chosen.
pub fn mapcl_reassign(
    ds: &LabeledDataset,
    dynamics: &[Option<GpModel>],
    resets: &BTreeMap<(ModeLabel, ModeLabel), GpModel>,
    margin: f64,
) -> Result<Reassignment> {
    if dynamics.iter().all(Option::is_none) {
        return Err(Error::config("no mode has a trained dynamics GP"));
    }
    let per_traj: Vec<Result<(Vec<ModeLabel>, usize)>> = ds
        .trajectories()
        .par_iter()
        .zip(ds.labels().par_iter())
        .map(|(traj, old)| {
            let s = traj.states();
            let t_len = s.len();
            let mut new = Vec::with_capacity(t_len);
            let mut successor = old[0];
            for t in 0..t_len - 1 {
                let mut cands: Vec<Option<(f64, ModeLabel)>> = vec![None; dynamics.len()];
                for (m, f) in dynamics.iter().enumerate() {
                    let Some(f) = f else { continue };
                    let m = ModeLabel(m);
                    let mut cand = (explain(f, &s[t], &s[t + 1])?, m);
                    for ((from, to), r) in resets.range((m, ModeLabel(0))..=(m, ModeLabel(usize::MAX))) {
                        debug_assert_eq!(*from, m);
                        let v = explain(r, &s[t], &s[t + 1])?;
                        if v > cand.0 {
                            cand = (v, *to);
                        }
                    }
                    cands[m.0] = Some(cand);
                }
                let inc = old[t];
                let mut best: Option<(f64, ModeLabel, ModeLabel)> =
                    cands.get(inc.0).copied().flatten().map(|(v, n)| (v, inc, n));
                for (m, c) in cands.iter().enumerate() {
                    let Some((v, n)) = *c else { continue };
                    let beats = match best {
                        None => true,
                        Some((bv, bm, _)) if bm == inc => v > bv + margin,
                        Some((bv, _, _)) => v > bv,
                    };
                    if beats {
                        best = Some((v, ModeLabel(m), n));
                    }
                }
                let (_, m, next) = best.expect("some mode has dynamics");
                new.push(m);
                successor = next;
            }
            new.push(successor);
            let changes = new.iter().zip(old).filter(|(a, b)| a != b).count();
            Ok((new, changes))
        })
        .collect();
    let mut labels = Vec::with_capacity(per_traj.len());
    let mut change_count = 0;
    for r in per_traj {
        let (l, c) = r?;
        labels.push(l);
        change_count += c;
    }
    Ok(Reassignment {
        labels,
        change_count,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OversampleConfig {
    /// Lower bound on each guard bucket's size after oversampling.
    pub min_target: usize,
    /// Fixed bucket size, overriding the median rule.
    pub target: Option<usize>,
    /// Disable synthetic tuples entirely (reset GPs see only real pairs).
    pub enabled: bool,
}

impl Default for OversampleConfig {
    fn default() -> Self {
        OversampleConfig {
            min_target: 50,
            target: None,
            enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnConfig {
    pub num_modes: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Spectral affinity bandwidth; median heuristic when absent.
    pub cluster_beta0: Option<f64>,
    /// A point keeps its label unless another mode explains its successor
    /// better by more than this many nats. 0 is the plain argmax.
    pub mapcl_margin: f64,
    pub gp: FitConfig,
    pub oversample: OversampleConfig,
    pub classifier: LogisticConfig,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            num_modes: 2,
            seed: 0,
            max_iters: 20,
            cluster_beta0: None,
            mapcl_margin: 3.0,
            gp: FitConfig::default(),
            oversample: OversampleConfig::default(),
            classifier: LogisticConfig::default(),
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_modes == 0 {
            return Err(Error::config("num_modes must be >= 1"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("max_iters must be >= 1"));
        }
        if !(self.mapcl_margin >= 0.0 && self.mapcl_margin.is_finite()) {
            return Err(Error::config("mapcl_margin must be finite and >= 0"));
        }
        self.gp.validate()
    }
}

/// A learned hybrid system.
#[derive(Debug, Clone)]
pub struct HybridModel {
    dim: usize,
    dynamics: Vec<GpModel>,
    resets: BTreeMap<(ModeLabel, ModeLabel), GpModel>,
    mode_clf: Classifier,
    guard_clfs: Vec<Classifier>,
    labels: LabeledDataset,
    change_counts: Vec<usize>,
    converged: bool,
}

impl HybridModel {
    pub fn num_modes(&self) -> usize {
        self.dynamics.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dynamics(&self, m: ModeLabel) -> &GpModel {
        &self.dynamics[m.0]
    }

    pub fn reset(&self, from: ModeLabel, to: ModeLabel) -> Option<&GpModel> {
        self.resets.get(&(from, to))
    }

    pub fn resets(&self) -> &BTreeMap<(ModeLabel, ModeLabel), GpModel> {
        &self.resets
    }

    pub fn mode_classifier(&self) -> &Classifier {
        &self.mode_clf
    }

    pub fn guard_classifier(&self, m: ModeLabel) -> &Classifier {
        &self.guard_clfs[m.0]
    }

    /// Training data with the final mode labels.
    pub fn labels(&self) -> &LabeledDataset {
        &self.labels
    }

    /// MAPCL change count per iteration.
    pub fn change_counts(&self) -> &[usize] {
        &self.change_counts
    }

    pub fn converged(&self) -> bool {
        self.converged
    }
}

struct Fitted {
    dynamics: Vec<Option<GpModel>>,
    resets: BTreeMap<(ModeLabel, ModeLabel), GpModel>,
    synth: BTreeMap<(ModeLabel, ModeLabel), Vec<TuplePair>>,
}

fn median(mut v: Vec<usize>) -> usize {
    if v.is_empty() {
        return 0;
    }
    v.sort_unstable();
    v[v.len() / 2]
}

fn fit_all(pairs: &TransitionPairSet, k: usize, cfg: &LearnConfig) -> Result<Fitted> {
    let med = median(pairs.dyn_pairs.values().map(Vec::len).collect());
    let target = cfg
        .oversample
        .target
        .unwrap_or_else(|| oversample::target_size(med, cfg.oversample.min_target));

    let mut synth = BTreeMap::new();
    for (&(a, b), real) in &pairs.guard_pairs {
        let s = if cfg.oversample.enabled {
            oversample::oversample_bucket(real, target, reset_seed(cfg.seed, a, b))?
        } else {
            Vec::new()
        };
        synth.insert((a, b), s);
    }

    enum Job<'a> {
        Dyn(ModeLabel, &'a [TuplePair]),
        Reset(ModeLabel, ModeLabel, Vec<TuplePair>),
    }
    let mut jobs = Vec::new();
    for m in 0..k {
        if let Some(p) = pairs.dyn_pairs.get(&ModeLabel(m)) {
            jobs.push(Job::Dyn(ModeLabel(m), p));
        }
    }
    for (&(a, b), real) in &pairs.guard_pairs {
        let mut all = real.clone();
        all.extend(synth[&(a, b)].iter().cloned());
        jobs.push(Job::Reset(a, b, all));
    }
    let fitted: Vec<Result<GpModel>> = jobs
        .par_iter()
        .map(|j| match j {
            Job::Dyn(m, p) => fit_pairs(p, &cfg.gp, dyn_seed(cfg.seed, *m)),
            Job::Reset(a, b, p) => fit_pairs(p, &cfg.gp, reset_seed(cfg.seed, *a, *b)),
        })
        .collect();
    let mut dynamics: Vec<Option<GpModel>> = vec![None; k];
    let mut resets = BTreeMap::new();
    for (j, g) in jobs.iter().zip(fitted) {
        match j {
            Job::Dyn(m, _) => dynamics[m.0] = Some(g?),
            Job::Reset(a, b, _) => {
                resets.insert((*a, *b), g?);
            }
        }
    }
    Ok(Fitted {
        dynamics,
        resets,
        synth,
    })
}

/// Relabel modes so that the active ones are `0..n`, in increasing order.
fn compact(labels: &mut [Vec<ModeLabel>], active: &[bool]) -> usize {
    let mut map = vec![usize::MAX; active.len()];
    let mut next = 0;
    for (m, &a) in active.iter().enumerate() {
        if a {
            map[m] = next;
            next += 1;
        }
    }
    for l in labels.iter_mut().flat_map(|t| t.iter_mut()) {
        debug_assert!(active[l.0], "dropped mode still labeled");
        l.0 = map[l.0];
    }
    next
}

/// Learn a hybrid model from unlabeled trajectories.
pub fn learn(ds: &LabeledDataset, cfg: &LearnConfig) -> Result<HybridModel> {
    cfg.validate()?;
    let initial = clustering::initial_modes(
        ds,
        &ClusterConfig {
            num_modes: cfg.num_modes,
            beta0: cfg.cluster_beta0,
            seed: rng::derive(cfg.seed, &[rng::tag("cluster")]),
        },
    )?;
    learn_from_labels(&initial, cfg)
}

/// Run the MAPCL loop starting from the labels already on `ds`.
pub fn learn_from_labels(ds: &LabeledDataset, cfg: &LearnConfig) -> Result<HybridModel> {
    cfg.validate()?;
    let mut labels: Vec<Vec<ModeLabel>> = ds.labels().to_vec();
    let mut k = cfg.num_modes;
    if labels.iter().flatten().any(|l| l.0 >= k) {
        return Err(Error::input("initial labels exceed num_modes"));
    }
    let mut history = Vec::new();
    let mut converged = false;

    let (fitted, pairs, labeled) = loop {
        let labeled = ds.with_labels(labels.clone())?;
        let pairs = build_pairs(&labeled);
        let fitted = fit_all(&pairs, k, cfg)?;
        if history.len() == cfg.max_iters {
            break (fitted, pairs, labeled);
        }
        let active: Vec<bool> = fitted.dynamics.iter().map(Option::is_some).collect();
        let mut resets = fitted.resets.clone();
        if active.iter().any(|a| !a) {
            warn!(
                "dropping {} mode(s) with no dynamics pairs",
                active.iter().filter(|a| !**a).count()
            );
            resets.retain(|(a, b), _| active[a.0] && active[b.0]);
        }
        let re = mapcl_reassign(&labeled, &fitted.dynamics, &resets, cfg.mapcl_margin)?;
        history.push(re.change_count);
        info!("mapcl iteration {}: {} labels changed", history.len(), re.change_count);
        labels = re.labels;
        let all_active = active.iter().all(|a| *a);
        if !all_active {
            k = compact(&mut labels, &active);
        }
        if re.change_count == 0 && all_active {
            converged = true;
            break (fitted, pairs, labeled);
        }
    };
    if !converged {
        warn!("mode assignment did not converge in {} iterations", cfg.max_iters);
    }
    let dynamics: Vec<GpModel> = fitted
        .dynamics
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::numerical("learner", "final labels leave a mode without dynamics"))?;

    let mode_clf = classify::train_mode_classifier(&labeled, &cfg.classifier)?;
    let guard_clfs = (0..k)
        .into_par_iter()
        .map(|m| {
            let m = ModeLabel(m);
            let stay: Vec<&StateVec> = pairs.dyn_pairs[&m].iter().map(|p| &p.pre).collect();
            let guards: Vec<(ModeLabel, Vec<&StateVec>)> = pairs
                .guard_pairs
                .iter()
                .filter(|((a, _), _)| *a == m)
                .map(|(&(_, b), real)| {
                    let pts = real
                        .iter()
                        .chain(&fitted.synth[&(m, b)])
                        .map(|p| &p.pre)
                        .collect();
                    (b, pts)
                })
                .collect();
            classify::train_guard_classifier(m, &stay, &guards, &cfg.classifier)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(HybridModel {
        dim: ds.dim(),
        dynamics,
        resets: fitted.resets,
        mode_clf,
        guard_clfs,
        labels: labeled,
        change_counts: history,
        converged,
    })
}

#[derive(Serialize, Deserialize)]
struct ResetEntry {
    from: ModeLabel,
    to: ModeLabel,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    num_modes: usize,
    dim: usize,
    converged: bool,
    change_counts: Vec<usize>,
    dynamics: Vec<String>,
    resets: Vec<ResetEntry>,
    mode_classifier: Classifier,
    guard_classifiers: Vec<Classifier>,
    labels: LabeledDataset,
}

impl HybridModel {
    /// Write `manifest.json` plus one JSON blob per GP under `dir/gp/`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("gp"))?;
        let mut dyn_files = Vec::new();
        for (m, g) in self.dynamics.iter().enumerate() {
            let f = format!("gp/dyn_{m}.json");
            fs::write(dir.join(&f), serde_json::to_vec(g)?)?;
            dyn_files.push(f);
        }
        let mut resets = Vec::new();
        for (&(a, b), g) in &self.resets {
            let f = format!("gp/reset_{}_{}.json", a.0, b.0);
            fs::write(dir.join(&f), serde_json::to_vec(g)?)?;
            resets.push(ResetEntry { from: a, to: b, file: f });
        }
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            num_modes: self.num_modes(),
            dim: self.dim,
            converged: self.converged,
            change_counts: self.change_counts.clone(),
            dynamics: dyn_files,
            resets,
            mode_classifier: self.mode_clf.clone(),
            guard_classifiers: self.guard_clfs.clone(),
            labels: self.labels.clone(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::input(format!(
                "model schema version {} is not supported (expected {SCHEMA_VERSION})",
                m.schema_version
            )));
        }
        let read_gp = |f: &str| -> Result<GpModel> {
            Ok(serde_json::from_slice(&fs::read(dir.join(f))?)?)
        };
        let dynamics = m.dynamics.iter().map(|f| read_gp(f)).collect::<Result<Vec<_>>>()?;
        let mut resets = BTreeMap::new();
        for r in &m.resets {
            if r.from.0 >= m.num_modes || r.to.0 >= m.num_modes || r.from == r.to {
                return Err(Error::input("reset entry references an invalid mode pair"));
            }
            resets.insert((r.from, r.to), read_gp(&r.file)?);
        }
        if dynamics.len() != m.num_modes || m.guard_classifiers.len() != m.num_modes {
            return Err(Error::input("manifest mode count does not match its contents"));
        }
        Ok(HybridModel {
            dim: m.dim,
            dynamics,
            resets,
            mode_clf: m.mode_classifier,
            guard_clfs: m.guard_classifiers,
            labels: m.labels,
            change_counts: m.change_counts,
            converged: m.converged,
        })
    }
}

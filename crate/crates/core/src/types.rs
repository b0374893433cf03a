//! Shared domain vocabulary: states, trajectories, Gaussians, mixtures and
//! labeled datasets.
//!
//! All densities are evaluated in log space.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, log_det};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Tolerance for covariance symmetry and for negative eigenvalues.
pub const COV_TOL: f64 = 1e-9;
/// Tolerance for mixture weights summing to one.
pub const WEIGHT_TOL: f64 = 1e-9;

/// A continuous state `x ∈ ℝᵈ` with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct StateVec(DVector<f64>);

impl StateVec {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::input("state vector must have dimension >= 1"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input(format!(
                "state vector has non-finite entries: {:?}",
                values.as_slice()
            )));
        }
        Ok(StateVec(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for StateVec {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        StateVec::new(DVector::from_vec(v))
    }
}

impl From<StateVec> for Vec<f64> {
    fn from(s: StateVec) -> Self {
        s.0.as_slice().to_vec()
    }
}

impl std::ops::Index<usize> for StateVec {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Discrete mode identifier in `[0, K)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModeLabel(pub usize);

impl ModeLabel {
    pub fn checked(id: usize, num_modes: usize) -> Result<Self> {
        if id >= num_modes {
            return Err(Error::input(format!(
                "mode {id} out of range for {num_modes} modes"
            )));
        }
        Ok(ModeLabel(id))
    }

    pub fn index(self) -> usize {
        self.0
    }
}

impl std::fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Ordered, regularly sampled sequence of states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    states: Vec<StateVec>,
    dt: f64,
}

impl Trajectory {
    pub fn new(states: Vec<StateVec>, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::input(format!("dt must be > 0, got {dt}")));
        }
        if states.len() < 2 {
            return Err(Error::input(format!(
                "trajectory needs at least 2 states, got {}",
                states.len()
            )));
        }
        let d = states[0].dim();
        if let Some((i, s)) = states.iter().enumerate().find(|(_, s)| s.dim() != d) {
            return Err(Error::input(format!(
                "state {i} has dimension {} but trajectory dimension is {d}",
                s.dim()
            )));
        }
        Ok(Trajectory { states, dt })
    }

    pub fn states(&self) -> &[StateVec] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }
}

/// Trajectories with one mode label per state.
///
/// Labels come either from a simulator (ground truth, evaluation only) or
/// from the learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    trajectories: Vec<Trajectory>,
    labels: Vec<Vec<ModeLabel>>,
}

impl LabeledDataset {
    pub fn new(trajectories: Vec<Trajectory>, labels: Vec<Vec<ModeLabel>>) -> Result<Self> {
        if trajectories.len() != labels.len() {
            return Err(Error::input(format!(
                "{} trajectories but {} label sequences",
                trajectories.len(),
                labels.len()
            )));
        }
        for (i, (t, l)) in trajectories.iter().zip(&labels).enumerate() {
            if t.len() != l.len() {
                return Err(Error::input(format!(
                    "trajectory {i} has {} states but {} labels",
                    t.len(),
                    l.len()
                )));
            }
        }
        if let Some(first) = trajectories.first() {
            let d = first.dim();
            if trajectories.iter().any(|t| t.dim() != d) {
                return Err(Error::input("trajectories have different dimensions"));
            }
        }
        Ok(LabeledDataset {
            trajectories,
            labels,
        })
    }

    /// Every point labeled with mode 0.
    pub fn unlabeled(trajectories: Vec<Trajectory>) -> Result<Self> {
        let labels = trajectories
            .iter()
            .map(|t| vec![ModeLabel(0); t.len()])
            .collect();
        Self::new(trajectories, labels)
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn labels(&self) -> &[Vec<ModeLabel>] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.trajectories.first().map_or(0, Trajectory::dim)
    }

    pub fn num_points(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn num_pairs(&self) -> usize {
        self.trajectories.iter().map(|t| t.len() - 1).sum()
    }

    pub fn with_labels(&self, labels: Vec<Vec<ModeLabel>>) -> Result<Self> {
        Self::new(self.trajectories.clone(), labels)
    }

    /// All states of all trajectories, trajectory-major.
    pub fn pooled_states(&self) -> Vec<&StateVec> {
        self.trajectories.iter().flat_map(|t| t.states()).collect()
    }

    pub fn pooled_labels(&self) -> Vec<ModeLabel> {
        self.labels.iter().flatten().copied().collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let mut trajs = Vec::with_capacity(idx.len());
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            let t = self
                .trajectories
                .get(i)
                .ok_or_else(|| Error::input(format!("no trajectory {i}")))?;
            trajs.push(t.clone());
            labels.push(self.labels[i].clone());
        }
        Self::new(trajs, labels)
    }
}

/// Multivariate normal with a symmetric PSD covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    mean: StateVec,
    cov: DMatrix<f64>,
}

impl Gaussian {
    pub fn new(mean: StateVec, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.dim();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::input(format!(
                "covariance is {}x{} but mean has dimension {d}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("covariance has non-finite entries"));
        }
        for i in 0..d {
            for j in (i + 1)..d {
                if (cov[(i, j)] - cov[(j, i)]).abs() > COV_TOL {
                    return Err(Error::input(format!(
                        "covariance not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let min_eig = cov.clone().symmetric_eigenvalues().min();
        if min_eig < -COV_TOL {
            return Err(Error::input(format!(
                "covariance not PSD (min eigenvalue {min_eig:e})"
            )));
        }
        Ok(Gaussian { mean, cov })
    }

    /// `N(mean, var·I)`.
    pub fn isotropic(mean: StateVec, var: f64) -> Result<Self> {
        if !(var.is_finite() && var >= 0.0) {
            return Err(Error::input(format!("variance must be >= 0, got {var}")));
        }
        let d = mean.dim();
        Ok(Gaussian {
            mean,
            cov: DMatrix::from_diagonal_element(d, d, var),
        })
    }

    pub fn mean(&self) -> &StateVec {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }

    /// Marginal over the listed coordinates (exact for a Gaussian).
    pub fn marginal(&self, coords: &[usize]) -> Result<Gaussian> {
        let d = self.dim();
        if coords.is_empty() || coords.iter().any(|&c| c >= d) {
            return Err(Error::input(format!(
                "invalid marginal coordinates {coords:?} for dimension {d}"
            )));
        }
        let mean = DVector::from_iterator(coords.len(), coords.iter().map(|&c| self.mean[c]));
        let cov = DMatrix::from_fn(coords.len(), coords.len(), |i, j| {
            self.cov[(coords[i], coords[j])]
        });
        Ok(Gaussian {
            mean: StateVec::new(mean)?,
            cov,
        })
    }

    /// Same Gaussian with `var·I` added to the covariance.
    pub fn with_added_variance(&self, var: f64) -> Gaussian {
        let mut cov = self.cov.clone();
        for i in 0..cov.nrows() {
            cov[(i, i)] += var;
        }
        Gaussian {
            mean: self.mean.clone(),
            cov,
        }
    }

    pub fn logpdf(&self, x: &StateVec) -> Result<f64> {
        gaussian_logpdf(self, x)
    }
}

/// `log N(x; mean, cov)`, with the jitter ladder applied to `cov` if needed.
pub fn gaussian_logpdf(g: &Gaussian, x: &StateVec) -> Result<f64> {
    let d = g.dim();
    if x.dim() != d {
        return Err(Error::input(format!(
            "point has dimension {} but Gaussian has dimension {d}",
            x.dim()
        )));
    }
    let (chol, _) = cholesky_jittered(&g.cov, "core_types")?;
    let diff = x.as_vector() - g.mean.as_vector();
    let z = chol
        .l_dirty()
        .solve_lower_triangular(&diff)
        .ok_or_else(|| Error::numerical("core_types", "triangular solve failed"))?;
    Ok(-0.5 * (d as f64 * LN_2PI + log_det(&chol) + z.norm_squared()))
}

/// `log N(x; mean, var·I)` without building a covariance matrix.
#[inline]
pub fn isotropic_logpdf(mean: &[f64], var: f64, x: &[f64]) -> f64 {
    let d = mean.len() as f64;
    let sq: f64 = mean.iter().zip(x).map(|(m, v)| (v - m) * (v - m)).sum();
    -0.5 * (d * (2.0 * PI * var).ln() + sq / var)
}

/// Numerically stable `log Σ exp(vᵢ)`. Returns `-inf` for an empty or
/// all-`-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Weighted mixture of Gaussians with weights on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    components: Vec<(f64, Gaussian)>,
}

impl GaussianMixture {
    pub fn new(components: Vec<(f64, Gaussian)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::input("mixture needs at least one component"));
        }
        let d = components[0].1.dim();
        if components.iter().any(|(_, g)| g.dim() != d) {
            return Err(Error::input("mixture components differ in dimension"));
        }
        if components.iter().any(|(w, _)| !w.is_finite() || *w < 0.0) {
            return Err(Error::input("mixture weights must be finite and >= 0"));
        }
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::input(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        Ok(GaussianMixture { components })
    }

    pub fn single(g: Gaussian) -> Self {
        GaussianMixture {
            components: vec![(1.0, g)],
        }
    }

    pub fn components(&self) -> &[(f64, Gaussian)] {
        &self.components
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|(w, _)| *w).collect()
    }

    pub fn dim(&self) -> usize {
        self.components[0].1.dim()
    }

    /// Component-wise marginal; exact for a Gaussian mixture.
    pub fn marginal(&self, coords: &[usize]) -> Result<GaussianMixture> {
        let components = self
            .components
            .iter()
            .map(|(w, g)| Ok((*w, g.marginal(coords)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(GaussianMixture { components })
    }

    pub fn with_added_variance(&self, var: f64) -> GaussianMixture {
        GaussianMixture {
            components: self
                .components
                .iter()
                .map(|(w, g)| (*w, g.with_added_variance(var)))
                .collect(),
        }
    }

    /// Overall mean of the mixture.
    pub fn mean(&self) -> DVector<f64> {
        self.components
            .iter()
            .fold(DVector::zeros(self.dim()), |acc, (w, g)| {
                acc + g.mean().as_vector() * *w
            })
    }

    pub fn logpdf(&self, x: &StateVec) -> Result<f64> {
        mixture_logpdf(self, x)
    }
}

/// `log Σ wᵢ N(x; μᵢ, Σᵢ)` via log-sum-exp.
pub fn mixture_logpdf(gmm: &GaussianMixture, x: &StateVec) -> Result<f64> {
    let terms = gmm
        .components
        .iter()
        .filter(|(w, _)| *w > 0.0)
        .map(|(w, g)| Ok(w.ln() + gaussian_logpdf(g, x)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(log_sum_exp(&terms))
}

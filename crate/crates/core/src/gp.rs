//! Gaussian-process regression for one-step dynamics.
//!
//! Kernel: `k(xᵢ, xⱼ) = exp(-β₀‖xᵢ - xⱼ‖²) + β₁·δᵢⱼ`. The `d` output columns
//! share one Gram matrix, so the predictive covariance is `σ²(x)·I`.
//! Targets are centered per column before regression and the mean is added
//! back at prediction time.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, log_det, sq_dist};
use crate::rng;
use crate::types::{Gaussian, StateVec};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Kernel hyperparameters: inverse squared length-scale and delta amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub beta0: f64,
    pub beta1: f64,
}

impl KernelParams {
    pub fn new(beta0: f64, beta1: f64) -> Result<Self> {
        if !(beta0.is_finite() && beta0 > 0.0) {
            return Err(Error::input(format!("beta0 must be finite and > 0, got {beta0}")));
        }
        if !(beta1.is_finite() && beta1 >= 0.0) {
            return Err(Error::input(format!("beta1 must be finite and >= 0, got {beta1}")));
        }
        Ok(KernelParams { beta0, beta1 })
    }

    fn to_log(self) -> [f64; 2] {
        [self.beta0.ln(), self.beta1.max(1e-300).ln()]
    }

    fn from_log(t: [f64; 2]) -> Self {
        KernelParams {
            beta0: t[0].exp(),
            beta1: t[1].exp(),
        }
    }
}

/// `exp(-β₀‖xᵢ-xⱼ‖²) + β₁·δᵢⱼ`; `same_index` selects the delta term.
pub fn kernel(xi: &[f64], xj: &[f64], p: KernelParams, same_index: bool) -> Result<f64> {
    if xi.len() != xj.len() {
        return Err(Error::input(format!(
            "kernel inputs have dimensions {} and {}",
            xi.len(),
            xj.len()
        )));
    }
    let delta = if same_index { p.beta1 } else { 0.0 };
    Ok((-p.beta0 * sq_dist(xi, xj)).exp() + delta)
}

/// Gram matrix of the rows of `x`.
pub fn gram(x: &DMatrix<f64>, p: KernelParams) -> DMatrix<f64> {
    let flat = row_major(x);
    gram_flat(&flat, x.nrows(), x.ncols(), p)
}

fn gram_flat(flat: &[f64], n: usize, d: usize, p: KernelParams) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        let xi = &flat[i * d..(i + 1) * d];
        k[(i, i)] = 1.0 + p.beta1;
        for j in 0..i {
            let v = (-p.beta0 * sq_dist(xi, &flat[j * d..(j + 1) * d])).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

fn row_major(x: &DMatrix<f64>) -> Vec<f64> {
    let (n, d) = x.shape();
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        for j in 0..d {
            out.push(x[(i, j)]);
        }
    }
    out
}

/// Hyperparameter search settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Number of local ascents, the first always starting from `init`.
    pub restarts: usize,
    /// Iteration cap for each local ascent.
    pub max_iters: usize,
    pub beta0_bounds: (f64, f64),
    pub beta1_bounds: (f64, f64),
    /// Training points kept in the final model; larger sets are subsampled.
    pub max_points: usize,
    /// Points used while searching hyperparameters.
    pub hyper_max_points: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            restarts: 5,
            max_iters: 100,
            beta0_bounds: (1e-4, 1e4),
            beta1_bounds: (1e-8, 1e2),
            max_points: 400,
            hyper_max_points: 200,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi;
        if !ok(self.beta0_bounds) || !ok(self.beta1_bounds) {
            return Err(Error::config("gp bounds must be positive with lo <= hi"));
        }
        if self.restarts == 0 || self.max_points == 0 || self.hyper_max_points == 0 {
            return Err(Error::config("gp restarts and point caps must be >= 1"));
        }
        Ok(())
    }

    fn clamp(&self, t: [f64; 2]) -> [f64; 2] {
        [
            t[0].clamp(self.beta0_bounds.0.ln(), self.beta0_bounds.1.ln()),
            t[1].clamp(self.beta1_bounds.0.ln(), self.beta1_bounds.1.ln()),
        ]
    }
}

/// A trained GP: hyperparameters, training set and cached factorization.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "GpBlob", try_from = "GpBlob")]
pub struct GpModel {
    params: KernelParams,
    inputs: DMatrix<f64>,
    targets: DMatrix<f64>,
    target_mean: DVector<f64>,
    flat_inputs: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
    /// `K⁻¹(Y - ȳ)`, row-major N×d.
    alpha: Vec<f64>,
}

/// On-disk form of a [`GpModel`]; the factorization is rebuilt on load.
#[derive(Serialize, Deserialize)]
struct GpBlob {
    params: KernelParams,
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    target_mean: Vec<f64>,
}

impl From<GpModel> for GpBlob {
    fn from(m: GpModel) -> Self {
        let rows = |x: &DMatrix<f64>| {
            (0..x.nrows())
                .map(|i| x.row(i).iter().copied().collect())
                .collect()
        };
        GpBlob {
            params: m.params,
            inputs: rows(&m.inputs),
            targets: rows(&m.targets),
            target_mean: m.target_mean.as_slice().to_vec(),
        }
    }
}

impl TryFrom<GpBlob> for GpModel {
    type Error = Error;
    fn try_from(b: GpBlob) -> Result<Self> {
        let mat = |rows: &[Vec<f64>]| -> Result<DMatrix<f64>> {
            let d = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != d) {
                return Err(Error::input("ragged gp blob"));
            }
            Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
        };
        let model = GpModel::new(mat(&b.inputs)?, mat(&b.targets)?, b.params)?;
        let stored = DVector::from_vec(b.target_mean);
        if stored.len() != model.target_mean.len()
            || (stored - &model.target_mean).amax() > 1e-9 * (1.0 + model.target_mean.amax())
        {
            return Err(Error::input("gp blob target_mean does not match its targets"));
        }
        Ok(model)
    }
}

impl GpModel {
    /// Build and factorize a model for fixed hyperparameters.
    pub fn new(inputs: DMatrix<f64>, targets: DMatrix<f64>, params: KernelParams) -> Result<Self> {
        let (n, d) = inputs.shape();
        if n == 0 {
            return Err(Error::input("gp needs at least one training point"));
        }
        if targets.nrows() != n {
            return Err(Error::input(format!(
                "gp has {n} inputs but {} targets",
                targets.nrows()
            )));
        }
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::input("gp training data has non-finite values"));
        }
        let params = KernelParams::new(params.beta0, params.beta1)?;
        let target_mean = targets.row_mean().transpose();
        let mut centered = targets.clone();
        for mut row in centered.row_iter_mut() {
            row -= target_mean.transpose();
        }
        let flat_inputs = row_major(&inputs);
        let k = gram_flat(&flat_inputs, n, d, params);
        let (chol, jitter) = cholesky_jittered(&k, "gp")?;
        let alpha_m = chol.solve(&centered);
        Ok(GpModel {
            params,
            inputs,
            targets,
            target_mean,
            flat_inputs,
            chol,
            jitter,
            alpha: row_major(&alpha_m),
        })
    }

    pub fn params(&self) -> KernelParams {
        self.params
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    pub fn target_mean(&self) -> &DVector<f64> {
        &self.target_mean
    }

    pub fn num_points(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.ncols()
    }

    /// Diagonal jitter the factorization needed (0 when none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Predictive mean and the shared scalar variance at `x`.
    pub fn predict_mean_var(&self, x: &[f64]) -> Result<(DVector<f64>, f64)> {
        let d = self.input_dim();
        if x.len() != d {
            return Err(Error::input(format!(
                "gp query has dimension {} but model expects {d}",
                x.len()
            )));
        }
        let n = self.num_points();
        let dout = self.output_dim();
        let beta0 = self.params.beta0;
        let kstar = DVector::from_iterator(
            n,
            (0..n).map(|i| (-beta0 * sq_dist(x, &self.flat_inputs[i * d..(i + 1) * d])).exp()),
        );
        let mut mean = self.target_mean.clone();
        for i in 0..n {
            let ki = kstar[i];
            if ki == 0.0 {
                continue;
            }
            let a = &self.alpha[i * dout..(i + 1) * dout];
            for (m, ai) in mean.iter_mut().zip(a) {
                *m += ki * ai;
            }
        }
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&kstar)
            .ok_or_else(|| Error::numerical("gp", "triangular solve failed"))?;
        let var = (1.0 + self.params.beta1 - v.norm_squared()).max(0.0);
        Ok((mean, var))
    }

    /// Predictive distribution `N(μ(x), σ²(x)·I)`.
    pub fn predict(&self, x: &StateVec) -> Result<Gaussian> {
        let (mean, var) = self.predict_mean_var(x.as_slice())?;
        Gaussian::isotropic(StateVec::new(mean)?, var)
    }

    /// Sum over output columns of the GP log evidence.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.num_points() as f64;
        let dout = self.output_dim();
        let mut fit = 0.0;
        for i in 0..self.num_points() {
            for c in 0..dout {
                fit += (self.targets[(i, c)] - self.target_mean[c]) * self.alpha[i * dout + c];
            }
        }
        -0.5 * fit - 0.5 * dout as f64 * log_det(&self.chol) - 0.5 * dout as f64 * n * LN_2PI
    }
}

/// Centered training data for the hyperparameter objective.
struct Objective {
    flat: Vec<f64>,
    n: usize,
    d: usize,
    centered: DMatrix<f64>,
}

impl Objective {
    fn new(inputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> Self {
        let mean = targets.row_mean();
        let mut centered = targets.clone();
        for mut row in centered.row_iter_mut() {
            row -= &mean;
        }
        Objective {
            flat: row_major(inputs),
            n: inputs.nrows(),
            d: inputs.ncols(),
            centered,
        }
    }

    /// Log evidence and its gradient in `(ln β₀, ln β₁)`.
    fn eval(&self, p: KernelParams, with_grad: bool) -> Result<(f64, [f64; 2])> {
        let n = self.n;
        let dout = self.centered.ncols() as f64;
        let k = gram_flat(&self.flat, n, self.d, p);
        let (chol, _) = cholesky_jittered(&k, "gp")?;
        let alpha = chol.solve(&self.centered);
        let fit = self.centered.dot(&alpha);
        let value = -0.5 * fit - 0.5 * dout * log_det(&chol) - 0.5 * dout * n as f64 * LN_2PI;
        if !with_grad {
            return Ok((value, [0.0; 2]));
        }
        let kinv = chol.inverse();
        let aat = &alpha * alpha.transpose();
        // dK/dlnβ₁ = β₁·I
        let mut g1 = 0.0;
        for i in 0..n {
            g1 += aat[(i, i)] - dout * kinv[(i, i)];
        }
        g1 *= 0.5 * p.beta1;
        // dK/dlnβ₀ = -β₀·D²∘K_se (zero on the diagonal)
        let mut g0 = 0.0;
        for i in 0..n {
            let xi = &self.flat[i * self.d..(i + 1) * self.d];
            for j in 0..i {
                let d2 = sq_dist(xi, &self.flat[j * self.d..(j + 1) * self.d]);
                let dk = -p.beta0 * d2 * k[(i, j)];
                g0 += 2.0 * (aat[(i, j)] - dout * kinv[(i, j)]) * dk;
            }
        }
        g0 *= 0.5;
        Ok((value, [g0, g1]))
    }
}

/// Log evidence and analytic gradient in log-parameters for raw data.
pub fn log_evidence_with_grad(
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    p: KernelParams,
) -> Result<(f64, [f64; 2])> {
    Objective::new(inputs, targets).eval(p, true)
}

/// Projected gradient ascent in log space that only accepts improving steps.
fn ascend(obj: &Objective, start: [f64; 2], cfg: &FitConfig) -> Result<([f64; 2], f64)> {
    let mut theta = cfg.clamp(start);
    let (mut f, mut g) = obj.eval(KernelParams::from_log(theta), true)?;
    let mut step = 0.5;
    let lo = [cfg.beta0_bounds.0.ln(), cfg.beta1_bounds.0.ln()];
    let hi = [cfg.beta0_bounds.1.ln(), cfg.beta1_bounds.1.ln()];
    for _ in 0..cfg.max_iters {
        // Drop gradient components pushing against an active bound.
        let mut dir = g;
        for k in 0..2 {
            if (theta[k] <= lo[k] && dir[k] < 0.0) || (theta[k] >= hi[k] && dir[k] > 0.0) {
                dir[k] = 0.0;
            }
        }
        let norm = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
        if norm < 1e-6 {
            break;
        }
        let mut accepted = false;
        while step > 1e-7 {
            let cand = cfg.clamp([
                theta[0] + step * dir[0] / norm,
                theta[1] + step * dir[1] / norm,
            ]);
            match obj.eval(KernelParams::from_log(cand), true) {
                Ok((fc, gc)) if fc > f => {
                    theta = cand;
                    f = fc;
                    g = gc;
                    step = (step * 2.0).min(4.0);
                    accepted = true;
                    break;
                }
                _ => step *= 0.5,
            }
        }
        if !accepted {
            break;
        }
    }
    Ok((theta, f))
}

fn select_rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)])
}

/// Deterministic subset of `n` row indices of size at most `cap`, in order.
pub fn subsample_indices(n: usize, cap: usize, seed: u64) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut r = rng::rng(seed);
    let mut idx = rand::seq::index::sample(&mut r, n, cap).into_vec();
    idx.sort_unstable();
    idx
}

/// Fit hyperparameters by maximizing the log evidence, then build the model.
///
/// The returned model's evidence is never below the evidence at `init`.
pub fn fit(
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    init: KernelParams,
    cfg: &FitConfig,
) -> Result<GpModel> {
    cfg.validate()?;
    let n = inputs.nrows();
    if n == 0 {
        return Err(Error::input("gp fit needs at least one training point"));
    }
    if targets.nrows() != n {
        return Err(Error::input("gp fit: input and target row counts differ"));
    }
    let keep = subsample_indices(n, cfg.max_points, rng::derive(cfg.seed, &[rng::tag("keep")]));
    let (inputs, targets) = if keep.len() < n {
        (select_rows(inputs, &keep), select_rows(targets, &keep))
    } else {
        (inputs.clone(), targets.clone())
    };
    let init = KernelParams::new(init.beta0, init.beta1)?;

    let hyper_idx = subsample_indices(
        inputs.nrows(),
        cfg.hyper_max_points,
        rng::derive(cfg.seed, &[rng::tag("hyper")]),
    );
    let obj = Objective::new(
        &select_rows(&inputs, &hyper_idx),
        &select_rows(&targets, &hyper_idx),
    );

    let mut r = rng::rng(rng::derive(cfg.seed, &[rng::tag("restarts")]));
    let (l0, h0) = (cfg.beta0_bounds.0.ln(), cfg.beta0_bounds.1.ln());
    let (l1, h1) = (cfg.beta1_bounds.0.ln(), cfg.beta1_bounds.1.ln());
    let mut best: Option<([f64; 2], f64)> = None;
    for s in 0..cfg.restarts {
        let start = if s == 0 {
            init.to_log()
        } else {
            [r.random_range(l0..=h0), r.random_range(l1..=h1)]
        };
        if let Ok((theta, f)) = ascend(&obj, start, cfg) {
            if best.is_none_or(|(_, bf)| f > bf) {
                best = Some((theta, f));
            }
        }
    }
    let (theta, _) = best.ok_or_else(|| {
        Error::numerical("gp", "every hyperparameter restart failed to factorize")
    })?;

    let fitted = GpModel::new(inputs.clone(), targets.clone(), KernelParams::from_log(theta));
    let baseline = GpModel::new(inputs, targets, init);
    match (fitted, baseline) {
        (Ok(f), Ok(b)) => Ok(if f.log_marginal_likelihood() >= b.log_marginal_likelihood() {
            f
        } else {
            b
        }),
        (Ok(f), Err(_)) => Ok(f),
        (Err(_), Ok(b)) => Ok(b),
        (Err(e), Err(_)) => Err(e),
    }
}

/// Median-heuristic starting point `β₀ = 1/(2·median²)` over pairwise input
/// distances (computed on at most 200 rows), with a small delta term.
pub fn default_init(inputs: &DMatrix<f64>) -> KernelParams {
    let idx = subsample_indices(inputs.nrows(), 200, 0);
    let flat = row_major(&select_rows(inputs, &idx));
    let d = inputs.ncols();
    let beta0 = median_heuristic(&flat, idx.len(), d).unwrap_or(1.0);
    KernelParams {
        beta0,
        beta1: 1e-2,
    }
}

/// `1/(2·median²)` of the pairwise distances among `n` row-major points.
pub(crate) fn median_heuristic(flat: &[f64], n: usize, d: usize) -> Option<f64> {
    let mut dists = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in 0..i {
            dists.push(sq_dist(&flat[i * d..(i + 1) * d], &flat[j * d..(j + 1) * d]).sqrt());
        }
    }
    if dists.is_empty() {
        return None;
    }
    dists.sort_by(f64::total_cmp);
    let med = dists[dists.len() / 2];
    (med > 0.0).then(|| 1.0 / (2.0 * med * med))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn p(b0: f64, b1: f64) -> KernelParams {
        KernelParams::new(b0, b1).unwrap()
    }

    fn random_data(seed: u64, n: usize, d: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut r = rng::rng(seed);
        let x = DMatrix::from_fn(n, d, |_, _| r.random_range(-2.0..2.0f64));
        let y = DMatrix::from_fn(n, d, |i, j| {
            (x[(i, j)] * 1.3).sin() + 0.1 * { let z: f64 = StandardNormal.sample(&mut r); z }
        });
        (x, y)
    }

    #[test]
    fn params_validation() {
        assert!(KernelParams::new(0.0, 0.1).is_err());
        assert!(KernelParams::new(1.0, -0.1).is_err());
        assert!(KernelParams::new(f64::NAN, 0.1).is_err());
    }

    #[test]
    fn kernel_examples() {
        let k = kernel(&[0.3, 0.2], &[0.3, 0.2], p(5.0, 0.1), true).unwrap();
        assert!((k - 1.1).abs() < 1e-15);
        let k = kernel(&[0.0], &[1.0], p(1.0, 0.1), false).unwrap();
        assert!((k - (-1f64).exp()).abs() < 1e-15);
        assert!((k - 0.36788).abs() < 1e-5);
        let k = kernel(&[0.0], &[1.0], p(1e4, 0.0), false).unwrap();
        assert!(k < 1e-300);
        assert!(kernel(&[0.0], &[1.0, 2.0], p(1.0, 0.0), false).is_err());
    }

    #[test]
    fn gram_examples() {
        let g = gram(&DMatrix::from_row_slice(1, 2, &[0.4, -1.0]), p(2.0, 0.3));
        assert_eq!(g.shape(), (1, 1));
        assert!((g[(0, 0)] - 1.3).abs() < 1e-15);
        let g = gram(&DMatrix::from_row_slice(2, 1, &[0.7, 0.7]), p(2.0, 0.0));
        assert!(g.iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    /// Oracle: entrywise double loop over the kernel definition.
    #[test]
    fn gram_matches_double_loop() {
        let (x, _) = random_data(11, 5, 3);
        let params = p(0.7, 0.05);
        let g = gram(&x, params);
        for i in 0..5 {
            for j in 0..5 {
                let d2: f64 = (0..3).map(|c| (x[(i, c)] - x[(j, c)]).powi(2)).sum();
                let expect = (-0.7 * d2).exp() + if i == j { 0.05 } else { 0.0 };
                assert!((g[(i, j)] - expect).abs() < 1e-14);
            }
        }
        let min_eig = g.symmetric_eigenvalues().min();
        assert!(min_eig >= -1e-8);
    }

    #[test]
    fn exact_interpolation_without_noise() {
        let (x, y) = random_data(3, 8, 2);
        let m = GpModel::new(x.clone(), y.clone(), p(1.0, 0.0)).unwrap();
        for i in 0..8 {
            let (mean, var) = m.predict_mean_var(x.row(i).transpose().as_slice()).unwrap();
            for c in 0..2 {
                assert!((mean[c] - y[(i, c)]).abs() < 1e-6);
            }
            assert!(var <= 1e-6);
        }
    }

    #[test]
    fn far_query_reverts_to_prior() {
        let (x, y) = random_data(4, 6, 1);
        let m = GpModel::new(x, y, p(1.0, 0.2)).unwrap();
        let (mean, var) = m.predict_mean_var(&[1e3]).unwrap();
        assert!((mean[0] - m.target_mean()[0]).abs() < 1e-12);
        assert!((var - 1.2).abs() < 1e-12);
    }

    /// Oracle: explicit 3x3 inverse of the Gram matrix plugged into the
    /// posterior formulas.
    #[test]
    fn three_point_midpoint_matches_dense_solve() {
        let xs = [0.0, 1.0, 2.0];
        let ys = [1.0, 3.0, 2.0];
        let (b0, b1) = (0.8, 0.05);
        let kf = |a: f64, b: f64| (-b0 * (a - b) * (a - b)).exp();
        let kmat = DMatrix::from_fn(3, 3, |i, j| kf(xs[i], xs[j]) + if i == j { b1 } else { 0.0 });
        let kinv = kmat.clone().try_inverse().unwrap();
        let ybar = ys.iter().sum::<f64>() / 3.0;
        let yc = DVector::from_iterator(3, ys.iter().map(|v| v - ybar));
        let q = 0.5;
        let ks = DVector::from_iterator(3, xs.iter().map(|&x| kf(q, x)));
        let mu = ybar + (ks.transpose() * &kinv * &yc)[0];
        let var = 1.0 + b1 - (ks.transpose() * &kinv * &ks)[0];

        let m = GpModel::new(
            DMatrix::from_column_slice(3, 1, &xs),
            DMatrix::from_column_slice(3, 1, &ys),
            p(b0, b1),
        )
        .unwrap();
        let g = m.predict(&StateVec::from_slice(&[q]).unwrap()).unwrap();
        assert!((g.mean()[0] - mu).abs() < 1e-10);
        assert!((g.cov()[(0, 0)] - var).abs() < 1e-10);
    }

    #[test]
    fn single_point_zero_target_evidence() {
        let m = GpModel::new(
            DMatrix::from_row_slice(1, 2, &[0.3, 0.1]),
            DMatrix::from_row_slice(1, 2, &[5.0, -1.0]),
            p(1.0, 0.0),
        )
        .unwrap();
        let expect = -0.5 * 2.0 * (2.0 * std::f64::consts::PI).ln();
        assert!((m.log_marginal_likelihood() - expect).abs() < 1e-12);
    }

    /// Oracle: log|K| and quadratic form through an explicit inverse.
    #[test]
    fn evidence_matches_dense_oracle() {
        let (x, y) = random_data(9, 4, 2);
        let params = p(0.6, 0.07);
        let m = GpModel::new(x.clone(), y.clone(), params).unwrap();
        let k = DMatrix::from_fn(4, 4, |i, j| {
            let d2: f64 = (0..2).map(|c| (x[(i, c)] - x[(j, c)]).powi(2)).sum();
            (-0.6 * d2).exp() + if i == j { 0.07 } else { 0.0 }
        });
        let kinv = k.clone().try_inverse().unwrap();
        let det = k.determinant();
        let mut oracle = 0.0;
        for c in 0..2 {
            let mean = y.column(c).mean();
            let yc = y.column(c).map(|v| v - mean);
            oracle += -0.5 * (yc.transpose() * &kinv * &yc)[0]
                - 0.5 * det.ln()
                - 2.0 * (2.0 * std::f64::consts::PI).ln();
        }
        assert!((m.log_marginal_likelihood() - oracle).abs() < 1e-10);
    }

    #[test]
    fn evidence_drops_with_excess_noise() {
        let x = DMatrix::from_fn(20, 1, |i, _| i as f64 * 0.2);
        let y = x.map(|v| (v * 1.5).sin());
        let lo = GpModel::new(x.clone(), y.clone(), p(1.0, 1e-3)).unwrap();
        let hi = GpModel::new(x, y, p(1.0, 1.0)).unwrap();
        assert!(lo.log_marginal_likelihood() > hi.log_marginal_likelihood());
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let (x, y) = random_data(100 + seed, 12, 2);
            let mut r = rng::rng(seed);
            let params = p(r.random_range(0.2..3.0), r.random_range(0.01..0.5));
            let (_, g) = log_evidence_with_grad(&x, &y, params).unwrap();
            let h = 1e-5;
            let t = params.to_log();
            for k in 0..2 {
                let mut tp = t;
                let mut tm = t;
                tp[k] += h;
                tm[k] -= h;
                let fp = log_evidence_with_grad(&x, &y, KernelParams::from_log(tp)).unwrap().0;
                let fm = log_evidence_with_grad(&x, &y, KernelParams::from_log(tm)).unwrap().0;
                let fd = (fp - fm) / (2.0 * h);
                let rel = (g[k] - fd).abs() / fd.abs().max(1e-8);
                assert!(rel < 1e-4, "seed {seed} param {k}: {} vs {fd}", g[k]);
            }
        }
    }

    #[test]
    fn fit_never_worse_than_init() {
        let mut r = rng::rng(1);
        let x = DMatrix::from_fn(50, 1, |_, _| r.random_range(-3.0..3.0f64));
        let y = x.map(|v| v.sin() + 0.1 * { let z: f64 = StandardNormal.sample(&mut r); z });
        let truth = p(1.0, 0.01);
        let at_truth = GpModel::new(x.clone(), y.clone(), truth).unwrap().log_marginal_likelihood();
        let m = fit(&x, &y, truth, &FitConfig::default()).unwrap();
        assert!(m.log_marginal_likelihood() >= at_truth - 1e-6);
    }

    #[test]
    fn fit_single_point() {
        let x = DMatrix::from_row_slice(1, 1, &[0.5]);
        let y = DMatrix::from_row_slice(1, 1, &[2.0]);
        let m = fit(&x, &y, p(1.0, 0.1), &FitConfig::default()).unwrap();
        assert!(m.log_marginal_likelihood().is_finite());
    }

    /// Oracle: exhaustive 20×20 log-grid over the bounded parameter box.
    #[test]
    fn fit_beats_grid_search() {
        let mut r = rng::rng(42);
        let x = DMatrix::from_fn(40, 1, |_, _| r.random_range(-3.0..3.0f64));
        let y = x.map(|v| (2.0 * v).sin() + 0.2 * { let z: f64 = StandardNormal.sample(&mut r); z });
        let cfg = FitConfig::default();
        let mut grid_best = f64::NEG_INFINITY;
        for i in 0..20 {
            for j in 0..20 {
                let t0 = cfg.beta0_bounds.0.ln()
                    + (cfg.beta0_bounds.1 / cfg.beta0_bounds.0).ln() * i as f64 / 19.0;
                let t1 = cfg.beta1_bounds.0.ln()
                    + (cfg.beta1_bounds.1 / cfg.beta1_bounds.0).ln() * j as f64 / 19.0;
                if let Ok(m) = GpModel::new(x.clone(), y.clone(), KernelParams::from_log([t0, t1])) {
                    grid_best = grid_best.max(m.log_marginal_likelihood());
                }
            }
        }
        let m = fit(&x, &y, p(1.0, 0.1), &cfg).unwrap();
        assert!(m.log_marginal_likelihood() >= grid_best - 0.5);
    }

    #[test]
    fn serde_round_trip_refactorizes() {
        let (x, y) = random_data(5, 7, 2);
        let m = GpModel::new(x, y, p(0.9, 0.02)).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: GpModel = serde_json::from_str(&json).unwrap();
        let q = [0.1, -0.4];
        let (a, va) = m.predict_mean_var(&q).unwrap();
        let (b, vb) = back.predict_mean_var(&q).unwrap();
        assert!((a - b).amax() < 1e-12 && (va - vb).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn variance_within_prior_bounds(seed in 0u64..1000, qx in -5.0..5.0f64, qy in -5.0..5.0f64) {
            let (x, y) = random_data(seed, 6, 2);
            let m = GpModel::new(x, y, p(0.5, 0.1)).unwrap();
            let (_, var) = m.predict_mean_var(&[qx, qy]).unwrap();
            prop_assert!((0.0..=1.1 + 1e-8).contains(&var));
        }

        #[test]
        fn gram_is_permutation_equivariant(seed in 0u64..1000) {
            let (x, _) = random_data(seed, 5, 2);
            let perm = [3usize, 0, 4, 1, 2];
            let xp = DMatrix::from_fn(5, 2, |i, j| x[(perm[i], j)]);
            let g = gram(&x, p(0.8, 0.1));
            let gp = gram(&xp, p(0.8, 0.1));
            for i in 0..5 {
                for j in 0..5 {
                    prop_assert!((gp[(i, j)] - g[(perm[i], perm[j])]).abs() < 1e-15);
                }
            }
        }
    }
}

//! Balanced multinomial logistic regression, used for the mode classifier
//! (which mode a state belongs to) and for per-mode guard classifiers (which
//! mode comes next).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::cholesky_jittered;
use crate::types::{LabeledDataset, ModeLabel, StateVec};

/// Ridge on the bias column, just enough to pin the softmax shift direction.
const BIAS_REG: f64 = 1e-8;
const MAX_ITERS: usize = 1000;
const GRAD_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticConfig {
    pub balanced: bool,
    /// L2 strength on the non-bias weights.
    pub reg: f64,
    /// Standardize features to zero mean / unit variance before fitting.
    pub standardize: bool,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            balanced: true,
            reg: 1.0,
            standardize: false,
        }
    }
}

/// Linear softmax classifier over a fixed list of classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    /// One row per class: `[w_1 .. w_d, bias]`.
    weights: Vec<Vec<f64>>,
    classes: Vec<ModeLabel>,
    class_weights: Vec<f64>,
    /// Per-feature `(offset, scale)` applied before scoring.
    feature_shift: Vec<(f64, f64)>,
}

impl Classifier {
    /// Classifier that always returns probability 1 for `class`.
    pub fn constant(class: ModeLabel, dim: usize) -> Self {
        Classifier {
            weights: vec![vec![0.0; dim + 1]],
            classes: vec![class],
            class_weights: vec![1.0],
            feature_shift: vec![(0.0, 1.0); dim],
        }
    }

    /// Build from explicit weights (rows `[w.., bias]`).
    pub fn from_weights(weights: Vec<Vec<f64>>, classes: Vec<ModeLabel>) -> Result<Self> {
        if weights.is_empty() || weights.len() != classes.len() {
            return Err(Error::input("one weight row per class is required"));
        }
        let q = weights[0].len();
        if q == 0 || weights.iter().any(|w| w.len() != q || w.iter().any(|v| !v.is_finite())) {
            return Err(Error::input("weight rows must be finite and equal length"));
        }
        let mut sorted = classes.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != classes.len() {
            return Err(Error::input("classifier classes must be distinct"));
        }
        let c = classes.len();
        Ok(Classifier {
            weights,
            classes,
            class_weights: vec![1.0; c],
            feature_shift: vec![(0.0, 1.0); q - 1],
        })
    }

    pub fn classes(&self) -> &[ModeLabel] {
        &self.classes
    }

    pub fn class_weights(&self) -> &[f64] {
        &self.class_weights
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.feature_shift.len()
    }

    fn features(&self, x: &[f64]) -> Vec<f64> {
        let mut phi: Vec<f64> = x
            .iter()
            .zip(&self.feature_shift)
            .map(|(v, (o, s))| (v - o) / s)
            .collect();
        phi.push(1.0);
        phi
    }

    /// Class probabilities, in the order of [`Classifier::classes`].
    pub fn predict_proba(&self, x: &StateVec) -> Result<Vec<f64>> {
        self.predict_proba_slice(x.as_slice())
    }

    pub fn predict_proba_slice(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::input(format!(
                "classifier expects dimension {}, got {}",
                self.dim(),
                x.len()
            )));
        }
        let phi = self.features(x);
        let scores: Vec<f64> = self
            .weights
            .iter()
            .map(|w| w.iter().zip(&phi).map(|(a, b)| a * b).sum())
            .collect();
        Ok(softmax(&scores))
    }

    /// Probabilities laid out over modes `0..k`; absent modes get 0.
    pub fn proba_over_modes(&self, x: &[f64], k: usize) -> Result<Vec<f64>> {
        let p = self.predict_proba_slice(x)?;
        let mut out = vec![0.0; k];
        for (c, v) in self.classes.iter().zip(p) {
            if c.0 >= k {
                return Err(Error::input(format!("class {c} outside mode range {k}")));
            }
            out[c.0] = v;
        }
        Ok(out)
    }
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Fit a multinomial logistic regression on the rows of `x`.
///
/// With `balanced`, class `c` is weighted by `N/(C·N_c)`. Minimizes
/// `Σ sᵢ·(−log pᵢ,yᵢ) + reg/2·‖W‖²` by damped Newton, where the balanced
/// sample weights are rescaled so the smallest class carries unit weight per
/// sample (`sᵢ = N_min/N_c`). Class ratios are unchanged; the rescaling makes
/// the fit depend only on each class's empirical distribution.
pub fn fit_logistic(x: &[&[f64]], y: &[ModeLabel], cfg: &LogisticConfig) -> Result<Classifier> {
    let n = x.len();
    if n == 0 || y.len() != n {
        return Err(Error::input("logistic fit needs equally many rows and labels"));
    }
    if !(cfg.reg > 0.0 && cfg.reg.is_finite()) {
        return Err(Error::config(format!("logistic reg must be > 0, got {}", cfg.reg)));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::input("logistic rows must be finite and equal length"));
    }
    let mut classes: Vec<ModeLabel> = y.to_vec();
    classes.sort();
    classes.dedup();
    if classes.len() == 1 {
        return Ok(Classifier::constant(classes[0], d));
    }
    let c = classes.len();
    let q = d + 1;
    let yi: Vec<usize> = y
        .iter()
        .map(|l| classes.binary_search(l).expect("label is a class"))
        .collect();
    let mut counts = vec![0usize; c];
    for &k in &yi {
        counts[k] += 1;
    }
    let class_weights: Vec<f64> = if cfg.balanced {
        counts.iter().map(|&nc| n as f64 / (c as f64 * nc as f64)).collect()
    } else {
        vec![1.0; c]
    };

    let shift: Vec<(f64, f64)> = if cfg.standardize {
        (0..d)
            .map(|j| {
                let mean = x.iter().map(|r| r[j]).sum::<f64>() / n as f64;
                let var = x.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
                (mean, if var > 1e-24 { var.sqrt() } else { 1.0 })
            })
            .collect()
    } else {
        vec![(0.0, 1.0); d]
    };
    let phi: Vec<Vec<f64>> = x
        .iter()
        .map(|r| {
            let mut f: Vec<f64> = r.iter().zip(&shift).map(|(v, (o, s))| (v - o) / s).collect();
            f.push(1.0);
            f
        })
        .collect();
    let n_min = *counts.iter().min().expect("at least two classes") as f64;
    let s: Vec<f64> = if cfg.balanced {
        yi.iter().map(|&k| n_min / counts[k] as f64).collect()
    } else {
        vec![1.0; n]
    };
    let ridge = |a: usize| if a == d { BIAS_REG } else { cfg.reg };

    let objective = |w: &DVector<f64>| -> f64 {
        let mut j = 0.0;
        for i in 0..n {
            let scores: Vec<f64> = (0..c)
                .map(|k| (0..q).map(|a| w[k * q + a] * phi[i][a]).sum())
                .collect();
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + scores.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            j += s[i] * (lse - scores[yi[i]]);
        }
        for k in 0..c {
            for a in 0..q {
                j += 0.5 * ridge(a) * w[k * q + a].powi(2);
            }
        }
        j
    };

    let p_len = c * q;
    let mut w = DVector::zeros(p_len);
    let mut f = objective(&w);
    for _ in 0..MAX_ITERS {
        let mut grad = DVector::zeros(p_len);
        let mut hess = DMatrix::zeros(p_len, p_len);
        for i in 0..n {
            let scores: Vec<f64> = (0..c)
                .map(|k| (0..q).map(|a| w[k * q + a] * phi[i][a]).sum())
                .collect();
            let p = softmax(&scores);
            for k in 0..c {
                let r = p[k] - f64::from(u8::from(k == yi[i]));
                for a in 0..q {
                    grad[k * q + a] += s[i] * r * phi[i][a];
                }
                for l in 0..c {
                    let h = s[i] * p[k] * (f64::from(u8::from(k == l)) - p[l]);
                    if h == 0.0 {
                        continue;
                    }
                    for a in 0..q {
                        let ha = h * phi[i][a];
                        for b in 0..q {
                            hess[(k * q + a, l * q + b)] += ha * phi[i][b];
                        }
                    }
                }
            }
        }
        for k in 0..c {
            for a in 0..q {
                grad[k * q + a] += ridge(a) * w[k * q + a];
                hess[(k * q + a, k * q + a)] += ridge(a);
            }
        }
        if grad.norm() < GRAD_TOL {
            break;
        }
        let (chol, _) = cholesky_jittered(&hess, "classify")?;
        let step = chol.solve(&grad);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-10 {
            let cand = &w - &step * t;
            let fc = objective(&cand);
            if fc <= f - 1e-4 * t * grad.dot(&step) || (fc < f && t < 1e-3) {
                w = cand;
                f = fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("classify", "logistic weights diverged"));
    }
    let weights = (0..c).map(|k| (0..q).map(|a| w[k * q + a]).collect()).collect();
    Ok(Classifier {
        weights,
        classes,
        class_weights,
        feature_shift: shift,
    })
}

/// Level-1 classifier: state → current mode, trained on every labeled point.
pub fn train_mode_classifier(ds: &LabeledDataset, cfg: &LogisticConfig) -> Result<Classifier> {
    let pts = ds.pooled_states();
    let rows: Vec<&[f64]> = pts.iter().map(|s| s.as_slice()).collect();
    fit_logistic(&rows, &ds.pooled_labels(), cfg)
}

/// Level-2 classifier for mode `m`: state → next mode.
///
/// `stay` are pre-points of same-mode pairs in `m`; `guards` lists, per
/// destination mode, the pre-points (real and synthetic) of pairs leaving `m`.
pub fn train_guard_classifier(
    m: ModeLabel,
    stay: &[&StateVec],
    guards: &[(ModeLabel, Vec<&StateVec>)],
    cfg: &LogisticConfig,
) -> Result<Classifier> {
    let d = stay
        .first()
        .map(|s| s.dim())
        .or_else(|| guards.iter().find_map(|(_, v)| v.first().map(|s| s.dim())))
        .ok_or_else(|| Error::input("guard classifier has no training points"))?;
    let mut rows: Vec<&[f64]> = stay.iter().map(|s| s.as_slice()).collect();
    let mut y = vec![m; stay.len()];
    for (dest, pts) in guards {
        if *dest == m {
            return Err(Error::input("self-transitions are not guard classes"));
        }
        rows.extend(pts.iter().map(|s| s.as_slice()));
        y.extend(std::iter::repeat_n(*dest, pts.len()));
    }
    if rows.len() == stay.len() {
        return Ok(Classifier::constant(m, d));
    }
    fit_logistic(&rows, &y, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn l(v: usize) -> ModeLabel {
        ModeLabel(v)
    }

    #[test]
    fn symmetric_one_d_classes() {
        let xs: Vec<[f64; 1]> = (0..20).map(|i| [if i < 10 { -1.0 } else { 1.0 }]).collect();
        let rows: Vec<&[f64]> = xs.iter().map(|r| r.as_slice()).collect();
        let y: Vec<ModeLabel> = (0..20).map(|i| l(usize::from(i >= 10))).collect();
        let clf = fit_logistic(&rows, &y, &LogisticConfig::default()).unwrap();
        let p = |v: f64| clf.predict_proba_slice(&[v]).unwrap()[1];
        assert!(p(-0.5) < 0.5 && p(0.5) > 0.5);
        for (r, t) in rows.iter().zip(&y) {
            assert_eq!(usize::from(p(r[0]) > 0.5), t.0);
        }
    }

    #[test]
    fn single_class_is_constant() {
        let xs = [[0.3, 1.0], [2.0, -1.0]];
        let rows: Vec<&[f64]> = xs.iter().map(|r| r.as_slice()).collect();
        let clf = fit_logistic(&rows, &[l(2), l(2)], &LogisticConfig::default()).unwrap();
        assert_eq!(clf.predict_proba_slice(&[9.0, 9.0]).unwrap(), vec![1.0]);
        assert_eq!(clf.proba_over_modes(&[0.0, 0.0], 3).unwrap(), vec![0.0, 0.0, 1.0]);
    }

    /// Oracle: the data are separable at x0 = 0.
    #[test]
    fn balancing_recovers_minority() {
        let mut xs = Vec::new();
        let mut y = Vec::new();
        for i in 0..95 {
            xs.push([-1.0 - (i as f64) * 0.02, (i as f64 * 0.7).sin()]);
            y.push(l(0));
        }
        for i in 0..5 {
            xs.push([1.0 + i as f64 * 0.1, (i as f64).cos()]);
            y.push(l(1));
        }
        let rows: Vec<&[f64]> = xs.iter().map(|r| r.as_slice()).collect();
        let clf = fit_logistic(&rows, &y, &LogisticConfig::default()).unwrap();
        for (r, t) in rows.iter().zip(&y) {
            let p = clf.predict_proba_slice(r).unwrap();
            assert_eq!(usize::from(p[1] > 0.5), t.0);
        }
    }

    #[test]
    fn zero_weights_uniform() {
        let clf = Classifier::from_weights(vec![vec![0.0; 3]; 3], vec![l(0), l(1), l(2)]).unwrap();
        for v in clf.predict_proba_slice(&[4.0, -2.0]).unwrap() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(clf.predict_proba_slice(&[1.0]).is_err());
    }

    #[test]
    fn duplicating_majority_is_neutral_when_balanced() {
        let xs: Vec<[f64; 2]> = (0..30)
            .map(|i| {
                let t = i as f64;
                [(t * 0.37).sin() * 2.0 + if i < 20 { -0.5 } else { 0.8 }, (t * 0.91).cos()]
            })
            .collect();
        let y: Vec<ModeLabel> = (0..30).map(|i| l(usize::from(i >= 20))).collect();
        let rows: Vec<&[f64]> = xs.iter().map(|r| r.as_slice()).collect();
        let cfg = LogisticConfig::default();
        let a = fit_logistic(&rows, &y, &cfg).unwrap();
        let mut rows2 = rows.clone();
        let mut y2 = y.clone();
        rows2.extend(rows[..20].iter().copied());
        y2.extend(std::iter::repeat_n(l(0), 20));
        let b = fit_logistic(&rows2, &y2, &cfg).unwrap();
        let dir = |c: &Classifier| {
            let v: Vec<f64> = c.weights()[1].iter().zip(&c.weights()[0]).map(|(p, q)| p - q).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect::<Vec<_>>()
        };
        for (p, q) in dir(&a).iter().zip(dir(&b)) {
            assert!((p - q).abs() < 1e-3, "{:?} {:?}", dir(&a), dir(&b));
        }
    }

    #[test]
    fn guard_classifier_without_guards_stays() {
        let s = StateVec::from_slice(&[1.0, 0.0]).unwrap();
        let clf = train_guard_classifier(l(1), &[&s, &s], &[], &LogisticConfig::default()).unwrap();
        assert_eq!(clf.proba_over_modes(s.as_slice(), 2).unwrap(), vec![0.0, 1.0]);
    }

    proptest! {
        #[test]
        fn three_class_simplex(seed in 0u64..200, probe in prop::collection::vec(-50.0..50.0f64, 2)) {
            use rand::Rng;
            let mut r = crate::rng::rng(seed);
            let xs: Vec<[f64; 2]> = (0..24).map(|_| [r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)]).collect();
            let y: Vec<ModeLabel> = (0..24).map(|i| l(i % 3)).collect();
            let rows: Vec<&[f64]> = xs.iter().map(|r| r.as_slice()).collect();
            let clf = fit_logistic(&rows, &y, &LogisticConfig::default()).unwrap();
            let p = clf.predict_proba_slice(&probe).unwrap();
            prop_assert!(p.iter().all(|v| *v >= 0.0 && v.is_finite()));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

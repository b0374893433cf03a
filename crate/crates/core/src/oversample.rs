//! Synthetic oversampling of guard tuples.
//!
//! A synthetic tuple is `r·[a_pre; a_post] + (1-r)·[b_pre; b_post]` for two
//! distinct real tuples `a`, `b` and a single `r ~ U[0,1]`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::types::StateVec;

/// Standard deviation of the jitter used to make a second tuple when a guard
/// bucket has only one real pair.
pub const SINGLETON_JITTER: f64 = 1e-6;

/// One `(x_t, x_{t+1})` pair across a mode switch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuplePair {
    pub pre: StateVec,
    pub post: StateVec,
}

impl TuplePair {
    pub fn new(pre: StateVec, post: StateVec) -> Result<Self> {
        if pre.dim() != post.dim() {
            return Err(Error::input("tuple pre and post differ in dimension"));
        }
        Ok(TuplePair { pre, post })
    }
}

fn lerp(a: &StateVec, b: &StateVec, r: f64) -> StateVec {
    let v = a.as_vector() * r + b.as_vector() * (1.0 - r);
    StateVec::new(v).expect("convex combination of finite vectors is finite")
}

/// Interpolate tuple `a` and `b` with weight `r` on `a`.
pub fn interpolate(a: &TuplePair, b: &TuplePair, r: f64) -> TuplePair {
    TuplePair {
        pre: lerp(&a.pre, &b.pre, r),
        post: lerp(&a.post, &b.post, r),
    }
}

/// `n_synth` synthetic tuples from uniformly drawn distinct parent pairs.
pub fn smote_tuples(real: &[TuplePair], n_synth: usize, seed: u64) -> Result<Vec<TuplePair>> {
    if real.len() < 2 {
        return Err(Error::input(format!(
            "oversampling needs at least two real tuples, got {}",
            real.len()
        )));
    }
    let d = real[0].pre.dim();
    if real.iter().any(|t| t.pre.dim() != d || t.post.dim() != d) {
        return Err(Error::input("tuples differ in dimension"));
    }
    let mut r = rng::rng(seed);
    let n = real.len();
    Ok((0..n_synth)
        .map(|_| {
            let i = r.random_range(0..n);
            let mut j = r.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let w: f64 = r.random_range(0.0..=1.0);
            interpolate(&real[i], &real[j], w)
        })
        .collect())
}

/// Guard bucket target size: `max(50, 2·median_dyn/10)`, unless overridden.
pub fn target_size(median_dyn_bucket: usize, min_target: usize) -> usize {
    min_target.max(2 * median_dyn_bucket / 10)
}

/// Real tuples padded to at least two: a lone tuple gets a jittered copy.
pub fn ensure_two(real: &[TuplePair], seed: u64) -> Result<Vec<TuplePair>> {
    match real.len() {
        0 => Err(Error::input("cannot oversample an empty guard bucket")),
        1 => {
            let mut r = rng::rng(seed);
            let noise = Normal::new(0.0, SINGLETON_JITTER).expect("valid sigma");
            let mut jit = |s: &StateVec| {
                let v = s.as_vector().map(|x| x + noise.sample(&mut r));
                StateVec::new(v).expect("finite")
            };
            let copy = TuplePair {
                pre: jit(&real[0].pre),
                post: jit(&real[0].post),
            };
            Ok(vec![real[0].clone(), copy])
        }
        _ => Ok(real.to_vec()),
    }
}

/// Synthetic tuples bringing `real` up to `target` total.
pub fn oversample_bucket(real: &[TuplePair], target: usize, seed: u64) -> Result<Vec<TuplePair>> {
    let parents = ensure_two(real, rng::derive(seed, &[rng::tag("jitter")]))?;
    let n_synth = target.saturating_sub(real.len());
    smote_tuples(&parents, n_synth, rng::derive(seed, &[rng::tag("smote")]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tp(pre: &[f64], post: &[f64]) -> TuplePair {
        TuplePair::new(StateVec::from_slice(pre).unwrap(), StateVec::from_slice(post).unwrap())
            .unwrap()
    }

    #[test]
    fn endpoint_and_midpoint() {
        let a = tp(&[0.0, 0.0], &[1.0, 1.0]);
        let b = tp(&[2.0, 2.0], &[3.0, 3.0]);
        assert_eq!(interpolate(&a, &b, 1.0), a);
        assert_eq!(interpolate(&a, &b, 0.5), tp(&[1.0, 1.0], &[2.0, 2.0]));
    }

    #[test]
    fn needs_two_parents() {
        assert!(smote_tuples(&[tp(&[0.0], &[1.0])], 3, 0).is_err());
        assert!(smote_tuples(&[], 0, 0).is_err());
    }

    #[test]
    fn exact_count_and_reproducible() {
        let real = vec![tp(&[0.0], &[1.0]), tp(&[2.0], &[5.0]), tp(&[-1.0], &[0.5])];
        let a = smote_tuples(&real, 37, 11).unwrap();
        assert_eq!(a.len(), 37);
        assert_eq!(a, smote_tuples(&real, 37, 11).unwrap());
        assert!(smote_tuples(&real, 0, 11).unwrap().is_empty());
    }

    /// Oracle: brute-force interval check against the two parents.
    #[test]
    fn two_parent_hull() {
        let real = vec![tp(&[0.0, 4.0], &[1.0, -1.0]), tp(&[2.0, 3.0], &[-3.0, 0.0])];
        for s in smote_tuples(&real, 100, 2).unwrap() {
            for (v, k) in s.pre.as_slice().iter().zip(0..) {
                let (lo, hi) = (real[0].pre[k].min(real[1].pre[k]), real[0].pre[k].max(real[1].pre[k]));
                assert!(*v >= lo - 1e-15 && *v <= hi + 1e-15);
            }
            for (v, k) in s.post.as_slice().iter().zip(0..) {
                let (lo, hi) = (real[0].post[k].min(real[1].post[k]), real[0].post[k].max(real[1].post[k]));
                assert!(*v >= lo - 1e-15 && *v <= hi + 1e-15);
            }
        }
    }

    #[test]
    fn singleton_bucket_is_padded() {
        let one = vec![tp(&[0.5, -2.0], &[0.5, 2.0])];
        let out = oversample_bucket(&one, 50, 4).unwrap();
        assert_eq!(out.len(), 49);
        for s in &out {
            assert!((s.pre.as_vector() - one[0].pre.as_vector()).abs().max() < 1e-4);
        }
    }

    #[test]
    fn target_rule() {
        assert_eq!(target_size(100, 50), 50);
        assert_eq!(target_size(1000, 50), 200);
    }

    proptest! {
        /// A single r explains every coordinate of both pre and post.
        #[test]
        fn joint_coefficient(seed in 0u64..1000, vals in prop::collection::vec(-10.0..10.0f64, 8)) {
            let a = tp(&vals[0..2], &vals[2..4]);
            let b = tp(&vals[4..6], &vals[6..8]);
            let a_flat: Vec<f64> = a.pre.as_slice().iter().chain(a.post.as_slice()).copied().collect();
            let b_flat: Vec<f64> = b.pre.as_slice().iter().chain(b.post.as_slice()).copied().collect();
            prop_assume!(a_flat.iter().zip(&b_flat).any(|(x, y)| (x - y).abs() > 1e-3));
            let pivot = (0..4)
                .max_by(|&i, &j| (a_flat[i] - b_flat[i]).abs().total_cmp(&(a_flat[j] - b_flat[j]).abs()))
                .unwrap();
            for s in smote_tuples(&[a.clone(), b.clone()], 20, seed).unwrap() {
                let s_flat: Vec<f64> = s.pre.as_slice().iter().chain(s.post.as_slice()).copied().collect();
                let r = (s_flat[pivot] - b_flat[pivot]) / (a_flat[pivot] - b_flat[pivot]);
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&r) || r.is_nan());
                for k in 0..4 {
                    let recon = r * a_flat[k] + (1.0 - r) * b_flat[k];
                    prop_assert!((recon - s_flat[k]).abs() < 1e-12 * (1.0 + a_flat[k].abs() + b_flat[k].abs()) * 10.0);
                }
            }
        }
    }
}

//! Delete-d jackknife error bars and sample-size convergence scans.
//!
//! Neighbor-search estimators break under duplicated points, so bootstrap
//! resampling is not offered. Each replicate deletes a uniformly random
//! subset of `d` shots and re-evaluates the estimator on the complement. The
//! replicate spread is inflated by `(N - d) / d`:
//!
//! ```text
//! se² = (N - d)/d · (1/R) Σ_r (θ_r - θ̄)²
//! ```
//!
//! Replicate `r` draws its subset from a ChaCha stream keyed by `(seed, r)`,
//! so results do not depend on scheduling.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{EstimateWithCI, Units};

/// Anything whose samples can be subset by index.
pub trait Resample: Sized {
    fn len(&self) -> usize;
    fn subset(&self, idx: &[usize]) -> Self;
}

impl Resample for Vec<f64> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn subset(&self, idx: &[usize]) -> Self {
        idx.iter().map(|&i| self[i]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JackknifePlan {
    /// Fraction of samples deleted per replicate.
    pub delete_fraction: f64,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for JackknifePlan {
    fn default() -> Self {
        Self { delete_fraction: 0.05, repetitions: 3000, seed: 0 }
    }
}

impl JackknifePlan {
    /// Number of deleted samples for an ensemble of size `n`.
    pub fn deleted(&self, n: usize) -> usize {
        (self.delete_fraction * n as f64).round() as usize
    }

    pub fn validate(&self, n: usize) -> Result<usize> {
        if !(self.delete_fraction > 0.0 && self.delete_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "delete fraction {} not in (0, 1)",
                self.delete_fraction
            )));
        }
        if self.repetitions < 2 {
            return Err(Error::InvalidParameter("jackknife needs at least 2 repetitions".into()));
        }
        let d = self.deleted(n);
        if d == 0 {
            return Err(Error::InsufficientSamples { needed: (0.5 / self.delete_fraction).ceil() as usize, available: n });
        }
        Ok(d)
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

fn replicate_rng(seed: u64, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64 + 1);
    rng
}

/// Kept indices (sorted) for replicate `r`.
fn complement(n: usize, d: usize, seed: u64, r: usize) -> Vec<usize> {
    let mut rng = replicate_rng(seed, r);
    let mut deleted = vec![false; n];
    for i in sample(&mut rng, n, d) {
        deleted[i] = true;
    }
    (0..n).filter(|&i| !deleted[i]).collect()
}

/// Full-sample value of `estimator` with a delete-d jackknife standard error.
///
/// `min_size` is the smallest subset the estimator accepts; the complement
/// size `N - d` must reach it.
pub fn jackknife<T, F>(data: &T, plan: &JackknifePlan, min_size: usize, estimator: F) -> Result<EstimateWithCI>
where
    T: Resample + Sync,
    F: Fn(&T) -> Result<f64> + Sync,
{
    let n = data.len();
    let d = plan.validate(n)?;
    if n - d < min_size.max(1) {
        return Err(Error::InsufficientSamples { needed: min_size + d, available: n });
    }
    let value = estimator(data)?;
    let thetas = (0..plan.repetitions)
        .into_par_iter()
        .map(|r| estimator(&data.subset(&complement(n, d, plan.seed, r))))
        .collect::<Result<Vec<f64>>>()?;
    let stderr = delete_d_stderr(&thetas, n, d);
    Ok(EstimateWithCI::from_jackknife(value, stderr, n, "jackknife"))
}

/// `sqrt((N - d)/d · mean((θ_r - θ̄)²))`.
pub fn delete_d_stderr(thetas: &[f64], n: usize, d: usize) -> f64 {
    let r = thetas.len() as f64;
    let mean = thetas.iter().sum::<f64>() / r;
    let var = thetas.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / r;
    ((n - d) as f64 / d as f64 * var).sqrt()
}

/// One row of a convergence table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n_samples: usize,
    pub value: f64,
    pub stderr: f64,
    /// False for sizes at or below [`CONVERGENCE_THRESHOLD`].
    pub converged: bool,
}

/// Sample sizes at or below this are flagged as not converged.
pub const CONVERGENCE_THRESHOLD: usize = 500;

/// Evaluates `estimator` with jackknife errors on seeded random subsamples of
/// increasing size.
pub fn convergence_scan<T, F>(
    data: &T,
    sizes: &[usize],
    plan: &JackknifePlan,
    min_size: usize,
    estimator: F,
) -> Result<Vec<ConvergenceRow>>
where
    T: Resample + Sync,
    F: Fn(&T) -> Result<f64> + Sync,
{
    let n = data.len();
    if let Some(&too_big) = sizes.iter().find(|&&s| s > n) {
        return Err(Error::InsufficientSamples { needed: too_big, available: n });
    }
    let mut sizes = sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    sizes
        .iter()
        .enumerate()
        .map(|(i, &size)| {
            let mut rng = replicate_rng(plan.seed ^ 0x5eed_c0de, i);
            let mut idx = sample(&mut rng, n, size).into_vec();
            idx.sort_unstable();
            let sub = data.subset(&idx);
            let est = jackknife(&sub, &plan.with_seed(plan.seed.wrapping_add(i as u64)), min_size, &estimator)?;
            Ok(ConvergenceRow {
                n_samples: size,
                value: est.value,
                stderr: est.stderr,
                converged: size > CONVERGENCE_THRESHOLD,
            })
        })
        .collect()
}

impl EstimateWithCI {
    pub(crate) fn from_jackknife(value: f64, stderr: f64, n: usize, method: &str) -> Self {
        Self {
            value,
            stderr,
            ci95: (value - 2.0 * stderr, value + 2.0 * stderr),
            units: Units::Nats,
            k: None,
            n_samples: n,
            method: method.to_string(),
        }
    }
}

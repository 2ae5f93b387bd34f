//! Matter-wave interference fringes: forward model, per-slice fits and
//! phase-profile extraction.
//!
//! Each z slice of an interferogram is modeled as
//!
//! ```text
//! f(x) = A·exp(-(x - x0)²/σ²)·[1 + C·cos(2π(x - x0)/λ_F - φ)] + B
//! ```
//!
//! with φ measured relative to the envelope center x0.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{unwrap_profile, wrap_phase, Meta, PhaseEnsemble};
use crate::error::{Error, Result};
use crate::lsq::{levenberg_marquardt, LsqOptions};

/// Fits with a contrast below this are flagged as unreliable.
pub const MIN_CONTRAST: f64 = 0.05;
/// Largest fraction of failed slices [`extract_profile`] tolerates.
pub const MAX_BAD_FRACTION: f64 = 0.2;

/// Parameters of one slice. `phi` is in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub lambda_f: f64,
    pub x0: f64,
    pub sigma_tof: f64,
    pub phi: f64,
}

impl SliceParams {
    #[cfg(test)]
    fn to_vec(self) -> [f64; 7] {
        [self.a, self.b, self.c, self.lambda_f, self.x0, self.sigma_tof, self.phi]
    }

    fn from_slice(p: &[f64]) -> Self {
        Self { a: p[0], b: p[1], c: p[2], lambda_f: p[3], x0: p[4], sigma_tof: p[5], phi: p[6] }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let u = x - self.x0;
        let env = (-(u / self.sigma_tof).powi(2)).exp();
        self.a * env * (1.0 + self.c * (2.0 * PI * u / self.lambda_f - self.phi).cos()) + self.b
    }
}

/// Model value and gradient with respect to (A, B, C, λ_F, x0, σ, φ).
fn model_with_gradient(p: &[f64], x: f64) -> (f64, [f64; 7]) {
    let [a, b, c, lam, x0, sig, phi] = [p[0], p[1], p[2], p[3], p[4], p[5], p[6]];
    let u = x - x0;
    let env = (-(u / sig).powi(2)).exp();
    let theta = 2.0 * PI * u / lam - phi;
    let (s, co) = theta.sin_cos();
    let f = 1.0 + c * co;
    let ae = a * env;
    let grad = [
        env * f,
        1.0,
        ae * co,
        ae * c * s * 2.0 * PI * u / (lam * lam),
        ae * (2.0 * u * f / (sig * sig) + c * s * 2.0 * PI / lam),
        ae * f * 2.0 * u * u / (sig * sig * sig),
        ae * c * s,
    ];
    (ae * f + b, grad)
}

/// A stack of fringe slices, `n_z × n_x`, in counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Interferogram {
    image: Vec<f64>,
    n_z: usize,
    x_grid: Vec<f64>,
    /// Slice pitch along z [µm].
    pub dz: f64,
    pub truth: Option<Vec<SliceParams>>,
    pub meta: Meta,
}

impl Interferogram {
    pub fn new(image: Vec<f64>, n_z: usize, x_grid: Vec<f64>, dz: f64) -> Result<Self> {
        if n_z == 0 || x_grid.is_empty() || image.len() != n_z * x_grid.len() {
            return Err(Error::InvalidParameter(format!(
                "image of {} values does not match {n_z} x {}",
                image.len(),
                x_grid.len()
            )));
        }
        if let Some(v) = image.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidParameter(format!("counts must be finite and nonnegative, found {v}")));
        }
        Ok(Self { image, n_z, x_grid, dz, truth: None, meta: Meta::default() })
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    pub fn n_x(&self) -> usize {
        self.x_grid.len()
    }

    pub fn x_grid(&self) -> &[f64] {
        &self.x_grid
    }

    pub fn image(&self) -> &[f64] {
        &self.image
    }

    pub fn slice(&self, z: usize) -> &[f64] {
        &self.image[z * self.n_x()..(z + 1) * self.n_x()]
    }
}

/// `n` pixel centers with pitch `dx`, symmetric about zero.
pub fn centered_grid(n: usize, dx: f64) -> Vec<f64> {
    (0..n).map(|i| (i as f64 - (n as f64 - 1.0) / 2.0) * dx).collect()
}

/// Evaluates the model for every slice, adds Gaussian noise of width
/// `noise` and clamps at zero.
pub fn synthesize(truth: &[SliceParams], x_grid: &[f64], dz: f64, noise: f64, seed: u64) -> Result<Interferogram> {
    if !(noise >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise {noise} must be nonnegative")));
    }
    if let Some(t) = truth.iter().find(|t| !(t.sigma_tof > 0.0 && t.lambda_f > 0.0)) {
        return Err(Error::InvalidParameter(format!("slice parameters need sigma, lambda_F > 0: {t:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("finite width");
    let mut image = Vec::with_capacity(truth.len() * x_grid.len());
    for t in truth {
        for &x in x_grid {
            let mut v = t.eval(x);
            if noise > 0.0 {
                v += dist.sample(&mut rng);
            }
            image.push(v.max(0.0));
        }
    }
    let mut out = Interferogram::new(image, truth.len(), x_grid.to_vec(), dz)?;
    out.truth = Some(truth.to_vec());
    out.meta = Meta::default().with("source", "synthetic").with("noise", noise).with("seed", seed);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceFit {
    pub params: SliceParams,
    /// Covariance of (A, B, C, λ_F, x0, σ, φ), scaled by the residual
    /// variance.
    pub covariance: Vec<Vec<f64>>,
    pub residual_norm: f64,
    pub initial_residual_norm: f64,
    pub converged: bool,
}

impl SliceFit {
    pub fn phi_stderr(&self) -> f64 {
        self.covariance[6][6].max(0.0).sqrt()
    }
}

/// Optional constraints for [`fit_slice_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SliceFitOptions {
    /// Hold λ_F at this value instead of fitting it.
    pub fixed_lambda: Option<f64>,
}

/// Starting point from intensity moments and the dominant spatial frequency
/// of the envelope-normalized signal.
fn initial_guess(y: &[f64], x: &[f64], fixed_lambda: Option<f64>) -> Result<[f64; 7]> {
    let n = y.len();
    let edge = (n / 10).max(1);
    let b0 = (y[..edge].iter().sum::<f64>() + y[n - edge..].iter().sum::<f64>()) / (2 * edge) as f64;
    let w: Vec<f64> = y.iter().map(|v| (v - b0).max(0.0)).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::FitDiverged("no signal above background".into()));
    }
    let x0 = w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() / total;
    let var = w.iter().zip(x).map(|(w, x)| w * (x - x0).powi(2)).sum::<f64>() / total;
    let sigma = (2.0 * var).sqrt().max(1e-9);
    let dx = (x[n - 1] - x[0]).abs() / (n - 1) as f64;
    let a0 = total * dx / (sigma * PI.sqrt());
    // residual oscillation relative to the envelope, weighted by it
    let mut s = Vec::with_capacity(n);
    for (&yi, &xi) in y.iter().zip(x) {
        let env = (-((xi - x0) / sigma).powi(2)).exp();
        if env > 0.2 {
            s.push((xi - x0, env, (yi - b0) / (a0 * env) - 1.0));
        }
    }
    if s.len() < 4 {
        return Err(Error::FitDiverged("envelope too narrow for the pixel grid".into()));
    }
    let weight: f64 = s.iter().map(|p| p.1).sum();
    let project = |k: f64| -> (f64, f64) {
        s.iter().fold((0.0, 0.0), |(re, im), &(u, w, v)| (re + w * v * (k * u).cos(), im - w * v * (k * u).sin()))
    };
    let lambda = match fixed_lambda {
        Some(l) => l,
        None => {
            let span = s.last().unwrap().0 - s[0].0;
            let (lo, hi) = (2.0 * dx, span.max(4.0 * dx));
            let steps = 600;
            (0..=steps)
                .map(|i| lo * (hi / lo).powf(i as f64 / steps as f64))
                .map(|l| {
                    let (re, im) = project(2.0 * PI / l);
                    (l, re * re + im * im)
                })
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0
        }
    };
    let (re, im) = project(2.0 * PI / lambda);
    let c0 = (2.0 * (re * re + im * im).sqrt() / weight).min(1.0);
    let phi0 = -im.atan2(re);
    Ok([a0, b0, c0, lambda, x0, sigma, phi0])
}

/// Least-squares fit of the fringe model to one slice.
pub fn fit_slice(slice: &[f64], x_grid: &[f64]) -> Result<SliceFit> {
    fit_slice_with(slice, x_grid, &SliceFitOptions::default())
}

pub fn fit_slice_with(slice: &[f64], x_grid: &[f64], opts: &SliceFitOptions) -> Result<SliceFit> {
    let n = slice.len();
    if n < 8 || x_grid.len() != n {
        return Err(Error::InsufficientSamples { needed: 8, available: n.min(x_grid.len()) });
    }
    let start = initial_guess(slice, x_grid, opts.fixed_lambda)?;
    let free: Vec<usize> = (0..7).filter(|&i| !(i == 3 && opts.fixed_lambda.is_some())).collect();
    let full = |q: &[f64]| -> [f64; 7] {
        let mut p = start;
        for (&i, &v) in free.iter().zip(q) {
            p[i] = v;
        }
        p
    };
    let q0: Vec<f64> = free.iter().map(|&i| start[i]).collect();
    let sol = levenberg_marquardt(&q0, &LsqOptions::default(), |q| {
        let p = full(q);
        if !(p[5] > 0.0 && p[3] > 0.0) {
            return None;
        }
        let mut r = DVector::zeros(n);
        let mut j = DMatrix::zeros(n, free.len());
        for i in 0..n {
            let (f, g) = model_with_gradient(&p, x_grid[i]);
            r[i] = f - slice[i];
            for (c, &k) in free.iter().enumerate() {
                j[(i, c)] = g[k];
            }
        }
        Some((r, j))
    })?;
    let mut p = full(&sol.params);
    let mut sign = [1.0; 7];
    if p[2] < 0.0 {
        // C·cos(θ) = (-C)·cos(θ - π)
        p[2] = -p[2];
        p[6] += PI;
        sign[2] = -1.0;
    }
    p[6] = wrap_phase(p[6]);
    let params = SliceParams::from_slice(&p);
    let dof = (n - free.len()).max(1) as f64;
    let s2 = sol.residual_norm.powi(2) / dof;
    let mut covariance = vec![vec![0.0; 7]; 7];
    for (a, &i) in free.iter().enumerate() {
        for (b, &k) in free.iter().enumerate() {
            covariance[i][k] = s2 * sol.covariance[(a, b)] * sign[i] * sign[k];
        }
    }
    if params.c < MIN_CONTRAST {
        return Err(Error::LowContrast { contrast: params.c });
    }
    Ok(SliceFit {
        params,
        covariance,
        residual_norm: sol.residual_norm,
        initial_residual_norm: sol.initial_residual_norm,
        converged: sol.converged,
    })
}

/// Unwrapped phase profile of one interferogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedProfile {
    pub phi: Vec<f64>,
    /// Fit error of each phase; infinite for interpolated slices.
    pub stderr: Vec<f64>,
    /// Slices whose fit failed and whose phase was interpolated.
    pub flagged: Vec<usize>,
    pub fits: Vec<Option<SliceFit>>,
}

/// Fits every slice, unwraps the phases of the good ones along z and fills
/// failed slices by linear interpolation between good neighbors.
pub fn extract_profile(image: &Interferogram) -> Result<ExtractedProfile> {
    let n = image.n_z();
    let fits: Vec<Option<SliceFit>> = (0..n)
        .into_par_iter()
        .map(|z| fit_slice(image.slice(z), image.x_grid()).ok())
        .collect();
    let good: Vec<usize> = (0..n).filter(|&z| fits[z].is_some()).collect();
    let bad = n - good.len();
    if good.is_empty() || bad as f64 > MAX_BAD_FRACTION * n as f64 {
        return Err(Error::TooManyBadSlices { bad, total: n });
    }
    let wrapped: Vec<f64> = good.iter().map(|&z| fits[z].as_ref().unwrap().params.phi).collect();
    let unwrapped = unwrap_profile(&wrapped);
    let mut phi = vec![0.0; n];
    let mut stderr = vec![f64::INFINITY; n];
    for (&z, &v) in good.iter().zip(&unwrapped) {
        phi[z] = v;
        stderr[z] = fits[z].as_ref().unwrap().phi_stderr();
    }
    let flagged: Vec<usize> = (0..n).filter(|z| fits[*z].is_none()).collect();
    for &z in &flagged {
        let left = good.iter().rev().find(|&&g| g < z);
        let right = good.iter().find(|&&g| g > z);
        phi[z] = match (left, right) {
            (Some(&l), Some(&r)) => phi[l] + (phi[r] - phi[l]) * (z - l) as f64 / (r - l) as f64,
            (Some(&l), None) => phi[l],
            (None, Some(&r)) => phi[r],
            (None, None) => unreachable!("at least one good slice"),
        };
    }
    Ok(ExtractedProfile { phi, stderr, flagged, fits })
}

/// Extracts every interferogram into one ensemble row each.
pub fn extract_ensemble(images: &[Interferogram]) -> Result<PhaseEnsemble> {
    let first = images.first().ok_or_else(|| Error::InvalidParameter("no interferograms".into()))?;
    let mut rows = Vec::with_capacity(images.len());
    let mut flagged = Vec::new();
    for (shot, img) in images.iter().enumerate() {
        if img.n_z() != first.n_z() {
            return Err(Error::InvalidParameter("interferograms differ in slice count".into()));
        }
        let p = extract_profile(img)?;
        flagged.extend(p.flagged.iter().map(|z| serde_json::json!([shot, z])));
        rows.push(p.phi);
    }
    let grid = (0..first.n_z()).map(|z| (z as f64 + 0.5) * first.dz).collect();
    let meta = Meta::default()
        .with("source", "fringe-extraction")
        .with("flagged_slices", serde_json::Value::Array(flagged));
    PhaseEnsemble::new(rows, grid, meta).map(|e| e.with_pitch(first.dz))
}

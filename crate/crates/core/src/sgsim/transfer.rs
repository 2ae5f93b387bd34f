//! Exact sampling of the discretized thermal measure along z.
//!
//! With trapezoid weights the Boltzmann factor of a profile factorizes into
//! one kernel per spatial step,
//!
//! ```text
//! K(φ, φ') = exp[-(λ_T/8)(φ - φ')²/Δz - Δz·(q²/(8λ_T))·((1 - cos φ) + (1 - cos φ'))]
//! ```
//!
//! so profiles form a Markov chain in z. The field itself is not periodic,
//! but the action only sees increments and `cos φ`. Writing `φ = θ + 2πn`
//! with `θ ∈ [-π, π)`, the sequence of θ is a Markov chain with the wrapped
//! kernel
//!
//! ```text
//! K̃(θ, θ') = Σ_n exp[-(λ_T/8)(θ' - θ + 2πn)²/Δz] · s(θ) s(θ')
//! ```
//!
//! and, given two consecutive θ, the image `n` of the increment is drawn from
//! its Gaussian weight. The unwrapped profile is then exact up to a global
//! `2π` multiple, with no truncation of the φ range.
//!
//! Sampling runs a backward pass of cumulative vectors `v_j = K̃ v_{j+1}`
//! (uniform at the free right end), draws θ_0 from `v_0` and each next θ from
//! `K̃(θ_j, ·) v_{j+1}`. θ lives on `M` cells; outputs are dithered uniformly
//! within the chosen cell. Images `|n| ≤ W` are kept.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::params::SGParams;
use crate::ensemble::{Meta, PhaseEnsemble};
use crate::error::{Error, Result};

/// Default θ resolution and number of images on each side.
pub const DEFAULT_M: usize = 512;
pub const DEFAULT_WINDINGS: usize = 8;

#[derive(Debug, Clone)]
pub struct TransferOperator {
    phi_grid: Vec<f64>,
    cell: f64,
    step: f64,
    /// `(λ_T/8)/Δz`.
    stiffness: f64,
    windings: usize,
    /// Log of the image-summed Gaussian for cyclic offsets `k = 0..=M/2`.
    log_wrapped: Vec<f64>,
    wrapped: Vec<f64>,
    /// `-Δz·(q²/(8λ_T))·(1 - cos θ_a)` per cell.
    log_site: Vec<f64>,
    site: Vec<f64>,
}

impl TransferOperator {
    /// Builds the kernel for `params` on `m` cells over one period, keeping
    /// `windings` images on each side.
    pub fn new(params: &SGParams, m: usize, windings: usize) -> Result<Self> {
        if m < 64 || windings < 1 {
            return Err(Error::InvalidParameter(format!("need M >= 64 and W >= 1, got M = {m}, W = {windings}")));
        }
        params.validate()?;
        let cell = 2.0 * PI / m as f64;
        let phi_grid: Vec<f64> = (0..m).map(|a| -PI + (a as f64 + 0.5) * cell).collect();
        let step = params.dz();
        let g = params.gradient_coefficient() / step;
        let w = windings as i64;
        let log_wrapped: Vec<f64> = (0..=m / 2)
            .map(|k| {
                let terms: Vec<f64> = (-w..=w).map(|n| -g * (k as f64 * cell + 2.0 * PI * n as f64).powi(2)).collect();
                log_sum_exp(&terms)
            })
            .collect();
        let v = 0.5 * params.potential_coefficient() * step;
        let log_site: Vec<f64> = phi_grid.iter().map(|p| -v * (1.0 - p.cos())).collect();
        Ok(Self {
            wrapped: log_wrapped.iter().map(|l| l.exp()).collect(),
            site: log_site.iter().map(|l| l.exp()).collect(),
            phi_grid,
            cell,
            step,
            stiffness: g,
            windings,
            log_wrapped,
            log_site,
        })
    }

    /// Cell centers in `[-π, π)`.
    pub fn phi_grid(&self) -> &[f64] {
        &self.phi_grid
    }

    pub fn size(&self) -> usize {
        self.phi_grid.len()
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    fn offset(&self, a: usize, b: usize) -> usize {
        let k = a.abs_diff(b);
        k.min(self.size() - k)
    }

    /// Log of the kernel entry `K̃(θ_a, θ_b)`; finite for every pair.
    pub fn log_kernel(&self, a: usize, b: usize) -> f64 {
        self.log_wrapped[self.offset(a, b)] + (self.log_site[a] + self.log_site[b])
    }

    /// Kernel entry `K̃(θ_a, θ_b)` (may underflow to zero).
    pub fn kernel(&self, a: usize, b: usize) -> f64 {
        self.wrapped[self.offset(a, b)] * (self.site[a] * self.site[b])
    }

    /// `K̃ v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let u: Vec<f64> = v.iter().zip(&self.site).map(|(x, s)| x * s).collect();
        (0..self.size())
            .map(|a| {
                let acc: f64 = u.iter().enumerate().map(|(b, x)| self.wrapped[self.offset(a, b)] * x).sum();
                acc * self.site[a]
            })
            .collect()
    }

    /// Backward cumulative vectors for `n` sites, each normalized to unit
    /// maximum. Entry `j` is premultiplied by the site factor, i.e. holds
    /// `s ∘ v_j`, which is what the forward draw needs.
    fn cumulative(&self, n: usize) -> Result<Vec<Vec<f64>>> {
        let m = self.size();
        let mut out = vec![Vec::new(); n];
        let mut v = vec![1.0; m];
        for j in (0..n).rev() {
            if j + 1 < n {
                v = self.apply(&v);
            }
            let max = v.iter().cloned().fold(0.0, f64::max);
            if !(max > 0.0 && max.is_finite()) {
                return Err(Error::OperatorUnderflow { site: j });
            }
            v.iter_mut().for_each(|x| *x /= max);
            out[j] = v.iter().zip(&self.site).map(|(x, s)| x * s).collect();
        }
        Ok(out)
    }

    /// Draws `n_samples` unwrapped profiles on the `params.n_grid`
    /// simulation grid. The first site lies in `[-π, π)`.
    pub fn sample(&self, params: &SGParams, n_samples: usize, seed: u64) -> Result<PhaseEnsemble> {
        let n = params.n_grid;
        if (params.dz() - self.step).abs() > 1e-12 * self.step {
            return Err(Error::InvalidParameter("operator was built for a different grid".into()));
        }
        let m = self.size();
        let cum = self.cumulative(n)?;
        // site 0 marginal ∝ v_0 = (s ∘ v_0) / s
        let first: Vec<f64> = cum[0].iter().zip(&self.site).map(|(x, s)| x / s).collect();
        let first_cdf = cdf(&first);
        let w = self.windings as i64;
        let rows: Vec<f64> = (0..n_samples)
            .into_par_iter()
            .flat_map_iter(|shot| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(shot as u64);
                let mut a = draw(&first_cdf, &mut rng);
                let mut center = self.phi_grid[a];
                let mut row = Vec::with_capacity(n);
                row.push(self.dither(center, &mut rng));
                let mut weights = vec![0.0; m];
                let mut images = vec![0.0; 2 * self.windings + 1];
                for next in cum.iter().skip(1) {
                    let mut acc = 0.0;
                    for (b, slot) in weights.iter_mut().enumerate() {
                        acc += self.wrapped[self.offset(a, b)] * next[b];
                        *slot = acc;
                    }
                    let b = draw(&weights, &mut rng);
                    let dx = self.phi_grid[b] - self.phi_grid[a];
                    let mut acc = 0.0;
                    for (slot, k) in images.iter_mut().zip(-w..=w) {
                        acc += (-self.stiffness * (dx + 2.0 * PI * k as f64).powi(2)).exp();
                        *slot = acc;
                    }
                    let image = draw(&images, &mut rng) as i64 - w;
                    center += dx + 2.0 * PI * image as f64;
                    a = b;
                    row.push(self.dither(center, &mut rng));
                }
                row
            })
            .collect();
        let grid = (0..n).map(|j| j as f64 * self.step).collect();
        let meta = Meta::default()
            .with("source", "simulation")
            .with("sampler", "transfer")
            .with("seed", seed)
            .with("lambda_T", params.lambda_t)
            .with("q", params.q)
            .with("phi_cells", m as u64)
            .with("windings", self.windings as u64);
        PhaseEnsemble::from_flat(rows, n_samples, grid, meta)
    }

    fn dither(&self, center: f64, rng: &mut impl Rng) -> f64 {
        center + self.cell * (rng.gen::<f64>() - 0.5)
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn cdf(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

/// Index drawn from an unnormalized cumulative table.
fn draw(cdf: &[f64], rng: &mut impl Rng) -> usize {
    let total = *cdf.last().expect("nonempty table");
    let u = rng.gen::<f64>() * total;
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

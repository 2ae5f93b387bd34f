//! Random-walk Metropolis sampler for the same measure as the transfer
//! operator. It is slow and only meant as an independent check.
//!
//! Each sweep visits every site once with a local move and then proposes
//! one global shift of the whole profile, which only changes the potential
//! term. Without the shift the zero mode of a nearly massless chain would
//! random-walk for a very long time.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::params::SGParams;
use crate::ensemble::{Meta, PhaseEnsemble};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetropolisConfig {
    /// Sweeps discarded per chain.
    pub burn_in: usize,
    /// Sweeps between recorded profiles.
    pub thinning: usize,
    /// Initial local proposal width [rad]; tuned towards 40 % acceptance
    /// during burn-in and frozen afterwards.
    pub proposal_width: f64,
    /// Independent chains run in parallel; samples are concatenated chain by
    /// chain.
    pub chains: usize,
}

impl Default for MetropolisConfig {
    fn default() -> Self {
        Self { burn_in: 2000, thinning: 20, proposal_width: 0.5, chains: 8 }
    }
}

struct Chain {
    phi: Vec<f64>,
    weights: Vec<f64>,
    grad: f64,
    pot: f64,
    /// Soliton width λ_T/q in sites; infinite when massless.
    kink_width: f64,
    width: f64,
    accepted: u64,
    proposed: u64,
    trial: Vec<f64>,
}

impl Chain {
    fn new(params: &SGParams, width: f64) -> Self {
        let n = params.n_grid;
        let dz = params.dz();
        let weights = (0..n).map(|j| if j == 0 || j + 1 == n { 0.5 } else { 1.0 }).collect();
        Self {
            phi: vec![0.0; n],
            weights,
            grad: params.gradient_coefficient() / dz,
            pot: params.potential_coefficient() * dz,
            kink_width: params.lambda_t / params.q / dz,
            width,
            accepted: 0,
            proposed: 0,
            trial: vec![0.0; n],
        }
    }

    fn local_delta(&self, j: usize, new: f64) -> f64 {
        let old = self.phi[j];
        let mut d = 0.0;
        if j > 0 {
            let l = self.phi[j - 1];
            d += (new - l).powi(2) - (old - l).powi(2);
        }
        if j + 1 < self.phi.len() {
            let r = self.phi[j + 1];
            d += (new - r).powi(2) - (old - r).powi(2);
        }
        self.grad * d + self.pot * self.weights[j] * (old.cos() - new.cos())
    }

    fn action(&self, phi: &[f64]) -> f64 {
        let grad: f64 = phi.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
        let pot: f64 = phi.iter().zip(&self.weights).map(|(p, w)| w * (1.0 - p.cos())).sum();
        self.grad * grad + self.pot * pot
    }

    /// Adds or removes a soliton-shaped 2π kink at `i` and antikink at `k`
    /// (either may sit beyond an end). Local moves alone almost never cross
    /// the barrier, so without this the kink number barely equilibrates.
    fn kink_move(&mut self, rng: &mut ChaCha8Rng) {
        let n = self.phi.len() as f64;
        let pad = 3.0 * self.kink_width;
        let mut pos = || -pad + rng.gen::<f64>() * (n + 2.0 * pad);
        let (i, k) = (pos(), pos());
        let sign = if rng.gen::<bool>() { 2.0 * PI } else { -2.0 * PI };
        let shape = |x: f64| 2.0 / PI * (x / self.kink_width).exp().atan();
        for (j, t) in self.trial.iter_mut().enumerate() {
            *t = self.phi[j] + sign * (shape(j as f64 - i) - shape(j as f64 - k));
        }
        let d = self.action(&self.trial) - self.action(&self.phi);
        if d <= 0.0 || rng.gen::<f64>() < (-d).exp() {
            std::mem::swap(&mut self.phi, &mut self.trial);
        }
    }

    fn sweep(&mut self, rng: &mut ChaCha8Rng) {
        for j in 0..self.phi.len() {
            let new = self.phi[j] + self.width * (2.0 * rng.gen::<f64>() - 1.0);
            let d = self.local_delta(j, new);
            self.proposed += 1;
            if d <= 0.0 || rng.gen::<f64>() < (-d).exp() {
                self.phi[j] = new;
                self.accepted += 1;
            }
        }
        if self.pot > 0.0 {
            let shift = PI * (2.0 * rng.gen::<f64>() - 1.0);
            let d: f64 = self
                .phi
                .iter()
                .zip(&self.weights)
                .map(|(p, w)| w * (p.cos() - (p + shift).cos()))
                .sum::<f64>()
                * self.pot;
            if d <= 0.0 || rng.gen::<f64>() < (-d).exp() {
                self.phi.iter_mut().for_each(|p| *p += shift);
            }
            self.kink_move(rng);
        } else {
            // flat direction: any shift is accepted
            let shift = PI * (2.0 * rng.gen::<f64>() - 1.0);
            self.phi.iter_mut().for_each(|p| *p += shift);
        }
    }

    fn acceptance(&self) -> f64 {
        self.accepted as f64 / self.proposed.max(1) as f64
    }
}

/// Draws `n_samples` profiles with single-site Metropolis plus global
/// shifts and kink insertion/removal.
///
/// The meta block records the post-burn-in local acceptance rate and the
/// tuned proposal width.
pub fn sample_metropolis(params: &SGParams, n_samples: usize, seed: u64, cfg: &MetropolisConfig) -> Result<PhaseEnsemble> {
    params.validate()?;
    if n_samples == 0 || cfg.chains == 0 || cfg.thinning == 0 || !(cfg.proposal_width > 0.0) {
        return Err(Error::InvalidParameter("need n_samples, chains, thinning >= 1 and a positive width".into()));
    }
    let chains = cfg.chains.min(n_samples);
    let per_chain: Vec<usize> = (0..chains).map(|c| n_samples / chains + usize::from(c < n_samples % chains)).collect();
    let results: Vec<(Vec<f64>, f64, f64)> = per_chain
        .par_iter()
        .enumerate()
        .map(|(c, &count)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64 + 1);
            let mut chain = Chain::new(params, cfg.proposal_width);
            for s in 0..cfg.burn_in {
                chain.sweep(&mut rng);
                if (s + 1) % 50 == 0 {
                    chain.width = (chain.width * (chain.acceptance() - 0.4).exp()).clamp(1e-3, 2.0 * PI);
                    chain.accepted = 0;
                    chain.proposed = 0;
                }
            }
            chain.accepted = 0;
            chain.proposed = 0;
            let mut out = Vec::with_capacity(count * params.n_grid);
            for _ in 0..count {
                for _ in 0..cfg.thinning {
                    chain.sweep(&mut rng);
                }
                out.extend_from_slice(&chain.phi);
            }
            (out, chain.acceptance(), chain.width)
        })
        .collect();
    let acceptance = results.iter().map(|r| r.1).sum::<f64>() / chains as f64;
    let width = results.iter().map(|r| r.2).sum::<f64>() / chains as f64;
    let samples: Vec<f64> = results.into_iter().flat_map(|r| r.0).collect();
    let grid = (0..params.n_grid).map(|j| j as f64 * params.dz()).collect();
    let meta = Meta::default()
        .with("source", "simulation")
        .with("sampler", "metropolis")
        .with("seed", seed)
        .with("lambda_T", params.lambda_t)
        .with("q", params.q)
        .with("burn_in", cfg.burn_in as u64)
        .with("thinning", cfg.thinning as u64)
        .with("chains", chains as u64)
        .with("acceptance", acceptance)
        .with("proposal_width", width);
    PhaseEnsemble::from_flat(samples, n_samples, grid, meta)
}

/// Standard error of the mean of a correlated series from `batches`
/// contiguous batch means. NaN unless there are at least two batches of
/// one value each.
pub fn batch_means_stderr(values: &[f64], batches: usize) -> f64 {
    if batches < 2 || values.len() < batches {
        return f64::NAN;
    }
    let size = values.len() / batches;
    let means: Vec<f64> = values.chunks_exact(size).take(batches).map(|c| c.iter().sum::<f64>() / size as f64).collect();
    let b = means.len() as f64;
    let m = means.iter().sum::<f64>() / b;
    (means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b * (b - 1.0))).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sgsim::transfer::TransferOperator;

    #[test]
    fn deterministic_and_logs_acceptance() {
        let p = SGParams::from_lengths(15.0, 2.0).unwrap();
        let cfg = MetropolisConfig { burn_in: 100, thinning: 2, ..Default::default() };
        let a = sample_metropolis(&p, 40, 5, &cfg).unwrap();
        let b = sample_metropolis(&p, 40, 5, &cfg).unwrap();
        assert_eq!(a.samples(), b.samples());
        let acc = a.meta().get("acceptance").unwrap().as_f64().unwrap();
        assert!(acc > 0.2 && acc < 0.6, "{acc}");
    }

    #[test]
    fn massless_increments_match_gaussian_slope() {
        // exact: φ(z) - φ(0) is a sum of i.i.d. N(0, 4Δz/λ_T) steps
        let p = SGParams::from_lengths(15.0, 0.0).unwrap();
        let cfg = MetropolisConfig { burn_in: 1000, thinning: 10, chains: 8, ..Default::default() };
        let e = sample_metropolis(&p, 4000, 11, &cfg).unwrap();
        for sep in [10usize, 20, 40] {
            let vals: Vec<f64> = e.rows().map(|r| (r[sep + 50] - r[50]).powi(2)).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let se = batch_means_stderr(&vals, 40);
            let exact = 4.0 * sep as f64 * p.dz() / 15.0;
            assert!((mean - exact).abs() < 4.0 * se, "sep {sep}: {mean} vs {exact} ± {se}");
        }
    }

    #[test]
    fn strong_coupling_locks_phase() {
        let p = SGParams::from_lengths(15.0, 10.0).unwrap();
        let cfg = MetropolisConfig { burn_in: 500, thinning: 5, ..Default::default() };
        let e = sample_metropolis(&p, 400, 2, &cfg).unwrap();
        assert!(e.coherence() > 0.8, "{}", e.coherence());
    }

    #[test]
    fn massless_coherence_vanishes() {
        let p = SGParams::from_lengths(15.0, 0.0).unwrap();
        let cfg = MetropolisConfig { burn_in: 200, thinning: 5, ..Default::default() };
        let e = sample_metropolis(&p, 2000, 4, &cfg).unwrap();
        let vals: Vec<f64> = e.rows().map(|r| r.iter().map(|v| v.cos()).sum::<f64>() / r.len() as f64).collect();
        let se = batch_means_stderr(&vals, 40);
        assert!(e.coherence().abs() < 4.0 * se + 0.01, "{} ± {se}", e.coherence());
    }

    #[test]
    fn agrees_with_transfer_sampler_on_pair_correlations() {
        let p = SGParams::from_lengths(10.0, 2.0).unwrap();
        let op = TransferOperator::new(&p, 512, 8).unwrap();
        let exact = op.sample(&p, 20000, 1).unwrap();
        let cfg = MetropolisConfig { burn_in: 1000, thinning: 10, ..Default::default() };
        let mc = sample_metropolis(&p, 8000, 2, &cfg).unwrap();
        for (i, j) in [(75usize, 75usize), (60, 75), (50, 100), (30, 120)] {
            let f = |e: &PhaseEnsemble| -> Vec<f64> { e.rows().map(|r| if i == j { r[i].cos() } else { (r[i] - r[j]).cos() }).collect() };
            let a = f(&exact);
            let b = f(&mc);
            let ma = a.iter().sum::<f64>() / a.len() as f64;
            let mb = b.iter().sum::<f64>() / b.len() as f64;
            let sa = batch_means_stderr(&a, 100);
            let sb = batch_means_stderr(&b, 40);
            let comb = (sa * sa + sb * sb).sqrt();
            assert!((ma - mb).abs() < 3.0 * comb + 1e-3, "({i},{j}): {ma} vs {mb} ± {comb}");
        }
    }
}

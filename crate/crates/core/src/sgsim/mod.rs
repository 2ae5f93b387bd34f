//! Ground-truth ensembles from the classical thermal sine-Gordon measure.
//!
//! The density sector is Gaussian and decouples, so only the relative phase
//! is sampled. Its Boltzmann exponent on a grid of spacing Δz is
//!
//! ```text
//! βH[φ] = Σ_j (λ_T/8)(φ_{j+1} - φ_j)²/Δz + Σ_j w_j Δz (q²/(4λ_T))(1 - cos φ_j)
//! ```
//!
//! with trapezoid weights `w_j` (one half at the two ends). The potential
//! minimum sits at φ = 0.

mod metropolis;
mod params;
mod pipeline;
mod transfer;

pub use metropolis::{batch_means_stderr, sample_metropolis, MetropolisConfig};
pub use params::{
    ell_from_j, j_from_ell, lambda_from_temperature, temperature_from_lambda, SGParams, HBAR, K_B, M_RB87,
};
pub use pipeline::{
    apply_psf, coherence_curve, estimate_q, interpolate_linear, simulate_pipeline, simulate_stages, CoherenceCurve,
    CoherenceNode, PipelineConfig, PipelineStages, QEstimate,
};
pub use transfer::{TransferOperator, DEFAULT_M, DEFAULT_WINDINGS};

use crate::error::{Error, Result};

/// βH of `profile` on the simulation grid of `params`.
pub fn dimensionless_action(profile: &[f64], params: &SGParams) -> Result<f64> {
    if profile.len() != params.n_grid {
        return Err(Error::InvalidParameter(format!(
            "profile has {} points, grid has {}",
            profile.len(),
            params.n_grid
        )));
    }
    Ok(action_terms(profile, params.dz(), params.gradient_coefficient(), params.potential_coefficient()))
}

pub(crate) fn action_terms(profile: &[f64], dz: f64, grad: f64, pot: f64) -> f64 {
    let n = profile.len();
    let kinetic: f64 = profile.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() * grad / dz;
    if pot == 0.0 {
        return kinetic;
    }
    let potential: f64 = profile
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let w = if j == 0 || j + 1 == n { 0.5 } else { 1.0 };
            w * (1.0 - p.cos())
        })
        .sum();
    kinetic + pot * dz * potential
}

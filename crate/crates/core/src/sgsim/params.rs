use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reduced Planck constant [J·s].
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant [J/K].
pub const K_B: f64 = 1.380_649e-23;
/// Mass of ⁸⁷Rb [kg].
pub const M_RB87: f64 = 86.909_180_527 * 1.660_539_066_60e-27;
/// s-wave scattering length of ⁸⁷Rb [m].
const A_S_RB87: f64 = 5.24e-9;
/// Radial trap frequency of the reference setup [rad/s].
const OMEGA_PERP: f64 = 2.0 * std::f64::consts::PI * 1.4e3;

const UM: f64 = 1e-6;

/// Parameters of the classical thermal sine-Gordon measure.
///
/// Lengths are in µm, `n_1d` in µm⁻¹, `j_rate` in s⁻¹ and `temperature_nk` in
/// nK. `ell_j` is infinite (and `j_rate` zero) for the massless theory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SGParams {
    pub lambda_t: f64,
    pub ell_j: f64,
    pub q: f64,
    pub length: f64,
    pub n_grid: usize,
    pub sigma_psf: f64,
    pub n_1d: f64,
    /// Density interaction strength [J·µm]; the phase marginal does not use it.
    pub g_1d: f64,
    pub j_rate: f64,
    pub temperature_nk: f64,
}

impl SGParams {
    /// Parameters from the two length scales λ_T and q = λ_T/ℓ_J, with the
    /// reference geometry (L = 120 µm on 150 points, σ_PSF = 3 µm,
    /// n_1D = 70 µm⁻¹).
    pub fn from_lengths(lambda_t: f64, q: f64) -> Result<Self> {
        Self::with_geometry(lambda_t, q, 120.0, 150, 3.0, 70.0)
    }

    pub fn with_geometry(lambda_t: f64, q: f64, length: f64, n_grid: usize, sigma_psf: f64, n_1d: f64) -> Result<Self> {
        if !(lambda_t > 0.0 && lambda_t.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda_T = {lambda_t} must be positive")));
        }
        if !(q >= 0.0 && q.is_finite()) {
            return Err(Error::InvalidParameter(format!("q = {q} must be nonnegative")));
        }
        if !(n_1d > 0.0) {
            return Err(Error::InvalidParameter(format!("n_1D = {n_1d} must be positive")));
        }
        let ell_j = if q == 0.0 { f64::INFINITY } else { lambda_t / q };
        let p = Self {
            lambda_t,
            ell_j,
            q,
            length,
            n_grid,
            sigma_psf,
            n_1d,
            g_1d: 2.0 * HBAR * OMEGA_PERP * A_S_RB87 / UM,
            j_rate: j_from_ell(ell_j),
            temperature_nk: temperature_from_lambda(lambda_t, n_1d),
        };
        p.validate()?;
        Ok(p)
    }

    /// Parameters from temperature [nK], tunneling rate J [s⁻¹] and density
    /// [µm⁻¹], via ℓ_J² = ħ/(4mJ) and λ_T = 2ħ²n_1D/(m k_B T).
    pub fn from_physical(temperature_nk: f64, j_rate: f64, n_1d: f64) -> Result<Self> {
        if !(temperature_nk > 0.0) || !(j_rate >= 0.0) {
            return Err(Error::InvalidParameter("temperature must be positive and J nonnegative".into()));
        }
        let lambda_t = lambda_from_temperature(temperature_nk, n_1d);
        let ell_j = ell_from_j(j_rate);
        let q = if ell_j.is_infinite() { 0.0 } else { lambda_t / ell_j };
        let mut p = Self::with_geometry(lambda_t, q, 120.0, 150, 3.0, n_1d)?;
        p.temperature_nk = temperature_nk;
        p.j_rate = j_rate;
        p.ell_j = ell_j;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0) || self.n_grid < 2 || !(self.sigma_psf >= 0.0) {
            return Err(Error::InvalidParameter("need L > 0, n_grid >= 2, sigma_PSF >= 0".into()));
        }
        if self.ell_j.is_finite() && ((self.q - self.lambda_t / self.ell_j).abs() > 1e-12 * self.q.abs().max(1e-300)) {
            return Err(Error::InvalidParameter("q does not equal lambda_T / ell_J".into()));
        }
        Ok(())
    }

    /// Simulation grid spacing [µm].
    pub fn dz(&self) -> f64 {
        self.length / (self.n_grid - 1) as f64
    }

    /// Coefficient of (∂φ)² in the dimensionless action, λ_T/8.
    pub fn gradient_coefficient(&self) -> f64 {
        self.lambda_t / 8.0
    }

    /// Coefficient of (1 - cos φ) in the dimensionless action, q²/(4λ_T).
    pub fn potential_coefficient(&self) -> f64 {
        self.q * self.q / (4.0 * self.lambda_t)
    }

    pub fn with_q(&self, q: f64) -> Result<Self> {
        Self::with_geometry(self.lambda_t, q, self.length, self.n_grid, self.sigma_psf, self.n_1d)
    }
}

/// λ_T [µm] = 2ħ²n_1D/(m k_B T).
pub fn lambda_from_temperature(temperature_nk: f64, n_1d: f64) -> f64 {
    2.0 * HBAR * HBAR * (n_1d / UM) / (M_RB87 * K_B * temperature_nk * 1e-9) / UM
}

/// Inverse of [`lambda_from_temperature`].
pub fn temperature_from_lambda(lambda_t: f64, n_1d: f64) -> f64 {
    2.0 * HBAR * HBAR * (n_1d / UM) / (M_RB87 * K_B * lambda_t * UM) * 1e9
}

/// ℓ_J [µm] = sqrt(ħ/(4mJ)); infinite for J = 0.
pub fn ell_from_j(j_rate: f64) -> f64 {
    if j_rate == 0.0 {
        f64::INFINITY
    } else {
        (HBAR / (4.0 * M_RB87 * j_rate)).sqrt() / UM
    }
}

/// J [s⁻¹] = ħ/(4mℓ_J²); zero for infinite ℓ_J.
pub fn j_from_ell(ell_j: f64) -> f64 {
    if ell_j.is_infinite() {
        0.0
    } else {
        HBAR / (4.0 * M_RB87 * (ell_j * UM).powi(2))
    }
}

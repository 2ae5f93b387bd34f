//! From raw simulated profiles to the ensembles the estimators see, and the
//! coherence curve used to map measured ⟨cos φ⟩ onto q.

use serde::{Deserialize, Serialize};

use super::params::SGParams;
use super::transfer::{TransferOperator, DEFAULT_M, DEFAULT_WINDINGS};
use crate::ensemble::PhaseEnsemble;
use crate::error::{Error, Result};
use crate::estimators::EstimateWithCI;
use crate::resampling::JackknifePlan;

/// Stage settings for [`simulate_pipeline`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Pixels after interpolation across the full length.
    pub n_interp: usize,
    pub central_fraction: f64,
    /// Lower edge of the window the spatial mean is reduced into.
    pub offset_origin: f64,
    /// Pixels after coarse-graining.
    pub coarse: usize,
    pub phi_cells: usize,
    /// Images kept on each side of the wrapped transfer kernel.
    pub windings: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_interp: 60,
            central_fraction: 0.5,
            offset_origin: -std::f64::consts::PI,
            coarse: 6,
            phi_cells: DEFAULT_M,
            windings: DEFAULT_WINDINGS,
        }
    }
}

/// The central, offset-reduced ensemble before coarse-graining and the
/// coarse-grained one.
#[derive(Debug, Clone)]
pub struct PipelineStages {
    pub fine: PhaseEnsemble,
    pub coarse: PhaseEnsemble,
}

/// Linear interpolation onto `n_out` pixel centers spanning the simulated
/// length.
pub fn interpolate_linear(ensemble: &PhaseEnsemble, length: f64, n_out: usize) -> Result<PhaseEnsemble> {
    if n_out == 0 || !(length > 0.0) {
        return Err(Error::InvalidParameter("need n_out >= 1 and a positive length".into()));
    }
    let grid = ensemble.grid().to_vec();
    let pitch = length / n_out as f64;
    let centers: Vec<f64> = (0..n_out).map(|i| (i as f64 + 0.5) * pitch).collect();
    // bracketing index and weight for each center
    let last = grid.len() - 1;
    let stencil: Vec<(usize, f64)> = centers
        .iter()
        .map(|&z| {
            let i = grid.partition_point(|&g| g <= z).saturating_sub(1).min(last.saturating_sub(1));
            if last == 0 {
                return (0, 0.0);
            }
            let t = ((z - grid[i]) / (grid[i + 1] - grid[i])).clamp(0.0, 1.0);
            (i, t)
        })
        .collect();
    Ok(ensemble.map_rows(format!("interpolate_linear({}->{n_out})", grid.len()), centers, pitch, |row, out| {
        out.extend(stencil.iter().map(|&(i, t)| if t == 0.0 { row[i] } else { (1.0 - t) * row[i] + t * row[i + 1] }));
    }))
}

/// Per-shot Gaussian smoothing of width `sigma` [µm] along z.
///
/// The kernel is sampled at pixel offsets out to 4σ and normalized; pixels
/// beyond the ends are mirrored (`… b a | a b …`).
pub fn apply_psf(ensemble: &PhaseEnsemble, sigma: f64) -> Result<PhaseEnsemble> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!("PSF width {sigma} must be nonnegative")));
    }
    let stage = format!("apply_psf(sigma={sigma})");
    let n = ensemble.n_pixels();
    if sigma == 0.0 {
        return Ok(ensemble.map_rows(stage, ensemble.grid().to_vec(), ensemble.dz(), |row, out| out.extend_from_slice(row)));
    }
    let s = sigma / ensemble.dz();
    let radius = (4.0 * s).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|k| (-0.5 * (k as f64 / s).powi(2)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= norm);
    let reflect = |i: isize| -> usize {
        let period = 2 * n as isize;
        let m = i.rem_euclid(period);
        (if m < n as isize { m } else { period - 1 - m }) as usize
    };
    Ok(ensemble.map_rows(stage, ensemble.grid().to_vec(), ensemble.dz(), |row, out| {
        for j in 0..n as isize {
            let acc: f64 = kernel.iter().enumerate().map(|(o, w)| w * row[reflect(j + o as isize - radius)]).sum();
            out.push(acc);
        }
    }))
}

/// Samples `params` with the transfer operator and runs every stage,
/// keeping both the fine and the coarse-grained result.
pub fn simulate_stages(params: &SGParams, n_samples: usize, seed: u64, cfg: &PipelineConfig) -> Result<PipelineStages> {
    let op = TransferOperator::new(params, cfg.phi_cells, cfg.windings)?;
    let raw = op.sample(params, n_samples, seed)?;
    process(&raw, params, cfg)
}

/// Runs the post-sampling stages on a raw simulation-grid ensemble.
pub(crate) fn process(raw: &PhaseEnsemble, params: &SGParams, cfg: &PipelineConfig) -> Result<PipelineStages> {
    let fine = interpolate_linear(raw, params.length, cfg.n_interp)?;
    let fine = apply_psf(&fine, params.sigma_psf)?
        .select_central(cfg.central_fraction)?
        .reduce_global_offset_from(cfg.offset_origin);
    let coarse = fine.coarse_grain(cfg.coarse)?;
    Ok(PipelineStages { fine, coarse })
}

/// Coarse-grained ensemble, `N_s × cfg.coarse`.
pub fn simulate_pipeline(params: &SGParams, n_samples: usize, seed: u64, cfg: &PipelineConfig) -> Result<PhaseEnsemble> {
    Ok(simulate_stages(params, n_samples, seed, cfg)?.coarse)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceNode {
    pub q: f64,
    pub coherence: EstimateWithCI,
}

/// ⟨cos φ⟩ against q at fixed λ_T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceCurve {
    pub lambda_t: f64,
    pub nodes: Vec<CoherenceNode>,
}

impl CoherenceCurve {
    /// Checks that q is strictly increasing and that any decrease in
    /// coherence stays within overlapping 95 % intervals.
    pub fn new(lambda_t: f64, nodes: Vec<CoherenceNode>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidParameter("empty coherence curve".into()));
        }
        for w in nodes.windows(2) {
            if !(w[1].q > w[0].q) {
                return Err(Error::InvalidParameter("q grid must be strictly increasing".into()));
            }
            let (a, b) = (&w[0].coherence, &w[1].coherence);
            if b.ci95.1 < a.ci95.0 {
                return Err(Error::NonMonotoneCurve { q: w[1].q });
            }
        }
        Ok(Self { lambda_t, nodes })
    }

    pub fn q_values(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.q).collect()
    }
}

/// Runs the pipeline at every q and tabulates ⟨cos φ⟩ with jackknife errors.
///
/// All q share `seed`, so neighboring points use common random numbers.
pub fn coherence_curve(
    lambda_t: f64,
    q_grid: &[f64],
    n_samples: usize,
    seed: u64,
    cfg: &PipelineConfig,
    plan: &JackknifePlan,
) -> Result<CoherenceCurve> {
    if q_grid.iter().any(|q| !(*q >= 0.0)) {
        return Err(Error::InvalidParameter("q grid must be nonnegative".into()));
    }
    let nodes = q_grid
        .iter()
        .map(|&q| {
            let params = SGParams::from_lengths(lambda_t, q)?;
            let e = simulate_pipeline(&params, n_samples, seed, cfg)?;
            Ok(CoherenceNode { q, coherence: e.coherence_factor(plan)? })
        })
        .collect::<Result<Vec<_>>>()?;
    CoherenceCurve::new(lambda_t, nodes)
}

/// q inferred from a measured coherence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QEstimate {
    pub q: f64,
    pub stderr: f64,
    pub ci95: (f64, f64),
    /// Set when the coherence sits on a curve endpoint, where the inversion
    /// cannot see beyond the tabulated range.
    pub at_endpoint: bool,
}

/// Piecewise-linear inversion of `curve` at `coherence ± coherence_se`.
///
/// The error combines the input error and the interpolated curve error,
/// both scaled by the local slope dq/d⟨cos φ⟩.
pub fn estimate_q(coherence: f64, coherence_se: f64, curve: &CoherenceCurve) -> Result<QEstimate> {
    let c: Vec<f64> = curve
        .nodes
        .iter()
        .scan(f64::NEG_INFINITY, |m, n| {
            *m = m.max(n.coherence.value);
            Some(*m)
        })
        .collect();
    let (lo, hi) = (c[0], *c.last().unwrap());
    if !(coherence >= lo && coherence <= hi) || coherence.abs() > 1.0 {
        return Err(Error::OutOfRange { value: coherence, lo, hi });
    }
    let q = curve.q_values();
    let se: Vec<f64> = curve.nodes.iter().map(|n| n.coherence.stderr).collect();
    if c.len() == 1 {
        return Ok(QEstimate { q: q[0], stderr: f64::INFINITY, ci95: (f64::NEG_INFINITY, f64::INFINITY), at_endpoint: true });
    }
    // first segment whose upper end reaches the value, skipping flat pieces
    let i = (0..c.len() - 1)
        .find(|&i| c[i + 1] >= coherence && c[i + 1] > c[i])
        .unwrap_or(c.len() - 2);
    let span = c[i + 1] - c[i];
    let t = if span > 0.0 { (coherence - c[i]) / span } else { 0.0 };
    let value = q[i] + t * (q[i + 1] - q[i]);
    let slope = if span > 0.0 { (q[i + 1] - q[i]) / span } else { f64::INFINITY };
    let curve_se = (1.0 - t) * se[i] + t * se[i + 1];
    let stderr = slope.abs() * (coherence_se.powi(2) + curve_se.powi(2)).sqrt();
    let at_endpoint = coherence == lo || coherence == hi;
    Ok(QEstimate { q: value, stderr, ci95: (value - 2.0 * stderr, value + 2.0 * stderr), at_endpoint })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::Meta;
    use crate::estimators::Units;

    fn ens(rows: Vec<Vec<f64>>, dz: f64) -> PhaseEnsemble {
        let n = rows[0].len();
        PhaseEnsemble::new(rows, (0..n).map(|i| i as f64 * dz).collect(), Meta::default()).unwrap()
    }

    #[test]
    fn psf_zero_is_identity_and_preserves_constants() {
        let e = ens(vec![vec![0.3, -1.0, 2.0, 0.7, 5.0]], 2.0);
        assert_eq!(apply_psf(&e, 0.0).unwrap().samples(), e.samples());
        let c = ens(vec![vec![1.25; 40]], 2.0);
        for v in apply_psf(&c, 3.0).unwrap().samples() {
            assert!((v - 1.25).abs() < 1e-14);
        }
    }

    #[test]
    fn psf_spreads_spike_with_sigma_squared() {
        let mut row = vec![0.0; 61];
        row[30] = 2.0;
        let out = apply_psf(&ens(vec![row], 2.0), 3.0).unwrap();
        let r = out.row(0);
        let mass: f64 = r.iter().sum();
        let m2: f64 = r.iter().enumerate().map(|(i, v)| v * ((i as f64 - 30.0) * 2.0).powi(2)).sum::<f64>() / mass;
        assert!((mass - 2.0).abs() < 1e-12);
        // truncation at 4σ trims the tails slightly
        assert!((m2 - 9.0).abs() < 0.01, "{m2}");
    }

    #[test]
    fn psf_reflects_at_edges() {
        let mut row = vec![0.0; 30];
        row[0] = 1.0;
        let out = apply_psf(&ens(vec![row], 2.0), 3.0).unwrap();
        // mass that would leave through the edge is mirrored back
        assert!((out.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn interpolation_hits_pixel_centers() {
        let length = 120.0;
        let grid: Vec<f64> = (0..150).map(|j| j as f64 * length / 149.0).collect();
        let row: Vec<f64> = grid.iter().map(|z| 0.5 * z - 3.0).collect();
        let e = PhaseEnsemble::new(vec![row], grid, Meta::default()).unwrap();
        let out = interpolate_linear(&e, length, 60).unwrap();
        assert_eq!(out.n_pixels(), 60);
        assert!((out.dz() - 2.0).abs() < 1e-12);
        for (z, v) in out.grid().iter().zip(out.row(0)) {
            assert!((v - (0.5 * z - 3.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn pipeline_shape_and_pitch() {
        let p = SGParams::from_lengths(15.0, 2.0).unwrap();
        let cfg = PipelineConfig { phi_cells: 256, windings: 4, ..Default::default() };
        let st = simulate_stages(&p, 50, 3, &cfg).unwrap();
        assert_eq!(st.fine.n_pixels(), 30);
        assert_eq!((st.coarse.n_shots(), st.coarse.n_pixels()), (50, 6));
        assert!((st.coarse.dz() - 10.0).abs() < 1e-12);
        assert!((st.coarse.extent() - 60.0).abs() < 1e-9);
        assert!(st.coarse.meta().history.len() >= 5);
    }

    #[test]
    fn coherence_increases_with_q() {
        let cfg = PipelineConfig::default();
        let plan = JackknifePlan { repetitions: 100, ..Default::default() };
        let curve = coherence_curve(15.0, &[0.0, 1.0, 2.0, 4.0, 6.0], 2000, 1, &cfg, &plan).unwrap();
        let c: Vec<f64> = curve.nodes.iter().map(|n| n.coherence.value).collect();
        assert!(c[0].abs() < 0.05, "{c:?}");
        assert!(c.windows(2).all(|w| w[1] > w[0]), "{c:?}");
        assert!(c[4] > 0.85 && c[4] < 1.0, "{c:?}");
    }

    fn node(q: f64, c: f64, se: f64) -> CoherenceNode {
        CoherenceNode { q, coherence: EstimateWithCI::from_jackknife(c, se, 100, "coherence") }
    }

    #[test]
    fn inversion_is_linear_between_nodes() {
        let curve = CoherenceCurve::new(15.0, vec![node(0.0, 0.0, 0.01), node(2.0, 0.5, 0.01), node(4.0, 0.8, 0.01)]).unwrap();
        let est = estimate_q(0.25, 0.0, &curve).unwrap();
        assert!((est.q - 1.0).abs() < 1e-12);
        assert!((est.stderr - 4.0 * 0.01).abs() < 1e-12);
        assert!(!est.at_endpoint);
        let end = estimate_q(0.8, 0.0, &curve).unwrap();
        assert!((end.q - 4.0).abs() < 1e-12 && end.at_endpoint);
        assert!(matches!(estimate_q(1.5, 0.0, &curve), Err(Error::OutOfRange { .. })));
        assert!(matches!(estimate_q(-0.1, 0.0, &curve), Err(Error::OutOfRange { .. })));
        assert_eq!(curve.nodes[0].coherence.units, Units::Nats);
    }

    #[test]
    fn nonmonotone_curve_is_rejected() {
        let err = CoherenceCurve::new(15.0, vec![node(0.0, 0.5, 0.01), node(1.0, 0.3, 0.01)]).unwrap_err();
        assert!(matches!(err, Error::NonMonotoneCurve { .. }));
        // a dip inside the error bars is tolerated
        assert!(CoherenceCurve::new(15.0, vec![node(0.0, 0.5, 0.05), node(1.0, 0.45, 0.05)]).is_ok());
    }
}

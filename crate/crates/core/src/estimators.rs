//! k-nearest-neighbor information functionals.
//!
//! * [`ksg_mutual_information`]: Kraskov–Stögbauer–Grassberger estimate of
//!   I(A:B) using the joint k-th neighbor distance ε_i and strict marginal
//!   box counts n_A,i, n_B,i (self included):
//!   `ψ(k) + ψ(N) - (1/N) Σ_i [ψ(n_A,i) + ψ(n_B,i)]`.
//! * [`kl_to_nearest_gaussian`]: relative entropy S[f‖f^G] to the Gaussian
//!   with the data's mean and covariance, from within-data distances ρ_i and
//!   data-to-Gaussian-sample distances ν_i:
//!   `ln(N/(N-1)) + (D/N) Σ_i ln(ν_i/ρ_i)`.
//! * [`differential_entropy`]: Kozachenko–Leonenko entropy under the max
//!   norm, used to cross-check I = S_A + S_B - S_AB.
//!
//! Every distance is a max-norm distance. Values are in nats; negative
//! estimates are returned as-is.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{DataCloud, Subspace};
use crate::error::{Error, Result};
use crate::knn::{KdTree, NeighborIndex};
use crate::resampling::{jackknife, JackknifePlan};
use crate::special::digamma_table;

/// Neighbor order used throughout unless overridden.
pub const DEFAULT_K: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    #[default]
    Nats,
    Bits,
}

impl Units {
    /// Multiplier converting nats to these units.
    pub fn per_nat(self) -> f64 {
        match self {
            Units::Nats => 1.0,
            Units::Bits => std::f64::consts::LOG2_E,
        }
    }
}

/// A scalar estimate with jackknife standard error and a 95% interval
/// (value ± 2·stderr).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithCI {
    pub value: f64,
    pub stderr: f64,
    pub ci95: (f64, f64),
    pub units: Units,
    pub k: Option<usize>,
    pub n_samples: usize,
    pub method: String,
}

impl EstimateWithCI {
    pub fn with_method(mut self, method: &str) -> Self {
        self.method = method.to_string();
        self
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = Some(k);
        self
    }

    /// Re-expresses an information quantity in `units`. Non-information
    /// estimates (e.g. coherence) should not be converted.
    pub fn in_units(&self, units: Units) -> Self {
        let f = units.per_nat() / self.units.per_nat();
        Self {
            value: self.value * f,
            stderr: self.stderr * f,
            ci95: (self.ci95.0 * f, self.ci95.1 * f),
            units,
            ..self.clone()
        }
    }
}

/// How duplicate points (zero neighbor distances) are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase", tag = "mode", content = "seed")]
pub enum TieMode {
    /// Fail with [`Error::DuplicatePoints`].
    #[default]
    Fail,
    /// Add seeded noise of amplitude `1e-10 ×` the per-axis range first.
    Jitter(u64),
}

impl TieMode {
    pub fn prepare<'a>(&self, cloud: &'a DataCloud) -> std::borrow::Cow<'a, DataCloud> {
        match self {
            TieMode::Fail => std::borrow::Cow::Borrowed(cloud),
            TieMode::Jitter(seed) => std::borrow::Cow::Owned(cloud.jittered(*seed)),
        }
    }
}

fn check_size(n: usize, k: usize) -> Result<()> {
    if k == 0 || n < k + 1 {
        return Err(Error::KTooLarge { k, n });
    }
    Ok(())
}

fn duplicates(dists: &[f64]) -> Result<()> {
    let shots: Vec<usize> = dists.iter().enumerate().filter(|(_, &d)| d == 0.0).map(|(i, _)| i).collect();
    if shots.is_empty() {
        Ok(())
    } else {
        Err(Error::DuplicatePoints { shots })
    }
}

/// KSG mutual information between the A and B axis groups of `cloud`.
pub fn ksg_mutual_information(cloud: &DataCloud, k: usize) -> Result<f64> {
    let n = cloud.len();
    check_size(n, k)?;
    if cloud.dim_a() == 0 || cloud.dim_b() == 0 {
        return Err(Error::InvalidParameter("mutual information needs nonempty A and B".into()));
    }
    let index = NeighborIndex::new(cloud);
    let eps: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| index.kth_neighbor_distance(i, k))
        .collect::<Result<_>>()?;
    duplicates(&eps)?;
    let psi = digamma_table(n);
    let marginal: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let na = index.count_within_subspace(i, eps[i], Subspace::A);
            let nb = index.count_within_subspace(i, eps[i], Subspace::B);
            psi[na] + psi[nb]
        })
        .collect();
    Ok(psi[k] + psi[n] - marginal.iter().sum::<f64>() / n as f64)
}

/// Kozachenko–Leonenko differential entropy (nats) of all axes of `cloud`.
pub fn differential_entropy(cloud: &DataCloud, k: usize) -> Result<f64> {
    let n = cloud.len();
    check_size(n, k)?;
    let d = cloud.dim();
    let tree = KdTree::new(cloud.points().to_vec(), d);
    let eps: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| tree.kth_distance(cloud.point(i), k, Some(i)).expect("k < n"))
        .collect();
    duplicates(&eps)?;
    let psi = digamma_table(n);
    let mean_log = eps.iter().map(|e| e.ln()).sum::<f64>() / n as f64;
    // max-norm ball of radius ε has volume (2ε)^d
    Ok(psi[n] - psi[k] + d as f64 * (std::f64::consts::LN_2 + mean_log))
}

/// Gaussian with the sample mean and unbiased covariance of a cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct NearestGaussian {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Lower-triangular `L` with `L Lᵀ = covariance`.
    pub factor: DMatrix<f64>,
}

impl NearestGaussian {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Builds a model from a mean and covariance, rejecting singular input.
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::InvalidParameter("covariance shape does not match mean".into()));
        }
        let chol = covariance.clone().cholesky().ok_or(Error::SingularCovariance)?;
        let factor = chol.l();
        for i in 0..d {
            // relative pivot size; exact collinearity leaves round-off here
            if factor[(i, i)].powi(2) <= 1e-12 * covariance[(i, i)] {
                return Err(Error::SingularCovariance);
            }
        }
        Ok(Self { mean, covariance, factor })
    }
}

/// Fits the nearest Gaussian (sample mean, unbiased covariance).
pub fn fit_nearest_gaussian(cloud: &DataCloud) -> Result<NearestGaussian> {
    let n = cloud.len();
    let d = cloud.dim();
    if n < d + 1 {
        return Err(Error::InsufficientSamples { needed: d + 1, available: n });
    }
    let mut mean = DVector::zeros(d);
    for i in 0..n {
        mean += DVector::from_column_slice(cloud.point(i));
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..n {
        let x = DVector::from_column_slice(cloud.point(i)) - &mean;
        cov.syger(1.0, &x, &x, 1.0);
    }
    cov /= (n - 1) as f64;
    cov.fill_upper_triangle_with_lower_triangle();
    NearestGaussian::new(mean, cov)
}

/// Draws `n` points (row-major `n × D`) from `model`.
pub fn sample_gaussian(model: &NearestGaussian, n: usize, seed: u64) -> Vec<f64> {
    let d = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n * d);
    let mut z = DVector::zeros(d);
    for _ in 0..n {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let x = &model.mean + &model.factor * &z;
        out.extend(x.iter());
    }
    out
}

/// Relative entropy (nats) between the data distribution and its nearest
/// Gaussian, using one seeded Gaussian sample of the same size as the data.
pub fn kl_to_nearest_gaussian(cloud: &DataCloud, k: usize, seed: u64) -> Result<f64> {
    let n = cloud.len();
    check_size(n, k)?;
    let d = cloud.dim();
    let model = fit_nearest_gaussian(cloud)?;
    let gauss = KdTree::new(sample_gaussian(&model, n, seed), d);
    let data = KdTree::new(cloud.points().to_vec(), d);
    let pairs: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let p = cloud.point(i);
            let rho = data.kth_distance(p, k, Some(i)).expect("k < n");
            let nu = gauss.kth_distance(p, k, None).expect("k <= n");
            (rho, nu)
        })
        .collect();
    let rho: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    duplicates(&rho)?;
    let sum: f64 = pairs.iter().map(|(rho, nu)| (nu / rho).ln()).sum();
    Ok((n as f64 / (n - 1) as f64).ln() + d as f64 * sum / n as f64)
}

/// KSG mutual information with a jackknife interval.
pub fn mutual_information_ci(cloud: &DataCloud, k: usize, ties: TieMode, plan: &JackknifePlan) -> Result<EstimateWithCI> {
    let cloud = ties.prepare(cloud);
    let est = jackknife(cloud.as_ref(), plan, k + 1, |c| ksg_mutual_information(c, k))?;
    Ok(est.with_method("ksg").with_k(k))
}

/// Relative entropy to the nearest Gaussian with a jackknife interval. The
/// Gaussian reference sample is redrawn per replicate from the same seed.
pub fn kl_ci(cloud: &DataCloud, k: usize, seed: u64, ties: TieMode, plan: &JackknifePlan) -> Result<EstimateWithCI> {
    let cloud = ties.prepare(cloud);
    let est = jackknife(cloud.as_ref(), plan, (k + 1).max(cloud.dim() + 1), |c| {
        kl_to_nearest_gaussian(c, k, seed)
    })?;
    Ok(est.with_method("kl-nearest-gaussian").with_k(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    pub(crate) fn bivariate_normal(n: usize, rho: f64, seed: u64) -> DataCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = (1.0 - rho * rho).sqrt();
        let mut pts = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let x: f64 = StandardNormal.sample(&mut rng);
            let e: f64 = StandardNormal.sample(&mut rng);
            pts.push(x);
            pts.push(rho * x + s * e);
        }
        DataCloud::new(pts, n, 1, 1).unwrap()
    }

    #[test]
    fn independent_normals_have_zero_mi() {
        let c = bivariate_normal(5000, 0.0, 1);
        let mi = ksg_mutual_information(&c, 2).unwrap();
        assert!(mi.abs() < 0.03, "{mi}");
    }

    #[test]
    fn correlated_normals_match_closed_form() {
        for (rho, seed) in [(0.5, 2), (0.9, 3)] {
            let c = bivariate_normal(10_000, rho, seed);
            let mi = ksg_mutual_information(&c, 2).unwrap();
            let exact = -0.5 * (1.0 - rho * rho as f64).ln();
            assert!((mi - exact).abs() < 0.03, "rho {rho}: {mi} vs {exact}");
        }
    }

    #[test]
    fn mi_is_symmetric_bitwise() {
        let c = bivariate_normal(2000, 0.6, 4);
        assert_eq!(ksg_mutual_information(&c, 2).unwrap(), ksg_mutual_information(&c.swapped(), 2).unwrap());
    }

    #[test]
    fn duplicates_are_reported() {
        let c = DataCloud::new(vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 1.0], 5, 1, 1).unwrap();
        match ksg_mutual_information(&c, 2) {
            Err(Error::DuplicatePoints { shots }) => assert_eq!(shots, vec![0, 1, 2]),
            other => panic!("{other:?}"),
        }
        assert!(mutual_information_ci(&c, 2, TieMode::Jitter(1), &JackknifePlan { delete_fraction: 0.2, repetitions: 5, seed: 0 }).is_ok());
    }

    #[test]
    fn k_must_leave_neighbors() {
        let c = bivariate_normal(3, 0.0, 5);
        assert!(matches!(ksg_mutual_information(&c, 3), Err(Error::KTooLarge { .. })));
    }

    #[test]
    fn entropy_of_uniform_and_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let u: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>()).collect();
        let h = differential_entropy(&DataCloud::single(u.clone(), 10_000, 1).unwrap(), 2).unwrap();
        assert!(h.abs() < 0.03, "{h}");
        let u2: Vec<f64> = u.iter().map(|x| 2.0 * x).collect();
        let h2 = differential_entropy(&DataCloud::single(u2, 10_000, 1).unwrap(), 2).unwrap();
        assert!((h2 - std::f64::consts::LN_2).abs() < 0.03, "{h2}");
        // single-draw spread is ~0.015 nats at this size; average four draws
        let hg = (0..4)
            .map(|_| {
                let g: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
                differential_entropy(&DataCloud::single(g, 10_000, 1).unwrap(), 2).unwrap()
            })
            .sum::<f64>()
            / 4.0;
        let exact = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        assert!((hg - exact).abs() < 0.03, "{hg} vs {exact}");
    }

    #[test]
    fn nearest_gaussian_fit() {
        let c = DataCloud::single(vec![-1.0, 0.0, 1.0], 3, 1).unwrap();
        let g = fit_nearest_gaussian(&c).unwrap();
        assert_eq!(g.mean[0], 0.0);
        assert_eq!(g.covariance[(0, 0)], 1.0);
        let mut pts = Vec::new();
        for i in 0..50 {
            let v = (i as f64 * 0.37).sin();
            pts.extend([v, v]);
        }
        let degenerate = DataCloud::new(pts, 50, 1, 1).unwrap();
        assert!(matches!(fit_nearest_gaussian(&degenerate), Err(Error::SingularCovariance)));
    }

    #[test]
    fn factor_reproduces_covariance() {
        let c = bivariate_normal(500, 0.7, 7);
        let g = fit_nearest_gaussian(&c).unwrap();
        let rebuilt = &g.factor * g.factor.transpose();
        assert!((rebuilt - &g.covariance).norm() <= 1e-10 * g.covariance.norm());
        assert!((g.covariance.clone() - g.covariance.transpose()).norm() < 1e-12);
    }

    #[test]
    fn gaussian_sampling() {
        let model = NearestGaussian::new(DVector::from_element(1, 0.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let a = sample_gaussian(&model, 100_000, 8);
        let m = a.iter().sum::<f64>() / a.len() as f64;
        let v = a.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (a.len() - 1) as f64;
        assert!(m.abs() < 0.01 && (v - 1.0).abs() < 0.01, "{m} {v}");
        assert_eq!(a, sample_gaussian(&model, 100_000, 8));
        assert!(NearestGaussian::new(DVector::from_element(1, 0.0), DMatrix::from_element(1, 1, 0.0)).is_err());
    }

    #[test]
    fn kl_of_gaussian_data_is_near_zero() {
        let c = bivariate_normal(5000, 0.4, 9);
        let kl = kl_to_nearest_gaussian(&c, 2, 10).unwrap();
        assert!(kl.abs() < 0.05, "{kl}");
    }

    #[test]
    fn unit_conversion_round_trips() {
        let e = EstimateWithCI::from_jackknife(0.8, 0.1, 100, "x");
        let b = e.in_units(Units::Bits);
        assert!((b.value - 0.8 / std::f64::consts::LN_2).abs() < 1e-15);
        let back = b.in_units(Units::Nats);
        assert!((back.value - 0.8).abs() <= 1e-15 * 0.8);
    }
}

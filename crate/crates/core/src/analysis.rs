//! Scans of mutual information and non-Gaussianity over partitions,
//! separations and coupling strength, plus the exponential fit and the
//! coherence matching used to compare simulations with measurements.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ensemble::{DataCloud, Partition, PhaseEnsemble};
use crate::error::{Error, Result};
use crate::estimators::{kl_ci, mutual_information_ci, EstimateWithCI, TieMode, DEFAULT_K};
use crate::lsq::{levenberg_marquardt, LsqOptions};
use crate::resampling::JackknifePlan;
use crate::sgsim::{simulate_stages, CoherenceCurve, CoherenceNode, PipelineConfig, PipelineStages, SGParams};

/// Estimator settings shared by every scan point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub k: usize,
    pub ties: TieMode,
    pub plan: JackknifePlan,
    /// Seed of the Gaussian reference sample in relative-entropy scans.
    pub seed: u64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self { k: DEFAULT_K, ties: TieMode::Fail, plan: JackknifePlan::default(), seed: 0 }
    }
}

impl ScanConfig {
    fn mi(&self, cloud: &DataCloud) -> Result<EstimateWithCI> {
        mutual_information_ci(cloud, self.k, self.ties, &self.plan)
    }

    fn meta(&self) -> BTreeMap<String, Value> {
        let mut m = BTreeMap::new();
        m.insert("k".into(), self.k.into());
        m.insert("jackknife".into(), serde_json::to_value(self.plan).expect("plain struct"));
        m.insert("ties".into(), serde_json::to_value(self.ties).expect("plain enum"));
        m.insert("seed".into(), self.seed.into());
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanKind {
    Volume,
    Area,
    Separation,
    Q,
    Nongauss,
}

impl ScanKind {
    pub fn name(self) -> &'static str {
        match self {
            ScanKind::Volume => "volume",
            ScanKind::Area => "area",
            ScanKind::Separation => "separation",
            ScanKind::Q => "q",
            ScanKind::Nongauss => "nongauss",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub id: usize,
    pub x: f64,
    /// Human-readable position, e.g. `l/L=1/2` or `d=4px`.
    pub descriptor: String,
    pub partition: Option<Partition>,
    /// ⟨cos φ⟩ of the ensemble the row was computed on, where relevant.
    pub coherence: Option<f64>,
    pub estimate: EstimateWithCI,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub scan_kind: ScanKind,
    /// Meaning and unit of `x`.
    pub x_name: String,
    pub rows: Vec<ScanRow>,
    pub meta: BTreeMap<String, Value>,
}

impl ScanResult {
    pub fn xs(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.x).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.estimate.value).collect()
    }

    pub fn stderrs(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.estimate.stderr).collect()
    }

    /// Row with the largest estimate.
    pub fn peak(&self) -> Option<&ScanRow> {
        self.rows.iter().max_by(|a, b| a.estimate.value.total_cmp(&b.estimate.value))
    }
}

fn provenance(ensemble: &PhaseEnsemble, cfg: &ScanConfig) -> BTreeMap<String, Value> {
    let mut m = cfg.meta();
    m.insert("ensemble".into(), serde_json::to_value(ensemble.meta()).expect("plain struct"));
    m.insert("n_shots".into(), ensemble.n_shots().into());
    m.insert("n_pixels".into(), ensemble.n_pixels().into());
    m
}

/// MI across a single boundary swept through the grid: `A = 1..b`, `B` the
/// rest, for `b = 1..N_z-1`. `x` is the volume fraction b/N_z.
pub fn volume_scan(ensemble: &PhaseEnsemble, cfg: &ScanConfig) -> Result<ScanResult> {
    let n = ensemble.n_pixels();
    if n < 2 {
        return Err(Error::InvalidParameter("volume scan needs at least 2 pixels".into()));
    }
    let rows = (1..n)
        .map(|b| {
            let p = Partition::contiguous(b, n)?;
            let estimate = cfg.mi(&ensemble.build_cloud(&p)?)?;
            Ok(ScanRow {
                id: b - 1,
                x: b as f64 / n as f64,
                descriptor: format!("l/L={b}/{n}"),
                partition: Some(p),
                coherence: None,
                estimate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScanResult { scan_kind: ScanKind::Volume, x_name: "l/L".into(), rows, meta: provenance(ensemble, cfg) })
}

fn combinations(pool: &[usize], size: usize) -> Vec<Vec<usize>> {
    if size == 0 {
        return vec![Vec::new()];
    }
    if pool.len() < size {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (i, &first) in pool.iter().enumerate() {
        for mut rest in combinations(&pool[i + 1..], size - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Every unordered pair of disjoint pixel sets of size `volume`, with the
/// set holding the lowest pixel labeled A. Sorted by boundary count.
pub fn area_partitions(n: usize, volume: usize) -> Result<Vec<Partition>> {
    if volume == 0 || 2 * volume > n {
        return Err(Error::VolumeTooLarge { volume, n });
    }
    let all: Vec<usize> = (0..n).collect();
    let mut parts = Vec::new();
    for a in combinations(&all, volume) {
        let rest: Vec<usize> = all.iter().copied().filter(|x| !a.contains(x)).collect();
        for b in combinations(&rest, volume) {
            if b[0] > a[0] {
                parts.push(Partition::new(a.clone(), b)?);
            }
        }
    }
    parts.sort_by_key(|p| p.boundary_count());
    Ok(parts)
}

/// MI for every split into two subsystems of `volume` pixels, against the
/// number of A–B boundaries.
pub fn area_scan(ensemble: &PhaseEnsemble, volume: usize, cfg: &ScanConfig) -> Result<ScanResult> {
    let parts = area_partitions(ensemble.n_pixels(), volume)?;
    let rows = parts
        .into_iter()
        .enumerate()
        .map(|(id, p)| {
            let estimate = cfg.mi(&ensemble.build_cloud(&p)?)?;
            Ok(ScanRow {
                id,
                x: p.boundary_count() as f64,
                descriptor: p.label(),
                partition: Some(p),
                coherence: None,
                estimate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut meta = provenance(ensemble, cfg);
    meta.insert("volume".into(), volume.into());
    Ok(ScanResult { scan_kind: ScanKind::Area, x_name: "boundary_count".into(), rows, meta })
}

/// MI between two blocks of `block` fine pixels, each collapsed to its mean,
/// separated by `d = 0..N_z-2·block` pixels and placed symmetrically about
/// the center. `x` is d in µm.
pub fn separation_scan(fine: &PhaseEnsemble, block: usize, cfg: &ScanConfig) -> Result<ScanResult> {
    let n = fine.n_pixels();
    if block == 0 || 2 * block > n {
        return Err(Error::BlockTooLarge { block, n });
    }
    let length = fine.extent();
    let rows = (0..=n - 2 * block)
        .map(|d| {
            let start = (n - 2 * block - d) / 2;
            let a = start..start + block;
            let b = start + block + d..start + 2 * block + d;
            let cloud = fine.block_means(&[a.clone(), b.clone()])?.build_cloud(&Partition::new([0], [1])?)?;
            let estimate = cfg.mi(&cloud)?;
            let dist = d as f64 * fine.dz();
            Ok(ScanRow {
                id: d,
                x: dist,
                descriptor: format!("d={d}px d/L={:.4} A={}..{} B={}..{}", dist / length, a.start + 1, a.end, b.start + 1, b.end),
                partition: None,
                coherence: None,
                estimate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut meta = provenance(fine, cfg);
    meta.insert("block".into(), block.into());
    Ok(ScanResult { scan_kind: ScanKind::Separation, x_name: "d_um".into(), rows, meta })
}

/// Fit of `a·exp(-d/ℓ) + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub a: f64,
    pub b: f64,
    pub ell_fit: f64,
    /// Covariance of (a, ℓ, b).
    pub covariance: [[f64; 3]; 3],
    pub residual_norm: f64,
    pub converged: bool,
}

impl ExpFit {
    pub fn stderr_a(&self) -> f64 {
        self.covariance[0][0].sqrt()
    }

    pub fn stderr_ell(&self) -> f64 {
        self.covariance[1][1].sqrt()
    }

    pub fn stderr_b(&self) -> f64 {
        self.covariance[2][2].sqrt()
    }

    pub fn eval(&self, d: f64) -> f64 {
        self.a * (-d / self.ell_fit).exp() + self.b
    }
}

/// Weighted least-squares fit of `a·exp(-x/ℓ) + b` with weights 1/se².
/// Zero or missing errors get unit weight.
pub fn fit_exponential(x: &[f64], y: &[f64], se: &[f64]) -> Result<ExpFit> {
    let n = x.len();
    if n < 4 || y.len() != n || se.len() != n {
        return Err(Error::InsufficientSamples { needed: 4, available: n.min(y.len()).min(se.len()) });
    }
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
    let (xlo, xhi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
    if hi - lo <= f64::EPSILON * hi.abs().max(lo.abs()).max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateData("all values equal".into()));
    }
    if !(xhi > xlo) {
        return Err(Error::DegenerateData("all positions equal".into()));
    }
    let w: Vec<f64> = se.iter().map(|s| if *s > 0.0 && s.is_finite() { 1.0 / s } else { 1.0 }).collect();
    let start = [hi - lo, (xhi - xlo) / 3.0, lo];
    let sol = levenberg_marquardt(&start, &LsqOptions::default(), |p| {
        let (a, ell, b) = (p[0], p[1], p[2]);
        if !(ell > 0.0) {
            return None;
        }
        let mut r = DVector::zeros(n);
        let mut j = DMatrix::zeros(n, 3);
        for i in 0..n {
            let e = (-x[i] / ell).exp();
            r[i] = w[i] * (a * e + b - y[i]);
            j[(i, 0)] = w[i] * e;
            j[(i, 1)] = w[i] * a * e * x[i] / (ell * ell);
            j[(i, 2)] = w[i];
        }
        Some((r, j))
    })?;
    let c = &sol.covariance;
    let covariance = [[c[(0, 0)], c[(0, 1)], c[(0, 2)]], [c[(1, 0)], c[(1, 1)], c[(1, 2)]], [c[(2, 0)], c[(2, 1)], c[(2, 2)]]];
    Ok(ExpFit {
        a: sol.params[0],
        ell_fit: sol.params[1],
        b: sol.params[2],
        covariance,
        residual_norm: sol.residual_norm,
        converged: sol.converged,
    })
}

/// [`fit_exponential`] on the rows of a separation scan.
pub fn fit_scan(scan: &ScanResult) -> Result<ExpFit> {
    fit_exponential(&scan.xs(), &scan.values(), &scan.stderrs())
}

/// Weighted log-log regression of MI on boundary count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeTest {
    pub slope: f64,
    pub stderr: f64,
    /// One-sided 95 % upper bound, `slope + 1.645·stderr`.
    pub upper95: f64,
}

impl SlopeTest {
    pub fn sublinear(&self) -> bool {
        self.upper95 < 1.0
    }
}

/// Fits `ln MI = c + s·ln(boundary_count)` over an area scan with weights
/// from the relative MI errors. The slope error is inflated by the reduced
/// χ² when the scatter exceeds the error bars.
pub fn area_slope(scan: &ScanResult) -> Result<SlopeTest> {
    let pts: Vec<(f64, f64, f64)> = scan
        .rows
        .iter()
        .filter(|r| r.estimate.value > 0.0 && r.x > 0.0)
        .map(|r| {
            let rel = (r.estimate.stderr / r.estimate.value).max(1e-12);
            (r.x.ln(), r.estimate.value.ln(), 1.0 / (rel * rel))
        })
        .collect();
    let distinct = pts.iter().map(|p| p.0.to_bits()).collect::<std::collections::BTreeSet<_>>().len();
    if distinct < 2 || pts.len() < 3 {
        return Err(Error::DegenerateData("need positive MI at two or more boundary counts".into()));
    }
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let my = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let chi2: f64 = pts.iter().map(|p| p.2 * (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
    let red = (chi2 / (pts.len() - 2) as f64).max(1.0);
    let stderr = (red / sxx).sqrt();
    Ok(SlopeTest { slope, stderr, upper95: slope + 1.645 * stderr })
}

/// MI between the last pixel and the remaining ones, one row per ensemble.
/// `x` is q.
pub fn q_scan(ensembles: &[(f64, &PhaseEnsemble)], cfg: &ScanConfig) -> Result<ScanResult> {
    let rows = ensembles
        .iter()
        .enumerate()
        .map(|(id, (q, e))| {
            let n = e.n_pixels();
            let p = Partition::new(0..n - 1, [n - 1])?;
            let estimate = cfg.mi(&e.build_cloud(&p)?)?;
            Ok(ScanRow { id, x: *q, descriptor: format!("q={q}"), partition: Some(p), coherence: Some(e.coherence()), estimate })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut meta = cfg.meta();
    if let Some((_, e)) = ensembles.first() {
        meta.insert("ensemble".into(), serde_json::to_value(e.meta()).expect("plain struct"));
    }
    Ok(ScanResult { scan_kind: ScanKind::Q, x_name: "q".into(), rows, meta })
}

/// Relative entropy to the nearest Gaussian of the full pixel cloud, one row
/// per ensemble. `x` is ⟨cos φ⟩; `q` values go into the descriptor.
pub fn nongauss_scan(ensembles: &[(f64, &PhaseEnsemble)], cfg: &ScanConfig) -> Result<ScanResult> {
    let rows = ensembles
        .iter()
        .enumerate()
        .map(|(id, (q, e))| {
            let cloud = DataCloud::single(e.samples().to_vec(), e.n_shots(), e.n_pixels())?;
            let estimate = kl_ci(&cloud, cfg.k, cfg.seed, cfg.ties, &cfg.plan)?;
            let c = e.coherence();
            Ok(ScanRow { id, x: c, descriptor: format!("q={q}"), partition: None, coherence: Some(c), estimate })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut meta = cfg.meta();
    if let Some((_, e)) = ensembles.first() {
        meta.insert("ensemble".into(), serde_json::to_value(e.meta()).expect("plain struct"));
    }
    Ok(ScanResult { scan_kind: ScanKind::Nongauss, x_name: "coherence".into(), rows, meta })
}

/// True when every step between consecutive rows decreases by more than
/// 1.96 combined standard errors.
pub fn strictly_decreasing(scan: &ScanResult) -> bool {
    scan.rows.windows(2).all(|w| {
        let (a, b) = (&w[0].estimate, &w[1].estimate);
        a.value - b.value > 1.96 * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt()
    })
}

/// Simulated pipeline outputs over a q grid at fixed λ_T.
#[derive(Debug, Clone)]
pub struct SimulatedSweep {
    pub lambda_t: f64,
    pub nodes: Vec<SweepNode>,
}

#[derive(Debug, Clone)]
pub struct SweepNode {
    pub q: f64,
    pub coherence: EstimateWithCI,
    pub stages: PipelineStages,
}

impl SimulatedSweep {
    /// Simulates every q with the same seed.
    pub fn run(
        lambda_t: f64,
        q_grid: &[f64],
        n_samples: usize,
        seed: u64,
        pipeline: &PipelineConfig,
        plan: &JackknifePlan,
    ) -> Result<Self> {
        let nodes = q_grid
            .iter()
            .map(|&q| {
                let params = SGParams::from_lengths(lambda_t, q)?;
                let stages = simulate_stages(&params, n_samples, seed, pipeline)?;
                Ok(SweepNode { q, coherence: stages.coarse.coherence_factor(plan)?, stages })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { lambda_t, nodes })
    }

    pub fn curve(&self) -> Result<CoherenceCurve> {
        CoherenceCurve::new(
            self.lambda_t,
            self.nodes.iter().map(|n| CoherenceNode { q: n.q, coherence: n.coherence.clone() }).collect(),
        )
    }

    /// Evaluates `quantity` at every node and interpolates it to
    /// `target ± target_se` in coherence.
    pub fn match_quantity<F>(&self, target: f64, target_se: f64, quantity: F) -> Result<EstimateWithCI>
    where
        F: Fn(&PipelineStages) -> Result<EstimateWithCI>,
    {
        let table = self
            .nodes
            .iter()
            .map(|n| Ok((n.coherence.clone(), quantity(&n.stages)?)))
            .collect::<Result<Vec<_>>>()?;
        match_simulation(target, target_se, &table)
    }
}

/// Linear interpolation of a simulated quantity to a target coherence.
///
/// `table` pairs each node's coherence with the quantity evaluated there, in
/// order of increasing q. The error adds in quadrature the interpolated
/// jackknife error of the quantity and the coherence errors of target and
/// nodes carried through the local slope.
pub fn match_simulation(target: f64, target_se: f64, table: &[(EstimateWithCI, EstimateWithCI)]) -> Result<EstimateWithCI> {
    if table.is_empty() {
        return Err(Error::InvalidParameter("empty simulation table".into()));
    }
    let mut rows: Vec<&(EstimateWithCI, EstimateWithCI)> = table.iter().collect();
    rows.sort_by(|a, b| a.0.value.total_cmp(&b.0.value));
    let (lo, hi) = (rows[0].0.value, rows[rows.len() - 1].0.value);
    if !(target >= lo && target <= hi) {
        return Err(Error::OutOfRange { value: target, lo, hi });
    }
    if let Some(hit) = rows.iter().find(|r| r.0.value == target) {
        let q = &hit.1;
        let mut out = q.clone();
        // a node hit exactly still carries the target's own uncertainty through the neighboring slope
        let slope = local_slope(&rows, target);
        out.stderr = (q.stderr.powi(2) + (slope * target_se).powi(2)).sqrt();
        out.ci95 = (out.value - 2.0 * out.stderr, out.value + 2.0 * out.stderr);
        return Ok(out.with_method(&format!("{}+coherence-match", q.method)));
    }
    let i = rows.windows(2).position(|w| w[0].0.value <= target && target <= w[1].0.value).expect("target inside range");
    let (c0, c1) = (&rows[i].0, &rows[i + 1].0);
    let (v0, v1) = (&rows[i].1, &rows[i + 1].1);
    let t = (target - c0.value) / (c1.value - c0.value);
    let value = (1.0 - t) * v0.value + t * v1.value;
    let jk = (1.0 - t) * v0.stderr + t * v1.stderr;
    let slope = (v1.value - v0.value) / (c1.value - c0.value);
    let curve_se = (1.0 - t) * c0.stderr + t * c1.stderr;
    let stderr = (jk.powi(2) + (slope * target_se).powi(2) + (slope * curve_se).powi(2)).sqrt();
    let mut out = v0.clone();
    out.value = value;
    out.stderr = stderr;
    out.ci95 = (value - 2.0 * stderr, value + 2.0 * stderr);
    out.n_samples = v0.n_samples.min(v1.n_samples);
    Ok(out.with_method(&format!("{}+coherence-match", v0.method)))
}

fn local_slope(rows: &[&(EstimateWithCI, EstimateWithCI)], c: f64) -> f64 {
    if rows.len() < 2 {
        return 0.0;
    }
    let i = rows.iter().position(|r| r.0.value >= c).unwrap_or(rows.len() - 1).clamp(1, rows.len() - 1);
    let (a, b) = (rows[i - 1], rows[i]);
    let dc = b.0.value - a.0.value;
    if dc > 0.0 {
        (b.1.value - a.1.value) / dc
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::Meta;
    use crate::estimators::Units;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, StandardNormal};

    fn small_cfg() -> ScanConfig {
        ScanConfig { plan: JackknifePlan { repetitions: 50, ..Default::default() }, ..Default::default() }
    }

    /// Gaussian random walk profiles: a Markov chain along z.
    fn walk(n_shots: usize, n: usize, dz: f64, seed: u64) -> PhaseEnsemble {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n_shots)
            .map(|_| {
                let mut x = 0.0;
                (0..n)
                    .map(|_| {
                        let s: f64 = StandardNormal.sample(&mut rng);
                        x += s;
                        x
                    })
                    .collect()
            })
            .collect();
        PhaseEnsemble::new(rows, (0..n).map(|i| i as f64 * dz).collect(), Meta::default()).unwrap()
    }

    fn est(value: f64, stderr: f64) -> EstimateWithCI {
        EstimateWithCI {
            value,
            stderr,
            ci95: (value - 2.0 * stderr, value + 2.0 * stderr),
            units: Units::Nats,
            k: None,
            n_samples: 100,
            method: "test".into(),
        }
    }

    #[test]
    fn area_enumeration_counts() {
        let parts = area_partitions(6, 3).unwrap();
        assert_eq!(parts.len(), 10);
        let counts: Vec<usize> = parts.iter().map(|p| p.boundary_count()).collect();
        // by hand: {123}1 {124}3 {125}3 {126}2 {134}3 {135}5 {136}4 {145}3 {146}4 {156}2
        assert_eq!(counts, vec![1, 2, 2, 3, 3, 3, 3, 4, 4, 5]);
        assert!(parts.iter().all(|p| p.axes_a().contains(&0)));
        assert!(matches!(area_partitions(6, 4), Err(Error::VolumeTooLarge { .. })));
        assert_eq!(area_partitions(4, 1).unwrap().len(), 6);
    }

    #[test]
    fn volume_scan_matches_area_scan_on_contiguous_split() {
        let e = walk(400, 6, 10.0, 1);
        let cfg = small_cfg();
        let v = volume_scan(&e, &cfg).unwrap();
        assert_eq!(v.rows.len(), 5);
        let a = area_scan(&e, 3, &cfg).unwrap();
        let half = a.rows.iter().find(|r| r.x == 1.0).unwrap();
        assert_eq!(half.partition, v.rows[2].partition);
        assert_eq!(half.estimate.value.to_bits(), v.rows[2].estimate.value.to_bits());
        assert_eq!(half.estimate.stderr.to_bits(), v.rows[2].estimate.stderr.to_bits());
    }

    #[test]
    fn separation_scan_geometry() {
        let e = walk(300, 30, 2.0, 2);
        let s = separation_scan(&e, 5, &small_cfg()).unwrap();
        assert_eq!(s.rows.len(), 21);
        assert_eq!(s.rows.last().unwrap().x, 40.0);
        assert!(matches!(separation_scan(&e, 16, &small_cfg()), Err(Error::BlockTooLarge { .. })));
        // a random walk shares less with a more distant block
        assert!(s.rows[0].estimate.value > s.rows[20].estimate.value);
    }

    #[test]
    fn noiseless_exponential_is_recovered() {
        let x: Vec<f64> = (0..21).map(|i| 2.0 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|d| 0.5 * (-d / 5.0).exp() + 0.02).collect();
        let fit = fit_exponential(&x, &y, &vec![0.01; 21]).unwrap();
        assert!((fit.a / 0.5 - 1.0).abs() < 1e-8, "{fit:?}");
        assert!((fit.ell_fit / 5.0 - 1.0).abs() < 1e-8);
        assert!((fit.b / 0.02 - 1.0).abs() < 1e-8);
        assert!(fit.converged);
    }

    #[test]
    fn noisy_exponential_within_three_sigma() {
        let x: Vec<f64> = (0..21).map(|i| 2.0 * i as f64).collect();
        let mut fails = 0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = x
                .iter()
                .map(|d| {
                    let t = 0.5 * (-d / 5.0).exp() + 0.02;
                    t + Normal::new(0.0, 0.01 * t).unwrap().sample(&mut rng)
                })
                .collect();
            let se: Vec<f64> = x.iter().map(|d| 0.01 * (0.5 * (-d / 5.0).exp() + 0.02)).collect();
            let fit = fit_exponential(&x, &y, &se).unwrap();
            let ok = (fit.a - 0.5).abs() < 3.0 * fit.stderr_a()
                && (fit.ell_fit - 5.0).abs() < 3.0 * fit.stderr_ell()
                && (fit.b - 0.02).abs() < 3.0 * fit.stderr_b();
            fails += usize::from(!ok);
        }
        assert!(fails <= 1, "{fails} of 20 outside 3 sigma");
    }

    #[test]
    fn flat_data_is_degenerate() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert!(matches!(fit_exponential(&x, &[0.3; 5], &[0.01; 5]), Err(Error::DegenerateData(_))));
        assert!(fit_exponential(&x[..3], &[0.3, 0.2, 0.1], &[0.01; 3]).is_err());
    }

    #[test]
    fn slope_test_detects_linear_and_flat() {
        let mk = |vals: &[(f64, f64)]| ScanResult {
            scan_kind: ScanKind::Area,
            x_name: "boundary_count".into(),
            rows: vals
                .iter()
                .enumerate()
                .map(|(id, &(x, v))| ScanRow { id, x, descriptor: String::new(), partition: None, coherence: None, estimate: est(v, 0.01 * v) })
                .collect(),
            meta: BTreeMap::new(),
        };
        let linear = area_slope(&mk(&[(1.0, 0.1), (2.0, 0.2), (3.0, 0.3), (4.0, 0.4), (5.0, 0.5)])).unwrap();
        assert!((linear.slope - 1.0).abs() < 1e-9 && !linear.sublinear());
        let sqrt = area_slope(&mk(&[(1.0, 0.1), (2.0, 0.1414), (3.0, 0.1732), (4.0, 0.2), (5.0, 0.2236)])).unwrap();
        assert!((sqrt.slope - 0.5).abs() < 1e-3 && sqrt.sublinear());
    }

    #[test]
    fn matching_interpolates_and_hits_nodes() {
        let table = vec![(est(0.2, 0.01), est(1.0, 0.1)), (est(0.5, 0.01), est(0.4, 0.1)), (est(0.8, 0.01), est(0.1, 0.05))];
        let at = match_simulation(0.5, 0.0, &table).unwrap();
        assert_eq!(at.value, 0.4);
        let mid = match_simulation(0.35, 0.0, &table).unwrap();
        assert!((mid.value - 0.7).abs() < 1e-12);
        assert!(mid.stderr >= 0.1);
        assert!(matches!(match_simulation(0.99, 0.0, &table), Err(Error::OutOfRange { .. })));
        let wider = match_simulation(0.35, 0.05, &table).unwrap();
        assert!(wider.stderr > mid.stderr);
    }

    #[test]
    fn decreasing_test_uses_combined_errors() {
        let mk = |vals: &[(f64, f64)]| ScanResult {
            scan_kind: ScanKind::Q,
            x_name: "q".into(),
            rows: vals
                .iter()
                .enumerate()
                .map(|(id, &(v, s))| ScanRow { id, x: id as f64, descriptor: String::new(), partition: None, coherence: None, estimate: est(v, s) })
                .collect(),
            meta: BTreeMap::new(),
        };
        assert!(strictly_decreasing(&mk(&[(1.0, 0.01), (0.8, 0.01), (0.5, 0.01)])));
        assert!(!strictly_decreasing(&mk(&[(1.0, 0.1), (0.9, 0.1)])));
    }
}

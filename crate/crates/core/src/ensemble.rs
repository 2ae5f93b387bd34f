//! Phase-profile ensembles and the preprocessing chain applied before any
//! estimator sees the data.
//!
//! An ensemble is an `N_s × N_z` matrix of relative phases (radians) on a
//! uniform spatial grid (µm). All operations are pure: they return new
//! ensembles and append a line to the provenance history.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::estimators::EstimateWithCI;
use crate::resampling::{jackknife, JackknifePlan, Resample};

const TWO_PI: f64 = 2.0 * PI;

/// Free-form provenance attached to an ensemble.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    /// Key/value pairs such as `source`, `seed`, simulation parameters.
    pub entries: BTreeMap<String, Value>,
    /// One line per preprocessing stage, in application order.
    pub history: Vec<String>,
}

impl Meta {
    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.entries.insert(key.to_string(), value.into());
        self
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.get(key)
    }

    fn stage(&self, line: String) -> Self {
        let mut m = self.clone();
        m.history.push(line);
        m
    }
}

/// Ensemble of phase profiles sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseEnsemble {
    samples: Vec<f64>,
    n_shots: usize,
    grid: Vec<f64>,
    dz: f64,
    meta: Meta,
}

impl PhaseEnsemble {
    /// Builds an ensemble from rows, validating shape, grid uniformity and
    /// finiteness.
    pub fn new(rows: Vec<Vec<f64>>, grid: Vec<f64>, meta: Meta) -> Result<Self> {
        let n_pix = grid.len();
        let n_shots = rows.len();
        let mut samples = Vec::with_capacity(n_shots * n_pix);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n_pix {
                return Err(Error::InvalidEnsemble(format!(
                    "row {i} has {} pixels, grid has {n_pix}",
                    row.len()
                )));
            }
            samples.extend(row);
        }
        Self::from_flat(samples, n_shots, grid, meta)
    }

    /// Builds an ensemble from a row-major `n_shots × grid.len()` buffer.
    pub fn from_flat(samples: Vec<f64>, n_shots: usize, grid: Vec<f64>, meta: Meta) -> Result<Self> {
        let n_pix = grid.len();
        if n_shots == 0 || n_pix == 0 {
            return Err(Error::InvalidEnsemble("ensemble must have at least one shot and one pixel".into()));
        }
        if samples.len() != n_shots * n_pix {
            return Err(Error::InvalidEnsemble(format!(
                "buffer of {} values does not match {n_shots} x {n_pix}",
                samples.len()
            )));
        }
        if let Some(pos) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidEnsemble(format!(
                "non-finite value at shot {}, pixel {}",
                pos / n_pix,
                pos % n_pix
            )));
        }
        if grid.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidEnsemble("non-finite grid point".into()));
        }
        let dz = if n_pix > 1 { grid[1] - grid[0] } else { 1.0 };
        if n_pix > 1 {
            if dz <= 0.0 {
                return Err(Error::InvalidEnsemble("grid must be strictly increasing".into()));
            }
            for w in grid.windows(2) {
                let step = w[1] - w[0];
                if ((step - dz) / dz).abs() > 1e-9 {
                    return Err(Error::InvalidEnsemble(format!(
                        "grid is not uniform: step {step} vs {dz}"
                    )));
                }
            }
        }
        Ok(Self { samples, n_shots, grid, dz, meta })
    }

    /// Single-pixel ensembles need an explicit pitch.
    pub fn with_pitch(mut self, dz: f64) -> Self {
        if self.grid.len() == 1 {
            self.dz = dz;
        }
        self
    }

    pub fn n_shots(&self) -> usize {
        self.n_shots
    }

    pub fn n_pixels(&self) -> usize {
        self.grid.len()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn dz(&self) -> f64 {
        self.dz
    }

    pub fn meta(&self) -> &Meta {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut Meta {
        &mut self.meta
    }

    /// Row-major sample buffer.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn row(&self, shot: usize) -> &[f64] {
        let n = self.n_pixels();
        &self.samples[shot * n..(shot + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks_exact(self.n_pixels())
    }

    /// Physical extent covered by the pixels, `N_z · dz`.
    pub fn extent(&self) -> f64 {
        self.n_pixels() as f64 * self.dz
    }

    pub(crate) fn map_rows(&self, stage: String, grid: Vec<f64>, dz: f64, f: impl Fn(&[f64], &mut Vec<f64>)) -> Self {
        let mut out = Vec::with_capacity(self.n_shots * grid.len());
        for row in self.rows() {
            f(row, &mut out);
        }
        Self {
            samples: out,
            n_shots: self.n_shots,
            grid,
            dz,
            meta: self.meta.stage(stage),
        }
    }

    /// Shifts every profile by a multiple of 2π so its spatial mean lies in
    /// `[0, 2π)`.
    pub fn reduce_global_offset(&self) -> Self {
        self.reduce_global_offset_from(0.0)
    }

    /// Shifts every profile by a multiple of 2π so its spatial mean lies in
    /// `[origin, origin + 2π)`.
    ///
    /// The sine-Gordon pipeline uses `origin = -π`, which centers the window
    /// on the potential minimum at φ = 0.
    pub fn reduce_global_offset_from(&self, origin: f64) -> Self {
        self.map_rows(
            format!("reduce_global_offset(origin={origin})"),
            self.grid.clone(),
            self.dz,
            |row, out| {
                let mean = row.iter().sum::<f64>() / row.len() as f64;
                let turns = ((mean - origin) / TWO_PI).floor();
                if turns == 0.0 {
                    out.extend_from_slice(row);
                } else {
                    let shift = turns * TWO_PI;
                    out.extend(row.iter().map(|v| v - shift));
                }
            },
        )
    }

    /// Averages contiguous blocks of `N_z / target` pixels.
    pub fn coarse_grain(&self, target: usize) -> Result<Self> {
        let n = self.n_pixels();
        if target == 0 || n % target != 0 {
            return Err(Error::IndivisibleGrid { n, target });
        }
        let width = n / target;
        let grid: Vec<f64> = self
            .grid
            .chunks_exact(width)
            .map(|c| c.iter().sum::<f64>() / width as f64)
            .collect();
        let mut out = self.map_rows(
            format!("coarse_grain({n}->{target}, factor={width})"),
            grid,
            self.dz * width as f64,
            |row, out| {
                out.extend(row.chunks_exact(width).map(|c| c.iter().sum::<f64>() / width as f64));
            },
        );
        let prior = out.meta.get("coarse_factor").and_then(Value::as_u64).unwrap_or(1);
        out.meta.set("coarse_factor", prior * width as u64);
        Ok(out)
    }

    /// Keeps the centered contiguous block of `round(fraction · N_z)` pixels.
    pub fn select_central(&self, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!("central fraction {fraction} not in (0, 1]")));
        }
        let n = self.n_pixels();
        let keep = (fraction * n as f64).round() as usize;
        if keep == 0 {
            return Err(Error::EmptySelection { fraction, n });
        }
        self.select_range((n - keep) / 2, keep)
    }

    /// Keeps pixels `start..start + len`.
    pub fn select_range(&self, start: usize, len: usize) -> Result<Self> {
        let n = self.n_pixels();
        if len == 0 || start + len > n {
            return Err(Error::InvalidParameter(format!(
                "pixel range {start}..{} outside 0..{n}",
                start + len
            )));
        }
        Ok(self.map_rows(
            format!("select_range({start}..{})", start + len),
            self.grid[start..start + len].to_vec(),
            self.dz,
            |row, out| out.extend_from_slice(&row[start..start + len]),
        ))
    }

    /// Mean of `cos φ` over all shots and pixels.
    pub fn coherence(&self) -> f64 {
        self.samples.iter().map(|v| v.cos()).sum::<f64>() / self.samples.len() as f64
    }

    /// ⟨cos φ⟩ with a delete-d jackknife confidence interval over shots.
    pub fn coherence_factor(&self, plan: &JackknifePlan) -> Result<EstimateWithCI> {
        let per_shot: Vec<f64> = self
            .rows()
            .map(|r| r.iter().map(|v| v.cos()).sum::<f64>() / r.len() as f64)
            .collect();
        let est = jackknife(&per_shot, plan, 1, |s: &Vec<f64>| Ok(s.iter().sum::<f64>() / s.len() as f64))?;
        Ok(est.with_method("coherence"))
    }

    /// Data cloud with one point per shot; coordinates are the phases at the
    /// partition's pixels, A-axes first.
    pub fn build_cloud(&self, partition: &Partition) -> Result<DataCloud> {
        partition.check_against(self.n_pixels())?;
        let cols: Vec<usize> = partition.axes_a().iter().chain(partition.axes_b()).copied().collect();
        let mut points = Vec::with_capacity(self.n_shots * cols.len());
        for row in self.rows() {
            points.extend(cols.iter().map(|&c| row[c]));
        }
        DataCloud::new(points, self.n_shots, partition.axes_a().len(), partition.axes_b().len())
    }

    /// Rows permuted (or subset) by shot index.
    pub fn select_shots(&self, shots: &[usize]) -> Self {
        let n = self.n_pixels();
        let mut samples = Vec::with_capacity(shots.len() * n);
        for &s in shots {
            samples.extend_from_slice(self.row(s));
        }
        Self {
            samples,
            n_shots: shots.len(),
            grid: self.grid.clone(),
            dz: self.dz,
            meta: self.meta.clone(),
        }
    }

    /// Each profile replaced by block means over arbitrary pixel blocks; used
    /// to collapse contiguous regions into single coordinates.
    pub fn block_means(&self, blocks: &[std::ops::Range<usize>]) -> Result<Self> {
        let n = self.n_pixels();
        for b in blocks {
            if b.is_empty() || b.end > n {
                return Err(Error::InvalidParameter(format!("block {b:?} outside 0..{n}")));
            }
        }
        let grid: Vec<f64> = blocks
            .iter()
            .map(|b| self.grid[b.clone()].iter().sum::<f64>() / b.len() as f64)
            .collect();
        let mut samples = Vec::with_capacity(self.n_shots * blocks.len());
        for row in self.rows() {
            samples.extend(blocks.iter().map(|b| row[b.clone()].iter().sum::<f64>() / b.len() as f64));
        }
        Ok(Self {
            samples,
            n_shots: self.n_shots,
            dz: if grid.len() > 1 { grid[1] - grid[0] } else { self.dz },
            grid,
            meta: self.meta.stage(format!("block_means({blocks:?})")),
        })
    }
}

impl Resample for PhaseEnsemble {
    fn len(&self) -> usize {
        self.n_shots
    }

    fn subset(&self, idx: &[usize]) -> Self {
        self.select_shots(idx)
    }
}

/// Unwraps a profile of wrapped phases so successive differences lie in
/// `(-π, π]`. The first element is unchanged.
pub fn unwrap_profile(raw: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(raw.len());
    let mut offset = 0.0;
    for (j, &v) in raw.iter().enumerate() {
        if j > 0 {
            let d = v - raw[j - 1];
            // raw differences are in (-2π, 2π); fold into (-π, π]
            if d > PI {
                offset -= TWO_PI;
            } else if d <= -PI {
                offset += TWO_PI;
            }
        }
        out.push(v + offset);
    }
    out
}

/// Wraps a phase into `(-π, π]`.
pub fn wrap_phase(v: f64) -> f64 {
    let w = v - TWO_PI * ((v + PI) / TWO_PI).floor();
    // w in [-π, π); map the left endpoint to the right one
    if w <= -PI {
        w + TWO_PI
    } else {
        w
    }
}

/// Split of coarse pixels into subsystems A and B. Indices are zero-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Partition {
    axes_a: Vec<usize>,
    axes_b: Vec<usize>,
    boundary_count: usize,
}

impl Partition {
    pub fn new(a: impl IntoIterator<Item = usize>, b: impl IntoIterator<Item = usize>) -> Result<Self> {
        let a: BTreeSet<usize> = a.into_iter().collect();
        let b: BTreeSet<usize> = b.into_iter().collect();
        if a.is_empty() || b.is_empty() {
            return Err(Error::InvalidPartition("both subsystems must be nonempty".into()));
        }
        if let Some(x) = a.intersection(&b).next() {
            return Err(Error::InvalidPartition(format!("pixel {x} assigned to both A and B")));
        }
        let boundary_count = boundary_count(&a, &b);
        Ok(Self {
            axes_a: a.into_iter().collect(),
            axes_b: b.into_iter().collect(),
            boundary_count,
        })
    }

    /// `A = 0..split`, `B = split..n`.
    pub fn contiguous(split: usize, n: usize) -> Result<Self> {
        Self::new(0..split, split..n)
    }

    pub fn axes_a(&self) -> &[usize] {
        &self.axes_a
    }

    pub fn axes_b(&self) -> &[usize] {
        &self.axes_b
    }

    /// Adjacent pixel pairs with one member in A and the other in B.
    pub fn boundary_count(&self) -> usize {
        self.boundary_count
    }

    pub fn swapped(&self) -> Self {
        Self {
            axes_a: self.axes_b.clone(),
            axes_b: self.axes_a.clone(),
            boundary_count: self.boundary_count,
        }
    }

    pub fn check_against(&self, n_pixels: usize) -> Result<()> {
        if let Some(&x) = self.axes_a.iter().chain(&self.axes_b).find(|&&x| x >= n_pixels) {
            return Err(Error::InvalidPartition(format!("pixel {x} outside grid of {n_pixels}")));
        }
        let recomputed = boundary_count(
            &self.axes_a.iter().copied().collect(),
            &self.axes_b.iter().copied().collect(),
        );
        if recomputed != self.boundary_count {
            return Err(Error::InvalidPartition("stored boundary count is stale".into()));
        }
        Ok(())
    }

    /// One-based labels for display, e.g. `A={1,2,3} B={4,5,6}`.
    pub fn label(&self) -> String {
        let fmt = |v: &[usize]| v.iter().map(|x| (x + 1).to_string()).collect::<Vec<_>>().join(",");
        format!("A={{{}}} B={{{}}}", fmt(&self.axes_a), fmt(&self.axes_b))
    }
}

fn boundary_count(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> usize {
    a.iter()
        .map(|&x| usize::from(b.contains(&(x + 1))) + usize::from(x > 0 && b.contains(&(x - 1))))
        .sum()
}

/// `N_s` points in `D = D_A + D_B` dimensions, A-axes first.
#[derive(Debug, Clone, PartialEq)]
pub struct DataCloud {
    points: Vec<f64>,
    n: usize,
    dim_a: usize,
    dim_b: usize,
    scale: Vec<f64>,
}

/// Which subspace of a cloud a query is restricted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subspace {
    A,
    B,
    Joint,
}

impl DataCloud {
    pub fn new(points: Vec<f64>, n: usize, dim_a: usize, dim_b: usize) -> Result<Self> {
        let d = dim_a + dim_b;
        if d == 0 || n == 0 {
            return Err(Error::InvalidParameter("empty data cloud".into()));
        }
        if points.len() != n * d {
            return Err(Error::InvalidParameter(format!(
                "{} coordinates do not form {n} points of dimension {d}",
                points.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite coordinate".into()));
        }
        let scale = (0..d)
            .map(|c| {
                let (lo, hi) = (0..n).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
                    let v = points[i * d + c];
                    (lo.min(v), hi.max(v))
                });
                hi - lo
            })
            .collect();
        Ok(Self { points, n, dim_a, dim_b, scale })
    }

    /// Cloud with all axes in subsystem A; used by single-set estimators.
    pub fn single(points: Vec<f64>, n: usize, dim: usize) -> Result<Self> {
        Self::new(points, n, dim, 0)
    }

    /// Cloud from two column blocks given as row-major buffers.
    pub fn from_parts(a: &[f64], dim_a: usize, b: &[f64], dim_b: usize) -> Result<Self> {
        if dim_a == 0 || dim_b == 0 || a.len() % dim_a != 0 || b.len() % dim_b != 0 || a.len() / dim_a != b.len() / dim_b {
            return Err(Error::InvalidParameter("mismatched cloud parts".into()));
        }
        let n = a.len() / dim_a;
        let mut points = Vec::with_capacity(n * (dim_a + dim_b));
        for i in 0..n {
            points.extend_from_slice(&a[i * dim_a..(i + 1) * dim_a]);
            points.extend_from_slice(&b[i * dim_b..(i + 1) * dim_b]);
        }
        Self::new(points, n, dim_a, dim_b)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim_a + self.dim_b
    }

    pub fn dim_a(&self) -> usize {
        self.dim_a
    }

    pub fn dim_b(&self) -> usize {
        self.dim_b
    }

    /// Per-axis data range.
    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.points[i * d..(i + 1) * d]
    }

    /// Column range of a subspace.
    pub fn axes(&self, sub: Subspace) -> std::ops::Range<usize> {
        match sub {
            Subspace::A => 0..self.dim_a,
            Subspace::B => self.dim_a..self.dim(),
            Subspace::Joint => 0..self.dim(),
        }
    }

    /// Row-major copy of one subspace.
    pub fn project(&self, sub: Subspace) -> Vec<f64> {
        let r = self.axes(sub);
        (0..self.n).flat_map(|i| self.point(i)[r.clone()].iter().copied()).collect::<Vec<_>>()
    }

    /// Same points with the A and B axis groups exchanged.
    pub fn swapped(&self) -> Self {
        let a = self.project(Subspace::A);
        let b = self.project(Subspace::B);
        Self::from_parts(&b, self.dim_b, &a, self.dim_a).expect("swap of a valid cloud")
    }

    /// Adds seeded uniform noise of amplitude `1e-10 ×` per-axis range
    /// (`1e-10 × max(|x|, 1)` on constant axes).
    pub fn jittered(&self, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim();
        let mut points = self.points.clone();
        for (idx, v) in points.iter_mut().enumerate() {
            let range = self.scale[idx % d];
            let amp = 1e-10 * if range > 0.0 { range } else { v.abs().max(1.0) };
            *v += amp * rng.gen_range(-1.0..1.0);
        }
        Self { points, ..self.clone() }
    }
}

impl Resample for DataCloud {
    fn len(&self) -> usize {
        self.n
    }

    fn subset(&self, idx: &[usize]) -> Self {
        let d = self.dim();
        let mut points = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            points.extend_from_slice(self.point(i));
        }
        Self::new(points, idx.len(), self.dim_a, self.dim_b).expect("subset of a valid cloud")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ens(rows: Vec<Vec<f64>>) -> PhaseEnsemble {
        let n = rows[0].len();
        PhaseEnsemble::new(rows, (0..n).map(|j| j as f64).collect(), Meta::default()).unwrap()
    }

    #[test]
    fn unwrap_examples() {
        assert_eq!(unwrap_profile(&[0.0, 0.1, 0.2]), vec![0.0, 0.1, 0.2]);
        let u = unwrap_profile(&[0.0, 3.0, -3.0]);
        assert_abs_diff_eq!(u[2], -3.0 + TWO_PI, epsilon = 1e-12);
        assert_abs_diff_eq!(u[2], 3.2832, epsilon = 1e-4);
        let u = unwrap_profile(&[3.1, -3.1]);
        assert_abs_diff_eq!(u[1], 3.1832, epsilon = 1e-4);
    }

    #[test]
    fn rejects_ragged_and_nonuniform() {
        let g = vec![0.0, 1.0, 2.0];
        assert!(PhaseEnsemble::new(vec![vec![0.0; 2]], g.clone(), Meta::default()).is_err());
        assert!(PhaseEnsemble::new(vec![vec![0.0; 3]], vec![0.0, 1.0, 2.5], Meta::default()).is_err());
        assert!(PhaseEnsemble::new(vec![vec![0.0, f64::NAN, 0.0]], g.clone(), Meta::default()).is_err());
        assert!(PhaseEnsemble::new(vec![], g, Meta::default()).is_err());
    }

    #[test]
    fn offset_examples() {
        let e = ens(vec![vec![7.0, 7.0], vec![0.5, 0.5], vec![-0.1, -0.1]]);
        let r = e.reduce_global_offset();
        assert_abs_diff_eq!(r.row(0)[0], 7.0 - TWO_PI, epsilon = 1e-12);
        assert_abs_diff_eq!(r.row(0)[0], 0.7168, epsilon = 1e-4);
        assert_eq!(r.row(1), &[0.5, 0.5]);
        assert_abs_diff_eq!(r.row(2)[0], 6.1832, epsilon = 1e-4);
    }

    #[test]
    fn coarse_grain_examples() {
        let e = ens(vec![vec![1.0; 30]]);
        let c = e.coarse_grain(6).unwrap();
        assert_eq!(c.row(0), &[1.0; 6]);
        assert_eq!(c.meta().get("coarse_factor").unwrap(), 5);
        let e = ens(vec![vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]]);
        let c = e.coarse_grain(3).unwrap();
        assert_eq!(c.row(0), &[1.5, 3.5, 5.5]);
        assert_eq!(c.grid(), &[0.5, 2.5, 4.5]);
        assert_eq!(c.dz(), 2.0);
        assert!(matches!(ens(vec![vec![0.0; 30]]).coarse_grain(4), Err(Error::IndivisibleGrid { .. })));
    }

    #[test]
    fn central_selection() {
        let e = ens(vec![(0..60).map(f64::from).collect()]);
        let c = e.select_central(0.5).unwrap();
        assert_eq!(c.n_pixels(), 30);
        // zero-based 15..45 is one-based 16..45
        assert_eq!(c.row(0)[0], 15.0);
        assert_eq!(c.row(0)[29], 44.0);
        assert_eq!(e.select_central(1.0).unwrap().samples(), e.samples());
        let small = ens(vec![vec![0.0; 4]]);
        assert!(matches!(small.select_central(0.1), Err(Error::EmptySelection { .. })));
    }

    #[test]
    fn coherence_of_zero_phases() {
        let e = ens(vec![vec![0.0; 6]; 50]);
        let plan = JackknifePlan { repetitions: 50, ..JackknifePlan::default() };
        let c = e.coherence_factor(&plan).unwrap();
        assert_eq!(c.value, 1.0);
        assert_eq!(c.stderr, 0.0);
    }

    #[test]
    fn coherence_of_uniform_phases() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let rows = (0..2000).map(|_| (0..6).map(|_| rng.gen_range(-PI..PI)).collect()).collect();
        let plan = JackknifePlan { repetitions: 200, ..JackknifePlan::default() };
        let c = ens(rows).coherence_factor(&plan).unwrap();
        assert!(c.value.abs() < 3.0 * c.stderr, "{c:?}");
    }

    #[test]
    fn partitions() {
        let p = Partition::new([0, 1, 2], [3, 4, 5]).unwrap();
        assert_eq!(p.boundary_count(), 1);
        let p = Partition::new([0, 2, 4], [1, 3, 5]).unwrap();
        assert_eq!(p.boundary_count(), 5);
        assert!(matches!(Partition::new([0], [0]), Err(Error::InvalidPartition(_))));
        assert!(Partition::new(Vec::<usize>::new(), [1]).is_err());
        assert_eq!(Partition::new([0, 1, 2], [3, 4, 5]).unwrap().label(), "A={1,2,3} B={4,5,6}");
    }

    #[test]
    fn cloud_columns_follow_partition() {
        let e = ens(vec![vec![10.0, 11.0, 12.0, 13.0, 14.0, 15.0], vec![20.0, 21.0, 22.0, 23.0, 24.0, 25.0]]);
        // one-based A={2}, B={3}
        let c = e.build_cloud(&Partition::new([1], [2]).unwrap()).unwrap();
        assert_eq!(c.dim(), 2);
        assert_eq!(c.point(1), &[21.0, 22.0]);
        let c = e.build_cloud(&Partition::new([2, 0, 1], [5, 3, 4]).unwrap()).unwrap();
        assert_eq!(c.dim(), 6);
        assert_eq!(c.point(0), &[10.0, 11.0, 12.0, 13.0, 14.0, 15.0]);
        let bad = Partition::new([1], [9]).unwrap();
        assert!(matches!(e.build_cloud(&bad), Err(Error::InvalidPartition(_))));
    }

    #[test]
    fn jitter_is_tiny_and_seeded() {
        let c = DataCloud::single(vec![0.0, 1.0, 1.0, 2.0], 4, 1).unwrap();
        let j1 = c.jittered(3);
        let j2 = c.jittered(3);
        assert_eq!(j1, j2);
        assert_ne!(j1.point(1), j1.point(2));
        for (a, b) in c.points().iter().zip(j1.points()) {
            assert!((a - b).abs() <= 2e-10);
        }
        let flat = DataCloud::single(vec![5.0; 3], 3, 1).unwrap().jittered(1);
        assert!(flat.point(0) != flat.point(1) && flat.point(1) != flat.point(2));
    }

    proptest! {
        #[test]
        fn unwrap_then_wrap_is_identity(raw in prop::collection::vec(-PI + 1e-9..=PI, 1..40)) {
            let u = unwrap_profile(&raw);
            prop_assert_eq!(u[0], raw[0]);
            for (j, (&w, &v)) in raw.iter().zip(&u).enumerate() {
                prop_assert!((wrap_phase(v) - w).abs() < 1e-9, "pixel {}", j);
                let k = (v - w) / TWO_PI;
                prop_assert!((k - k.round()).abs() < 1e-9);
            }
            for d in u.windows(2) {
                let diff = d[1] - d[0];
                prop_assert!(diff > -PI - 1e-12 && diff <= PI + 1e-12);
            }
        }

        #[test]
        fn offset_reduction_properties(
            rows in prop::collection::vec(prop::collection::vec(-40.0f64..40.0, 6), 1..20),
        ) {
            let e = ens(rows);
            let r = e.reduce_global_offset();
            let twice = r.reduce_global_offset();
            prop_assert_eq!(twice.samples(), r.samples());
            for (a, b) in e.rows().zip(r.rows()) {
                let mean = b.iter().sum::<f64>() / 6.0;
                prop_assert!((-1e-9..TWO_PI + 1e-9).contains(&mean));
                let shift = a[0] - b[0];
                for (x, y) in a.iter().zip(b) {
                    prop_assert!((x - y - shift).abs() < 1e-9);
                }
            }
            prop_assert!((e.coherence() - r.coherence()).abs() < 1e-12);
            // coarse graining commutes up to 2π per profile
            let c1 = r.coarse_grain(3).unwrap();
            let c2 = e.coarse_grain(3).unwrap().reduce_global_offset();
            for (a, b) in c1.rows().zip(c2.rows()) {
                let k = (a[0] - b[0]) / TWO_PI;
                prop_assert!((k - k.round()).abs() < 1e-9);
                for (x, y) in a.iter().zip(b) {
                    prop_assert!((x - y - (a[0] - b[0])).abs() < 1e-9);
                }
            }
        }
    }
}

//! Command-line arguments. A parsed [`Task`] is also the stored run
//! configuration: it serializes to JSON and `fieldinfo run --config` replays it.

use std::path::PathBuf;

use clap::{Args, Subcommand, ValueEnum};
use fieldinfo::analysis::ScanConfig;
use fieldinfo::estimators::{TieMode, Units};
use fieldinfo::resampling::JackknifePlan;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct Estimation {
    /// Neighbor order.
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Fraction of shots deleted per jackknife replicate.
    #[arg(long = "delete-frac", default_value_t = 0.05)]
    pub delete_frac: f64,
    /// Jackknife replicates.
    #[arg(long, default_value_t = 3000)]
    pub reps: usize,
    /// Break exact ties with tiny seeded noise instead of failing.
    #[arg(long)]
    pub jitter: bool,
    /// Report information in bits instead of nats.
    #[arg(long)]
    pub bits: bool,
}

impl Estimation {
    pub fn plan(&self, seed: u64) -> JackknifePlan {
        JackknifePlan { delete_fraction: self.delete_frac, repetitions: self.reps, seed }
    }

    pub fn ties(&self, seed: u64) -> TieMode {
        if self.jitter {
            TieMode::Jitter(seed)
        } else {
            TieMode::Fail
        }
    }

    pub fn units(&self) -> Units {
        if self.bits {
            Units::Bits
        } else {
            Units::Nats
        }
    }

    pub fn scan_config(&self, seed: u64) -> ScanConfig {
        ScanConfig { k: self.k, ties: self.ties(seed), plan: self.plan(seed), seed }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct Simulation {
    /// Thermal coherence length in µm.
    #[arg(long = "lambda-T", default_value_t = 15.0)]
    pub lambda_t: f64,
    /// Dimensionless q values, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub q: Vec<f64>,
    /// Shots per q.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
}

/// Ensembles for q and non-Gaussianity scans: either files or a fresh
/// simulation.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct Sweep {
    /// Ensemble files; q is read from their metadata.
    #[arg(long = "in", conflicts_with = "q")]
    pub inputs: Vec<PathBuf>,
    #[arg(long = "lambda-T", default_value_t = 15.0)]
    pub lambda_t: f64,
    #[arg(long, value_delimiter = ',')]
    pub q: Vec<f64>,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Central region after PSF and offset reduction.
    Fine,
    /// Coarse-grained output.
    Coarse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    /// Mutual information between the pixel sets A and B.
    Mi,
    /// Relative entropy of all pixels to the nearest Gaussian.
    Kl,
    /// ⟨cos φ⟩.
    Coherence,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "command")]
pub enum Task {
    /// Sample the thermal sine-Gordon ensemble and run the imaging pipeline.
    Simulate {
        #[command(flatten)]
        sim: Simulation,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Stage::Coarse)]
        stage: Stage,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract one phase profile per interferogram.
    FitFringes {
        #[arg(long = "in", required = true)]
        inputs: Vec<PathBuf>,
        /// Keep this central fraction of slices.
        #[arg(long = "central-frac", default_value_t = 1.0)]
        central_frac: f64,
        /// Average down to this many pixels.
        #[arg(long)]
        coarse: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mutual information between two pixel sets.
    EstimateMi {
        #[arg(long = "in")]
        input: PathBuf,
        /// Zero-based pixels of A, e.g. `0-2` or `0,2,4`; default first half.
        #[arg(long)]
        a: Option<String>,
        /// Pixels of B; default the pixels not in A.
        #[arg(long)]
        b: Option<String>,
        #[command(flatten)]
        est: Estimation,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Relative entropy to the nearest Gaussian.
    EstimateKl {
        #[arg(long = "in")]
        input: PathBuf,
        /// Pixels to include; default all.
        #[arg(long)]
        pixels: Option<String>,
        #[command(flatten)]
        est: Estimation,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Volume, area, separation, q and non-Gaussianity scans.
    Scan {
        #[command(subcommand)]
        kind: ScanTask,
    },
    /// Estimate versus sample size, and the effect of doubling the replicates.
    Convergence {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Quantity::Mi)]
        quantity: Quantity,
        #[arg(long)]
        a: Option<String>,
        #[arg(long)]
        b: Option<String>,
        /// Sample sizes; default 100, 250, 500, 1000, 2000, 5000, 10000 up to N_s.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        #[command(flatten)]
        est: Estimation,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Interpolate a simulated quantity to a measured coherence.
    Match {
        #[command(flatten)]
        sim: Simulation,
        /// Measured ⟨cos φ⟩.
        #[arg(long)]
        target: f64,
        #[arg(long = "target-se", default_value_t = 0.0)]
        target_se: f64,
        #[arg(long, value_enum, default_value_t = Quantity::Mi)]
        quantity: Quantity,
        #[arg(long)]
        a: Option<String>,
        #[arg(long)]
        b: Option<String>,
        #[command(flatten)]
        est: Estimation,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "scan")]
pub enum ScanTask {
    /// MI between pixels 1..b and the rest, for every b.
    Volume {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        est: Estimation,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// MI over every split into two equal-size pixel sets.
    Area {
        #[arg(long = "in")]
        input: PathBuf,
        /// Pixels per subsystem; default half the grid.
        #[arg(long)]
        volume: Option<usize>,
        #[command(flatten)]
        est: Estimation,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// MI between two blocks of fine pixels versus their separation.
    Separation {
        #[arg(long = "in")]
        input: PathBuf,
        /// Fine pixels per block.
        #[arg(long, default_value_t = 5)]
        block: usize,
        #[command(flatten)]
        est: Estimation,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// MI between the last pixel and the rest, per q.
    Q {
        #[command(flatten)]
        sweep: Sweep,
        #[command(flatten)]
        est: Estimation,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Relative entropy to the nearest Gaussian versus coherence.
    Nongauss {
        #[command(flatten)]
        sweep: Sweep,
        #[command(flatten)]
        est: Estimation,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Task {
    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("task serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn out(&self) -> Option<&PathBuf> {
        match self {
            Task::Simulate { out, .. } | Task::FitFringes { out, .. } | Task::Convergence { out, .. } => Some(out),
            Task::EstimateMi { out, .. } | Task::EstimateKl { out, .. } | Task::Match { out, .. } => out.as_ref(),
            Task::Scan { kind } => match kind {
                ScanTask::Volume { out, .. }
                | ScanTask::Area { out, .. }
                | ScanTask::Separation { out, .. }
                | ScanTask::Q { out, .. }
                | ScanTask::Nongauss { out, .. } => Some(out),
            },
        }
    }

    pub fn set_out(&mut self, path: PathBuf) {
        match self {
            Task::Simulate { out, .. } | Task::FitFringes { out, .. } | Task::Convergence { out, .. } => *out = path,
            Task::EstimateMi { out, .. } | Task::EstimateKl { out, .. } | Task::Match { out, .. } => *out = Some(path),
            Task::Scan { kind } => match kind {
                ScanTask::Volume { out, .. }
                | ScanTask::Area { out, .. }
                | ScanTask::Separation { out, .. }
                | ScanTask::Q { out, .. }
                | ScanTask::Nongauss { out, .. } => *out = path,
            },
        }
    }
}

/// Parses `0-2,5` style zero-based pixel lists.
pub fn parse_pixels(spec: &str) -> Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |s: &str| s.trim().parse::<usize>().map_err(|_| format!("bad pixel index {s:?}"));
        match part.split_once('-') {
            Some((lo, hi)) => {
                let (lo, hi) = (num(lo)?, num(hi)?);
                if lo > hi {
                    return Err(format!("empty pixel range {part:?}"));
                }
                out.extend(lo..=hi);
            }
            None => out.push(num(part)?),
        }
    }
    if out.is_empty() {
        return Err(format!("no pixels in {spec:?}"));
    }
    Ok(out)
}

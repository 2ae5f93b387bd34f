//! File formats.
//!
//! * Ensembles: `name.csv` with one row per shot and one column per pixel,
//!   plus `name.meta.json` holding the grid, pitch, units and provenance.
//! * Interferograms: `name.csv` with one row per z slice, plus
//!   `name.meta.json` holding the x grid, pitch and any ground truth.
//! * Scan results and other tables: a JSON document and a long-format CSV.
//!
//! Every JSON file carries `schema_version`; loaders refuse other versions.
//! Reals are written with 17 significant digits so they read back exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analysis::ScanResult;
use crate::ensemble::{Meta, PhaseEnsemble};
use crate::error::{Error, Result};
use crate::fringe::{Interferogram, SliceParams};

pub const SCHEMA_VERSION: u32 = 1;

/// Identifies the code that produced a file.
pub fn build_id() -> String {
    format!("fieldinfo-{}", env!("CARGO_PKG_VERSION"))
}

/// Reproducibility stamp embedded in every output.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub config_hash: String,
    pub build_id: String,
    pub seeds: Vec<u64>,
}

impl Stamp {
    pub fn new(config_hash: impl Into<String>, seeds: Vec<u64>) -> Self {
        Self { config_hash: config_hash.into(), build_id: build_id(), seeds }
    }
}

/// Formats a real with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn parse_real(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Malformed(format!("not a number: {s:?}")))
}

/// `base.csv` and `base.meta.json` for a path given with or without the
/// `.csv` extension.
pub fn sidecar_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = if path.extension().is_some_and(|e| e == "csv") { path.with_extension("") } else { path.to_path_buf() };
    let mut csv = stem.clone().into_os_string();
    csv.push(".csv");
    let mut meta = stem.into_os_string();
    meta.push(".meta.json");
    (csv.into(), meta.into())
}

fn check_version(found: u32) -> Result<()> {
    if found != SCHEMA_VERSION {
        return Err(Error::SchemaVersion { found, expected: SCHEMA_VERSION });
    }
    Ok(())
}

fn check_kind(found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Error::Malformed(format!("expected a {expected} file, found {found}")));
    }
    Ok(())
}

/// Creates the directories above `path` if missing.
pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Reads only the version and kind, so a bad version is reported as such
/// rather than as a field mismatch.
#[derive(Deserialize)]
struct Header {
    schema_version: u32,
    kind: String,
}

fn read_checked<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let raw: serde_json::Value = read_json(path)?;
    let header: Header = serde_json::from_value(raw.clone())
        .map_err(|e| Error::Malformed(format!("{}: missing header ({e})", path.display())))?;
    check_version(header.schema_version)?;
    check_kind(&header.kind, kind)?;
    Ok(serde_json::from_value(raw)?)
}

fn write_matrix(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| fmt_real(*v)))?;
    }
    w.flush()?;
    Ok(())
}

fn read_matrix(path: &Path, width: usize) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.len() != width {
        return Err(Error::Malformed(format!("{}: expected {width} columns", path.display())));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != width {
            return Err(Error::Malformed(format!("{}: ragged row", path.display())));
        }
        for f in rec.iter() {
            out.push(parse_real(f)?);
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct EnsembleSidecar {
    schema_version: u32,
    kind: String,
    n_shots: usize,
    n_pixels: usize,
    grid: Vec<f64>,
    dz: f64,
    units: String,
    meta: Meta,
    stamp: Stamp,
}

/// Writes `base.csv` and `base.meta.json`; returns the two paths.
pub fn write_ensemble(path: &Path, ensemble: &PhaseEnsemble, stamp: &Stamp) -> Result<(PathBuf, PathBuf)> {
    let (csv_path, meta_path) = sidecar_paths(path);
    let header: Vec<String> = (1..=ensemble.n_pixels()).map(|i| format!("z{i}")).collect();
    write_matrix(&csv_path, &header, ensemble.rows().map(|r| r.to_vec()))?;
    let side = EnsembleSidecar {
        schema_version: SCHEMA_VERSION,
        kind: "phase_ensemble".into(),
        n_shots: ensemble.n_shots(),
        n_pixels: ensemble.n_pixels(),
        grid: ensemble.grid().to_vec(),
        dz: ensemble.dz(),
        units: "rad".into(),
        meta: ensemble.meta().clone(),
        stamp: stamp.clone(),
    };
    write_json(&meta_path, &side)?;
    Ok((csv_path, meta_path))
}

/// Reads an ensemble written by [`write_ensemble`].
pub fn read_ensemble(path: &Path) -> Result<PhaseEnsemble> {
    let (csv_path, meta_path) = sidecar_paths(path);
    let side: EnsembleSidecar = read_checked(&meta_path, "phase_ensemble")?;
    if side.units != "rad" {
        return Err(Error::Malformed(format!("unsupported phase units {:?}", side.units)));
    }
    let samples = read_matrix(&csv_path, side.n_pixels)?;
    if samples.len() != side.n_shots * side.n_pixels {
        return Err(Error::Malformed(format!(
            "{} holds {} values, sidecar promises {} x {}",
            csv_path.display(),
            samples.len(),
            side.n_shots,
            side.n_pixels
        )));
    }
    Ok(PhaseEnsemble::from_flat(samples, side.n_shots, side.grid, side.meta)?.with_pitch(side.dz))
}

#[derive(Serialize, Deserialize)]
struct InterferogramSidecar {
    schema_version: u32,
    kind: String,
    n_z: usize,
    x_grid: Vec<f64>,
    dz: f64,
    units: String,
    truth: Option<Vec<SliceParams>>,
    meta: Meta,
    stamp: Stamp,
}

pub fn write_interferogram(path: &Path, image: &Interferogram, stamp: &Stamp) -> Result<(PathBuf, PathBuf)> {
    let (csv_path, meta_path) = sidecar_paths(path);
    let header: Vec<String> = (1..=image.n_x()).map(|i| format!("x{i}")).collect();
    write_matrix(&csv_path, &header, (0..image.n_z()).map(|z| image.slice(z).to_vec()))?;
    let side = InterferogramSidecar {
        schema_version: SCHEMA_VERSION,
        kind: "interferogram".into(),
        n_z: image.n_z(),
        x_grid: image.x_grid().to_vec(),
        dz: image.dz,
        units: "counts".into(),
        truth: image.truth.clone(),
        meta: image.meta.clone(),
        stamp: stamp.clone(),
    };
    write_json(&meta_path, &side)?;
    Ok((csv_path, meta_path))
}

pub fn read_interferogram(path: &Path) -> Result<Interferogram> {
    let (csv_path, meta_path) = sidecar_paths(path);
    let side: InterferogramSidecar = read_checked(&meta_path, "interferogram")?;
    let image = read_matrix(&csv_path, side.x_grid.len())?;
    let mut out = Interferogram::new(image, side.n_z, side.x_grid, side.dz)?;
    out.truth = side.truth;
    out.meta = side.meta;
    Ok(out)
}

/// Versioned JSON wrapper for any result body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document<T> {
    pub schema_version: u32,
    pub kind: String,
    pub stamp: Stamp,
    pub body: T,
}

pub fn write_document<T: Serialize>(path: &Path, kind: &str, stamp: &Stamp, body: &T) -> Result<()> {
    write_json(path, &Document { schema_version: SCHEMA_VERSION, kind: kind.to_string(), stamp: stamp.clone(), body })
}

pub fn read_document<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<Document<T>> {
    read_checked(path, kind)
}

/// Columns of the scan CSV.
pub const SCAN_COLUMNS: [&str; 17] = [
    "schema_version",
    "config_hash",
    "scan_kind",
    "id",
    "x_name",
    "x",
    "descriptor",
    "boundary_count",
    "partition",
    "coherence",
    "value",
    "stderr",
    "ci_lo",
    "ci_hi",
    "units",
    "k",
    "n_samples",
];

/// Writes `base.json` (full result) and `base.csv` (one line per row).
pub fn write_scan(path: &Path, scan: &ScanResult, stamp: &Stamp) -> Result<(PathBuf, PathBuf)> {
    let stem = if path.extension().is_some() { path.with_extension("") } else { path.to_path_buf() };
    let json_path = stem.with_extension("json");
    let csv_path = stem.with_extension("csv");
    write_document(&json_path, "scan", stamp, scan)?;
    ensure_parent(&csv_path)?;
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(SCAN_COLUMNS)?;
    for r in &scan.rows {
        let e = &r.estimate;
        w.write_record([
            SCHEMA_VERSION.to_string(),
            stamp.config_hash.clone(),
            scan.scan_kind.name().to_string(),
            r.id.to_string(),
            scan.x_name.clone(),
            fmt_real(r.x),
            r.descriptor.clone(),
            r.partition.as_ref().map(|p| p.boundary_count().to_string()).unwrap_or_default(),
            r.partition.as_ref().map(|p| p.label()).unwrap_or_default(),
            r.coherence.map(fmt_real).unwrap_or_default(),
            fmt_real(e.value),
            fmt_real(e.stderr),
            fmt_real(e.ci95.0),
            fmt_real(e.ci95.1),
            format!("{:?}", e.units).to_lowercase(),
            e.k.map(|k| k.to_string()).unwrap_or_default(),
            e.n_samples.to_string(),
        ])?;
    }
    w.flush()?;
    Ok((json_path, csv_path))
}

pub fn read_scan(path: &Path) -> Result<Document<ScanResult>> {
    read_document(&path.with_extension("json"), "scan")
}

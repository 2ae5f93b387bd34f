//! Command execution.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fieldinfo::analysis::{self, ScanResult};
use fieldinfo::ensemble::{DataCloud, Partition, PhaseEnsemble};
use fieldinfo::estimators::{kl_ci, ksg_mutual_information, kl_to_nearest_gaussian, mutual_information_ci, EstimateWithCI, Units};
use fieldinfo::io::{self, fmt_real, Stamp, SCHEMA_VERSION};
use fieldinfo::resampling::{convergence_scan, ConvergenceRow};
use fieldinfo::sgsim::{simulate_stages, PipelineConfig, SGParams};
use fieldinfo::Error;
use serde::{Deserialize, Serialize};

use crate::config::{parse_pixels, Estimation, Quantity, ScanTask, Simulation, Stage, Sweep, Task};

/// Failure of a command, mapped to the process exit code.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Numerical(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Validation(e.to_string())
        }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

/// Labelled estimate as written by the estimate and match commands.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub quantity: String,
    pub partition: Option<String>,
    pub estimate: EstimateWithCI,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepsCheck {
    pub repetitions: usize,
    pub stderr: f64,
    pub stderr_doubled: f64,
    pub relative_change: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub quantity: Quantity,
    pub partition: Option<String>,
    pub units: Units,
    pub rows: Vec<ConvergenceRow>,
    pub repetitions: RepsCheck,
}

fn stem(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv" | "json") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = stem(path).into_os_string();
    s.push(suffix);
    s.into()
}

/// Runs `task`, writing its outputs and the replayable config next to them.
pub fn execute(task: &Task) -> Outcome {
    let hash = task.hash();
    match task {
        Task::Simulate { sim, seed, stage, out } => simulate(sim, *seed, *stage, out, &hash)?,
        Task::FitFringes { inputs, central_frac, coarse, out } => fit_fringes(inputs, *central_frac, *coarse, out, &hash)?,
        Task::EstimateMi { input, a, b, est, seed, out } => {
            let ens = io::read_ensemble(input)?;
            let p = partition(&ens, a.as_deref(), b.as_deref())?;
            let e = mutual_information_ci(&ens.build_cloud(&p)?, est.k, est.ties(*seed), &est.plan(*seed))?;
            let report = Report { quantity: "mi".into(), partition: Some(p.label()), estimate: e.in_units(est.units()) };
            emit_report(&report, out.as_deref(), &Stamp::new(hash.as_str(), vec![*seed]))?;
        }
        Task::EstimateKl { input, pixels, est, seed, out } => {
            let ens = io::read_ensemble(input)?;
            let cloud = pixel_cloud(&ens, pixels.as_deref())?;
            let e = kl_ci(&cloud, est.k, *seed, est.ties(*seed), &est.plan(*seed))?;
            let report = Report { quantity: "kl".into(), partition: None, estimate: e.in_units(est.units()) };
            emit_report(&report, out.as_deref(), &Stamp::new(hash.as_str(), vec![*seed]))?;
        }
        Task::Scan { kind } => scan(kind, &hash)?,
        Task::Convergence { input, quantity, a, b, sizes, est, seed, out } => {
            convergence(input, *quantity, a.as_deref(), b.as_deref(), sizes, est, *seed, out, &hash)?
        }
        Task::Match { sim, target, target_se, quantity, a, b, est, seed, out } => {
            let sweep = analysis::SimulatedSweep::run(sim.lambda_t, &sim.q, sim.n, *seed, &PipelineConfig::default(), &est.plan(*seed))?;
            let p = match (quantity, sweep.nodes.first()) {
                (Quantity::Mi, Some(node)) => Some(partition(&node.stages.coarse, a.as_deref(), b.as_deref())?),
                _ => None,
            };
            let e = sweep.match_quantity(*target, *target_se, |stages| {
                let ens = &stages.coarse;
                match (&p, quantity) {
                    (Some(p), _) => mutual_information_ci(&ens.build_cloud(p)?, est.k, est.ties(*seed), &est.plan(*seed)),
                    (None, Quantity::Kl) => {
                        let cloud = DataCloud::single(ens.samples().to_vec(), ens.n_shots(), ens.n_pixels())?;
                        kl_ci(&cloud, est.k, *seed, est.ties(*seed), &est.plan(*seed))
                    }
                    _ => ens.coherence_factor(&est.plan(*seed)),
                }
            });
            let e = e?;
            let e = if *quantity == Quantity::Coherence { e } else { e.in_units(est.units()) };
            let report = Report { quantity: quantity_name(*quantity).into(), partition: p.map(|p| p.label()), estimate: e };
            emit_report(&report, out.as_deref(), &Stamp::new(hash.as_str(), vec![*seed]))?;
        }
    }
    if let Some(out) = task.out() {
        io::write_document(&with_suffix(out, ".config.json"), "run_config", &Stamp::new(hash.as_str(), seeds(task)), task)?;
    }
    Ok(())
}

fn seeds(task: &Task) -> Vec<u64> {
    match task {
        Task::Simulate { seed, .. }
        | Task::EstimateMi { seed, .. }
        | Task::EstimateKl { seed, .. }
        | Task::Convergence { seed, .. }
        | Task::Match { seed, .. } => vec![*seed],
        Task::FitFringes { .. } => vec![],
        Task::Scan { kind } => match kind {
            ScanTask::Volume { seed, .. }
            | ScanTask::Area { seed, .. }
            | ScanTask::Separation { seed, .. }
            | ScanTask::Q { seed, .. }
            | ScanTask::Nongauss { seed, .. } => vec![*seed],
        },
    }
}

fn quantity_name(q: Quantity) -> &'static str {
    match q {
        Quantity::Mi => "mi",
        Quantity::Kl => "kl",
        Quantity::Coherence => "coherence",
    }
}

fn emit_report(report: &Report, out: Option<&Path>, stamp: &Stamp) -> Outcome {
    let e = &report.estimate;
    let units = serde_json::to_value(e.units).expect("plain enum");
    println!("{} = {} ± {} {}", report.quantity, e.value, e.stderr, units.as_str().unwrap_or_default());
    if let Some(out) = out {
        io::write_document(&stem(out).with_extension("json"), "estimate", stamp, report)?;
    }
    Ok(())
}

fn partition(ens: &PhaseEnsemble, a: Option<&str>, b: Option<&str>) -> Outcome<Partition> {
    let n = ens.n_pixels();
    let a = match a {
        Some(s) => parse_pixels(s).map_err(invalid)?,
        None => (0..n / 2).collect(),
    };
    let b = match b {
        Some(s) => parse_pixels(s).map_err(invalid)?,
        None => (0..n).filter(|x| !a.contains(x)).collect(),
    };
    if let Some(x) = a.iter().chain(&b).find(|&&x| x >= n) {
        return Err(invalid(format!("pixel {x} outside grid of {n}")));
    }
    let p = Partition::new(a, b)?;
    p.check_against(n)?;
    Ok(p)
}

fn pixel_cloud(ens: &PhaseEnsemble, pixels: Option<&str>) -> Outcome<DataCloud> {
    let Some(spec) = pixels else {
        return Ok(DataCloud::single(ens.samples().to_vec(), ens.n_shots(), ens.n_pixels())?);
    };
    let px = parse_pixels(spec).map_err(invalid)?;
    if let Some(x) = px.iter().find(|&&x| x >= ens.n_pixels()) {
        return Err(invalid(format!("pixel {x} outside grid of {}", ens.n_pixels())));
    }
    let pts = ens.rows().flat_map(|r| px.iter().map(move |&i| r[i])).collect();
    Ok(DataCloud::single(pts, ens.n_shots(), px.len())?)
}

fn q_label(q: f64) -> String {
    format!("{q}").replace('-', "m")
}

fn simulate(sim: &Simulation, seed: u64, stage: Stage, out: &Path, hash: &str) -> Outcome {
    if sim.q.is_empty() {
        return Err(invalid("no q values"));
    }
    let cfg = PipelineConfig::default();
    for &q in &sim.q {
        let params = SGParams::from_lengths(sim.lambda_t, q)?;
        let stages = simulate_stages(&params, sim.n, seed, &cfg)?;
        let ens = match stage {
            Stage::Fine => stages.fine,
            Stage::Coarse => stages.coarse,
        };
        let path = if sim.q.len() == 1 { stem(out) } else { with_suffix(out, &format!("_q{}", q_label(q))) };
        let (csv, _) = io::write_ensemble(&path, &ens, &Stamp::new(hash, vec![seed]))?;
        eprintln!("wrote {} (q = {q}, coherence {:.4})", csv.display(), ens.coherence());
    }
    Ok(())
}

fn fit_fringes(inputs: &[PathBuf], central_frac: f64, coarse: Option<usize>, out: &Path, hash: &str) -> Outcome {
    let images = inputs.iter().map(|p| io::read_interferogram(p)).collect::<fieldinfo::Result<Vec<_>>>()?;
    let mut ens = fieldinfo::fringe::extract_ensemble(&images)?;
    if central_frac < 1.0 {
        ens = ens.select_central(central_frac)?;
    }
    ens = ens.reduce_global_offset_from(-PI);
    if let Some(c) = coarse {
        ens = ens.coarse_grain(c)?;
    }
    let (csv, _) = io::write_ensemble(out, &ens, &Stamp::new(hash, vec![]))?;
    eprintln!("wrote {} ({} shots, {} pixels)", csv.display(), ens.n_shots(), ens.n_pixels());
    Ok(())
}

fn sweep_ensembles(sweep: &Sweep, seed: u64) -> Outcome<Vec<(f64, PhaseEnsemble)>> {
    let mut list = if !sweep.inputs.is_empty() {
        sweep
            .inputs
            .iter()
            .map(|p| {
                let e = io::read_ensemble(p)?;
                let q = e.meta().get("q").and_then(|v| v.as_f64()).ok_or_else(|| invalid(format!("{} has no q in its metadata", p.display())))?;
                Ok((q, e))
            })
            .collect::<Outcome<Vec<_>>>()?
    } else if !sweep.q.is_empty() {
        let cfg = PipelineConfig::default();
        sweep
            .q
            .iter()
            .map(|&q| Ok((q, simulate_stages(&SGParams::from_lengths(sweep.lambda_t, q)?, sweep.n, seed, &cfg)?.coarse)))
            .collect::<Outcome<Vec<_>>>()?
    } else {
        return Err(invalid("give either --in files or --q values"));
    };
    list.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(list)
}

fn convert(mut scan: ScanResult, units: Units) -> ScanResult {
    for r in &mut scan.rows {
        r.estimate = r.estimate.in_units(units);
    }
    scan.meta.insert("units".into(), serde_json::to_value(units).expect("plain enum"));
    scan
}

fn scan(task: &ScanTask, hash: &str) -> Outcome {
    let (scan, est, seed, out) = match task {
        ScanTask::Volume { input, est, seed, out } => {
            (analysis::volume_scan(&io::read_ensemble(input)?, &est.scan_config(*seed))?, est, seed, out)
        }
        ScanTask::Area { input, volume, est, seed, out } => {
            let ens = io::read_ensemble(input)?;
            let v = volume.unwrap_or(ens.n_pixels() / 2);
            (analysis::area_scan(&ens, v, &est.scan_config(*seed))?, est, seed, out)
        }
        ScanTask::Separation { input, block, est, seed, out } => {
            (analysis::separation_scan(&io::read_ensemble(input)?, *block, &est.scan_config(*seed))?, est, seed, out)
        }
        ScanTask::Q { sweep, est, seed, out } => {
            let list = sweep_ensembles(sweep, *seed)?;
            let refs: Vec<(f64, &PhaseEnsemble)> = list.iter().map(|(q, e)| (*q, e)).collect();
            (analysis::q_scan(&refs, &est.scan_config(*seed))?, est, seed, out)
        }
        ScanTask::Nongauss { sweep, est, seed, out } => {
            let list = sweep_ensembles(sweep, *seed)?;
            let refs: Vec<(f64, &PhaseEnsemble)> = list.iter().map(|(q, e)| (*q, e)).collect();
            (analysis::nongauss_scan(&refs, &est.scan_config(*seed))?, est, seed, out)
        }
    };
    let scan = convert(scan, est.units());
    let (_, csv) = io::write_scan(out, &scan, &Stamp::new(hash, vec![*seed]))?;
    eprintln!("wrote {} ({} rows)", csv.display(), scan.rows.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn convergence(
    input: &Path,
    quantity: Quantity,
    a: Option<&str>,
    b: Option<&str>,
    sizes: &[usize],
    est: &Estimation,
    seed: u64,
    out: &Path,
    hash: &str,
) -> Outcome {
    let ens = io::read_ensemble(input)?;
    let n = ens.n_shots();
    let sizes: Vec<usize> = if sizes.is_empty() {
        [100, 250, 500, 1000, 2000, 5000, 10000].into_iter().filter(|&s| s < n).chain([n]).collect()
    } else {
        sizes.to_vec()
    };
    let p = match quantity {
        Quantity::Mi => Some(partition(&ens, a, b)?),
        _ => None,
    };
    let k = est.k;
    let ties = est.ties(seed);
    let estimator = |e: &PhaseEnsemble| -> fieldinfo::Result<f64> {
        match (&p, quantity) {
            (Some(p), _) => ksg_mutual_information(ties.prepare(&e.build_cloud(p)?).as_ref(), k),
            (None, Quantity::Kl) => {
                let cloud = DataCloud::single(e.samples().to_vec(), e.n_shots(), e.n_pixels())?;
                kl_to_nearest_gaussian(ties.prepare(&cloud).as_ref(), k, seed)
            }
            _ => Ok(e.coherence()),
        }
    };
    let min_size = match quantity {
        Quantity::Kl => (k + 1).max(ens.n_pixels() + 1),
        _ => k + 1,
    };
    let plan = est.plan(seed);
    let units = if quantity == Quantity::Coherence { Units::Nats } else { est.units() };
    let f = units.per_nat();
    let mut rows = convergence_scan(&ens, &sizes, &plan, min_size, estimator)?;
    for r in &mut rows {
        r.value *= f;
        r.stderr *= f;
    }
    let once = fieldinfo::resampling::jackknife(&ens, &plan, min_size, estimator)?;
    let twice = fieldinfo::resampling::jackknife(&ens, &fieldinfo::resampling::JackknifePlan { repetitions: 2 * plan.repetitions, ..plan }, min_size, estimator)?;
    let repetitions = RepsCheck {
        repetitions: plan.repetitions,
        stderr: once.stderr * f,
        stderr_doubled: twice.stderr * f,
        relative_change: (twice.stderr - once.stderr).abs() / once.stderr,
    };
    let report = ConvergenceReport { quantity, partition: p.map(|p| p.label()), units, rows, repetitions };
    let stamp = Stamp::new(hash, vec![seed]);
    io::write_document(&stem(out).with_extension("json"), "convergence", &stamp, &report)?;
    let mut csv = String::from("schema_version,config_hash,quantity,n_samples,value,stderr,converged,units\n");
    for r in &report.rows {
        let _ = writeln!(
            csv,
            "{SCHEMA_VERSION},{hash},{},{},{},{},{},{}",
            quantity_name(quantity),
            r.n_samples,
            fmt_real(r.value),
            fmt_real(r.stderr),
            r.converged,
            serde_json::to_value(units).expect("plain enum").as_str().expect("string tag"),
        );
    }
    let csv_path = stem(out).with_extension("csv");
    std::fs::write(&csv_path, csv).map_err(Error::from)?;
    eprintln!(
        "wrote {} ({} sizes; doubling replicates changes stderr by {:.1}%)",
        csv_path.display(),
        report.rows.len(),
        100.0 * report.repetitions.relative_change
    );
    Ok(())
}

use fieldinfo::analysis::{volume_scan, ScanConfig};
use fieldinfo::ensemble::{PhaseEnsemble, Partition};
use fieldinfo::estimators::ksg_mutual_information;
use fieldinfo::fringe::{centered_grid, extract_ensemble, synthesize, SliceParams};
use fieldinfo::io::{read_ensemble, read_scan, write_ensemble, write_scan, Stamp};
use fieldinfo::resampling::JackknifePlan;
use fieldinfo::sgsim::{simulate_pipeline, PipelineConfig, SGParams};

fn small_config() -> PipelineConfig {
    PipelineConfig { phi_cells: 128, windings: 4, ..Default::default() }
}

#[test]
fn simulated_ensemble_survives_disk() {
    let dir = tempfile::tempdir().unwrap();
    let p = SGParams::from_lengths(15.0, 2.0).unwrap();
    let e = simulate_pipeline(&p, 400, 3, &small_config()).unwrap();
    let path = dir.path().join("sim.csv");
    write_ensemble(&path, &e, &Stamp::new("abc", vec![3])).unwrap();
    let back = read_ensemble(&path).unwrap();
    assert_eq!(back.samples(), e.samples());
    assert_eq!(back.grid(), e.grid());
    assert_eq!(back.meta(), e.meta());

    let part = Partition::contiguous(3, 6).unwrap();
    let a = ksg_mutual_information(&e.build_cloud(&part).unwrap(), 2).unwrap();
    let b = ksg_mutual_information(&back.build_cloud(&part).unwrap(), 2).unwrap();
    assert_eq!(a, b);
}

#[test]
fn scan_survives_disk() {
    let dir = tempfile::tempdir().unwrap();
    let p = SGParams::from_lengths(15.0, 1.0).unwrap();
    let e = simulate_pipeline(&p, 300, 4, &small_config()).unwrap();
    let cfg = ScanConfig { plan: JackknifePlan { repetitions: 50, ..Default::default() }, ..Default::default() };
    let scan = volume_scan(&e, &cfg).unwrap();
    let path = dir.path().join("volume.csv");
    write_scan(&path, &scan, &Stamp::new("h", vec![4])).unwrap();
    let doc = read_scan(&path).unwrap();
    assert_eq!(doc.body, scan);
    assert_eq!(doc.stamp.seeds, vec![4]);
}

// Profiles from the simulator are rendered as fringes, fitted back and
// compared up to one global 2π multiple per shot.
#[test]
fn fringes_recover_simulated_profiles() {
    let p = SGParams::from_lengths(15.0, 2.0).unwrap();
    let truth = simulate_pipeline(&p, 20, 8, &PipelineConfig { coarse: 30, ..small_config() }).unwrap();
    let x = centered_grid(121, 0.5);
    let images: Vec<_> = truth
        .rows()
        .enumerate()
        .map(|(s, row)| {
            let slices: Vec<SliceParams> = row
                .iter()
                .map(|&phi| SliceParams { a: 1.0, b: 0.05, c: 0.6, lambda_f: 6.0, x0: 0.0, sigma_tof: 20.0, phi })
                .collect();
            synthesize(&slices, &x, truth.dz(), 0.02, s as u64).unwrap()
        })
        .collect();
    let got: PhaseEnsemble = extract_ensemble(&images).unwrap();
    assert_eq!((got.n_shots(), got.n_pixels()), (20, 30));
    let mut sq = 0.0;
    for (g, t) in got.rows().zip(truth.rows()) {
        let turns = ((t[0] - g[0]) / (2.0 * std::f64::consts::PI)).round();
        for (a, b) in g.iter().zip(t) {
            let err = a + turns * 2.0 * std::f64::consts::PI - b;
            assert!(err.abs() < 0.3, "{a} vs {b}");
            sq += err * err;
        }
    }
    assert!((sq / 600.0).sqrt() < 0.1);
}

use std::fs;
use std::path::Path;

use lensless_core::forward::ShutterMode;
use lensless_core::solvers::{FistaConfig, Lipschitz, TvOperator};
use lensless_core::udn::UdnConfig;
use lensless_core::{ForwardModel, LinearMap, MaskStack};
use lensless_harness::experiment::{
    load_scene, run_experiment, simulate_measurement, SolverKind, SolverStatus,
};
use lensless_harness::report::{band_wavelength, check_consistent, load_records, report, wavelength_rgb};
use lensless_harness::spec::{
    BestBy, ExperimentSpec, FilterResponses, FistaSpec, MaskSpec, Modality, NetworkSpec, Precision,
    PsfSource, SceneSource, UdnSpec,
};
use lensless_harness::{HarnessError, RunRecord};

fn fista(taus: &[f64], iters: usize) -> FistaSpec {
    FistaSpec {
        taus: taus.to_vec(),
        config: FistaConfig {
            max_iters: iters,
            tv: TvOperator::two_d(1.0, 1.0),
            ..FistaConfig::default()
        },
        best_by: BestBy::Mse,
    }
}

fn tiny_udn(iters: usize) -> UdnSpec {
    UdnSpec {
        network: NetworkSpec {
            depth: 1,
            channels: 4,
            skip_channels: 2,
            input_channels: 3,
            ..NetworkSpec::default()
        },
        config: UdnConfig {
            max_iters: iters,
            snapshot_every: 5,
            ..UdnConfig::default()
        },
    }
}

fn erasure_spec(out: &Path, fractions: &[f64]) -> ExperimentSpec {
    ExperimentSpec {
        modality: Modality::Erasures2d,
        scene: SceneSource::DeadLeaves { height: 16, width: 16 },
        psf: PsfSource::Caustic { seed: 1, contrast: 16.0 },
        masks: MaskSpec::Erasure { fractions: fractions.to_vec() },
        downsample: 1,
        noise_sigma: 0.0,
        fista: Some(fista(&[1e-4, 1e-2], 20)),
        udn: None,
        metrics: true,
        precision: Precision::F64,
        seed: 3,
        output_dir: out.to_path_buf(),
    }
}

fn video_spec(out: &Path, h: usize) -> ExperimentSpec {
    ExperimentSpec {
        modality: Modality::Video,
        scene: SceneSource::MovingSquare { height: h, width: 32 },
        psf: PsfSource::Caustic { seed: 2, contrast: 16.0 },
        masks: MaskSpec::Shutter {
            lines_per_frame: 1,
            mode: ShutterMode::Dual,
        },
        downsample: 1,
        noise_sigma: 0.0,
        fista: None,
        udn: None,
        metrics: true,
        precision: Precision::F64,
        seed: 4,
        output_dir: out.to_path_buf(),
    }
}

fn spectral_spec(out: &Path, channels: usize, superpixel: [usize; 2], n: usize) -> ExperimentSpec {
    ExperimentSpec {
        modality: Modality::Hyperspectral,
        scene: SceneSource::SpectralCube { height: n, width: n },
        psf: PsfSource::Caustic { seed: 3, contrast: 16.0 },
        masks: MaskSpec::Filter {
            channels,
            superpixel,
            responses: FilterResponses::Gaussian { sigma: 1.0 },
        },
        downsample: 1,
        noise_sigma: 0.0,
        fista: None,
        udn: None,
        metrics: true,
        precision: Precision::F64,
        seed: 5,
        output_dir: out.to_path_buf(),
    }
}

#[test]
fn dual_shutter_video_has_38_frames() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_measurement::<f64>(&video_spec(dir.path(), 76)).unwrap();
    assert_eq!(sim.measurement.shape(), &[76, 32]);
    assert_eq!(sim.ground_truth.shape(), &[38, 76, 32]);
}

#[test]
fn filter_array_cube_has_64_channels() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_measurement::<f64>(&spectral_spec(dir.path(), 64, [8, 8], 32)).unwrap();
    assert_eq!(sim.ground_truth.shape(), &[64, 32, 32]);
    assert_eq!(sim.measurement.shape(), &[32, 32]);
}

#[test]
fn zero_erasures_match_the_plain_model() {
    let dir = tempfile::tempdir().unwrap();
    let spec = erasure_spec(dir.path(), &[0.0]);
    let sim = simulate_measurement::<f64>(&spec).unwrap();
    let plain = ForwardModel::new(sim.model.psf().clone(), MaskStack::unmasked(16, 16)).unwrap();
    let b = plain.apply(&sim.ground_truth).unwrap();
    assert_eq!(sim.measurement, b);
}

#[test]
fn noise_is_seeded_and_additive() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = erasure_spec(dir.path(), &[0.5]);
    let clean = simulate_measurement::<f64>(&spec).unwrap().measurement;
    spec.noise_sigma = 0.01;
    let a = simulate_measurement::<f64>(&spec).unwrap().measurement;
    let b = simulate_measurement::<f64>(&spec).unwrap().measurement;
    assert_eq!(a, b);
    let d = a.sub(&clean).unwrap();
    let sd = (d.norm_sq() / d.len() as f64).sqrt();
    assert!((sd - 0.01).abs() < 0.002, "{sd}");
}

#[test]
fn sweep_yields_one_record_per_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let fractions = [0.0, 0.5, 0.9, 0.95, 0.99];
    let spec = erasure_spec(dir.path(), &fractions);
    let records = run_experiment::<f64>(&spec).unwrap();
    assert_eq!(records.len(), 5);
    for (r, f) in records.iter().zip(fractions) {
        assert_eq!(r.erase_fraction, Some(f));
        assert_eq!(r.spec_hash, spec.hash());
        assert_eq!(r.solvers.len(), 2);
        let best = r.best_fista_record().unwrap();
        let min = r
            .solvers
            .iter()
            .map(|s| s.metrics.as_ref().unwrap().mse)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(best.metrics.as_ref().unwrap().mse, min);
    }
    assert!(dir.path().join("spec.json").is_file());
}

fn assert_files_exist(dir: &Path, r: &RunRecord) {
    for f in [&r.ground_truth, &r.measurement, &r.psf, &r.masks] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    for s in &r.solvers {
        for f in [&s.estimate, &s.preview, &s.trace, &s.metrics_csv].into_iter().flatten() {
            assert!(dir.join(f).is_file(), "{f}");
        }
    }
}

#[test]
fn spec_without_solvers_records_inputs_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = erasure_spec(dir.path(), &[0.9]);
    spec.fista = None;
    let records = run_experiment::<f64>(&spec).unwrap();
    let r = &records[0];
    assert!(r.solvers.is_empty());
    assert!(r.best_fista.is_none());
    let rdir = dir.path().join(&r.label);
    assert_files_exist(&rdir, r);
    let b: lensless_core::Tensor<f64> = r.read(&rdir, &r.measurement).unwrap();
    assert_eq!(b.shape(), &[16, 16]);
    assert_eq!(RunRecord::load(&rdir).unwrap(), *r);
}

#[test]
fn failing_solver_is_recorded_and_the_rest_still_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = erasure_spec(dir.path(), &[0.5]);
    let mut f = fista(&[1e-4], 200);
    // A step far beyond 2 / L makes the iterates blow up.
    f.config.lipschitz = Lipschitz::Fixed(1e-3);
    spec.fista = Some(f);
    spec.udn = Some(tiny_udn(10));
    let r = run_experiment::<f64>(&spec).unwrap().remove(0);
    assert!(matches!(r.solvers[0].outcome, SolverStatus::Diverged { .. }));
    assert!(r.solvers[0].estimate.is_none());
    assert!(r.best_fista.is_none());
    assert_eq!(r.solvers[1].kind, SolverKind::Udn);
    assert_eq!(r.solvers[1].outcome, SolverStatus::Ok);
    assert!(r.solvers[1].metrics.is_some());
    assert!(r.diverged());
    assert_files_exist(&dir.path().join(&r.label), &r);
}

#[test]
fn udn_record_references_trace_and_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = erasure_spec(dir.path(), &[0.5]);
    spec.fista = None;
    spec.udn = Some(tiny_udn(12));
    let r = run_experiment::<f64>(&spec).unwrap().remove(0);
    let u = r.solver("udn").unwrap();
    assert_eq!(u.iterations_run, 12);
    assert!(u.selected_iteration.is_some());
    let rdir = dir.path().join(&r.label);
    let trace = fs::read_to_string(rdir.join(u.trace.as_ref().unwrap())).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next().unwrap(), "iteration,train_loss,holdout_loss,seconds");
    assert_eq!(lines.count(), 12);
}

#[test]
fn fista_trace_has_one_row_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let spec = erasure_spec(dir.path(), &[0.0]);
    let r = run_experiment::<f64>(&spec).unwrap().remove(0);
    let s = &r.solvers[0];
    let rdir = dir.path().join(&r.label);
    let trace = fs::read_to_string(rdir.join(s.trace.as_ref().unwrap())).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next().unwrap(), "iteration,objective,data_term,tv_term,seconds");
    assert_eq!(lines.count(), s.iterations_run);
}

#[test]
fn hyperspectral_run_returns_a_32_band_cube() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = spectral_spec(dir.path(), 32, [4, 8], 16);
    spec.fista = Some(FistaSpec {
        config: FistaConfig {
            tv: TvOperator::three_d(1.0, 1.0, 1.0),
            ..fista(&[1e-4], 10).config
        },
        ..fista(&[1e-4], 10)
    });
    let r = run_experiment::<f64>(&spec).unwrap().remove(0);
    let s = &r.solvers[0];
    let est: lensless_core::Tensor<f64> = r.read(dir.path().join(&r.label), s.estimate.as_ref().unwrap()).unwrap();
    assert_eq!(est.shape(), &[32, 16, 16]);
    assert!(s.metrics.as_ref().unwrap().spectral_cosine_distance.is_some());
}

#[test]
fn identical_specs_reproduce_identical_outputs() {
    let run = |dir: &Path| {
        let mut spec = erasure_spec(dir, &[0.9]);
        spec.udn = Some(tiny_udn(10));
        let r = lensless_core::par::with_threads(1, || run_experiment::<f64>(&spec)).unwrap().remove(0);
        let rdir = dir.join(&r.label);
        let files: Vec<Vec<u8>> = r
            .solvers
            .iter()
            .map(|s| fs::read(rdir.join(s.estimate.as_ref().unwrap())).unwrap())
            .collect();
        (r.canonical_payload(), files)
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(run(a.path()), run(b.path()));
}

#[test]
fn spec_hash_tracks_meaningful_fields() {
    let dir = tempfile::tempdir().unwrap();
    let base = erasure_spec(dir.path(), &[0.5]);
    let h = base.hash();
    assert_eq!(h.len(), 64);

    let mut moved = base.clone();
    moved.output_dir = "/elsewhere".into();
    assert_eq!(moved.hash(), h);

    let reparsed = ExperimentSpec::from_json(&base.to_json()).unwrap();
    assert_eq!(reparsed.hash(), h);

    let mut changes: Vec<ExperimentSpec> = Vec::new();
    let mut s = base.clone();
    s.seed += 1;
    changes.push(s);
    let mut s = base.clone();
    s.noise_sigma = 1e-3;
    changes.push(s);
    let mut s = base.clone();
    s.fista.as_mut().unwrap().taus[0] = 2e-4;
    changes.push(s);
    let mut s = base.clone();
    s.precision = Precision::F32;
    changes.push(s);
    let mut s = base.clone();
    s.psf = PsfSource::Caustic { seed: 1, contrast: 8.0 };
    changes.push(s);
    let mut s = base.clone();
    s.udn = Some(tiny_udn(5));
    changes.push(s);
    for c in &changes {
        assert_ne!(c.hash(), h, "{c:?}");
    }
}

#[test]
fn omitted_fields_take_defaults() {
    let text = r#"{
        "modality": "2d-erasures",
        "scene": {"kind": "camera"},
        "psf": {"kind": "caustic", "seed": 1},
        "masks": {"kind": "erasure", "fractions": [0.5]},
        "fista": {"taus": [1e-4]},
        "output_dir": "out"
    }"#;
    let s = ExperimentSpec::from_json(text).unwrap();
    assert_eq!(s.downsample, 1);
    assert_eq!(s.noise_sigma, 0.0);
    assert!(s.metrics);
    assert_eq!(s.fista.as_ref().unwrap().best_by, BestBy::Mse);
    assert_eq!(s.fista.as_ref().unwrap().config.max_iters, 2000);
    assert_eq!(s.psf, PsfSource::Caustic { seed: 1, contrast: 16.0 });
    let explicit = text.replace(r#""seed": 1}"#, r#""seed": 1, "contrast": 16.0}"#);
    assert_eq!(ExperimentSpec::from_json(&explicit).unwrap().hash(), s.hash());
}

#[test]
fn invalid_specs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = erasure_spec(dir.path(), &[0.5]);
    s.masks = MaskSpec::Shutter {
        lines_per_frame: 1,
        mode: ShutterMode::Single,
    };
    assert!(matches!(s.validate(), Err(HarnessError::Spec(_))));

    let s = erasure_spec(dir.path(), &[1.5]);
    assert!(matches!(s.validate(), Err(HarnessError::Spec(_))));

    let mut s = erasure_spec(dir.path(), &[0.5]);
    s.fista.as_mut().unwrap().taus.clear();
    assert!(matches!(s.validate(), Err(HarnessError::Spec(_))));

    let mut s = video_spec(dir.path(), 75);
    assert!(matches!(simulate_measurement::<f64>(&s), Err(HarnessError::Spec(_))));
    s.scene = SceneSource::Camera;
    assert!(matches!(s.validate(), Err(HarnessError::Spec(_))));

    assert!(ExperimentSpec::from_json("{}").is_err());
}

#[test]
fn missing_inputs_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = erasure_spec(dir.path(), &[0.5]);
    s.scene = SceneSource::File {
        path: dir.path().join("nope.png"),
    };
    match simulate_measurement::<f64>(&s) {
        Err(e @ HarnessError::MissingInput(_)) => assert!(e.to_string().contains("nope.png")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn file_scenes_and_psfs_are_downsampled() {
    let dir = tempfile::tempdir().unwrap();
    let cube = lensless_harness::scenes::spectral_cube(4, 32, 32, 1).unwrap();
    let scene = dir.path().join("cube.udnt");
    lensless_core::container::write_tensor(&scene, &cube).unwrap();
    let psf = lensless_harness::psf::synth_caustic_psf::<f64>(32, 32, 1, 16.0).unwrap();
    let psf_path = dir.path().join("psf.udnt");
    lensless_core::container::write_tensor(&psf_path, &psf.raw()).unwrap();
    let mut s = spectral_spec(dir.path(), 4, [2, 2], 32);
    s.scene = SceneSource::File { path: scene };
    s.psf = PsfSource::File { path: psf_path };
    s.downsample = 2;
    let gt = load_scene(&s).unwrap();
    assert_eq!(gt.shape(), &[4, 16, 16]);
    let sim = simulate_measurement::<f64>(&s).unwrap();
    assert_eq!(sim.measurement.shape(), &[16, 16]);
}

#[test]
fn report_tables_follow_the_records() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = erasure_spec(dir.path(), &[0.99, 0.5]);
    spec.udn = Some(tiny_udn(10));
    run_experiment::<f64>(&spec).unwrap();
    let loaded = load_records(dir.path()).unwrap();
    assert_eq!(loaded.len(), 2);
    let rep = report(&loaded, dir.path().join("report")).unwrap();
    assert_eq!(rep.comparison.len(), 2);
    assert_eq!(rep.comparison[0].erase_fraction, Some(0.5));
    assert_eq!(rep.comparison[1].erase_fraction, Some(0.99));
    assert_eq!(rep.metrics.len(), 2 * 3);
    let text = fs::read_to_string(dir.path().join("report/comparison.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
    let c = &rep.comparison[1];
    let expect = c.udn_mse.unwrap() < c.fista_mse.unwrap() && c.udn_ssim.unwrap() > c.fista_ssim.unwrap();
    assert_eq!(c.udn_better, Some(expect));

    let single = load_records(dir.path().join("erase-0.5")).unwrap();
    let rep = report(&single, dir.path().join("single")).unwrap();
    assert_eq!(rep.comparison.len(), 1);
}

#[test]
fn video_report_has_a_row_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = video_spec(dir.path(), 16);
    spec.fista = Some(FistaSpec {
        config: FistaConfig {
            tv: TvOperator::three_d(1.0, 1.0, 1.0),
            ..fista(&[1e-4], 5).config
        },
        ..fista(&[1e-4], 5)
    });
    let r = run_experiment::<f64>(&spec).unwrap().remove(0);
    assert_eq!(r.scene_shape, [8, 16, 32]);
    let rep = report(&load_records(dir.path()).unwrap(), dir.path().join("report")).unwrap();
    let per_frame = rep
        .files
        .iter()
        .find(|f| f.to_string_lossy().ends_with("per_frame.csv"))
        .unwrap();
    assert_eq!(fs::read_to_string(per_frame).unwrap().lines().count(), 1 + 8);
}

#[test]
fn spectral_report_writes_false_color() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = spectral_spec(dir.path(), 8, [4, 4], 16);
    spec.fista = Some(fista(&[1e-4], 5));
    run_experiment::<f64>(&spec).unwrap();
    let rep = report(&load_records(dir.path()).unwrap(), dir.path().join("report")).unwrap();
    let pngs = rep.files.iter().filter(|f| f.extension().is_some_and(|e| e == "png")).count();
    assert_eq!(pngs, 2);
    let per_band = rep
        .files
        .iter()
        .find(|f| f.to_string_lossy().ends_with("per_band.csv"))
        .unwrap();
    assert_eq!(fs::read_to_string(per_band).unwrap().lines().count(), 1 + 8);
}

#[test]
fn mixed_record_sets_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment::<f64>(&erasure_spec(&dir.path().join("a"), &[0.5])).unwrap();
    run_experiment::<f64>(&video_spec(&dir.path().join("b"), 16)).unwrap();
    let mut all = load_records(dir.path().join("a")).unwrap();
    all.extend(load_records(dir.path().join("b")).unwrap());
    assert!(matches!(check_consistent(&all), Err(HarnessError::Records(_))));
    assert!(report(&all, dir.path().join("r")).is_err());
    assert!(matches!(check_consistent(&[]), Err(HarnessError::Records(_))));

    let mut twice = load_records(dir.path().join("a")).unwrap();
    twice.extend(load_records(dir.path().join("a")).unwrap());
    assert!(check_consistent(&twice).is_err());
}

#[test]
fn wavelength_mapping_spans_the_primaries() {
    assert_eq!(band_wavelength(0, 1), 550.0);
    assert_eq!(wavelength_rgb(450.0)[2], 1.0);
    assert_eq!(wavelength_rgb(540.0)[1], 1.0);
    assert_eq!(wavelength_rgb(680.0), [1.0, 0.0, 0.0]);
    let lo = band_wavelength(0, 64);
    let hi = band_wavelength(63, 64);
    assert!(lo > 400.0 && hi < 700.0);
}

#[test]
fn shipped_specs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("specs");
    let mut seen = Vec::new();
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let spec = ExperimentSpec::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        seen.push(spec.modality);
    }
    seen.sort_by_key(|m| format!("{m:?}"));
    assert_eq!(seen, [Modality::Erasures2d, Modality::Hyperspectral, Modality::Video]);
}

//! Simulation and solver pipelines that turn an [`ExperimentSpec`] into
//! files on disk plus one [`RunRecord`] per sweep point.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use lensless_core::container::{read_any, write_png_gray, write_tensor};
use lensless_core::forward::{
    gaussian_filter_responses, ideal_filter_responses, make_erasure_mask, make_filter_masks,
    make_shutter_masks,
};
use lensless_core::metrics::{evaluate, MetricReport};
use lensless_core::rng::{self, streams};
use lensless_core::solvers::{fista_tv, FistaConfig};
use lensless_core::udn::{reconstruct_udn, UdnStatus};
use lensless_core::{Error, ForwardModel, MaskStack, Psf, Real, Tensor};

use crate::error::{HarnessError, IoContext, Result};
use crate::psf::synth_caustic_psf;
use crate::scenes::{camera64, dead_leaves, downsample, moving_square, spectral_cube};
use crate::spec::{
    BestBy, ExperimentSpec, FilterResponses, MaskSpec, Modality, Precision, PsfSource, SceneSource,
};

/// Everything needed to run a solver against a known scene.
#[derive(Clone, Debug)]
pub struct Simulation<T: Real> {
    /// `[K, H, W]`
    pub ground_truth: Tensor<T>,
    /// `[H, W]`
    pub measurement: Tensor<T>,
    pub model: ForwardModel<T>,
    pub erase_fraction: Option<f64>,
}

fn need_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(HarnessError::MissingInput(path.to_path_buf()))
    }
}

/// Source extents before downsampling.
fn source_dims(scene: &SceneSource) -> Option<(usize, usize)> {
    match *scene {
        SceneSource::Camera => Some((64, 64)),
        SceneSource::DeadLeaves { height, width }
        | SceneSource::MovingSquare { height, width }
        | SceneSource::SpectralCube { height, width } => Some((height, width)),
        SceneSource::File { .. } => None,
    }
}

fn frames_for(masks: &MaskSpec, h: usize) -> Result<usize> {
    Ok(match *masks {
        MaskSpec::Erasure { .. } => 1,
        MaskSpec::Shutter { lines_per_frame, mode } => {
            let band = match mode {
                lensless_core::ShutterMode::Single => lines_per_frame,
                lensless_core::ShutterMode::Dual => 2 * lines_per_frame,
            };
            if h % band != 0 {
                return Err(HarnessError::Spec(format!(
                    "sensor height {h} is not divisible by the shutter band {band}"
                )));
            }
            h / band
        }
        MaskSpec::Filter { channels, .. } => channels,
    })
}

/// Ground-truth cube at its final (downsampled) size.
pub fn load_scene(spec: &ExperimentSpec) -> Result<Tensor<f64>> {
    let f = spec.downsample;
    let raw = match &spec.scene {
        SceneSource::File { path } => {
            need_file(path)?;
            read_any::<f64>(path)?.into_cube()?
        }
        scene => {
            let (h, w) = source_dims(scene).expect("synthetic scenes have extents");
            if h % f != 0 || w % f != 0 {
                return Err(HarnessError::Spec(format!(
                    "{h}x{w} scene is not divisible by downsample factor {f}"
                )));
            }
            let k = frames_for(&spec.masks, h / f)?;
            match scene {
                SceneSource::Camera => camera64().into_cube()?,
                SceneSource::DeadLeaves { .. } => dead_leaves(h, w, spec.seed).into_cube()?,
                SceneSource::MovingSquare { .. } => moving_square(k, h, w, spec.seed)?,
                SceneSource::SpectralCube { .. } => spectral_cube(k, h, w, spec.seed)?,
                SceneSource::File { .. } => unreachable!(),
            }
        }
    };
    Ok(downsample(&raw, f)?)
}

fn build_psf<T: Real>(spec: &ExperimentSpec, h: usize, w: usize) -> Result<Psf<T>> {
    Ok(match &spec.psf {
        PsfSource::Caustic { seed, contrast } => synth_caustic_psf(h, w, *seed, *contrast)?,
        PsfSource::Delta => Psf::delta(h, w, 0, 0)?,
        PsfSource::File { path } => {
            need_file(path)?;
            let img = downsample(&read_any::<f64>(path)?.into_cube()?, spec.downsample)?;
            if img.shape() != [1, h, w] {
                return Err(HarnessError::Spec(format!(
                    "psf {} is {:?} after downsampling, scene is {h}x{w}",
                    path.display(),
                    img.shape()
                )));
            }
            Psf::from_raw(img.reshape(&[h, w])?.cast())?
        }
    })
}

fn build_masks<T: Real>(
    spec: &ExperimentSpec,
    fraction: Option<f64>,
    h: usize,
    w: usize,
) -> Result<MaskStack<T>> {
    Ok(match &spec.masks {
        MaskSpec::Erasure { .. } => {
            let f = fraction.ok_or_else(|| HarnessError::Spec("erasure run without a fraction".into()))?;
            make_erasure_mask(h, w, f, spec.seed)?
        }
        MaskSpec::Shutter { lines_per_frame, mode } => make_shutter_masks(h, w, *lines_per_frame, *mode)?,
        MaskSpec::Filter { channels, superpixel, responses } => {
            let n = superpixel[0] * superpixel[1];
            let r = match responses {
                FilterResponses::Ideal => ideal_filter_responses(n, *channels),
                FilterResponses::Gaussian { sigma } => gaussian_filter_responses(n, *channels, *sigma),
            };
            make_filter_masks(h, w, *channels, (superpixel[0], superpixel[1]), &r)?
        }
    })
}

/// Builds the forward model for a single-point spec and applies it to the
/// ground truth, adding seeded Gaussian noise when configured.
pub fn simulate_measurement<T: Real>(spec: &ExperimentSpec) -> Result<Simulation<T>> {
    spec.validate()?;
    let points = spec.sweep_points();
    if points.len() != 1 {
        return Err(HarnessError::Spec(format!(
            "simulation needs a single sweep point, spec lists {}",
            points.len()
        )));
    }
    let fraction = points[0];
    let gt = load_scene(spec)?;
    let (k, h, w) = gt.dims3()?;
    let masks = build_masks::<T>(spec, fraction, h, w)?;
    if masks.channels() != k {
        return Err(HarnessError::Spec(format!(
            "scene has {k} slices but the masks define {}",
            masks.channels()
        )));
    }
    let model = ForwardModel::new(build_psf::<T>(spec, h, w)?, masks)?;
    let gt: Tensor<T> = gt.cast();
    let mut b = lensless_core::LinearMap::apply(&model, &gt)?;
    if spec.noise_sigma > 0.0 {
        let mut r = rng::seeded(spec.seed, streams::NOISE);
        let s = spec.noise_sigma;
        for v in b.data_mut() {
            *v = *v + T::of(s * rng::standard_normal(&mut r));
        }
    }
    Ok(Simulation {
        ground_truth: gt,
        measurement: b,
        model,
        erase_fraction: fraction,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "solver", rename_all = "lowercase")]
pub enum SolverKind {
    Fista { tau: f64 },
    Udn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum SolverStatus {
    Ok,
    /// UDN keeps its best snapshot before the blow-up; FISTA has no estimate.
    Diverged { iteration: usize },
    Failed { message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverRecord {
    pub name: String,
    #[serde(flatten)]
    pub kind: SolverKind,
    pub outcome: SolverStatus,
    pub estimate: Option<String>,
    pub preview: Option<String>,
    pub trace: Option<String>,
    pub metrics: Option<MetricReport>,
    pub metrics_csv: Option<String>,
    pub iterations_run: usize,
    /// UDN snapshot chosen by early stopping.
    pub selected_iteration: Option<usize>,
    pub lipschitz: Option<f64>,
    pub wall_seconds: f64,
}

impl SolverRecord {
    fn new(name: String, kind: SolverKind) -> Self {
        Self {
            name,
            kind,
            outcome: SolverStatus::Ok,
            estimate: None,
            preview: None,
            trace: None,
            metrics: None,
            metrics_csv: None,
            iterations_run: 0,
            selected_iteration: None,
            lipschitz: None,
            wall_seconds: 0.0,
        }
    }

    pub fn metric(&self, by: BestBy) -> Option<f64> {
        let m = self.metrics.as_ref()?;
        match by {
            BestBy::Mse => Some(m.mse),
            BestBy::Psnr => Some(m.psnr),
            BestBy::Ssim => m.ssim,
            BestBy::MsSsim => m.ms_ssim,
            BestBy::SpectralCosine => m.spectral_cosine_distance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub version: String,
    pub os: String,
    pub arch: String,
    pub threads: usize,
}

impl Environment {
    fn current() -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            threads: lensless_core::par::threads(),
        }
    }
}

/// One sweep point. Paths are relative to the record's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub spec_hash: String,
    pub label: String,
    pub modality: Modality,
    pub precision: Precision,
    pub erase_fraction: Option<f64>,
    /// `[K, H, W]`
    pub scene_shape: [usize; 3],
    pub ground_truth: String,
    pub measurement: String,
    pub psf: String,
    pub masks: String,
    pub solvers: Vec<SolverRecord>,
    pub best_fista: Option<String>,
    pub best_by: Option<BestBy>,
    pub environment: Environment,
    pub started_unix: f64,
    pub finished_unix: f64,
}

pub const RECORD_FILE: &str = "record.json";

impl RunRecord {
    /// JSON with timings and host details removed; identical specs produce
    /// identical payloads in 64-bit single-threaded mode.
    pub fn canonical_payload(&self) -> String {
        let mut r = self.clone();
        r.started_unix = 0.0;
        r.finished_unix = 0.0;
        r.environment = Environment {
            version: r.environment.version,
            os: String::new(),
            arch: String::new(),
            threads: 0,
        };
        for s in &mut r.solvers {
            s.wall_seconds = 0.0;
        }
        serde_json::to_string(&r).expect("record serializes")
    }

    pub fn solver(&self, name: &str) -> Option<&SolverRecord> {
        self.solvers.iter().find(|s| s.name == name)
    }

    pub fn best_fista_record(&self) -> Option<&SolverRecord> {
        self.best_fista.as_deref().and_then(|n| self.solver(n))
    }

    pub fn diverged(&self) -> bool {
        self.solvers
            .iter()
            .any(|s| matches!(s.outcome, SolverStatus::Diverged { .. }))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let p = dir.as_ref().join(RECORD_FILE);
        need_file(&p)?;
        let text = fs::read_to_string(&p).at(&p)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Reads a tensor referenced by this record.
    pub fn read<T: Real>(&self, dir: impl AsRef<Path>, rel: &str) -> Result<Tensor<T>> {
        let p = dir.as_ref().join(rel);
        need_file(&p)?;
        Ok(lensless_core::container::read_tensor(p)?)
    }
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// Directory name of a sweep point.
pub fn point_label(fraction: Option<f64>) -> String {
    match fraction {
        Some(f) => format!("erase-{f}"),
        None => "run".into(),
    }
}

fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().at(path)?;
    Ok(())
}

fn tau_label(tau: f64) -> String {
    format!("fista-tau-{tau:e}")
}

struct Outputs<'a, T: Real> {
    dir: &'a Path,
    sim: &'a Simulation<T>,
    spec: &'a ExperimentSpec,
}

impl<T: Real> Outputs<'_, T> {
    fn estimate(&self, rec: &mut SolverRecord, est: &Tensor<T>) -> Result<()> {
        let file = format!("{}.udnt", rec.name);
        write_tensor(self.dir.join(&file), est)?;
        rec.estimate = Some(file);
        if est.shape()[0] == 1 {
            let png = format!("{}.png", rec.name);
            write_png_gray(self.dir.join(&png), &est.clone().reshape(&est.shape()[1..])?)?;
            rec.preview = Some(png);
        }
        if self.spec.metrics {
            let m = evaluate(est, &self.sim.ground_truth, self.spec.modality == Modality::Hyperspectral)?;
            let file = format!("{}_metrics.csv", rec.name);
            fs::write(self.dir.join(&file), m.to_csv()).at(self.dir.join(&file))?;
            rec.metrics = Some(m);
            rec.metrics_csv = Some(file);
        }
        Ok(())
    }
}

fn failed(e: &Error) -> SolverStatus {
    match e {
        Error::Divergence { iteration, .. } => SolverStatus::Diverged { iteration: *iteration },
        other => SolverStatus::Failed { message: other.to_string() },
    }
}

fn run_fista<T: Real>(out: &Outputs<'_, T>, tau: f64, base: &FistaConfig) -> Result<SolverRecord> {
    let mut rec = SolverRecord::new(tau_label(tau), SolverKind::Fista { tau });
    let cfg = FistaConfig { tau, ..base.clone() };
    let t = Instant::now();
    match fista_tv(&out.sim.model, &out.sim.measurement, &cfg) {
        Ok(r) => {
            rec.wall_seconds = t.elapsed().as_secs_f64();
            rec.iterations_run = r.iterations_run;
            rec.lipschitz = Some(r.lipschitz);
            let trace = format!("{}_trace.csv", rec.name);
            write_csv(&out.dir.join(&trace), &r.trace)?;
            rec.trace = Some(trace);
            out.estimate(&mut rec, &r.estimate)?;
        }
        Err(e) => {
            rec.wall_seconds = t.elapsed().as_secs_f64();
            rec.outcome = failed(&e);
        }
    }
    Ok(rec)
}

fn run_udn<T: Real>(out: &Outputs<'_, T>) -> Result<SolverRecord> {
    let spec = out.spec;
    let u = spec.udn.as_ref().expect("udn requested");
    let mut rec = SolverRecord::new("udn".into(), SolverKind::Udn);
    let (k, h, w) = out.sim.model.scene_dims();
    let arch = u.network.architecture(k, h, w);
    let observed = out.sim.model.masks().coverage();
    let t = Instant::now();
    let result = reconstruct_udn(&out.sim.model, &out.sim.measurement, Some(&observed), &arch, &u.config, spec.seed);
    rec.wall_seconds = t.elapsed().as_secs_f64();
    match result {
        Ok(r) => {
            rec.iterations_run = r.trace.len();
            rec.selected_iteration = Some(r.selected_snapshot().iteration);
            if let UdnStatus::Diverged { iteration } = r.status {
                rec.outcome = SolverStatus::Diverged { iteration };
            }
            let trace = "udn_trace.csv".to_string();
            write_csv(&out.dir.join(&trace), &r.trace)?;
            rec.trace = Some(trace);
            out.estimate(&mut rec, &r.estimate)?;
        }
        Err(e) => rec.outcome = failed(&e),
    }
    Ok(rec)
}

fn pick_best(solvers: &[SolverRecord], by: BestBy) -> Option<String> {
    let mut best: Option<(&SolverRecord, f64)> = None;
    for s in solvers.iter().filter(|s| matches!(s.kind, SolverKind::Fista { .. })) {
        let Some(v) = s.metric(by).filter(|v| !v.is_nan()) else {
            continue;
        };
        let better = match best {
            None => true,
            Some((_, b)) => if by.maximize() { v > b } else { v < b },
        };
        if better {
            best = Some((s, v));
        }
    }
    best.map(|(s, _)| s.name.clone())
}

/// Runs one sweep point of `spec` into `dir`.
pub fn run_point<T: Real>(spec: &ExperimentSpec, fraction: Option<f64>, dir: &Path) -> Result<RunRecord> {
    let started = unix_now();
    let point = spec.at_point(fraction);
    let sim = simulate_measurement::<T>(&point)?;
    fs::create_dir_all(dir).at(dir)?;
    write_tensor(dir.join("ground_truth.udnt"), &sim.ground_truth)?;
    write_tensor(dir.join("measurement.udnt"), &sim.measurement)?;
    write_tensor(dir.join("psf.udnt"), sim.model.psf().kernel())?;
    write_tensor(dir.join("masks.udnt"), sim.model.masks().masks())?;
    if sim.ground_truth.shape()[0] == 1 {
        let (_, h, w) = sim.ground_truth.dims3()?;
        write_png_gray(dir.join("ground_truth.png"), &sim.ground_truth.clone().reshape(&[h, w])?)?;
    }
    let (k, h, w) = sim.ground_truth.dims3()?;
    let out = Outputs { dir, sim: &sim, spec };

    let mut solvers = Vec::new();
    if let Some(f) = &spec.fista {
        for &tau in &f.taus {
            solvers.push(run_fista(&out, tau, &f.config)?);
        }
    }
    if spec.udn.is_some() {
        solvers.push(run_udn(&out)?);
    }
    let best_by = spec.fista.as_ref().map(|f| f.best_by);
    let best_fista = best_by.and_then(|by| pick_best(&solvers, by));

    let record = RunRecord {
        spec_hash: spec.hash(),
        label: point_label(fraction),
        modality: spec.modality,
        precision: spec.precision,
        erase_fraction: fraction,
        scene_shape: [k, h, w],
        ground_truth: "ground_truth.udnt".into(),
        measurement: "measurement.udnt".into(),
        psf: "psf.udnt".into(),
        masks: "masks.udnt".into(),
        solvers,
        best_fista,
        best_by,
        environment: Environment::current(),
        started_unix: started,
        finished_unix: unix_now(),
    };
    let path = dir.join(RECORD_FILE);
    fs::write(&path, serde_json::to_string_pretty(&record)?).at(&path)?;
    Ok(record)
}

/// Runs every sweep point of `spec` in sequence, one subdirectory of
/// `spec.output_dir` each, and writes the spec next to them.
pub fn run_experiment<T: Real>(spec: &ExperimentSpec) -> Result<Vec<RunRecord>> {
    spec.validate()?;
    let root = &spec.output_dir;
    fs::create_dir_all(root).at(root)?;
    let p = root.join("spec.json");
    fs::write(&p, spec.to_json()).at(&p)?;
    spec.sweep_points()
        .into_iter()
        .map(|f| run_point::<T>(spec, f, &root.join(point_label(f))))
        .collect()
}

/// [`run_experiment`] in the spec's precision.
pub fn run(spec: &ExperimentSpec) -> Result<Vec<RunRecord>> {
    match spec.precision {
        Precision::F32 => run_experiment::<f32>(spec),
        Precision::F64 => run_experiment::<f64>(spec),
    }
}

/// Record directories below `root` (one level deep, plus `root` itself).
pub fn find_records(root: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let root = root.as_ref();
    let mut dirs = Vec::new();
    if root.join(RECORD_FILE).is_file() {
        dirs.push(root.to_path_buf());
    }
    for entry in fs::read_dir(root).at(root)? {
        let p = entry.at(root)?.path();
        if p.join(RECORD_FILE).is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    Ok(dirs)
}

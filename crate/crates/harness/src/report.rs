//! Comparison tables and figure data from a set of run records.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use lensless_core::container::write_png_rgb;
use lensless_core::Tensor;

use crate::error::{HarnessError, IoContext, Result};
use crate::experiment::{find_records, RunRecord, SolverStatus};
use crate::spec::Modality;

/// Wavelength span assigned to the band axis for false-color composites.
pub const BAND_RANGE_NM: (f64, f64) = (400.0, 700.0);

#[derive(Clone, Debug)]
pub struct LoadedRecord {
    pub dir: PathBuf,
    pub record: RunRecord,
}

pub fn load_records(root: impl AsRef<Path>) -> Result<Vec<LoadedRecord>> {
    find_records(root)?
        .into_iter()
        .map(|dir| {
            let record = RunRecord::load(&dir)?;
            Ok(LoadedRecord { dir, record })
        })
        .collect()
}

/// Centre wavelength of band `k` of `bands`, spread evenly over
/// [`BAND_RANGE_NM`].
pub fn band_wavelength(k: usize, bands: usize) -> f64 {
    let (lo, hi) = BAND_RANGE_NM;
    lo + (hi - lo) * (k as f64 + 0.5) / bands as f64
}

/// Piecewise-linear visible-spectrum approximation of the RGB response at
/// `nm`: blue below 490, green 490-580 and red above 580, with linear ramps
/// between the primaries.
pub fn wavelength_rgb(nm: f64) -> [f64; 3] {
    match nm {
        x if x < 380.0 => [0.0, 0.0, 0.0],
        x if x < 440.0 => [(440.0 - x) / 60.0, 0.0, 1.0],
        x if x < 490.0 => [0.0, (x - 440.0) / 50.0, 1.0],
        x if x < 510.0 => [0.0, 1.0, (510.0 - x) / 20.0],
        x if x < 580.0 => [(x - 510.0) / 70.0, 1.0, 0.0],
        x if x < 645.0 => [1.0, (645.0 - x) / 65.0, 0.0],
        x if x <= 780.0 => [1.0, 0.0, 0.0],
        _ => [0.0, 0.0, 0.0],
    }
}

/// Collapses a `[K, H, W]` cube to RGB planes. Each channel is the
/// response-weighted mean of the bands; all three share one scale so the
/// brightest channel value maps to 1.
pub fn false_color(cube: &Tensor<f64>) -> Result<[Tensor<f64>; 3]> {
    let (k, h, w) = cube.dims3()?;
    let weights: Vec<[f64; 3]> = (0..k).map(|i| wavelength_rgb(band_wavelength(i, k))).collect();
    let mut planes = [vec![0.0; h * w], vec![0.0; h * w], vec![0.0; h * w]];
    for (c, plane) in planes.iter_mut().enumerate() {
        let total: f64 = weights.iter().map(|wt| wt[c]).sum();
        if total == 0.0 {
            continue;
        }
        for (i, wt) in weights.iter().enumerate() {
            for (p, &v) in plane.iter_mut().zip(cube.slice(i)) {
                *p += wt[c] * v / total;
            }
        }
    }
    let peak = planes.iter().flatten().fold(0.0f64, |m, &v| m.max(v));
    let s = if peak > 0.0 { 1.0 / peak } else { 1.0 };
    let mk = |p: &Vec<f64>| Tensor::from_vec(&[h, w], p.iter().map(|v| v * s).collect());
    Ok([mk(&planes[0])?, mk(&planes[1])?, mk(&planes[2])?])
}

/// Rejects record sets that cannot share one table.
pub fn check_consistent(records: &[LoadedRecord]) -> Result<()> {
    let Some(first) = records.first() else {
        return Err(HarnessError::Records("no records".into()));
    };
    let f = &first.record;
    for r in records.iter().map(|l| &l.record) {
        if r.modality != f.modality {
            return Err(HarnessError::Records(format!(
                "mixed modalities {:?} and {:?}",
                f.modality, r.modality
            )));
        }
        if r.scene_shape != f.scene_shape {
            return Err(HarnessError::Records(format!(
                "mixed scene shapes {:?} and {:?}",
                f.scene_shape, r.scene_shape
            )));
        }
    }
    let mut seen = BTreeSet::new();
    for r in records.iter().map(|l| &l.record) {
        let key = (r.spec_hash.clone(), r.label.clone());
        if !seen.insert(key) {
            return Err(HarnessError::Records(format!("duplicate record {}", r.label)));
        }
    }
    if f.modality == Modality::Erasures2d {
        let mut fractions = BTreeSet::new();
        for r in records.iter().map(|l| &l.record) {
            let Some(x) = r.erase_fraction else {
                return Err(HarnessError::Records(format!("{} has no erasure fraction", r.label)));
            };
            if !fractions.insert(x.to_bits()) {
                return Err(HarnessError::Records(format!("erasure fraction {x} appears twice")));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub label: String,
    pub erase_fraction: Option<f64>,
    pub solver: String,
    pub status: String,
    pub mse: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub ms_ssim: Option<f64>,
    pub spectral_cosine_distance: Option<f64>,
}

/// UDN against the best FISTA run of the same record.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub label: String,
    pub erase_fraction: Option<f64>,
    pub best_fista: Option<String>,
    pub fista_mse: Option<f64>,
    pub fista_ssim: Option<f64>,
    pub udn_mse: Option<f64>,
    pub udn_ssim: Option<f64>,
    /// Lower MSE and higher SSIM than the best FISTA run.
    pub udn_better: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SliceRow {
    pub slice: usize,
    pub wavelength_nm: Option<f64>,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: Option<f64>,
    pub truth_mean: f64,
    pub estimate_mean: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub metrics: Vec<MetricRow>,
    pub comparison: Vec<ComparisonRow>,
    pub files: Vec<PathBuf>,
}

fn status_name(s: &SolverStatus) -> &'static str {
    match s {
        SolverStatus::Ok => "ok",
        SolverStatus::Diverged { .. } => "diverged",
        SolverStatus::Failed { .. } => "failed",
    }
}

fn write_rows<S: Serialize>(path: &Path, rows: &[S], files: &mut Vec<PathBuf>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().at(path)?;
    files.push(path.to_path_buf());
    Ok(())
}

fn comparison(r: &RunRecord) -> ComparisonRow {
    let fista = r.best_fista_record().and_then(|s| s.metrics.as_ref());
    let udn = r.solver("udn").and_then(|s| s.metrics.as_ref());
    let udn_better = match (fista, udn) {
        (Some(f), Some(u)) => Some(u.mse < f.mse && u.ssim.zip(f.ssim).is_some_and(|(a, b)| a > b)),
        _ => None,
    };
    ComparisonRow {
        label: r.label.clone(),
        erase_fraction: r.erase_fraction,
        best_fista: r.best_fista.clone(),
        fista_mse: fista.map(|m| m.mse),
        fista_ssim: fista.and_then(|m| m.ssim),
        udn_mse: udn.map(|m| m.mse),
        udn_ssim: udn.and_then(|m| m.ssim),
        udn_better,
    }
}

/// Writes the comparison tables into `out`:
///
/// * `metrics.csv`: one row per record and solver.
/// * `comparison.csv`: UDN against the best FISTA run, one row per record
///   (ordered by erasure fraction for sweeps).
/// * video: `<label>_<solver>_per_frame.csv` with one row per frame.
/// * hyperspectral: `<label>_<solver>_per_band.csv` with one row per band,
///   plus false-color PNGs of the ground truth and every estimate.
pub fn report(records: &[LoadedRecord], out: impl AsRef<Path>) -> Result<Report> {
    check_consistent(records)?;
    let out = out.as_ref();
    fs::create_dir_all(out).at(out)?;
    let mut sorted: Vec<&LoadedRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        let fa = a.record.erase_fraction.unwrap_or(0.0);
        let fb = b.record.erase_fraction.unwrap_or(0.0);
        fa.total_cmp(&fb).then_with(|| a.record.label.cmp(&b.record.label))
    });

    let mut rep = Report::default();
    for l in &sorted {
        let r = &l.record;
        for s in &r.solvers {
            let m = s.metrics.as_ref();
            rep.metrics.push(MetricRow {
                label: r.label.clone(),
                erase_fraction: r.erase_fraction,
                solver: s.name.clone(),
                status: status_name(&s.outcome).into(),
                mse: m.map(|m| m.mse),
                psnr: m.map(|m| m.psnr),
                ssim: m.and_then(|m| m.ssim),
                ms_ssim: m.and_then(|m| m.ms_ssim),
                spectral_cosine_distance: m.and_then(|m| m.spectral_cosine_distance),
            });
        }
        rep.comparison.push(comparison(r));
    }
    write_rows(&out.join("metrics.csv"), &rep.metrics, &mut rep.files)?;
    write_rows(&out.join("comparison.csv"), &rep.comparison, &mut rep.files)?;

    let modality = sorted[0].record.modality;
    if modality == Modality::Erasures2d {
        return Ok(rep);
    }
    for l in &sorted {
        let r = &l.record;
        let gt: Tensor<f64> = r.read(&l.dir, &r.ground_truth)?;
        let (k, _, _) = gt.dims3()?;
        if modality == Modality::Hyperspectral {
            let p = out.join(format!("{}_ground_truth_false_color.png", r.label));
            let [cr, cg, cb] = false_color(&gt)?;
            write_png_rgb(&p, [&cr, &cg, &cb])?;
            rep.files.push(p);
        }
        for s in &r.solvers {
            let (Some(m), Some(file)) = (s.metrics.as_ref(), s.estimate.as_ref()) else {
                continue;
            };
            let est: Tensor<f64> = r.read(&l.dir, file)?;
            let rows: Vec<SliceRow> = m
                .slices
                .iter()
                .map(|sm| SliceRow {
                    slice: sm.slice,
                    wavelength_nm: (modality == Modality::Hyperspectral).then(|| band_wavelength(sm.slice, k)),
                    mse: sm.mse,
                    psnr: sm.psnr,
                    ssim: sm.ssim,
                    truth_mean: gt.slice(sm.slice).iter().sum::<f64>() / gt.slice(sm.slice).len() as f64,
                    estimate_mean: est.slice(sm.slice).iter().sum::<f64>() / est.slice(sm.slice).len() as f64,
                })
                .collect();
            let suffix = if modality == Modality::Video { "per_frame" } else { "per_band" };
            write_rows(&out.join(format!("{}_{}_{suffix}.csv", r.label, s.name)), &rows, &mut rep.files)?;
            if modality == Modality::Hyperspectral {
                let p = out.join(format!("{}_{}_false_color.png", r.label, s.name));
                let [cr, cg, cb] = false_color(&est)?;
                write_png_rgb(&p, [&cr, &cg, &cb])?;
                rep.files.push(p);
            }
        }
    }
    Ok(rep)
}

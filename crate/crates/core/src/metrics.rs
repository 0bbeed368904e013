//! Reconstruction quality metrics.
//!
//! SSIM follows the usual Gaussian-window formulation (11 taps, sigma 1.5,
//! stabilizers `(0.01 L)^2` and `(0.03 L)^2`, statistics over valid window
//! positions only). MS-SSIM uses five dyadic scales (2x2 box downsampling)
//! with weights `[0.0448, 0.2856, 0.3001, 0.2363, 0.1333]`; negative
//! per-scale terms are clamped to zero before exponentiation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
/// Smallest side length with an 11-tap window at the fifth scale.
pub const MS_SSIM_MIN_SIZE: usize = SSIM_WINDOW << (MS_SSIM_WEIGHTS.len() - 1);

pub fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.expect_shape(b.shape())?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(s / a.len() as f64)
}

/// `10 log10(peak^2 / mse)`; identical inputs give `+inf`.
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / m).log10()
    })
}

fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of an `h x w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = g.len();
    let (ho, wo) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for xo in 0..wo {
            rows[y * wo + xo] = (0..n).map(|i| g[i] * x[y * w + xo + i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for yo in 0..ho {
        for xo in 0..wo {
            out[yo * wo + xo] = (0..n).map(|i| g[i] * rows[(yo + i) * wo + xo]).sum();
        }
    }
    (out, ho, wo)
}

/// Mean SSIM and mean contrast-structure term of two planes.
fn ssim_terms(a: &[f64], b: &[f64], h: usize, w: usize, peak: f64) -> (f64, f64) {
    let g = gaussian_window();
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let (mu_a, ..) = filter_valid(a, h, w, &g);
    let (mu_b, ..) = filter_valid(b, h, w, &g);
    let (e_aa, ..) = filter_valid(&prod(a, a), h, w, &g);
    let (e_bb, ..) = filter_valid(&prod(b, b), h, w, &g);
    let (e_ab, ..) = filter_valid(&prod(a, b), h, w, &g);
    let n = mu_a.len() as f64;
    let (mut s_sum, mut cs_sum) = (0.0, 0.0);
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let cs = (2.0 * cov + c2) / (va + vb + c2);
        let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        s_sum += l * cs;
        cs_sum += cs;
    }
    (s_sum / n, cs_sum / n)
}

fn plane<T: Real>(t: &Tensor<T>) -> Result<(Vec<f64>, usize, usize)> {
    let (h, w) = t.dims2()?;
    Ok((t.data().iter().map(|v| v.as_f64()).collect(), h, w))
}

pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    ssim_with_peak(a, b, 1.0)
}

pub fn ssim_with_peak<T: Real>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    a.expect_shape(b.shape())?;
    let (pa, h, w) = plane(a)?;
    let (pb, ..) = plane(b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    Ok(ssim_terms(&pa, &pb, h, w, peak).0)
}

fn downsample(x: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (h2, w2) = (h / 2, w / 2);
    let mut out = vec![0.0; h2 * w2];
    for y in 0..h2 {
        for xx in 0..w2 {
            let i = 2 * y * w + 2 * xx;
            out[y * w2 + xx] = (x[i] + x[i + 1] + x[i + w] + x[i + w + 1]) / 4.0;
        }
    }
    (out, h2, w2)
}

pub fn ms_ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.expect_shape(b.shape())?;
    let (mut pa, mut h, mut w) = plane(a)?;
    let (mut pb, ..) = plane(b)?;
    if h < MS_SSIM_MIN_SIZE || w < MS_SSIM_MIN_SIZE {
        return Err(Error::invalid(format!(
            "ms-ssim needs images of at least {MS_SSIM_MIN_SIZE}x{MS_SSIM_MIN_SIZE}, got {h}x{w}"
        )));
    }
    let scales = MS_SSIM_WEIGHTS.len();
    let mut out = 1.0;
    for (j, &wt) in MS_SSIM_WEIGHTS.iter().enumerate() {
        let (s, cs) = ssim_terms(&pa, &pb, h, w, 1.0);
        let term = if j + 1 == scales { s } else { cs };
        out *= term.max(0.0).powf(wt);
        if j + 1 < scales {
            let (na, nh, nw) = downsample(&pa, h, w);
            pb = downsample(&pb, h, w).0;
            pa = na;
            h = nh;
            w = nw;
        }
    }
    Ok(out)
}

/// Mean over selected pixels of `1 - cos(angle)` between estimated and true
/// spectra along `k`. Pixels whose true spectrum is all zero are skipped;
/// zero-norm estimated spectra count as distance 1.
pub fn spectral_cosine_distance<T: Real>(
    est: &Tensor<T>,
    gt: &Tensor<T>,
    mask: Option<&Tensor<T>>,
) -> Result<f64> {
    est.expect_shape(gt.shape())?;
    let (k, h, w) = gt.dims3()?;
    if let Some(m) = mask {
        m.expect_shape(&[h, w])?;
    }
    let plane = h * w;
    let (mut total, mut count) = (0.0, 0usize);
    for p in 0..plane {
        if mask.is_some_and(|m| m.data()[p] == T::zero()) {
            continue;
        }
        let (mut dot, mut ne, mut ng) = (0.0, 0.0, 0.0);
        for kk in 0..k {
            let e = est.data()[kk * plane + p].as_f64();
            let g = gt.data()[kk * plane + p].as_f64();
            dot += e * g;
            ne += e * e;
            ng += g * g;
        }
        if ng == 0.0 {
            continue;
        }
        count += 1;
        total += if ne == 0.0 {
            1.0
        } else {
            1.0 - dot / (ne.sqrt() * ng.sqrt())
        };
    }
    if count == 0 {
        return Err(Error::invalid("spectral mask selects no foreground pixels"));
    }
    Ok(total / count as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub slice: usize,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: Option<f64>,
    pub ms_ssim: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConstants {
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub ms_ssim_weights: [f64; 5],
    pub peak: f64,
}

impl Default for MetricConstants {
    fn default() -> Self {
        Self {
            ssim_window: SSIM_WINDOW,
            ssim_sigma: SSIM_SIGMA,
            k1: SSIM_K1,
            k2: SSIM_K2,
            ms_ssim_weights: MS_SSIM_WEIGHTS,
            peak: 1.0,
        }
    }
}

/// Per-slice metrics plus cube aggregates. `ssim`/`ms_ssim` aggregates are
/// the mean over slices. LPIPS fields are never computed here; they exist so
/// externally produced values can be merged into the same record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub slices: Vec<SliceMetrics>,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: Option<f64>,
    pub ms_ssim: Option<f64>,
    pub spectral_cosine_distance: Option<f64>,
    pub lpips_alex: Option<f64>,
    pub lpips_vgg: Option<f64>,
    pub constants: MetricConstants,
}

fn mean(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = xs.collect();
    v.filter(|v| !v.is_empty())
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

/// Compares two `[K, H, W]` cubes (rank-2 images are accepted as `K = 1`).
/// The spectral distance is included when `spectral` is set.
pub fn evaluate<T: Real>(est: &Tensor<T>, gt: &Tensor<T>, spectral: bool) -> Result<MetricReport> {
    let est = est.clone().into_cube()?;
    let gt = gt.clone().into_cube()?;
    est.expect_shape(gt.shape())?;
    let (k, h, w) = gt.dims3()?;
    let mut slices = Vec::with_capacity(k);
    for i in 0..k {
        let (a, b) = (est.slice_tensor(i), gt.slice_tensor(i));
        slices.push(SliceMetrics {
            slice: i,
            mse: mse(&a, &b)?,
            psnr: psnr(&a, &b, 1.0)?,
            ssim: (h >= SSIM_WINDOW && w >= SSIM_WINDOW).then(|| ssim(&a, &b)).transpose()?,
            ms_ssim: (h >= MS_SSIM_MIN_SIZE && w >= MS_SSIM_MIN_SIZE)
                .then(|| ms_ssim(&a, &b))
                .transpose()?,
        });
    }
    Ok(MetricReport {
        mse: mse(&est, &gt)?,
        psnr: psnr(&est, &gt, 1.0)?,
        ssim: mean(slices.iter().map(|s| s.ssim)),
        ms_ssim: mean(slices.iter().map(|s| s.ms_ssim)),
        spectral_cosine_distance: if spectral {
            Some(spectral_cosine_distance(&est, &gt, None)?)
        } else {
            None
        },
        lpips_alex: None,
        lpips_vgg: None,
        slices,
        constants: MetricConstants::default(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl MetricReport {
    /// One row per slice followed by an `all` aggregate row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("slice,mse,psnr,ssim,ms_ssim,spectral_cosine_distance\n");
        for r in &self.slices {
            s.push_str(&format!(
                "{},{},{},{},{},\n",
                r.slice,
                r.mse,
                r.psnr,
                opt(r.ssim),
                opt(r.ms_ssim)
            ));
        }
        s.push_str(&format!(
            "all,{},{},{},{},{}\n",
            self.mse,
            self.psnr,
            opt(self.ssim),
            opt(self.ms_ssim),
            opt(self.spectral_cosine_distance)
        ));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn textured(h: usize, w: usize) -> Tensor<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let data = (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as f64, (i % w) as f64);
                (0.5 + 0.3 * (x * 0.7).sin() * (y * 0.4).cos() + 0.1 * rng.random::<f64>()).clamp(0.0, 1.0)
            })
            .collect();
        Tensor::from_vec(&[h, w], data).unwrap()
    }

    #[test]
    fn mse_and_psnr_cases() {
        let a = Tensor::<f64>::zeros(&[4, 4]);
        let b = Tensor::<f64>::ones(&[4, 4]);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a, &b).unwrap(), 1.0);
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), 0.0);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        assert!(mse(&a, &Tensor::zeros(&[4, 5])).is_err());
    }

    #[test]
    fn ssim_identity_and_inversion() {
        let a = textured(32, 32);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let inv = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &inv).unwrap() < 0.2);
        assert!(ssim(&Tensor::<f64>::zeros(&[10, 20]), &Tensor::zeros(&[10, 20])).is_err());
    }

    #[test]
    fn ms_ssim_identity_and_size_gate() {
        let a = textured(176, 180);
        assert_eq!(ms_ssim(&a, &a).unwrap(), 1.0);
        let small = textured(175, 200);
        let err = ms_ssim(&small, &small).unwrap_err();
        assert!(err.to_string().contains("176"));
    }

    #[test]
    fn cosine_cases() {
        let gt = Tensor::<f64>::from_vec(&[2, 1, 2], vec![1.0, 0.0, 2.0, 0.0]).unwrap();
        // second pixel has an all-zero true spectrum and is skipped
        assert!(spectral_cosine_distance(&gt, &gt, None).unwrap().abs() < 1e-15);
        assert!(spectral_cosine_distance(&gt.scale(3.0), &gt, None).unwrap().abs() < 1e-15);
        let zero = Tensor::<f64>::zeros(&[2, 1, 2]);
        assert_eq!(spectral_cosine_distance(&zero, &gt, None).unwrap(), 1.0);
        let none = Tensor::<f64>::zeros(&[1, 2]);
        assert!(spectral_cosine_distance(&gt, &gt, Some(&none)).is_err());
    }

    #[test]
    fn report_csv_has_slice_rows() {
        let gt = Tensor::<f64>::stack(&[textured(16, 16), textured(16, 16).scale(0.5)]).unwrap();
        let r = evaluate(&gt.scale(0.9), &gt, true).unwrap();
        assert_eq!(r.slices.len(), 2);
        assert!(r.ms_ssim.is_none());
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().last().unwrap().starts_with("all,"));
    }
}

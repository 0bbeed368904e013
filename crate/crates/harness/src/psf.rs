//! Synthetic caustic PSFs and an incoherence check.
//!
//! A smooth random field is built by low-pass filtering seeded white noise.
//! Light focused by a smooth random phase plate concentrates along the field's
//! zero set, so the intensity is taken as `exp(-contrast * phi^2)` for the
//! unit-variance field `phi`: a web of thin bright curves whose width shrinks
//! as `contrast` grows.

use lensless_core::fft::{fft2_forward, fft2_inverse_real, ComplexTensor};
use lensless_core::forward::Psf;
use lensless_core::rng::{self, streams};
use lensless_core::{Error, Real, Result, Tensor};

pub const DEFAULT_CONTRAST: f64 = 16.0;

/// Lags within this Chebyshev radius of zero belong to the main lobe.
pub const MAIN_LOBE_RADIUS: usize = 2;

/// Correlation length of the underlying field in pixels.
fn correlation_length(h: usize, w: usize) -> f64 {
    (h.max(w) as f64 / 24.0).max(1.5)
}

pub fn synth_caustic_psf<T: Real>(h: usize, w: usize, seed: u64, contrast: f64) -> Result<Psf<T>> {
    if h < 8 || w < 8 {
        return Err(Error::InvalidArgument(format!(
            "caustic psf needs at least 8x8 pixels, got {h}x{w}"
        )));
    }
    if !(contrast.is_finite() && contrast > 0.0) {
        return Err(Error::InvalidArgument(format!("contrast {contrast} must be positive")));
    }
    let mut r = rng::seeded(seed, streams::PSF);
    let noise: Vec<f64> = (0..h * w).map(|_| rng::standard_normal(&mut r)).collect();
    let mut spec = fft2_forward(&Tensor::from_vec(&[h, w], noise)?)?;
    let ell = correlation_length(h, w);
    let two_pi = 2.0 * std::f64::consts::PI;
    for y in 0..h {
        let fy = signed_freq(y, h);
        for x in 0..w {
            let fx = signed_freq(x, w);
            let g = (-(fy * fy + fx * fx) * (two_pi * ell).powi(2) / 2.0).exp();
            spec.data[y * w + x] *= g;
        }
    }
    let field = fft2_inverse_real(&spec)?;
    let n = field.len() as f64;
    let mean = field.sum() / n;
    let sd = (field.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let intensity = field.map(|v| {
        let phi = (v - mean) / sd;
        (-contrast * phi * phi).exp()
    });
    Psf::from_raw(intensity.cast())
}

fn signed_freq(i: usize, n: usize) -> f64 {
    let s = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
    s / n as f64
}

/// Linear autocorrelation of `t` over all lags, `[2H-1, 2W-1]` with zero lag
/// at the centre. With `remove_mean` the mean is subtracted first.
pub fn autocorrelation<T: Real>(t: &Tensor<T>, remove_mean: bool) -> Result<Tensor<f64>> {
    let (h, w) = t.dims2()?;
    let mean = if remove_mean { t.sum() / t.len() as f64 } else { 0.0 };
    let (ph, pw) = (2 * h, 2 * w);
    let mut canvas = vec![0.0; ph * pw];
    for y in 0..h {
        for x in 0..w {
            canvas[y * pw + x] = t.data()[y * w + x].as_f64() - mean;
        }
    }
    let mut s = fft2_forward(&Tensor::from_vec(&[ph, pw], canvas)?)?;
    for c in s.data.iter_mut() {
        *c = num_complex::Complex::new(c.norm_sqr(), 0.0);
    }
    let r = fft2_inverse_real(&ComplexTensor { height: ph, width: pw, data: s.data })?;
    let (oh, ow) = (2 * h - 1, 2 * w - 1);
    let mut out = vec![0.0; oh * ow];
    for dy in 0..oh {
        for dx in 0..ow {
            let sy = (dy + ph - (h - 1)) % ph;
            let sx = (dx + pw - (w - 1)) % pw;
            out[dy * ow + dx] = r.data()[sy * pw + sx];
        }
    }
    Tensor::from_vec(&[oh, ow], out)
}

/// Zero-lag value of the mean-removed autocorrelation over the largest
/// magnitude outside the main lobe.
pub fn peak_to_sidelobe<T: Real>(t: &Tensor<T>) -> Result<f64> {
    let (h, w) = t.dims2()?;
    let r = autocorrelation(t, true)?;
    let ow = 2 * w - 1;
    let peak = r.data()[(h - 1) * ow + (w - 1)];
    let mut side = 0.0f64;
    for dy in 0..2 * h - 1 {
        for dx in 0..ow {
            let (ly, lx) = (dy.abs_diff(h - 1), dx.abs_diff(w - 1));
            if ly.max(lx) > MAIN_LOBE_RADIUS {
                side = side.max(r.data()[dy * ow + dx].abs());
            }
        }
    }
    Ok(peak / side)
}

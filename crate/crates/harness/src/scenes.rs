//! Ground-truth scenes: a bundled photograph, procedural natural-statistics
//! images, a moving-square video and a piecewise-smooth spectral cube.

use lensless_core::container::decode_png_gray;
use lensless_core::rng::{self, streams, SeededRng};
use lensless_core::{Error, Result, Tensor};

/// 64x64 grayscale reduction (8x8 box average) of the scikit-image "camera"
/// photograph, released CC0 by its photographer.
const CAMERA64: &[u8] = include_bytes!("../assets/camera64.png");

/// Bundled test photograph, values in `[0, 1]`.
pub fn camera64() -> Tensor<f64> {
    decode_png_gray(CAMERA64).expect("bundled png decodes")
}

/// Box-average downsampling by an integer factor.
pub fn downsample(t: &Tensor<f64>, factor: usize) -> Result<Tensor<f64>> {
    if factor == 0 {
        return Err(Error::InvalidArgument("downsample factor must be positive".into()));
    }
    if factor == 1 {
        return Ok(t.clone());
    }
    let cube = t.clone().into_cube()?;
    let (k, h, w) = cube.dims3()?;
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::InvalidArgument(format!(
            "{h}x{w} is not divisible by downsample factor {factor}"
        )));
    }
    let (oh, ow) = (h / factor, w / factor);
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = vec![0.0; k * oh * ow];
    for c in 0..k {
        let s = cube.slice(c);
        for y in 0..h {
            for x in 0..w {
                out[(c * oh + y / factor) * ow + x / factor] += s[y * w + x] * norm;
            }
        }
    }
    let shape: Vec<usize> = if t.rank() == 2 { vec![oh, ow] } else { vec![k, oh, ow] };
    Tensor::from_vec(&shape, out)
}

/// Occluding random disks with power-law radii ("dead leaves"), each with a
/// linear shading ramp, under a smooth illumination gradient. Values in
/// `[0, 1]`.
pub fn dead_leaves(h: usize, w: usize, seed: u64) -> Tensor<f64> {
    let mut r = rng::seeded(seed, streams::SCENE);
    let mut img = vec![f64::NAN; h * w];
    let size = h.max(w) as f64;
    let (rmin, rmax) = (size / 24.0, size / 3.0);
    let mut left = h * w;
    for _ in 0..20_000 {
        if left == 0 {
            break;
        }
        // Inverse-cube radius density, sampled by inverting its CDF.
        let u = rng::uniform(&mut r, 0.0, 1.0);
        let rad = 1.0 / (1.0 / (rmin * rmin) - u * (1.0 / (rmin * rmin) - 1.0 / (rmax * rmax))).sqrt();
        let cy = rng::uniform(&mut r, -rad, h as f64 + rad);
        let cx = rng::uniform(&mut r, -rad, w as f64 + rad);
        let base = rng::uniform(&mut r, 0.1, 0.9);
        let (gy, gx) = (rng::uniform(&mut r, -0.3, 0.3), rng::uniform(&mut r, -0.3, 0.3));
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if !img[i].is_nan() {
                    continue;
                }
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                if dy * dy + dx * dx <= rad * rad {
                    img[i] = base + (gy * dy + gx * dx) / rmax;
                    left -= 1;
                }
            }
        }
    }
    let data = img
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (y, x) = ((i / w) as f64 / h as f64, (i % w) as f64 / w as f64);
            let v = if v.is_nan() { 0.5 } else { v };
            (v * (0.8 + 0.2 * (x + 0.5 * y))).clamp(0.0, 1.0)
        })
        .collect();
    Tensor::from_vec(&[h, w], data).expect("finite by construction")
}

/// `frames` frames of a bright square crossing a static textured background
/// along a straight line, one frame per step.
pub fn moving_square(frames: usize, h: usize, w: usize, seed: u64) -> Result<Tensor<f64>> {
    if frames == 0 || h < 4 || w < 4 {
        return Err(Error::InvalidArgument("video needs frames and at least 4x4 pixels".into()));
    }
    let bg = dead_leaves(h, w, seed).scale(0.5);
    let side = (h.min(w) / 4).max(2) as f64;
    let mut r = rng::seeded(seed, streams::SCENE);
    let y0 = rng::uniform(&mut r, 0.0, h as f64 - side);
    let y1 = rng::uniform(&mut r, 0.0, h as f64 - side);
    let level = rng::uniform(&mut r, 0.85, 1.0);
    let mut slices = Vec::with_capacity(frames);
    for f in 0..frames {
        let t = if frames == 1 { 0.0 } else { f as f64 / (frames - 1) as f64 };
        let (sy, sx) = (y0 + t * (y1 - y0), t * (w as f64 - side));
        let mut s = bg.clone();
        for y in 0..h {
            for x in 0..w {
                // Area coverage of the pixel by the square, for sub-pixel motion.
                let cy = overlap(y as f64, sy, side);
                let cx = overlap(x as f64, sx, side);
                let c = cy * cx;
                let v = &mut s.data_mut()[y * w + x];
                *v = (1.0 - c) * *v + c * level;
            }
        }
        slices.push(s);
    }
    Tensor::stack(&slices)
}

fn overlap(p: f64, start: f64, len: f64) -> f64 {
    ((p + 1.0).min(start + len) - p.max(start)).clamp(0.0, 1.0)
}

/// Spectral reflectance of one material: a sum of Gaussian bumps over the
/// band index, scaled into `[0.05, 1]`.
fn random_spectrum(r: &mut SeededRng, bands: usize) -> Vec<f64> {
    let bumps = 1 + (rng::uniform(r, 0.0, 2.999) as usize);
    let mut s = vec![0.05; bands];
    for _ in 0..bumps {
        let c = rng::uniform(r, 0.0, bands as f64 - 1.0);
        let width = rng::uniform(r, 0.08, 0.3) * bands as f64;
        let amp = rng::uniform(r, 0.3, 0.9);
        for (k, v) in s.iter_mut().enumerate() {
            *v += amp * (-(k as f64 - c).powi(2) / (2.0 * width * width)).exp();
        }
    }
    let peak = s.iter().cloned().fold(0.0, f64::max);
    s.iter().map(|v| v / peak).collect()
}

/// `[K, H, W]` cube: a few materials on a dim broadband background, laid
/// out by the dead-leaves partition and modulated by its shading.
pub fn spectral_cube(bands: usize, h: usize, w: usize, seed: u64) -> Result<Tensor<f64>> {
    if bands == 0 || h < 4 || w < 4 {
        return Err(Error::InvalidArgument("cube needs bands and at least 4x4 pixels".into()));
    }
    let mut r = rng::seeded(seed, streams::SCENE);
    let materials: Vec<Vec<f64>> = (0..5).map(|_| random_spectrum(&mut r, bands)).collect();
    let layout = dead_leaves(h, w, seed ^ 0x5eed);
    let mut data = vec![0.0; bands * h * w];
    for i in 0..h * w {
        let v = layout.data()[i];
        let m = ((v * 7.0) as usize).min(6);
        for k in 0..bands {
            data[k * h * w + i] = if m < materials.len() {
                materials[m][k] * (0.6 + 0.4 * v)
            } else {
                0.1
            };
        }
    }
    Tensor::from_vec(&[bands, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_photo_loads() {
        let t = camera64();
        assert_eq!(t.shape(), &[64, 64]);
        assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(t.max_abs() > 0.8);
    }

    #[test]
    fn downsample_averages_blocks() {
        let t = Tensor::from_vec(&[2, 4], vec![1.0, 3.0, 5.0, 7.0, 1.0, 3.0, 5.0, 7.0]).unwrap();
        assert_eq!(downsample(&t, 2).unwrap().data(), &[2.0, 6.0]);
        assert!(downsample(&t, 3).is_err());
    }

    #[test]
    fn generators_are_deterministic_and_bounded() {
        assert_eq!(dead_leaves(32, 24, 3), dead_leaves(32, 24, 3));
        let v = moving_square(8, 32, 32, 1).unwrap();
        assert_eq!(v.shape(), &[8, 32, 32]);
        assert!(v.data().iter().all(|x| (0.0..=1.0).contains(x)));
        assert_ne!(v.slice(0), v.slice(7));
        let c = spectral_cube(8, 32, 32, 2).unwrap();
        assert_eq!(c, spectral_cube(8, 32, 32, 2).unwrap());
        assert!(c.data().iter().all(|x| (0.0..=1.0).contains(x)));
    }
}

//! Sensor weighting stacks `M_k[x, y]`: erasure patterns, rolling-shutter
//! row partitions and spectral filter arrays.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::{self, streams};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskKind {
    Erasure,
    ShutterSingle,
    ShutterDual,
    SpectralFilter,
    Custom,
}

impl MaskKind {
    fn is_binary(self) -> bool {
        matches!(
            self,
            MaskKind::Erasure | MaskKind::ShutterSingle | MaskKind::ShutterDual
        )
    }

    fn is_shutter(self) -> bool {
        matches!(self, MaskKind::ShutterSingle | MaskKind::ShutterDual)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShutterMode {
    Single,
    Dual,
}

/// Per-`k` sensor weights, stored `[K, H, W]` with entries in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskStack<T> {
    masks: Tensor<T>,
    kind: MaskKind,
}

impl<T: Real> MaskStack<T> {
    /// Validates and wraps a mask tensor. Rank-2 input is treated as `K = 1`.
    pub fn new(masks: Tensor<T>, kind: MaskKind) -> Result<Self> {
        let masks = masks.into_cube()?;
        let (k, _, _) = masks.dims3()?;
        if kind == MaskKind::Erasure && k != 1 {
            return Err(Error::invalid("erasure masks have exactly one slice"));
        }
        for &v in masks.data() {
            if !(T::zero()..=T::one()).contains(&v) {
                return Err(Error::invalid(format!("mask entry {v} outside [0, 1]")));
            }
            if kind.is_binary() && v != T::zero() && v != T::one() {
                return Err(Error::invalid(format!("{kind:?} masks must be binary, found {v}")));
            }
        }
        if kind.is_shutter() {
            let cover = crate::tensor::reduce_sum_k(&masks)?;
            if cover.data().iter().any(|&v| v != T::one()) {
                return Err(Error::invalid(
                    "shutter masks must expose every pixel exactly once",
                ));
            }
        }
        Ok(Self { masks, kind })
    }

    /// Single all-ones slice: the plain 2D model.
    pub fn unmasked(h: usize, w: usize) -> Self {
        Self {
            masks: Tensor::ones(&[1, h, w]),
            kind: MaskKind::Erasure,
        }
    }

    pub fn masks(&self) -> &Tensor<T> {
        &self.masks
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn channels(&self) -> usize {
        self.masks.shape()[0]
    }

    pub fn sensor_dims(&self) -> (usize, usize) {
        (self.masks.shape()[1], self.masks.shape()[2])
    }

    pub fn slice(&self, k: usize) -> &[T] {
        self.masks.slice(k)
    }

    /// Pixels seen by at least one slice (`sum_k M_k > 0`), as a 0/1 image.
    pub fn coverage(&self) -> Tensor<T> {
        let sum = crate::tensor::reduce_sum_k(&self.masks).expect("rank-3 masks");
        sum.map(|v| if v > T::zero() { T::one() } else { T::zero() })
    }
}

/// Binary `H x W` mask with exactly `round(fraction * H * W)` zeros at
/// positions chosen by [`rng::sample_without_replacement`] on the erasure
/// stream of `seed`.
pub fn make_erasure_mask<T: Real>(
    h: usize,
    w: usize,
    erase_fraction: f64,
    seed: u64,
) -> Result<MaskStack<T>> {
    if !(0.0..=1.0).contains(&erase_fraction) {
        return Err(Error::invalid(format!(
            "erase fraction {erase_fraction} outside [0, 1]"
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::invalid("mask extents must be positive"));
    }
    let n = h * w;
    let count = (erase_fraction * n as f64).round() as usize;
    let mut data = vec![T::one(); n];
    let mut r = rng::seeded(seed, streams::ERASURE);
    for i in rng::sample_without_replacement(&mut r, n, count) {
        data[i] = T::zero();
    }
    Ok(MaskStack {
        masks: Tensor::from_raw(&[1, h, w], data),
        kind: MaskKind::Erasure,
    })
}

/// Rolling-shutter row partition. `Single` exposes rows `[k r, (k+1) r)` in
/// frame `k`; `Dual` additionally exposes the mirrored band
/// `[H - (k+1) r, H - k r)`, so the two read lines meet in the middle.
pub fn make_shutter_masks<T: Real>(
    h: usize,
    w: usize,
    lines_per_frame: usize,
    mode: ShutterMode,
) -> Result<MaskStack<T>> {
    let r = lines_per_frame;
    if r == 0 || w == 0 || h == 0 {
        return Err(Error::invalid("shutter geometry must be positive"));
    }
    let band = match mode {
        ShutterMode::Single => r,
        ShutterMode::Dual => 2 * r,
    };
    if h % band != 0 {
        return Err(Error::invalid(format!(
            "{mode:?} shutter needs sensor height {h} divisible by {band} \
             (lines_per_frame = {r})"
        )));
    }
    let frames = h / band;
    let mut data = vec![T::zero(); frames * h * w];
    for k in 0..frames {
        let mut rows: Vec<usize> = (k * r..(k + 1) * r).collect();
        if mode == ShutterMode::Dual {
            rows.extend(h - (k + 1) * r..h - k * r);
        }
        for y in rows {
            let start = (k * h + y) * w;
            data[start..start + w].fill(T::one());
        }
    }
    let kind = match mode {
        ShutterMode::Single => MaskKind::ShutterSingle,
        ShutterMode::Dual => MaskKind::ShutterDual,
    };
    Ok(MaskStack {
        masks: Tensor::from_raw(&[frames, h, w], data),
        kind,
    })
}

/// Tiled spectral filter array. `responses` is `[sh * sw, K]`: row `f` is the
/// transmission of filter `f` in each band. Filters are assigned raster order
/// within each `sh x sw` superpixel, so pixel `(y, x)` carries filter
/// `(y % sh) * sw + (x % sw)`.
pub fn make_filter_masks<T: Real>(
    h: usize,
    w: usize,
    channels: usize,
    superpixel: (usize, usize),
    responses: &Tensor<T>,
) -> Result<MaskStack<T>> {
    let (sh, sw) = superpixel;
    if sh == 0 || sw == 0 || channels == 0 {
        return Err(Error::invalid("filter layout extents must be positive"));
    }
    if sh * sw < channels {
        return Err(Error::invalid(format!(
            "{sh}x{sw} superpixel cannot hold {channels} channels"
        )));
    }
    if h % sh != 0 || w % sw != 0 {
        return Err(Error::invalid(format!(
            "sensor {h}x{w} is not tiled by {sh}x{sw} superpixels"
        )));
    }
    responses.expect_shape(&[sh * sw, channels])?;
    let mut data = vec![T::zero(); channels * h * w];
    for y in 0..h {
        for x in 0..w {
            let f = (y % sh) * sw + (x % sw);
            for k in 0..channels {
                data[(k * h + y) * w + x] = responses.data()[f * channels + k];
            }
        }
    }
    MaskStack::new(Tensor::from_raw(&[channels, h, w], data), MaskKind::SpectralFilter)
}

/// Indicator responses: filter `f` passes only band `floor(f * K / n)`.
pub fn ideal_filter_responses<T: Real>(filters: usize, channels: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); filters * channels];
    for f in 0..filters {
        data[f * channels + f * channels / filters] = T::one();
    }
    Tensor::from_raw(&[filters, channels], data)
}

/// Gaussian passbands: filter `f` is centred on band
/// `(f + 0.5) K / n - 0.5` with width `sigma` bands and unit peak.
pub fn gaussian_filter_responses<T: Real>(filters: usize, channels: usize, sigma: f64) -> Tensor<T> {
    let mut data = Vec::with_capacity(filters * channels);
    for f in 0..filters {
        let centre = (f as f64 + 0.5) * channels as f64 / filters as f64 - 0.5;
        for k in 0..channels {
            let d = k as f64 - centre;
            data.push(T::of((-d * d / (2.0 * sigma * sigma)).exp()));
        }
    }
    Tensor::from_raw(&[filters, channels], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::reduce_sum_k;

    #[test]
    fn erasure_counts_and_determinism() {
        let m = make_erasure_mask::<f32>(10, 10, 0.0, 1).unwrap();
        assert!(m.masks().data().iter().all(|&v| v == 1.0));
        let m = make_erasure_mask::<f32>(100, 100, 0.99, 7).unwrap();
        assert_eq!(m.masks().data().iter().filter(|&&v| v == 0.0).count(), 9900);
        let again = make_erasure_mask::<f32>(100, 100, 0.99, 7).unwrap();
        assert_eq!(m, again);
        assert!(make_erasure_mask::<f32>(4, 4, 1.5, 0).is_err());
    }

    #[test]
    fn single_shutter_rows() {
        let m = make_shutter_masks::<f64>(8, 3, 1, ShutterMode::Single).unwrap();
        assert_eq!(m.channels(), 8);
        for k in 0..8 {
            for y in 0..8 {
                let on = m.slice(k)[y * 3..(y + 1) * 3].iter().all(|&v| v == 1.0);
                assert_eq!(on, y == k);
            }
        }
    }

    #[test]
    fn dual_shutter_mirrored_bands() {
        let m = make_shutter_masks::<f64>(8, 2, 1, ShutterMode::Dual).unwrap();
        assert_eq!(m.channels(), 4);
        let rows_on: Vec<usize> = (0..8).filter(|&y| m.slice(0)[y * 2] == 1.0).collect();
        assert_eq!(rows_on, vec![0, 7]);
        let cover = reduce_sum_k(m.masks()).unwrap();
        assert!(cover.data().iter().all(|&v| v == 1.0));
        assert_eq!(
            make_shutter_masks::<f32>(144, 4, 1, ShutterMode::Dual)
                .unwrap()
                .channels(),
            72
        );
    }

    #[test]
    fn shutter_divisibility_is_checked() {
        let err = make_shutter_masks::<f32>(10, 4, 3, ShutterMode::Single).unwrap_err();
        assert!(err.to_string().contains("divisible by 3"));
        assert!(make_shutter_masks::<f32>(12, 4, 4, ShutterMode::Dual).is_err());
    }

    #[test]
    fn ideal_filter_tiling() {
        let r = ideal_filter_responses::<f32>(64, 64);
        let m = make_filter_masks(32, 32, 64, (8, 8), &r).unwrap();
        for k in 0..64 {
            assert_eq!(m.slice(k).iter().filter(|&&v| v != 0.0).count(), 32 * 32 / 64);
        }
        let one = make_filter_masks(6, 4, 1, (2, 2), &Tensor::<f32>::ones(&[4, 1])).unwrap();
        assert!(one.masks().data().iter().all(|&v| v == 1.0));
        assert!(make_filter_masks(6, 4, 5, (2, 2), &Tensor::<f32>::ones(&[4, 5])).is_err());
        assert!(make_filter_masks(6, 5, 4, (2, 2), &Tensor::<f32>::ones(&[4, 4])).is_err());
    }

    #[test]
    fn gaussian_filter_column_sums_match_direct_total() {
        let (n, k, sigma) = (16, 8, 1.3);
        let r = gaussian_filter_responses::<f64>(n, k, sigma);
        let m = make_filter_masks(8, 8, k, (4, 4), &r).unwrap();
        let cover = reduce_sum_k(m.masks()).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let f = (y % 4) * 4 + x % 4;
                let centre = (f as f64 + 0.5) * k as f64 / n as f64 - 0.5;
                let mut total = 0.0;
                for band in 0..k {
                    total += (-(band as f64 - centre).powi(2) / (2.0 * sigma * sigma)).exp();
                }
                assert!((cover.data()[y * 8 + x] - total).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn validation_rejects_bad_stacks() {
        let bad = Tensor::<f32>::from_vec(&[1, 1, 2], vec![0.5, 1.0]).unwrap();
        assert!(MaskStack::new(bad.clone(), MaskKind::Erasure).is_err());
        assert!(MaskStack::new(bad, MaskKind::Custom).is_ok());
        let overlap = Tensor::<f32>::ones(&[2, 1, 2]);
        assert!(MaskStack::new(overlap, MaskKind::ShutterSingle).is_err());
    }
}

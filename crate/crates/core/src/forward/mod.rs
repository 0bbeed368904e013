//! The lensless measurement operator
//!
//! `b = sum_k M_k * crop(v_k (*) h)`: each scene slice is linearly convolved
//! with the PSF, cropped to the sensor window, weighted by its mask and
//! accumulated. With one all-ones slice this is the plain 2D model; with one
//! binary slice it is the 2D model with erasures.
//!
//! Convolutions run as spectral products on a `2H x 2W` zero-padded canvas,
//! which is large enough that no circular wrap-around reaches the window.
//! The PSF origin is its array center `(H/2, W/2)` (rounded down): a delta
//! there is the identity.

mod masks;

pub use masks::{
    gaussian_filter_responses, ideal_filter_responses, make_erasure_mask, make_filter_masks,
    make_shutter_masks, MaskKind, MaskStack, ShutterMode,
};

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::par;
use crate::real::Real;
use crate::tensor::{crop_center_into, pad_center_into, Tensor};

/// A linear map with an exact transpose.
pub trait LinearMap<T: Real>: Send + Sync {
    fn input_shape(&self) -> Vec<usize>;
    fn output_shape(&self) -> Vec<usize>;
    fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>>;
    fn adjoint(&self, y: &Tensor<T>) -> Result<Tensor<T>>;
}

/// Point spread function, held at unit l2 norm. The raw norm is kept so the
/// original amplitude can be restored.
#[derive(Clone, Debug, PartialEq)]
pub struct Psf<T> {
    kernel: Tensor<T>,
    raw_norm: f64,
}

impl<T: Real> Psf<T> {
    pub fn from_raw(image: Tensor<T>) -> Result<Self> {
        image.dims2()?;
        if !image.is_finite() {
            return Err(Error::NonFinite("psf".into()));
        }
        if image.data().iter().any(|&v| v < T::zero()) {
            return Err(Error::invalid("psf must be nonnegative"));
        }
        let raw_norm = image.norm();
        if raw_norm == 0.0 {
            return Err(Error::invalid("psf is all zero"));
        }
        let kernel = image.scale(T::of(1.0 / raw_norm));
        Ok(Self { kernel, raw_norm })
    }

    /// Unit impulse at `(H/2 + dy, W/2 + dx)`.
    pub fn delta(h: usize, w: usize, dy: isize, dx: isize) -> Result<Self> {
        let y = (h / 2) as isize + dy;
        let x = (w / 2) as isize + dx;
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            return Err(Error::invalid("delta offset outside the psf support"));
        }
        let mut t = Tensor::zeros(&[h, w]);
        t.data_mut()[y as usize * w + x as usize] = T::one();
        Self::from_raw(t)
    }

    pub fn kernel(&self) -> &Tensor<T> {
        &self.kernel
    }

    pub fn raw_norm(&self) -> f64 {
        self.raw_norm
    }

    pub fn raw(&self) -> Tensor<T> {
        self.kernel.scale(T::of(self.raw_norm))
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.kernel.shape()[0], self.kernel.shape()[1])
    }
}

/// `A`: PSF convolution, crop, per-slice masking and sum over slices.
/// Immutable once built; `apply`/`adjoint` may be called concurrently.
#[derive(Clone, Debug)]
pub struct ForwardModel<T: Real> {
    psf: Psf<T>,
    masks: MaskStack<T>,
    gain: f64,
    spectrum: Vec<Complex<T>>,
    fft: Fft2<T>,
}

impl<T: Real> ForwardModel<T> {
    pub fn new(psf: Psf<T>, masks: MaskStack<T>) -> Result<Self> {
        Self::with_gain(psf, masks, 1.0)
    }

    /// Same as [`ForwardModel::new`] with the unit-norm PSF scaled by `gain`.
    pub fn with_gain(psf: Psf<T>, masks: MaskStack<T>, gain: f64) -> Result<Self> {
        let (h, w) = psf.dims();
        if masks.sensor_dims() != (h, w) {
            let (mh, mw) = masks.sensor_dims();
            return Err(Error::shape(&[h, w], &[mh, mw]));
        }
        if !(gain.is_finite() && gain > 0.0) {
            return Err(Error::invalid(format!("gain {gain} must be positive")));
        }
        let (ph, pw) = (2 * h, 2 * w);
        let (cy, cx) = (h / 2, w / 2);
        let mut spectrum = vec![Complex::new(T::zero(), T::zero()); ph * pw];
        let g = T::of(gain);
        // Origin shift: kernel element (cy, cx) goes to canvas index (0, 0).
        for y in 0..h {
            let sy = (y + ph - cy) % ph;
            for x in 0..w {
                let sx = (x + pw - cx) % pw;
                spectrum[sy * pw + sx].re = psf.kernel().data()[y * w + x] * g;
            }
        }
        let fft = Fft2::new(ph, pw);
        fft.forward(&mut spectrum);
        Ok(Self {
            psf,
            masks,
            gain,
            spectrum,
            fft,
        })
    }

    pub fn psf(&self) -> &Psf<T> {
        &self.psf
    }

    pub fn masks(&self) -> &MaskStack<T> {
        &self.masks
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    /// The same operator in another precision.
    pub fn cast<U: Real>(&self) -> ForwardModel<U> {
        let psf = Psf {
            kernel: self.psf.kernel.cast(),
            raw_norm: self.psf.raw_norm,
        };
        let masks = MaskStack::new(self.masks.masks().cast(), self.masks.kind())
            .expect("casting preserves mask validity");
        ForwardModel::with_gain(psf, masks, self.gain).expect("casting preserves model validity")
    }

    /// `(K, H, W)` of the scene cube.
    pub fn scene_dims(&self) -> (usize, usize, usize) {
        let (h, w) = self.sensor_dims();
        (self.masks.channels(), h, w)
    }

    pub fn sensor_dims(&self) -> (usize, usize) {
        self.psf.dims()
    }

    /// Linear convolution of one `H x W` slice with the PSF (`conj = false`)
    /// or its correlation (`conj = true`), restricted to the centered window.
    fn filter_slice(&self, src: &[T], conj: bool) -> Vec<T> {
        let (h, w) = self.sensor_dims();
        let (ph, pw) = (2 * h, 2 * w);
        let mut canvas = vec![T::zero(); ph * pw];
        pad_center_into(src, h, w, &mut canvas, ph, pw);
        let mut buf: Vec<Complex<T>> = canvas.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.fft.forward(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b = if conj { *b * s.conj() } else { *b * s };
        }
        self.fft.inverse(&mut buf);
        for (c, b) in canvas.iter_mut().zip(&buf) {
            *c = b.re;
        }
        let mut out = vec![T::zero(); h * w];
        crop_center_into(&canvas, ph, pw, &mut out, h, w);
        out
    }
}

impl<T: Real> LinearMap<T> for ForwardModel<T> {
    fn input_shape(&self) -> Vec<usize> {
        let (k, h, w) = self.scene_dims();
        vec![k, h, w]
    }

    fn output_shape(&self) -> Vec<usize> {
        let (h, w) = self.sensor_dims();
        vec![h, w]
    }

    fn apply(&self, v: &Tensor<T>) -> Result<Tensor<T>> {
        v.expect_shape(&self.input_shape())?;
        let (k, h, w) = self.scene_dims();
        let slices = par::map_indexed(k, |i| {
            let mut s = self.filter_slice(v.slice(i), false);
            for (o, &m) in s.iter_mut().zip(self.masks.slice(i)) {
                *o = *o * m;
            }
            s
        });
        let mut out = vec![T::zero(); h * w];
        for s in &slices {
            for (o, &v) in out.iter_mut().zip(s) {
                *o = *o + v;
            }
        }
        Ok(Tensor::from_raw(&[h, w], out))
    }

    fn adjoint(&self, b: &Tensor<T>) -> Result<Tensor<T>> {
        b.expect_shape(&self.output_shape())?;
        let (k, h, w) = self.scene_dims();
        let slices = par::map_indexed(k, |i| {
            let weighted: Vec<T> = b
                .data()
                .iter()
                .zip(self.masks.slice(i))
                .map(|(&v, &m)| v * m)
                .collect();
            self.filter_slice(&weighted, true)
        });
        Ok(Tensor::from_raw(&[k, h, w], slices.concat()))
    }
}

/// `crop(v (*) h)` for a single image.
pub fn convolve_psf<T: Real>(v: &Tensor<T>, psf: &Psf<T>) -> Result<Tensor<T>> {
    let (h, w) = v.dims2()?;
    if psf.dims() != (h, w) {
        let (ph, pw) = psf.dims();
        return Err(Error::shape(&[ph, pw], &[h, w]));
    }
    let model = ForwardModel::new(psf.clone(), MaskStack::unmasked(h, w))?;
    Ok(Tensor::from_raw(&[h, w], model.filter_slice(v.data(), false)))
}

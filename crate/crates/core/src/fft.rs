//! 2D discrete Fourier transforms over row-major buffers.
//!
//! Convention: forward transform is unnormalized, inverse carries `1/(H*W)`,
//! so `inverse(forward(t)) == t` and `sum |t|^2 == sum |T|^2 / (H*W)`.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Complex-valued `H x W` spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor<T> {
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex<T>>,
}

/// Reusable plans for one `H x W` geometry.
#[derive(Clone)]
pub struct Fft2<T: Real> {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<T>>,
    row_inv: Arc<dyn Fft<T>>,
    col_fwd: Arc<dyn Fft<T>>,
    col_inv: Arc<dyn Fft<T>>,
}

impl<T: Real> std::fmt::Debug for Fft2<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.height, self.width)
    }
}

impl<T: Real> Fft2<T> {
    pub fn new(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0);
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn forward(&self, buf: &mut [Complex<T>]) {
        self.run(buf, &self.row_fwd, &self.col_fwd);
    }

    pub fn inverse(&self, buf: &mut [Complex<T>]) {
        self.run(buf, &self.row_inv, &self.col_inv);
        let s = T::one() / T::of((self.height * self.width) as f64);
        for v in buf.iter_mut() {
            *v = *v * s;
        }
    }

    fn run(&self, buf: &mut [Complex<T>], rows: &Arc<dyn Fft<T>>, cols: &Arc<dyn Fft<T>>) {
        let (h, w) = (self.height, self.width);
        assert_eq!(buf.len(), h * w);
        rows.process(buf);
        let mut t = vec![Complex::new(T::zero(), T::zero()); h * w];
        transpose(buf, &mut t, h, w);
        cols.process(&mut t);
        transpose(&t, buf, w, h);
    }
}

fn transpose<T: Copy>(src: &[T], dst: &mut [T], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Forward 2D DFT of a real image.
pub fn fft2_forward<T: Real>(t: &Tensor<T>) -> Result<ComplexTensor<T>> {
    let (h, w) = t.dims2()?;
    if !t.is_finite() {
        return Err(Error::NonFinite("fft2 input".into()));
    }
    let mut data: Vec<Complex<T>> = t.data().iter().map(|&v| Complex::new(v, T::zero())).collect();
    Fft2::new(h, w).forward(&mut data);
    Ok(ComplexTensor {
        height: h,
        width: w,
        data,
    })
}

/// Inverse 2D DFT, returning the real part.
pub fn fft2_inverse_real<T: Real>(s: &ComplexTensor<T>) -> Result<Tensor<T>> {
    let mut data = s.data.clone();
    Fft2::new(s.height, s.width).inverse(&mut data);
    Tensor::from_vec(&[s.height, s.width], data.into_iter().map(|c| c.re).collect())
}

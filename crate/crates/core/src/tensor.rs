//! Dense row-major real tensors.
//!
//! Datacubes are stored as `[K, H, W]`: the `k` axis (frame or spectral band)
//! is the slowest-varying, rows next, columns fastest.

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    /// Builds a tensor, rejecting empty extents, length mismatches and
    /// non-finite entries.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("extents must be positive: {shape:?}")));
        }
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {count} elements, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor element {pos}")));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Unchecked constructor for values produced by internal arithmetic.
    pub(crate) fn from_raw(shape: &[usize], data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "extents must be positive");
        Self::from_raw(shape, vec![value; shape.iter().product()])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    /// Stacks equally shaped 2D slices into a `[K, H, W]` cube.
    pub fn stack(slices: &[Tensor<T>]) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::invalid("cannot stack zero slices"))?;
        let (h, w) = first.dims2()?;
        let mut data = Vec::with_capacity(slices.len() * h * w);
        for s in slices {
            if s.shape != first.shape {
                return Err(Error::shape(&first.shape, &s.shape));
            }
            data.extend_from_slice(&s.data);
        }
        Ok(Self::from_raw(&[slices.len(), h, w], data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// `(H, W)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [h, w] => Ok((h, w)),
            _ => Err(Error::invalid(format!(
                "expected a rank-2 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// `(K, H, W)` of a rank-3 tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [k, h, w] => Ok((k, h, w)),
            _ => Err(Error::invalid(format!(
                "expected a rank-3 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() || shape.contains(&0) {
            return Err(Error::shape(shape, &self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Slice `k` of a rank-3 tensor as a flat row-major `H*W` view.
    pub fn slice(&self, k: usize) -> &[T] {
        let plane: usize = self.shape[1..].iter().product();
        &self.data[k * plane..(k + 1) * plane]
    }

    pub fn slice_mut(&mut self, k: usize) -> &mut [T] {
        let plane: usize = self.shape[1..].iter().product();
        &mut self.data[k * plane..(k + 1) * plane]
    }

    /// Slice `k` of a rank-3 tensor as an owned rank-2 tensor.
    pub fn slice_tensor(&self, k: usize) -> Tensor<T> {
        Tensor::from_raw(&self.shape[1..], self.slice(k).to_vec())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_raw(&self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_shape(other.shape())?;
        Ok(Self::from_raw(
            &self.shape,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.expect_shape(other.shape())?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + alpha * b;
        }
        Ok(())
    }

    /// Inner product accumulated in double precision.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.expect_shape(other.shape())?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a.as_f64() * b.as_f64())
            .sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|&v| v.as_f64() * v.as_f64()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &v| m.max(v.as_f64().abs()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v.as_f64()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::from_raw(
            &self.shape,
            self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        )
    }

    pub fn expect_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::shape(shape, &self.shape));
        }
        Ok(())
    }

    /// Promotes a rank-2 image to a single-slice `[1, H, W]` cube; rank-3
    /// tensors pass through.
    pub fn into_cube(self) -> Result<Self> {
        match self.rank() {
            2 => {
                let shape = [1, self.shape[0], self.shape[1]];
                self.reshape(&shape)
            }
            3 => Ok(self),
            _ => Err(Error::invalid(format!(
                "expected an image or cube, got shape {:?}",
                self.shape
            ))),
        }
    }
}

/// Zero-pads an `H x W` image into the center of an `H2 x W2` canvas. The
/// source lands at offset `((H2-H)/2, (W2-W)/2)`, rounded down.
pub fn pad_center<T: Real>(t: &Tensor<T>, h2: usize, w2: usize) -> Result<Tensor<T>> {
    let (h, w) = t.dims2()?;
    if h2 < h || w2 < w {
        return Err(Error::invalid(format!(
            "pad target {h2}x{w2} is smaller than source {h}x{w}"
        )));
    }
    let mut out = vec![T::zero(); h2 * w2];
    pad_center_into(t.data(), h, w, &mut out, h2, w2);
    Ok(Tensor::from_raw(&[h2, w2], out))
}

/// Extracts the centered `H x W` window of an `H2 x W2` image.
pub fn crop_center<T: Real>(t: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let (h2, w2) = t.dims2()?;
    if h2 < h || w2 < w || h == 0 || w == 0 {
        return Err(Error::invalid(format!(
            "crop target {h}x{w} does not fit inside source {h2}x{w2}"
        )));
    }
    let mut out = vec![T::zero(); h * w];
    crop_center_into(t.data(), h2, w2, &mut out, h, w);
    Ok(Tensor::from_raw(&[h, w], out))
}

pub(crate) fn pad_center_into<T: Copy>(
    src: &[T],
    h: usize,
    w: usize,
    dst: &mut [T],
    h2: usize,
    w2: usize,
) {
    let (oy, ox) = ((h2 - h) / 2, (w2 - w) / 2);
    for y in 0..h {
        let row = (y + oy) * w2 + ox;
        dst[row..row + w].copy_from_slice(&src[y * w..(y + 1) * w]);
    }
}

pub(crate) fn crop_center_into<T: Copy>(
    src: &[T],
    h2: usize,
    w2: usize,
    dst: &mut [T],
    h: usize,
    w: usize,
) {
    let (oy, ox) = ((h2 - h) / 2, (w2 - w) / 2);
    for y in 0..h {
        let row = (y + oy) * w2 + ox;
        dst[y * w..(y + 1) * w].copy_from_slice(&src[row..row + w]);
    }
}

/// Sums a `[K, H, W]` cube over `k`, in increasing `k` order.
pub fn reduce_sum_k<T: Real>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let (k, h, w) = t.dims3()?;
    let mut out = t.slice(0).to_vec();
    for i in 1..k {
        for (o, &v) in out.iter_mut().zip(t.slice(i)) {
            *o = *o + v;
        }
    }
    Ok(Tensor::from_raw(&[h, w], out))
}

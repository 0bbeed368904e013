//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Tape`] records each operation of a forward pass together with whatever
//! it needs for its derivative (im2col buffers, normalized activations, ...).
//! [`Tape::backward`] then walks the records in reverse, propagating the
//! cotangent of a scalar loss back to every parameter and input.
//!
//! Activations are single-sample `[C, H, W]` tensors.

use crate::error::{Error, Result};
use crate::forward::LinearMap;
use crate::linalg::{gemm, MatRef};
use crate::real::Real;
use crate::tensor::Tensor;

pub const BATCH_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<'a, T> {
    Owned(Tensor<T>),
    Borrowed(&'a Tensor<T>),
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }

    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn im2col<T: Real>(&self, x: &[T]) -> Vec<T> {
        let (k, s, p) = (self.k, self.stride, self.pad);
        let hw = self.ho * self.wo;
        let mut cols = vec![T::zero(); self.patch() * hw];
        for c in 0..self.cin {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c * k + ky) * k + kx) * hw;
                    for oy in 0..self.ho {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = (c * self.h + iy as usize) * self.w;
                        for ox in 0..self.wo {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix >= 0 && ix < self.w as isize {
                                cols[row + oy * self.wo + ox] = x[src + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<T: Real>(&self, cols: &[T]) -> Vec<T> {
        let (k, s, p) = (self.k, self.stride, self.pad);
        let hw = self.ho * self.wo;
        let mut x = vec![T::zero(); self.cin * self.h * self.w];
        for c in 0..self.cin {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c * k + ky) * k + kx) * hw;
                    for oy in 0..self.ho {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = (c * self.h + iy as usize) * self.w;
                        for ox in 0..self.wo {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix >= 0 && ix < self.w as isize {
                                let v = &mut x[dst + ix as usize];
                                *v = *v + cols[row + oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }
}

/// Bilinear taps for doubling an axis of length `n` (half-pixel centers,
/// edge clamped): `(i0, i1, frac)` per output index.
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

enum Op<'a, T: Real> {
    Input,
    Param(usize),
    Conv2d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        geom: ConvGeom,
        cols: Option<Vec<T>>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Upsample2x {
        x: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Sigmoid {
        x: Var,
    },
    Linear {
        x: Var,
        map: &'a dyn LinearMap<T>,
    },
    MaskedMse {
        x: Var,
        residual: Vec<T>,
        count: f64,
    },
}

struct Node<'a, T: Real> {
    value: Value<'a, T>,
    op: Op<'a, T>,
}

pub struct Tape<'a, T: Real> {
    nodes: Vec<Node<'a, T>>,
}

impl<'a, T: Real> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<'a, T>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }

    /// Constant input (its gradient is still reported by [`Gradients::wrt`]).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input)
    }

    /// Trainable parameter number `index`, borrowed for the tape's lifetime.
    pub fn param(&mut self, index: usize, t: &'a Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Borrowed(t),
            op: Op::Param(index),
        });
        Var(self.nodes.len() - 1)
    }

    /// Square-kernel convolution with zero padding `k / 2`. `w` is
    /// `[Cout, Cin, k, k]`, `bias` is `[Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize) -> Result<Var> {
        let (cin, h, wd) = self.value(x).dims3()?;
        let ws = self.value(w).shape().to_vec();
        let [cout, wcin, k, k2] = ws[..] else {
            return Err(Error::invalid(format!("conv weight must be rank 4, got {ws:?}")));
        };
        if wcin != cin || k != k2 || k % 2 == 0 || stride == 0 {
            return Err(Error::invalid(format!(
                "conv weight {ws:?} incompatible with {cin} input channels / stride {stride}"
            )));
        }
        if let Some(b) = bias {
            self.value(b).expect_shape(&[cout])?;
        }
        let pad = k / 2;
        let geom = ConvGeom {
            cin,
            h,
            w: wd,
            cout,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (wd + 2 * pad - k) / stride + 1,
        };
        let hw = geom.ho * geom.wo;
        let cols = (!geom.pointwise()).then(|| geom.im2col(self.value(x).data()));
        let mut out = vec![T::zero(); cout * hw];
        {
            let b_data = cols.as_deref().unwrap_or(self.value(x).data());
            gemm(
                cout,
                geom.patch(),
                hw,
                MatRef::row_major(self.value(w).data(), geom.patch()),
                MatRef::row_major(b_data, hw),
                &mut out,
                false,
            );
        }
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for (c, row) in out.chunks_mut(hw).enumerate() {
                for v in row {
                    *v = *v + bv[c];
                }
            }
        }
        Ok(self.push(
            Tensor::from_raw(&[cout, geom.ho, geom.wo], out),
            Op::Conv2d {
                x,
                w,
                bias,
                geom,
                cols,
            },
        ))
    }

    /// Per-channel normalization with statistics of this single sample,
    /// followed by the affine map `gamma * xhat + beta`.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).dims3()?;
        self.value(gamma).expect_shape(&[c])?;
        self.value(beta).expect_shape(&[c])?;
        let n = h * w;
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![T::zero(); c * n];
        let mut out = vec![T::zero(); c * n];
        let mut inv_std = Vec::with_capacity(c);
        let nn = T::of(n as f64);
        for ch in 0..c {
            let src = &xs[ch * n..(ch + 1) * n];
            let mean = src.iter().copied().sum::<T>() / nn;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nn;
            let is = T::one() / (var + T::of(BATCH_NORM_EPS)).sqrt();
            inv_std.push(is);
            for i in 0..n {
                let xh = (src[i] - mean) * is;
                xhat[ch * n + i] = xh;
                out[ch * n + i] = g[ch] * xh + b[ch];
            }
        }
        Ok(self.push(
            Tensor::from_raw(&[c, h, w], out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::of(slope);
        let out = self.value(x).map(|v| if v > T::zero() { v } else { s * v });
        self.push(out, Op::LeakyRelu { x, slope: s })
    }

    /// Doubles both spatial extents by bilinear interpolation.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).dims3()?;
        let (ty, tx) = (upsample_taps(h), upsample_taps(w));
        let src = self.value(x).data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); c * h2 * w2];
        for ch in 0..c {
            let plane = &src[ch * h * w..(ch + 1) * h * w];
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                let ly = T::of(ly);
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let lx = T::of(lx);
                    let top = plane[y0 * w + x0] * (T::one() - lx) + plane[y0 * w + x1] * lx;
                    let bot = plane[y1 * w + x0] * (T::one() - lx) + plane[y1 * w + x1] * lx;
                    out[(ch * h2 + oy) * w2 + ox] = top * (T::one() - ly) + bot * ly;
                }
            }
        }
        Ok(self.push(Tensor::from_raw(&[c, h2, w2], out), Op::Upsample2x { x }))
    }

    /// Channel concatenation.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, h, w) = self.value(a).dims3()?;
        let (cb, hb, wb) = self.value(b).dims3()?;
        if (h, w) != (hb, wb) {
            return Err(Error::shape(&[cb, h, w], &[cb, hb, wb]));
        }
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        Ok(self.push(Tensor::from_raw(&[ca + cb, h, w], data), Op::Concat { a, b }))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .map(|v| T::one() / (T::one() + (-v).exp()));
        self.push(out, Op::Sigmoid { x })
    }

    /// Applies a fixed linear operator (e.g. the measurement model).
    pub fn linear(&mut self, x: Var, map: &'a dyn LinearMap<T>) -> Result<Var> {
        let out = map.apply(self.value(x))?;
        Ok(self.push(out, Op::Linear { x, map }))
    }

    /// Mean squared error against `target` over pixels where `mask` is
    /// nonzero (all pixels when `mask` is `None`). Produces a `[1]` scalar.
    pub fn masked_mse(&mut self, x: Var, target: &Tensor<T>, mask: Option<&Tensor<T>>) -> Result<Var> {
        let xv = self.value(x);
        target.expect_shape(xv.shape())?;
        if let Some(m) = mask {
            m.expect_shape(xv.shape())?;
        }
        let mut residual = Vec::with_capacity(xv.len());
        let mut count = 0.0;
        let mut sum = 0.0;
        for i in 0..xv.len() {
            let m = mask.map_or(T::one(), |m| m.data()[i]);
            let r = m * (xv.data()[i] - target.data()[i]);
            if m != T::zero() {
                count += 1.0;
            }
            sum += r.as_f64() * r.as_f64();
            residual.push(r);
        }
        if count == 0.0 {
            return Err(Error::invalid("loss mask selects no pixels"));
        }
        Ok(self.push(
            Tensor::from_raw(&[1], vec![T::of(sum / count)]),
            Op::MaskedMse { x, residual, count },
        ))
    }

    /// Index of the first node holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        (0..self.nodes.len()).find(|&i| !self.value(Var(i)).is_finite())
    }

    /// Signs of every leaky-rectifier input, in recording order. Finite
    /// difference checks compare these to detect steps that cross a kink.
    pub fn kink_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            if let Op::LeakyRelu { x, .. } = node.op {
                sig.extend(self.value(x).data().iter().map(|&v| v > T::zero()));
            }
        }
        sig
    }

    /// Reverse sweep from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid("backward needs a scalar loss"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(&[1]));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Input | Op::Param(_)) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(p) => Some((p, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { nodes: grads, params })
    }

    fn propagate(&self, node: &Node<'a, T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Conv2d {
                x,
                w,
                bias,
                geom,
                cols,
            } => {
                let hw = geom.ho * geom.wo;
                let patch = geom.patch();
                let gd = g.data();
                let xcols = cols.as_deref().unwrap_or(self.value(*x).data());
                let mut dw = vec![T::zero(); geom.cout * patch];
                gemm(
                    geom.cout,
                    hw,
                    patch,
                    MatRef::row_major(gd, hw),
                    MatRef::transposed(xcols, hw),
                    &mut dw,
                    false,
                );
                accumulate(grads, *w, Tensor::from_raw(self.value(*w).shape(), dw));
                if let Some(b) = bias {
                    let db = gd.chunks(hw).map(|row| row.iter().copied().sum()).collect();
                    accumulate(grads, *b, Tensor::from_raw(&[geom.cout], db));
                }
                let mut dcols = vec![T::zero(); patch * hw];
                gemm(
                    patch,
                    geom.cout,
                    hw,
                    MatRef::transposed(self.value(*w).data(), patch),
                    MatRef::row_major(gd, hw),
                    &mut dcols,
                    false,
                );
                let dx = if geom.pointwise() {
                    dcols
                } else {
                    geom.col2im(&dcols)
                };
                accumulate(grads, *x, Tensor::from_raw(&[geom.cin, geom.h, geom.w], dx));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (c, h, w) = self.value(*x).dims3()?;
                let n = h * w;
                let nn = T::of(n as f64);
                let gam = self.value(*gamma).data();
                let gd = g.data();
                let mut dx = vec![T::zero(); c * n];
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for ch in 0..c {
                    let r = ch * n..(ch + 1) * n;
                    let (dy, xh) = (&gd[r.clone()], &xhat[r]);
                    let sum_dy: T = dy.iter().copied().sum();
                    let sum_dy_xh: T = dy.iter().zip(xh).map(|(&a, &b)| a * b).sum();
                    dgamma[ch] = sum_dy_xh;
                    dbeta[ch] = sum_dy;
                    let k = gam[ch] * inv_std[ch] / nn;
                    for i in 0..n {
                        dx[ch * n + i] = k * (nn * dy[i] - sum_dy - xh[i] * sum_dy_xh);
                    }
                }
                accumulate(grads, *gamma, Tensor::from_raw(&[c], dgamma));
                accumulate(grads, *beta, Tensor::from_raw(&[c], dbeta));
                accumulate(grads, *x, Tensor::from_raw(&[c, h, w], dx));
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x);
                let dx = xv.zip_map(g, |v, d| if v > T::zero() { d } else { *slope * d })?;
                accumulate(grads, *x, dx);
            }
            Op::Upsample2x { x } => {
                let (c, h, w) = self.value(*x).dims3()?;
                let (ty, tx) = (upsample_taps(h), upsample_taps(w));
                let (h2, w2) = (2 * h, 2 * w);
                let gd = g.data();
                let mut dx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
                    for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                        let ly = T::of(ly);
                        for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                            let lx = T::of(lx);
                            let d = gd[(ch * h2 + oy) * w2 + ox];
                            let top = d * (T::one() - ly);
                            let bot = d * ly;
                            plane[y0 * w + x0] = plane[y0 * w + x0] + top * (T::one() - lx);
                            plane[y0 * w + x1] = plane[y0 * w + x1] + top * lx;
                            plane[y1 * w + x0] = plane[y1 * w + x0] + bot * (T::one() - lx);
                            plane[y1 * w + x1] = plane[y1 * w + x1] + bot * lx;
                        }
                    }
                }
                accumulate(grads, *x, Tensor::from_raw(&[c, h, w], dx));
            }
            Op::Concat { a, b } => {
                let sa = self.value(*a).shape().to_vec();
                let sb = self.value(*b).shape().to_vec();
                let na = self.value(*a).len();
                accumulate(grads, *a, Tensor::from_raw(&sa, g.data()[..na].to_vec()));
                accumulate(grads, *b, Tensor::from_raw(&sb, g.data()[na..].to_vec()));
            }
            Op::Sigmoid { x } => {
                let y = match &node.value {
                    Value::Owned(t) => t,
                    Value::Borrowed(t) => *t,
                };
                let dx = y.zip_map(g, |s, d| d * s * (T::one() - s))?;
                accumulate(grads, *x, dx);
            }
            Op::Linear { x, map } => {
                accumulate(grads, *x, map.adjoint(g)?);
            }
            Op::MaskedMse { x, residual, count } => {
                let scale = g.data()[0] * T::of(2.0 / count);
                let shape = self.value(*x).shape().to_vec();
                accumulate(
                    grads,
                    *x,
                    Tensor::from_raw(&shape, residual.iter().map(|&r| r * scale).collect()),
                );
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.axpy(T::one(), &g).expect("gradient shapes agree"),
        slot @ None => *slot = Some(g),
    }
}

/// Result of a reverse sweep.
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: Vec<(usize, usize)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to an input or parameter node (`None` when the
    /// loss does not depend on it).
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].as_ref()
    }

    /// Gradients for parameters `0..count`, zero-filled where unused.
    pub fn params(&self, shapes: &[&[usize]]) -> Vec<Tensor<T>> {
        let mut out: Vec<Tensor<T>> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
        for &(p, node) in &self.params {
            if let Some(g) = &self.nodes[node] {
                out[p].axpy(T::one(), g).expect("parameter gradient shape");
            }
        }
        out
    }
}

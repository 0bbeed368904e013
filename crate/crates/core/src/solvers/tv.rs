//! Weighted anisotropic total variation on `[K, H, W]` cubes.

use serde::{Deserialize, Serialize};

use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TvDims {
    /// Differences along x and y within each slice.
    #[serde(rename = "2d")]
    Two,
    /// Differences along x, y and k.
    #[serde(rename = "3d")]
    Three,
}

/// Forward finite differences scaled per axis. Only valid differences are
/// taken (no wrap, no difference against an implicit zero past the edge), so
/// `||D v||_1 = sum w_x |dx v| + w_y |dy v| + w_k |dk v|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvOperator {
    /// `(w_x, w_y, w_k)`
    pub weights: [f64; 3],
    pub dims: TvDims,
}

impl Default for TvOperator {
    fn default() -> Self {
        Self {
            weights: [1.0, 1.0, 1.0],
            dims: TvDims::Three,
        }
    }
}

/// Difference field: one component per axis, each shaped like the cube;
/// entries past the last valid difference stay zero.
#[derive(Clone, Debug)]
pub(crate) struct Field<T> {
    pub(crate) parts: [Vec<T>; 3],
}

impl<T: Real> Field<T> {
    pub(crate) fn zeros(n: usize) -> Self {
        Self {
            parts: [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]],
        }
    }
}

impl TvOperator {
    pub fn two_d(wx: f64, wy: f64) -> Self {
        Self {
            weights: [wx, wy, 0.0],
            dims: TvDims::Two,
        }
    }

    pub fn three_d(wx: f64, wy: f64, wk: f64) -> Self {
        Self {
            weights: [wx, wy, wk],
            dims: TvDims::Three,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite() && *w >= 0.0)
    }

    fn active_weights(&self) -> [f64; 3] {
        match self.dims {
            TvDims::Two => [self.weights[0], self.weights[1], 0.0],
            TvDims::Three => self.weights,
        }
    }

    /// Upper bound on `||D||^2` (each weighted axis contributes `4 w^2`).
    pub fn norm_bound_sq(&self) -> f64 {
        self.active_weights().iter().map(|w| 4.0 * w * w).sum()
    }

    pub(crate) fn forward<T: Real>(&self, v: &Tensor<T>, out: &mut Field<T>) {
        let (k, h, w) = v.dims3().expect("tv operates on cubes");
        let [wx, wy, wk] = self.active_weights().map(T::of);
        let d = v.data();
        let [fx, fy, fk] = &mut out.parts;
        for kk in 0..k {
            for y in 0..h {
                for x in 0..w {
                    let i = (kk * h + y) * w + x;
                    fx[i] = if x + 1 < w { wx * (d[i + 1] - d[i]) } else { T::zero() };
                    fy[i] = if y + 1 < h { wy * (d[i + w] - d[i]) } else { T::zero() };
                    fk[i] = if kk + 1 < k { wk * (d[i + h * w] - d[i]) } else { T::zero() };
                }
            }
        }
    }

    /// `D^T p`, accumulated into `out` (overwritten).
    pub(crate) fn transpose<T: Real>(&self, p: &Field<T>, shape: (usize, usize, usize), out: &mut [T]) {
        let (k, h, w) = shape;
        let [wx, wy, wk] = self.active_weights().map(T::of);
        let [px, py, pk] = &p.parts;
        for kk in 0..k {
            for y in 0..h {
                for x in 0..w {
                    let i = (kk * h + y) * w + x;
                    let mut acc = T::zero();
                    if x + 1 < w {
                        acc = acc - wx * px[i];
                    }
                    if x > 0 {
                        acc = acc + wx * px[i - 1];
                    }
                    if y + 1 < h {
                        acc = acc - wy * py[i];
                    }
                    if y > 0 {
                        acc = acc + wy * py[i - w];
                    }
                    if kk + 1 < k {
                        acc = acc - wk * pk[i];
                    }
                    if kk > 0 {
                        acc = acc + wk * pk[i - h * w];
                    }
                    out[i] = acc;
                }
            }
        }
    }

    /// `||D v||_1`
    pub fn norm<T: Real>(&self, v: &Tensor<T>) -> f64 {
        let mut f = Field::zeros(v.len());
        self.forward(v, &mut f);
        f.parts
            .iter()
            .flat_map(|p| p.iter())
            .map(|x| x.as_f64().abs())
            .sum()
    }
}

fn project<T: Real>(v: T, nonneg: bool) -> T {
    if nonneg && v < T::zero() {
        T::zero()
    } else {
        v
    }
}

/// Approximate proximal map of `tau_step * ||D v||_1` (plus the indicator of
/// `v >= 0` when `nonneg`), by fast gradient projection on the dual with
/// `inner_iters` steps. Input may be rank 2 or 3.
pub fn tv_prox<T: Real>(
    v: &Tensor<T>,
    tau_step: f64,
    tv: &TvOperator,
    nonneg: bool,
    inner_iters: usize,
) -> Tensor<T> {
    let cube = v.clone().into_cube().expect("tv_prox takes an image or cube");
    let shape = cube.dims3().unwrap();
    let lip = tv.norm_bound_sq();
    if tau_step <= 0.0 || lip == 0.0 || inner_iters == 0 {
        return v.map(|x| project(x, nonneg));
    }
    let n = cube.len();
    let lam = T::of(tau_step);
    let step = T::of(1.0 / (tau_step * lip));
    let x = cube.data();

    let mut p = Field::<T>::zeros(n);
    let mut r = Field::<T>::zeros(n);
    let mut grad = Field::<T>::zeros(n);
    let mut dt = vec![T::zero(); n];
    let mut z = Tensor::from_raw(&[shape.0, shape.1, shape.2], vec![T::zero(); n]);
    let mut t = 1.0f64;

    for _ in 0..inner_iters {
        tv.transpose(&r, shape, &mut dt);
        for ((zi, &xi), &di) in z.data_mut().iter_mut().zip(x).zip(&dt) {
            *zi = project(xi - lam * di, nonneg);
        }
        tv.forward(&z, &mut grad);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let beta = T::of((t - 1.0) / t_next);
        for a in 0..3 {
            for i in 0..n {
                let q = r.parts[a][i] + step * grad.parts[a][i];
                let q = q.max(-T::one()).min(T::one());
                r.parts[a][i] = q + beta * (q - p.parts[a][i]);
                p.parts[a][i] = q;
            }
        }
        t = t_next;
    }
    tv.transpose(&p, shape, &mut dt);
    let out: Vec<T> = x
        .iter()
        .zip(&dt)
        .map(|(&xi, &di)| project(xi - lam * di, nonneg))
        .collect();
    Tensor::from_raw(v.shape(), out)
}

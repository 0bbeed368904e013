//! FISTA for `argmin_{v >= 0} 1/2 ||b - A v||^2 + tau ||D v||_1`.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::tv::{tv_prox, TvOperator};
use crate::error::{Error, Result};
use crate::forward::LinearMap;
use crate::real::Real;
use crate::rng::{self, streams};
use crate::tensor::Tensor;

/// Step-size source for FISTA.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lipschitz {
    /// Power-iteration estimate, inflated by [`LIPSCHITZ_MARGIN`].
    Auto,
    Fixed(f64),
}

/// Power iteration approaches `||A^T A||` from below; the step uses this much
/// headroom.
pub const LIPSCHITZ_MARGIN: f64 = 1.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FistaConfig {
    pub tau: f64,
    pub max_iters: usize,
    pub inner_prox_iters: usize,
    pub lipschitz: Lipschitz,
    pub nonneg: bool,
    /// Stop when `|f_j - f_{j-1}| / |f_{j-1}|` falls below this; 0 disables.
    pub convergence_tol: f64,
    pub tv: TvOperator,
    /// Seed of the power-iteration start vector.
    pub seed: u64,
}

impl Default for FistaConfig {
    fn default() -> Self {
        Self {
            tau: 1e-4,
            max_iters: 2000,
            inner_prox_iters: 10,
            lipschitz: Lipschitz::Auto,
            nonneg: true,
            convergence_tol: 0.0,
            tv: TvOperator::default(),
            seed: 0,
        }
    }
}

impl FistaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!("tau {} must be >= 0", self.tau)));
        }
        if self.max_iters == 0 || self.inner_prox_iters == 0 {
            return Err(Error::invalid("iteration budgets must be positive"));
        }
        if let Lipschitz::Fixed(l) = self.lipschitz {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::invalid(format!("lipschitz constant {l} must be positive")));
            }
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::invalid("convergence_tol must be >= 0"));
        }
        if !self.tv.is_valid() {
            return Err(Error::invalid("tv weights must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub data_term: f64,
    pub tv_term: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct SolveReport<T> {
    pub estimate: Tensor<T>,
    pub trace: Vec<TraceRow>,
    pub iterations_run: usize,
    pub wall_time: Duration,
    pub lipschitz: f64,
    pub converged: bool,
}

impl<T> SolveReport<T> {
    pub fn final_objective(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.objective)
    }
}

/// Largest eigenvalue of `A^T A` by `iters` rounds of power iteration from a
/// seeded Gaussian start.
pub fn estimate_lipschitz<T: Real, M: LinearMap<T> + ?Sized>(
    model: &M,
    iters: usize,
    seed: u64,
) -> Result<f64> {
    if iters == 0 {
        return Err(Error::invalid("power iteration needs at least one step"));
    }
    let shape = model.input_shape();
    let n: usize = shape.iter().product();
    let mut r = rng::seeded(seed, streams::POWER_ITERATION);
    let mut x = Tensor::from_raw(
        &shape,
        (0..n).map(|_| T::of(rng::standard_normal(&mut r))).collect(),
    );
    x = x.scale(T::of(1.0 / x.norm()));
    let mut lambda = 0.0;
    for _ in 0..iters {
        let y = model.adjoint(&model.apply(&x)?)?;
        lambda = y.norm();
        if lambda == 0.0 || !lambda.is_finite() {
            return Err(Error::invalid("operator is zero or non-finite; no Lipschitz bound"));
        }
        x = y.scale(T::of(1.0 / lambda));
    }
    Ok(lambda)
}

fn data_term<T: Real>(ax: &Tensor<T>, b: &Tensor<T>) -> f64 {
    ax.data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| {
            let d = p.as_f64() - q.as_f64();
            d * d
        })
        .sum::<f64>()
        / 2.0
}

/// Runs FISTA from `v = 0`. Each iteration takes a gradient step on the data
/// term, applies the TV/nonnegativity prox and a Nesterov momentum update
/// `t' = (1 + sqrt(1 + 4 t^2)) / 2`. The trace records the objective at each
/// new iterate.
pub fn fista_tv<T: Real, M: LinearMap<T> + ?Sized>(
    model: &M,
    b: &Tensor<T>,
    cfg: &FistaConfig,
) -> Result<SolveReport<T>> {
    cfg.validate()?;
    b.expect_shape(&model.output_shape())?;
    let start = Instant::now();
    let lipschitz = match cfg.lipschitz {
        Lipschitz::Auto => estimate_lipschitz(model, 20, cfg.seed)? * LIPSCHITZ_MARGIN,
        Lipschitz::Fixed(l) => l,
    };
    let step = T::of(1.0 / lipschitz);
    let shape = model.input_shape();

    let mut x = Tensor::<T>::zeros(&shape);
    let mut ax = Tensor::<T>::zeros(b.shape());
    let mut y = x.clone();
    let mut ay = ax.clone();
    let mut t = 1.0f64;
    let mut trace = Vec::with_capacity(cfg.max_iters.min(100_000));
    let mut converged = false;
    let mut prev = data_term(&ax, b);

    for iteration in 1..=cfg.max_iters {
        let resid = ay.sub(b)?;
        let grad = model.adjoint(&resid)?;
        let mut z = y;
        z.axpy(-step, &grad)?;
        let x_new = tv_prox(&z, cfg.tau / lipschitz, &cfg.tv, cfg.nonneg, cfg.inner_prox_iters);
        let ax_new = model.apply(&x_new)?;

        let data = data_term(&ax_new, b);
        let reg = cfg.tau * cfg.tv.norm(&x_new);
        let objective = data + reg;
        if !objective.is_finite() {
            return Err(Error::Divergence {
                iteration,
                detail: format!("objective became {objective} (step 1/{lipschitz:.4e})"),
            });
        }
        trace.push(TraceRow {
            iteration,
            objective,
            data_term: data,
            tv_term: reg,
            seconds: start.elapsed().as_secs_f64(),
        });

        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let beta = T::of((t - 1.0) / t_next);
        y = x_new.clone();
        y.axpy(beta, &x_new.sub(&x)?)?;
        ay = ax_new.clone();
        ay.axpy(beta, &ax_new.sub(&ax)?)?;
        x = x_new;
        ax = ax_new;
        t = t_next;

        let change = (objective - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
        prev = objective;
        if cfg.convergence_tol > 0.0 && change < cfg.convergence_tol {
            converged = true;
            break;
        }
    }

    Ok(SolveReport {
        iterations_run: trace.len(),
        estimate: x,
        trace,
        wall_time: start.elapsed(),
        lipschitz,
        converged,
    })
}

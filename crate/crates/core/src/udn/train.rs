//! Fitting the generator to a single measurement.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::network::{init_model, UdnArchitecture, UdnModel};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::forward::LinearMap;
use crate::real::Real;
use crate::rng::{self, streams};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(model: &UdnModel<T>) -> Self {
        let zeros: Vec<Tensor<T>> = model.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected ADAM update of every weight.
pub fn adam_step<T: Real>(model: &mut UdnModel<T>, grads: &[Tensor<T>], state: &mut AdamState<T>, cfg: &AdamConfig) {
    assert_eq!(grads.len(), model.params().len());
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::of(1.0 / (1.0 - cfg.beta1.powi(t)));
    let c2 = T::of(1.0 / (1.0 - cfg.beta2.powi(t)));
    let (lr, eps) = (T::of(cfg.step_size), T::of(cfg.epsilon));
    for (((w, g), m), v) in model
        .params_mut()
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for (((wi, &gi), mi), vi) in w
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (T::one() - b1) * gi;
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            let mhat = *mi * c1;
            let vhat = *vi * c2;
            *wi = *wi - lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

/// Loss, per-parameter gradients, and the intermediate tensors of one pass.
#[derive(Clone, Debug)]
pub struct LossEval<T> {
    pub loss: f64,
    pub grads: Vec<Tensor<T>>,
    /// Generator output `v_gen`.
    pub output: Tensor<T>,
    /// Simulated measurement `A v_gen`.
    pub prediction: Tensor<T>,
}

/// Mean squared error between `A G(z; W)` and `b` over the pixels selected by
/// `pixel_mask` (all pixels when `None`), and its gradient with respect to
/// every weight by reverse-mode differentiation through the network and the
/// forward model.
pub fn loss_and_gradients<T: Real>(
    model: &UdnModel<T>,
    fm: &dyn LinearMap<T>,
    b: &Tensor<T>,
    pixel_mask: Option<&Tensor<T>>,
) -> Result<LossEval<T>> {
    let mut tape = Tape::new();
    let out = model.forward(&mut tape)?;
    let pred = tape.linear(out, fm)?;
    let loss = tape.masked_mse(pred, b, pixel_mask)?;
    let value = tape.value(loss).data()[0].as_f64();
    if !value.is_finite() {
        let at = tape.first_non_finite().unwrap_or(loss.index());
        return Err(Error::NonFinite(format!("loss (first bad tape node {at})")));
    }
    let grads = tape.backward(loss)?.params(&model.param_shapes());
    Ok(LossEval {
        loss: value,
        grads,
        output: tape.value(out).clone(),
        prediction: tape.value(pred).clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EarlyStopMode {
    /// Return the snapshot with the lowest training loss.
    BestLoss,
    /// Withhold a random subset of observed pixels from training and return
    /// the snapshot that predicts them best.
    HeldOutPixels,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyStop {
    pub mode: EarlyStopMode,
    pub holdout_fraction: f64,
    /// Snapshots without held-out improvement before stopping; 0 never stops.
    pub patience: usize,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            mode: EarlyStopMode::BestLoss,
            holdout_fraction: 0.02,
            patience: 10,
        }
    }
}

/// Multiplier applied to the ADAM step size as training progresses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Multiply by `factor` after every `every` iterations.
    Step { every: usize, factor: f64 },
    /// Half cosine from 1 at the first iteration to `floor` at the last.
    Cosine { floor: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UdnConfig {
    pub max_iters: usize,
    pub adam: AdamConfig,
    pub lr_schedule: LrSchedule,
    pub snapshot_every: usize,
    pub early_stop: EarlyStop,
}

impl Default for UdnConfig {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            adam: AdamConfig::default(),
            lr_schedule: LrSchedule::Constant,
            snapshot_every: 100,
            early_stop: EarlyStop::default(),
        }
    }
}

impl UdnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.snapshot_every == 0 {
            return Err(Error::invalid("max_iters and snapshot_every must be positive"));
        }
        let a = &self.adam;
        if !(a.step_size > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return Err(Error::invalid("adam hyperparameters out of range"));
        }
        match self.lr_schedule {
            LrSchedule::Constant => {}
            LrSchedule::Step { every, factor } => {
                if every == 0 || !(factor > 0.0 && factor <= 1.0) {
                    return Err(Error::invalid(format!(
                        "step schedule needs every > 0 and factor in (0, 1], got {every} and {factor}"
                    )));
                }
            }
            LrSchedule::Cosine { floor } => {
                if !(0.0..=1.0).contains(&floor) {
                    return Err(Error::invalid(format!("cosine floor {floor} must lie in [0, 1]")));
                }
            }
        }
        let f = self.early_stop.holdout_fraction;
        if self.early_stop.mode == EarlyStopMode::HeldOutPixels && !(f > 0.0 && f < 1.0) {
            return Err(Error::invalid(format!("holdout fraction {f} must lie in (0, 1)")));
        }
        Ok(())
    }
}

impl UdnConfig {
    /// ADAM step size for the update that follows `iteration` (1-based).
    pub fn step_size_at(&self, iteration: usize) -> f64 {
        let base = self.adam.step_size;
        match self.lr_schedule {
            LrSchedule::Constant => base,
            LrSchedule::Step { every, factor } => base * factor.powi(((iteration - 1) / every) as i32),
            LrSchedule::Cosine { floor } => {
                let span = (self.max_iters.max(2) - 1) as f64;
                let t = (iteration - 1) as f64 / span;
                base * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UdnTraceRow {
    pub iteration: usize,
    pub train_loss: f64,
    pub holdout_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct Snapshot<T> {
    pub iteration: usize,
    pub train_loss: f64,
    pub holdout_loss: Option<f64>,
    pub estimate: Tensor<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status")]
pub enum UdnStatus {
    Completed,
    /// Held-out loss stopped improving.
    EarlyStopped { iteration: usize },
    /// Loss went non-finite; the estimate is the best snapshot before it.
    Diverged { iteration: usize },
}

#[derive(Clone, Debug)]
pub struct UdnResult<T> {
    pub estimate: Tensor<T>,
    pub selected: usize,
    pub trace: Vec<UdnTraceRow>,
    pub snapshots: Vec<Snapshot<T>>,
    pub status: UdnStatus,
    pub model: UdnModel<T>,
}

impl<T> UdnResult<T> {
    pub fn selected_snapshot(&self) -> &Snapshot<T> {
        &self.snapshots[self.selected]
    }
}

/// Splits the observed sensor pixels into training and held-out sets. Only
/// pixels with nonzero `observed` weight are eligible, so erased pixels are
/// never held out.
pub fn holdout_split<T: Real>(observed: &Tensor<T>, fraction: f64, seed: u64) -> Result<(Tensor<T>, Tensor<T>)> {
    let eligible: Vec<usize> = (0..observed.len())
        .filter(|&i| observed.data()[i] != T::zero())
        .collect();
    let count = (fraction * eligible.len() as f64).round() as usize;
    if count == 0 || count >= eligible.len() {
        return Err(Error::invalid(format!(
            "holdout fraction {fraction} of {} observed pixels leaves an empty split",
            eligible.len()
        )));
    }
    let mut r = rng::seeded(seed, streams::HOLDOUT);
    let mut train = observed.map(|v| if v != T::zero() { T::one() } else { T::zero() });
    let mut hold = Tensor::zeros(observed.shape());
    for j in rng::sample_without_replacement(&mut r, eligible.len(), count) {
        let i = eligible[j];
        train.data_mut()[i] = T::zero();
        hold.data_mut()[i] = T::one();
    }
    Ok((train, hold))
}

fn masked_mse<T: Real>(pred: &Tensor<T>, b: &Tensor<T>, mask: &Tensor<T>) -> f64 {
    let mut n = 0.0;
    let mut s = 0.0;
    for ((&p, &q), &m) in pred.data().iter().zip(b.data()).zip(mask.data()) {
        if m != T::zero() {
            let d = p.as_f64() - q.as_f64();
            s += d * d;
            n += 1.0;
        }
    }
    s / n
}

/// Optimizes a freshly initialized generator against `b` with ADAM and
/// returns the snapshot chosen by the early-stopping rule.
///
/// The sensor pixels that the model can observe (`observed`, typically the
/// mask coverage) define the loss support. Iteration `i` evaluates the loss
/// for the current weights, records it, snapshots the generator output when
/// `i` is a multiple of `snapshot_every` or the last iteration, then updates.
pub fn reconstruct_udn<T: Real>(
    fm: &dyn LinearMap<T>,
    b: &Tensor<T>,
    observed: Option<&Tensor<T>>,
    arch: &UdnArchitecture,
    cfg: &UdnConfig,
    seed: u64,
) -> Result<UdnResult<T>> {
    cfg.validate()?;
    b.expect_shape(&fm.output_shape())?;
    let scene = fm.input_shape();
    if scene != [arch.output_channels, arch.height, arch.width] {
        return Err(Error::shape(&scene, &[arch.output_channels, arch.height, arch.width]));
    }
    let observed = match observed {
        Some(o) => {
            o.expect_shape(b.shape())?;
            o.clone()
        }
        None => Tensor::ones(b.shape()),
    };
    let (train_mask, hold_mask) = match cfg.early_stop.mode {
        EarlyStopMode::BestLoss => (observed, None),
        EarlyStopMode::HeldOutPixels => {
            let (t, h) = holdout_split(&observed, cfg.early_stop.holdout_fraction, seed)?;
            (t, Some(h))
        }
    };

    let mut model = init_model::<T>(arch, seed)?;
    let mut adam = AdamState::new(&model);
    let start = Instant::now();
    let mut trace = Vec::with_capacity(cfg.max_iters);
    let mut snapshots: Vec<Snapshot<T>> = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    let mut stale = 0usize;
    let mut status = UdnStatus::Completed;

    for iteration in 1..=cfg.max_iters {
        let eval = match loss_and_gradients(&model, fm, b, Some(&train_mask)) {
            Ok(e) => e,
            Err(Error::NonFinite(_)) => {
                status = UdnStatus::Diverged { iteration };
                break;
            }
            Err(e) => return Err(e),
        };
        let holdout_loss = hold_mask.as_ref().map(|h| masked_mse(&eval.prediction, b, h));
        trace.push(UdnTraceRow {
            iteration,
            train_loss: eval.loss,
            holdout_loss,
            seconds: start.elapsed().as_secs_f64(),
        });

        if iteration % cfg.snapshot_every == 0 || iteration == cfg.max_iters {
            let score = holdout_loss.unwrap_or(eval.loss);
            snapshots.push(Snapshot {
                iteration,
                train_loss: eval.loss,
                holdout_loss,
                estimate: eval.output,
            });
            if best.is_none_or(|(_, s)| score < s) {
                best = Some((snapshots.len() - 1, score));
                stale = 0;
            } else {
                stale += 1;
            }
            if hold_mask.is_some() && cfg.early_stop.patience > 0 && stale >= cfg.early_stop.patience {
                status = UdnStatus::EarlyStopped { iteration };
                break;
            }
        }
        if iteration < cfg.max_iters {
            let step = AdamConfig {
                step_size: cfg.step_size_at(iteration),
                ..cfg.adam
            };
            adam_step(&mut model, &eval.grads, &mut adam, &step);
        }
    }

    let Some((selected, _)) = best else {
        let iteration = match status {
            UdnStatus::Diverged { iteration } => iteration,
            _ => trace.len(),
        };
        return Err(Error::Divergence {
            iteration,
            detail: "loss became non-finite before the first snapshot".into(),
        });
    };
    Ok(UdnResult {
        estimate: snapshots[selected].estimate.clone(),
        selected,
        trace,
        snapshots,
        status,
        model,
    })
}

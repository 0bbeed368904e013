//! Untrained deep network reconstruction: a randomly initialized
//! encoder-decoder `G(z; W)` with fixed input `z` is fitted so that
//! `A G(z; W)` matches the measurement. No training data is involved; the
//! network structure itself acts as the image prior.

mod checkpoint;
mod network;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Manifest};
pub use network::{init_model, param_specs, Init, ParamSpec, UdnArchitecture, UdnModel};
pub use train::{
    adam_step, holdout_split, loss_and_gradients, reconstruct_udn, AdamConfig, AdamState, EarlyStop,
    EarlyStopMode, LossEval, LrSchedule, Snapshot, UdnConfig, UdnResult, UdnStatus, UdnTraceRow,
};

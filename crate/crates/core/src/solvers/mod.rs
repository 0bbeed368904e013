//! Convex baseline: FISTA with nonnegativity and weighted anisotropic TV.

mod fista;
mod tv;

pub use fista::{
    estimate_lipschitz, fista_tv, FistaConfig, Lipschitz, SolveReport, TraceRow,
    LIPSCHITZ_MARGIN,
};
pub use tv::{tv_prox, TvDims, TvOperator};

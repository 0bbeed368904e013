//! Reconstruction toolkit for mask-based compressive lensless imaging.
//!
//! * [`forward`]: the measurement operator (PSF convolution, crop, per-slice
//!   sensor masks) and its exact adjoint, plus erasure, rolling-shutter and
//!   spectral-filter mask generators.
//! * [`solvers`]: FISTA with nonnegativity and weighted anisotropic TV.
//! * [`udn`]: untrained encoder-decoder reconstruction, optimized with ADAM
//!   through the differentiable forward model.
//! * [`metrics`]: MSE/PSNR, SSIM, MS-SSIM and spectral cosine distance.

pub mod autodiff;
pub mod container;
pub mod error;
pub mod fft;
pub mod forward;
mod linalg;
pub mod metrics;
pub mod par;
pub mod real;
pub mod rng;
pub mod solvers;
pub mod tensor;
pub mod udn;

pub use error::{Error, Result};
pub use forward::{ForwardModel, LinearMap, MaskKind, MaskStack, Psf, ShutterMode};
pub use real::{DType, Real};
pub use tensor::Tensor;

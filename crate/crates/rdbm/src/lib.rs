//! Residual diffusion bridge processes at desk scale.
//!
//! A mean-reverting process conditioned to arrive exactly at a degraded
//! observation has closed-form Gaussian marginals whose noise term can be
//! modulated per pixel by the clean-degraded residual, so perturbation
//! (and learned restoration) concentrates where the data actually
//! differs. This crate implements that machinery end to end:
//!
//! - [`schedule`]: rate families and cumulative integrals
//! - [`bridge`]: closed-form coefficients, forward sampling, drifts,
//!   the h-term, residual-to-noise ratios and named variants
//! - [`sim`]: Euler-Maruyama Monte Carlo verification and the scalar
//!   Gaussian-conditioning posterior oracle
//! - [`sampler`]: deterministic and posterior reverse steps and the full
//!   reverse loop
//! - [`train`]: synthetic datasets, a small dense predictor, exact
//!   reverse-mode gradients and Adam
//! - [`metrics`], [`io`]: quality metrics and file formats
//! - [`verify`]: named self-checks behind the CLI
//!
//! The `rdbm` binary exposes tabulation, verification, training,
//! sampling, limit-reduction reports and noise-map export.

pub mod bridge;
pub mod cli;
pub mod error;
pub mod io;
pub mod math;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod sim;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{RdbmError, Result};
pub use tensor::TensorGrid;

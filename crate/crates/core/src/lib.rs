//! Saliency sampling bottleneck (SSB) primitives.
//!
//! The crate is `no_std` (with `alloc`) and holds everything that is pure
//! computation:
//!
//! - [`autodiff`]: a small NHWC tensor engine with reverse-mode gradients,
//!   enough to train residual networks (conv, batch norm, pooling, linear,
//!   cross entropy, SGD).
//! - [`sampler`]: saliency marginals, interval-overlap sampling weights,
//!   dense and run-length sparse sampling kernels, their adjoints and
//!   gradients, and the ablation samplers (bilinear, strided depthwise).
//! - [`network`]: the saliency head, the SSB layer, network specs and the
//!   builder that wraps non-first residual blocks of selected groups.
//! - [`flops`]: closed-form MAC/FLOP and parameter accounting.
//!
//! File formats, datasets and the command line live in the `ssb` crate.
//!
//! The `std` feature (on by default) enables batch-parallel convolution
//! kernels through rayon. Results do not depend on the thread count.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
mod error;
pub mod flops;
pub mod network;
mod real;
pub mod sampler;
mod tensor;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor;

//! Allocation-only core of a conditional self-attention GAN for line-map to
//! photo translation.
//!
//! The crate is `no_std` (it needs `alloc` and nothing else) and carries every
//! piece of pure computation:
//!
//! * [`tensor`] / [`autograd`]: a small reverse-mode differentiable tensor
//!   engine with the operations the generator and discriminator graphs use,
//!   plus [`adam`] and [`spectral`] normalization.
//! * [`csam`], [`generator`], [`discriminator`]: the conditional
//!   self-attention module, the masked-residual-unit encoder/decoder, and the
//!   shared-trunk multi-scale discriminator.
//! * [`loss`] and [`training`]: the full objective and the three-stage
//!   two-timescale training loop.
//! * [`linemap`]: edge probabilities to thinned line maps to exact Euclidean
//!   distance fields and condition pyramids.
//! * [`metrics`]: Inception score, Fréchet distance and kernel distance over
//!   pluggable feature providers.
//!
//! File formats, image decoding and the command line live in the `csagan`
//! companion crate.
#![no_std]

extern crate alloc;

pub mod adam;
pub mod autograd;
pub mod csam;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod gradcheck;
pub mod image;
mod kernels;
pub mod layers;
pub mod linalg;
pub mod linemap;
pub mod loss;
pub mod metrics;
pub mod precision;
pub mod rng;
pub mod spectral;
pub mod tensor;
pub mod toy;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;

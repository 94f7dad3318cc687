//! Privacy-preserving sequence representations through a vector-quantized
//! bottleneck.
//!
//! A small temporal encoder is trained to classify frame-level content while
//! its bottleneck activations are forced through a learnable codebook of `V`
//! prototype vectors. The finite codebook caps how much the representation
//! can carry, so nuisance information (who is speaking) gets squeezed out
//! while content information (what is said) survives — and `V` becomes the
//! knob that trades privacy against utility.
//!
//! The crate ships the whole experimental loop:
//!
//! - [`numerics`]: dense matrices, seeded random streams, a finite-difference
//!   gradient oracle;
//! - [`vq`]: nearest-prototype quantization, the codebook and commitment
//!   losses, straight-through gradients, and EMA dictionary maintenance;
//! - [`encoder`]: a manually differentiated temporal encoder with a
//!   bottleneck tap and a content-classification head;
//! - [`synthdata`]: a deterministic two-factor corpus generator with
//!   independently controllable content and speaker factors;
//! - [`training`]: joint optimization of encoder, head, and codebook;
//! - [`evaluation`]: speaker-verification EER, bootstrap confidence
//!   intervals, and frame-level content error;
//! - [`experiment`]: config parsing, the codebook-size sweep, and report
//!   emission used by the `vqpriv` command-line tool.

pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod numerics;
pub mod synthdata;
pub mod training;
pub mod vq;

#[cfg(doctest)]
mod book;

pub use error::{Error, Result};

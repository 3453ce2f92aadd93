//! Embroidery preview engine.
//!
//! Two routes turn a flat user image into an approximate embroidered preview:
//!
//! * [`styletransfer`] runs Gram-matrix style transfer, optionally split per
//!   color region ([`colorsplit`]) with one stitch swatch per region.
//! * [`embgan`] trains and runs a pair of cycle-consistent translators with
//!   spectrally normalized discriminators, an identity term and an
//!   L1-regularized embedding channel.
//!
//! Both sit on [`tensor`], a small reverse-mode autodiff library.

pub mod colorsplit;
pub mod dataio;
pub mod embgan;
pub mod error;
pub mod features;
pub mod gradsuite;
pub mod preview;
pub mod styletransfer;
pub mod tensor;

pub use dataio::Image;
pub use error::{Error, Result};
pub use tensor::{Graph, Real, Tensor, Var};

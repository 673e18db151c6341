//! Graph attention layer for dense feature maps, with a small differentiable
//! tensor engine, a toy pothole segmentation network built around the layer,
//! synthetic multi-modality data, and a k-fold pixel-metric harness.
//!
//! The accompanying book (`book/`) walks through each piece; its code
//! listings are compiled and run as doc-tests of this crate.

pub mod data;
pub mod error;
pub mod gal;
pub mod gradcheck;
pub mod kfold;
pub mod lattice;
mod linalg;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod seed;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use lattice::LatticeGraph;
pub use optim::{sgdm_step, Param};
pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::{Real, Tensor};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/lattice.md")]
    pub mod lattice {}
    #[doc = include_str!("../../../book/src/attention-layer.md")]
    pub mod attention_layer {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    pub mod autodiff {}
    #[doc = include_str!("../../../book/src/data.md")]
    pub mod data {}
    #[doc = include_str!("../../../book/src/network.md")]
    pub mod network {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
    #[doc = include_str!("../../../README.md")]
    pub mod readme {}
}

//! Core library for part-attribute recognition with shared concepts.
//!
//! An attribute such as "square is striped" factors into a *part* concept
//! (where to look) and a *pattern* concept (what to recognize there). The
//! model learns one attention vector per part and one binary classifier per
//! pattern on top of a small convolutional feature extractor, so attributes
//! that share a part or a pattern train the same underlying parameters, and
//! unseen (part, pattern) combinations can be recognized by pairing already
//! trained ones.
//!
//! Everything in this crate is pure computation over heap tensors: the
//! define-by-run autodiff tape, the backbone, the attention head, the
//! training loop, the synthetic scene generator, and the evaluation metrics.
//! File formats, checkpoints, and the CLI live in the companion `csn` crate.
//!
//! The crate is `no_std` (with `alloc`); all float math goes through `libm`
//! so results are identical regardless of the host's libm.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod backbone;
pub mod error;
pub mod head;
pub mod math;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod registry;
pub mod scene;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::Error;
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;

/// Result alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;

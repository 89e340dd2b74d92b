//! Open-world recognition laboratory.
//!
//! Three open-world recognition methods (NNO, DeepNNO, B-DOC) built on a
//! small reverse-mode autodiff core, three single-source domain
//! generalization plugins (transformation-set search, relative rotations,
//! self-challenging masking), a synthetic multi-domain benchmark, and the
//! incremental evaluation and hyperparameter validation protocols.

pub mod cli;
pub mod datagen;
pub mod dg;
pub mod error;
pub mod eval;
pub mod numerics;
pub mod owr;

pub use error::{Error, Result};

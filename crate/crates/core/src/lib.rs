//! Video set distillation.
//!
//! Synthesizes a handful of short videos per class from a labeled video set by
//! mixing a learnable per-instance feature pool into diverse segments, fusing
//! the segments along time, and matching student-network feature statistics
//! against real data.

pub mod error;
pub mod numerics;

pub use error::{Error, Result};
pub mod baselines;
pub mod dataio;
pub mod evalkit;
pub mod idtd;
pub mod rng;
pub mod student;

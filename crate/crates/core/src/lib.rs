//! Graph condensation by expanding-window trajectory matching.
//!
//! The pipeline has three phases:
//!
//! 1. [`buffer`]: expert GNNs are trained on the original graph with an
//!    easy-to-difficult curriculum ([`curriculum`]) and their parameter
//!    trajectories are saved.
//! 2. [`condenser`]: a small structure-free node set is optimized so that a
//!    few training steps on it reproduce segments of the expert
//!    trajectories, with a matching window that grows over iterations and an
//!    optional soft-label distillation term.
//! 3. [`evaluator`]: models trained on the condensed set are scored on the
//!    original graph; coreset baselines, clustering indices and an
//!    accumulated-error decomposition are provided alongside.
//!
//! Everything runs on the small reverse-mode engine in [`autodiff`].

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Tape ops are fallible, so they cannot implement the `std::ops` traits.
#![allow(clippy::should_implement_trait)]

pub mod autodiff;
pub mod buffer;
pub mod condenser;
pub mod curriculum;
pub mod evaluator;
pub mod graph;
pub mod models;
pub mod sparse;

pub use autodiff::{Matrix, Tape, Var};
pub use buffer::{BufferConfig, ExpertTrajectory};
pub use condenser::{CondensedSet, MatchingConfig, WindowMode};
pub use curriculum::{DifficultyProfile, PacingConfig, PacingKind};
pub use evaluator::{EvalProtocol, EvalReport};
pub use graph::{GraphDataset, NormalizedAdjacency, SbmConfig, Split};
pub use models::{Arch, ModelSpec, ParameterVector};

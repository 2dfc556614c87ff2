//! Hierarchical multimodal fusion trained with targeted Pareto gradient
//! integration, together with a deterministic synthetic-data harness.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] — dense 2-D tensors with tape-based reverse-mode autodiff,
//!   parameter groups, and a finite-difference oracle.
//! - [`pareto`] — the min-norm weighting problem over task gradients: the
//!   analytic two-task solution, Frank-Wolfe for larger task counts, and a
//!   brute-force simplex-grid oracle.
//! - [`model`] — a toy-scale hierarchical fusion network (text+audio, +images,
//!   +extra information) with a shared classification head and per-level
//!   cross-entropy losses.
//! - [`integrate`] — targeted Pareto gradient integration: per-module level
//!   gradients, angle-conflict filtering, relative weighting against the
//!   all-modal gradient, and weight truncation.
//! - [`optim`] / [`train`] — Adam with decoupled weight decay and the
//!   training loop with step reports.
//! - [`synth`] — seeded generator of labeled multimodal instances with
//!   controllable informativeness and inter-modality conflict, plus a
//!   Monte-Carlo Bayes-accuracy oracle.
//! - [`metrics`] / [`harness`] — macro-averaged binary metrics, experiment
//!   configs, training/sweep/ablation runners, and CSV/JSON-lines emission.
//!
//! With the `parallel` feature (default) dataset generation, the Monte-Carlo
//! oracle, and multi-seed experiment execution run on rayon; results are
//! bit-identical to the sequential build because all per-item randomness is
//! derived from (seed, item index).

pub mod error;
pub mod harness;
pub mod integrate;
pub mod metrics;
pub mod model;
pub mod optim;
pub(crate) mod par;
pub mod pareto;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

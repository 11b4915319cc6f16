//! Two-timescale hybrid federated learning (TT-HF).
//!
//! Devices are grouped into clusters. Inside every global aggregation
//! interval each device runs local SGD, and clusters occasionally run rounds
//! of device-to-device (D2D) consensus over a sparse graph. At the end of the
//! interval the server samples one device per cluster and averages their
//! models.
//!
//! The crate is organised bottom-up:
//!
//! * [`topology`]: cluster graphs, Metropolis consensus matrices, spectral
//!   contraction factors and the consensus iteration itself.
//! * [`data`]: synthetic tasks, label-skewed partitions and IDX ingestion.
//! * [`model`]: losses, gradients, mini-batch estimates and estimators for the
//!   smoothness / noise / diversity constants.
//! * [`engine`]: the training loop and the FedAvg-style baselines.
//! * [`analysis`]: closed-form bounds and the checks that compare them with
//!   measured trajectories, plus energy/delay accounting.
//!
//! The `book/` directory at the repository root walks through the same
//! material with runnable snippets; those snippets are compiled and run as
//! doctests of this crate.

pub mod analysis;
pub mod data;
pub mod engine;
mod linalg;
pub mod model;
pub mod rng;
pub mod topology;
mod vector;

pub use vector::{ModelVector, NonFiniteError};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/topology.md")]
    mod topology {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/engine.md")]
    mod engine {}
    #[doc = include_str!("../../../book/src/bounds.md")]
    mod bounds {}
    #[doc = include_str!("../../../book/src/resources.md")]
    mod resources {}
}

//! Two-timescale causal signatures for multivariate time series.
//!
//! A recording of `p` regions is split into `m` states and `n` inputs and
//! explained by the implicit linear model
//!
//! ```text
//! x(k) = Q x(k) + A x(k-1) + B1 u(k) + B2 u(k-1),   Q_ii = 0
//! ```
//!
//! where `Q` holds concurrent (fast) couplings and `A` lagged (slow) ones.
//! The crate identifies `[Q A B1 B2]` from data ([`sysid`]), derives
//! dynamic-mode feature sets and compares them with an assignment-aligned
//! distance ([`modal`], [`assignment`]), runs one-shot subject
//! identification ([`fingerprint`]), computes reachability landscapes
//! ([`reachability`]), exports directed edge lists ([`graph_export`]) and
//! generates synthetic ground-truth systems for validation ([`simgen`]).

pub mod assignment;
pub mod cli;
pub mod error;
pub mod fingerprint;
pub mod graph_export;
pub mod io;
pub mod modal;
pub mod model;
pub mod reachability;
pub mod simgen;
pub mod sysid;

pub use error::{Error, Result};
pub use model::{ContinuousModel, ModelParams, ModelStructure, Recording, RegionPartition};

/// Version of the on-disk formats (recording sidecar, params, features).
pub const FORMAT_VERSION: u32 = 1;

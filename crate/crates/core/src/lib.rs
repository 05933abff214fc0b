//! Conditional distribution estimation by CRPS-optimal contiguous binning.
//!
//! Observations are sorted by covariate, partitioned into contiguous bins that
//! minimise the total leave-one-out CRPS of the within-bin empirical CDFs, and
//! the bin count is picked by test CRPS on an alternating split. The fitted
//! bins then yield Venn bands and conformal prediction sets.
//!
//! Pipeline, bottom-up:
//!
//! - [`dataset`]: loading, sorting, splitting, synthetic generators
//! - [`fenwick`]: rank-indexed count/sum trees used by the cost sweep
//! - [`crps`]: scalar CRPS kernels and the closed-form bin cost
//! - [`cost_matrix`]: all-subinterval bin costs
//! - [`partition`]: exact optimal K-partition by dynamic programming
//! - [`select`]: cross-validated choice of K
//! - [`score`]: nonconformity scores, registered by name
//! - [`conformal`]: fitted model, p-values, prediction sets, Venn bands
//! - [`baseline`]: OLS split-conformal comparison method
//! - [`experiments`]: coverage studies and benchmark tables

pub mod baseline;
pub mod conformal;
pub mod cost_matrix;
pub mod crps;
pub mod dataset;
mod error;
pub mod experiments;
pub mod fenwick;
pub mod partition;
pub mod score;
pub mod select;

pub use error::{Error, Result};

/// Version tag written into every model, curve and results file.
pub const FORMAT_VERSION: u32 = 1;

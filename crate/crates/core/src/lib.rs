//! Weak Granger-style causality detection in spatio-temporal data.
//!
//! - [`stfield`]: dense (unit, variable, time, replication) fields and their first differences.
//! - [`lagcorr`]: pooled lagged Pearson correlation with t-test p-values and Fisher z intervals.
//! - [`rbd`]: density / center / network urban-growth cellular automaton used as a synthetic testbed.
//! - [`regimes`]: extremal-lag features, restart-robust k-means, elbow selection and phase diagrams.
//! - [`access`]: multimodal transport graphs, travel-time matrices and decay accessibility.

pub mod access;
pub mod lagcorr;
pub mod rbd;
pub mod regimes;
pub mod stfield;

pub use lagcorr::{
    correlation_profile, gated_profile, lagged_correlation, pearson, CorrError,
    CorrelationEstimate, CorrelationProfile,
};
pub use stfield::{Dims, SpatioTemporalField};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

//! Sharp regression discontinuity toolkit.
//!
//! Local polynomial point estimation, plug-in bandwidth selection, robust
//! bias-corrected inference, data-driven RD plots and a falsification battery.
//! The runnable programs under `examples/` walk through each capability.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandwidth;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod falsification;
pub mod inference;
pub mod kernels;
pub mod local_poly;
pub mod output;
pub mod rdplot;
pub mod simlab;
pub mod variance;

mod linalg;

pub use bandwidth::{BandwidthResult, BandwidthSpec, PluginQuantities, Selector};
pub use dataset::{load_csv, split, window, ColumnMap, RdData, SampleSplit, Side};
pub use error::{RdError, Result};
pub use inference::{analyze, analyze_clustered, analyze_with_covariates, EstimationConfig, RdEstimate};
pub use kernels::Kernel;
pub use local_poly::{estimate_derivative, estimate_rd, fit_side, SideFit};
pub use variance::Vce;

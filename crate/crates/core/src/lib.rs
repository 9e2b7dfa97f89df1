//! Orchard yield modelling from gridded daily climate data.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! - [`grid`]: gridded daily climate data, crop masks and area-weighted
//!   aggregation to county daily series.
//! - [`phenology`]: phenology-window features (chill hours, GDD, windowed
//!   sums and means) per county and harvest year.
//! - [`dataset`]: quadratic expansion, county indicators and trends,
//!   z-score normalization and reproducible splits.
//! - [`learners`]: ridge regression, random forests, gradient-boosted trees
//!   and the R²/RMSE metrics.
//! - [`stack`]: repeated k-fold bagging, multi-layer stacking, greedy
//!   weighted ensembling and permutation importance.
//! - [`evaluate`]: cross-validation and holdout benchmarks.
//! - [`projection`]: multi-member climate scenario projection and
//!   ensemble summaries.
//! - [`synth`]: a synthetic dataset generator with a known response.

pub mod artifact;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod grid;
pub mod io;
pub mod learners;
pub mod phenology;
pub mod projection;
pub mod rng;
pub mod roster;
pub mod stack;
pub mod synth;

pub use error::{Error, ErrorKind, Result};

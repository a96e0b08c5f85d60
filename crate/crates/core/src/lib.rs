//! Doubly robust estimation of average and subgroup treatment effects in
//! internal and external target populations from multi-source data.
//!
//! The crate is `no_std` (with `alloc`). Everything here is a pure function
//! of its inputs and seeds; file formats, the command line and thread pools
//! live in the companion `txmeta` crate.
//!
//! Layout:
//!
//! * [`data`]: validated datasets, the stacked internal/external view and
//!   design-matrix encoding.
//! * [`learners`]: GLM (IRLS), lasso (coordinate descent), multinomial
//!   logistic, single-hidden-layer networks and the stacking ensemble.
//! * [`nuisance`]: outcome, source, treatment and external-membership fits.
//! * [`estimators`]: one-step influence-function estimators.
//! * [`crossfit`]: stratified splitting, fold-role rotation and median
//!   aggregation over replications.
//! * [`inference`]: Wald intervals and sup-t simultaneous bands.
//! * [`analysis`]: the end-to-end pipeline producing `df_A0`/`df_A1`/`df_dif`.
//! * [`simulate`]: synthetic data with known ground truth.
#![no_std]

extern crate alloc;

pub mod analysis;
pub mod crossfit;
pub mod data;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod learners;
mod linalg;
pub mod nuisance;
pub mod rng;
pub mod simulate;
mod stats;

pub use analysis::{
    run_analysis, AnalysisConfig, AnalysisKind, AnalysisResult, EstimateRow, Executor,
    Sequential,
};
pub use data::{
    stack_with_external, validate_dataset, validate_external, ColumnRoles, ExternalSample,
    MultiSourceDataset, RawColumn, StackedDataset,
};
pub use error::{Error, ErrorKind, Result};
pub use learners::{Family, FittedModel, LearnerSpec};
pub use nuisance::NuisanceSpec;

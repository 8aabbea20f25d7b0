//! ROI-constrained uplift modeling.
//!
//! Estimate per-customer incremental purchase probability and incremental
//! loss, assign a promotion so that total incremental ROI stays nonnegative,
//! evaluate rankings with Qini and Qini-ROI curves, and recalibrate the
//! decision threshold as traffic drifts.

pub mod assign;
pub mod calibrate;
pub mod economics;
pub mod error;
pub mod eval;
pub mod exec;
pub mod harness;
pub mod io;
pub mod learners;
pub mod rng;
pub mod serde_float;
pub mod simulate;
pub mod stats;
pub mod types;
pub mod uplift;

pub use error::{Error, Result};
pub use exec::Execution;
pub use types::{AssignmentPolicy, Dataset, FeatureMatrix, Quadrant, RecordScore, RecordSource, UpliftScores, ValueEstimates, VisitRecord};

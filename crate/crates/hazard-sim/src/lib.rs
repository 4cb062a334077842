//! Hazard detection with k-out-of-n sensor voting.
//!
//! Each sensor gets a univariate Gaussian per condition, classifies its own readings by maximum
//! likelihood, and a [`VotePolicy`] raises an alert when at least `k` sensors report a hazard.

mod dataset;
mod error;
mod export;
mod model;
mod synth;
mod trace;
mod vote;

pub use dataset::{load_dataset_csv, parse_dataset_csv, split_trace, Segmentation};
pub use error::SimError;
pub use export::{export_results, write_curves_csv, write_summary_csv, CURVES_FILE, SUMMARY_FILE};
pub use model::{classify, fit_models, Condition, Gaussian, SensorModel, SIGMA_FLOOR};
pub use synth::{generate_synthetic, ScenarioSpec, ScheduleSpec, SensorSpec, SyntheticSpec};
pub use trace::{Episode, Reading, Segment, Trace};
pub use vote::{majority, run_vote_sim, run_vote_sweep, CurvePoint, SimMetrics, VotePolicy};

//! Experiment orchestration for the distributed multi-task solvers: JSON
//! specs, validation tuning, per-round traces and their aggregation.

// `!(x > 0.0)` intentionally rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod spec;
pub mod summary;
pub mod trace;
pub mod tune;

pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, ExperimentReport};
pub use spec::{DataSource, ExperimentSpec, GeneratorSpec};
pub use summary::{summarize, summarize_dir};
pub use trace::{read_trace, RoundTrace, Status};

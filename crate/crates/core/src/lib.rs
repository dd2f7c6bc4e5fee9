//! Communication-efficient solvers for multi-task learning with a shared
//! low-dimensional representation.
//!
//! Each task lives on its own simulated worker; a master coordinates
//! barrier-synchronized rounds and every vector that crosses the
//! worker/master boundary is metered by the [`runtime`] ledger.
//!
//! The crate is organized bottom-up:
//!
//! * [`losses`]: scalar losses and per-task empirical loss, gradient, Newton direction.
//! * [`matkernels`]: thin SVD, singular-value shrinkage, leading singular pair, Gram-Schmidt.
//! * [`runtime`]: the master/worker fabric and the communication ledger.
//! * [`solvers`]: the estimation procedures (one-shot baselines and round-based solvers).
//! * [`datagen`]: synthetic low-rank instances, CSV dataset I/O and excess-risk evaluation.

// `!(x > 0.0)` intentionally rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod error;
pub mod losses;
pub mod matkernels;
pub mod runtime;
pub mod solvers;

pub use error::{Error, Result};
pub use losses::{LossKind, LossModel, TaskDataset};
pub use matkernels::{ProjectionBasis, SingularTriplet, ThinSvd};
pub use runtime::{Cluster, CommLedger};
pub use solvers::{PredictorMatrix, SolverConfig};

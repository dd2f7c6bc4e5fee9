//! Greedy subspace pursuit: grow a shared basis `U` one direction per round,
//! refitting every task inside `span(U)`.
//!
//! The gradient variant appends the top left singular vector of the stacked
//! gradients as is; after an exact refit the gradients are already
//! orthogonal to `U`, so only the departure from orthogonality is recorded.
//! The Newton variant stacks per-task Newton directions and orthogonalizes
//! explicitly.

use nalgebra::DVector;

use super::dfw::{PAIR_MAX_ITER, PAIR_TOL};
use super::oneshot::refit_in_basis;
use super::{Diagnose, SolverConfig};
use crate::error::{Error, Result};
use crate::losses::{LossModel, TaskDataset};
use crate::matkernels::{leading_pair, ProjectionBasis};
use crate::runtime::{Cluster, DistributedSolver, RoundStatus};

/// Newton-system ridge used when the configured ridge is zero, relative to `H`.
pub const DEFAULT_NEWTON_RIDGE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PursuitKind {
    Gradient,
    Newton,
}

#[derive(Clone, Debug)]
pub struct PursuitWorker {
    basis: ProjectionBasis,
    v: DVector<f64>,
}

impl PursuitWorker {
    pub fn basis(&self) -> &ProjectionBasis {
        &self.basis
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.v
    }
}

#[derive(Clone, Debug)]
pub struct Pursuit {
    kind: PursuitKind,
    ridge: f64,
    newton_ridge: f64,
    budget: usize,
    basis: ProjectionBasis,
    max_append_defect: f64,
}

impl Pursuit {
    /// Starts at `W = 0` with an empty basis.
    pub fn setup(
        tasks: Vec<TaskDataset>,
        model: LossModel,
        cfg: &SolverConfig,
        kind: PursuitKind,
    ) -> Result<(Self, Cluster<PursuitWorker>)> {
        let p = tasks[0].p();
        let budget = cfg.rank_budget_for(p, tasks.len());
        let cluster = Cluster::new(tasks, model, |_| PursuitWorker {
            basis: ProjectionBasis::empty(p),
            v: DVector::zeros(0),
        })?;
        let newton_ridge = if cfg.ridge > 0.0 {
            cfg.ridge
        } else {
            DEFAULT_NEWTON_RIDGE * model.smoothness()
        };
        Ok((
            Self {
                kind,
                ridge: cfg.ridge,
                newton_ridge,
                budget,
                basis: ProjectionBasis::empty(p),
                max_append_defect: 0.0,
            },
            cluster,
        ))
    }

    /// The master's copy of the learned basis.
    pub fn basis(&self) -> &ProjectionBasis {
        &self.basis
    }

    /// Largest `max_k |⟨b_k, u⟩|` seen when appending an unorthogonalized direction.
    pub fn max_append_defect(&self) -> f64 {
        self.max_append_defect
    }

    fn append(&mut self, basis: &mut ProjectionBasis, u: &DVector<f64>) -> Option<f64> {
        match self.kind {
            PursuitKind::Gradient => basis.append_unorthogonalized(u).ok(),
            PursuitKind::Newton => basis.gram_schmidt_append(u).ok().map(|_| 0.0),
        }
    }
}

impl DistributedSolver for Pursuit {
    type State = PursuitWorker;

    fn vectors_per_round(&self) -> u64 {
        2
    }

    fn round(&mut self, cluster: &mut Cluster<PursuitWorker>) -> Result<RoundStatus> {
        if self.basis.len() >= self.budget {
            return Ok(RoundStatus::Converged);
        }
        let directions = match self.kind {
            PursuitKind::Gradient => cluster.gather(|w| w.gradient())?,
            PursuitKind::Newton => {
                let ridge = self.newton_ridge;
                cluster.gather(|w| w.newton_direction(ridge))?
            }
        };
        let u = match leading_pair(&directions, PAIR_TOL, PAIR_MAX_ITER) {
            Ok(pair) => pair.u,
            Err(Error::ZeroMatrix) => return Ok(RoundStatus::Converged),
            Err(e) => return Err(e),
        };
        let mut master = self.basis.clone();
        let Some(defect) = self.append(&mut master, &u) else {
            log::debug!("pursuit stopped: direction already spanned");
            return Ok(RoundStatus::Converged);
        };
        self.basis = master;
        self.max_append_defect = self.max_append_defect.max(defect);

        let kind = self.kind;
        let ridge = self.ridge;
        cluster.broadcast(&u, |w, u| {
            let appended = match kind {
                PursuitKind::Gradient => w.state.basis.append_unorthogonalized(u).is_ok(),
                PursuitKind::Newton => w.state.basis.gram_schmidt_append(u).is_ok(),
            };
            if !appended {
                return Err(Error::invalid(
                    "worker rejected a direction the master accepted",
                ));
            }
            let t = w.state.basis.len();
            let warm = w.state.v.clone().resize_vertically(t, 0.0);
            let (v, fit) = refit_in_basis(w, w.state.basis.matrix(), ridge, &warm)?;
            w.state.v = v;
            w.set_w(fit)
        })?;
        Ok(RoundStatus::Continue)
    }
}

impl Diagnose for Pursuit {
    fn diagnostics(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("basis_size", self.basis.len() as f64),
            ("orthonormality_defect", self.basis.orthonormality_defect()),
        ]
    }
}

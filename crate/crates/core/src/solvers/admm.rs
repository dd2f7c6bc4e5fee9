//! Consensus ADMM on the split `W = Z`.
//!
//! Worker step: `w_j ← argmin (1/m)L_j(w) + ⟨w − z_j, q_j⟩ + (ρ/2)‖w − z_j‖²`.
//! Master step: `Z ← shrink(W + Q/ρ, λ/ρ)`, `Q ← Q + ρ(W − Z)`.
//! Per round a worker uploads `w_j` and downloads `z_j` and `q_j`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::inner::{minimize_task_objective, InnerProblem};
use super::{Diagnose, SolverConfig};
use crate::error::{Error, Result};
use crate::losses::{LossKind, LossModel, TaskDataset};
use crate::matkernels::sv_shrink;
use crate::runtime::{Cluster, DistributedSolver, RoundStatus, Worker};

#[derive(Clone, Debug)]
pub struct AdmmWorker {
    z: DVector<f64>,
    q: DVector<f64>,
    /// Squared loss only: factor of `XᵀX/n + mρI` and `Xᵀy/n`.
    cached: Option<(Cholesky<f64, Dyn>, DVector<f64>)>,
}

#[derive(Clone, Debug)]
pub struct Admm {
    lambda: f64,
    rho: f64,
    m: usize,
    z: DMatrix<f64>,
    q: DMatrix<f64>,
    primal_residual: f64,
    dual_residual: f64,
}

impl Admm {
    /// Starts at `W = Z = Q = 0`.
    pub fn setup(
        tasks: Vec<TaskDataset>,
        model: LossModel,
        cfg: &SolverConfig,
    ) -> Result<(Self, Cluster<AdmmWorker>)> {
        let m = tasks.len();
        let p = tasks[0].p();
        let mu = m as f64 * cfg.rho;
        let mut cached_err = None;
        let cluster = Cluster::new(tasks, model, |t| {
            let cached = if model.kind() == LossKind::Squared {
                let x = t.features();
                let n = t.n() as f64;
                let mut h = x.tr_mul(x) / n;
                for i in 0..p {
                    h[(i, i)] += mu;
                }
                match h.cholesky() {
                    Some(c) => Some((c, x.tr_mul(t.responses()) / n)),
                    None => {
                        cached_err = Some(Error::NotPositiveDefinite("ADMM worker system"));
                        None
                    }
                }
            } else {
                None
            };
            AdmmWorker {
                z: DVector::zeros(p),
                q: DVector::zeros(p),
                cached,
            }
        })?;
        if let Some(e) = cached_err {
            return Err(e);
        }
        Ok((
            Self {
                lambda: cfg.lambda,
                rho: cfg.rho,
                m,
                z: DMatrix::zeros(p, m),
                q: DMatrix::zeros(p, m),
                primal_residual: f64::NAN,
                dual_residual: f64::NAN,
            },
            cluster,
        ))
    }

    /// `‖W − Z‖_F` after the latest round.
    pub fn primal_residual(&self) -> f64 {
        self.primal_residual
    }

    /// `ρ‖Z − Z_prev‖_F` after the latest round.
    pub fn dual_residual(&self) -> f64 {
        self.dual_residual
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    fn worker_step(worker: &Worker<AdmmWorker>, m: f64, rho: f64) -> Result<DVector<f64>> {
        let st = &worker.state;
        if let Some((chol, xty)) = &st.cached {
            let rhs = xty - &st.q * m + &st.z * (m * rho);
            return Ok(chol.solve(&rhs));
        }
        let data = worker.data();
        let linear = &st.q * m;
        let prob = InnerProblem {
            model: worker.model(),
            x: data.features(),
            y: data.responses(),
            linear: Some(&linear),
            mu: m * rho,
            center: Some(&st.z),
        };
        minimize_task_objective(&prob, worker.w())
    }
}

impl DistributedSolver for Admm {
    type State = AdmmWorker;

    fn vectors_per_round(&self) -> u64 {
        3
    }

    fn round(&mut self, cluster: &mut Cluster<AdmmWorker>) -> Result<RoundStatus> {
        let (m, rho) = (self.m as f64, self.rho);
        cluster.local(|w| {
            let next = Self::worker_step(w, m, rho)?;
            w.set_w(next)
        })?;
        let w = cluster.gather(|w| Ok(w.w().clone()))?;

        let z_next = sv_shrink(&(&w + &self.q / rho), self.lambda / rho)?;
        let diff = &w - &z_next;
        self.q += &diff * rho;
        self.primal_residual = diff.norm();
        self.dual_residual = rho * (&z_next - &self.z).norm();
        self.z = z_next;

        cluster.scatter(&self.z, |w, col| {
            w.state.z = col;
            Ok(())
        })?;
        cluster.scatter(&self.q, |w, col| {
            w.state.q = col;
            Ok(())
        })?;
        Ok(RoundStatus::Continue)
    }
}

impl Diagnose for Admm {
    fn diagnostics(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("primal_residual", self.primal_residual),
            ("dual_residual", self.dual_residual),
        ]
    }
}

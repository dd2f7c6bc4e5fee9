//! Procedures that finish in at most one exchange.

use nalgebra::{DMatrix, DVector};

use super::inner::{minimize_task_objective, InnerProblem};
use super::{check_tasks, default_eta, empirical_gradient, PredictorMatrix};
use crate::error::{Error, Result};
use crate::losses::{LossModel, TaskDataset};
use crate::matkernels::{sv_shrink, thin_svd, ProjectionBasis};
use crate::runtime::{Cluster, CommLedger, Worker};

/// Tolerance on `‖W⁺ − W‖_F` for the reference solve.
pub const CENTRALIZE_TOL: f64 = 1e-9;
pub const CENTRALIZE_MAX_ITER: usize = 100_000;

#[derive(Clone, Debug)]
pub struct Fitted {
    pub predictor: PredictorMatrix,
    pub ledger: CommLedger,
}

impl Fitted {
    pub fn vectors_per_worker(&self) -> u64 {
        self.ledger.max_per_worker()
    }
}

/// `argmin_w L_j(w) + ridge·‖w‖²` on one worker.
pub(crate) fn local_fit<E>(worker: &Worker<E>, ridge: f64) -> Result<DVector<f64>> {
    let data = worker.data();
    let prob = InnerProblem::ridge(
        worker.model(),
        data.features(),
        data.responses(),
        2.0 * ridge,
    );
    minimize_task_objective(&prob, &DVector::zeros(data.p()))
}

/// Independent per-task fits. No communication.
pub fn solve_local(tasks: &[TaskDataset], model: &LossModel, ridge: f64) -> Result<Fitted> {
    check_ridge(ridge)?;
    check_tasks(tasks, model)?;
    let mut cluster = Cluster::new(tasks.to_vec(), *model, |_| ())?;
    cluster.local(|w| {
        let fit = local_fit(w, ridge)?;
        w.set_w(fit)
    })?;
    Ok(Fitted {
        predictor: PredictorMatrix::new(cluster.observe_predictors())?,
        ledger: cluster.ledger().clone(),
    })
}

fn check_ridge(ridge: f64) -> Result<()> {
    if ridge >= 0.0 && ridge.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "ridge must be finite and >= 0, got {ridge}"
        )))
    }
}

/// Result of a single-machine accelerated proximal run.
#[derive(Clone, Debug)]
pub struct CentralizeRun {
    pub w: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Accelerated proximal gradient with adaptive restart on `L_n(W) + λ‖W‖_*`
/// with all data on one machine, from `init` (zero if absent), until
/// `‖W⁺ − W‖_F ≤ tol`.
pub fn centralize_path(
    tasks: &[TaskDataset],
    model: &LossModel,
    lambda: f64,
    init: Option<&DMatrix<f64>>,
    tol: f64,
    max_iter: usize,
) -> Result<CentralizeRun> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    let p = check_tasks(tasks, model)?;
    let m = tasks.len();
    let eta = default_eta(tasks, model);
    let mut w = match init {
        Some(w0) if w0.shape() == (p, m) => w0.clone(),
        Some(w0) => {
            return Err(Error::invalid(format!(
                "initial point is {:?}, expected ({p}, {m})",
                w0.shape()
            )))
        }
        None => DMatrix::zeros(p, m),
    };
    let mut z = w.clone();
    let mut a = 1.0f64;
    for it in 0..max_iter {
        let g = empirical_gradient(tasks, model, &z)?;
        let w_next = sv_shrink(&(&z - g * eta), eta * lambda)?;
        // Gradient-based adaptive restart: drop the momentum whenever the
        // last step points uphill relative to the extrapolation.
        if (&z - &w_next).dot(&(&w_next - &w)) > 0.0 {
            a = 1.0;
        }
        let a_next = 0.5 * (1.0 + (1.0 + 4.0 * a * a).sqrt());
        let gamma = (a - 1.0) / a_next;
        let step = (&w_next - &w).norm();
        z = &w_next + (&w_next - &w) * gamma;
        w = w_next;
        a = a_next;
        if !step.is_finite() {
            return Err(Error::Diverged {
                round: it as u64,
                reason: "non-finite iterate in centralized solve".into(),
            });
        }
        if step <= tol {
            return Ok(CentralizeRun {
                w,
                iterations: it + 1,
                converged: true,
            });
        }
    }
    Ok(CentralizeRun {
        w,
        iterations: max_iter,
        converged: false,
    })
}

/// The pooled nuclear-norm estimator. Every worker ships its `n_j` samples
/// to the master, which solves to tolerance [`CENTRALIZE_TOL`].
pub fn solve_centralize(tasks: &[TaskDataset], model: &LossModel, lambda: f64) -> Result<Fitted> {
    solve_centralize_from(tasks, model, lambda, None)
}

/// [`solve_centralize`] warm-started at `init`.
pub fn solve_centralize_from(
    tasks: &[TaskDataset],
    model: &LossModel,
    lambda: f64,
    init: Option<&DMatrix<f64>>,
) -> Result<Fitted> {
    let mut cluster = Cluster::new(tasks.to_vec(), *model, |_| ())?;
    cluster.charge_upload(|w| w.data().n() as u64);
    let run = centralize_path(
        tasks,
        model,
        lambda,
        init,
        CENTRALIZE_TOL,
        CENTRALIZE_MAX_ITER,
    )?;
    if !run.converged {
        log::warn!(
            "centralized solve stopped after {} iterations without reaching tolerance",
            run.iterations
        );
    }
    Ok(Fitted {
        predictor: PredictorMatrix::new(run.w)?,
        ledger: cluster.ledger().clone(),
    })
}

/// Rank-`r` truncation of the Local solution: one upload, one download.
pub fn solve_svd_truncate(
    tasks: &[TaskDataset],
    model: &LossModel,
    r: usize,
    ridge: f64,
) -> Result<Fitted> {
    check_ridge(ridge)?;
    let p = check_tasks(tasks, model)?;
    if r == 0 || r > p.min(tasks.len()) {
        return Err(Error::invalid(format!(
            "truncation rank must be in 1..={}, got {r}",
            p.min(tasks.len())
        )));
    }
    let mut cluster = Cluster::new(tasks.to_vec(), *model, |_| ())?;
    let local = cluster.gather(|w| local_fit(w, ridge))?;
    let truncated = thin_svd(&local)?.truncate(r);
    cluster.scatter(&truncated, |w, col| w.set_w(col))?;
    Ok(Fitted {
        predictor: PredictorMatrix::new(cluster.observe_predictors())?,
        ledger: cluster.ledger().clone(),
    })
}

/// Fits `v_j = argmin L_j(U v) + ridge·‖v‖²` and returns `U v_j`.
pub(crate) fn refit_in_basis<E>(
    worker: &Worker<E>,
    basis: &DMatrix<f64>,
    ridge: f64,
    warm: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let data = worker.data();
    let xu = data.features() * basis;
    let prob = InnerProblem::ridge(worker.model(), &xu, data.responses(), 2.0 * ridge);
    let v = minimize_task_objective(&prob, warm)?;
    let w = basis * &v;
    Ok((v, w))
}

/// Per-task fits restricted to the span of a known orthonormal `U`.
pub fn solve_bestrep(
    tasks: &[TaskDataset],
    model: &LossModel,
    true_u: &DMatrix<f64>,
    ridge: f64,
) -> Result<Fitted> {
    check_ridge(ridge)?;
    let p = check_tasks(tasks, model)?;
    if true_u.nrows() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: true_u.nrows(),
        });
    }
    let basis = ProjectionBasis::from_orthonormal(true_u.clone())?;
    let mut cluster = Cluster::new(tasks.to_vec(), *model, |_| ())?;
    let u = basis.matrix();
    cluster.local(|w| {
        let (_, fit) = refit_in_basis(w, u, ridge, &DVector::zeros(u.ncols()))?;
        w.set_w(fit)
    })?;
    Ok(Fitted {
        predictor: PredictorMatrix::new(cluster.observe_predictors())?,
        ledger: cluster.ledger().clone(),
    })
}

//! Estimation procedures for the shared-subspace multi-task problem
//! `min_W (1/m) Σ_j L_j(w_j) + λ‖W‖_*` and its rank-constrained relatives.
//!
//! One-shot procedures ([`solve_local`], [`solve_centralize`],
//! [`solve_svd_truncate`], [`solve_bestrep`]) return a [`Fitted`] result.
//! Round-based procedures are started with [`start`] and advanced one
//! metered round at a time through the [`Session`] trait.

mod admm;
mod dfw;
mod inner;
mod oneshot;
mod prox;
mod pursuit;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{task_gradient, task_loss, LossModel, TaskDataset};
use crate::matkernels::{nuclear_norm, thin_svd};
use crate::runtime::{run_round, Cluster, CommLedger, DistributedSolver, RoundStatus};

pub use admm::{Admm, AdmmWorker};
pub use dfw::Dfw;
pub use inner::{minimize_task_objective, InnerProblem, INNER_TOL};
pub use oneshot::{
    centralize_path, solve_bestrep, solve_centralize, solve_centralize_from, solve_local,
    solve_svd_truncate, CentralizeRun, Fitted, CENTRALIZE_MAX_ITER, CENTRALIZE_TOL,
};
pub use prox::{ProxGd, ProxWorker};
pub use pursuit::{Pursuit, PursuitKind, PursuitWorker, DEFAULT_NEWTON_RIDGE};

/// Singular values at or below this count as zero when reporting rank.
pub const RANK_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Local,
    Centralize,
    SvdTruncate,
    BestRep,
    ProxGd,
    AccProxGd,
    Admm,
    Dfw,
    Dgsp,
    Dnsp,
}

impl SolverKind {
    pub const ALL: [SolverKind; 10] = [
        SolverKind::Local,
        SolverKind::Centralize,
        SolverKind::SvdTruncate,
        SolverKind::BestRep,
        SolverKind::ProxGd,
        SolverKind::AccProxGd,
        SolverKind::Admm,
        SolverKind::Dfw,
        SolverKind::Dgsp,
        SolverKind::Dnsp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Local => "local",
            SolverKind::Centralize => "centralize",
            SolverKind::SvdTruncate => "svd_truncate",
            SolverKind::BestRep => "best_rep",
            SolverKind::ProxGd => "prox_gd",
            SolverKind::AccProxGd => "acc_prox_gd",
            SolverKind::Admm => "admm",
            SolverKind::Dfw => "dfw",
            SolverKind::Dgsp => "dgsp",
            SolverKind::Dnsp => "dnsp",
        }
    }

    pub fn is_one_shot(self) -> bool {
        matches!(
            self,
            SolverKind::Local
                | SolverKind::Centralize
                | SolverKind::SvdTruncate
                | SolverKind::BestRep
        )
    }

    /// Vectors per worker in one round (iterative) or in total (one-shot,
    /// excluding Centralize whose cost is the per-task sample count).
    pub fn vectors_per_round(self) -> u64 {
        match self {
            SolverKind::Local | SolverKind::BestRep | SolverKind::Centralize => 0,
            SolverKind::SvdTruncate => 2,
            SolverKind::Admm => 3,
            SolverKind::ProxGd
            | SolverKind::AccProxGd
            | SolverKind::Dfw
            | SolverKind::Dgsp
            | SolverKind::Dnsp => 2,
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SolverKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown solver `{s}`")))
    }
}

/// Hyperparameters shared by all procedures; each reads the fields it needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Nuclear-norm weight λ.
    pub lambda: f64,
    /// Prox step; `None` means `m / H_inst` (the inverse smoothness of `L_n`).
    pub eta: Option<f64>,
    /// ADMM penalty ρ.
    pub rho: f64,
    /// Frank-Wolfe radius; `None` means `√(r m)·A`.
    pub radius: Option<f64>,
    /// Pursuit iteration cap; `None` means `min(p, m, rounds)`.
    pub rank_budget: Option<usize>,
    pub rounds: usize,
    /// ℓ₂ weight for local fits, refits and Newton systems.
    pub ridge: f64,
    /// Bound `A ≥ max_j ‖w*_j‖`.
    pub a_bound: Option<f64>,
    /// Assumed rank `r`.
    pub rank: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            eta: None,
            rho: 1.0,
            radius: None,
            rank_budget: None,
            rounds: 500,
            ridge: 0.0,
            a_bound: None,
            rank: 1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64, name: &str| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "{name} must be finite and >= 0, got {v}"
                )))
            }
        };
        let pos = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "{name} must be finite and > 0, got {v}"
                )))
            }
        };
        nonneg(self.lambda, "lambda")?;
        nonneg(self.ridge, "ridge")?;
        pos(self.rho, "rho")?;
        if let Some(eta) = self.eta {
            pos(eta, "eta")?;
        }
        if let Some(r) = self.radius {
            pos(r, "radius")?;
        }
        if let Some(a) = self.a_bound {
            pos(a, "a_bound")?;
        }
        if self.rounds == 0 {
            return Err(Error::invalid("rounds must be positive"));
        }
        if self.rank == 0 {
            return Err(Error::invalid("rank must be positive"));
        }
        if self.rank_budget == Some(0) {
            return Err(Error::invalid("rank_budget must be positive"));
        }
        Ok(())
    }

    pub fn rank_budget_for(&self, p: usize, m: usize) -> usize {
        self.rank_budget.unwrap_or(self.rounds).min(p).min(m)
    }
}

/// The `p × m` coefficient matrix; column `j` predicts task `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorMatrix(DMatrix<f64>);

impl PredictorMatrix {
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        if !w.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("predictor matrix"));
        }
        Ok(Self(w))
    }

    pub fn zeros(p: usize, m: usize) -> Self {
        Self(DMatrix::zeros(p, m))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        self.0.column(j).into_owned()
    }

    pub fn p(&self) -> usize {
        self.0.nrows()
    }

    pub fn m(&self) -> usize {
        self.0.ncols()
    }

    /// Number of singular values above [`RANK_TOL`].
    pub fn rank(&self) -> Result<usize> {
        Ok(thin_svd(&self.0)?.rank_above(RANK_TOL))
    }
}

fn check_tasks(tasks: &[TaskDataset], model: &LossModel) -> Result<usize> {
    let p = tasks
        .first()
        .map(|t| t.p())
        .ok_or_else(|| Error::invalid("at least one task is required"))?;
    for t in tasks {
        if t.p() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: t.p(),
            });
        }
        t.check_labels(model)?;
    }
    Ok(p)
}

fn check_predictor(tasks: &[TaskDataset], w: &DMatrix<f64>) -> Result<()> {
    let p = tasks.first().map(|t| t.p()).unwrap_or(0);
    if w.shape() != (p, tasks.len()) {
        return Err(Error::invalid(format!(
            "predictor is {:?}, expected ({p}, {})",
            w.shape(),
            tasks.len()
        )));
    }
    Ok(())
}

/// `L_n(W) = (1/m) Σ_j L_j(w_j)`.
pub fn empirical_loss(tasks: &[TaskDataset], model: &LossModel, w: &DMatrix<f64>) -> Result<f64> {
    check_predictor(tasks, w)?;
    let mut total = 0.0;
    for (j, t) in tasks.iter().enumerate() {
        total += task_loss(model, t, &w.column(j).into_owned())?;
    }
    Ok(total / tasks.len() as f64)
}

/// `∇L_n(W)`: column `j` is `(1/m) ∇L_j(w_j)`.
pub fn empirical_gradient(
    tasks: &[TaskDataset],
    model: &LossModel,
    w: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_predictor(tasks, w)?;
    let m = tasks.len() as f64;
    let mut g = DMatrix::zeros(w.nrows(), w.ncols());
    for (j, t) in tasks.iter().enumerate() {
        g.set_column(
            j,
            &(task_gradient(model, t, &w.column(j).into_owned())? / m),
        );
    }
    Ok(g)
}

/// `L_n(W) + λ‖W‖_*`.
pub fn regularized_objective(
    tasks: &[TaskDataset],
    model: &LossModel,
    w: &DMatrix<f64>,
    lambda: f64,
) -> Result<f64> {
    let reg = if lambda == 0.0 {
        0.0
    } else {
        lambda * nuclear_norm(w)?
    };
    Ok(empirical_loss(tasks, model, w)? + reg)
}

/// `H · max_j ‖X_jᵀX_j / n_j‖₂`, the largest per-task curvature. The
/// smoothness of `L_n` is this value divided by `m`.
pub fn instance_smoothness(tasks: &[TaskDataset], model: &LossModel) -> f64 {
    tasks
        .iter()
        .map(|t| {
            let x = t.features();
            let gram = if t.n() <= t.p() {
                x * x.transpose()
            } else {
                x.tr_mul(x)
            };
            let top = gram
                .symmetric_eigenvalues()
                .iter()
                .copied()
                .fold(0.0, f64::max);
            model.smoothness() * top / t.n() as f64
        })
        .fold(0.0, f64::max)
}

/// `‖∇L_n(0)‖₂`: the smallest λ for which `W = 0` solves the regularized problem.
pub fn lambda_max(tasks: &[TaskDataset], model: &LossModel) -> Result<f64> {
    check_tasks(tasks, model)?;
    let p = tasks[0].p();
    let g = empirical_gradient(tasks, model, &DMatrix::zeros(p, tasks.len()))?;
    Ok(thin_svd(&g)?.s.iter().copied().next().unwrap_or(0.0))
}

/// Default prox step `m / H_inst`.
pub fn default_eta(tasks: &[TaskDataset], model: &LossModel) -> f64 {
    tasks.len() as f64 / instance_smoothness(tasks, model).max(f64::MIN_POSITIVE)
}

/// A round-based procedure bound to its cluster.
pub trait Session {
    fn kind(&self) -> SolverKind;

    /// Runs one metered round.
    fn step(&mut self) -> Result<RoundStatus>;

    /// Current estimate.
    fn predictor(&self) -> DMatrix<f64>;

    fn ledger(&self) -> &CommLedger;

    fn rounds(&self) -> u64 {
        self.ledger().rounds()
    }

    /// Solver-specific scalar diagnostics after the latest round
    /// (e.g. ADMM's primal residual), as name/value pairs.
    fn diagnostics(&self) -> Vec<(&'static str, f64)> {
        Vec::new()
    }
}

struct Bound<S: DistributedSolver> {
    kind: SolverKind,
    solver: S,
    cluster: Cluster<S::State>,
}

/// Solvers that expose extra diagnostics implement this.
trait Diagnose {
    fn diagnostics(&self) -> Vec<(&'static str, f64)> {
        Vec::new()
    }
}

impl<S: DistributedSolver + Diagnose> Session for Bound<S> {
    fn kind(&self) -> SolverKind {
        self.kind
    }

    fn step(&mut self) -> Result<RoundStatus> {
        run_round(&mut self.solver, &mut self.cluster)
    }

    fn predictor(&self) -> DMatrix<f64> {
        self.solver.predictor(&self.cluster)
    }

    fn ledger(&self) -> &CommLedger {
        self.cluster.ledger()
    }

    fn diagnostics(&self) -> Vec<(&'static str, f64)> {
        Diagnose::diagnostics(&self.solver)
    }
}

/// Places the tasks on a fresh cluster and initializes a round-based solver.
///
/// `a_bound` in the config (or, failing that, the column norms of the Local
/// solution) determines the Frank-Wolfe radius.
pub fn start(
    kind: SolverKind,
    tasks: &[TaskDataset],
    model: LossModel,
    cfg: &SolverConfig,
) -> Result<Box<dyn Session>> {
    cfg.validate()?;
    check_tasks(tasks, &model)?;
    let tasks = tasks.to_vec();
    Ok(match kind {
        SolverKind::ProxGd | SolverKind::AccProxGd => {
            let (solver, cluster) =
                ProxGd::setup(tasks, model, cfg, kind == SolverKind::AccProxGd)?;
            Box::new(Bound {
                kind,
                solver,
                cluster,
            })
        }
        SolverKind::Admm => {
            let (solver, cluster) = Admm::setup(tasks, model, cfg)?;
            Box::new(Bound {
                kind,
                solver,
                cluster,
            })
        }
        SolverKind::Dfw => {
            let (solver, cluster) = Dfw::setup(tasks, model, cfg)?;
            Box::new(Bound {
                kind,
                solver,
                cluster,
            })
        }
        SolverKind::Dgsp | SolverKind::Dnsp => {
            let pk = if kind == SolverKind::Dgsp {
                PursuitKind::Gradient
            } else {
                PursuitKind::Newton
            };
            let (solver, cluster) = Pursuit::setup(tasks, model, cfg, pk)?;
            Box::new(Bound {
                kind,
                solver,
                cluster,
            })
        }
        other => {
            return Err(Error::invalid(format!(
                "{other} is a one-shot procedure; call its solve_* function"
            )))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_round_trip_through_names() {
        for k in SolverKind::ALL {
            assert_eq!(k.name().parse::<SolverKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.name()));
        }
        assert!("nope".parse::<SolverKind>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = [
            SolverConfig {
                lambda: -1.0,
                ..Default::default()
            },
            SolverConfig {
                rho: 0.0,
                ..Default::default()
            },
            SolverConfig {
                eta: Some(0.0),
                ..Default::default()
            },
            SolverConfig {
                rounds: 0,
                ..Default::default()
            },
            SolverConfig {
                rank_budget: Some(0),
                ..Default::default()
            },
            SolverConfig {
                ridge: f64::NAN,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        let c = SolverConfig {
            rounds: 7,
            ..Default::default()
        };
        assert_eq!(c.rank_budget_for(100, 100), 7);
        assert_eq!(c.rank_budget_for(5, 100), 5);
    }

    #[test]
    fn config_json_accepts_partial_objects() {
        let c: SolverConfig = serde_json::from_str(r#"{"lambda": 0.5, "rounds": 3}"#).unwrap();
        assert_eq!(c.lambda, 0.5);
        assert_eq!(c.rounds, 3);
        assert_eq!(c.rho, 1.0);
        assert!(serde_json::from_str::<SolverConfig>(r#"{"lamda": 1}"#).is_err());
    }

    #[test]
    fn one_shot_kinds_cannot_be_started() {
        let t = TaskDataset::new(
            0,
            DMatrix::from_element(1, 1, 0.5),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let err = start(
            SolverKind::Local,
            &[t],
            LossModel::squared(),
            &SolverConfig::default(),
        );
        assert!(err.is_err());
    }
}

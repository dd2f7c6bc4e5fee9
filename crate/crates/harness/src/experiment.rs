//! Seed × solver sweeps: data preparation, tuning, and trace emission.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dmtl_core::datagen::{generate, load_csv_tasks, split_tasks, LoadedDataset, RiskEvaluator};
use dmtl_core::losses::{LossModel, TaskDataset};
use dmtl_core::matkernels::thin_svd;
use dmtl_core::runtime::RoundStatus;
use dmtl_core::solvers::{
    centralize_path, empirical_loss, instance_smoothness, lambda_max, solve_bestrep,
    solve_centralize_from, solve_local, solve_svd_truncate, start, Fitted, Session, SolverKind,
    RANK_TOL,
};
use dmtl_core::{Error as CoreError, SolverConfig};
use nalgebra::DMatrix;

use crate::error::{HarnessError, Result};
use crate::spec::{DataSource, ExperimentSpec};
use crate::summary::summarize_dir;
use crate::trace::{trace_file_name, write_trace, RoundTrace, RowKind, Status};
use crate::tune::{geometric_grid, tune, PATIENCE};

/// Ridge for Local fits and Local-initialized solvers, relative to `H`.
pub const LOCAL_RIDGE: f64 = 1e-6;
/// λ grid exponents: `{2^-10, …, 2^2}·λ₀` with `λ₀ = ‖∇L_n(0)‖₂`.
pub const LAMBDA_GRID: (i32, i32) = (-10, 2);
/// Ridge grid for refits: `{10^-6, …, 1}·H`.
pub const RIDGE_GRID: (i32, i32) = (-6, 0);
/// ρ grid exponents around the per-worker curvature `H_inst / m`.
pub const RHO_GRID: (i32, i32) = (-2, 2);
/// Accuracy of each point on the warm-started λ path.
pub const PATH_TOL: f64 = 1e-7;
pub const PATH_MAX_ITER: usize = 300;

pub const SPEC_FILE: &str = "spec.json";
pub const AGGREGATE_FILE: &str = "summary.csv";

#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub solver: SolverKind,
    pub seed: u64,
    pub status: Status,
    pub path: PathBuf,
    pub summary: RoundTrace,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub spec_hash: String,
    pub cells: Vec<CellOutcome>,
    pub aggregate: PathBuf,
}

impl ExperimentReport {
    pub fn diverged(&self) -> impl Iterator<Item = &CellOutcome> {
        self.cells.iter().filter(|c| c.status == Status::Diverged)
    }

    pub fn cell(&self, solver: SolverKind, seed: u64) -> Option<&CellOutcome> {
        self.cells
            .iter()
            .find(|c| c.solver == solver && c.seed == seed)
    }
}

/// One seed's train/validation split and what is known about the truth.
pub struct Prepared {
    pub seed: u64,
    pub train: Vec<TaskDataset>,
    pub validation: Vec<TaskDataset>,
    pub model: LossModel,
    pub u_true: Option<DMatrix<f64>>,
    pub risk: Option<RiskEvaluator>,
    /// Rank of the truth when known, else 1.
    pub rank: usize,
    pub rank_known: bool,
}

impl Prepared {
    pub fn from_spec(
        spec: &ExperimentSpec,
        seed: u64,
        loaded: Option<&LoadedDataset>,
    ) -> Result<Self> {
        match &spec.data {
            DataSource::Generate(g) => {
                let n_val = (spec.validation_fraction * g.n as f64).ceil() as usize;
                let cfg = g.config(seed, n_val.max(1));
                let inst = generate(&cfg)?;
                let risk = RiskEvaluator::new(&cfg, &inst.truth, spec.mc_samples)?;
                Ok(Self {
                    seed,
                    train: inst.train,
                    validation: inst.validation,
                    model: g.task_kind.loss(),
                    u_true: Some(inst.truth.u_true),
                    risk: Some(risk),
                    rank: g.r,
                    rank_known: true,
                })
            }
            DataSource::Dataset { .. } => {
                let data = loaded.ok_or_else(|| HarnessError::config("dataset was not loaded"))?;
                let (train, validation) = split_tasks(&data.tasks, spec.validation_fraction, seed)?;
                let risk = match (data.ground_truth(), &data.meta.generator) {
                    (Some(truth), Some(gen)) => {
                        Some(RiskEvaluator::new(gen, &truth, spec.mc_samples)?)
                    }
                    _ => None,
                };
                Ok(Self {
                    seed,
                    train,
                    validation,
                    model: data.meta.task_kind.loss(),
                    u_true: data.u_true.clone(),
                    risk,
                    rank: data.meta.generator.as_ref().map(|g| g.r).unwrap_or(1),
                    rank_known: data.meta.generator.is_some(),
                })
            }
        }
    }

    fn local_ridge(&self) -> f64 {
        LOCAL_RIDGE * self.model.smoothness()
    }

    fn evaluate(&self, w: &DMatrix<f64>) -> Result<Evaluation> {
        let train_loss = empirical_loss(&self.train, &self.model, w)?;
        let excess_risk = self.risk.as_ref().map(|r| r.excess_risk(w)).transpose()?;
        let svd = thin_svd(w)?;
        Ok(Evaluation {
            train_loss,
            excess_risk,
            rank: svd.rank_above(RANK_TOL),
            nuclear: svd.s.sum(),
        })
    }
}

struct Evaluation {
    train_loss: f64,
    excess_risk: Option<f64>,
    rank: usize,
    nuclear: f64,
}

/// Centralize's validated λ and its solution, shared by the penalized solvers.
pub struct CentralFit {
    pub lambda: f64,
    pub fitted: Fitted,
}

/// The solvers a spec runs: the requested ones, plus the one-shot reference
/// lines (Local, Centralize, and BestRep when the truth is known) whenever
/// a round-based solver is present.
pub fn cell_solvers(spec: &ExperimentSpec, truth_known: bool) -> Vec<SolverKind> {
    let mut list = spec.solvers.clone();
    if list.iter().any(|k| !k.is_one_shot()) {
        for b in [
            SolverKind::Local,
            SolverKind::Centralize,
            SolverKind::BestRep,
        ] {
            if !list.contains(&b) && (b != SolverKind::BestRep || truth_known) {
                list.push(b);
            }
        }
    }
    list
}

fn is_divergence(e: &CoreError) -> bool {
    matches!(
        e,
        CoreError::Diverged { .. } | CoreError::NonFiniteUpload { .. } | CoreError::NonFinite(_)
    )
}

fn uses_lambda(kind: SolverKind) -> bool {
    matches!(
        kind,
        SolverKind::Centralize | SolverKind::ProxGd | SolverKind::AccProxGd | SolverKind::Admm
    )
}

fn params(kind: SolverKind, cfg: &SolverConfig) -> String {
    let mut parts = Vec::new();
    if uses_lambda(kind) {
        parts.push(format!("lambda={}", cfg.lambda));
    }
    match kind {
        SolverKind::Admm => parts.push(format!("rho={}", cfg.rho)),
        SolverKind::Dfw => {
            if let Some(r) = cfg.radius {
                parts.push(format!("radius={r}"));
            }
        }
        SolverKind::Centralize => {}
        _ => parts.push(format!("ridge={}", cfg.ridge)),
    }
    if kind == SolverKind::SvdTruncate {
        parts.push(format!("rank={}", cfg.rank));
    }
    if let Some(eta) = cfg
        .eta
        .filter(|_| matches!(kind, SolverKind::ProxGd | SolverKind::AccProxGd))
    {
        parts.push(format!("eta={eta}"));
    }
    parts.join(";")
}

/// Runs every (solver, seed) cell of `spec`, writing traces, a copy of the
/// spec and the aggregate into `out`.
pub fn run_experiment(spec: &ExperimentSpec, out: &Path) -> Result<ExperimentReport> {
    spec.validate()?;
    fs::create_dir_all(out).map_err(|e| HarnessError::file(out, e))?;
    let hash = spec.hash();
    let spec_path = out.join(SPEC_FILE);
    fs::write(&spec_path, spec.to_json()).map_err(|e| HarnessError::file(&spec_path, e))?;

    let loaded = match &spec.data {
        DataSource::Dataset { path } => Some(load_csv_tasks(path)?),
        DataSource::Generate(_) => None,
    };
    let truth_known = match &loaded {
        Some(d) => d.u_true.is_some(),
        None => true,
    };
    if spec.solvers.contains(&SolverKind::BestRep) && !truth_known {
        return Err(HarnessError::config(
            "best_rep needs the true subspace (utrue.csv)",
        ));
    }
    let solvers = cell_solvers(spec, truth_known);

    let mut cells = Vec::new();
    for &seed in &spec.seeds {
        let prep = Prepared::from_spec(spec, seed, loaded.as_ref())?;
        let mut runner = SeedRunner::new(spec, &prep);
        for &kind in &solvers {
            let (rows, status) = runner.run(kind)?;
            let path = out.join(trace_file_name(kind, seed));
            write_trace(&path, &hash, &rows)?;
            let summary = rows
                .last()
                .cloned()
                .expect("every cell emits a summary row");
            if status == Status::Diverged {
                log::warn!("{kind} diverged on seed {seed}");
            }
            log::info!(
                "seed {seed} {kind}: {} rows, status {:?}, excess risk {:?}",
                rows.len(),
                status,
                summary.excess_risk
            );
            cells.push(CellOutcome {
                solver: kind,
                seed,
                status,
                path,
                summary,
            });
        }
    }
    let aggregate = out.join(AGGREGATE_FILE);
    summarize_dir(out, &aggregate, &spec.epsilons)?;
    Ok(ExperimentReport {
        spec_hash: hash,
        cells,
        aggregate,
    })
}

/// Runs the cells of one seed, sharing the Centralize tuning between them.
pub struct SeedRunner<'a> {
    spec: &'a ExperimentSpec,
    prep: &'a Prepared,
    central: Option<CentralFit>,
}

impl<'a> SeedRunner<'a> {
    pub fn new(spec: &'a ExperimentSpec, prep: &'a Prepared) -> Self {
        Self {
            spec,
            prep,
            central: None,
        }
    }

    /// The configuration a solver starts from before tuning.
    pub fn base_config(&self, kind: SolverKind) -> SolverConfig {
        let mut cfg = match self.spec.configs.get(&kind) {
            Some(c) => c.clone(),
            None => {
                let mut c = SolverConfig::default();
                if matches!(kind, SolverKind::Dgsp | SolverKind::Dnsp) {
                    c.rank_budget = Some(2 * self.prep.rank);
                    c.rounds = 2 * self.prep.rank;
                }
                c
            }
        };
        if self.prep.rank_known || !self.spec.configs.contains_key(&kind) {
            cfg.rank = self.prep.rank;
        }
        cfg
    }

    /// Validated λ for the nuclear-norm estimator, selected along a
    /// warm-started descending path and then solved to full accuracy.
    pub fn central(&mut self) -> Result<&CentralFit> {
        if self.central.is_none() {
            let p = self.prep;
            let base = self.base_config(SolverKind::Centralize);
            let lambda = if self.spec.tune {
                let lambda0 = lambda_max(&p.train, &p.model)?;
                let grid: Vec<SolverConfig> = geometric_grid(lambda0, LAMBDA_GRID.0, LAMBDA_GRID.1)
                    .into_iter()
                    .map(|lambda| SolverConfig {
                        lambda,
                        ..base.clone()
                    })
                    .collect();
                let tuned = tune(
                    SolverKind::Centralize,
                    &grid,
                    &p.validation,
                    &p.model,
                    Some(PATIENCE),
                    |cfg, warm| {
                        Ok(centralize_path(
                            &p.train,
                            &p.model,
                            cfg.lambda,
                            warm,
                            PATH_TOL,
                            PATH_MAX_ITER,
                        )?
                        .w)
                    },
                )?;
                (tuned.config.lambda, Some(tuned.fit))
            } else {
                (base.lambda, None)
            };
            let (lambda, warm) = lambda;
            let fitted = solve_centralize_from(&p.train, &p.model, lambda, warm.as_ref())?;
            self.central = Some(CentralFit { lambda, fitted });
        }
        Ok(self.central.as_ref().expect("just set"))
    }

    /// Final configuration for `kind` after validation tuning.
    pub fn tuned_config(&mut self, kind: SolverKind) -> Result<SolverConfig> {
        let mut cfg = self.base_config(kind);
        if !self.spec.tune {
            return Ok(cfg);
        }
        let p = self.prep;
        let h = p.model.smoothness();
        let ridge_grid = |cfg: &SolverConfig| -> Vec<SolverConfig> {
            (RIDGE_GRID.0..=RIDGE_GRID.1)
                .map(|k| SolverConfig {
                    ridge: h * 10f64.powi(k),
                    ..cfg.clone()
                })
                .collect()
        };
        match kind {
            SolverKind::Local | SolverKind::SvdTruncate => {
                if cfg.ridge == 0.0 {
                    cfg.ridge = p.local_ridge();
                }
            }
            SolverKind::Centralize => cfg.lambda = self.central()?.lambda,
            SolverKind::ProxGd | SolverKind::AccProxGd => {
                cfg.lambda = self.central()?.lambda;
                if cfg.ridge == 0.0 {
                    cfg.ridge = p.local_ridge();
                }
            }
            SolverKind::Admm => {
                cfg.lambda = self.central()?.lambda;
                let scale = instance_smoothness(&p.train, &p.model) / p.train.len() as f64;
                let rounds = self.spec.tuning_rounds.unwrap_or(cfg.rounds);
                let grid: Vec<SolverConfig> = geometric_grid(scale, RHO_GRID.0, RHO_GRID.1)
                    .into_iter()
                    .map(|rho| SolverConfig { rho, ..cfg.clone() })
                    .collect();
                cfg = tune(
                    kind,
                    &grid,
                    &p.validation,
                    &p.model,
                    Some(PATIENCE),
                    |c, _| Ok(run_session(kind, p, c, rounds, |_| Ok(()))?.0),
                )?
                .config;
            }
            SolverKind::Dfw => {
                if cfg.radius.is_none() {
                    // The constrained problem whose solution matches the
                    // validated penalized one.
                    let w = self.central()?.fitted.predictor.matrix().clone();
                    let nuc = thin_svd(&w)?.s.sum();
                    if nuc > 0.0 {
                        cfg.radius = Some(nuc);
                    }
                }
            }
            SolverKind::BestRep => {
                let u = p
                    .u_true
                    .as_ref()
                    .ok_or_else(|| HarnessError::config("best_rep needs the true subspace"))?;
                cfg = tune(
                    kind,
                    &ridge_grid(&cfg),
                    &p.validation,
                    &p.model,
                    Some(PATIENCE),
                    |c, _| {
                        Ok(solve_bestrep(&p.train, &p.model, u, c.ridge)?
                            .predictor
                            .into_matrix())
                    },
                )?
                .config;
            }
            SolverKind::Dgsp | SolverKind::Dnsp => {
                cfg = tune(
                    kind,
                    &ridge_grid(&cfg),
                    &p.validation,
                    &p.model,
                    Some(PATIENCE),
                    |c, _| Ok(run_session(kind, p, c, c.rounds, |_| Ok(()))?.0),
                )?
                .config;
            }
        }
        Ok(cfg)
    }

    /// Tunes and runs one solver, returning its trace rows (summary last).
    /// A one-shot solve or tuning step that diverges yields a lone
    /// `diverged` summary row.
    pub fn run(&mut self, kind: SolverKind) -> Result<(Vec<RoundTrace>, Status)> {
        match self.run_cell(kind) {
            Err(HarnessError::Core(e)) if is_divergence(&e) => {
                log::warn!("{kind}: {e}");
                let row = RoundTrace {
                    solver: kind,
                    seed: self.prep.seed,
                    kind: RowKind::Summary,
                    round: 0,
                    vectors_per_worker: 0,
                    train_loss: f64::NAN,
                    excess_risk: None,
                    rank: 0,
                    wall_ms: None,
                    status: Status::Diverged,
                    objective: None,
                    primal_residual: None,
                    dual_residual: None,
                    orthonormality_defect: None,
                    params: String::new(),
                };
                Ok((vec![row], Status::Diverged))
            }
            other => other,
        }
    }

    fn run_cell(&mut self, kind: SolverKind) -> Result<(Vec<RoundTrace>, Status)> {
        let cfg = self.tuned_config(kind)?;
        let p = self.prep;
        let param_str = params(kind, &cfg);
        let (fitted, round) = match kind {
            SolverKind::Local => (solve_local(&p.train, &p.model, cfg.ridge)?, 0),
            SolverKind::SvdTruncate => (
                solve_svd_truncate(&p.train, &p.model, cfg.rank, cfg.ridge)?,
                1,
            ),
            SolverKind::BestRep => {
                let u = p
                    .u_true
                    .as_ref()
                    .ok_or_else(|| HarnessError::config("best_rep needs the true subspace"))?;
                (solve_bestrep(&p.train, &p.model, u, cfg.ridge)?, 0)
            }
            SolverKind::Centralize => (self.central()?.fitted.clone(), 1),
            _ => return self.run_rounds(kind, &cfg, &param_str),
        };
        let row = self.row(
            kind,
            &cfg,
            fitted.predictor.matrix(),
            round,
            fitted.vectors_per_worker(),
            None,
            &[],
            RowKind::Summary,
            Status::Completed,
            &param_str,
        )?;
        Ok((vec![row], Status::Completed))
    }

    fn run_rounds(
        &self,
        kind: SolverKind,
        cfg: &SolverConfig,
        param_str: &str,
    ) -> Result<(Vec<RoundTrace>, Status)> {
        let clock = self.spec.record_wall_clock.then(Instant::now);
        let mut rows = Vec::new();
        let (_, status) = run_session(kind, self.prep, cfg, cfg.rounds, |s| {
            let wall = clock.map(|c| c.elapsed().as_secs_f64() * 1e3);
            let row = self.row(
                kind,
                cfg,
                &s.predictor(),
                s.rounds(),
                s.ledger().max_per_worker(),
                wall,
                &s.diagnostics(),
                RowKind::Round,
                Status::Ok,
                param_str,
            )?;
            rows.push(row);
            Ok(())
        })?;
        let mut summary = rows.last().cloned().expect("round 0 is always recorded");
        summary.kind = RowKind::Summary;
        summary.status = status;
        rows.push(summary);
        Ok((rows, status))
    }

    #[allow(clippy::too_many_arguments)]
    fn row(
        &self,
        kind: SolverKind,
        cfg: &SolverConfig,
        w: &DMatrix<f64>,
        round: u64,
        vectors: u64,
        wall_ms: Option<f64>,
        diagnostics: &[(&'static str, f64)],
        row_kind: RowKind,
        status: Status,
        param_str: &str,
    ) -> Result<RoundTrace> {
        let ev = self.prep.evaluate(w)?;
        let diag = |name: &str| {
            diagnostics
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, v)| *v)
                .filter(|v| v.is_finite())
        };
        Ok(RoundTrace {
            solver: kind,
            seed: self.prep.seed,
            kind: row_kind,
            round,
            vectors_per_worker: vectors,
            train_loss: ev.train_loss,
            excess_risk: ev.excess_risk,
            rank: ev.rank,
            wall_ms,
            status,
            objective: uses_lambda(kind).then_some(ev.train_loss + cfg.lambda * ev.nuclear),
            primal_residual: diag("primal_residual"),
            dual_residual: diag("dual_residual"),
            orthonormality_defect: diag("orthonormality_defect"),
            params: param_str.to_string(),
        })
    }
}

/// Starts `kind` on the training split and runs up to `rounds` rounds,
/// calling `observe` at the start and after every round that communicated.
/// Divergence ends the run early with [`Status::Diverged`].
pub fn run_session(
    kind: SolverKind,
    prep: &Prepared,
    cfg: &SolverConfig,
    rounds: usize,
    mut observe: impl FnMut(&dyn Session) -> Result<()>,
) -> Result<(DMatrix<f64>, Status)> {
    let mut session = start(kind, &prep.train, prep.model, cfg)?;
    observe(session.as_ref())?;
    let mut status = Status::Completed;
    let mut last_vectors = 0;
    for _ in 0..rounds {
        match session.step() {
            Ok(RoundStatus::Continue) => {}
            Ok(RoundStatus::Converged) => {
                status = Status::Converged;
                if session.ledger().max_per_worker() != last_vectors {
                    observe(session.as_ref())?;
                }
                break;
            }
            Err(e) if is_divergence(&e) => {
                log::warn!("{kind}: {e}");
                status = Status::Diverged;
                break;
            }
            Err(e) => return Err(e.into()),
        }
        last_vectors = session.ledger().max_per_worker();
        observe(session.as_ref())?;
    }
    Ok((session.predictor(), status))
}

//! Synthetic shared-subspace instances, dataset directories and excess risk.
//!
//! An instance draws `W* = U S Vᵀ` from the top-`r` singular vectors of a
//! Gaussian product `A Bᵀ` with `S = diag(1, 1/1.5, 1/1.5², …)`, features
//! from `N(0, Σ)` with `Σ_ab = 2^{-c|a-b|}`, and responses from a Gaussian
//! linear model or a logistic model. Features are divided by the largest row
//! norm in the instance and `W*` multiplied by it, so predictions are unchanged.
//!
//! Random streams: stream 0 of the seed drives `W*`, stream `1 + j` drives
//! task `j`'s samples and stream `2³² + j` its Monte Carlo test draws.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{max_row_norm, sigmoid, softplus, LossKind, LossModel, TaskDataset};
use crate::matkernels::{gaussian, thin_svd};

const TEST_STREAM_BASE: u64 = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Regression,
    Classification,
}

impl TaskKind {
    pub fn loss(self) -> LossModel {
        match self {
            TaskKind::Regression => LossModel::squared(),
            TaskKind::Classification => LossModel::logistic(),
        }
    }

    pub fn loss_kind(self) -> LossKind {
        self.loss().kind()
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(TaskKind::Regression),
            "classification" => Ok(TaskKind::Classification),
            _ => Err(Error::invalid(format!(
                "task kind must be `regression` or `classification`, got `{s}`"
            ))),
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    /// Training samples per task.
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub r: usize,
    /// `c` in `Σ_ab = 2^{-c|a-b|}`.
    pub corr_decay: f64,
    pub task_kind: TaskKind,
    pub seed: u64,
    /// Extra held-out samples per task, drawn after the training samples.
    #[serde(default)]
    pub n_validation: usize,
    /// Regression noise standard deviation (test hook; normally 1).
    #[serde(default = "one")]
    pub noise_std: f64,
    /// Multiplies `W*` before feature rescaling (test hook; normally 1).
    #[serde(default = "one")]
    pub wstar_scale: f64,
}

impl GenConfig {
    pub fn new(
        n: usize,
        p: usize,
        m: usize,
        r: usize,
        corr_decay: f64,
        task_kind: TaskKind,
        seed: u64,
    ) -> Self {
        Self {
            n,
            p,
            m,
            r,
            corr_decay,
            task_kind,
            seed,
            n_validation: 0,
            noise_std: 1.0,
            wstar_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.m == 0 || self.r == 0 {
            return Err(Error::invalid("n, p, m and r must be positive"));
        }
        if self.r > self.p.min(self.m) {
            return Err(Error::invalid(format!(
                "rank {} exceeds min(p, m) = {}",
                self.r,
                self.p.min(self.m)
            )));
        }
        if !(self.corr_decay > 0.0) {
            return Err(Error::invalid(format!(
                "corr_decay must be > 0, got {}",
                self.corr_decay
            )));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::invalid("noise_std must be finite and >= 0"));
        }
        if !(self.wstar_scale > 0.0) || !self.wstar_scale.is_finite() {
            return Err(Error::invalid("wstar_scale must be finite and > 0"));
        }
        Ok(())
    }
}

/// The decaying spectrum `[1, 1/1.5, 1/1.5², …]` of length `r`.
pub fn spectrum(r: usize) -> DVector<f64> {
    DVector::from_fn(r, |k, _| 1.5f64.powi(-(k as i32)))
}

/// `W* = U diag(S) Vᵀ` before any feature rescaling.
#[derive(Clone, Debug)]
pub struct LowRankTruth {
    pub w_star: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

pub fn gen_wstar(p: usize, m: usize, r: usize, seed: u64) -> Result<LowRankTruth> {
    if r == 0 || r > p.min(m) {
        return Err(Error::invalid(format!(
            "rank must be in 1..={}, got {r}",
            p.min(m)
        )));
    }
    let mut rng = stream(seed, 0);
    let a = DMatrix::from_fn(p, r, |_, _| gaussian(&mut rng));
    let b = DMatrix::from_fn(m, r, |_, _| gaussian(&mut rng));
    let svd = thin_svd(&(a * b.transpose()))?;
    let u = svd.u.columns(0, r).into_owned();
    let v = svd.v.columns(0, r).into_owned();
    let s = spectrum(r);
    let w_star = &u * DMatrix::from_diagonal(&s) * v.transpose();
    Ok(LowRankTruth { w_star, u, s, v })
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// `Σ_ab = 2^{-c|a-b|}`.
pub fn feature_covariance(p: usize, corr_decay: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |a, b| 2f64.powf(-corr_decay * a.abs_diff(b) as f64))
}

/// Everything the generator knows, in the rescaled coordinates of the
/// emitted features.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    /// Rescaled `W*`: `feature_scale` times the drawn low-rank matrix.
    pub w_star: DMatrix<f64>,
    pub u_true: DMatrix<f64>,
    pub s_diag: DVector<f64>,
    pub v_true: DMatrix<f64>,
    /// Covariance of the emitted (rescaled) features, `Σ / s²`.
    pub sigma: DMatrix<f64>,
    /// The divisor `s` applied to raw features.
    pub feature_scale: f64,
    /// `1 / ‖Σ / s²‖₂`.
    pub p_tilde: f64,
}

impl GroundTruth {
    /// `max_j ‖w*_j‖`.
    pub fn a_bound(&self) -> f64 {
        self.w_star
            .column_iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct Instance {
    pub config: GenConfig,
    pub train: Vec<TaskDataset>,
    /// Empty unless `n_validation > 0`.
    pub validation: Vec<TaskDataset>,
    pub truth: GroundTruth,
}

/// Draws `W*` and every task's samples.
pub fn generate(cfg: &GenConfig) -> Result<Instance> {
    cfg.validate()?;
    let low = gen_wstar(cfg.p, cfg.m, cfg.r, cfg.seed)?;
    let sigma = feature_covariance(cfg.p, cfg.corr_decay);
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("feature covariance"))?;
    let l = chol.l();
    let w_raw = &low.w_star * cfg.wstar_scale;
    let total = cfg.n + cfg.n_validation;

    // Sample by sample: p normals for the features, then the response, so
    // the first n rows do not depend on n_validation.
    let mut raw = Vec::with_capacity(cfg.m);
    for j in 0..cfg.m {
        let mut rng = stream(cfg.seed, 1 + j as u64);
        let w = w_raw.column(j);
        let mut x = DMatrix::zeros(total, cfg.p);
        let mut y = DVector::zeros(total);
        for i in 0..total {
            let z = DVector::from_fn(cfg.p, |_, _| gaussian(&mut rng));
            let xi = &l * z;
            let pred = xi.dot(&w);
            y[i] = match cfg.task_kind {
                TaskKind::Regression => {
                    let e: f64 = gaussian(&mut rng);
                    pred + cfg.noise_std * e
                }
                TaskKind::Classification => {
                    if rng.random_bool(sigmoid(pred)) {
                        1.0
                    } else {
                        -1.0
                    }
                }
            };
            x.set_row(i, &xi.transpose());
        }
        raw.push((x, y));
    }
    let scale = raw.iter().map(|(x, _)| max_row_norm(x)).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return Err(Error::invalid("generated design is identically zero"));
    }
    let w_star = w_raw * scale;

    let mut train = Vec::with_capacity(cfg.m);
    let mut validation = Vec::with_capacity(if cfg.n_validation > 0 { cfg.m } else { 0 });
    for (j, (x, y)) in raw.into_iter().enumerate() {
        let x = x / scale;
        train.push(TaskDataset::new(
            j,
            x.rows(0, cfg.n).into_owned(),
            y.rows(0, cfg.n).into_owned(),
        )?);
        if cfg.n_validation > 0 {
            validation.push(TaskDataset::new(
                j,
                x.rows(cfg.n, cfg.n_validation).into_owned(),
                y.rows(cfg.n, cfg.n_validation).into_owned(),
            )?);
        }
    }

    let sigma_scaled = &sigma / (scale * scale);
    let top = sigma
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(0.0, f64::max);
    let truth = GroundTruth {
        w_star,
        u_true: low.u,
        s_diag: low.s,
        v_true: low.v,
        sigma: sigma_scaled,
        feature_scale: scale,
        p_tilde: scale * scale / top,
    };
    Ok(Instance {
        config: cfg.clone(),
        train,
        validation,
        truth,
    })
}

/// `L(W) − L(W*)` under the generating distribution.
///
/// Regression is exact: `(1/2m) Σ_j (w_j − w*_j)ᵀ Σ (w_j − w*_j)`.
///
/// Classification is a Monte Carlo average with the label integrated out
/// analytically. For a fixed `w_j` the pair `(w*_jᵀx, w_jᵀx)` with
/// `x ~ N(0, Σ)` is bivariate Gaussian, so each task keeps `mc_samples`
/// fixed standard-normal pairs and maps them through the 2×2 covariance
/// of the pair; this is the same estimator as drawing full feature vectors.
#[derive(Clone, Debug)]
pub struct RiskEvaluator {
    kind: TaskKind,
    w_star: DMatrix<f64>,
    sigma: DMatrix<f64>,
    /// `Σ W*`, cached for the cross terms.
    sigma_w_star: DMatrix<f64>,
    draws: Vec<TaskDraws>,
}

#[derive(Clone, Debug)]
struct TaskDraws {
    /// Standard-normal pairs; the first coordinate drives `w*ᵀx`.
    xi: DMatrix<f64>,
    /// `σ(w*ᵀx)` at each draw.
    q: DVector<f64>,
    /// `w*ᵀΣw*`.
    var_star: f64,
    /// Monte Carlo Bayes risk at `w*`.
    bayes: f64,
}

impl RiskEvaluator {
    pub fn new(cfg: &GenConfig, truth: &GroundTruth, mc_samples: usize) -> Result<Self> {
        let m = truth.w_star.ncols();
        let sigma_w_star = &truth.sigma * &truth.w_star;
        let mut draws = Vec::new();
        if cfg.task_kind == TaskKind::Classification {
            if mc_samples == 0 {
                return Err(Error::invalid("classification risk needs mc_samples > 0"));
            }
            for j in 0..m {
                let mut rng = stream(cfg.seed, TEST_STREAM_BASE + j as u64);
                let xi = DMatrix::from_fn(mc_samples, 2, |_, _| gaussian(&mut rng));
                let var_star = truth.w_star.column(j).dot(&sigma_w_star.column(j)).max(0.0);
                let f_star = xi.column(0) * var_star.sqrt();
                let q = f_star.map(sigmoid);
                let bayes = expected_logistic(&f_star, &q);
                draws.push(TaskDraws {
                    xi,
                    q,
                    var_star,
                    bayes,
                });
            }
        }
        Ok(Self {
            kind: cfg.task_kind,
            w_star: truth.w_star.clone(),
            sigma: truth.sigma.clone(),
            sigma_w_star,
            draws,
        })
    }

    pub fn excess_risk(&self, w: &DMatrix<f64>) -> Result<f64> {
        if w.shape() != self.w_star.shape() {
            return Err(Error::invalid(format!(
                "predictor is {:?}, truth is {:?}",
                w.shape(),
                self.w_star.shape()
            )));
        }
        let m = self.w_star.ncols() as f64;
        match self.kind {
            TaskKind::Regression => {
                let d = w - &self.w_star;
                let sd = &self.sigma * &d;
                let quad: f64 = d.component_mul(&sd).sum();
                Ok(quad / (2.0 * m))
            }
            TaskKind::Classification => {
                let sw = &self.sigma * w;
                let mut total = 0.0;
                for (j, d) in self.draws.iter().enumerate() {
                    let var = w.column(j).dot(&sw.column(j)).max(0.0);
                    let cross = w.column(j).dot(&self.sigma_w_star.column(j));
                    // f = a·ξ₁ + b·ξ₂ reproduces Var f and Cov(f, f*).
                    let (a, b) = if d.var_star > 0.0 {
                        let a = cross / d.var_star.sqrt();
                        (a, (var - a * a).max(0.0).sqrt())
                    } else {
                        (0.0, var.sqrt())
                    };
                    let f = d.xi.column(0) * a + d.xi.column(1) * b;
                    total += expected_logistic(&f, &d.q) - d.bayes;
                }
                Ok(total / m)
            }
        }
    }
}

/// Mean over draws of `q ℓ(f, +1) + (1 − q) ℓ(f, −1) = softplus(−f) + (1 − q) f`.
fn expected_logistic(f: &DVector<f64>, q: &DVector<f64>) -> f64 {
    let total: f64 = f
        .iter()
        .zip(q.iter())
        .map(|(&a, &q)| softplus(-a) + (1.0 - q) * a)
        .sum();
    total / f.len() as f64
}

/// Splits every task's rows into a training part and a held-out part of
/// `⌈fraction·n_j⌉` rows (at least one row stays in training), chosen by a
/// seeded shuffle per task.
pub fn split_tasks(
    tasks: &[TaskDataset],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<TaskDataset>, Vec<TaskDataset>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "validation fraction must be in (0, 1), got {fraction}"
        )));
    }
    let mut train = Vec::with_capacity(tasks.len());
    let mut held = Vec::with_capacity(tasks.len());
    for t in tasks {
        let n = t.n();
        if n < 2 {
            return Err(Error::invalid(format!(
                "task {} has too few samples to split",
                t.index()
            )));
        }
        let n_val = ((fraction * n as f64).ceil() as usize).clamp(1, n - 1);
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = stream(seed, 1 + t.index() as u64);
        for i in (1..n).rev() {
            let k = rng.random_range(0..=i);
            order.swap(i, k);
        }
        let (val_idx, train_idx) = order.split_at(n_val);
        let mut train_idx = train_idx.to_vec();
        let mut val_idx = val_idx.to_vec();
        train_idx.sort_unstable();
        val_idx.sort_unstable();
        let pick = |idx: &[usize]| -> Result<TaskDataset> {
            let x = t.features().select_rows(idx.iter());
            let y = t.responses().select_rows(idx.iter());
            TaskDataset::with_scale(t.index(), x, y, t.scale())
        };
        train.push(pick(&train_idx)?);
        held.push(pick(&val_idx)?);
    }
    Ok((train, held))
}

/// Contents of `meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub p: usize,
    pub m: usize,
    /// Samples per task, in task order.
    pub n: Vec<usize>,
    pub task_kind: TaskKind,
    #[serde(default)]
    pub has_wstar: bool,
    #[serde(default)]
    pub has_utrue: bool,
    /// Set for generated data so the exact risk can be reconstructed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GenConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_scale: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub meta: DatasetMeta,
    pub tasks: Vec<TaskDataset>,
    /// `W*` in the coordinates of the loaded (rescaled) features.
    pub w_star: Option<DMatrix<f64>>,
    pub u_true: Option<DMatrix<f64>>,
}

impl LoadedDataset {
    /// Reconstructs the generator's ground truth when the directory was
    /// written from a generated instance and no task was rescaled on load.
    pub fn ground_truth(&self) -> Option<GroundTruth> {
        let cfg = self.meta.generator.as_ref()?;
        let scale = self.meta.feature_scale?;
        let w_star = self.w_star.clone()?;
        if self.tasks.iter().any(|t| t.scale() != 1.0) {
            return None;
        }
        let sigma = feature_covariance(cfg.p, cfg.corr_decay);
        let top = sigma
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(0.0, f64::max);
        let r = cfg.r;
        let u_true = self
            .u_true
            .clone()
            .unwrap_or_else(|| DMatrix::zeros(cfg.p, r));
        Some(GroundTruth {
            w_star,
            u_true,
            s_diag: spectrum(r),
            v_true: DMatrix::zeros(cfg.m, r),
            sigma: sigma / (scale * scale),
            feature_scale: scale,
            p_tilde: scale * scale / top,
        })
    }
}

fn task_file(dir: &Path, j: usize) -> PathBuf {
    dir.join(format!("task_{}.csv", j + 1))
}

fn dataset_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Dataset {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Writes `task_<j>.csv` (1-based), `meta.json` and, when given, `wstar.csv`
/// and `utrue.csv`. Values use the shortest representation that round-trips.
pub fn write_csv_tasks(
    dir: &Path,
    tasks: &[TaskDataset],
    task_kind: TaskKind,
    truth: Option<&GroundTruth>,
    generator: Option<&GenConfig>,
) -> Result<()> {
    let p = tasks
        .first()
        .map(|t| t.p())
        .ok_or_else(|| Error::invalid("no tasks to write"))?;
    fs::create_dir_all(dir)?;
    for (j, t) in tasks.iter().enumerate() {
        let mut w = csv::Writer::from_path(task_file(dir, j))?;
        let mut header = vec!["y".to_string()];
        header.extend((1..=p).map(|k| format!("x{k}")));
        w.write_record(&header)?;
        for i in 0..t.n() {
            let mut row = Vec::with_capacity(p + 1);
            row.push(t.responses()[i].to_string());
            row.extend(t.features().row(i).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    if let Some(truth) = truth {
        write_matrix(&dir.join("wstar.csv"), &truth.w_star)?;
        write_matrix(&dir.join("utrue.csv"), &truth.u_true)?;
    }
    let meta = DatasetMeta {
        p,
        m: tasks.len(),
        n: tasks.iter().map(|t| t.n()).collect(),
        task_kind,
        has_wstar: truth.is_some(),
        has_utrue: truth.is_some(),
        generator: generator.cloned(),
        feature_scale: truth.map(|t| t.feature_scale),
    };
    fs::write(
        dir.join("meta.json"),
        serde_json::to_string_pretty(&meta)? + "\n",
    )?;
    Ok(())
}

fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn read_matrix(path: &Path, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    let mut data = Vec::with_capacity(rows * cols);
    let mut nrows = 0;
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != cols {
            return Err(dataset_err(
                path,
                format!("expected {cols} columns, found {}", rec.len()),
            ));
        }
        for field in rec.iter() {
            data.push(parse_value(path, field)?);
        }
        nrows += 1;
    }
    if nrows != rows {
        return Err(dataset_err(
            path,
            format!("expected {rows} rows, found {nrows}"),
        ));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

fn parse_value(path: &Path, field: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| dataset_err(path, format!("`{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(dataset_err(path, format!("non-finite value `{field}`")));
    }
    Ok(v)
}

/// Reads a dataset directory written by [`write_csv_tasks`] or by hand.
///
/// Tasks whose largest feature row norm exceeds one are divided by it (the
/// factor is kept in [`TaskDataset::scale`] and applied to `W*`).
/// Classification labels in `{0, 1}` are mapped to `{−1, +1}`.
pub fn load_csv_tasks(dir: &Path) -> Result<LoadedDataset> {
    let meta_path = dir.join("meta.json");
    let meta_text = fs::read_to_string(&meta_path)
        .map_err(|e| dataset_err(&meta_path, format!("cannot read meta.json: {e}")))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text)
        .map_err(|e| dataset_err(&meta_path, format!("invalid meta.json: {e}")))?;
    if meta.m == 0 || meta.p == 0 || meta.n.len() != meta.m {
        return Err(dataset_err(
            &meta_path,
            "meta.json needs p > 0, m > 0 and one n per task",
        ));
    }

    let mut tasks = Vec::with_capacity(meta.m);
    let mut remapped = 0usize;
    for j in 0..meta.m {
        let path = task_file(dir, j);
        let mut reader = csv::Reader::from_path(&path)
            .map_err(|e| dataset_err(&path, format!("cannot open: {e}")))?;
        let header = reader.headers()?.clone();
        if header.len() != meta.p + 1 {
            return Err(dataset_err(
                &path,
                format!(
                    "header has {} columns, expected {}",
                    header.len(),
                    meta.p + 1
                ),
            ));
        }
        let mut ys = Vec::new();
        let mut xs = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            if rec.len() != meta.p + 1 {
                return Err(dataset_err(
                    &path,
                    format!("row with {} columns", rec.len()),
                ));
            }
            ys.push(parse_value(&path, &rec[0])?);
            for field in rec.iter().skip(1) {
                xs.push(parse_value(&path, field)?);
            }
        }
        let n = ys.len();
        if n == 0 {
            return Err(dataset_err(&path, "task has no samples"));
        }
        if n != meta.n[j] {
            return Err(dataset_err(
                &path,
                format!("meta.json says {} rows, found {n}", meta.n[j]),
            ));
        }
        let mut x = DMatrix::from_row_slice(n, meta.p, &xs);
        let mut y = DVector::from_vec(ys);
        if meta.task_kind == TaskKind::Classification {
            for v in y.iter_mut() {
                if *v == 0.0 {
                    *v = -1.0;
                    remapped += 1;
                } else if *v != 1.0 && *v != -1.0 {
                    return Err(dataset_err(
                        &path,
                        format!("label {v} is not in {{-1, 0, 1}}"),
                    ));
                }
            }
        }
        let norm = max_row_norm(&x);
        let scale = if norm > 1.0 { norm } else { 1.0 };
        if scale != 1.0 {
            x /= scale;
        }
        tasks.push(TaskDataset::with_scale(j, x, y, scale)?);
    }
    if remapped > 0 {
        log::warn!("mapped {remapped} classification labels from 0 to -1");
    }

    let w_star = if meta.has_wstar {
        let mut w = read_matrix(&dir.join("wstar.csv"), meta.p, meta.m)?;
        for (j, t) in tasks.iter().enumerate() {
            w.column_mut(j).scale_mut(t.scale());
        }
        Some(w)
    } else {
        None
    };
    let u_true = if meta.has_utrue {
        let path = dir.join("utrue.csv");
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(&path)?;
        let cols = r
            .records()
            .next()
            .transpose()?
            .map(|rec| rec.len())
            .ok_or_else(|| dataset_err(&path, "empty file"))?;
        Some(read_matrix(&path, meta.p, cols)?)
    } else {
        None
    };
    Ok(LoadedDataset {
        meta,
        tasks,
        w_star,
        u_true,
    })
}

/// Stable, ordered summary of an instance for logging.
pub fn describe(instance: &Instance) -> BTreeMap<&'static str, f64> {
    let mut out = BTreeMap::new();
    out.insert("feature_scale", instance.truth.feature_scale);
    out.insert("p_tilde", instance.truth.p_tilde);
    out.insert("a_bound", instance.truth.a_bound());
    out
}

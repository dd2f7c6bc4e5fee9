//! Scalar losses and per-task empirical quantities.
//!
//! Per-task quantities follow the `1/n` convention:
//! `L_j(w) = (1/n) Σ_i ℓ(wᵀx_i, y_i)`. The `1/m` task average is applied
//! once, by whoever aggregates columns into a matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row norms may exceed one by this much after floating-point rescaling.
const ROW_NORM_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Squared,
    Logistic,
}

/// A twice-differentiable loss `ℓ(a, y)` in the prediction `a`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossModel {
    kind: LossKind,
    smoothness: f64,
    lipschitz: f64,
}

impl LossModel {
    /// `ℓ(a,y) = ½(a−y)²`, curvature exactly 1.
    pub fn squared() -> Self {
        Self {
            kind: LossKind::Squared,
            smoothness: 1.0,
            lipschitz: 1.0,
        }
    }

    /// `ℓ(a,y) = ln(1 + exp(−y·a))` with `y ∈ {−1, +1}`, curvature at most ¼.
    pub fn logistic() -> Self {
        Self {
            kind: LossKind::Logistic,
            smoothness: 0.25,
            lipschitz: 1.0,
        }
    }

    pub fn from_kind(kind: LossKind) -> Self {
        match kind {
            LossKind::Squared => Self::squared(),
            LossKind::Logistic => Self::logistic(),
        }
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    /// Upper bound `H` on `ℓ''(a, y)`.
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn check_label(&self, y: f64) -> Result<()> {
        match self.kind {
            LossKind::Squared if y.is_finite() => Ok(()),
            LossKind::Squared => Err(Error::NonFinite("response")),
            LossKind::Logistic if y == 1.0 || y == -1.0 => Ok(()),
            LossKind::Logistic => Err(Error::InvalidLabel { label: y }),
        }
    }

    pub fn value(&self, a: f64, y: f64) -> Result<f64> {
        self.check_label(y)?;
        Ok(self.value_unchecked(a, y))
    }

    /// `(ℓ'(a,y), ℓ''(a,y))`.
    pub fn derivatives(&self, a: f64, y: f64) -> Result<(f64, f64)> {
        self.check_label(y)?;
        Ok(self.derivatives_unchecked(a, y))
    }

    #[inline]
    pub(crate) fn value_unchecked(&self, a: f64, y: f64) -> f64 {
        match self.kind {
            LossKind::Squared => 0.5 * (a - y) * (a - y),
            LossKind::Logistic => softplus(-y * a),
        }
    }

    #[inline]
    pub(crate) fn derivatives_unchecked(&self, a: f64, y: f64) -> (f64, f64) {
        match self.kind {
            LossKind::Squared => (a - y, 1.0),
            LossKind::Logistic => {
                let s = sigmoid(-y * a);
                (-y * s, s * (1.0 - s))
            }
        }
    }

    #[inline]
    pub(crate) fn first_derivative_unchecked(&self, a: f64, y: f64) -> f64 {
        match self.kind {
            LossKind::Squared => a - y,
            LossKind::Logistic => -y * sigmoid(-y * a),
        }
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One task's design matrix (rows `x_iᵀ`, each of norm at most one) and responses.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskDataset {
    index: usize,
    features: DMatrix<f64>,
    responses: DVector<f64>,
    scale: f64,
}

impl TaskDataset {
    /// Builds a task after checking shapes, finiteness and the unit row-norm bound.
    pub fn new(index: usize, features: DMatrix<f64>, responses: DVector<f64>) -> Result<Self> {
        Self::with_scale(index, features, responses, 1.0)
    }

    /// Like [`TaskDataset::new`], recording that features were divided by `scale` at load time.
    pub fn with_scale(
        index: usize,
        features: DMatrix<f64>,
        responses: DVector<f64>,
        scale: f64,
    ) -> Result<Self> {
        if features.nrows() != responses.len() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                got: responses.len(),
            });
        }
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::invalid(
                "task must have at least one sample and one feature",
            ));
        }
        if !features.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        if !responses.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("responses"));
        }
        let max_norm = max_row_norm(&features);
        if max_norm > 1.0 + ROW_NORM_SLACK {
            return Err(Error::invalid(format!(
                "task {index}: feature row norm {max_norm} exceeds 1"
            )));
        }
        Ok(Self {
            index,
            features,
            responses,
            scale,
        })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn responses(&self) -> &DVector<f64> {
        &self.responses
    }

    /// Factor the raw features were divided by to satisfy the row-norm bound.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }

    pub fn check_labels(&self, model: &LossModel) -> Result<()> {
        self.responses
            .iter()
            .try_for_each(|&y| model.check_label(y))
    }

    fn check_dim(&self, w: &DVector<f64>) -> Result<()> {
        if w.len() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                got: w.len(),
            });
        }
        Ok(())
    }
}

pub fn max_row_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.norm()).fold(0.0, f64::max)
}

/// `L_j(w) = (1/n) Σ ℓ(wᵀx_i, y_i)`.
pub fn task_loss(model: &LossModel, data: &TaskDataset, w: &DVector<f64>) -> Result<f64> {
    data.check_dim(w)?;
    data.check_labels(model)?;
    let preds = data.features() * w;
    let total: f64 = preds
        .iter()
        .zip(data.responses().iter())
        .map(|(&a, &y)| model.value_unchecked(a, y))
        .sum();
    Ok(total / data.n() as f64)
}

/// `∇L_j(w) = (1/n) Σ ℓ'(wᵀx_i, y_i) x_i`.
pub fn task_gradient(
    model: &LossModel,
    data: &TaskDataset,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    data.check_dim(w)?;
    data.check_labels(model)?;
    let mut residual = data.features() * w;
    for (a, &y) in residual.iter_mut().zip(data.responses().iter()) {
        *a = model.first_derivative_unchecked(*a, y);
    }
    Ok(data.features().tr_mul(&residual) / data.n() as f64)
}

/// `∇²L_j(w) = (1/n) Σ ℓ''(wᵀx_i, y_i) x_i x_iᵀ`.
pub fn task_hessian(
    model: &LossModel,
    data: &TaskDataset,
    w: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    data.check_dim(w)?;
    data.check_labels(model)?;
    Ok(weighted_gram(model, data, w))
}

fn weighted_gram(model: &LossModel, data: &TaskDataset, w: &DVector<f64>) -> DMatrix<f64> {
    let x = data.features();
    let n = data.n() as f64;
    match model.kind() {
        LossKind::Squared => x.tr_mul(x) / n,
        LossKind::Logistic => {
            let preds = x * w;
            let mut scaled = x.clone();
            for (i, (&a, &y)) in preds.iter().zip(data.responses().iter()).enumerate() {
                let (_, curv) = model.derivatives_unchecked(a, y);
                scaled.row_mut(i).scale_mut(curv.sqrt());
            }
            scaled.tr_mul(&scaled) / n
        }
    }
}

/// `∇²L_j(w) · v` without forming the Hessian.
pub fn task_hessian_vector_product(
    model: &LossModel,
    data: &TaskDataset,
    w: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    data.check_dim(w)?;
    data.check_dim(v)?;
    data.check_labels(model)?;
    let x = data.features();
    let preds = x * w;
    let mut xv = x * v;
    for ((t, &a), &y) in xv.iter_mut().zip(preds.iter()).zip(data.responses().iter()) {
        *t *= model.derivatives_unchecked(a, y).1;
    }
    Ok(x.tr_mul(&xv) / data.n() as f64)
}

/// `(∇²L_j(w) + ridge·I)⁻¹ ∇L_j(w)`, solved by Cholesky.
pub fn task_newton_direction(
    model: &LossModel,
    data: &TaskDataset,
    w: &DVector<f64>,
    ridge: f64,
) -> Result<DVector<f64>> {
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::invalid(format!(
            "ridge must be finite and >= 0, got {ridge}"
        )));
    }
    let grad = task_gradient(model, data, w)?;
    if ridge == 0.0 && data.n() < data.p() {
        return Err(Error::NotPositiveDefinite(
            "Hessian is rank-deficient (n < p)",
        ));
    }
    let mut hess = weighted_gram(model, data, w);
    for i in 0..hess.nrows() {
        hess[(i, i)] += ridge;
    }
    solve_spd(hess, &grad, "Newton system")
}

/// Solves `A x = b` for symmetric positive-definite `A`, rejecting numerically singular systems.
pub(crate) fn solve_spd(
    a: DMatrix<f64>,
    b: &DVector<f64>,
    what: &'static str,
) -> Result<DVector<f64>> {
    let max_diag = a.diagonal().iter().cloned().fold(0.0, f64::max);
    let chol = a.cholesky().ok_or(Error::NotPositiveDefinite(what))?;
    let min_pivot = chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|d| d * d)
        .fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-13 * max_diag) {
        return Err(Error::NotPositiveDefinite(what));
    }
    Ok(chol.solve(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_task(rng: &mut ChaCha8Rng, n: usize, p: usize, logistic: bool) -> TaskDataset {
        let mut x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
        let s = max_row_norm(&x);
        x /= s;
        let y = DVector::from_fn(n, |_, _| {
            if logistic {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                }
            } else {
                rng.random_range(-2.0..2.0)
            }
        });
        TaskDataset::new(0, x, y).unwrap()
    }

    fn model(logistic: bool) -> LossModel {
        if logistic {
            LossModel::logistic()
        } else {
            LossModel::squared()
        }
    }

    #[test]
    fn scalar_loss_examples() {
        let sq = LossModel::squared();
        let lg = LossModel::logistic();
        assert_eq!(sq.value(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(sq.value(2.0, 1.0).unwrap(), 0.5);
        assert!((lg.value(0.0, 1.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(sq.derivatives(2.0, 1.0).unwrap(), (1.0, 1.0));
        assert_eq!(lg.derivatives(0.0, 1.0).unwrap(), (-0.5, 0.25));
    }

    #[test]
    fn logistic_derivatives_match_finite_differences_at_three() {
        let lg = LossModel::logistic();
        let h = 1e-6;
        let fd1 = (lg.value(3.0 + h, -1.0).unwrap() - lg.value(3.0 - h, -1.0).unwrap()) / (2.0 * h);
        let fd2 = (lg.derivatives(3.0 + h, -1.0).unwrap().0
            - lg.derivatives(3.0 - h, -1.0).unwrap().0)
            / (2.0 * h);
        let (d1, d2) = lg.derivatives(3.0, -1.0).unwrap();
        assert!((fd1 - 0.952574).abs() < 1e-6);
        assert!((d1 - fd1).abs() < 1e-8);
        assert!((d2 - 0.045177).abs() < 1e-6);
        assert!((d2 - fd2).abs() < 1e-8);
    }

    #[test]
    fn logistic_is_stable_for_large_margins() {
        let lg = LossModel::logistic();
        assert!(lg.value(800.0, -1.0).unwrap().is_finite());
        assert!((lg.value(800.0, -1.0).unwrap() - 800.0).abs() < 1e-9);
        assert_eq!(lg.value(800.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn logistic_rejects_bad_labels() {
        let lg = LossModel::logistic();
        assert!(matches!(
            lg.value(0.0, 0.0),
            Err(Error::InvalidLabel { .. })
        ));
        assert!(lg.derivatives(0.0, 0.5).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for logistic in [false, true] {
            let m = model(logistic);
            for _ in 0..10_000 {
                let a: f64 = rng.random_range(-8.0..8.0);
                let y = if logistic {
                    if rng.random_bool(0.5) {
                        1.0
                    } else {
                        -1.0
                    }
                } else {
                    rng.random_range(-3.0..3.0)
                };
                let h = 1e-5;
                let fd1 = (m.value(a + h, y).unwrap() - m.value(a - h, y).unwrap()) / (2.0 * h);
                let fd2 = (m.derivatives(a + h, y).unwrap().0 - m.derivatives(a - h, y).unwrap().0)
                    / (2.0 * h);
                let (d1, d2) = m.derivatives(a, y).unwrap();
                assert!(
                    (d1 - fd1).abs() <= 1e-6 * d1.abs().max(1e-3),
                    "{a} {y} {d1} {fd1}"
                );
                assert!(
                    (d2 - fd2).abs() <= 1e-5 * d2.abs().max(1e-3),
                    "{a} {y} {d2} {fd2}"
                );
                assert!(d2 >= 0.0 && d2 <= m.smoothness());
            }
        }
    }

    #[test]
    fn task_loss_small_examples() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 0.0]);
        let t = TaskDataset::new(0, x, y).unwrap();
        let sq = LossModel::squared();
        assert_eq!(task_loss(&sq, &t, &DVector::zeros(2)).unwrap(), 0.25);
        let interp = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(task_loss(&sq, &t, &interp).unwrap(), 0.0);
        assert_eq!(task_gradient(&sq, &t, &interp).unwrap(), DVector::zeros(2));
        assert!(matches!(
            task_loss(&sq, &t, &DVector::zeros(3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn task_loss_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for logistic in [false, true] {
            let m = model(logistic);
            let t = random_task(&mut rng, 5, 3, logistic);
            let w = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let mut naive = 0.0;
            for i in 0..5 {
                let mut a = 0.0;
                for k in 0..3 {
                    a += t.features()[(i, k)] * w[k];
                }
                naive += m.value(a, t.responses()[i]).unwrap();
            }
            naive /= 5.0;
            assert!((task_loss(&m, &t, &w).unwrap() - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn single_sample_gradient_at_zero() {
        let x = DMatrix::from_row_slice(1, 3, &[0.6, 0.0, 0.8]);
        let t = TaskDataset::new(0, x, DVector::from_vec(vec![2.5])).unwrap();
        let g = task_gradient(&LossModel::squared(), &t, &DVector::zeros(3)).unwrap();
        assert_eq!(g, DVector::from_vec(vec![-1.5, 0.0, -2.0]));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for logistic in [false, true] {
            let m = model(logistic);
            let t = random_task(&mut rng, 8, 4, logistic);
            let w = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let g = task_gradient(&m, &t, &w).unwrap();
            let h = 1e-6;
            for k in 0..4 {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[k] += h;
                wm[k] -= h;
                let fd =
                    (task_loss(&m, &t, &wp).unwrap() - task_loss(&m, &t, &wm).unwrap()) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1e-2));
            }
        }
    }

    #[test]
    fn newton_direction_examples() {
        let sq = LossModel::squared();
        let x = DMatrix::<f64>::identity(3, 3);
        let y = DVector::from_vec(vec![0.5, -0.25, 1.0]);
        let t = TaskDataset::new(0, x, y.clone()).unwrap();
        let w = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        let d = task_newton_direction(&sq, &t, &w, 0.0).unwrap();
        // Quadratic objective: one Newton step lands on the OLS solution.
        assert!(((&w - &d) - &y).norm() < 1e-14);

        // Isotropic design, (1/n) XᵀX = I/2: the Newton direction is a scaled gradient.
        let xs = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        let ys = DVector::from_vec(vec![0.3, -0.7, -0.3, 0.1]);
        let t = TaskDataset::new(0, xs, ys).unwrap();
        let hess = task_hessian(&sq, &t, &DVector::zeros(2)).unwrap();
        assert_eq!(hess, DMatrix::identity(2, 2) * 0.5);
        let g = task_gradient(&sq, &t, &DVector::zeros(2)).unwrap();
        let d = task_newton_direction(&sq, &t, &DVector::zeros(2), 0.0).unwrap();
        assert!((d * 0.5 - g).norm() < 1e-14);
    }

    #[test]
    fn newton_direction_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for logistic in [false, true] {
            let m = model(logistic);
            let t = random_task(&mut rng, 20, 5, logistic);
            let w = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
            let d = task_newton_direction(&m, &t, &w, 1e-3).unwrap();
            // Oracle: explicit Hessian by summation, explicit inverse by LU.
            let mut h = DMatrix::<f64>::identity(5, 5) * 1e-3;
            let mut g = DVector::<f64>::zeros(5);
            for i in 0..20 {
                let xi = t.features().row(i).transpose();
                let (d1, d2) = m.derivatives(xi.dot(&w), t.responses()[i]).unwrap();
                h += &xi * xi.transpose() * (d2 / 20.0);
                g += &xi * (d1 / 20.0);
            }
            let oracle = h.try_inverse().unwrap() * g;
            assert!((d - &oracle).norm() <= 1e-8 * oracle.norm().max(1.0));
        }
    }

    #[test]
    fn newton_direction_rejects_singular_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = random_task(&mut rng, 3, 6, false);
        let r = task_newton_direction(&LossModel::squared(), &t, &DVector::zeros(6), 0.0);
        assert!(matches!(r, Err(Error::NotPositiveDefinite(_))));
        assert!(task_newton_direction(&LossModel::squared(), &t, &DVector::zeros(6), 1e-6).is_ok());
    }

    #[test]
    fn hessian_spectral_norm_is_bounded_by_smoothness() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for logistic in [false, true] {
            let m = model(logistic);
            let t = random_task(&mut rng, 30, 6, logistic);
            let w = DVector::from_fn(6, |_, _| rng.random_range(-3.0..3.0));
            let h = task_hessian(&m, &t, &w).unwrap();
            let top = h.symmetric_eigenvalues().max();
            assert!(top <= m.smoothness() * max_row_norm(t.features()).powi(2) + 1e-12);
        }
    }

    #[test]
    fn dataset_rejects_long_rows() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert!(TaskDataset::new(0, x, DVector::from_vec(vec![0.0])).is_err());
    }

    proptest! {
        #[test]
        fn gradient_is_linear_in_the_dataset(seed in 0u64..1000, n1 in 1usize..8, n2 in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = LossModel::logistic();
            let a = random_task(&mut rng, n1, 3, true);
            let b = random_task(&mut rng, n2, 3, true);
            let w = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let mut x = DMatrix::zeros(n1 + n2, 3);
            x.view_mut((0, 0), (n1, 3)).copy_from(a.features());
            x.view_mut((n1, 0), (n2, 3)).copy_from(b.features());
            let mut y = DVector::zeros(n1 + n2);
            y.rows_mut(0, n1).copy_from(a.responses());
            y.rows_mut(n1, n2).copy_from(b.responses());
            let joint = TaskDataset::new(0, x, y).unwrap();
            let g = task_gradient(&m, &joint, &w).unwrap();
            let ga = task_gradient(&m, &a, &w).unwrap();
            let gb = task_gradient(&m, &b, &w).unwrap();
            let weighted = (ga * n1 as f64 + gb * n2 as f64) / (n1 + n2) as f64;
            prop_assert!((g - weighted).norm() < 1e-12);
        }
    }
}

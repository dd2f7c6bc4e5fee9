//! Per-worker subproblems: ridge-type fits of one task's loss.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::losses::{solve_spd, LossKind, LossModel};

/// Gradient-norm tolerance for iterative inner solves.
pub const INNER_TOL: f64 = 1e-8;

const MAX_NEWTON: usize = 500;

/// `min_v (1/n) Σ ℓ(x_iᵀv, y_i) + ⟨b, v⟩ + (μ/2)‖v − c‖²`.
///
/// Covers local ridge fits (`b = 0, c = 0`), refits in a subspace (`x = X U`)
/// and the ADMM worker step.
#[derive(Clone, Copy, Debug)]
pub struct InnerProblem<'a> {
    pub model: &'a LossModel,
    pub x: &'a DMatrix<f64>,
    pub y: &'a DVector<f64>,
    pub linear: Option<&'a DVector<f64>>,
    pub mu: f64,
    pub center: Option<&'a DVector<f64>>,
}

impl<'a> InnerProblem<'a> {
    pub fn ridge(model: &'a LossModel, x: &'a DMatrix<f64>, y: &'a DVector<f64>, mu: f64) -> Self {
        Self {
            model,
            x,
            y,
            linear: None,
            mu,
            center: None,
        }
    }

    fn n(&self) -> f64 {
        self.x.nrows() as f64
    }

    pub fn objective(&self, v: &DVector<f64>) -> f64 {
        let preds = self.x * v;
        let loss: f64 = preds
            .iter()
            .zip(self.y.iter())
            .map(|(&a, &y)| self.model.value_unchecked(a, y))
            .sum::<f64>()
            / self.n();
        let lin = self.linear.map_or(0.0, |b| b.dot(v));
        let quad = match self.center {
            Some(c) => (v - c).norm_squared(),
            None => v.norm_squared(),
        };
        loss + lin + 0.5 * self.mu * quad
    }

    pub fn gradient(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut r = self.x * v;
        for (a, &y) in r.iter_mut().zip(self.y.iter()) {
            *a = self.model.first_derivative_unchecked(*a, y);
        }
        let mut g = self.x.tr_mul(&r) / self.n();
        if let Some(b) = self.linear {
            g += b;
        }
        match self.center {
            Some(c) => g += (v - c) * self.mu,
            None => g += v * self.mu,
        }
        g
    }

    /// Solves `(Xᵀ diag(d) X / n + μI) z = rhs`.
    fn solve_curvature(&self, d: &DVector<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let (n, dim) = self.x.shape();
        if n < dim && self.mu > 0.0 {
            // Woodbury: invert through the n × n system when it is smaller.
            let mut y = self.x.clone();
            for (i, &di) in d.iter().enumerate() {
                y.row_mut(i).scale_mut((di / self.n()).sqrt());
            }
            let mut small = &y * y.transpose();
            for i in 0..n {
                small[(i, i)] += self.mu;
            }
            let t = solve_spd(small, &(&y * rhs), "inner system")?;
            return Ok((rhs - y.tr_mul(&t)) / self.mu);
        }
        let mut y = self.x.clone();
        for (i, &di) in d.iter().enumerate() {
            y.row_mut(i).scale_mut(di.sqrt());
        }
        let mut h = y.tr_mul(&y) / self.n();
        for i in 0..dim {
            h[(i, i)] += self.mu;
        }
        solve_spd(h, rhs, "inner system")
    }
}

/// Minimizes an [`InnerProblem`]; closed form for squared loss, damped
/// Newton (warm-started at `warm`) to `‖∇‖ ≤ INNER_TOL` otherwise.
pub fn minimize_task_objective(
    prob: &InnerProblem<'_>,
    warm: &DVector<f64>,
) -> Result<DVector<f64>> {
    let dim = prob.x.ncols();
    if prob.x.nrows() != prob.y.len() {
        return Err(Error::DimensionMismatch {
            expected: prob.x.nrows(),
            got: prob.y.len(),
        });
    }
    if warm.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: warm.len(),
        });
    }
    if !(prob.mu >= 0.0) {
        return Err(Error::invalid(format!(
            "curvature weight must be >= 0, got {}",
            prob.mu
        )));
    }
    if prob.mu == 0.0 && prob.x.nrows() < dim {
        return Err(Error::NotPositiveDefinite(
            "fewer samples than unknowns with zero ridge",
        ));
    }
    match prob.model.kind() {
        LossKind::Squared => {
            let mut rhs = prob.x.tr_mul(prob.y) / prob.n();
            if let Some(b) = prob.linear {
                rhs -= b;
            }
            if let Some(c) = prob.center {
                rhs += c * prob.mu;
            }
            prob.solve_curvature(&DVector::from_element(prob.x.nrows(), 1.0), &rhs)
        }
        LossKind::Logistic => damped_newton(prob, warm.clone()),
    }
}

fn damped_newton(prob: &InnerProblem<'_>, mut v: DVector<f64>) -> Result<DVector<f64>> {
    let mut f = prob.objective(&v);
    let mut gnorm = f64::INFINITY;
    for _ in 0..MAX_NEWTON {
        let g = prob.gradient(&v);
        gnorm = g.norm();
        if gnorm <= INNER_TOL {
            return Ok(v);
        }
        let preds = prob.x * &v;
        let d = DVector::from_iterator(
            preds.len(),
            preds
                .iter()
                .zip(prob.y.iter())
                .map(|(&a, &y)| prob.model.derivatives_unchecked(a, y).1),
        );
        let dir = prob.solve_curvature(&d, &g)?;
        let decrement = g.dot(&dir);
        if !(decrement > 0.0) || !decrement.is_finite() {
            break;
        }
        // Inside the quadratic region rounding swamps the Armijo test.
        if decrement < 1e-14 * (1.0 + f.abs()) {
            v -= &dir;
            f = prob.objective(&v);
            continue;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &v - &dir * t;
            let fc = prob.objective(&cand);
            if fc <= f - 1e-4 * t * decrement {
                v = cand;
                f = fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let g = prob.gradient(&v).norm();
    if g <= INNER_TOL {
        return Ok(v);
    }
    Err(Error::InnerSolve {
        iterations: MAX_NEWTON,
        grad_norm: g.min(gnorm),
    })
}

//! Dense matrix primitives shared by the solvers.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Seed of the power-iteration start vector.
const POWER_SEED: u64 = 0x5eed_1ead;

/// One standard normal draw.
pub fn gaussian<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Relative residual below which a direction counts as already spanned.
pub const SPANNED_TOL: f64 = 1e-8;

/// `M = U · diag(S) · Vᵀ` with `S` nonincreasing.
#[derive(Clone, Debug)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl ThinSvd {
    pub fn rank(&self) -> usize {
        self.rank_above(0.0)
    }

    /// Number of singular values strictly greater than `tol`.
    pub fn rank_above(&self, tol: f64) -> usize {
        self.s.iter().filter(|&&s| s > tol).count()
    }

    /// Rank-`k` truncation `U_k S_k V_kᵀ`.
    pub fn truncate(&self, k: usize) -> DMatrix<f64> {
        reassemble(&self.u, self.s.iter().copied().take(k), &self.v)
    }

    pub fn recompose(&self) -> DMatrix<f64> {
        self.truncate(self.s.len())
    }
}

fn reassemble(u: &DMatrix<f64>, s: impl Iterator<Item = f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(u.nrows(), v.nrows());
    for (k, sk) in s.enumerate() {
        if sk > 0.0 {
            out.ger(sk, &u.column(k), &v.column(k), 1.0);
        }
    }
    out
}

/// Thin SVD with singular values sorted descending and a deterministic sign
/// convention: the largest-magnitude entry of every left singular vector is positive.
pub fn thin_svd(m: &DMatrix<f64>) -> Result<ThinSvd> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("matrix passed to thin_svd"));
    }
    let (p, n) = m.shape();
    let k = p.min(n);
    if k == 0 {
        return Ok(ThinSvd {
            u: DMatrix::zeros(p, 0),
            s: DVector::zeros(0),
            v: DMatrix::zeros(n, 0),
        });
    }
    let svd = m.clone().svd(true, true);
    let u_raw = svd.u.expect("left singular vectors requested");
    let vt_raw = svd.v_t.expect("right singular vectors requested");
    let s_raw = svd.singular_values;

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s_raw[b].total_cmp(&s_raw[a]));

    let mut u = DMatrix::zeros(p, k);
    let mut v = DMatrix::zeros(n, k);
    let mut s = DVector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        let mut uc = u_raw.column(src).into_owned();
        let mut vc = vt_raw.row(src).transpose();
        if leading_sign(&uc) < 0.0 {
            uc.neg_mut();
            vc.neg_mut();
        }
        u.set_column(dst, &uc);
        v.set_column(dst, &vc);
        s[dst] = s_raw[src].max(0.0);
    }
    Ok(ThinSvd { u, s, v })
}

/// Sign of the entry with the largest magnitude (first one on ties).
fn leading_sign(x: &DVector<f64>) -> f64 {
    let mut best = 0.0f64;
    for &v in x.iter() {
        if v.abs() > best.abs() {
            best = v;
        }
    }
    if best < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// `U (Σ − τI)₊ Vᵀ`: the proximal operator of `τ‖·‖_*`.
pub fn sv_shrink(m: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    sv_shrink_with_spectrum(m, tau).map(|(x, _)| x)
}

/// Like [`sv_shrink`], also returning the shrunken singular values.
pub fn sv_shrink_with_spectrum(m: &DMatrix<f64>, tau: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!(
            "shrinkage threshold must be >= 0, got {tau}"
        )));
    }
    let svd = thin_svd(m)?;
    let shrunk = svd.s.map(|s| (s - tau).max(0.0));
    let x = reassemble(&svd.u, shrunk.iter().copied(), &svd.v);
    Ok((x, shrunk))
}

pub fn nuclear_norm(m: &DMatrix<f64>) -> Result<f64> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("matrix passed to nuclear_norm"));
    }
    if m.is_empty() {
        return Ok(0.0);
    }
    Ok(m.clone().svd(false, false).singular_values.sum())
}

/// Leading singular triplet: `M v = σ u`, `‖u‖ = ‖v‖ = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct SingularTriplet {
    pub u: DVector<f64>,
    pub sigma: f64,
    pub v: DVector<f64>,
}

/// Leading singular pair by power iteration on `MMᵀ` from a fixed seeded start.
///
/// Stops once `‖Mᵀu − σv‖ ≤ tol·σ`; `u` is always `Mv/‖Mv‖`, so it lies in the
/// column space of `M`. Falls back to [`thin_svd`] when `max_iter` is exhausted.
pub fn leading_pair(m: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<SingularTriplet> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be > 0, got {tol}")));
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("matrix passed to leading_pair"));
    }
    let scale = m.amax();
    if scale == 0.0 || m.is_empty() {
        return Err(Error::ZeroMatrix);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut x = DVector::from_fn(m.nrows(), |_, _| gaussian(&mut rng));
    x /= x.norm();

    for _ in 0..max_iter {
        let mut v = m.tr_mul(&x);
        let vn = v.norm();
        if vn == 0.0 {
            // Start landed in the left null space; restart from the heaviest column.
            x = heaviest_column(m);
            continue;
        }
        v /= vn;
        let mut u = m * &v;
        let sigma = u.norm();
        u /= sigma;
        let residual = (m.tr_mul(&u) - &v * sigma).norm();
        if residual <= tol * sigma {
            return Ok(sign_fixed(u, sigma, v));
        }
        x = u;
    }

    log::debug!("leading_pair: power iteration did not converge, using full SVD");
    let svd = thin_svd(m)?;
    let v = svd.v.column(0).into_owned();
    let mut u = m * &v;
    let sigma = u.norm();
    u /= sigma;
    Ok(sign_fixed(u, sigma, v))
}

fn heaviest_column(m: &DMatrix<f64>) -> DVector<f64> {
    let j = (0..m.ncols())
        .max_by(|&a, &b| m.column(a).norm().total_cmp(&m.column(b).norm()))
        .unwrap_or(0);
    let c = m.column(j).into_owned();
    let n = c.norm();
    c / n
}

fn sign_fixed(mut u: DVector<f64>, sigma: f64, mut v: DVector<f64>) -> SingularTriplet {
    if leading_sign(&u) < 0.0 {
        u.neg_mut();
        v.neg_mut();
    }
    SingularTriplet { u, sigma, v }
}

/// Returned when a candidate direction already lies in the span of a basis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpannedDirection {
    pub residual_norm: f64,
}

/// An ordered set of unit `p`-vectors, stored as the columns of a `p × t` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionBasis {
    columns: DMatrix<f64>,
}

impl ProjectionBasis {
    pub fn empty(p: usize) -> Self {
        Self {
            columns: DMatrix::zeros(p, 0),
        }
    }

    pub fn dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn len(&self) -> usize {
        self.columns.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.ncols() == 0
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.columns
    }

    /// Largest entry of `|UᵀU − I|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let g = self.columns.tr_mul(&self.columns);
        let t = g.nrows();
        (0..t)
            .flat_map(|i| (0..t).map(move |j| (i, j)))
            .map(|(i, j)| (g[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max)
    }

    /// Appends the normalized residual `u − Σ⟨b_k,u⟩b_k` (two classical passes).
    pub fn gram_schmidt_append(&mut self, u: &DVector<f64>) -> Result<(), SpannedDirection> {
        let norm = u.norm();
        let mut r = u.clone();
        for _ in 0..2 {
            if !self.is_empty() {
                let c = self.columns.tr_mul(&r);
                r -= &self.columns * c;
            }
        }
        let rn = r.norm();
        if !(norm > 0.0) || rn < SPANNED_TOL * norm {
            return Err(SpannedDirection { residual_norm: rn });
        }
        self.push(r / rn);
        Ok(())
    }

    /// Appends `u/‖u‖` as is, without orthogonalizing.
    ///
    /// Returns `max_k |⟨b_k, u⟩| / ‖u‖`, the amount by which the new column
    /// departs from orthogonality. Still rejects directions already spanned.
    pub fn append_unorthogonalized(&mut self, u: &DVector<f64>) -> Result<f64, SpannedDirection> {
        let norm = u.norm();
        let (defect, rn) = if self.is_empty() {
            (0.0, norm)
        } else {
            // The columns need not be orthogonal, so measure the residual
            // against an orthonormal basis of their span.
            let c = self.columns.tr_mul(u);
            let q = self.columns.clone().qr().q();
            let r = u - &q * q.tr_mul(u);
            (c.amax() / norm, r.norm())
        };
        if !(norm > 0.0) || rn < SPANNED_TOL * norm {
            return Err(SpannedDirection { residual_norm: rn });
        }
        self.push(u / norm);
        Ok(defect)
    }

    fn push(&mut self, col: DVector<f64>) {
        let t = self.columns.ncols();
        let cols = std::mem::replace(&mut self.columns, DMatrix::zeros(0, 0));
        let mut cols = cols.resize_horizontally(t + 1, 0.0);
        cols.set_column(t, &col);
        self.columns = cols;
    }

    /// Wraps a matrix whose columns are already orthonormal (within `1e-8`).
    pub fn from_orthonormal(columns: DMatrix<f64>) -> Result<Self> {
        let b = Self { columns };
        let defect = b.orthonormality_defect();
        if defect > 1e-8 {
            return Err(Error::invalid(format!(
                "columns are not orthonormal (defect {defect:e})"
            )));
        }
        Ok(b)
    }
}

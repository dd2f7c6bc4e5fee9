//! Validation-based hyperparameter selection.

use dmtl_core::losses::{LossModel, TaskDataset};
use dmtl_core::solvers::{empirical_loss, SolverKind};
use dmtl_core::SolverConfig;
use nalgebra::DMatrix;

use crate::error::{HarnessError, Result};

/// Relative gap below which two validation scores count as tied.
pub const TIE_TOL: f64 = 1e-12;

/// The path stops once this many consecutive candidates score worse than
/// the best so far.
pub const PATIENCE: usize = 3;

/// The knob a grid varies, larger meaning more regularization.
pub fn regularization(kind: SolverKind, cfg: &SolverConfig) -> f64 {
    match kind {
        SolverKind::Centralize | SolverKind::ProxGd | SolverKind::AccProxGd => cfg.lambda,
        SolverKind::Admm => cfg.rho,
        SolverKind::Dfw => -cfg.radius.unwrap_or(f64::INFINITY),
        SolverKind::Local
        | SolverKind::SvdTruncate
        | SolverKind::BestRep
        | SolverKind::Dgsp
        | SolverKind::Dnsp => cfg.ridge,
    }
}

/// Mean held-out loss of `w`.
pub fn validation_loss(
    validation: &[TaskDataset],
    model: &LossModel,
    w: &DMatrix<f64>,
) -> Result<f64> {
    Ok(empirical_loss(validation, model, w)?)
}

#[derive(Clone, Debug)]
pub struct Tuned {
    pub config: SolverConfig,
    pub score: f64,
    /// The fit at the selected point.
    pub fit: DMatrix<f64>,
    /// Every visited grid point with its score, strongest regularization first.
    pub candidates: Vec<(SolverConfig, f64)>,
}

/// Scores every grid point and returns the one with the smallest validation
/// loss; ties go to the larger regularization.
///
/// Candidates are visited from strongest to weakest regularization, and
/// `fit` receives the previous candidate's fit so it can warm-start along
/// the path. A candidate whose fit fails scores `+∞`. The walk stops after
/// `patience` consecutive candidates fail to improve on the best score.
pub fn tune<F>(
    kind: SolverKind,
    grid: &[SolverConfig],
    validation: &[TaskDataset],
    model: &LossModel,
    patience: Option<usize>,
    mut fit: F,
) -> Result<Tuned>
where
    F: FnMut(&SolverConfig, Option<&DMatrix<f64>>) -> Result<DMatrix<f64>>,
{
    if grid.is_empty() {
        return Err(HarnessError::config(format!(
            "empty tuning grid for {kind}"
        )));
    }
    let mut order: Vec<SolverConfig> = grid.to_vec();
    order.sort_by(|a, b| regularization(kind, b).total_cmp(&regularization(kind, a)));

    let mut candidates = Vec::with_capacity(order.len());
    let mut fits = Vec::with_capacity(order.len());
    let mut warm: Option<DMatrix<f64>> = None;
    let mut best_so_far = f64::INFINITY;
    let mut worse = 0;
    for cfg in order {
        if patience.is_some_and(|k| worse >= k) {
            break;
        }
        let score = match fit(&cfg, warm.as_ref()) {
            Ok(w) => {
                let s = validation_loss(validation, model, &w)?;
                fits.push(Some(w.clone()));
                warm = Some(w);
                if s.is_finite() {
                    s
                } else {
                    f64::INFINITY
                }
            }
            Err(e) => {
                log::debug!("{kind}: candidate {cfg:?} failed: {e}");
                fits.push(None);
                f64::INFINITY
            }
        };
        if (!best_so_far.is_finite() && score.is_finite())
            || score < best_so_far - TIE_TOL * best_so_far.abs().max(1.0)
        {
            best_so_far = score;
            worse = 0;
        } else {
            worse += 1;
        }
        candidates.push((cfg, score));
    }

    let best = select(&candidates).ok_or_else(|| {
        HarnessError::Core(dmtl_core::Error::InvalidArgument(format!(
            "every {kind} tuning candidate failed"
        )))
    })?;
    let (config, score) = candidates[best].clone();
    let fit = fits.swap_remove(best).expect("finite score implies a fit");
    Ok(Tuned {
        config,
        score,
        fit,
        candidates,
    })
}

/// Index of the smallest finite score; candidates are ordered strongest
/// regularization first, so the first of a tied group wins.
fn select(candidates: &[(SolverConfig, f64)]) -> Option<usize> {
    let min = candidates
        .iter()
        .map(|(_, s)| *s)
        .filter(|s| s.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return None;
    }
    candidates
        .iter()
        .position(|(_, s)| *s - min <= TIE_TOL * min.abs().max(1.0))
}

/// `{2^lo, …, 2^hi}·base`.
pub fn geometric_grid(base: f64, lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|k| base * 2f64.powi(k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn val() -> Vec<TaskDataset> {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 0.5]);
        vec![TaskDataset::new(0, x, DVector::from_vec(vec![1.0, 0.5])).unwrap()]
    }

    fn lambdas(values: &[f64]) -> Vec<SolverConfig> {
        values
            .iter()
            .map(|&lambda| SolverConfig {
                lambda,
                ..Default::default()
            })
            .collect()
    }

    // The "fit" maps λ to a scalar predictor; validation loss is then a
    // known function of λ, minimized at w = 1.
    fn fit(cfg: &SolverConfig, _: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_element(1, 1, 1.0 - (cfg.lambda - 0.3).abs()))
    }

    #[test]
    fn single_point_grid_returns_that_point() {
        let t = tune(
            SolverKind::Centralize,
            &lambdas(&[0.7]),
            &val(),
            &LossModel::squared(),
            None,
            fit,
        )
        .unwrap();
        assert_eq!(t.config.lambda, 0.7);
    }

    #[test]
    fn order_does_not_matter() {
        let grid = [0.05, 0.1, 0.2, 0.3, 0.4, 0.8];
        let a = tune(
            SolverKind::Centralize,
            &lambdas(&grid),
            &val(),
            &LossModel::squared(),
            None,
            fit,
        )
        .unwrap();
        let mut rev = grid;
        rev.reverse();
        let b = tune(
            SolverKind::Centralize,
            &lambdas(&rev),
            &val(),
            &LossModel::squared(),
            None,
            fit,
        )
        .unwrap();
        let shuffled = [0.3, 0.05, 0.8, 0.2, 0.4, 0.1];
        let c = tune(
            SolverKind::Centralize,
            &lambdas(&shuffled),
            &val(),
            &LossModel::squared(),
            None,
            fit,
        )
        .unwrap();
        assert_eq!(a.config.lambda, 0.3);
        assert_eq!(b.config.lambda, 0.3);
        assert_eq!(c.config.lambda, 0.3);
    }

    #[test]
    fn ties_go_to_stronger_regularization() {
        // 0.2 and 0.4 are equidistant from 0.3 and score identically.
        let t = tune(
            SolverKind::Centralize,
            &lambdas(&[0.2, 0.4]),
            &val(),
            &LossModel::squared(),
            None,
            fit,
        )
        .unwrap();
        assert_eq!(t.config.lambda, 0.4);
        // For Frank-Wolfe a smaller radius is the stronger constraint.
        let grid: Vec<_> = [1.0, 2.0]
            .iter()
            .map(|&r| SolverConfig {
                radius: Some(r),
                ..Default::default()
            })
            .collect();
        let t = tune(
            SolverKind::Dfw,
            &grid,
            &val(),
            &LossModel::squared(),
            None,
            |_, _| Ok(DMatrix::from_element(1, 1, 1.0)),
        )
        .unwrap();
        assert_eq!(t.config.radius, Some(1.0));
    }

    #[test]
    fn failed_candidates_are_skipped_and_warm_starts_flow_downward() {
        let mut seen = Vec::new();
        let t = tune(
            SolverKind::Centralize,
            &lambdas(&[0.1, 0.3, 0.9]),
            &val(),
            &LossModel::squared(),
            None,
            |cfg, warm| {
                seen.push((cfg.lambda, warm.map(|w| w[(0, 0)])));
                if cfg.lambda == 0.3 {
                    Err(dmtl_core::Error::ZeroMatrix.into())
                } else {
                    fit(cfg, warm)
                }
            },
        )
        .unwrap();
        assert_eq!(t.config.lambda, 0.1);
        assert_eq!(seen[0], (0.9, None));
        assert_eq!(seen[1].0, 0.3);
        // The failed fit leaves the warm start from 0.9 in place.
        assert_eq!(seen[2], (0.1, Some(1.0 - (0.9f64 - 0.3).abs())));
        assert!(tune(
            SolverKind::Centralize,
            &[],
            &val(),
            &LossModel::squared(),
            None,
            fit
        )
        .is_err());
    }

    #[test]
    fn patience_cuts_the_path_after_the_optimum() {
        let grid = [0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.8];
        let mut visited = 0;
        let t = tune(
            SolverKind::Centralize,
            &lambdas(&grid),
            &val(),
            &LossModel::squared(),
            Some(2),
            |cfg, w| {
                visited += 1;
                fit(cfg, w)
            },
        )
        .unwrap();
        assert_eq!(t.config.lambda, 0.3);
        // 0.8, 0.4, 0.3, then 0.2 and 0.1 fail to improve.
        assert_eq!(visited, 5);
        assert_eq!(t.candidates.len(), 5);
    }

    #[test]
    fn grid_is_geometric() {
        let g = geometric_grid(3.0, -2, 1);
        assert_eq!(g, vec![0.75, 1.5, 3.0, 6.0]);
    }
}

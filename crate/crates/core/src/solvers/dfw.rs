//! Distributed Frank-Wolfe over the nuclear-norm ball `‖W‖_* ≤ R`.

use nalgebra::DMatrix;

use super::oneshot::local_fit;
use super::{Diagnose, SolverConfig};
use crate::error::{Error, Result};
use crate::losses::{LossModel, TaskDataset};
use crate::matkernels::leading_pair;
use crate::runtime::{Cluster, DistributedSolver, RoundStatus};

pub(crate) const PAIR_TOL: f64 = 1e-10;
pub(crate) const PAIR_MAX_ITER: usize = 2_000;

#[derive(Clone, Debug)]
pub struct Dfw {
    radius: f64,
    t: u64,
}

impl Dfw {
    /// Starts at `W = 0`. The radius is `cfg.radius`, else `√(r m)·A` with
    /// `A = cfg.a_bound` or, failing that, the largest column norm of the
    /// Local solution.
    pub fn setup(
        tasks: Vec<TaskDataset>,
        model: LossModel,
        cfg: &SolverConfig,
    ) -> Result<(Self, Cluster<()>)> {
        let mut cluster = Cluster::new(tasks, model, |_| ())?;
        let radius = match cfg.radius {
            Some(r) => r,
            None => {
                let a = match cfg.a_bound {
                    Some(a) => a,
                    None => {
                        let ridge = cfg.ridge;
                        let norms = cluster.local(|w| Ok(local_fit(w, ridge)?.norm()))?;
                        norms.into_iter().fold(0.0, f64::max)
                    }
                };
                ((cfg.rank * cluster.m()) as f64).sqrt() * a
            }
        };
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::invalid(format!(
                "Frank-Wolfe radius must be > 0, got {radius}"
            )));
        }
        Ok((Self { radius, t: 0 }, cluster))
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

impl DistributedSolver for Dfw {
    type State = ();

    fn vectors_per_round(&self) -> u64 {
        2
    }

    fn round(&mut self, cluster: &mut Cluster<()>) -> Result<RoundStatus> {
        let g = cluster.gather(|w| w.gradient())?;
        let pair = match leading_pair(&g, PAIR_TOL, PAIR_MAX_ITER) {
            Ok(p) => p,
            Err(Error::ZeroMatrix) => return Ok(RoundStatus::Converged),
            Err(e) => return Err(e),
        };
        let gamma = 2.0 / (self.t as f64 + 2.0);
        let atoms: DMatrix<f64> = &pair.u * pair.v.transpose();
        let radius = self.radius;
        cluster.scatter(&atoms, |w, atom| {
            let next = w.w() * (1.0 - gamma) - atom * (gamma * radius);
            w.set_w(next)
        })?;
        self.t += 1;
        Ok(RoundStatus::Continue)
    }
}

impl Diagnose for Dfw {
    fn diagnostics(&self) -> Vec<(&'static str, f64)> {
        vec![("radius", self.radius)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matkernels::gaussian;
    use crate::matkernels::nuclear_norm;
    use crate::runtime::run_round;
    use crate::solvers::{empirical_gradient, empirical_loss};
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tasks(m: usize, n: usize, p: usize, seed: u64) -> Vec<TaskDataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|j| {
                let x =
                    DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0)) / (p as f64).sqrt();
                let y = DVector::from_fn(n, |_, _| gaussian(&mut rng));
                TaskDataset::new(j, x, y).unwrap()
            })
            .collect()
    }

    #[test]
    fn first_step_lands_on_the_extreme_atom() {
        let t = tasks(4, 10, 5, 1);
        let model = LossModel::squared();
        let cfg = SolverConfig {
            radius: Some(2.0),
            ..Default::default()
        };
        let (mut s, mut c) = Dfw::setup(t.clone(), model, &cfg).unwrap();
        run_round(&mut s, &mut c).unwrap();
        let g0 = empirical_gradient(&t, &model, &DMatrix::zeros(5, 4)).unwrap();
        let pair = leading_pair(&g0, 1e-12, 10_000).unwrap();
        let expected = &pair.u * pair.v.transpose() * -2.0;
        assert!((c.observe_predictors() - expected).norm() < 1e-9);
    }

    #[test]
    fn iterates_stay_in_the_ball_and_descend_overall() {
        let t = tasks(6, 12, 5, 2);
        let model = LossModel::squared();
        let cfg = SolverConfig {
            radius: Some(1.5),
            ..Default::default()
        };
        let (mut s, mut c) = Dfw::setup(t.clone(), model, &cfg).unwrap();
        let start = empirical_loss(&t, &model, &c.observe_predictors()).unwrap();
        for _ in 0..60 {
            run_round(&mut s, &mut c).unwrap();
            assert!(nuclear_norm(&c.observe_predictors()).unwrap() <= 1.5 * (1.0 + 1e-10));
        }
        let end = empirical_loss(&t, &model, &c.observe_predictors()).unwrap();
        assert!(end < start);
        assert_eq!(c.ledger().max_per_worker(), 120);
    }

    #[test]
    fn zero_gradient_signals_convergence() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]) * 0.5;
        let y = DVector::zeros(2);
        let t = vec![TaskDataset::new(0, x, y).unwrap()];
        let cfg = SolverConfig {
            radius: Some(1.0),
            ..Default::default()
        };
        let (mut s, mut c) = Dfw::setup(t, LossModel::squared(), &cfg).unwrap();
        assert_eq!(run_round(&mut s, &mut c).unwrap(), RoundStatus::Converged);
    }
}

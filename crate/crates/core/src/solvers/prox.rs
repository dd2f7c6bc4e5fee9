//! Distributed proximal gradient, plain and accelerated.
//!
//! Each round a worker uploads its gradient-step point `w_j − (η/m)∇L_j(w_j)`,
//! the master shrinks the stacked matrix and sends back the next query point.

use nalgebra::{DMatrix, DVector};

use super::oneshot::local_fit;
use super::{default_eta, Diagnose, SolverConfig};
use crate::error::{Error, Result};
use crate::losses::{task_loss, LossModel, TaskDataset};
use crate::matkernels::sv_shrink_with_spectrum;
use crate::runtime::{Cluster, DistributedSolver, RoundStatus};

/// Consecutive objective increases tolerated before declaring divergence.
const DIVERGENCE_STREAK: u32 = 10;

/// Worker-side copy of its column of the master's `W`, maintained from the
/// query point and the (free) momentum scalar so losses can be reported.
#[derive(Clone, Debug)]
pub struct ProxWorker {
    w_master: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct ProxGd {
    lambda: f64,
    eta: f64,
    accelerated: bool,
    a: f64,
    m: usize,
    w: Option<DMatrix<f64>>,
    initial_objective: Option<f64>,
    last_objective: f64,
    rising: u32,
}

impl ProxGd {
    /// Starts from the Local solution (ridge `cfg.ridge`).
    pub fn setup(
        tasks: Vec<TaskDataset>,
        model: LossModel,
        cfg: &SolverConfig,
        accelerated: bool,
    ) -> Result<(Self, Cluster<ProxWorker>)> {
        let limit = default_eta(&tasks, &model);
        let eta = cfg.eta.unwrap_or(limit);
        if eta > limit * (1.0 + 1e-9) {
            return Err(Error::invalid(format!(
                "step {eta} exceeds the inverse smoothness {limit}"
            )));
        }
        let p = tasks[0].p();
        let mut cluster = Cluster::new(tasks, model, |_| ProxWorker {
            w_master: DVector::zeros(p),
        })?;
        let ridge = cfg.ridge;
        cluster.local(|w| {
            let fit = local_fit(w, ridge)?;
            w.state.w_master = fit.clone();
            w.set_w(fit)
        })?;
        let m = cluster.m();
        Ok((
            Self {
                lambda: cfg.lambda,
                eta,
                accelerated,
                a: 1.0,
                m,
                w: None,
                initial_objective: None,
                last_objective: f64::INFINITY,
                rising: 0,
            },
            cluster,
        ))
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    fn track_divergence(&mut self, objective: f64, round: u64) -> Result<()> {
        if !objective.is_finite() {
            return Err(Error::Diverged {
                round,
                reason: "objective is not finite".into(),
            });
        }
        let start = *self.initial_objective.get_or_insert(objective);
        if objective > self.last_objective {
            self.rising += 1;
        } else {
            self.rising = 0;
        }
        self.last_objective = objective;
        if self.rising >= DIVERGENCE_STREAK && objective > start {
            return Err(Error::Diverged {
                round,
                reason: format!("objective rose for {} consecutive rounds", self.rising),
            });
        }
        Ok(())
    }
}

impl DistributedSolver for ProxGd {
    type State = ProxWorker;

    fn vectors_per_round(&self) -> u64 {
        2
    }

    fn round(&mut self, cluster: &mut Cluster<ProxWorker>) -> Result<RoundStatus> {
        let step = self.eta / self.m as f64;
        let points = cluster.gather(|w| Ok(w.w() - w.gradient()? * step))?;
        let (w_next, spectrum) = sv_shrink_with_spectrum(&points, self.eta * self.lambda)?;

        let gamma = if self.accelerated {
            let a_next = 0.5 * (1.0 + (1.0 + 4.0 * self.a * self.a).sqrt());
            let g = (self.a - 1.0) / a_next;
            self.a = a_next;
            g
        } else {
            0.0
        };
        // With γ = 0 in the first round the previous W is never needed.
        let query = match (&self.w, gamma) {
            (Some(prev), g) if g != 0.0 => &w_next + (&w_next - prev) * g,
            _ => w_next.clone(),
        };
        cluster.scatter(&query, |w, col| {
            w.state.w_master = (&col + &w.state.w_master * gamma) / (1.0 + gamma);
            w.set_w(col)
        })?;

        let losses =
            cluster.gather_scalars(|w| task_loss(w.model(), w.data(), &w.state.w_master))?;
        let objective = losses.iter().sum::<f64>() / self.m as f64 + self.lambda * spectrum.sum();
        self.w = Some(w_next);
        self.track_divergence(objective, cluster.ledger().rounds())?;
        Ok(RoundStatus::Continue)
    }

    fn predictor(&self, cluster: &Cluster<ProxWorker>) -> DMatrix<f64> {
        match &self.w {
            Some(w) => w.clone(),
            None => cluster.observe_predictors(),
        }
    }
}

impl Diagnose for ProxGd {
    fn diagnostics(&self) -> Vec<(&'static str, f64)> {
        vec![("objective", self.last_objective)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matkernels::gaussian;
    use crate::matkernels::sv_shrink;
    use crate::runtime::run_round;
    use crate::solvers::{empirical_gradient, solve_local};
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
    fn first_round_is_the_prox_of_a_gradient_step_from_local() {
        let t = tasks(4, 10, 3, 1);
        let model = LossModel::squared();
        let cfg = SolverConfig {
            lambda: 0.05,
            ridge: 0.1,
            ..Default::default()
        };
        let (mut s, mut c) = ProxGd::setup(t.clone(), model, &cfg, false).unwrap();
        let w0 = solve_local(&t, &model, 0.1)
            .unwrap()
            .predictor
            .into_matrix();
        assert_eq!(s.predictor(&c), w0);
        run_round(&mut s, &mut c).unwrap();
        let eta = s.eta();
        let g = empirical_gradient(&t, &model, &w0).unwrap();
        let expected = sv_shrink(&(&w0 - g * eta), eta * 0.05).unwrap();
        assert!((s.predictor(&c) - expected).norm() < 1e-14);
        assert_eq!(c.ledger().max_per_worker(), 2);
    }

    #[test]
    fn zero_penalty_reproduces_gradient_descent() {
        // Squared loss on a diagonal design: each coordinate follows
        // e_{t+1} = (1 − η h / m) e_t around the local optimum.
        let model = LossModel::squared();
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 0.6, 1.0, 0.0, 0.0, 0.6]);
        let y = DVector::from_vec(vec![1.0, 0.5, 1.0, 0.5]);
        let t = vec![TaskDataset::new(0, x, y).unwrap()];
        let wopt = [1.0, 0.5 / 0.6];
        let h = [0.5, 0.18];
        let eta = 0.5;
        let cfg = SolverConfig {
            lambda: 0.0,
            eta: Some(eta),
            ridge: 10.0,
            ..Default::default()
        };
        let (mut s, mut c) = ProxGd::setup(t, model, &cfg, false).unwrap();
        let mut e: Vec<f64> = (0..2).map(|k| s.predictor(&c)[(k, 0)] - wopt[k]).collect();
        for _ in 0..50 {
            run_round(&mut s, &mut c).unwrap();
            let w = s.predictor(&c);
            for k in 0..2 {
                e[k] *= 1.0 - eta * h[k];
                assert!((w[(k, 0)] - wopt[k] - e[k]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn momentum_follows_the_nesterov_recurrence() {
        // λ = 0, one task, one coordinate with curvature h: an exact scalar recurrence.
        let model = LossModel::squared();
        let x = DMatrix::from_row_slice(2, 1, &[0.8, 0.0]);
        let y = DVector::from_vec(vec![0.8, 0.0]);
        let t = vec![TaskDataset::new(0, x, y).unwrap()];
        let h = 0.32;
        let eta = 1.0;
        let cfg = SolverConfig {
            eta: Some(eta),
            ridge: 5.0,
            ..Default::default()
        };
        let (mut s, mut c) = ProxGd::setup(t, model, &cfg, true).unwrap();
        let mut w_prev = s.predictor(&c)[(0, 0)];
        let mut z = w_prev;
        let mut a = 1.0f64;
        for _ in 0..40 {
            run_round(&mut s, &mut c).unwrap();
            let w_next = z - eta * h * (z - 1.0);
            let a_next = (1.0 + (1.0 + 4.0 * a * a).sqrt()) / 2.0;
            z = w_next + (a - 1.0) / a_next * (w_next - w_prev);
            w_prev = w_next;
            a = a_next;
            assert!((s.predictor(&c)[(0, 0)] - w_next).abs() < 1e-12);
            assert!((c.observe_predictors()[(0, 0)] - z).abs() < 1e-12);
        }
    }

    #[test]
    fn oversized_step_is_rejected() {
        let t = tasks(2, 6, 3, 2);
        let cfg = SolverConfig {
            eta: Some(1e6),
            ..Default::default()
        };
        assert!(ProxGd::setup(t, LossModel::squared(), &cfg, false).is_err());
    }

    #[test]
    fn divergence_needs_a_sustained_rise_above_the_start() {
        let t = tasks(2, 6, 3, 3);
        let (mut s, _) =
            ProxGd::setup(t, LossModel::squared(), &SolverConfig::default(), false).unwrap();
        s.track_divergence(1.0, 0).unwrap();
        for k in 0..20 {
            // Rising but below the starting objective: tolerated.
            s.track_divergence(0.1 + k as f64 * 0.01, k).unwrap();
        }
        let mut result = Ok(());
        for k in 0..DIVERGENCE_STREAK + 1 {
            result = s.track_divergence(2.0 + k as f64, 100 + k as u64);
            if result.is_err() {
                break;
            }
        }
        assert!(matches!(result, Err(Error::Diverged { .. })));
        assert!(s.track_divergence(f64::NAN, 200).is_err());
    }
}

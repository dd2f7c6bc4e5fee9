//! Simulated master/worker fabric with metered communication.
//!
//! A [`Cluster`] owns one [`Worker`] per task. The master never touches task
//! data directly: vectors move through [`Cluster::gather`] (worker → master)
//! and [`Cluster::scatter`] / [`Cluster::broadcast`] (master → worker), each
//! costing one `p`-vector per worker. Workers run in ascending task order,
//! so every reduction has a fixed order and results are schedule-independent.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::losses::{task_gradient, task_loss, task_newton_direction, LossModel, TaskDataset};

/// Per-worker counts of communicated `p`-vectors.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CommLedger {
    up: Vec<u64>,
    down: Vec<u64>,
    rounds: u64,
}

impl CommLedger {
    pub fn new(m: usize) -> Self {
        Self {
            up: vec![0; m],
            down: vec![0; m],
            rounds: 0,
        }
    }

    pub fn workers(&self) -> usize {
        self.up.len()
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    pub fn up(&self, worker: usize) -> u64 {
        self.up[worker]
    }

    pub fn down(&self, worker: usize) -> u64 {
        self.down[worker]
    }

    /// Vectors sent and received by one worker.
    pub fn per_worker(&self, worker: usize) -> u64 {
        self.up[worker] + self.down[worker]
    }

    /// The largest per-worker count; equal to every worker's count under
    /// the synchronous protocols used here.
    pub fn max_per_worker(&self) -> u64 {
        (0..self.workers())
            .map(|j| self.per_worker(j))
            .max()
            .unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.up.iter().sum::<u64>() + self.down.iter().sum::<u64>()
    }

    fn snapshot(&self) -> Vec<u64> {
        (0..self.workers()).map(|j| self.per_worker(j)).collect()
    }
}

/// One simulated machine: a task's data plus its current predictor and
/// solver-specific state.
#[derive(Clone, Debug)]
pub struct Worker<E> {
    data: TaskDataset,
    model: LossModel,
    w: DVector<f64>,
    pub state: E,
}

impl<E> Worker<E> {
    pub fn index(&self) -> usize {
        self.data.index()
    }

    pub fn data(&self) -> &TaskDataset {
        &self.data
    }

    pub fn model(&self) -> &LossModel {
        &self.model
    }

    pub fn w(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn set_w(&mut self, w: DVector<f64>) -> Result<()> {
        if w.len() != self.w.len() {
            return Err(Error::DimensionMismatch {
                expected: self.w.len(),
                got: w.len(),
            });
        }
        self.w = w;
        Ok(())
    }

    pub fn loss(&self) -> Result<f64> {
        task_loss(&self.model, &self.data, &self.w)
    }

    pub fn gradient(&self) -> Result<DVector<f64>> {
        task_gradient(&self.model, &self.data, &self.w)
    }

    pub fn newton_direction(&self, ridge: f64) -> Result<DVector<f64>> {
        task_newton_direction(&self.model, &self.data, &self.w, ridge)
    }
}

/// The master plus its `m` workers.
#[derive(Clone, Debug)]
pub struct Cluster<E> {
    workers: Vec<Worker<E>>,
    ledger: CommLedger,
    model: LossModel,
    p: usize,
}

impl<E> Cluster<E> {
    /// Places task `j` on worker `j` with `w_j = 0`.
    pub fn new(
        tasks: Vec<TaskDataset>,
        model: LossModel,
        mut init: impl FnMut(&TaskDataset) -> E,
    ) -> Result<Self> {
        let p = tasks
            .first()
            .map(|t| t.p())
            .ok_or_else(|| Error::invalid("a cluster needs at least one task"))?;
        let mut workers = Vec::with_capacity(tasks.len());
        for data in tasks {
            if data.p() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: data.p(),
                });
            }
            data.check_labels(&model)?;
            let state = init(&data);
            workers.push(Worker {
                data,
                model,
                w: DVector::zeros(p),
                state,
            });
        }
        Ok(Self {
            ledger: CommLedger::new(workers.len()),
            workers,
            model,
            p,
        })
    }

    pub fn m(&self) -> usize {
        self.workers.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn model(&self) -> &LossModel {
        &self.model
    }

    pub fn ledger(&self) -> &CommLedger {
        &self.ledger
    }

    /// Each worker uploads one `p`-vector; column `j` of the result is worker `j`'s.
    pub fn gather(
        &mut self,
        mut extract: impl FnMut(&mut Worker<E>) -> Result<DVector<f64>>,
    ) -> Result<DMatrix<f64>> {
        let round = self.ledger.rounds;
        let mut out = DMatrix::zeros(self.p, self.m());
        for (j, worker) in self.workers.iter_mut().enumerate() {
            let v = extract(worker)?;
            if v.len() != self.p {
                return Err(Error::DimensionMismatch {
                    expected: self.p,
                    got: v.len(),
                });
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFiniteUpload { worker: j, round });
            }
            out.set_column(j, &v);
            self.ledger.up[j] += 1;
        }
        Ok(out)
    }

    /// Sends column `j` of `payload` to worker `j`.
    pub fn scatter(
        &mut self,
        payload: &DMatrix<f64>,
        mut deliver: impl FnMut(&mut Worker<E>, DVector<f64>) -> Result<()>,
    ) -> Result<()> {
        if payload.shape() != (self.p, self.m()) {
            return Err(Error::invalid(format!(
                "scatter payload is {:?}, expected ({}, {})",
                payload.shape(),
                self.p,
                self.m()
            )));
        }
        for (j, worker) in self.workers.iter_mut().enumerate() {
            self.ledger.down[j] += 1;
            deliver(worker, payload.column(j).into_owned())?;
        }
        Ok(())
    }

    /// Sends the same vector to every worker; still one vector per worker.
    pub fn broadcast(
        &mut self,
        shared: &DVector<f64>,
        mut deliver: impl FnMut(&mut Worker<E>, &DVector<f64>) -> Result<()>,
    ) -> Result<()> {
        if shared.len() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                got: shared.len(),
            });
        }
        for (j, worker) in self.workers.iter_mut().enumerate() {
            self.ledger.down[j] += 1;
            deliver(worker, shared)?;
        }
        Ok(())
    }

    /// Worker-side computation with no communication.
    pub fn local<T>(&mut self, mut f: impl FnMut(&mut Worker<E>) -> Result<T>) -> Result<Vec<T>> {
        self.workers.iter_mut().map(&mut f).collect()
    }

    /// Collects one scalar per worker. Scalars are not metered.
    pub fn gather_scalars(&self, f: impl Fn(&Worker<E>) -> Result<f64>) -> Result<Vec<f64>> {
        self.workers.iter().map(f).collect()
    }

    /// `L_n(W) = (1/m) Σ_j L_j(w_j)`, summed in task order.
    pub fn mean_loss(&self) -> Result<f64> {
        let losses = self.gather_scalars(|w| w.loss())?;
        Ok(losses.iter().sum::<f64>() / self.m() as f64)
    }

    /// The current `W`, read for instrumentation only (not metered, not
    /// available to solver logic through the round contract).
    pub fn observe_predictors(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.p, self.m());
        for (j, worker) in self.workers.iter().enumerate() {
            out.set_column(j, &worker.w);
        }
        out
    }

    /// Bills uploads outside of any protocol step, e.g. shipping raw
    /// samples to the master.
    pub fn charge_upload(&mut self, vectors: impl Fn(&Worker<E>) -> u64) {
        for (j, worker) in self.workers.iter().enumerate() {
            self.ledger.up[j] += vectors(worker);
        }
    }

    /// Runs one barrier-synchronized round and checks that every worker was
    /// metered exactly `declared` vectors. A round that ends in
    /// [`RoundStatus::Converged`] may communicate less.
    pub fn round(
        &mut self,
        declared: u64,
        body: impl FnOnce(&mut Self) -> Result<RoundStatus>,
    ) -> Result<RoundStatus> {
        let before = self.ledger.snapshot();
        let status = body(self)?;
        let round = self.ledger.rounds;
        for (j, b) in before.iter().enumerate() {
            let metered = self.ledger.per_worker(j) - b;
            let ok = match status {
                RoundStatus::Continue => metered == declared,
                RoundStatus::Converged => metered <= declared,
            };
            if !ok {
                return Err(Error::LedgerMismatch {
                    round,
                    declared,
                    metered,
                });
            }
        }
        self.ledger.rounds += 1;
        Ok(status)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoundStatus {
    Continue,
    /// The solver cannot make further progress (zero gradient, spanned direction, …).
    Converged,
}

/// A solver expressed as repeated rounds over a cluster.
pub trait DistributedSolver {
    /// Solver-specific per-worker state.
    type State;

    /// Vectors per worker communicated by one full round.
    fn vectors_per_round(&self) -> u64;

    fn round(&mut self, cluster: &mut Cluster<Self::State>) -> Result<RoundStatus>;

    /// The estimate after the latest round.
    fn predictor(&self, cluster: &Cluster<Self::State>) -> DMatrix<f64> {
        cluster.observe_predictors()
    }
}

/// Executes one metered round of `solver`.
pub fn run_round<S: DistributedSolver>(
    solver: &mut S,
    cluster: &mut Cluster<S::State>,
) -> Result<RoundStatus> {
    let declared = solver.vectors_per_round();
    cluster.round(declared, |c| solver.round(c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tasks(m: usize, n: usize, p: usize, seed: u64) -> Vec<TaskDataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|j| {
                let x =
                    DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0)) / (p as f64).sqrt();
                let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
                TaskDataset::new(j, x, y).unwrap()
            })
            .collect()
    }

    fn cluster(m: usize, p: usize) -> Cluster<()> {
        Cluster::new(tasks(m, 6, p, 1), LossModel::squared(), |_| ()).unwrap()
    }

    #[test]
    fn gather_places_columns_in_task_order() {
        let mut c = cluster(2, 2);
        let g = c
            .gather(|w| {
                let mut e = DVector::zeros(2);
                e[w.index()] = 1.0;
                Ok(e)
            })
            .unwrap();
        assert_eq!(g, DMatrix::identity(2, 2));
        assert_eq!(c.ledger().up(0), 1);
        assert_eq!(c.ledger().down(1), 0);

        let z = c.gather(|_| Ok(DVector::zeros(2))).unwrap();
        assert_eq!(z, DMatrix::zeros(2, 2));
    }

    #[test]
    fn gathered_gradients_equal_the_monolithic_gradient() {
        let data = tasks(4, 7, 3, 2);
        let mut c = Cluster::new(data.clone(), LossModel::squared(), |_| ()).unwrap();
        let g = c.gather(|w| w.gradient()).unwrap();
        // Monolithic oracle: residuals of all tasks at W = 0 are -y.
        for (j, t) in data.iter().enumerate() {
            let expected = -(t.features().transpose() * t.responses()) / t.n() as f64;
            assert_eq!(g.column(j).into_owned(), expected);
        }
    }

    #[test]
    fn non_finite_upload_is_rejected() {
        let mut c = cluster(3, 2);
        let err = c
            .gather(|w| {
                let v = if w.index() == 1 { f64::NAN } else { 0.0 };
                Ok(DVector::from_element(2, v))
            })
            .unwrap_err();
        assert!(matches!(
            err,
            Error::NonFiniteUpload {
                worker: 1,
                round: 0
            }
        ));
    }

    #[test]
    fn broadcast_costs_one_vector_per_worker() {
        let mut c = cluster(5, 3);
        let u = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        c.broadcast(&u, |_, _| Ok(())).unwrap();
        let down: u64 = (0..5).map(|j| c.ledger().down(j)).sum();
        assert_eq!(down, 5);
    }

    #[test]
    fn scatter_replaces_each_predictor() {
        let mut c = cluster(3, 2);
        let w = DMatrix::from_fn(2, 3, |i, j| (i + 10 * j) as f64);
        c.scatter(&w, |worker, col| worker.set_w(col)).unwrap();
        assert_eq!(c.observe_predictors(), w);
        assert!(c.scatter(&DMatrix::zeros(3, 3), |_, _| Ok(())).is_err());
    }

    #[test]
    fn rounds_enforce_declared_cost() {
        let mut c = cluster(3, 2);
        let st = c
            .round(2, |c| {
                let g = c.gather(|w| w.gradient())?;
                c.scatter(&g, |w, col| w.set_w(col))?;
                Ok(RoundStatus::Continue)
            })
            .unwrap();
        assert_eq!(st, RoundStatus::Continue);
        assert_eq!(c.ledger().rounds(), 1);
        assert_eq!(c.ledger().max_per_worker(), 2);

        let err = c
            .round(3, |c| {
                c.gather(|w| w.gradient())?;
                Ok(RoundStatus::Continue)
            })
            .unwrap_err();
        assert!(matches!(
            err,
            Error::LedgerMismatch {
                declared: 3,
                metered: 1,
                ..
            }
        ));

        // A converged round may stop early.
        c.round(2, |c| {
            c.gather(|w| w.gradient())?;
            Ok(RoundStatus::Converged)
        })
        .unwrap();
    }

    #[test]
    fn local_rounds_are_free() {
        let mut c = cluster(4, 2);
        c.round(0, |c| {
            c.local(|w| {
                let g = w.gradient()?;
                w.set_w(-g)
            })?;
            Ok(RoundStatus::Continue)
        })
        .unwrap();
        assert_eq!(c.ledger().total(), 0);
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let mut data = tasks(2, 4, 3, 3);
        data.extend(tasks(1, 4, 2, 4));
        assert!(Cluster::new(data, LossModel::squared(), |_| ()).is_err());
        assert!(Cluster::<()>::new(vec![], LossModel::squared(), |_| ()).is_err());
    }

    #[test]
    fn logistic_cluster_rejects_real_valued_labels() {
        assert!(matches!(
            Cluster::new(tasks(2, 4, 3, 5), LossModel::logistic(), |_| ()),
            Err(Error::InvalidLabel { .. })
        ));
    }
}

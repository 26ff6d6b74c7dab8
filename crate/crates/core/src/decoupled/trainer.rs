//! One training iteration: build per-stage jobs from a snapshot of the
//! interface state, let an executor run every stage (in any order, on any
//! thread), then correct `λ` and `κ` serially in ascending `k`.

use alloc::vec::Vec;

use crate::decoupled::coupling::{AuxBatch, AuxState};
use crate::decoupled::schedule::StepHyper;
use crate::decoupled::stage::{
    join_stages, split_stages, Stage, StageJob, StageParams, StageReport, StageTarget,
};
use crate::error::{Error, Result};
use crate::network::ResidualNet;
use crate::penalty::ViolationReport;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Runs the compute phase of an iteration.
///
/// `execute` receives exactly one job per stage and must return the reports
/// ordered by stage index. Every stage only reads its own job, so any
/// schedule yields the result of running them one after another.
pub trait StageExecutor {
    fn stage_count(&self) -> usize;
    fn execute(&mut self, jobs: Vec<StageJob>) -> Result<Vec<StageReport>>;
    /// Current parameters of every stage, ordered by stage index.
    fn collect(&mut self) -> Result<Vec<StageParams>>;
}

/// Runs the stages one after another on the calling thread.
#[derive(Clone, Debug)]
pub struct SequentialExecutor {
    stages: Vec<Stage>,
}

impl SequentialExecutor {
    pub fn new(params: Vec<StageParams>) -> Self {
        Self {
            stages: params.into_iter().map(Stage::new).collect(),
        }
    }

    pub fn from_net(net: &ResidualNet, stages: usize) -> Result<Self> {
        Ok(Self::new(split_stages(net, stages)?))
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }
}

impl StageExecutor for SequentialExecutor {
    fn stage_count(&self) -> usize {
        self.stages.len()
    }

    fn execute(&mut self, jobs: Vec<StageJob>) -> Result<Vec<StageReport>> {
        if jobs.len() != self.stages.len() {
            return Err(Error::Config("one job per stage required".into()));
        }
        self.stages
            .iter_mut()
            .zip(&jobs)
            .map(|(s, j)| s.run(j))
            .collect()
    }

    fn collect(&mut self) -> Result<Vec<StageParams>> {
        Ok(self.stages.iter().map(|s| s.params.clone()).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationOutcome {
    /// Stage objectives; the last one is the mini-batch loss `φ`.
    pub objectives: Vec<f64>,
    pub corrections: usize,
}

/// Owns the interface state and sequences iterations.
#[derive(Clone, Debug)]
pub struct Coordinator {
    stages: usize,
    aux: AuxState,
    batch_size: Option<usize>,
    shuffle_rng: Rng,
    noise_rng: Rng,
    iteration: u64,
}

impl Coordinator {
    /// `lambda` initialises `λ_1..λ_{K−1}` for every training sample.
    pub fn new(
        stages: usize,
        lambda: Vec<Tensor>,
        batch_size: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        if stages == 0 || lambda.len() + 1 != stages {
            return Err(Error::Config(alloc::format!(
                "{stages} stages need {} auxiliary variables, got {}",
                stages.saturating_sub(1),
                lambda.len()
            )));
        }
        if batch_size == Some(0) {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let root = Rng::new(seed);
        Ok(Self {
            stages,
            aux: AuxState::new(lambda),
            batch_size,
            shuffle_rng: root.split(1),
            noise_rng: root.split(2),
            iteration: 0,
        })
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn aux(&self) -> &AuxState {
        &self.aux
    }

    pub fn aux_mut(&mut self) -> &mut AuxState {
        &mut self.aux
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Mini-batches for one epoch over `n` samples: the whole set in order
    /// for full-batch training, shuffled chunks otherwise.
    pub fn epoch_batches(&mut self, n: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        match self.batch_size {
            None => alloc::vec![order],
            Some(b) if b >= n => alloc::vec![order],
            Some(b) => {
                self.shuffle_rng.shuffle(&mut order);
                order.chunks(b).map(<[usize]>::to_vec).collect()
            }
        }
    }

    /// Snapshots `(λ, κ)` for the batch and builds one job per stage.
    pub fn plan(
        &mut self,
        x: &Tensor,
        labels: &[usize],
        indices: &[usize],
        hyper: &StepHyper,
    ) -> Result<(AuxBatch, Vec<StageJob>)> {
        hyper.validate()?;
        let batch = self.aux.gather(indices);
        let last = self.stages - 1;
        let mut jobs = Vec::with_capacity(self.stages);
        for k in 0..self.stages {
            let input = if k == 0 {
                x.gather_rows(indices)
            } else {
                let mut l = batch.lambda(k)?.clone();
                if k == last && hyper.noise_sigma > 0.0 {
                    let noise = self.noise_rng.normal(l.rows(), l.cols(), hyper.noise_sigma);
                    l.axpy(1.0, &noise)?;
                }
                l
            };
            let target = if k == last {
                StageTarget::Loss {
                    labels: indices.iter().map(|&i| labels[i]).collect(),
                }
            } else {
                StageTarget::Synthetic {
                    lambda_next: batch.lambda(k + 1)?.clone(),
                    kappa_next: batch.kappa(k + 1)?.clone(),
                    beta: hyper.beta,
                    penalty: hyper.penalty,
                }
            };
            jobs.push(StageJob {
                stage: k,
                iteration: self.iteration,
                input,
                target,
                lr: hyper.lr,
            });
        }
        Ok((batch, jobs))
    }

    /// Synchronisation point: consumes every stage report of the current
    /// iteration, runs the correction sweep and stores the batch state.
    pub fn finish(
        &mut self,
        mut batch: AuxBatch,
        reports: Vec<StageReport>,
        hyper: &StepHyper,
        epoch: Option<usize>,
    ) -> Result<IterationOutcome> {
        if reports.len() != self.stages {
            return Err(Error::Config("missing stage reports".into()));
        }
        for (k, r) in reports.iter().enumerate() {
            if r.stage != k || r.iteration != self.iteration {
                return Err(Error::Worker {
                    stage: r.stage,
                    reason: alloc::format!(
                        "report for iteration {} at slot {k}, expected iteration {}",
                        r.iteration,
                        self.iteration
                    ),
                });
            }
            if !r.objective.is_finite() || !r.boundary.is_finite() || !r.entry_adjoint.is_finite() {
                return Err(Error::NonFinite {
                    what: "stage output",
                    epoch,
                    stage: Some(k),
                });
            }
        }
        let mut objectives = Vec::with_capacity(self.stages);
        let mut reports = reports.into_iter();
        let mut prev = reports.next().expect("at least one stage");
        objectives.push(prev.objective);
        for k in 1..self.stages {
            let cur = reports.next().expect("length checked");
            objectives.push(cur.objective);
            batch.set_boundary(k, prev.boundary)?;
            batch.set_adjoint(k, cur.entry_adjoint.clone())?;
            prev = cur;
        }
        let corrections = batch.correction_sweep(hyper)?;
        for k in 1..self.stages {
            if !batch.lambda(k)?.is_finite() || !batch.kappa(k)?.is_finite() {
                return Err(Error::NonFinite {
                    what: "auxiliary state",
                    epoch,
                    stage: Some(k),
                });
            }
        }
        self.aux.scatter(&batch)?;
        self.iteration += 1;
        Ok(IterationOutcome {
            objectives,
            corrections,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochOutcome {
    /// Mean mini-batch loss seen by the last stage.
    pub stage_loss: f64,
    pub iterations: usize,
}

/// The layer-parallel trainer, generic over how stages are executed.
#[derive(Debug)]
pub struct DecoupledTrainer<E> {
    pub coordinator: Coordinator,
    pub executor: E,
    x: Tensor,
    labels: Vec<usize>,
}

impl<E: StageExecutor> DecoupledTrainer<E> {
    pub fn new(
        coordinator: Coordinator,
        executor: E,
        x: Tensor,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if executor.stage_count() != coordinator.stages() {
            return Err(Error::Config(
                "executor and coordinator disagree on stage count".into(),
            ));
        }
        if x.rows() != labels.len() {
            return Err(Error::Shape {
                op: "trainer",
                left: x.shape(),
                right: (labels.len(), 1),
            });
        }
        Ok(Self {
            coordinator,
            executor,
            x,
            labels,
        })
    }

    pub fn iterate(
        &mut self,
        indices: &[usize],
        hyper: &StepHyper,
        epoch: Option<usize>,
    ) -> Result<IterationOutcome> {
        let (batch, jobs) = self
            .coordinator
            .plan(&self.x, &self.labels, indices, hyper)?;
        let reports = self.executor.execute(jobs)?;
        self.coordinator.finish(batch, reports, hyper, epoch)
    }

    pub fn run_epoch(&mut self, epoch: usize, hyper: &StepHyper) -> Result<EpochOutcome> {
        let batches = self.coordinator.epoch_batches(self.x.rows());
        let mut total = 0.0;
        for b in &batches {
            let out = self.iterate(b, hyper, Some(epoch))?;
            total += out.objectives.last().copied().unwrap_or(0.0) * b.len() as f64;
        }
        Ok(EpochOutcome {
            stage_loss: total / self.x.rows().max(1) as f64,
            iterations: batches.len(),
        })
    }

    pub fn network(&mut self) -> Result<ResidualNet> {
        join_stages(self.executor.collect()?)
    }

    pub fn violation_report(&self, penalty: crate::penalty::PenaltyFn) -> Result<ViolationReport> {
        if self.coordinator.stages() == 1 {
            return ViolationReport::from_pairs(penalty, core::iter::empty());
        }
        self.coordinator.aux().violation_report(penalty)
    }
}

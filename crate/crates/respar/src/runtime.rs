//! Concurrent stage execution.
//!
//! Each worker thread owns a contiguous run of stages for the lifetime of the
//! executor. Per iteration the coordinator hands every worker the jobs of its
//! stages and blocks until all reports are back; the correction sweep only
//! starts after that, so no stage ever sees a neighbour's state from another
//! iteration.

use std::any::Any;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use respar_core::decoupled::{Stage, StageExecutor, StageJob, StageParams, StageReport};
use respar_core::{Error, Result};

use crate::error::{HarnessError, HarnessResult};

pub const WORKERS_ENV: &str = "RESPAR_WORKERS";

/// Computes one stage's forward and backward pass for a job.
pub type StageRunner = fn(&mut Stage, &StageJob) -> Result<StageReport>;

fn default_runner(stage: &mut Stage, job: &StageJob) -> Result<StageReport> {
    stage.run(job)
}

enum Command {
    Run(Vec<StageJob>),
    Collect,
}

enum Reply {
    Reports(Vec<(Result<StageReport>, Duration)>),
    Params(Vec<StageParams>),
}

struct Worker {
    first_stage: usize,
    stage_count: usize,
    tx: Option<Sender<Command>>,
    rx: Receiver<Reply>,
    handle: Option<JoinHandle<()>>,
}

fn panic_message(payload: &(dyn Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "worker panicked".to_string()
    }
}

fn worker_loop(
    mut stages: Vec<Stage>,
    runner: StageRunner,
    rx: Receiver<Command>,
    tx: Sender<Reply>,
) {
    while let Ok(cmd) = rx.recv() {
        let reply = match cmd {
            Command::Run(jobs) => Reply::Reports(
                stages
                    .iter_mut()
                    .zip(&jobs)
                    .map(|(stage, job)| {
                        let start = Instant::now();
                        let result = catch_unwind(AssertUnwindSafe(|| runner(stage, job)))
                            .unwrap_or_else(|p| {
                                Err(Error::Worker {
                                    stage: job.stage,
                                    reason: panic_message(p.as_ref()),
                                })
                            });
                        (result, start.elapsed())
                    })
                    .collect(),
            ),
            Command::Collect => Reply::Params(stages.iter().map(|s| s.params.clone()).collect()),
        };
        if tx.send(reply).is_err() {
            break;
        }
    }
}

/// Long-lived worker threads, each owning a contiguous slice of stages.
pub struct ThreadedExecutor {
    workers: Vec<Worker>,
    stages: usize,
    busy: Vec<Duration>,
}

impl ThreadedExecutor {
    pub fn new(params: Vec<StageParams>, workers: usize) -> HarnessResult<Self> {
        Self::with_runner(params, workers, default_runner)
    }

    /// Like [`new`](Self::new) with a custom per-stage computation, e.g. for
    /// instrumentation.
    pub fn with_runner(
        params: Vec<StageParams>,
        workers: usize,
        runner: StageRunner,
    ) -> HarnessResult<Self> {
        let stages = params.len();
        if stages == 0 {
            return Err(HarnessError::Config("at least one stage required".into()));
        }
        if workers == 0 {
            return Err(HarnessError::Config("at least one worker required".into()));
        }
        let workers = workers.min(stages);
        let mut remaining = params.into_iter();
        let mut pool = Vec::with_capacity(workers);
        let mut first_stage = 0;
        for w in 0..workers {
            // Spread stages as evenly as possible, earlier workers take the remainder.
            let count = stages / workers + usize::from(w < stages % workers);
            let owned: Vec<Stage> = remaining.by_ref().take(count).map(Stage::new).collect();
            let (cmd_tx, cmd_rx) = channel();
            let (reply_tx, reply_rx) = channel();
            let handle = std::thread::Builder::new()
                .name(format!("respar-stage-worker-{w}"))
                .spawn(move || worker_loop(owned, runner, cmd_rx, reply_tx))
                .map_err(|e| HarnessError::Config(format!("cannot spawn worker: {e}")))?;
            pool.push(Worker {
                first_stage,
                stage_count: count,
                tx: Some(cmd_tx),
                rx: reply_rx,
                handle: Some(handle),
            });
            first_stage += count;
        }
        Ok(Self {
            workers: pool,
            stages,
            busy: vec![Duration::ZERO; stages],
        })
    }

    pub fn worker_count(&self) -> usize {
        self.workers.len()
    }

    /// Busy time per stage accumulated since the last call.
    pub fn take_busy(&mut self) -> Vec<Duration> {
        std::mem::replace(&mut self.busy, vec![Duration::ZERO; self.stages])
    }

    fn send(&self, w: &Worker, cmd: Command) -> Result<()> {
        w.tx.as_ref()
            .and_then(|tx| tx.send(cmd).ok())
            .ok_or_else(|| lost_worker(w.first_stage))
    }
}

fn lost_worker(stage: usize) -> Error {
    Error::Worker {
        stage,
        reason: "worker thread is gone".into(),
    }
}

impl StageExecutor for ThreadedExecutor {
    fn stage_count(&self) -> usize {
        self.stages
    }

    fn execute(&mut self, jobs: Vec<StageJob>) -> Result<Vec<StageReport>> {
        if jobs.len() != self.stages {
            return Err(Error::Config("one job per stage required".into()));
        }
        if let Some((k, _)) = jobs.iter().enumerate().find(|(k, j)| j.stage != *k) {
            return Err(Error::Config(format!(
                "job for stage {} in slot {k}",
                jobs[k].stage
            )));
        }
        let mut jobs = jobs.into_iter();
        for w in &self.workers {
            self.send(w, Command::Run(jobs.by_ref().take(w.stage_count).collect()))?;
        }
        // Drain every worker before reporting, so a failure never leaves a
        // reply queued for the next iteration.
        let mut replies = Vec::with_capacity(self.workers.len());
        for w in &self.workers {
            replies.push(match w.rx.recv() {
                Ok(Reply::Reports(r)) => Ok(r),
                _ => Err(lost_worker(w.first_stage)),
            });
        }
        let mut reports = Vec::with_capacity(self.stages);
        let mut failure = None;
        for (stage, (result, busy)) in replies
            .into_iter()
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .enumerate()
        {
            match result {
                Ok(r) => {
                    self.busy[stage] += busy;
                    reports.push(r);
                }
                Err(e) => {
                    failure.get_or_insert(match e {
                        Error::Worker { .. } => e,
                        e => Error::Worker {
                            stage,
                            reason: e.to_string(),
                        },
                    });
                }
            }
        }
        match failure {
            Some(e) => Err(e),
            None => Ok(reports),
        }
    }

    fn collect(&mut self) -> Result<Vec<StageParams>> {
        let mut out = Vec::with_capacity(self.stages);
        for w in &self.workers {
            self.send(w, Command::Collect)?;
            match w.rx.recv() {
                Ok(Reply::Params(p)) => out.extend(p),
                _ => return Err(lost_worker(w.first_stage)),
            }
        }
        Ok(out)
    }
}

impl Drop for ThreadedExecutor {
    fn drop(&mut self) {
        for w in &mut self.workers {
            w.tx.take();
        }
        for w in &mut self.workers {
            if let Some(h) = w.handle.take() {
                let _ = h.join();
            }
        }
    }
}

/// Worker count: explicit request, else `RESPAR_WORKERS`, else the configured
/// value, else one per stage capped by the machine's parallelism.
pub fn resolve_workers(
    explicit: Option<usize>,
    configured: Option<usize>,
    stages: usize,
) -> HarnessResult<usize> {
    let from_env = match std::env::var(WORKERS_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| {
                    HarnessError::Config(format!("{WORKERS_ENV}={v:?} is not a positive integer"))
                })?,
        ),
        Err(_) => None,
    };
    let n = explicit.or(from_env).or(configured).unwrap_or_else(|| {
        let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
        stages.min(cores)
    });
    if n == 0 {
        return Err(HarnessError::Config("worker count must be positive".into()));
    }
    Ok(n.min(stages.max(1)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochTiming {
    pub epoch: usize,
    pub train_wall_seconds: f64,
    pub stage_busy_seconds: Vec<f64>,
}

/// `serial / parallel`.
pub fn speedup_ratio(serial_seconds: f64, parallel_seconds: f64) -> HarnessResult<f64> {
    if !(serial_seconds > 0.0 && serial_seconds.is_finite())
        || !(parallel_seconds > 0.0 && parallel_seconds.is_finite())
    {
        return Err(HarnessError::Data(format!(
            "durations must be positive, got {serial_seconds} and {parallel_seconds}"
        )));
    }
    Ok(serial_seconds / parallel_seconds)
}

/// Ratio of total training wall time of two runs over the same epochs.
pub fn measure_speedup(serial: &[EpochTiming], parallel: &[EpochTiming]) -> HarnessResult<f64> {
    if serial.len() != parallel.len() || serial.is_empty() {
        return Err(HarnessError::Data(format!(
            "runs cover {} and {} epochs",
            serial.len(),
            parallel.len()
        )));
    }
    let total = |t: &[EpochTiming]| t.iter().map(|e| e.train_wall_seconds).sum::<f64>();
    speedup_ratio(total(serial), total(parallel))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn timing(secs: f64) -> Vec<EpochTiming> {
        vec![EpochTiming {
            epoch: 0,
            train_wall_seconds: secs,
            stage_busy_seconds: vec![secs],
        }]
    }

    #[test]
    fn speedup_examples() {
        assert_eq!(measure_speedup(&timing(2.0), &timing(2.0)).unwrap(), 1.0);
        let k2 = speedup_ratio(23.52, 16.25).unwrap();
        let k4 = speedup_ratio(23.52, 12.32).unwrap();
        assert_eq!(format!("{k2:.2}"), "1.45");
        assert_eq!(format!("{k4:.2}"), "1.91");
    }

    #[test]
    fn speedup_rejects_degenerate_durations() {
        assert!(speedup_ratio(0.0, 1.0).is_err());
        assert!(speedup_ratio(1.0, -1.0).is_err());
        assert!(speedup_ratio(f64::NAN, 1.0).is_err());
        assert!(measure_speedup(&timing(1.0), &[]).is_err());
    }

    use respar_core::dataset::gen_circles;
    use respar_core::decoupled::{
        boundary_states, split_stages, Coordinator, DecoupledTrainer, Method, Schedules,
        SequentialExecutor,
    };
    use respar_core::{NetSpec, PenaltyFn, ResidualNet, Rng};

    fn toy(blocks: usize) -> ResidualNet {
        NetSpec::toy()
            .with_blocks(blocks)
            .build(&mut Rng::new(3))
            .unwrap()
    }

    fn train<E: StageExecutor>(
        net: &ResidualNet,
        stages: usize,
        executor: E,
        method: Method,
    ) -> ResidualNet {
        let data = gen_circles(40, 1);
        let lambda = boundary_states(net, &data.points, stages).unwrap();
        let coordinator = Coordinator::new(stages, lambda, Some(16), 5).unwrap();
        let mut trainer =
            DecoupledTrainer::new(coordinator, executor, data.points, data.labels).unwrap();
        let schedules = Schedules::for_method(method);
        for epoch in 0..4 {
            let hyper = schedules.hyper_at(epoch, method, PenaltyFn::squared_l2());
            trainer.run_epoch(epoch, &hyper).unwrap();
        }
        trainer.network().unwrap()
    }

    #[test]
    fn threaded_matches_sequential_for_any_worker_count() {
        let net = toy(8);
        for method in [Method::Penalty, Method::AugmentedLagrangian] {
            let reference = train(
                &net,
                4,
                SequentialExecutor::from_net(&net, 4).unwrap(),
                method,
            );
            for workers in [1, 2, 3, 4, 9] {
                let executor =
                    ThreadedExecutor::new(split_stages(&net, 4).unwrap(), workers).unwrap();
                assert_eq!(executor.worker_count(), workers.min(4));
                assert_eq!(
                    train(&net, 4, executor, method),
                    reference,
                    "{workers} workers"
                );
            }
        }
    }

    #[test]
    fn busy_time_is_tracked_per_stage() {
        let net = toy(4);
        let data = gen_circles(10, 0);
        let lambda = boundary_states(&net, &data.points, 2).unwrap();
        let coordinator = Coordinator::new(2, lambda, None, 0).unwrap();
        let executor = ThreadedExecutor::new(split_stages(&net, 2).unwrap(), 2).unwrap();
        let mut trainer =
            DecoupledTrainer::new(coordinator, executor, data.points, data.labels).unwrap();
        let hyper =
            Schedules::penalty_default().hyper_at(0, Method::Penalty, PenaltyFn::squared_l2());
        trainer.run_epoch(0, &hyper).unwrap();
        let busy = trainer.executor.take_busy();
        assert_eq!(busy.len(), 2);
        assert!(busy.iter().all(|d| *d > Duration::ZERO));
        assert!(trainer
            .executor
            .take_busy()
            .iter()
            .all(|d| *d == Duration::ZERO));
    }

    fn panicking(stage: &mut Stage, job: &StageJob) -> Result<StageReport> {
        if job.stage == 2 {
            panic!("injected fault");
        }
        stage.run(job)
    }

    fn failing(stage: &mut Stage, job: &StageJob) -> Result<StageReport> {
        if job.stage == 1 {
            return Err(Error::NoBoundary);
        }
        stage.run(job)
    }

    fn run_once(runner: StageRunner, workers: usize) -> Result<()> {
        let net = toy(6);
        let data = gen_circles(10, 0);
        let lambda = boundary_states(&net, &data.points, 3).unwrap();
        let mut executor =
            ThreadedExecutor::with_runner(split_stages(&net, 3).unwrap(), workers, runner).unwrap();
        let mut coordinator = Coordinator::new(3, lambda, None, 0).unwrap();
        let hyper =
            Schedules::penalty_default().hyper_at(0, Method::Penalty, PenaltyFn::squared_l2());
        let all: Vec<usize> = (0..10).collect();
        let (_, jobs) = coordinator.plan(&data.points, &data.labels, &all, &hyper)?;
        executor.execute(jobs).map(|_| ())
    }

    #[test]
    fn worker_panic_names_the_stage() {
        for workers in [1, 3] {
            match run_once(panicking, workers) {
                Err(Error::Worker { stage, reason }) => {
                    assert_eq!(stage, 2);
                    assert!(reason.contains("injected fault"), "{reason}");
                }
                other => panic!("expected a worker error, got {other:?}"),
            }
        }
    }

    #[test]
    fn stage_errors_are_reported_with_their_stage() {
        match run_once(failing, 2) {
            Err(Error::Worker { stage, reason }) => {
                assert_eq!(stage, 1);
                assert!(!reason.is_empty());
            }
            other => panic!("expected a worker error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_empty_and_zero_worker_setups() {
        assert!(ThreadedExecutor::new(vec![], 1).is_err());
        assert!(ThreadedExecutor::new(split_stages(&toy(2), 2).unwrap(), 0).is_err());
    }

    #[test]
    fn explicit_workers_win_and_are_capped_by_stages() {
        assert_eq!(resolve_workers(Some(3), Some(1), 4).unwrap(), 3);
        assert_eq!(resolve_workers(Some(8), None, 4).unwrap(), 4);
        assert!(resolve_workers(Some(0), None, 4).is_err());
    }
}

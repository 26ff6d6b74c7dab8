//! Epoch loop, per-epoch evaluation and metrics emission.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use respar_core::dataset::{gen_circles, CirclesDataset};
use respar_core::decoupled::{
    initialize, split_stages, Coordinator, DecoupledTrainer, InitOutcome,
};
use respar_core::network::{accuracy, loss_phi, serial_train_step};
use respar_core::{Error, ResidualNet, Rng};

use crate::config::{Mode, TrainConfig};
use crate::error::{HarnessError, HarnessResult};
use crate::metrics::{save_metrics, MetricsRow, Summary};
use crate::runtime::{resolve_workers, EpochTiming, ThreadedExecutor};

/// RNG stream used for parameter initialisation. The coordinator owns the
/// shuffle and noise streams.
const INIT_STREAM: u64 = 3;

#[derive(Debug)]
pub struct TrainOutput {
    pub rows: Vec<MetricsRow>,
    pub timings: Vec<EpochTiming>,
    pub net: ResidualNet,
    pub workers: usize,
}

/// Training set drawn with `seed`, test set with `seed + 1`.
pub fn datasets(config: &TrainConfig) -> (CirclesDataset, CirclesDataset) {
    (
        gen_circles(config.train_size, config.seed),
        gen_circles(config.test_size, config.seed.wrapping_add(1)),
    )
}

fn evaluate(
    net: &ResidualNet,
    train: &CirclesDataset,
    test: &CirclesDataset,
    epoch: usize,
) -> HarnessResult<(f64, f64)> {
    let (loss, _) = loss_phi(&net.predict(&train.points)?, &train.labels)?;
    if !loss.is_finite() || !net.is_finite() {
        return Err(Error::NonFinite {
            what: "train loss",
            epoch: Some(epoch),
            stage: None,
        }
        .into());
    }
    Ok((loss, accuracy(net, &test.points, &test.labels)?))
}

pub fn train(config: &TrainConfig) -> HarnessResult<TrainOutput> {
    train_with_workers(config, None)
}

/// Runs a full experiment; `workers` takes precedence over the environment
/// and the config file.
pub fn train_with_workers(
    config: &TrainConfig,
    workers: Option<usize>,
) -> HarnessResult<TrainOutput> {
    config.validate()?;
    let schedules = config.schedules()?;
    let stages = config.effective_stages();
    let (train, test) = datasets(config);
    let mut init_rng = Rng::new(config.seed).split(INIT_STREAM);
    let InitOutcome { net, lambda } = initialize(
        config.init_strategy(),
        &config.net_spec(),
        stages,
        &train.points,
        &train.labels,
        &schedules.lr,
        &mut init_rng,
    )?;
    let penalty = config.penalty.into();
    let mut rows = Vec::with_capacity(config.epochs);
    let mut timings = Vec::with_capacity(config.epochs);

    let Some(method) = config.mode.method() else {
        let mut net = net;
        let mut coordinator = Coordinator::new(1, lambda, config.batch_size, config.seed)?;
        for epoch in 0..config.epochs {
            let lr = schedules.lr.at(epoch);
            let start = Instant::now();
            for batch in coordinator.epoch_batches(train.len()) {
                let labels: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
                serial_train_step(&mut net, &train.points.gather_rows(&batch), &labels, lr)?;
            }
            let wall = start.elapsed().as_secs_f64();
            let (train_loss, test_accuracy) = evaluate(&net, &train, &test, epoch)?;
            rows.push(MetricsRow {
                epoch,
                train_loss,
                test_accuracy,
                max_violation: 0.0,
                beta: 0.0,
                lr,
                epoch_seconds: if config.timing { wall } else { 0.0 },
            });
            timings.push(EpochTiming {
                epoch,
                train_wall_seconds: wall,
                stage_busy_seconds: vec![wall],
            });
        }
        return Ok(TrainOutput {
            rows,
            timings,
            net,
            workers: 1,
        });
    };

    let workers = resolve_workers(workers, config.workers, stages)?;
    let coordinator = Coordinator::new(stages, lambda, config.batch_size, config.seed)?;
    let executor = ThreadedExecutor::new(split_stages(&net, stages)?, workers)?;
    let mut trainer = DecoupledTrainer::new(
        coordinator,
        executor,
        train.points.clone(),
        train.labels.clone(),
    )?;
    let mut net = net;
    for epoch in 0..config.epochs {
        let hyper = schedules.hyper_at(epoch, method, penalty);
        let start = Instant::now();
        trainer.run_epoch(epoch, &hyper)?;
        let wall = start.elapsed().as_secs_f64();
        let busy = trainer.executor.take_busy();
        net = trainer.network()?;
        let (train_loss, test_accuracy) = evaluate(&net, &train, &test, epoch)?;
        rows.push(MetricsRow {
            epoch,
            train_loss,
            test_accuracy,
            max_violation: trainer.violation_report(penalty)?.max,
            beta: hyper.beta,
            lr: hyper.lr,
            epoch_seconds: if config.timing { wall } else { 0.0 },
        });
        timings.push(EpochTiming {
            epoch,
            train_wall_seconds: wall,
            stage_busy_seconds: busy.iter().map(|d| d.as_secs_f64()).collect(),
        });
    }
    Ok(TrainOutput {
        rows,
        timings,
        net,
        workers,
    })
}

/// Trains, writes the metrics CSV when the config names an output file, and
/// prints a one-row summary table to `log`.
pub fn run_experiment(
    config: &TrainConfig,
    serial_ref: Option<&Path>,
    workers: Option<usize>,
    mut log: impl Write,
) -> HarnessResult<(TrainOutput, Summary)> {
    let out = train_with_workers(config, workers)?;
    if let Some(path) = &config.out {
        save_metrics(path, &out.rows)?;
    }
    let mut summary = Summary::from_rows(&out.rows)?;
    if let Some(path) = serial_ref {
        let reference = Summary::from_rows(&crate::metrics::load_metrics(path)?)?;
        summary = summary.with_reference(&reference)?;
    }
    let io = |e| HarnessError::Io {
        path: "<log>".into(),
        source: e,
    };
    writeln!(
        log,
        "mode={:?} stages={} workers={} (runtime excludes evaluation)",
        config.mode,
        config.effective_stages(),
        out.workers
    )
    .map_err(io)?;
    writeln!(log, "{}", Summary::table_header()).map_err(io)?;
    writeln!(log, "{summary}").map_err(io)?;
    Ok((out, summary))
}

/// Serial reference config matching `config` in everything but the method.
pub fn serial_counterpart(config: &TrainConfig) -> TrainConfig {
    TrainConfig {
        mode: Mode::Serial,
        ..config.clone()
    }
}

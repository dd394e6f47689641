//! Experiment plumbing: configuration, synthetic data, running a config end
//! to end, metrics files and multi-run comparison.

pub mod config;
pub mod data;
pub mod metrics;
pub mod sweep;

use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{init_model, local_train, test_acc, Dataset, LrSchedule, Mask, TrainSpec};
use crate::orchestrator::{simulate, RunOptions, RunOutput};

pub use config::{PartitionSpec, RunConfig};
pub use data::{generate_dataset, partition};
pub use metrics::{RunSummary, METRICS_FILE, SUMMARY_FILE};

/// Training partitions (one per client) and the shared test set.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub train: Vec<Dataset>,
    pub test: Dataset,
}

/// Generates the dataset described by `cfg.data` and splits it among the
/// clients. Depends only on the data section and the data seed.
pub fn prepare_data(cfg: &RunConfig) -> Result<Prepared> {
    let d = &cfg.data;
    let seed = cfg.data_seed();
    let train_total = d.samples_per_client * cfg.clients;
    let all = generate_dataset(d.classes, d.dims, train_total + d.test_samples, d.separation, seed)?;
    let idx: Vec<usize> = (0..all.len()).collect();
    let (train_idx, test_idx) = idx.split_at(train_total);
    let train = partition(&all.subset(train_idx), cfg.clients, d.partition, seed ^ 0x7061_7274)?;
    Ok(Prepared {
        train,
        test: all.subset(test_idx),
    })
}

/// Test accuracy of a dense model trained centrally on the union of all
/// client data with the run's model shape and batch size.
///
/// Training runs `iterations` SGD steps in ten equal stages, starting at the
/// run's initial learning rate and halving it every two stages, so the
/// result is close to converged rather than dominated by step noise.
pub fn reference_accuracy(cfg: &RunConfig, data: &Prepared, iterations: usize) -> Result<f64> {
    const STAGES: usize = 10;
    let pooled = Dataset::concat(&data.train)?;
    let mut w = init_model(&cfg.model_shapes(), cfg.seed)?;
    let full = Mask::full(w.len());
    let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base_rate = cfg.train.schedule.rate(0);
    for stage in 0..STAGES {
        let spec = TrainSpec {
            schedule: LrSchedule::Constant {
                rate: base_rate * 0.5f64.powi((stage / 2) as i32),
            },
            batch_size: cfg.train.batch_size,
            local_iterations: iterations / STAGES,
        };
        w = local_train(&w, &full, &pooled, &spec, 0, seeds.next_u64())?;
    }
    test_acc(&w, &data.test)
}

/// Where a run writes its files.
pub fn output_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-seed{}", cfg.variant, cfg.seed)))
}

/// Runs `cfg` and writes the metrics table, the summary and (if configured)
/// the event trace under `out`. Nothing is written if the run fails.
pub fn execute(cfg: &RunConfig, out: &Path) -> Result<(RunOutput, RunSummary)> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let output = simulate(
        cfg,
        &data.train,
        &data.test,
        RunOptions {
            record_models: false,
            record_trace: cfg.trace.is_some(),
        },
    )?;
    let summary = RunSummary::from_output(cfg, &output);
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    metrics::write_metrics(&out.join(METRICS_FILE), &output.reports)?;
    metrics::write_summary(&out.join(SUMMARY_FILE), &summary)?;
    if let Some(trace) = &cfg.trace {
        let path = if trace.is_absolute() {
            trace.clone()
        } else {
            out.join(trace)
        };
        metrics::write_trace(&path, &output.trace)?;
    }
    Ok((output, summary))
}

//! Running several configurations and tabulating time-to-accuracy.

use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};

use super::config::RunConfig;
use super::metrics::{read_metrics, MetricsRow, METRICS_FILE};

/// Simulated time of the first report whose accuracy reaches `threshold`.
pub fn time_to_threshold(rows: &[MetricsRow], threshold: f64) -> Option<f64> {
    rows.iter().find(|r| r.global_acc >= threshold).map(|r| r.sim_time)
}

/// Accuracy of the last report at or before `cutoff`.
pub fn accuracy_at(rows: &[MetricsRow], cutoff: f64) -> Option<f64> {
    rows.iter()
        .take_while(|r| r.sim_time <= cutoff)
        .last()
        .map(|r| r.global_acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub label: String,
    pub times: Vec<Option<f64>>,
    pub acc_at_cutoff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub thresholds: Vec<f64>,
    pub cutoff: f64,
    pub rows: Vec<SweepRow>,
}

impl fmt::Display for SweepTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(7);
        write!(f, "{:<width$}", "variant")?;
        for t in &self.thresholds {
            write!(f, "  {:>12}", format!("t@{:.1}%", t * 100.0))?;
        }
        writeln!(f, "  {:>14}", format!("acc@{}s", self.cutoff))?;
        for r in &self.rows {
            write!(f, "{:<width$}", r.label)?;
            for t in &r.times {
                match t {
                    Some(t) => write!(f, "  {:>12.1}", t)?,
                    None => write!(f, "  {:>12}", "-")?,
                }
            }
            match r.acc_at_cutoff {
                Some(a) => writeln!(f, "  {:>14}", format!("{:.2}", a * 100.0))?,
                None => writeln!(f, "  {:>14}", "-")?,
            }
        }
        Ok(())
    }
}

/// Builds the comparison table from the metrics files under each run
/// directory. Every missing file is reported in one error.
pub fn compare_sweep(runs: &[(String, PathBuf)], thresholds: &[f64], cutoff: f64) -> Result<SweepTable> {
    let missing: Vec<PathBuf> = runs
        .iter()
        .map(|(_, dir)| dir.join(METRICS_FILE))
        .filter(|p| !p.is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingOutputs(missing));
    }
    let rows = runs
        .iter()
        .map(|(label, dir)| {
            let m = read_metrics(&dir.join(METRICS_FILE))?;
            Ok(SweepRow {
                label: label.clone(),
                times: thresholds.iter().map(|t| time_to_threshold(&m, *t)).collect(),
                acc_at_cutoff: accuracy_at(&m, cutoff),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        thresholds: thresholds.to_vec(),
        cutoff,
        rows,
    })
}

/// Row labels: the variant name, suffixed with the seed when a variant
/// appears more than once.
pub fn labels(configs: &[RunConfig]) -> Vec<String> {
    configs
        .iter()
        .map(|c| {
            let dup = configs.iter().filter(|o| o.variant == c.variant).count() > 1;
            if dup {
                format!("{}#{}", c.variant, c.seed)
            } else {
                c.variant.to_string()
            }
        })
        .collect()
}

/// Executes every config in parallel, each into its own directory under
/// `root`, and returns `(label, directory)` pairs in input order.
pub fn run_sweep(configs: &[RunConfig], root: &Path) -> Result<Vec<(String, PathBuf)>> {
    if let Some(first) = configs.first() {
        if configs
            .iter()
            .any(|c| c.data_seed() != first.data_seed() || c.data != first.data)
        {
            return Err(Error::Config(
                "all runs in a sweep must share the dataset and its seed".into(),
            ));
        }
    }
    for c in configs {
        c.validate()?;
    }
    let labels = labels(configs);
    let dirs: Vec<PathBuf> = labels.iter().map(|l| root.join(l)).collect();
    configs
        .par_iter()
        .zip(dirs.par_iter())
        .map(|(cfg, dir)| super::execute(cfg, dir).map(|_| ()))
        .collect::<Result<Vec<()>>>()?;
    Ok(labels.into_iter().zip(dirs).collect())
}

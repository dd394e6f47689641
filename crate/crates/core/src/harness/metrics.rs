//! Metrics CSV, summary JSON and event-trace files.
//!
//! The metrics file has one header row and one row per report:
//!
//! ```text
//! round,sim_time,global_acc,server_bytes_sent,density_0,rounds_0,age_0,bytes_up_0,bytes_down_0,...
//! ```
//!
//! with the five per-client columns repeated for every client in id order.
//! Floats are written in shortest round-trip form, so equal runs give
//! byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netsim::TraceRecord;
use crate::orchestrator::{RoundReport, RunOutput};

use super::config::RunConfig;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";

const FIXED_COLUMNS: [&str; 4] = ["round", "sim_time", "global_acc", "server_bytes_sent"];
const CLIENT_COLUMNS: [&str; 5] = ["density", "rounds", "age", "bytes_up", "bytes_down"];

pub fn header(clients: usize) -> String {
    let mut cols: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    for c in 0..clients {
        cols.extend(CLIENT_COLUMNS.iter().map(|s| format!("{s}_{c}")));
    }
    cols.join(",")
}

pub fn render_metrics(reports: &[RoundReport]) -> String {
    let clients = reports.first().map_or(0, |r| r.clients.len());
    let mut s = header(clients);
    s.push('\n');
    for r in reports {
        let _ = write!(s, "{},{},{},{}", r.round, r.sim_time, r.global_acc, r.server_bytes_sent);
        for c in &r.clients {
            let _ = write!(
                s,
                ",{},{},{},{},{}",
                c.density, c.rounds_completed, c.staleness_age, c.bytes_up, c.bytes_down
            );
        }
        s.push('\n');
    }
    s
}

pub fn write_metrics(path: &Path, reports: &[RoundReport]) -> Result<()> {
    std::fs::write(path, render_metrics(reports)).map_err(|e| Error::io(path, e))
}

/// One row of a metrics file, reduced to the columns comparisons need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub round: u64,
    pub sim_time: f64,
    pub global_acc: f64,
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    let head = lines.next().ok_or_else(|| Error::Parse("empty metrics file".into()))?;
    if !head.starts_with(&FIXED_COLUMNS.join(",")) {
        return Err(Error::Parse(format!("unexpected metrics header {head:?}")));
    }
    let width = head.split(',').count();
    lines
        .enumerate()
        .map(|(i, line)| {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != width {
                return Err(Error::Parse(format!(
                    "metrics row {} has {} cells, header has {width}",
                    i + 1,
                    cells.len()
                )));
            }
            let bad = |what: &str| Error::Parse(format!("metrics row {}: bad {what}", i + 1));
            Ok(MetricsRow {
                round: cells[0].parse().map_err(|_| bad("round"))?,
                sim_time: cells[1].parse().map_err(|_| bad("sim_time"))?,
                global_acc: cells[2].parse().map_err(|_| bad("global_acc"))?,
            })
        })
        .collect()
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub variant: String,
    pub seed: u64,
    pub clients: usize,
    pub rounds: u64,
    pub final_time: f64,
    pub final_acc: f64,
    pub best_acc: f64,
    pub delta_t: f64,
    pub converged: bool,
    pub recoveries: usize,
    pub rounds_completed: Vec<u64>,
    pub final_density: Vec<f64>,
    pub server_bytes_sent: u64,
}

impl RunSummary {
    pub fn from_output(cfg: &RunConfig, out: &RunOutput) -> Self {
        let last = out.reports.last();
        Self {
            variant: cfg.variant.name().to_string(),
            seed: cfg.seed,
            clients: cfg.clients,
            rounds: last.map_or(0, |r| r.round),
            final_time: last.map_or(0.0, |r| r.sim_time),
            final_acc: last.map_or(0.0, |r| r.global_acc),
            best_acc: out.reports.iter().map(|r| r.global_acc).fold(0.0, f64::max),
            delta_t: out.delta_t,
            converged: out.converged,
            recoveries: out.recoveries.len(),
            rounds_completed: last.map_or_else(Vec::new, |r| r.clients.iter().map(|c| c.rounds_completed).collect()),
            final_density: last.map_or_else(Vec::new, |r| r.clients.iter().map(|c| c.density).collect()),
            server_bytes_sent: last.map_or(0, |r| r.server_bytes_sent),
        }
    }
}

pub fn write_summary(path: &Path, summary: &RunSummary) -> Result<()> {
    let mut text = serde_json::to_string_pretty(summary).map_err(|e| Error::Parse(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_trace(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let mut text = String::from("time\tkind\tclient\tbytes\n");
    for r in trace {
        text.push_str(&r.to_line());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::ClientReport;

    fn report(round: u64, t: f64, acc: f64) -> RoundReport {
        RoundReport {
            round,
            sim_time: t,
            global_acc: acc,
            server_bytes_sent: 7,
            clients: vec![
                ClientReport {
                    density: 0.5,
                    rounds_completed: round,
                    staleness_age: 1,
                    bytes_up: 10,
                    bytes_down: 20,
                };
                2
            ],
        }
    }

    #[test]
    fn header_lists_every_client_column() {
        let h = header(2);
        assert_eq!(h.split(',').count(), 4 + 2 * 5);
        assert!(h.ends_with("bytes_down_1"));
    }

    #[test]
    fn rendered_rows_parse_back() {
        let reports = vec![report(1, 12.5, 0.25), report(2, 25.0, 0.1 + 0.2)];
        let text = render_metrics(&reports);
        let rows = parse_metrics(&text).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].global_acc, 0.1 + 0.2);
        assert_eq!(rows[0].sim_time, 12.5);
        assert!(text.lines().all(|l| l.split(',').count() == 14));
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(parse_metrics("round,sim_time,global_acc,server_bytes_sent\n1,2,3\n").is_err());
        assert!(parse_metrics("").is_err());
        assert!(parse_metrics("a,b\n").is_err());
    }
}

//! Per-step metric rows and their CSV serialization.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::simenv::{ChainAllocation, StepOutcome};

/// One chain during one control interval. Field order is the CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub chain_id: usize,
    #[serde(rename = "T_gbps")]
    pub t_gbps: f64,
    #[serde(rename = "E_joules")]
    pub e_joules: f64,
    pub util: f64,
    pub miss_rate: f64,
    pub cores: f64,
    pub freq_hz: f64,
    pub llc_frac: f64,
    pub dma: u32,
    pub batch: u32,
    pub reward: f64,
    pub sla_violated: bool,
}

pub const COLUMNS: [&str; 13] = [
    "step",
    "chain_id",
    "T_gbps",
    "E_joules",
    "util",
    "miss_rate",
    "cores",
    "freq_hz",
    "llc_frac",
    "dma",
    "batch",
    "reward",
    "sla_violated",
];

/// Expand a step outcome into one row per chain.
pub fn rows_for_step(step: u64, chains: &[ChainAllocation], outcome: &StepOutcome) -> Vec<MetricsRow> {
    chains
        .iter()
        .zip(&outcome.observations)
        .zip(&outcome.miss_rates)
        .enumerate()
        .map(|(i, ((c, o), &m))| MetricsRow {
            step,
            chain_id: i,
            t_gbps: o.throughput_gbps,
            e_joules: o.energy_j,
            util: o.cpu_util,
            miss_rate: m,
            cores: c.cores,
            freq_hz: c.freq_hz,
            llc_frac: c.llc_frac,
            dma: c.dma,
            batch: c.batch,
            reward: outcome.reward,
            sla_violated: outcome.sla_violated,
        })
        .collect()
}

/// Write any serializable rows as CSV with a header line.
pub fn write_csv<T: Serialize, W: Write>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    write_csv(std::fs::File::create(path)?, rows)
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Totals of one step summed over chains.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepTotals {
    pub throughput_gbps: f64,
    pub energy_j: f64,
    pub reward: f64,
    pub sla_violated: bool,
}

/// Collapse per-chain rows into per-step totals, in step order.
pub fn step_totals(rows: &[MetricsRow]) -> Vec<StepTotals> {
    let mut out: Vec<(u64, StepTotals)> = Vec::new();
    for r in rows {
        match out.last_mut() {
            Some((s, t)) if *s == r.step => {
                t.throughput_gbps += r.t_gbps;
                t.energy_j += r.e_joules;
            }
            _ => out.push((
                r.step,
                StepTotals {
                    throughput_gbps: r.t_gbps,
                    energy_j: r.e_joules,
                    reward: r.reward,
                    sla_violated: r.sla_violated,
                },
            )),
        }
    }
    out.into_iter().map(|(_, t)| t).collect()
}

/// Means over a window of step totals.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WindowSummary {
    pub steps: usize,
    pub mean_throughput_gbps: f64,
    pub mean_energy_j: f64,
    pub total_energy_j: f64,
    pub mean_reward: f64,
    /// Mean throughput divided by mean energy, in Gb/s per kJ.
    pub efficiency: f64,
    pub violation_rate: f64,
}

pub fn summarize(totals: &[StepTotals]) -> WindowSummary {
    if totals.is_empty() {
        return WindowSummary::default();
    }
    let n = totals.len() as f64;
    let t = totals.iter().map(|s| s.throughput_gbps).sum::<f64>() / n;
    let e_sum = totals.iter().map(|s| s.energy_j).sum::<f64>();
    let e = e_sum / n;
    WindowSummary {
        steps: totals.len(),
        mean_throughput_gbps: t,
        mean_energy_j: e,
        total_energy_j: e_sum,
        mean_reward: totals.iter().map(|s| s.reward).sum::<f64>() / n,
        efficiency: crate::sla::efficiency(t, e),
        violation_rate: totals.iter().filter(|s| s.sla_violated).count() as f64 / n,
    }
}

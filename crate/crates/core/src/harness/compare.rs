use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::baselines::StaticScheduler;
use crate::error::{Error, Result};
use crate::sla::energy_saving;

use super::config::ExperimentConfig;
use super::eval::{evaluate_scheduler, EvalSummary};
use super::train::train;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub scheduler: String,
    #[serde(rename = "T_gbps")]
    pub t_gbps: f64,
    #[serde(rename = "E_joules")]
    pub e_joules: f64,
    /// Gb/s per kJ.
    pub efficiency: f64,
    pub violation_rate: f64,
    /// Energy saving against the static baseline, training energy taken as zero.
    #[serde(rename = "E_s")]
    pub energy_saving: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub baseline: EvalSummary,
}

impl CompareReport {
    /// Fixed-width text table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<16} {:>10} {:>12} {:>12} {:>10} {:>9}", "scheduler", "T (Gb/s)", "E (J)", "Gb/s per kJ", "violation", "E_s");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<16} {:>10.4} {:>12.2} {:>12.4} {:>10.4} {:>9.4}",
                r.scheduler, r.t_gbps, r.e_joules, r.efficiency, r.violation_rate, r.energy_saving
            );
        }
        s
    }
}

/// Train and evaluate every config on one shared scenario and rank them
/// against the static baseline evaluated on the same scenario.
pub fn compare(configs: &[ExperimentConfig]) -> Result<CompareReport> {
    let first = configs.first().ok_or_else(|| Error::Config("nothing to compare".into()))?;
    for c in &configs[1..] {
        if c.scenario != first.scenario || c.seed != first.seed {
            return Err(Error::Config("compared configs must share scenario and seed".into()));
        }
    }
    let eval_steps = first.training.eval_steps as u64;
    let (_, baseline) = evaluate_scheduler(&mut StaticScheduler::new(&first.scenario), first, eval_steps)?;
    let mut rows = Vec::with_capacity(configs.len());
    for c in configs {
        let outcome = train(c)?;
        let ev = outcome.metrics.final_eval;
        rows.push(CompareRow {
            scheduler: c.scheduler.name().to_string(),
            t_gbps: ev.mean_throughput_gbps,
            e_joules: ev.mean_energy_j,
            efficiency: ev.efficiency,
            violation_rate: ev.violation_rate,
            energy_saving: energy_saving(ev.total_energy_j, 0.0, baseline.total_energy_j)?,
        });
    }
    Ok(CompareReport { rows, baseline })
}

//! Named scenarios used by the bundled configs and the test suites.

use crate::simenv::{FlowSpec, KnobRanges, Scenario};

use super::config::{BenchConfig, ExperimentConfig, SchedulerKind};
use crate::sla::SlaObjective;

/// Five flows of mixed packet sizes, three NFs each, 10 s control interval.
pub fn five_flow() -> Scenario {
    let mut sc = Scenario::new(vec![
        FlowSpec::new(4.8e6, 256, 3),
        FlowSpec::new(4.8e6, 256, 3),
        FlowSpec::new(9.5e6, 128, 3),
        FlowSpec::new(9.5e6, 128, 3),
        FlowSpec::new(19e6, 64, 3),
    ]);
    sc.dt = 10.0;
    sc.arrival_jitter = 0.1;
    sc
}

/// Energy cap per interval for the throughput-maximizing run on [`five_flow`].
pub const FIVE_FLOW_ENERGY_CAP: f64 = 2000.0;
/// Throughput floor in Gb/s for the energy-minimizing run on [`five_flow`].
pub const FIVE_FLOW_THROUGHPUT_FLOOR: f64 = 7.5;

/// Two chains fed 13 Mpps and 1 Mpps of 64 B packets on a server whose
/// LLC is small enough for the split between them to matter.
pub fn two_chain_llc() -> ExperimentConfig {
    let mut sc = Scenario::new(vec![FlowSpec::new(13e6, 64, 3), FlowSpec::new(1e6, 64, 3)]);
    sc.ranges = KnobRanges { cores_max: 48, llc_total: 256 * 1024, ..KnobRanges::default() };
    let mut cfg = ExperimentConfig::new(sc, SlaObjective::EnergyEfficiency, SchedulerKind::StaticBaseline);
    cfg.bench = BenchConfig { dma: Some(4096), batch: Some(256), steps: 1 };
    cfg
}

/// One 64 B chain with a tiny LLC, so large batches start missing in cache.
pub fn single_chain_batch() -> ExperimentConfig {
    let mut sc = Scenario::new(vec![FlowSpec::new(19e6, 64, 3)]);
    sc.ranges = KnobRanges { cores_max: 4, llc_total: 8 * 1024, ..KnobRanges::default() };
    let mut cfg = ExperimentConfig::new(sc, SlaObjective::EnergyEfficiency, SchedulerKind::StaticBaseline);
    cfg.bench.dma = Some(32);
    cfg
}

/// An experiment on [`five_flow`] with the SLA thresholds used for evaluation.
pub fn five_flow_experiment(sla: SlaKind, scheduler: SchedulerKind) -> ExperimentConfig {
    let objective = match sla {
        SlaKind::MaxThroughput => SlaObjective::MaxThroughput { energy_cap: FIVE_FLOW_ENERGY_CAP },
        SlaKind::MinEnergy => SlaObjective::MinEnergy { throughput_floor: FIVE_FLOW_THROUGHPUT_FLOOR },
        SlaKind::EnergyEfficiency => SlaObjective::EnergyEfficiency,
    };
    ExperimentConfig::new(five_flow(), objective, scheduler)
}

/// SLA selector without thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlaKind {
    MaxThroughput,
    MinEnergy,
    EnergyEfficiency,
}

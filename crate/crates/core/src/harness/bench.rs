use serde::{Deserialize, Serialize};

use crate::baselines::static_allocation;
use crate::error::{Error, Result};
use crate::simenv::{ResourceAllocation, SimEnv};

use super::config::ExperimentConfig;

/// The knob varied by a micro-benchmark sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Knob {
    /// Cores given to every chain.
    Cores,
    /// Frequency in Hz applied to every chain; must be a configured level.
    Frequency,
    /// LLC fraction of chain 0; the rest is split evenly among the other chains.
    LlcSplit,
    /// DMA descriptors of every chain.
    Dma,
    /// Batch size of every chain.
    Batch,
}

impl std::str::FromStr for Knob {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cores" => Ok(Knob::Cores),
            "frequency" | "freq" => Ok(Knob::Frequency),
            "llc" | "llc_split" => Ok(Knob::LlcSplit),
            "dma" => Ok(Knob::Dma),
            "batch" => Ok(Knob::Batch),
            other => Err(Error::Config(format!("unknown knob '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub value: f64,
    /// Total throughput over all chains, Gb/s.
    #[serde(rename = "T_gbps")]
    pub t_gbps: f64,
    /// Total energy per interval, J.
    #[serde(rename = "E_joules")]
    pub e_joules: f64,
    /// Mean LLC miss rate over chains.
    pub miss_rate: f64,
}

/// Allocation held during a sweep: the static split with optional I/O overrides.
pub fn bench_base(config: &ExperimentConfig) -> ResourceAllocation {
    let sc = &config.scenario;
    let mut alloc = static_allocation(sc.num_chains(), &sc.ranges);
    for c in alloc.chains.iter_mut() {
        if let Some(d) = config.bench.dma {
            c.dma = d;
        }
        if let Some(b) = config.bench.batch {
            c.batch = b;
        }
    }
    alloc
}

fn apply(base: &ResourceAllocation, knob: Knob, value: f64) -> Result<ResourceAllocation> {
    let mut alloc = base.clone();
    let as_u32 = |v: f64| -> Result<u32> {
        if v.fract() != 0.0 || !(0.0..=f64::from(u32::MAX)).contains(&v) {
            return Err(Error::domain(format!("{v} is not a whole count")));
        }
        Ok(v as u32)
    };
    let n = alloc.len();
    for (i, c) in alloc.chains.iter_mut().enumerate() {
        match knob {
            Knob::Cores => c.cores = value,
            Knob::Frequency => c.freq_hz = value,
            Knob::LlcSplit => {
                if !(0.0..=1.0).contains(&value) {
                    return Err(Error::domain(format!("LLC split {value} outside [0, 1]")));
                }
                c.llc_frac = if i == 0 {
                    value
                } else {
                    (1.0 - value) / (n - 1) as f64
                };
            }
            Knob::Dma => c.dma = as_u32(value)?,
            Knob::Batch => c.batch = as_u32(value)?,
        }
    }
    Ok(alloc)
}

/// Sweep one knob with everything else held at the bench defaults.
pub fn bench_sweep(config: &ExperimentConfig, knob: Knob, values: &[f64]) -> Result<Vec<BenchRow>> {
    config.validate()?;
    let base = bench_base(config);
    let ranges = &config.scenario.ranges;
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let alloc = apply(&base, knob, value)?;
        alloc.validate(ranges)?;
        let mut env = SimEnv::new(config.scenario.clone(), None, config.seed)?;
        let (mut t, mut e, mut m) = (0.0, 0.0, 0.0);
        for _ in 0..config.bench.steps {
            let outcome = env.step_default(&alloc)?;
            t += outcome.observations.iter().map(|o| o.throughput_gbps).sum::<f64>();
            e += outcome.observations.iter().map(|o| o.energy_j).sum::<f64>();
            m += outcome.miss_rates.iter().sum::<f64>() / outcome.miss_rates.len() as f64;
        }
        let k = config.bench.steps as f64;
        rows.push(BenchRow { value, t_gbps: t / k, e_joules: e / k, miss_rate: m / k });
    }
    Ok(rows)
}

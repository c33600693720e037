//! Deterministic simulator of NF chains sharing one server.
//!
//! Every chain is driven by a [`FlowSpec`] and receives a slice of the
//! server's resources ([`ChainAllocation`]). One call to [`SimEnv::step`]
//! evaluates a closed-form throughput/energy model for a control interval:
//!
//! * LLC misses grow once the chain's packet working set (batch plus DMA
//!   ring) overflows its usable cache share.
//! * Cycles per packet combine per-NF work inflated by misses and a per-batch
//!   call overhead amortized over the batch.
//! * Server power follows the nonlinear utilization model
//!   `P(u) = (P_max - P_idle)(2u - u^h) + P_idle`, where busy core time is
//!   weighted by `(f / f_max)^dvfs_exponent` to account for voltage scaling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sla::SlaSpec;

const MIB: u64 = 1 << 20;

/// Bounds of every controllable knob on the simulated server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnobRanges {
    pub cores_max: u32,
    /// Available DVFS levels in Hz, strictly increasing.
    pub freq_levels: Vec<f64>,
    /// LLC capacity in bytes.
    pub llc_total: u64,
    /// Fraction of the LLC reserved for DDIO and unusable by NFs.
    pub llc_ddio_reserved: f64,
    pub dma_desc_range: [u32; 2],
    pub batch_range: [u32; 2],
    /// NIC line rate in bits per second.
    pub line_rate: f64,
}

impl Default for KnobRanges {
    fn default() -> Self {
        Self {
            cores_max: 16,
            freq_levels: (0..10).map(|i| 1.2e9 + 1e8 * f64::from(i)).collect(),
            llc_total: 20 * MIB,
            llc_ddio_reserved: 0.1,
            dma_desc_range: [32, 4096],
            batch_range: [1, 256],
            line_rate: 10e9,
        }
    }
}

impl KnobRanges {
    pub fn validate(&self) -> Result<()> {
        if self.cores_max == 0 {
            return Err(Error::domain("cores_max must be positive"));
        }
        if self.freq_levels.is_empty() {
            return Err(Error::domain("freq_levels is empty"));
        }
        if self.freq_levels.iter().any(|f| !f.is_finite() || *f <= 0.0) {
            return Err(Error::domain("freq_levels must be positive"));
        }
        if self.freq_levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("freq_levels must be strictly increasing"));
        }
        if self.llc_total == 0 {
            return Err(Error::domain("llc_total must be positive"));
        }
        if !(self.llc_ddio_reserved > 0.0 && self.llc_ddio_reserved < 1.0) {
            return Err(Error::domain("llc_ddio_reserved must lie in (0, 1)"));
        }
        for (name, [lo, hi]) in [("dma_desc_range", self.dma_desc_range), ("batch_range", self.batch_range)] {
            if lo < 1 || lo > hi {
                return Err(Error::domain(format!("{name} must satisfy 1 <= min <= max")));
            }
        }
        if !(self.line_rate > 0.0 && self.line_rate.is_finite()) {
            return Err(Error::domain("line_rate must be positive"));
        }
        Ok(())
    }

    pub fn f_min(&self) -> f64 {
        self.freq_levels[0]
    }

    pub fn f_max(&self) -> f64 {
        *self.freq_levels.last().expect("validated non-empty")
    }

    /// LLC bytes usable by NFs once the DDIO slice is carved out.
    pub fn usable_llc(&self) -> f64 {
        self.llc_total as f64 * (1.0 - self.llc_ddio_reserved)
    }

    /// Index of the level nearest to `hz`; exact ties go to the lower level.
    pub fn nearest_freq_index(&self, hz: f64) -> usize {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (i, level) in self.freq_levels.iter().enumerate() {
            let d = (level - hz).abs();
            if d < best_dist {
                best = i;
                best_dist = d;
            }
        }
        best
    }

    pub fn freq_index(&self, hz: f64) -> Option<usize> {
        self.freq_levels.iter().position(|&l| l == hz)
    }
}

/// Offered traffic of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    /// Packets per second.
    pub arrival_rate: f64,
    /// Bytes, 64..=1518.
    pub packet_size: u32,
    #[serde(default = "default_chain_length")]
    pub chain_length: u32,
}

fn default_chain_length() -> u32 {
    3
}

impl FlowSpec {
    pub fn new(arrival_rate: f64, packet_size: u32, chain_length: u32) -> Self {
        Self { arrival_rate, packet_size, chain_length }
    }

    pub fn validate(&self) -> Result<()> {
        // Zero arrival is allowed for idle scenarios.
        if !(self.arrival_rate >= 0.0 && self.arrival_rate.is_finite()) {
            return Err(Error::domain("arrival_rate must be finite and nonnegative"));
        }
        if !(64..=1518).contains(&self.packet_size) {
            return Err(Error::domain("packet_size must lie in [64, 1518]"));
        }
        if self.chain_length < 1 {
            return Err(Error::domain("chain_length must be at least 1"));
        }
        Ok(())
    }

    /// Line rate expressed in packets per second for this packet size.
    pub fn line_rate_pps(&self, ranges: &KnobRanges) -> f64 {
        ranges.line_rate / (f64::from(self.packet_size) * 8.0)
    }

    /// Throughput in Gb/s for a packet rate on this flow.
    pub fn gbps(&self, pps: f64) -> f64 {
        pps * f64::from(self.packet_size) * 8.0 / 1e9
    }
}

/// Knob settings of one chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainAllocation {
    /// Fractional core count.
    pub cores: f64,
    /// Hz, one of the configured levels.
    pub freq_hz: f64,
    /// Fraction of the usable LLC.
    pub llc_frac: f64,
    /// DMA descriptor count.
    pub dma: u32,
    /// Packets per batch.
    pub batch: u32,
}

impl ChainAllocation {
    pub fn validate(&self, ranges: &KnobRanges) -> Result<()> {
        if !(self.cores >= 0.0 && self.cores <= f64::from(ranges.cores_max)) {
            return Err(Error::domain(format!("cores {} outside [0, {}]", self.cores, ranges.cores_max)));
        }
        if ranges.freq_index(self.freq_hz).is_none() {
            return Err(Error::domain(format!("frequency {} Hz is not a configured level", self.freq_hz)));
        }
        if !(0.0..=1.0).contains(&self.llc_frac) {
            return Err(Error::domain(format!("llc fraction {} outside [0, 1]", self.llc_frac)));
        }
        let [dlo, dhi] = ranges.dma_desc_range;
        if !(dlo..=dhi).contains(&self.dma) {
            return Err(Error::domain(format!("dma {} outside [{dlo}, {dhi}]", self.dma)));
        }
        let [blo, bhi] = ranges.batch_range;
        if !(blo..=bhi).contains(&self.batch) {
            return Err(Error::domain(format!("batch {} outside [{blo}, {bhi}]", self.batch)));
        }
        Ok(())
    }
}

/// Per-chain action vector for the whole server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceAllocation {
    pub chains: Vec<ChainAllocation>,
}

/// Number of knobs per chain in a raw action vector.
pub const KNOBS_PER_CHAIN: usize = 5;

impl ResourceAllocation {
    pub fn new(chains: Vec<ChainAllocation>) -> Self {
        Self { chains }
    }

    pub fn len(&self) -> usize {
        self.chains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chains.is_empty()
    }

    pub fn validate(&self, ranges: &KnobRanges) -> Result<()> {
        for c in &self.chains {
            c.validate(ranges)?;
        }
        let llc: f64 = self.chains.iter().map(|c| c.llc_frac).sum();
        if llc > 1.0 + 1e-9 {
            return Err(Error::domain(format!("LLC over-subscribed: sum {llc}")));
        }
        let cores: f64 = self.chains.iter().map(|c| c.cores).sum();
        if cores > f64::from(ranges.cores_max) + 1e-9 {
            return Err(Error::domain(format!("cores over-subscribed: sum {cores}")));
        }
        Ok(())
    }

    /// Project a raw actor output in `[-1, 1]^(5n)` onto valid knobs.
    ///
    /// Per chain the layout is `[cores, freq, llc, dma, batch]`. Cores and
    /// LLC map linearly onto `[0, cores_max]` and `[0, 1]` and are rescaled
    /// proportionally when their sums over-subscribe the server. Frequency
    /// maps linearly onto `[f_min, f_max]` and snaps to the nearest level.
    /// DMA and batch map log-uniformly over their ranges and round half-up.
    pub fn from_raw_action(raw: &[f64], ranges: &KnobRanges) -> Result<Self> {
        if raw.is_empty() || !raw.len().is_multiple_of(KNOBS_PER_CHAIN) {
            return Err(Error::Dimension {
                expected: KNOBS_PER_CHAIN * (raw.len() / KNOBS_PER_CHAIN).max(1),
                got: raw.len(),
            });
        }
        if raw.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("raw action".into()));
        }
        let unit = |a: f64| (a.clamp(-1.0, 1.0) + 1.0) / 2.0;
        let log_knob = |a: f64, [lo, hi]: [u32; 2]| -> u32 {
            let (lo_f, hi_f) = (f64::from(lo), f64::from(hi));
            let v = (lo_f.ln() + unit(a) * (hi_f.ln() - lo_f.ln())).exp();
            round_half_up(v).clamp(lo_f, hi_f) as u32
        };
        let cores_max = f64::from(ranges.cores_max);
        let mut chains: Vec<ChainAllocation> = raw
            .chunks_exact(KNOBS_PER_CHAIN)
            .map(|k| {
                let hz = ranges.f_min() + unit(k[1]) * (ranges.f_max() - ranges.f_min());
                ChainAllocation {
                    cores: unit(k[0]) * cores_max,
                    freq_hz: ranges.freq_levels[ranges.nearest_freq_index(hz)],
                    llc_frac: unit(k[2]),
                    dma: log_knob(k[3], ranges.dma_desc_range),
                    batch: log_knob(k[4], ranges.batch_range),
                }
            })
            .collect();
        let core_sum: f64 = chains.iter().map(|c| c.cores).sum();
        if core_sum > cores_max {
            let scale = cores_max / core_sum;
            chains.iter_mut().for_each(|c| c.cores *= scale);
        }
        let llc_sum: f64 = chains.iter().map(|c| c.llc_frac).sum();
        if llc_sum > 1.0 {
            chains.iter_mut().for_each(|c| c.llc_frac /= llc_sum);
        }
        Ok(Self { chains })
    }

    /// Static defaults: cores and LLC split evenly, given frequency for all.
    pub fn even_split(n: usize, ranges: &KnobRanges, freq_hz: f64, dma: u32, batch: u32) -> Self {
        let share = 1.0 / n as f64;
        Self {
            chains: (0..n)
                .map(|_| ChainAllocation {
                    cores: f64::from(ranges.cores_max) * share,
                    freq_hz,
                    llc_frac: share,
                    dma,
                    batch,
                })
                .collect(),
        }
    }
}

fn round_half_up(v: f64) -> f64 {
    (v + 0.5).floor()
}

/// What one chain looked like over the last control interval.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChainObservation {
    pub throughput_gbps: f64,
    pub energy_j: f64,
    pub cpu_util: f64,
    /// Packets per second offered during the interval.
    pub arrival_rate: f64,
}

/// Number of features per chain in an observation vector.
pub const FEATURES_PER_CHAIN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerParams {
    pub p_idle: f64,
    pub p_max: f64,
    pub h: f64,
}

impl Default for PowerParams {
    fn default() -> Self {
        Self { p_idle: 100.0, p_max: 250.0, h: 1.4 }
    }
}

impl PowerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_idle > 0.0 && self.p_idle < self.p_max && self.p_max.is_finite()) {
            return Err(Error::domain("power params need 0 < p_idle < p_max"));
        }
        if !(self.h > 1.0 && self.h <= 2.0) {
            return Err(Error::domain("calibration exponent h must lie in (1, 2]"));
        }
        Ok(())
    }
}

/// Constants of the throughput and cache model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConstants {
    /// Cycles per packet per NF with a warm cache.
    pub c_base: f64,
    /// Relative slowdown of a fully missing packet.
    pub kappa_miss: f64,
    /// Cycles of call overhead per batch.
    pub c_call: f64,
    /// Compulsory miss floor.
    pub m_min: f64,
    /// Exponent applied to `f / f_max` when weighting busy time for power.
    pub dvfs_exponent: f64,
}

impl Default for ModelConstants {
    fn default() -> Self {
        Self { c_base: 300.0, kappa_miss: 4.0, c_call: 40_000.0, m_min: 0.01, dvfs_exponent: 3.0 }
    }
}

/// LLC miss rate of one chain.
pub fn cache_miss_rate(
    chain: &ChainAllocation,
    flow: &FlowSpec,
    ranges: &KnobRanges,
    constants: &ModelConstants,
) -> Result<f64> {
    chain.validate(ranges)?;
    flow.validate()?;
    let cache = chain.llc_frac * ranges.usable_llc();
    let pkt = f64::from(flow.packet_size);
    let working_set = f64::from(chain.batch) * pkt + f64::from(chain.dma) * pkt;
    let overflow = (1.0 - cache / working_set).clamp(0.0, 1.0);
    Ok(constants.m_min + (1.0 - constants.m_min) * overflow)
}

/// Cycles needed per packet for a chain at the given miss rate.
pub fn cycles_per_packet(chain: &ChainAllocation, flow: &FlowSpec, miss_rate: f64, constants: &ModelConstants) -> f64 {
    constants.c_base * f64::from(flow.chain_length) * (1.0 + constants.kappa_miss * miss_rate)
        + constants.c_call / f64::from(chain.batch)
}

/// Processing capacity in packets per second, before any traffic cap.
pub fn capacity_pps(chain: &ChainAllocation, flow: &FlowSpec, miss_rate: f64, constants: &ModelConstants) -> f64 {
    chain.cores * chain.freq_hz / cycles_per_packet(chain, flow, miss_rate, constants)
}

/// Delivered packet rate: capacity capped by the line rate and the arrivals.
pub fn service_rate(
    chain: &ChainAllocation,
    flow: &FlowSpec,
    miss_rate: f64,
    ranges: &KnobRanges,
    constants: &ModelConstants,
) -> Result<f64> {
    chain.validate(ranges)?;
    flow.validate()?;
    if !(0.0..=1.0).contains(&miss_rate) {
        return Err(Error::domain(format!("miss rate {miss_rate} outside [0, 1]")));
    }
    let cap = capacity_pps(chain, flow, miss_rate, constants);
    Ok(cap.min(flow.line_rate_pps(ranges)).min(flow.arrival_rate))
}

/// Server power draw at utilization `u`.
pub fn power(u: f64, params: &PowerParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::domain(format!("utilization {u} outside [0, 1]")));
    }
    Ok((params.p_max - params.p_idle) * (2.0 * u - u.powf(params.h)) + params.p_idle)
}

/// Everything needed to instantiate an environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub flows: Vec<FlowSpec>,
    #[serde(default)]
    pub ranges: KnobRanges,
    #[serde(default)]
    pub power: PowerParams,
    #[serde(default)]
    pub constants: ModelConstants,
    /// Control interval in seconds.
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Multiplicative uniform arrival jitter amplitude; 0 disables it.
    #[serde(default)]
    pub arrival_jitter: f64,
}

fn default_dt() -> f64 {
    1.0
}

impl Scenario {
    pub fn new(flows: Vec<FlowSpec>) -> Self {
        Self {
            flows,
            ranges: KnobRanges::default(),
            power: PowerParams::default(),
            constants: ModelConstants::default(),
            dt: default_dt(),
            arrival_jitter: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.flows.is_empty() {
            return Err(Error::domain("scenario needs at least one flow"));
        }
        for f in &self.flows {
            f.validate()?;
        }
        self.ranges.validate()?;
        self.power.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::domain("dt must be positive"));
        }
        if !(0.0..1.0).contains(&self.arrival_jitter) {
            return Err(Error::domain("arrival_jitter must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn num_chains(&self) -> usize {
        self.flows.len()
    }

    pub fn state_dim(&self) -> usize {
        self.flows.len() * FEATURES_PER_CHAIN
    }

    pub fn action_dim(&self) -> usize {
        self.flows.len() * KNOBS_PER_CHAIN
    }

    /// Largest throughput any chain can report, in Gb/s.
    pub fn line_rate_gbps(&self) -> f64 {
        self.ranges.line_rate / 1e9
    }

    /// Maximum energy the server can draw over one interval.
    pub fn max_interval_energy(&self) -> f64 {
        self.power.p_max * self.dt
    }

    /// Normalize observations to roughly `[0, 1]` per feature.
    pub fn normalize(&self, obs: &[ChainObservation]) -> Vec<f64> {
        let t_max = self.line_rate_gbps();
        let e_max = self.max_interval_energy();
        let mut out = Vec::with_capacity(obs.len() * FEATURES_PER_CHAIN);
        for (o, f) in obs.iter().zip(&self.flows) {
            let a_max = f.arrival_rate * (1.0 + self.arrival_jitter);
            out.push(o.throughput_gbps / t_max);
            out.push(o.energy_j / e_max);
            out.push(o.cpu_util);
            out.push(if a_max > 0.0 { o.arrival_rate / a_max } else { 0.0 });
        }
        out
    }
}

/// Result of one control interval.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observations: Vec<ChainObservation>,
    pub miss_rates: Vec<f64>,
    pub sla_violated: bool,
    pub reward: f64,
}

/// Single-writer simulator instance.
#[derive(Debug, Clone)]
pub struct SimEnv {
    scenario: Scenario,
    sla: Option<SlaSpec>,
    rng: ChaCha8Rng,
    steps: u64,
}

impl SimEnv {
    pub fn new(scenario: Scenario, sla: Option<SlaSpec>, seed: u64) -> Result<Self> {
        scenario.validate()?;
        Ok(Self { scenario, sla, rng: ChaCha8Rng::seed_from_u64(seed), steps: 0 })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn sla(&self) -> Option<&SlaSpec> {
        self.sla.as_ref()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Restart the RNG stream and return the pre-traffic observations.
    pub fn reset(&mut self, seed: u64) -> Vec<ChainObservation> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.steps = 0;
        self.initial_observations()
    }

    pub fn initial_observations(&self) -> Vec<ChainObservation> {
        self.scenario
            .flows
            .iter()
            .map(|f| ChainObservation { arrival_rate: f.arrival_rate, ..Default::default() })
            .collect()
    }

    fn draw_arrivals(&mut self) -> Vec<f64> {
        let jitter = self.scenario.arrival_jitter;
        let flows = &self.scenario.flows;
        if jitter == 0.0 {
            return flows.iter().map(|f| f.arrival_rate).collect();
        }
        flows
            .iter()
            .map(|f| f.arrival_rate * (1.0 + self.rng.random_range(-jitter..=jitter)))
            .collect()
    }

    /// Apply an allocation for `dt` seconds. The state is untouched on error.
    pub fn step(&mut self, alloc: &ResourceAllocation, dt: f64) -> Result<StepOutcome> {
        let sc = &self.scenario;
        if alloc.len() != sc.num_chains() {
            return Err(Error::Dimension { expected: sc.num_chains(), got: alloc.len() });
        }
        alloc.validate(&sc.ranges)?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::domain("dt must be positive"));
        }
        let arrivals = self.draw_arrivals();
        let sc = &self.scenario;
        let (ranges, k) = (&sc.ranges, &sc.constants);
        let f_max = ranges.f_max();

        let mut miss_rates = Vec::with_capacity(alloc.len());
        let mut partial = Vec::with_capacity(alloc.len());
        let mut weighted_busy = 0.0;
        for ((chain, flow), &arrival) in alloc.chains.iter().zip(&sc.flows).zip(&arrivals) {
            let flow = FlowSpec { arrival_rate: arrival, ..flow.clone() };
            let m = cache_miss_rate(chain, &flow, ranges, k)?;
            let delivered = service_rate(chain, &flow, m, ranges, k)?;
            let cpp = cycles_per_packet(chain, &flow, m, k);
            let demand = arrival.min(flow.line_rate_pps(ranges)) * cpp;
            let available = chain.cores * chain.freq_hz;
            let util = if demand <= 0.0 {
                0.0
            } else if available <= 0.0 {
                1.0
            } else {
                (demand / available).min(1.0)
            };
            weighted_busy += util * chain.cores * (chain.freq_hz / f_max).powf(k.dvfs_exponent);
            miss_rates.push(m);
            partial.push((flow.gbps(delivered), util, arrival));
        }
        let u = (weighted_busy / f64::from(ranges.cores_max)).clamp(0.0, 1.0);
        let energy = power(u, &sc.power)? * dt;
        let core_sum: f64 = alloc.chains.iter().map(|c| c.cores).sum();
        let n = alloc.len() as f64;
        let observations: Vec<ChainObservation> = partial
            .into_iter()
            .zip(&alloc.chains)
            .map(|((t, util, arrival), chain)| {
                let share = if core_sum > 0.0 { chain.cores / core_sum } else { 1.0 / n };
                ChainObservation { throughput_gbps: t, energy_j: energy * share, cpu_util: util, arrival_rate: arrival }
            })
            .collect();

        let (reward, sla_violated) = match &self.sla {
            Some(sla) => (sla.reward(&observations), sla.is_violation(&observations)),
            None => (0.0, false),
        };
        self.steps += 1;
        Ok(StepOutcome { observations, miss_rates, sla_violated, reward })
    }

    /// Step with the scenario's configured control interval.
    pub fn step_default(&mut self, alloc: &ResourceAllocation) -> Result<StepOutcome> {
        let dt = self.scenario.dt;
        self.step(alloc, dt)
    }
}

//! Comparison schedulers: a static split, the threshold heuristic, tabular
//! Q-learning over discretized knobs, and a DES-driven P-state controller.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simenv::{
    cache_miss_rate, capacity_pps, ChainAllocation, ChainObservation, FlowSpec, KnobRanges, ResourceAllocation,
    Scenario, StepOutcome, FEATURES_PER_CHAIN, KNOBS_PER_CHAIN,
};
use crate::sla::efficiency;

/// A controller that picks an allocation every interval.
pub trait Scheduler {
    fn name(&self) -> &'static str;

    /// Choose the allocation for the next interval given the last observations.
    fn act(&mut self, obs: &[ChainObservation], rng: &mut dyn RngCore) -> Result<ResourceAllocation>;

    /// Learn from the interval that followed the last `act`.
    fn feedback(&mut self, _outcome: &StepOutcome) {}

    /// Toggle exploration for learning schedulers.
    fn set_explore(&mut self, _explore: bool) {}
}

/// DMA ring size of the static configuration.
pub const STATIC_DMA: u32 = 1024;
/// Batch size of the static configuration.
pub const STATIC_BATCH: u32 = 32;

/// Even split of cores and LLC at the highest frequency with stock I/O settings.
pub fn static_allocation(n: usize, ranges: &KnobRanges) -> ResourceAllocation {
    let [dlo, dhi] = ranges.dma_desc_range;
    let [blo, bhi] = ranges.batch_range;
    ResourceAllocation::even_split(n, ranges, ranges.f_max(), STATIC_DMA.clamp(dlo, dhi), STATIC_BATCH.clamp(blo, bhi))
}

#[derive(Debug, Clone)]
pub struct StaticScheduler {
    alloc: ResourceAllocation,
}

impl StaticScheduler {
    pub fn new(scenario: &Scenario) -> Self {
        Self { alloc: static_allocation(scenario.num_chains(), &scenario.ranges) }
    }
}

impl Scheduler for StaticScheduler {
    fn name(&self) -> &'static str {
        "static_baseline"
    }

    fn act(&mut self, _obs: &[ChainObservation], _rng: &mut dyn RngCore) -> Result<ResourceAllocation> {
        Ok(self.alloc.clone())
    }
}

// ---------------------------------------------------------------------------
// Threshold heuristic

/// Index of the median frequency level; even-length lists take the lower median.
pub fn median_freq_index(ranges: &KnobRanges) -> usize {
    (ranges.freq_levels.len() - 1) / 2
}

/// DMA ring that fits `llc_bytes` of packets at the given batch size, clamped to range.
pub fn heuristic_dma(llc_bytes: f64, packet_size: u32, batch: u32, ranges: &KnobRanges) -> u32 {
    let [lo, hi] = ranges.dma_desc_range;
    let raw = (llc_bytes / (f64::from(packet_size) * f64::from(batch))).floor();
    raw.clamp(f64::from(lo), f64::from(hi)) as u32
}

/// Initial allocation: one core per chain at the median frequency, batch 2,
/// LLC in proportion to arrival rates, DMA sized to the LLC share.
pub fn heuristic_init(flows: &[FlowSpec], ranges: &KnobRanges) -> Result<ResourceAllocation> {
    if flows.is_empty() {
        return Err(Error::domain("no flows"));
    }
    for f in flows {
        f.validate()?;
    }
    ranges.validate()?;
    let n = flows.len();
    let cores = (f64::from(ranges.cores_max) / n as f64).min(1.0);
    let batch = 2u32.clamp(ranges.batch_range[0], ranges.batch_range[1]);
    let total_rate: f64 = flows.iter().map(|f| f.arrival_rate).sum();
    let freq_hz = ranges.freq_levels[median_freq_index(ranges)];
    let chains = flows
        .iter()
        .map(|f| {
            let llc_frac = if total_rate > 0.0 { f.arrival_rate / total_rate } else { 1.0 / n as f64 };
            let dma = heuristic_dma(llc_frac * ranges.usable_llc(), f.packet_size, batch, ranges);
            ChainAllocation { cores, freq_hz, llc_frac, dma, batch }
        })
        .collect();
    Ok(ResourceAllocation::new(chains))
}

/// Mutable knobs and thresholds of one chain under the heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeuristicChain {
    pub freq_index: usize,
    pub batch: u32,
    /// Frequency is lowered when efficiency falls below this value (Gb/s per kJ).
    pub threshold1: f64,
    /// Batch grows when efficiency falls below this value (Gb/s per kJ).
    pub threshold2: f64,
    /// Best efficiency seen so far.
    pub best_lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeuristicConfig {
    /// threshold1 as a fraction of the best efficiency observed so far.
    pub threshold1_frac: f64,
    /// threshold2 as a fraction of the best efficiency observed so far.
    pub threshold2_frac: f64,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self { threshold1_frac: 0.5, threshold2_frac: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicState {
    pub config: HeuristicConfig,
    pub alloc: ResourceAllocation,
    pub chains: Vec<HeuristicChain>,
}

impl HeuristicState {
    pub fn new(flows: &[FlowSpec], ranges: &KnobRanges, config: HeuristicConfig) -> Result<Self> {
        let alloc = heuristic_init(flows, ranges)?;
        let chains = alloc
            .chains
            .iter()
            .map(|c| HeuristicChain {
                freq_index: median_freq_index(ranges),
                batch: c.batch,
                threshold1: 0.0,
                threshold2: 0.0,
                best_lambda: 0.0,
            })
            .collect();
        Ok(Self { config, alloc, chains })
    }
}

/// One periodic adjustment. Each chain compares its own efficiency against
/// its thresholds, moves frequency one level and batch by one, then clamps.
pub fn heuristic_adjust(
    state: &mut HeuristicState,
    obs: &[ChainObservation],
    ranges: &KnobRanges,
) -> Result<ResourceAllocation> {
    if obs.len() != state.chains.len() {
        return Err(Error::Dimension { expected: state.chains.len(), got: obs.len() });
    }
    let top = ranges.freq_levels.len() - 1;
    let [blo, bhi] = ranges.batch_range;
    for ((ch, o), alloc) in state.chains.iter_mut().zip(obs).zip(state.alloc.chains.iter_mut()) {
        let lambda = efficiency(o.throughput_gbps, o.energy_j);
        ch.best_lambda = ch.best_lambda.max(lambda);
        ch.threshold1 = state.config.threshold1_frac * ch.best_lambda;
        ch.threshold2 = state.config.threshold2_frac * ch.best_lambda;
        ch.freq_index = if lambda < ch.threshold1 { ch.freq_index.saturating_sub(1) } else { (ch.freq_index + 1).min(top) };
        ch.batch = if lambda < ch.threshold2 { ch.batch.saturating_add(1) } else { ch.batch.saturating_sub(1) }.clamp(blo, bhi);
        alloc.freq_hz = ranges.freq_levels[ch.freq_index];
        alloc.batch = ch.batch;
    }
    Ok(state.alloc.clone())
}

#[derive(Debug, Clone)]
pub struct HeuristicScheduler {
    state: HeuristicState,
    ranges: KnobRanges,
    started: bool,
}

impl HeuristicScheduler {
    pub fn new(scenario: &Scenario, config: HeuristicConfig) -> Result<Self> {
        Ok(Self {
            state: HeuristicState::new(&scenario.flows, &scenario.ranges, config)?,
            ranges: scenario.ranges.clone(),
            started: false,
        })
    }

    pub fn state(&self) -> &HeuristicState {
        &self.state
    }
}

impl Scheduler for HeuristicScheduler {
    fn name(&self) -> &'static str {
        "heuristic"
    }

    fn act(&mut self, obs: &[ChainObservation], _rng: &mut dyn RngCore) -> Result<ResourceAllocation> {
        if !self.started {
            // The first interval runs the initial allocation unchanged.
            self.started = true;
            return Ok(self.state.alloc.clone());
        }
        heuristic_adjust(&mut self.state, obs, &self.ranges)
    }
}

// ---------------------------------------------------------------------------
// Tabular Q-learning

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
    pub alpha: f64,
    pub gamma: f64,
}

impl QTable {
    pub fn new(num_states: usize, num_actions: usize, alpha: f64, gamma: f64) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::domain("Q-table needs at least one state and action"));
        }
        if !(0.0..=1.0).contains(&alpha) || !(0.0..=1.0).contains(&gamma) {
            return Err(Error::domain("alpha and gamma must lie in [0, 1]"));
        }
        Ok(Self { num_states, num_actions, values: vec![0.0; num_states * num_actions], alpha, gamma })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.num_actions + a] = v;
    }

    fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn max_value(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Highest-valued action; ties go to the lowest index.
    pub fn greedy(&self, s: usize) -> usize {
        let row = self.row(s);
        let mut best = 0;
        for (a, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn epsilon_greedy<R: Rng + ?Sized>(&self, s: usize, epsilon: f64, rng: &mut R) -> usize {
        if rng.random::<f64>() < epsilon {
            rng.random_range(0..self.num_actions)
        } else {
            self.greedy(s)
        }
    }
}

/// `Q(s,a) += alpha (r + gamma max_a' Q(s',a') - Q(s,a))`.
pub fn q_update(table: &mut QTable, s: usize, a: usize, r: f64, s_next: usize) -> Result<()> {
    if s >= table.num_states || s_next >= table.num_states || a >= table.num_actions {
        return Err(Error::domain("state or action index out of range"));
    }
    let target = r + table.gamma * table.max_value(s_next);
    let q = table.get(s, a);
    let updated = q + table.alpha * (target - q);
    if !updated.is_finite() {
        return Err(Error::NonFinite("Q-value".into()));
    }
    table.set(s, a, updated);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QLearningConfig {
    /// Grid points per knob across the raw action range.
    pub action_levels: usize,
    /// Bins per normalized state feature.
    pub state_bins: usize,
    pub epsilon: f64,
    pub epsilon_decay: f64,
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for QLearningConfig {
    fn default() -> Self {
        Self { action_levels: 5, state_bins: 4, epsilon: 0.1, epsilon_decay: 0.9995, alpha: 0.1, gamma: 0.9 }
    }
}

/// Bin of a value in `[0, 1]`; values outside are clamped to the end bins.
pub fn bin_index(x: f64, bins: usize) -> usize {
    ((x.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1)
}

/// Raw action value of grid level `i` among `levels` points spanning `[-1, 1]`.
pub fn grid_value(i: usize, levels: usize) -> f64 {
    if levels == 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (levels - 1) as f64
    }
}

/// Independent table per chain over that chain's features and knobs, all
/// trained on the shared server reward.
#[derive(Debug, Clone)]
pub struct QLearningScheduler {
    cfg: QLearningConfig,
    scenario: Scenario,
    tables: Vec<QTable>,
    epsilon: f64,
    explore: bool,
    last: Option<(Vec<usize>, Vec<usize>)>,
}

impl QLearningScheduler {
    pub fn new(scenario: &Scenario, cfg: QLearningConfig) -> Result<Self> {
        if cfg.action_levels < 2 || cfg.state_bins < 1 {
            return Err(Error::Config("qlearning needs at least 2 action levels and 1 state bin".into()));
        }
        let num_states = cfg.state_bins.pow(FEATURES_PER_CHAIN as u32);
        let num_actions = cfg.action_levels.pow(KNOBS_PER_CHAIN as u32);
        let tables = (0..scenario.num_chains())
            .map(|_| QTable::new(num_states, num_actions, cfg.alpha, cfg.gamma))
            .collect::<Result<_>>()?;
        Ok(Self { epsilon: cfg.epsilon, cfg, scenario: scenario.clone(), tables, explore: true, last: None })
    }

    pub fn tables(&self) -> &[QTable] {
        &self.tables
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn state_indices(&self, obs: &[ChainObservation]) -> Vec<usize> {
        self.scenario
            .normalize(obs)
            .chunks_exact(FEATURES_PER_CHAIN)
            .map(|f| f.iter().fold(0, |acc, &x| acc * self.cfg.state_bins + bin_index(x, self.cfg.state_bins)))
            .collect()
    }

    /// Raw action vector for one chain's action index.
    pub fn decode_action(&self, mut a: usize) -> [f64; KNOBS_PER_CHAIN] {
        let k = self.cfg.action_levels;
        let mut raw = [0.0; KNOBS_PER_CHAIN];
        for slot in raw.iter_mut().rev() {
            *slot = grid_value(a % k, k);
            a /= k;
        }
        raw
    }
}

impl Scheduler for QLearningScheduler {
    fn name(&self) -> &'static str {
        "qlearning"
    }

    fn act(&mut self, obs: &[ChainObservation], rng: &mut dyn RngCore) -> Result<ResourceAllocation> {
        let states = self.state_indices(obs);
        let eps = if self.explore { self.epsilon } else { 0.0 };
        let actions: Vec<usize> =
            states.iter().zip(&self.tables).map(|(&s, t)| t.epsilon_greedy(s, eps, rng)).collect();
        let raw: Vec<f64> = actions.iter().flat_map(|&a| self.decode_action(a)).collect();
        self.last = Some((states, actions));
        ResourceAllocation::from_raw_action(&raw, &self.scenario.ranges)
    }

    fn feedback(&mut self, outcome: &StepOutcome) {
        let Some((states, actions)) = self.last.take() else { return };
        if !self.explore {
            return;
        }
        let next = self.state_indices(&outcome.observations);
        for (i, table) in self.tables.iter_mut().enumerate() {
            // A non-finite reward leaves the table as it was.
            let _ = q_update(table, states[i], actions[i], outcome.reward, next[i]);
        }
        self.epsilon *= self.cfg.epsilon_decay;
    }

    fn set_explore(&mut self, explore: bool) {
        self.explore = explore;
    }
}

// ---------------------------------------------------------------------------
// EE-Pstate

/// Holt double exponential smoothing of the arrival rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesPredictor {
    pub alpha: f64,
    pub beta: f64,
    level: Option<f64>,
    trend: f64,
}

impl DesPredictor {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) || !(0.0..1.0).contains(&beta) {
            return Err(Error::domain("smoothing factors need 0 < alpha < 1 and 0 <= beta < 1"));
        }
        Ok(Self { alpha, beta, level: None, trend: 0.0 })
    }

    pub fn level(&self) -> Option<f64> {
        self.level
    }

    pub fn trend(&self) -> f64 {
        self.trend
    }

    /// Absorb one observation and return the one-step-ahead forecast.
    pub fn observe(&mut self, x: f64) -> f64 {
        match self.level {
            None => {
                self.level = Some(x);
                self.trend = 0.0;
            }
            Some(prev) => {
                let s = self.alpha * x + (1.0 - self.alpha) * (prev + self.trend);
                self.trend = self.beta * (s - prev) + (1.0 - self.beta) * self.trend;
                self.level = Some(s);
            }
        }
        self.forecast()
    }

    pub fn forecast(&self) -> f64 {
        self.level.unwrap_or(0.0) + self.trend
    }
}

/// Feed `observed_rate` to the predictor and pick the lowest frequency level
/// whose capacity covers the forecast, or the top level when none does.
pub fn ee_pstate_step(predictor: &mut DesPredictor, observed_rate: f64, level_capacities: &[f64]) -> Result<usize> {
    if !(observed_rate >= 0.0 && observed_rate.is_finite()) {
        return Err(Error::domain("observed rate must be finite and nonnegative"));
    }
    if level_capacities.is_empty() {
        return Err(Error::domain("no frequency levels"));
    }
    let forecast = predictor.observe(observed_rate);
    Ok(level_capacities.iter().position(|&c| c >= forecast).unwrap_or(level_capacities.len() - 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EePstateConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for EePstateConfig {
    fn default() -> Self {
        Self { alpha: 0.5, beta: 0.3 }
    }
}

/// Static knobs with per-chain frequency chosen from predicted traffic.
#[derive(Debug, Clone)]
pub struct EePstateScheduler {
    alloc: ResourceAllocation,
    predictors: Vec<DesPredictor>,
    /// Per chain, processing capacity at each frequency level.
    capacities: Vec<Vec<f64>>,
    freq_levels: Vec<f64>,
}

impl EePstateScheduler {
    pub fn new(scenario: &Scenario, cfg: EePstateConfig) -> Result<Self> {
        let ranges = &scenario.ranges;
        let alloc = static_allocation(scenario.num_chains(), ranges);
        let mut capacities = Vec::with_capacity(alloc.len());
        for (chain, flow) in alloc.chains.iter().zip(&scenario.flows) {
            let per_level = ranges
                .freq_levels
                .iter()
                .map(|&f| {
                    let c = ChainAllocation { freq_hz: f, ..*chain };
                    let m = cache_miss_rate(&c, flow, ranges, &scenario.constants)?;
                    Ok(capacity_pps(&c, flow, m, &scenario.constants).min(flow.line_rate_pps(ranges)))
                })
                .collect::<Result<Vec<f64>>>()?;
            capacities.push(per_level);
        }
        let predictors = vec![DesPredictor::new(cfg.alpha, cfg.beta)?; alloc.len()];
        Ok(Self { alloc, predictors, capacities, freq_levels: ranges.freq_levels.clone() })
    }
}

impl Scheduler for EePstateScheduler {
    fn name(&self) -> &'static str {
        "ee_pstate"
    }

    fn act(&mut self, obs: &[ChainObservation], _rng: &mut dyn RngCore) -> Result<ResourceAllocation> {
        if obs.len() != self.alloc.len() {
            return Err(Error::Dimension { expected: self.alloc.len(), got: obs.len() });
        }
        for (i, o) in obs.iter().enumerate() {
            let idx = ee_pstate_step(&mut self.predictors[i], o.arrival_rate, &self.capacities[i])?;
            self.alloc.chains[i].freq_hz = self.freq_levels[idx];
        }
        Ok(self.alloc.clone())
    }
}

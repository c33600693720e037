use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{EePstateConfig, HeuristicConfig, QLearningConfig};
use crate::ddpg::AgentConfig;
use crate::error::{Error, Result};
use crate::replay::ReplayConfig;
use crate::simenv::Scenario;
use crate::sla::{SlaObjective, SlaSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    Ddpg,
    Heuristic,
    Qlearning,
    EePstate,
    StaticBaseline,
}

impl SchedulerKind {
    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::Ddpg => "ddpg",
            SchedulerKind::Heuristic => "heuristic",
            SchedulerKind::Qlearning => "qlearning",
            SchedulerKind::EePstate => "ee_pstate",
            SchedulerKind::StaticBaseline => "static_baseline",
        }
    }
}

/// Loop sizes and the actor/learner schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Environment steps summed over all actors.
    pub total_steps: u64,
    pub num_actors: usize,
    /// Single-threaded round-robin of actors and learner.
    pub deterministic: bool,
    /// Greedy evaluation and checkpoint period in environment steps; 0 disables.
    pub eval_every: u64,
    /// Length of the greedy evaluation window.
    pub eval_steps: usize,
    pub episode_len: u64,
    /// Per-actor steps with uniformly random actions before the policy takes over.
    pub warmup_steps: u64,
    /// Replay size at which the learner starts updating.
    pub learning_starts: usize,
    /// Learner updates per environment step.
    pub updates_per_step: usize,
    pub flush_every: usize,
    pub refresh_every: u64,
    /// Learner steps between replay evictions; 0 disables.
    pub evict_every: u64,
    pub evict_keep: f64,
    /// Learner steps between published parameter snapshots.
    pub publish_every: u64,
    /// Learner steps between replay statistic rows.
    pub stats_every: u64,
    /// Divisor applied to rewards before they reach the learner; derived from the SLA when absent.
    pub reward_scale: Option<f64>,
    /// Learning rates decay linearly to this fraction of their initial value by the last update.
    pub lr_final_fraction: f64,
    /// Return the actor with the best validation reward among the periodic
    /// evaluations and the last iterate, instead of the last iterate alone.
    pub keep_best: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            total_steps: 50_000,
            num_actors: 1,
            deterministic: true,
            eval_every: 10_000,
            eval_steps: 1000,
            episode_len: 200,
            warmup_steps: 1000,
            learning_starts: 1000,
            updates_per_step: 1,
            flush_every: 100,
            refresh_every: 200,
            evict_every: 10_000,
            evict_keep: 0.9,
            publish_every: 1,
            stats_every: 1000,
            reward_scale: None,
            lr_final_fraction: 1.0,
            keep_best: true,
        }
    }
}

/// One-knob micro-benchmark settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// DMA ring held while sweeping other knobs; the static default when absent.
    pub dma: Option<u32>,
    /// Batch held while sweeping other knobs; the static default when absent.
    pub batch: Option<u32>,
    /// Intervals averaged per sweep value.
    pub steps: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { dma: None, batch: None, steps: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub sla: SlaObjective,
    pub scheduler: SchedulerKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub replay: ReplayConfig,
    #[serde(default)]
    pub heuristic: HeuristicConfig,
    #[serde(default)]
    pub qlearning: QLearningConfig,
    #[serde(default)]
    pub ee_pstate: EePstateConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario, sla: SlaObjective, scheduler: SchedulerKind) -> Self {
        Self {
            scenario,
            sla,
            scheduler,
            seed: 0,
            output_dir: None,
            training: TrainingConfig::default(),
            agent: AgentConfig::default(),
            replay: ReplayConfig::default(),
            heuristic: HeuristicConfig::default(),
            qlearning: QLearningConfig::default(),
            ee_pstate: EePstateConfig::default(),
            bench: BenchConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        self.scenario.validate().map_err(cfg_err)?;
        self.sla_spec().map_err(cfg_err)?;
        self.agent.validate()?;
        let t = &self.training;
        if t.total_steps == 0 {
            return Err(Error::Config("total_steps must be positive".into()));
        }
        if t.num_actors == 0 {
            return Err(Error::Config("num_actors must be at least 1".into()));
        }
        if t.episode_len == 0 || t.flush_every == 0 || t.refresh_every == 0 || t.publish_every == 0 {
            return Err(Error::Config("episode_len, flush_every, refresh_every and publish_every must be positive".into()));
        }
        if !(t.evict_keep > 0.0 && t.evict_keep <= 1.0) {
            return Err(Error::Config("evict_keep must lie in (0, 1]".into()));
        }
        if !(t.lr_final_fraction > 0.0 && t.lr_final_fraction <= 1.0) {
            return Err(Error::Config("lr_final_fraction must lie in (0, 1]".into()));
        }
        if let Some(s) = t.reward_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config("reward_scale must be positive".into()));
            }
        }
        if self.replay.capacity < self.agent.batch_size {
            return Err(Error::Config("replay capacity is smaller than the batch size".into()));
        }
        if self.bench.steps == 0 {
            return Err(Error::Config("bench.steps must be positive".into()));
        }
        Ok(())
    }

    /// The SLA with its energy normalizer taken from the scenario.
    pub fn sla_spec(&self) -> Result<SlaSpec> {
        SlaSpec::new(self.sla, self.scenario.max_interval_energy())
    }

    /// Divisor that brings rewards of the configured SLA to order one.
    pub fn reward_scale(&self) -> f64 {
        if let Some(s) = self.training.reward_scale {
            return s;
        }
        let sc = &self.scenario;
        let t_max = sc.line_rate_gbps() * sc.num_chains() as f64;
        match self.sla {
            SlaObjective::MaxThroughput { .. } => t_max,
            SlaObjective::MinEnergy { .. } => 1.0,
            SlaObjective::EnergyEfficiency => t_max / (sc.power.p_idle * sc.dt / 1000.0),
        }
    }

    /// Seed of the environment driven by actor `i`.
    pub fn actor_seed(&self, i: usize) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1 + i as u64)
    }

    /// Seed of greedy evaluation environments.
    pub fn eval_seed(&self) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xE7A1)
    }

    /// Environment seed of the periodic evaluations used for model selection.
    pub fn validation_seed(&self) -> u64 {
        self.seed.wrapping_mul(0xD1B5_4A32_D192_ED03).wrapping_add(0x7A11)
    }
}

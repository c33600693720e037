use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::Scheduler;
use crate::ddpg::{policy_action, Agent};
use crate::error::{Error, Result};
use crate::metrics::{rows_for_step, step_totals, summarize, MetricsRow, WindowSummary};
use crate::nn::Mlp;
use crate::simenv::{ChainObservation, ResourceAllocation, Scenario, SimEnv};

use super::config::ExperimentConfig;

/// A trained actor network driving the environment.
#[derive(Debug, Clone)]
pub struct DdpgPolicy {
    actor: Mlp,
    scenario: Scenario,
}

impl DdpgPolicy {
    pub fn new(actor: Mlp, scenario: Scenario) -> Result<Self> {
        if actor.input_dim() != scenario.state_dim() {
            return Err(Error::Dimension { expected: scenario.state_dim(), got: actor.input_dim() });
        }
        if actor.output_dim() != scenario.action_dim() {
            return Err(Error::Dimension { expected: scenario.action_dim(), got: actor.output_dim() });
        }
        Ok(Self { actor, scenario })
    }
}

impl Scheduler for DdpgPolicy {
    fn name(&self) -> &'static str {
        "ddpg"
    }

    fn act(&mut self, obs: &[ChainObservation], rng: &mut dyn RngCore) -> Result<ResourceAllocation> {
        let state = self.scenario.normalize(obs);
        let raw = policy_action(&self.actor, &state, None, rng)?;
        ResourceAllocation::from_raw_action(&raw, &self.scenario.ranges)
    }
}

/// Drive `env` with `sched` for `steps` intervals, appending one row per chain.
///
/// Returns the observations after the last interval. Rows are numbered from
/// `first_step`. A non-finite reward aborts the run.
pub fn run_scheduler(
    sched: &mut dyn Scheduler,
    env: &mut SimEnv,
    mut obs: Vec<ChainObservation>,
    steps: u64,
    first_step: u64,
    rng: &mut dyn RngCore,
    rows: &mut Vec<MetricsRow>,
) -> Result<Vec<ChainObservation>> {
    for k in 0..steps {
        let alloc = sched.act(&obs, rng)?;
        let outcome = env.step_default(&alloc)?;
        if !outcome.reward.is_finite() {
            return Err(Error::NonFinite(format!("reward at step {}", first_step + k)));
        }
        rows.extend(rows_for_step(first_step + k, &alloc.chains, &outcome));
        sched.feedback(&outcome);
        obs = outcome.observations;
    }
    Ok(obs)
}

/// Mean and spread of per-episode summaries.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub steps: usize,
    pub mean_throughput_gbps: f64,
    pub std_throughput_gbps: f64,
    pub mean_energy_j: f64,
    pub std_energy_j: f64,
    pub total_energy_j: f64,
    /// Efficiency of the pooled means, Gb/s per kJ.
    pub efficiency: f64,
    pub std_efficiency: f64,
    pub violation_rate: f64,
    pub std_violation_rate: f64,
    pub mean_reward: f64,
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Summarize rows split into consecutive episodes of `episode_len` steps.
pub fn summarize_episodes(rows: &[MetricsRow], episode_len: usize) -> EvalSummary {
    let totals = step_totals(rows);
    let pooled = summarize(&totals);
    let episodes: Vec<WindowSummary> = totals.chunks(episode_len.max(1)).map(summarize).collect();
    let (_, std_t) = mean_std(episodes.iter().map(|e| e.mean_throughput_gbps));
    let (_, std_e) = mean_std(episodes.iter().map(|e| e.mean_energy_j));
    let (_, std_l) = mean_std(episodes.iter().map(|e| e.efficiency));
    let (_, std_v) = mean_std(episodes.iter().map(|e| e.violation_rate));
    EvalSummary {
        episodes: episodes.len(),
        steps: pooled.steps,
        mean_throughput_gbps: pooled.mean_throughput_gbps,
        std_throughput_gbps: std_t,
        mean_energy_j: pooled.mean_energy_j,
        std_energy_j: std_e,
        total_energy_j: pooled.total_energy_j,
        efficiency: pooled.efficiency,
        std_efficiency: std_l,
        violation_rate: pooled.violation_rate,
        std_violation_rate: std_v,
        mean_reward: pooled.mean_reward,
    }
}

/// Run a scheduler greedily on a fresh evaluation environment.
pub fn evaluate_scheduler(
    sched: &mut dyn Scheduler,
    config: &ExperimentConfig,
    steps: u64,
) -> Result<(Vec<MetricsRow>, EvalSummary)> {
    evaluate_scheduler_seeded(sched, config, steps, config.eval_seed())
}

/// Greedy run on a fresh environment seeded with `seed`.
pub fn evaluate_scheduler_seeded(
    sched: &mut dyn Scheduler,
    config: &ExperimentConfig,
    steps: u64,
    seed: u64,
) -> Result<(Vec<MetricsRow>, EvalSummary)> {
    let mut env = SimEnv::new(config.scenario.clone(), Some(config.sla_spec()?), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sched.set_explore(false);
    let obs = env.initial_observations();
    let mut rows = Vec::with_capacity(steps as usize * config.scenario.num_chains());
    run_scheduler(sched, &mut env, obs, steps, 0, &mut rng, &mut rows)?;
    let summary = summarize_episodes(&rows, config.training.episode_len as usize);
    Ok((rows, summary))
}

/// Greedy evaluation of a saved DDPG checkpoint over whole episodes.
pub fn evaluate(checkpoint: impl AsRef<Path>, config: &ExperimentConfig, episodes: usize) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(Error::domain("episodes must be positive"));
    }
    let agent = Agent::load(checkpoint)?;
    let mut policy = DdpgPolicy::new(agent.actor, config.scenario.clone())?;
    let steps = episodes as u64 * config.training.episode_len;
    Ok(evaluate_scheduler(&mut policy, config, steps)?.1)
}

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    EePstateScheduler, HeuristicScheduler, QLearningScheduler, Scheduler, StaticScheduler,
};
use crate::ddpg::{policy_action, Agent, GaussianNoise, TrainStats};
use crate::error::{Error, Result};
use crate::metrics::{rows_for_step, step_totals, summarize, write_csv_file, MetricsRow, WindowSummary};
use crate::nn::Mlp;
use crate::replay::{LocalBuffer, ParamServer, PrioritizedBuffer, SharedReplay, Snapshot, Transition};
use crate::simenv::{ChainObservation, ResourceAllocation, SimEnv};

use super::config::{ExperimentConfig, SchedulerKind};
use super::eval::{evaluate_scheduler, evaluate_scheduler_seeded, run_scheduler, DdpgPolicy, EvalSummary};

/// Periodic greedy evaluation during training, on the validation seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub mean_throughput_gbps: f64,
    pub mean_energy_j: f64,
    pub efficiency: f64,
    pub violation_rate: f64,
    pub mean_reward: f64,
}

impl EvalRecord {
    fn new(step: u64, s: &EvalSummary) -> Self {
        Self {
            step,
            mean_throughput_gbps: s.mean_throughput_gbps,
            mean_energy_j: s.mean_energy_j,
            efficiency: s.efficiency,
            violation_rate: s.violation_rate,
            mean_reward: s.mean_reward,
        }
    }
}

/// Replay and learner counters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayStatsRow {
    pub learner_step: u64,
    pub size: usize,
    pub root_priority: f64,
    pub evictions: u64,
    pub flushes: u64,
    pub stored: u64,
    pub beta: f64,
    pub critic_loss: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunMetrics {
    /// Training rows, one per chain per environment step, ordered by step.
    pub rows: Vec<MetricsRow>,
    pub evals: Vec<EvalRecord>,
    pub replay_stats: Vec<ReplayStatsRow>,
    /// Last `eval_steps` training steps.
    pub training_window: WindowSummary,
    /// Rows of the greedy evaluation run after training.
    pub final_rows: Vec<MetricsRow>,
    /// Greedy evaluation of the returned policy.
    pub final_eval: EvalSummary,
    /// Training step at which the returned policy was taken.
    pub selected_step: u64,
    /// Greedy evaluation of the policy as it stood after the last update.
    pub last_iterate_eval: EvalSummary,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub metrics: RunMetrics,
    /// The trained agent when the scheduler is DDPG.
    pub agent: Option<Agent>,
    /// Where the final checkpoint was written, if anywhere.
    pub checkpoint: Option<PathBuf>,
}

pub fn make_scheduler(config: &ExperimentConfig) -> Result<Box<dyn Scheduler>> {
    let sc = &config.scenario;
    Ok(match config.scheduler {
        SchedulerKind::StaticBaseline => Box::new(StaticScheduler::new(sc)),
        SchedulerKind::Heuristic => Box::new(HeuristicScheduler::new(sc, config.heuristic.clone())?),
        SchedulerKind::Qlearning => Box::new(QLearningScheduler::new(sc, config.qlearning.clone())?),
        SchedulerKind::EePstate => Box::new(EePstateScheduler::new(sc, config.ee_pstate.clone())?),
        SchedulerKind::Ddpg => return Err(Error::Config("ddpg is trained by the actor/learner loop".into())),
    })
}

/// Train the configured scheduler and write artifacts under `output_dir` when set.
pub fn train(config: &ExperimentConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let out = config.output_dir.clone();
    if let Some(dir) = &out {
        std::fs::create_dir_all(dir)?;
    }
    let result = match config.scheduler {
        SchedulerKind::Ddpg => train_ddpg(config, out.as_deref()),
        _ => train_baseline(config),
    };
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            if let (Some(dir), Error::NonFinite(_)) = (&out, &e) {
                std::fs::write(dir.join("abort.txt"), format!("run aborted: {e}\n"))?;
            }
            return Err(e);
        }
    };
    if let Some(dir) = &out {
        write_outputs(dir, &outcome.metrics)?;
    }
    Ok(outcome)
}

fn write_outputs(dir: &Path, m: &RunMetrics) -> Result<()> {
    write_csv_file(dir.join("metrics.csv"), &m.rows)?;
    write_csv_file(dir.join("eval_metrics.csv"), &m.final_rows)?;
    write_csv_file(dir.join("evals.csv"), &m.evals)?;
    write_csv_file(dir.join("replay_stats.csv"), &m.replay_stats)?;
    let report = FinalReport {
        selected_step: m.selected_step,
        final_eval: m.final_eval,
        last_iterate_eval: m.last_iterate_eval,
        training_window: m.training_window,
    };
    let text = toml::to_string(&report)
        .map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(dir.join("summary.toml"), text)?;
    Ok(())
}

#[derive(Serialize)]
struct FinalReport {
    selected_step: u64,
    final_eval: EvalSummary,
    last_iterate_eval: EvalSummary,
    training_window: WindowSummary,
}

fn training_window(rows: &[MetricsRow], steps: usize) -> WindowSummary {
    let totals = step_totals(rows);
    summarize(&totals[totals.len().saturating_sub(steps)..])
}

fn train_baseline(config: &ExperimentConfig) -> Result<TrainOutcome> {
    let mut sched = make_scheduler(config)?;
    let mut env = SimEnv::new(config.scenario.clone(), Some(config.sla_spec()?), config.actor_seed(0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.actor_seed(0));
    let total = config.training.total_steps;
    let mut rows = Vec::with_capacity(total as usize * config.scenario.num_chains());
    let obs = env.initial_observations();
    run_scheduler(sched.as_mut(), &mut env, obs, total, 0, &mut rng, &mut rows)?;
    let (final_rows, final_eval) = evaluate_scheduler(sched.as_mut(), config, config.training.eval_steps as u64)?;
    let metrics = RunMetrics {
        training_window: training_window(&rows, config.training.eval_steps),
        rows,
        final_rows,
        final_eval,
        selected_step: total,
        last_iterate_eval: final_eval,
        ..Default::default()
    };
    Ok(TrainOutcome { metrics, agent: None, checkpoint: None })
}

/// One NF-controller loop: its own environment, policy snapshot and staging buffer.
struct ActorWorker {
    env: SimEnv,
    rng: ChaCha8Rng,
    obs: Vec<ChainObservation>,
    local: LocalBuffer,
    params: Arc<Snapshot<Mlp>>,
    noise: GaussianNoise,
    steps: u64,
}

impl ActorWorker {
    fn new(config: &ExperimentConfig, i: usize, params: Arc<Snapshot<Mlp>>) -> Result<Self> {
        let seed = config.actor_seed(i);
        let env = SimEnv::new(config.scenario.clone(), Some(config.sla_spec()?), seed)?;
        let obs = env.initial_observations();
        Ok(Self {
            env,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0xAC70),
            obs,
            local: LocalBuffer::new(),
            params,
            noise: GaussianNoise::new(config.agent.sigma0, config.agent.sigma_decay),
            steps: 0,
        })
    }

    fn step(&mut self, config: &ExperimentConfig, scale: f64, global_step: u64) -> Result<Vec<MetricsRow>> {
        let sc = self.env.scenario();
        let state = sc.normalize(&self.obs);
        let action = if self.steps < config.training.warmup_steps {
            (0..sc.action_dim()).map(|_| self.rng.random_range(-1.0..=1.0)).collect()
        } else {
            policy_action(&self.params.value, &state, Some(&self.noise), &mut self.rng)?
        };
        let alloc = ResourceAllocation::from_raw_action(&action, &sc.ranges)?;
        let outcome = self.env.step_default(&alloc)?;
        if !outcome.reward.is_finite() {
            return Err(Error::NonFinite(format!("reward at step {global_step}")));
        }
        let next_state = self.env.scenario().normalize(&outcome.observations);
        self.steps += 1;
        let terminal = self.steps.is_multiple_of(config.training.episode_len);
        if terminal {
            self.noise.end_episode();
        }
        self.local.push(Transition { state, action, reward: outcome.reward / scale, next_state, terminal });
        let rows = rows_for_step(global_step, &alloc.chains, &outcome);
        self.obs = outcome.observations;
        Ok(rows)
    }
}

/// Central learner bookkeeping around the agent.
struct Learner {
    agent: Agent,
    rng: ChaCha8Rng,
    steps: u64,
    expected_steps: u64,
    last_loss: f64,
}

impl Learner {
    fn threshold(config: &ExperimentConfig) -> usize {
        config.training.learning_starts.max(config.agent.batch_size)
    }

    fn sample(&mut self, config: &ExperimentConfig, replay: &mut PrioritizedBuffer) -> Result<crate::replay::Minibatch> {
        let progress = (self.steps as f64 / self.expected_steps.max(1) as f64).min(1.0);
        replay.anneal_beta(progress);
        self.agent.set_lr_scale(1.0 - (1.0 - config.training.lr_final_fraction) * progress);
        replay.sample(self.agent.config().batch_size, &mut self.rng)
    }

    fn finish(&mut self, config: &ExperimentConfig, replay: &mut PrioritizedBuffer, ids: &[crate::replay::SampleId], stats: &TrainStats) -> Option<ReplayStatsRow> {
        replay.update_priorities(ids, &stats.td_errors);
        self.steps += 1;
        self.last_loss = stats.critic_loss;
        let t = &config.training;
        if t.evict_every > 0 && self.steps.is_multiple_of(t.evict_every) {
            replay.evict_old(t.evict_keep);
        }
        (t.stats_every > 0 && self.steps.is_multiple_of(t.stats_every)).then(|| {
            let s = replay.stats();
            ReplayStatsRow {
                learner_step: self.steps,
                size: s.size,
                root_priority: s.root_priority,
                evictions: s.evictions,
                flushes: s.flushes,
                stored: s.stored,
                beta: replay.beta(),
                critic_loss: stats.critic_loss,
            }
        })
    }
}

/// Best policy seen so far by validation reward.
struct Selection {
    score: f64,
    step: u64,
    agent: Agent,
}

fn validate_policy(config: &ExperimentConfig, agent: &Agent) -> Result<EvalSummary> {
    let mut policy = DdpgPolicy::new(agent.actor.clone(), config.scenario.clone())?;
    let steps = config.training.eval_steps as u64;
    Ok(evaluate_scheduler_seeded(&mut policy, config, steps, config.validation_seed())?.1)
}

/// Later candidates win ties.
fn consider(best: &mut Option<Selection>, score: f64, step: u64, agent: &Agent) {
    if best.as_ref().is_none_or(|b| score >= b.score) {
        *best = Some(Selection { score, step, agent: agent.clone() });
    }
}

fn periodic_eval(
    config: &ExperimentConfig,
    agent: &Agent,
    step: u64,
    out: Option<&Path>,
    best: &mut Option<Selection>,
) -> Result<EvalRecord> {
    let summary = validate_policy(config, agent)?;
    if config.training.keep_best {
        consider(best, summary.mean_reward, step, agent);
    }
    if let Some(dir) = out {
        agent.save(dir.join("checkpoint"))?;
    }
    Ok(EvalRecord::new(step, &summary))
}

fn train_ddpg(config: &ExperimentConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    let sc = &config.scenario;
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let agent = Agent::new(sc.state_dim(), sc.action_dim(), config.agent.clone(), &mut init_rng)?;
    let t = &config.training;
    let expected_steps = t.total_steps.saturating_sub(Learner::threshold(config) as u64) * t.updates_per_step as u64;
    let learner = Learner { agent, rng: init_rng, steps: 0, expected_steps, last_loss: 0.0 };
    let replay = PrioritizedBuffer::new(config.replay)?;
    let mut best = None;
    let (learner, mut metrics) = if t.deterministic {
        run_deterministic(config, learner, replay, out, &mut best)?
    } else {
        run_parallel(config, learner, replay, out, &mut best)?
    };
    let last = learner.agent;
    let mut last_policy = DdpgPolicy::new(last.actor.clone(), sc.clone())?;
    metrics.last_iterate_eval = evaluate_scheduler(&mut last_policy, config, t.eval_steps as u64)?.1;
    if t.keep_best {
        consider(&mut best, validate_policy(config, &last)?.mean_reward, t.total_steps, &last);
    }
    let (agent, selected_step) = match best {
        Some(b) => (b.agent, b.step),
        None => (last, t.total_steps),
    };
    let mut policy = DdpgPolicy::new(agent.actor.clone(), sc.clone())?;
    let (final_rows, final_eval) = evaluate_scheduler(&mut policy, config, t.eval_steps as u64)?;
    metrics.training_window = training_window(&metrics.rows, t.eval_steps);
    metrics.final_rows = final_rows;
    metrics.final_eval = final_eval;
    metrics.selected_step = selected_step;
    let checkpoint = match out {
        Some(dir) => {
            let path = dir.join("checkpoint");
            agent.save(&path)?;
            Some(path)
        }
        None => None,
    };
    Ok(TrainOutcome { metrics, agent: Some(agent), checkpoint })
}

/// Actors and learner interleaved round-robin on the calling thread.
fn run_deterministic(
    config: &ExperimentConfig,
    mut learner: Learner,
    mut replay: PrioritizedBuffer,
    out: Option<&Path>,
    best: &mut Option<Selection>,
) -> Result<(Learner, RunMetrics)> {
    let t = &config.training;
    let scale = config.reward_scale();
    let server = ParamServer::new();
    server.publish(learner.agent.actor.clone());
    let mut actors = (0..t.num_actors)
        .map(|i| ActorWorker::new(config, i, server.fetch()?))
        .collect::<Result<Vec<_>>>()?;
    let mut m = RunMetrics { rows: Vec::with_capacity(t.total_steps as usize * config.scenario.num_chains()), ..Default::default() };
    let threshold = Learner::threshold(config);
    let mut step = 0;
    'outer: loop {
        for actor in actors.iter_mut() {
            if step >= t.total_steps {
                break 'outer;
            }
            m.rows.extend(actor.step(config, scale, step)?);
            step += 1;
            if actor.local.len() >= t.flush_every {
                actor.local.flush_into(&mut replay);
            }
            if replay.len() >= threshold {
                for _ in 0..t.updates_per_step {
                    let batch = learner.sample(config, &mut replay)?;
                    let stats = learner.agent.train_step(&batch)?;
                    if let Some(row) = learner.finish(config, &mut replay, &batch.ids, &stats) {
                        m.replay_stats.push(row);
                    }
                    if learner.steps.is_multiple_of(t.publish_every) {
                        server.publish(learner.agent.actor.clone());
                    }
                }
            }
            if actor.steps % t.refresh_every == 0 {
                actor.params = server.fetch()?;
            }
            if t.eval_every > 0 && step % t.eval_every == 0 {
                m.evals.push(periodic_eval(config, &learner.agent, step, out, best)?);
            }
        }
    }
    Ok((learner, m))
}

/// One thread per actor plus one learner thread sharing the replay and parameter server.
fn run_parallel(
    config: &ExperimentConfig,
    mut learner: Learner,
    replay: PrioritizedBuffer,
    out: Option<&Path>,
    best: &mut Option<Selection>,
) -> Result<(Learner, RunMetrics)> {
    let t = &config.training;
    let scale = config.reward_scale();
    let replay = SharedReplay::new(replay);
    let server = ParamServer::new();
    server.publish(learner.agent.actor.clone());
    let next_step = AtomicU64::new(0);
    let finished = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let first_error: Mutex<Option<Error>> = Mutex::new(None);
    let fail = |e: Error| {
        abort.store(true, Ordering::SeqCst);
        first_error.lock().get_or_insert(e);
    };
    let threshold = Learner::threshold(config);
    let max_updates = t.total_steps.saturating_mul(t.updates_per_step as u64);

    let mut rows = Vec::new();
    let mut evals = Vec::new();
    let mut replay_stats = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..t.num_actors)
            .map(|i| {
                let (replay, server, next_step, finished, abort, fail) = (&replay, &server, &next_step, &finished, &abort, &fail);
                scope.spawn(move || {
                    let mut rows = Vec::new();
                    let mut run = || -> Result<()> {
                        let mut actor = ActorWorker::new(config, i, server.fetch()?)?;
                        while !abort.load(Ordering::Relaxed) {
                            let step = next_step.fetch_add(1, Ordering::Relaxed);
                            if step >= t.total_steps {
                                break;
                            }
                            rows.extend(actor.step(config, scale, step)?);
                            if actor.local.len() >= t.flush_every {
                                actor.local.flush(replay);
                            }
                            if actor.steps % t.refresh_every == 0 {
                                actor.params = server.fetch()?;
                            }
                        }
                        actor.local.flush(replay);
                        Ok(())
                    };
                    if let Err(e) = run() {
                        fail(e);
                    }
                    finished.fetch_add(1, Ordering::SeqCst);
                    rows
                })
            })
            .collect();

        let mut next_eval = t.eval_every;
        while finished.load(Ordering::SeqCst) < t.num_actors && !abort.load(Ordering::Relaxed) {
            if t.eval_every > 0 && next_step.load(Ordering::Relaxed) >= next_eval {
                match periodic_eval(config, &learner.agent, next_eval, out, best) {
                    Ok(r) => evals.push(r),
                    Err(e) => fail(e),
                }
                next_eval += t.eval_every;
            }
            if learner.steps >= max_updates || replay.len() < threshold {
                std::thread::yield_now();
                continue;
            }
            let batch = match learner.sample(config, &mut replay.lock()) {
                Ok(b) => b,
                Err(e) => {
                    fail(e);
                    break;
                }
            };
            match learner.agent.train_step(&batch) {
                Ok(stats) => {
                    if let Some(row) = learner.finish(config, &mut replay.lock(), &batch.ids, &stats) {
                        replay_stats.push(row);
                    }
                    if learner.steps.is_multiple_of(t.publish_every) {
                        server.publish(learner.agent.actor.clone());
                    }
                }
                Err(e) => fail(e),
            }
        }
        for h in handles {
            rows.extend(h.join().expect("actor thread panicked"));
        }
    });
    if let Some(e) = first_error.into_inner() {
        return Err(e);
    }
    rows.sort_by_key(|r| (r.step, r.chain_id));
    Ok((learner, RunMetrics { rows, evals, replay_stats, ..Default::default() }))
}

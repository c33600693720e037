//! Deep deterministic policy gradient agent.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Mlp};
use crate::replay::Minibatch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    /// Initial exploration standard deviation.
    pub sigma0: f64,
    /// Multiplicative decay of sigma applied at every episode end.
    pub sigma_decay: f64,
    /// Mask the bootstrap term on terminal transitions.
    pub mask_terminal: bool,
    /// Weight of the mean squared pre-tanh actor output subtracted from the
    /// policy objective; keeps outputs away from saturation.
    pub preact_penalty: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            gamma: 0.99,
            tau: 0.005,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            batch_size: 64,
            sigma0: 0.3,
            sigma_decay: 0.999,
            mask_terminal: false,
            preact_penalty: 0.0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau {} outside (0, 1]", self.tau)));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.batch_size == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("batch size and hidden widths must be positive".into()));
        }
        if !(self.preact_penalty >= 0.0 && self.preact_penalty.is_finite()) {
            return Err(Error::Config("preact_penalty must be nonnegative".into()));
        }
        if !(self.sigma0 >= 0.0 && self.sigma_decay > 0.0 && self.sigma_decay <= 1.0) {
            return Err(Error::Config("invalid exploration schedule".into()));
        }
        Ok(())
    }
}

/// Zero-mean Gaussian exploration with per-episode multiplicative decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianNoise {
    pub sigma: f64,
    pub decay: f64,
}

impl GaussianNoise {
    pub fn new(sigma: f64, decay: f64) -> Self {
        Self { sigma, decay }
    }

    pub fn end_episode(&mut self) {
        self.sigma *= self.decay;
    }

    /// Add noise to an action and clamp it back into `[-1, 1]`.
    pub fn perturb<R: Rng + ?Sized>(&self, action: &mut [f64], rng: &mut R) {
        if self.sigma <= 0.0 {
            return;
        }
        let normal = Normal::new(0.0, self.sigma).expect("sigma is positive and finite");
        for a in action.iter_mut() {
            *a = (*a + normal.sample(rng)).clamp(-1.0, 1.0);
        }
    }
}

/// Deterministic policy output, optionally perturbed for exploration.
pub fn policy_action<R: Rng + ?Sized>(
    actor: &Mlp,
    state: &[f64],
    noise: Option<&GaussianNoise>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut a = actor.forward(state)?;
    if let Some(noise) = noise {
        noise.perturb(&mut a, rng);
    }
    Ok(a)
}

/// Anything that scores an action in a state and exposes `dQ/da`.
pub trait ActionValue {
    fn value_and_action_grad(&self, state: &[f64], action: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// An MLP critic over the concatenation `state || action`.
#[derive(Debug, Clone, Copy)]
pub struct CriticNet<'a> {
    pub net: &'a Mlp,
    pub state_dim: usize,
}

impl CriticNet<'_> {
    pub fn value(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        Ok(self.net.forward(&concat(state, action))?[0])
    }
}

impl ActionValue for CriticNet<'_> {
    fn value_and_action_grad(&self, state: &[f64], action: &[f64]) -> Result<(f64, Vec<f64>)> {
        let trace = self.net.trace(&concat(state, action))?;
        let q = trace.output()[0];
        let mut scratch = vec![0.0; self.net.num_params()];
        let grad = self.net.backward_trace(&trace, &[1.0], &mut scratch)?;
        Ok((q, grad[self.state_dim..].to_vec()))
    }
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

/// Objective `J = mean_i [Q(x_i, mu(x_i)) - c mean_k z_ik^2]` and its
/// gradient in the actor parameters, where `z_i` is the actor's output
/// pre-activation and `c` is `preact_penalty`.
///
/// The gradient chains `dQ/da` at `a = mu(x)` back through the actor; it is
/// an ascent direction.
pub fn policy_gradient<C: ActionValue>(
    actor: &Mlp,
    critic: &C,
    states: &[Vec<f64>],
    preact_penalty: f64,
) -> Result<(f64, Vec<f64>)> {
    if states.is_empty() {
        return Err(Error::domain("policy gradient over an empty batch"));
    }
    let n = states.len() as f64;
    let k = actor.output_dim() as f64;
    let slope = actor.output_activation();
    let mut grad = vec![0.0; actor.num_params()];
    let mut objective = 0.0;
    for s in states {
        let trace = actor.trace(s)?;
        let (q, dq_da) = critic.value_and_action_grad(s, trace.output())?;
        if preact_penalty == 0.0 {
            objective += q / n;
            let upstream: Vec<f64> = dq_da.iter().map(|g| g / n).collect();
            actor.backward_trace(&trace, &upstream, &mut grad)?;
            continue;
        }
        let z = actor.output_pre_activation(&trace);
        let penalty = preact_penalty * z.iter().map(|v| v * v).sum::<f64>() / k;
        objective += (q - penalty) / n;
        let pre: Vec<f64> = dq_da
            .iter()
            .zip(trace.output())
            .zip(&z)
            .map(|((g, &a), zi)| (g * slope.derivative_from_output(a) - 2.0 * preact_penalty * zi / k) / n)
            .collect();
        actor.backward_trace_pre(&trace, &pre, &mut grad)?;
    }
    Ok((objective, grad))
}

/// Outcome of one learner update.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainStats {
    /// Importance-weighted mean squared TD error before the update.
    pub critic_loss: f64,
    /// Per-sample `|y_i - Q(x_i, a_i)|`.
    pub td_errors: Vec<f64>,
    /// Policy objective before the update.
    pub actor_objective: f64,
}

#[derive(Debug, Clone)]
pub struct Agent {
    cfg: AgentConfig,
    state_dim: usize,
    action_dim: usize,
    pub actor: Mlp,
    pub critic: Mlp,
    pub target_actor: Mlp,
    pub target_critic: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
    pub noise: GaussianNoise,
    train_steps: u64,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, cfg: AgentConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut actor_sizes = vec![state_dim];
        actor_sizes.extend(&cfg.hidden);
        actor_sizes.push(action_dim);
        let mut critic_sizes = vec![state_dim + action_dim];
        critic_sizes.extend(&cfg.hidden);
        critic_sizes.push(1);
        let actor = Mlp::new(&actor_sizes, Activation::Relu, Activation::Tanh, rng)?;
        let critic = Mlp::new(&critic_sizes, Activation::Relu, Activation::Identity, rng)?;
        Self::from_networks(cfg, actor.clone(), critic.clone(), actor, critic)
    }

    pub fn from_networks(cfg: AgentConfig, actor: Mlp, critic: Mlp, target_actor: Mlp, target_critic: Mlp) -> Result<Self> {
        cfg.validate()?;
        let state_dim = actor.input_dim();
        let action_dim = actor.output_dim();
        if critic.input_dim() != state_dim + action_dim || critic.output_dim() != 1 {
            return Err(Error::Architecture("critic must map state || action to a scalar".into()));
        }
        if !actor.same_architecture(&target_actor) || !critic.same_architecture(&target_critic) {
            return Err(Error::Architecture("target networks must mirror the online networks".into()));
        }
        Ok(Self {
            actor_opt: Adam::new(actor.num_params(), cfg.actor_lr),
            critic_opt: Adam::new(critic.num_params(), cfg.critic_lr),
            noise: GaussianNoise::new(cfg.sigma0, cfg.sigma_decay),
            cfg,
            state_dim,
            action_dim,
            actor,
            critic,
            target_actor,
            target_critic,
            train_steps: 0,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    /// Multiply both configured learning rates by `scale` for subsequent steps.
    pub fn set_lr_scale(&mut self, scale: f64) {
        self.actor_opt.lr = self.cfg.actor_lr * scale;
        self.critic_opt.lr = self.cfg.critic_lr * scale;
    }

    pub fn critic_net(&self) -> CriticNet<'_> {
        CriticNet { net: &self.critic, state_dim: self.state_dim }
    }

    pub fn select_action<R: Rng + ?Sized>(&self, state: &[f64], explore: bool, rng: &mut R) -> Result<Vec<f64>> {
        policy_action(&self.actor, state, explore.then_some(&self.noise), rng)
    }

    /// Bootstrapped regression targets computed from the target networks.
    pub fn critic_targets(&self, batch: &Minibatch) -> Result<Vec<f64>> {
        let target_critic = CriticNet { net: &self.target_critic, state_dim: self.state_dim };
        batch
            .rewards
            .iter()
            .zip(&batch.next_states)
            .zip(&batch.terminal)
            .map(|((&r, next), &terminal)| {
                if terminal && self.cfg.mask_terminal {
                    return Ok(r);
                }
                let a_next = self.target_actor.forward(next)?;
                Ok(r + self.cfg.gamma * target_critic.value(next, &a_next)?)
            })
            .collect()
    }

    fn check_batch(&self, batch: &Minibatch) -> Result<()> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::domain("empty minibatch"));
        }
        for v in [batch.states.len(), batch.actions.len(), batch.next_states.len(), batch.terminal.len(), batch.weights.len()] {
            if v != n {
                return Err(Error::Dimension { expected: n, got: v });
            }
        }
        for (s, (a, ns)) in batch.states.iter().zip(batch.actions.iter().zip(&batch.next_states)) {
            if s.len() != self.state_dim || ns.len() != self.state_dim {
                return Err(Error::Dimension { expected: self.state_dim, got: s.len().min(ns.len()) });
            }
            if a.len() != self.action_dim {
                return Err(Error::Dimension { expected: self.action_dim, got: a.len() });
            }
        }
        Ok(())
    }

    /// Critic regression, policy ascent and soft target updates on one batch.
    ///
    /// Both gradients are computed before anything is modified, so a
    /// non-finite loss or gradient leaves all four networks untouched.
    pub fn train_step(&mut self, batch: &Minibatch) -> Result<TrainStats> {
        self.check_batch(batch)?;
        let n = batch.len() as f64;
        let targets = self.critic_targets(batch)?;

        let mut critic_grad = vec![0.0; self.critic.num_params()];
        let mut loss = 0.0;
        let mut td_errors = Vec::with_capacity(batch.len());
        for i in 0..batch.len() {
            let trace = self.critic.trace(&concat(&batch.states[i], &batch.actions[i]))?;
            let td = targets[i] - trace.output()[0];
            let w = batch.weights[i];
            loss += w * td * td / n;
            td_errors.push(td.abs());
            self.critic.backward_trace(&trace, &[-2.0 * w * td / n], &mut critic_grad)?;
        }
        let (objective, ascent) = policy_gradient(&self.actor, &self.critic_net(), &batch.states, self.cfg.preact_penalty)?;
        if !loss.is_finite() || !objective.is_finite() {
            return Err(Error::NonFinite("critic loss".into()));
        }
        if critic_grad.iter().chain(&ascent).any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        let descent: Vec<f64> = ascent.iter().map(|g| -g).collect();
        self.critic_opt.apply_update(&mut self.critic, &critic_grad)?;
        self.actor_opt.apply_update(&mut self.actor, &descent)?;
        self.target_critic.soft_update(&self.critic, self.cfg.tau)?;
        self.target_actor.soft_update(&self.actor, self.cfg.tau)?;
        self.train_steps += 1;
        Ok(TrainStats { critic_loss: loss, td_errors, actor_objective: objective })
    }

    /// Write the four networks and a manifest into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.actor.save(dir.join("actor.bin"))?;
        self.critic.save(dir.join("critic.bin"))?;
        self.target_actor.save(dir.join("target_actor.bin"))?;
        self.target_critic.save(dir.join("target_critic.bin"))?;
        let manifest = Manifest {
            format: 1,
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            train_steps: self.train_steps,
            sigma: self.noise.sigma,
            agent: self.cfg.clone(),
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(dir.join("manifest.toml"), text)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let text = std::fs::read_to_string(dir.join("manifest.toml"))?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        if manifest.format != 1 {
            return Err(Error::Format(format!("unsupported checkpoint format {}", manifest.format)));
        }
        let mut agent = Self::from_networks(
            manifest.agent,
            Mlp::load(dir.join("actor.bin"))?,
            Mlp::load(dir.join("critic.bin"))?,
            Mlp::load(dir.join("target_actor.bin"))?,
            Mlp::load(dir.join("target_critic.bin"))?,
        )?;
        if agent.state_dim != manifest.state_dim || agent.action_dim != manifest.action_dim {
            return Err(Error::Format("manifest dimensions disagree with the networks".into()));
        }
        agent.train_steps = manifest.train_steps;
        agent.noise.sigma = manifest.sigma;
        Ok(agent)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    state_dim: usize,
    action_dim: usize,
    train_steps: u64,
    sigma: f64,
    agent: AgentConfig,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replay::Transition;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn agent(cfg: AgentConfig) -> Agent {
        Agent::new(3, 2, AgentConfig { hidden: vec![8, 8], ..cfg }, &mut ChaCha8Rng::seed_from_u64(11)).unwrap()
    }

    fn transition(r: f64, terminal: bool) -> Transition {
        Transition { state: vec![0.1, 0.2, 0.3], action: vec![0.5, -0.5], reward: r, next_state: vec![0.3, 0.2, 0.1], terminal }
    }

    #[test]
    fn greedy_action_is_deterministic_and_bounded() {
        let a = agent(AgentConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = [0.5, 0.1, 0.9];
        let u = a.select_action(&x, false, &mut rng).unwrap();
        assert_eq!(u, a.select_action(&x, false, &mut rng).unwrap());
        assert!(u.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(a.select_action(&[0.0], false, &mut rng).is_err());
    }

    #[test]
    fn zero_sigma_matches_greedy() {
        let mut a = agent(AgentConfig::default());
        a.noise.sigma = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = [0.5, 0.1, 0.9];
        assert_eq!(a.select_action(&x, true, &mut rng).unwrap(), a.select_action(&x, false, &mut rng).unwrap());
    }

    #[test]
    fn sigma_decays_per_episode() {
        let mut n = GaussianNoise::new(0.3, 0.999);
        n.end_episode();
        assert!((n.sigma - 0.2997).abs() < 1e-12);
    }

    #[test]
    fn targets_with_zero_gamma_are_rewards() {
        let a = agent(AgentConfig { gamma: 0.0, ..Default::default() });
        let batch = Minibatch::from_transitions(&[transition(1.5, false), transition(-2.0, false)]);
        let y = a.critic_targets(&batch).unwrap();
        assert!((y[0] - 1.5).abs() < 1e-12 && (y[1] + 2.0).abs() < 1e-12);
        assert!(AgentConfig { gamma: 1.5, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn targets_bootstrap_from_target_critic() {
        let mut a = agent(AgentConfig { gamma: 0.99, ..Default::default() });
        // Target critic that outputs the constant 2.
        let sizes = a.target_critic.sizes().to_vec();
        let mut params = vec![0.0; a.target_critic.num_params()];
        *params.last_mut().unwrap() = 2.0;
        a.target_critic = Mlp::from_params(&sizes, Activation::Relu, Activation::Identity, params).unwrap();
        let y = a.critic_targets(&Minibatch::from_transitions(&[transition(1.0, false)])).unwrap();
        assert!((y[0] - 2.98).abs() < 1e-12);
    }

    #[test]
    fn terminal_mask() {
        let a = agent(AgentConfig { mask_terminal: true, ..Default::default() });
        let y = a.critic_targets(&Minibatch::from_transitions(&[transition(1.0, true)])).unwrap();
        assert_eq!(y[0], 1.0);
        let unmasked = agent(AgentConfig::default());
        let y = unmasked.critic_targets(&Minibatch::from_transitions(&[transition(1.0, true)])).unwrap();
        assert_ne!(y[0], 1.0);
    }

    #[test]
    fn exact_critic_is_not_moved() {
        let mut a = agent(AgentConfig { gamma: 0.5, ..Default::default() });
        let mut t = transition(0.0, false);
        // Choose the reward so that y equals the current Q.
        let q = a.critic_net().value(&t.state, &t.action).unwrap();
        let a_next = a.target_actor.forward(&t.next_state).unwrap();
        let q_next = CriticNet { net: &a.target_critic, state_dim: 3 }.value(&t.next_state, &a_next).unwrap();
        t.reward = q - 0.5 * q_next;
        let before = a.critic.clone();
        let stats = a.train_step(&Minibatch::from_transitions(&[t])).unwrap();
        assert!(stats.critic_loss < 1e-24);
        assert_eq!(a.critic, before);
    }

    #[test]
    fn non_finite_batch_leaves_agent_untouched() {
        let mut a = agent(AgentConfig::default());
        let before = (a.actor.clone(), a.critic.clone(), a.target_actor.clone(), a.target_critic.clone());
        let err = a.train_step(&Minibatch::from_transitions(&[transition(f64::NAN, false)])).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!((a.actor.clone(), a.critic.clone(), a.target_actor.clone(), a.target_critic.clone()), before);
        assert_eq!(a.train_steps(), 0);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut a = agent(AgentConfig::default());
        let mut t = transition(1.0, false);
        t.action.push(0.0);
        assert!(matches!(a.train_step(&Minibatch::from_transitions(&[t])), Err(Error::Dimension { .. })));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = agent(AgentConfig::default());
        a.train_step(&Minibatch::from_transitions(&[transition(1.0, false), transition(0.5, false)])).unwrap();
        a.save(dir.path()).unwrap();
        let b = Agent::load(dir.path()).unwrap();
        assert_eq!(a.actor, b.actor);
        assert_eq!(a.target_critic, b.target_critic);
        assert_eq!(b.train_steps(), 1);
        assert_eq!(a.config(), b.config());
    }
}

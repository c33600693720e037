//! Actor gradients against a hand-written quadratic critic.

use nfv_energy::ddpg::{policy_gradient, ActionValue};
use nfv_energy::nn::{Activation, Mlp};
use nfv_energy::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `Q(x, a) = -||a - a*(x)||^2` with `a*(x) = 0.5 sin(x_0 + k)` per action dimension.
struct Quadratic {
    dim: usize,
}

impl Quadratic {
    fn target(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim).map(|k| 0.5 * (x[0] + k as f64).sin()).collect()
    }
}

impl ActionValue for Quadratic {
    fn value_and_action_grad(&self, x: &[f64], a: &[f64]) -> Result<(f64, Vec<f64>)> {
        let t = self.target(x);
        let q = -a.iter().zip(&t).map(|(ai, ti)| (ai - ti).powi(2)).sum::<f64>();
        let g = a.iter().zip(&t).map(|(ai, ti)| -2.0 * (ai - ti)).collect();
        Ok((q, g))
    }
}

fn objective(actor: &Mlp, critic: &Quadratic, states: &[Vec<f64>], c: f64) -> f64 {
    policy_gradient(actor, critic, states, c).unwrap().0
}

fn check(seed: u64, c: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actor = Mlp::new(&[3, 8, 8, 2], Activation::Relu, Activation::Tanh, &mut rng).unwrap();
    let critic = Quadratic { dim: 2 };
    let states: Vec<Vec<f64>> = (0..8).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let (j, grad) = policy_gradient(&actor, &critic, &states, c).unwrap();
    assert!(j.is_finite());
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..actor.num_params() {
        let mut p = actor.clone();
        p.params_mut()[i] += eps;
        let mut m = actor.clone();
        m.params_mut()[i] -= eps;
        let fd = (objective(&p, &critic, &states, c) - objective(&m, &critic, &states, c)) / (2.0 * eps);
        worst = worst.max((grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-6));
    }
    worst
}

#[test]
fn policy_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let e = check(seed, 0.0);
        assert!(e < 1e-4, "seed {seed}: {e}");
    }
}

#[test]
fn penalized_policy_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let e = check(seed, 0.05);
        assert!(e < 1e-4, "seed {seed}: {e}");
    }
}

#[test]
fn ascent_improves_the_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut actor = Mlp::new(&[3, 8, 2], Activation::Relu, Activation::Tanh, &mut rng).unwrap();
    let critic = Quadratic { dim: 2 };
    let states: Vec<Vec<f64>> = (0..16).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let (j0, _) = policy_gradient(&actor, &critic, &states, 0.0).unwrap();
    for _ in 0..200 {
        let (_, g) = policy_gradient(&actor, &critic, &states, 0.0).unwrap();
        actor.params_mut().iter_mut().zip(&g).for_each(|(p, gi)| *p += 0.05 * gi);
    }
    let (j1, _) = policy_gradient(&actor, &critic, &states, 0.0).unwrap();
    assert!(j1 > j0 && j1 > -0.05, "{j0} -> {j1}");
}

//! Backpropagation checked against central finite differences.

use nfv_energy::nn::{Activation, Mlp, Trace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
/// Gradients smaller than this are compared on an absolute scale.
const FLOOR: f64 = 1e-6;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

fn random_net(rng: &mut ChaCha8Rng) -> Mlp {
    let depth = rng.random_range(0..=3);
    let mut sizes = vec![rng.random_range(1..=16)];
    for _ in 0..depth {
        sizes.push(rng.random_range(1..=16));
    }
    sizes.push(rng.random_range(1..=16));
    let hidden = if rng.random_bool(0.5) { Activation::Relu } else { Activation::Tanh };
    let output = [Activation::Identity, Activation::Tanh, Activation::Relu][rng.random_range(0..3)];
    Mlp::new(&sizes, hidden, output, rng).unwrap()
}

fn loss(net: &Mlp, x: &[f64], g: &[f64]) -> f64 {
    net.forward(x).unwrap().iter().zip(g).map(|(y, gi)| y * gi).sum()
}

/// Which ReLU units are active; finite differences are meaningless across a change.
fn pattern(t: &Trace) -> Vec<bool> {
    t.layers()[1..].iter().flatten().map(|&v| v > 0.0).collect()
}

struct Outcome {
    max_err: f64,
    checked: usize,
    skipped: usize,
}

fn check_net(net: &Mlp, rng: &mut ChaCha8Rng) -> Outcome {
    let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g: Vec<f64> = (0..net.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (pg, ig) = net.backward(&x, &g).unwrap();
    let mut out = Outcome { max_err: 0.0, checked: 0, skipped: 0 };
    for i in 0..net.num_params() {
        let mut plus = net.clone();
        plus.params_mut()[i] += EPS;
        let mut minus = net.clone();
        minus.params_mut()[i] -= EPS;
        if pattern(&plus.trace(&x).unwrap()) != pattern(&minus.trace(&x).unwrap()) {
            out.skipped += 1;
            continue;
        }
        let fd = (loss(&plus, &x, &g) - loss(&minus, &x, &g)) / (2.0 * EPS);
        out.max_err = out.max_err.max(rel_err(pg[i], fd));
        out.checked += 1;
    }
    for j in 0..x.len() {
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[j] += EPS;
        xm[j] -= EPS;
        if pattern(&net.trace(&xp).unwrap()) != pattern(&net.trace(&xm).unwrap()) {
            out.skipped += 1;
            continue;
        }
        let fd = (loss(net, &xp, &g) - loss(net, &xm, &g)) / (2.0 * EPS);
        out.max_err = out.max_err.max(rel_err(ig[j], fd));
        out.checked += 1;
    }
    out
}

#[test]
fn backward_matches_central_differences_on_100_random_nets() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    for _ in 0..100 {
        let net = random_net(&mut rng);
        let o = check_net(&net, &mut rng);
        worst = worst.max(o.max_err);
        checked += o.checked;
        skipped += o.skipped;
    }
    assert!(worst < 1e-4, "max relative error {worst}");
    assert!(skipped * 100 < checked, "too many kink crossings: {skipped} of {checked}");
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn pre_activation_backward_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = Mlp::new(&[4, 8, 3], Activation::Tanh, Activation::Tanh, &mut rng).unwrap();
    let x = [0.3, -0.2, 0.9, 0.1];
    let g = [0.5, -1.0, 0.25];
    let pre_loss = |n: &Mlp| -> f64 {
        let t = n.trace(&x).unwrap();
        n.output_pre_activation(&t).iter().zip(&g).map(|(z, gi)| z * gi).sum()
    };
    let trace = net.trace(&x).unwrap();
    let mut grad = vec![0.0; net.num_params()];
    net.backward_trace_pre(&trace, &g, &mut grad).unwrap();
    for i in 0..net.num_params() {
        let mut p = net.clone();
        p.params_mut()[i] += EPS;
        let mut m = net.clone();
        m.params_mut()[i] -= EPS;
        let fd = (pre_loss(&p) - pre_loss(&m)) / (2.0 * EPS);
        assert!(rel_err(grad[i], fd) < 1e-6, "param {i}: {} vs {fd}", grad[i]);
    }
}

#[test]
fn gradient_accumulates_across_calls() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = Mlp::new(&[3, 5, 2], Activation::Relu, Activation::Identity, &mut rng).unwrap();
    let t = net.trace(&[0.1, 0.2, 0.3]).unwrap();
    let mut once = vec![0.0; net.num_params()];
    net.backward_trace(&t, &[1.0, -1.0], &mut once).unwrap();
    let mut twice = vec![0.0; net.num_params()];
    net.backward_trace(&t, &[1.0, -1.0], &mut twice).unwrap();
    net.backward_trace(&t, &[1.0, -1.0], &mut twice).unwrap();
    for (a, b) in once.iter().zip(&twice) {
        assert!((2.0 * a - b).abs() < 1e-12);
    }
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn soft_update_contracts_distance(seed in any::<u64>(), tau in 0.0..=1.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let online = Mlp::new(&[3, 4, 2], Activation::Relu, Activation::Tanh, &mut rng).unwrap();
            let mut target = Mlp::new(&[3, 4, 2], Activation::Relu, Activation::Tanh, &mut rng).unwrap();
            let dist = |a: &Mlp, b: &Mlp| a.params().iter().zip(b.params()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let before = dist(&target, &online);
            target.soft_update(&online, tau).unwrap();
            let after = dist(&target, &online);
            prop_assert!((after - (1.0 - tau) * before).abs() <= 1e-9 * before.max(1.0));
        }

        #[test]
        fn save_load_is_bit_exact(seed in any::<u64>(), x in prop::collection::vec(-2.0..2.0f64, 5)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = Mlp::new(&[5, 7, 3], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
            let mut buf = Vec::new();
            net.write_to(&mut buf).unwrap();
            let back = Mlp::read_from(buf.as_slice()).unwrap();
            let (a, b) = (net.forward(&x).unwrap(), back.forward(&x).unwrap());
            prop_assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
        }

        #[test]
        fn tanh_output_bounded(seed in any::<u64>(), x in prop::collection::vec(-100.0..100.0f64, 4)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = Mlp::new(&[4, 16, 16, 6], Activation::Relu, Activation::Tanh, &mut rng).unwrap();
            prop_assert!(net.forward(&x).unwrap().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}

use nfv_energy::replay::{PrioritizedBuffer, ReplayConfig, SampleId, SumTree, Transition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn tr(tag: f64) -> Transition {
    Transition { state: vec![tag], action: vec![0.0], reward: tag, next_state: vec![tag], terminal: false }
}

fn buffer_with_priorities(alpha: f64, priorities: &[f64]) -> PrioritizedBuffer {
    let mut b = PrioritizedBuffer::new(ReplayConfig { capacity: priorities.len(), alpha, priority_eps: 1e-12, ..Default::default() }).unwrap();
    for i in 0..priorities.len() {
        b.store(tr(i as f64));
    }
    // Each slot has been written exactly once.
    let ids: Vec<SampleId> = (0..priorities.len()).map(|slot| SampleId { slot, generation: 1 }).collect();
    b.update_priorities(&ids, priorities);
    b
}

fn frequencies(b: &PrioritizedBuffer, draws: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0; b.len()];
    for _ in 0..draws {
        let batch = b.sample(1, &mut rng).unwrap();
        counts[batch.ids[0].slot] += 1;
    }
    counts
}

#[test]
fn proportional_sampling_matches_priorities() {
    let b = buffer_with_priorities(1.0, &[1.0, 2.0, 3.0, 4.0]);
    let counts = frequencies(&b, 100_000, 7);
    for (c, p) in counts.iter().zip([0.1, 0.2, 0.3, 0.4]) {
        let f = *c as f64 / 1e5;
        assert!((f - p).abs() <= 0.02, "{f} vs {p}");
    }
}

#[test]
fn alpha_zero_is_uniform() {
    let b = buffer_with_priorities(0.0, &[1.0, 2.0, 3.0, 4.0]);
    let counts = frequencies(&b, 100_000, 11);
    let expected = 25_000.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(3.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 {chi2}, p {p}");
}

#[test]
fn importance_weight_hand_value() {
    // size 4, P(i) = 0.4, beta = 1 gives (4 * 0.4)^-1 = 0.625 before normalization.
    let b = buffer_with_priorities(1.0, &[1.0, 2.0, 3.0, 4.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch = b.sample(4, &mut rng).unwrap();
    let mut b1 = b.clone();
    b1.set_beta(1.0);
    let batch1 = b1.sample(4, &mut rng).unwrap();
    let max_raw = batch1.ids.iter().map(|id| (4.0 * b1.tree().get(id.slot) / b1.tree().total()).powf(-1.0)).fold(0.0, f64::max);
    for (id, w) in batch1.ids.iter().zip(&batch1.weights) {
        let raw = (4.0 * b1.tree().get(id.slot) / b1.tree().total()).powf(-1.0);
        if id.slot == 3 {
            assert!((raw - 0.625).abs() < 1e-12);
        }
        assert!((w - raw / max_raw).abs() < 1e-12);
    }
    assert!(batch.weights.iter().all(|w| *w > 0.0 && *w <= 1.0));
}

#[test]
fn sum_tree_fuzz_root_matches_leaf_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut tree = SumTree::new(1000);
    let mut shadow = vec![0.0; 1000];
    for op in 0..100_000 {
        let slot = rng.random_range(0..1000);
        let v = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..10.0) };
        tree.set(slot, v);
        shadow[slot] = v;
        if op % 1000 == 0 {
            let direct: f64 = shadow.iter().sum();
            assert!((tree.total() - direct).abs() <= 1e-9 * direct.max(1e-300));
            assert_eq!(tree.max(), shadow.iter().copied().fold(0.0, f64::max));
        }
    }
    let direct: f64 = shadow.iter().sum();
    assert!((tree.total() - direct).abs() <= 1e-9 * direct);
}

#[test]
fn buffer_fuzz_keeps_tree_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut b = PrioritizedBuffer::new(ReplayConfig { capacity: 257, ..Default::default() }).unwrap();
    let mut outstanding: Vec<SampleId> = Vec::new();
    for op in 0..100_000u32 {
        match rng.random_range(0..10) {
            0..=4 => b.store(tr(f64::from(op))),
            5..=6 if b.len() >= 8 => outstanding = b.sample(8, &mut rng).unwrap().ids,
            7..=8 if !outstanding.is_empty() => {
                let td: Vec<f64> = outstanding.iter().map(|_| rng.random_range(0.0..5.0)).collect();
                b.update_priorities(&outstanding, &td);
            }
            9 if op % 97 == 0 => b.evict_old(0.9),
            _ => {}
        }
        let direct: f64 = b.tree().leaves().iter().sum();
        let root = b.tree().total();
        assert!((root - direct).abs() <= 1e-9 * direct.max(1e-300), "op {op}: {root} vs {direct}");
        assert!(b.len() <= b.capacity());
    }
}

#[test]
fn sampling_never_returns_evicted_transitions() {
    let mut b = PrioritizedBuffer::new(ReplayConfig { capacity: 64, ..Default::default() }).unwrap();
    for i in 0..64 {
        b.store(tr(f64::from(i)));
    }
    b.evict_old(0.25);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..200 {
        let batch = b.sample(16, &mut rng).unwrap();
        assert!(batch.rewards.iter().all(|&r| r >= 48.0), "{:?}", batch.rewards);
    }
}

#[test]
fn zero_td_error_keeps_floor() {
    let mut b = PrioritizedBuffer::new(ReplayConfig { capacity: 2, alpha: 1.0, ..Default::default() }).unwrap();
    b.store(tr(0.0));
    let ids = b.sample(1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().ids;
    b.update_priorities(&ids, &[0.0]);
    assert_eq!(b.tree().get(0), 1e-6);
}

#[test]
fn sample_more_than_size_fails() {
    let mut b = PrioritizedBuffer::new(ReplayConfig::default()).unwrap();
    b.store(tr(1.0));
    assert!(b.sample(2, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

use std::collections::HashSet;

use opal::data::{make_batch, sample_instance, InteractedItems, SamplingConfig, Sequence, TrainInstance};
use opal::eval::adjusted_mutual_info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Pearson chi-square against a uniform expectation; fails beyond
/// mean + 5 standard deviations of the chi-square distribution.
fn assert_uniform(counts: &[usize]) {
    let n: usize = counts.iter().sum();
    let expected = n as f64 / counts.len() as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let df = (counts.len() - 1) as f64;
    assert!(chi2 < df + 5.0 * (2.0 * df).sqrt(), "chi2 {chi2:.1} with {df} dof: {counts:?}");
}

fn seq(len: usize) -> Sequence {
    Sequence { user: 0, items: (100..100 + len).collect(), timestamps: (0..len as i64).collect() }
}

#[test]
fn split_point_is_uniform() {
    let cfg = SamplingConfig { min_history: 2, future_window: None, max_history: 200 };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = seq(12);
    let mut counts = vec![0; 10];
    for _ in 0..20_000 {
        let inst = sample_instance(&s, &cfg, &mut rng).unwrap();
        counts[inst.split_point - 2] += 1;
    }
    assert_uniform(&counts);
}

#[test]
fn positive_is_uniform_over_the_window() {
    let cfg = SamplingConfig { min_history: 1, future_window: Some(4), max_history: 200 };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = seq(30);
    let mut counts = vec![0; 4];
    for _ in 0..20_000 {
        let inst = sample_instance(&s, &cfg, &mut rng).unwrap();
        // near the end the window is cut short; only full windows count
        if inst.split_point + 4 > s.len() {
            continue;
        }
        let offset = inst.positive - s.items[inst.split_point];
        counts[offset] += 1;
    }
    assert_uniform(&counts);
}

#[test]
fn negatives_are_uniform_over_unseen_items() {
    let catalog = 40;
    let seen: HashSet<usize> = [0, 3, 4, 17, 39].into_iter().collect();
    let interacted = InteractedItems::from_sets(vec![seen.clone()]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut counts = vec![0; catalog];
    for _ in 0..1000 {
        let instances =
            (0..32).map(|_| TrainInstance { user: 0, history: vec![0], positive: 3, split_point: 1 }).collect();
        let batch = make_batch(instances, catalog, &interacted, &mut rng).unwrap();
        assert_eq!(batch.shared_negatives.len(), 32);
        for &n in &batch.shared_negatives {
            counts[n] += 1;
        }
    }
    assert!(seen.iter().all(|&i| counts[i] == 0));
    let unseen: Vec<usize> = (0..catalog).filter(|i| !seen.contains(i)).map(|i| counts[i]).collect();
    assert_uniform(&unseen);
}

#[test]
fn ami_matches_reference_values() {
    // reference values from scikit-learn's adjusted_mutual_info_score
    let cases: [(&[usize], &[usize], f64); 4] = [
        (&[0, 0, 1, 1, 2, 2, 2, 0], &[1, 1, 0, 0, 2, 2, 0, 0], 0.27454164973683337),
        (&[0, 1, 2, 0, 1, 2, 0, 1, 2, 0], &[0, 0, 0, 1, 1, 1, 2, 2, 2, 2], -0.35118577459781486),
        (&[0, 0, 0, 0, 1, 1, 1, 1, 1, 2, 2, 3], &[0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 3, 3], 0.29239808391598643),
        (&[0, 1, 0, 1, 0, 1], &[0, 0, 0, 1, 1, 1], -0.1111111111111109),
    ];
    for (a, b, want) in cases {
        let got = adjusted_mutual_info(a, b);
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        assert!((adjusted_mutual_info(b, a) - want).abs() < 1e-10);
    }
}

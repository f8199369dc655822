use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use shiftgate_core::cluster::{cluster_class, elbow_select_k, histogram, kmeans_1d, ScoreRow, ScoreTable};

fn segment_sse(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum()
}

/// Minimum SSE over every way to cut the sorted values into k runs.
fn exhaustive(values: &[f64], k: usize) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    let mut best = f64::INFINITY;
    // each bit of `mask` marks a cut after position i
    for mask in 0u32..(1 << (n - 1)) {
        if mask.count_ones() as usize != k - 1 {
            continue;
        }
        let mut start = 0;
        let mut total = 0.0;
        for i in 0..n - 1 {
            if mask & (1 << i) != 0 {
                total += segment_sse(&s[start..=i]);
                start = i + 1;
            }
        }
        total += segment_sse(&s[start..]);
        best = best.min(total);
    }
    best
}

#[test]
fn kmeans_matches_exhaustive_partition_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..200 {
        let n = rng.gen_range(2..=12);
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let k = rng.gen_range(1..=4.min(n));
        let got = kmeans_1d(&values, k, case).unwrap();
        let want = exhaustive(&values, k);
        assert!((got.distortion - want).abs() < 1e-9, "case {case}: {} vs {want}", got.distortion);
    }
}

fn clumps(centres: &[f64], per: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, 0.01).unwrap();
    centres
        .iter()
        .flat_map(|&c| (0..per).map(|_| c + noise.sample(rng)).collect::<Vec<_>>())
        .collect()
}

fn elbow_hits(centres: &[f64]) -> usize {
    (0..100)
        .filter(|&t| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + t);
            let s = clumps(centres, 40, &mut rng);
            elbow_select_k(&s, (2, 8), t).unwrap().chosen_k == centres.len()
        })
        .count()
}

#[test]
fn elbow_recovers_three_clumps() {
    let hits = elbow_hits(&[0.0, 1.0, 2.0]);
    assert!(hits >= 95, "{hits}/100");
}

#[test]
fn elbow_recovers_five_clumps() {
    let hits = elbow_hits(&[0.0, 1.0, 2.0, 3.0, 4.0]);
    assert!(hits >= 95, "{hits}/100");
}

#[test]
fn distortion_is_non_increasing_in_k() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s: Vec<f64> = (0..150).map(|_| rng.gen_range(0.0..1.0)).collect();
    let curve = elbow_select_k(&s, (2, 8), 0).unwrap();
    assert_eq!(curve.k_values, (2..=8).collect::<Vec<_>>());
    for w in curve.distortions.windows(2) {
        assert!(w[1] <= w[0] + 1e-12);
    }
}

#[test]
fn uniform_histogram_counts_all() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let s: Vec<f64> = (0..10_000).map(|_| rng.gen_range(0.0..1.0)).collect();
    let h = histogram(&s, 20, Some((0.0, 1.0))).unwrap();
    assert_eq!(h.counts.iter().sum::<usize>(), 10_000);
    assert_eq!(h.edges.len(), 21);
}

fn table(scores: &[f64]) -> ScoreTable {
    ScoreTable {
        source_dataset: "ext".into(),
        rows: scores
            .iter()
            .enumerate()
            .map(|(i, &s)| ScoreRow {
                sample_id: format!("s{i}"),
                class_label: "A".into(),
                s_rec: s,
                s_dis: 0.0,
                s_total: s,
            })
            .collect(),
    }
}

#[test]
fn class_assignment_orders_groups_by_mean() {
    let t = table(&[5.0, 0.1, 5.1, 0.2, 2.0, 2.1]);
    let a = cluster_class(&t, "A", 3, 0).unwrap();
    assert_eq!(a.group_sizes(), vec![2, 2, 2]);
    let m = a.membership();
    assert_eq!(m["s1"], a.group_order[0]);
    assert_eq!(m["s0"], a.group_order[2]);
    let kept = a.retained(2);
    assert!(kept.contains("s4") && !kept.contains("s0"));
    assert!(cluster_class(&t, "B", 3, 0).is_err());
}

proptest! {
    #[test]
    fn permutation_changes_only_bookkeeping(
        values in prop::collection::vec(0.0f64..1.0, 4..30),
        k in 1usize..4,
        rot in 0usize..30,
    ) {
        let mut distinct = values.clone();
        distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
        distinct.dedup();
        prop_assume!(k <= distinct.len());
        let a = kmeans_1d(&values, k, 5).unwrap();
        let mut shifted = values.clone();
        let r = rot % values.len();
        shifted.rotate_left(r);
        let b = kmeans_1d(&shifted, k, 5).unwrap();
        prop_assert!((a.distortion - b.distortion).abs() < 1e-9);
        for i in 0..values.len() {
            let j = (i + values.len() - r) % values.len();
            prop_assert_eq!(a.labels[i], b.labels[j]);
        }
    }
}

use rand::seq::SliceRandom;

use super::{DataError, Dataset, Labels, Result};
use crate::seed;

/// Allocates `n` items across `fractions` by largest remainder so the
/// counts sum to `n` and each is within one of its exact share.
fn allocate(n: usize, fractions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).expect("finite").then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    counts
}

/// Stratified, seeded split. Each returned dataset keeps the original
/// sample order; split `i` is named `<name>_<i>`.
pub fn split(ds: &Dataset, fractions: &[f64], seed: u64) -> Result<Vec<Dataset>> {
    if fractions.is_empty() || fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(DataError::InvalidSplit(format!("{fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(DataError::InvalidSplit(format!("fractions sum to {total}, not 1")));
    }
    let strata: Vec<Vec<usize>> = match &ds.labels {
        Labels::Single(_) => (0..ds.class_names.len()).map(|c| ds.indices_of_class(c)).collect(),
        Labels::Multi(_) => vec![(0..ds.len()).collect()],
    };
    let mut rng = seed::rng(seed);
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); fractions.len()];
    for mut members in strata {
        members.shuffle(&mut rng);
        let counts = allocate(members.len(), fractions);
        let mut start = 0;
        for (part, c) in parts.iter_mut().zip(counts) {
            part.extend_from_slice(&members[start..start + c]);
            start += c;
        }
    }
    Ok(parts
        .into_iter()
        .enumerate()
        .map(|(i, mut idx)| {
            idx.sort_unstable();
            ds.subset(&idx, format!("{}_{i}", ds.name))
        })
        .collect())
}

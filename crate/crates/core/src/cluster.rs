//! Grouping anomaly scores: 1-D k-means, elbow selection of k, the shared-k
//! rule, and score histograms.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

pub const RESTARTS: usize = 10;
pub const MAX_ITER: usize = 300;
pub const DEFAULT_K_RANGE: (usize, usize) = (2, 8);
/// Largest input for which the exact dynamic-programming candidate is added.
const EXACT_CANDIDATE_LIMIT: usize = 4000;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k = {k} exceeds the {distinct} distinct score values")]
    TooManyGroups { k: usize, distinct: usize },
    #[error("scores must be finite")]
    NonFinite,
    #[error("elbow undefined: only {feasible} feasible k values in {lo}..={hi}")]
    ElbowUndefined { feasible: usize, lo: usize, hi: usize },
    #[error("no distortion curves given")]
    NoCurves,
    #[error("histogram needs at least one bin and lo < hi")]
    BadHistogram,
    #[error("class {0} has no scores")]
    EmptyClass(String),
}

pub type Result<T> = std::result::Result<T, ClusterError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub sample_id: String,
    pub class_label: String,
    pub s_rec: f64,
    pub s_dis: f64,
    pub s_total: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreTable {
    pub source_dataset: String,
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn class_rows<'a>(&'a self, class: &'a str) -> impl Iterator<Item = &'a ScoreRow> + 'a {
        self.rows.iter().filter(move |r| r.class_label == class)
    }

    pub fn mean_total(&self) -> Option<f64> {
        if self.rows.is_empty() {
            return None;
        }
        Some(self.rows.iter().map(|r| r.s_total).sum::<f64>() / self.rows.len() as f64)
    }

    /// Checks unique ids and finite totals.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let mut seen = BTreeSet::new();
        for r in &self.rows {
            if !seen.insert(r.sample_id.as_str()) {
                return Err(format!("duplicate sample id {}", r.sample_id));
            }
            if !r.s_total.is_finite() {
                return Err(format!("non-finite score for {}", r.sample_id));
            }
        }
        Ok(())
    }
}

/// Raw 1-D clustering of a score vector.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans1d {
    /// Group index per input position, groups numbered by ascending mean.
    pub labels: Vec<usize>,
    pub means: Vec<f64>,
    pub distortion: f64,
}

impl KMeans1d {
    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k()];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }
}

fn distinct_count(scores: &[f64]) -> usize {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    sorted.dedup();
    sorted.len()
}

fn sse(scores: &[f64], labels: &[usize], means: &[f64]) -> f64 {
    scores
        .iter()
        .zip(labels)
        .map(|(&v, &l)| (v - means[l]) * (v - means[l]))
        .sum()
}

fn nearest(v: f64, centers: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &c) in centers.iter().enumerate() {
        let d = (v - c).abs();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Lloyd iterations from `centers` until assignments stop changing.
fn lloyd(scores: &[f64], mut centers: Vec<f64>) -> (Vec<usize>, Vec<f64>) {
    let k = centers.len();
    let mut labels: Vec<usize> = scores.iter().map(|&v| nearest(v, &centers)).collect();
    for _ in 0..MAX_ITER {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&v, &l) in scores.iter().zip(&labels) {
            sums[l] += v;
            counts[l] += 1;
        }
        for g in 0..k {
            if counts[g] > 0 {
                centers[g] = sums[g] / counts[g] as f64;
            }
        }
        // An empty group takes over the point worst served by its centre.
        for g in 0..k {
            if counts[g] == 0 {
                let far = (0..scores.len())
                    .filter(|&i| counts[labels[i]] > 1)
                    .max_by(|&a, &b| {
                        let da = (scores[a] - centers[labels[a]]).abs();
                        let db = (scores[b] - centers[labels[b]]).abs();
                        da.partial_cmp(&db).expect("finite").then(b.cmp(&a))
                    });
                if let Some(i) = far {
                    counts[labels[i]] -= 1;
                    labels[i] = g;
                    counts[g] = 1;
                    centers[g] = scores[i];
                }
            }
        }
        let next: Vec<usize> = scores.iter().map(|&v| nearest(v, &centers)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (&v, &l) in scores.iter().zip(&labels) {
        sums[l] += v;
        counts[l] += 1;
    }
    for g in 0..k {
        if counts[g] > 0 {
            centers[g] = sums[g] / counts[g] as f64;
        }
    }
    (labels, centers)
}

fn kmeanspp<R: Rng>(scores: &[f64], k: usize, rng: &mut R) -> Vec<f64> {
    let mut centers = vec![scores[rng.gen_range(0..scores.len())]];
    while centers.len() < k {
        let d2: Vec<f64> = scores
            .iter()
            .map(|&v| centers.iter().map(|&c| (v - c) * (v - c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            // every point already coincides with a centre
            let unused = scores.iter().find(|v| !centers.contains(v)).copied();
            centers.push(unused.unwrap_or(centers[0]));
            continue;
        }
        let mut u = rng.gen_range(0.0..total);
        let mut pick = scores.len() - 1;
        for (i, &w) in d2.iter().enumerate() {
            if u < w {
                pick = i;
                break;
            }
            u -= w;
        }
        centers.push(scores[pick]);
    }
    centers
}

/// Globally optimal contiguous partition of the sorted scores (O(k n^2)).
fn exact_centers(scores: &[f64], k: usize) -> Vec<f64> {
    let mut s = scores.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = s.len();
    let mut p1 = vec![0.0; n + 1];
    let mut p2 = vec![0.0; n + 1];
    for i in 0..n {
        p1[i + 1] = p1[i] + s[i];
        p2[i + 1] = p2[i] + s[i] * s[i];
    }
    let cost = |a: usize, b: usize| -> f64 {
        let m = (b - a) as f64;
        let sum = p1[b] - p1[a];
        (p2[b] - p2[a] - sum * sum / m).max(0.0)
    };
    let inf = f64::INFINITY;
    let mut dp = vec![vec![inf; n + 1]; k + 1];
    let mut cut = vec![vec![0usize; n + 1]; k + 1];
    dp[0][0] = 0.0;
    for g in 1..=k {
        for end in g..=n {
            for start in g - 1..end {
                let c = dp[g - 1][start] + cost(start, end);
                if c < dp[g][end] {
                    dp[g][end] = c;
                    cut[g][end] = start;
                }
            }
        }
    }
    let mut centers = Vec::with_capacity(k);
    let mut end = n;
    for g in (1..=k).rev() {
        let start = cut[g][end];
        centers.push((p1[end] - p1[start]) / (end - start) as f64);
        end = start;
    }
    centers.reverse();
    centers
}

fn canonical(scores: &[f64], labels: Vec<usize>, means: Vec<f64>) -> KMeans1d {
    let mut order: Vec<usize> = (0..means.len()).collect();
    order.sort_by(|&a, &b| means[a].partial_cmp(&means[b]).expect("finite").then(a.cmp(&b)));
    let mut rank = vec![0; means.len()];
    for (r, &g) in order.iter().enumerate() {
        rank[g] = r;
    }
    let labels: Vec<usize> = labels.into_iter().map(|l| rank[l]).collect();
    let means: Vec<f64> = order.iter().map(|&g| means[g]).collect();
    let distortion = sse(scores, &labels, &means);
    KMeans1d { labels, means, distortion }
}

/// Best of [`RESTARTS`] k-means++/Lloyd runs by distortion. For inputs up to
/// a few thousand points an extra Lloyd run is started from the exact
/// contiguous-partition optimum, so the returned clustering is optimal.
pub fn kmeans_1d(scores: &[f64], k: usize, seed: u64) -> Result<KMeans1d> {
    if k == 0 {
        return Err(ClusterError::ZeroK);
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(ClusterError::NonFinite);
    }
    let distinct = distinct_count(scores);
    if k > distinct {
        return Err(ClusterError::TooManyGroups { k, distinct });
    }
    let mut rng = seed::rng(seed);
    let mut best: Option<KMeans1d> = None;
    let mut consider = |candidate: KMeans1d| {
        let better = match &best {
            None => true,
            Some(b) => candidate.distortion < b.distortion,
        };
        if better && candidate.sizes().iter().all(|&s| s > 0) {
            best = Some(candidate);
        }
    };
    for _ in 0..RESTARTS {
        let (labels, means) = lloyd(scores, kmeanspp(scores, k, &mut rng));
        consider(canonical(scores, labels, means));
    }
    if scores.len() <= EXACT_CANDIDATE_LIMIT {
        let (labels, means) = lloyd(scores, exact_centers(scores, k));
        consider(canonical(scores, labels, means));
    }
    Ok(best.expect("k <= distinct values always admits a non-empty clustering"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionCurve {
    pub k_values: Vec<usize>,
    pub distortions: Vec<f64>,
    pub chosen_k: usize,
}

/// Index of the interior point farthest from the chord between the curve's
/// endpoints, with both axes min-max normalised. Ties go to the smaller k.
pub fn chord_knee(k_values: &[usize], distortions: &[f64]) -> usize {
    let n = k_values.len();
    let (k0, k1) = (k_values[0] as f64, k_values[n - 1] as f64);
    let dmax = distortions.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let dmin = distortions.iter().cloned().fold(f64::INFINITY, f64::min);
    if dmax - dmin <= 0.0 || k1 <= k0 {
        return 1;
    }
    let pts: Vec<(f64, f64)> = k_values
        .iter()
        .zip(distortions)
        .map(|(&k, &d)| ((k as f64 - k0) / (k1 - k0), (d - dmin) / (dmax - dmin)))
        .collect();
    let (ax, ay) = pts[0];
    let (bx, by) = pts[n - 1];
    let len = ((bx - ax).powi(2) + (by - ay).powi(2)).sqrt();
    let mut best = 1;
    let mut best_d = -1.0;
    for (i, &(x, y)) in pts.iter().enumerate().take(n - 1).skip(1) {
        let d = ((by - ay) * x - (bx - ax) * y + bx * ay - by * ax).abs() / len;
        if d > best_d + 1e-12 {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Distortion curve over `k_range` (inclusive) and its elbow.
pub fn elbow_select_k(scores: &[f64], k_range: (usize, usize), seed: u64) -> Result<DistortionCurve> {
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(ClusterError::NonFinite);
    }
    let distinct = distinct_count(scores);
    let (lo, hi) = k_range;
    let k_values: Vec<usize> = (lo.max(1)..=hi).filter(|&k| k <= distinct).collect();
    if k_values.len() < 3 {
        return Err(ClusterError::ElbowUndefined {
            feasible: k_values.len(),
            lo,
            hi,
        });
    }
    let distortions = k_values
        .iter()
        .map(|&k| kmeans_1d(scores, k, seed::derive(seed, &format!("k{k}"))).map(|r| r.distortion))
        .collect::<Result<Vec<_>>>()?;
    let chosen_k = k_values[chord_knee(&k_values, &distortions)];
    Ok(DistortionCurve {
        k_values,
        distortions,
        chosen_k,
    })
}

/// Mode of the per-class elbows; ties resolve to the smaller k.
pub fn shared_k(curves: &[DistortionCurve]) -> Result<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for c in curves {
        *counts.entry(c.chosen_k).or_default() += 1;
    }
    let max = counts.values().copied().max().ok_or(ClusterError::NoCurves)?;
    Ok(*counts.iter().find(|(_, &n)| n == max).expect("max exists").0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width histogram. Without `range` the data min/max (or `[0, 1]` for
/// empty input) is used. Values outside the range are dropped; the last bin
/// includes its right edge.
pub fn histogram(scores: &[f64], bins: usize, range: Option<(f64, f64)>) -> Result<Histogram> {
    if bins == 0 {
        return Err(ClusterError::BadHistogram);
    }
    let (lo, hi) = match range {
        Some(r) => r,
        None if scores.is_empty() => (0.0, 1.0),
        None => {
            let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, lo + 0.5)
            }
        }
    };
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(ClusterError::BadHistogram);
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
    let mut counts = vec![0; bins];
    for &v in scores {
        if !(lo..=hi).contains(&v) {
            continue;
        }
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// One class's k groups over its external samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub class_label: String,
    pub k: usize,
    /// Group indices sorted by ascending group mean.
    pub group_order: Vec<usize>,
    pub group_means: Vec<f64>,
    /// Sample ids per group index, in table order.
    pub members: Vec<Vec<String>>,
    pub distortion: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distortion_curve: Option<DistortionCurve>,
}

impl ClusterAssignment {
    pub fn membership(&self) -> BTreeMap<&str, usize> {
        self.members
            .iter()
            .enumerate()
            .flat_map(|(g, ids)| ids.iter().map(move |id| (id.as_str(), g)))
            .collect()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    /// Ids of the `keep` lowest-mean groups.
    pub fn retained(&self, keep: usize) -> BTreeSet<&str> {
        self.group_order
            .iter()
            .take(keep)
            .flat_map(|&g| self.members[g].iter().map(String::as_str))
            .collect()
    }
}

/// Clusters one class's rows of `table` into `k` groups by `s_total`.
pub fn cluster_class(table: &ScoreTable, class: &str, k: usize, seed: u64) -> Result<ClusterAssignment> {
    let rows: Vec<&ScoreRow> = table.class_rows(class).collect();
    if rows.is_empty() {
        return Err(ClusterError::EmptyClass(class.to_string()));
    }
    let scores: Vec<f64> = rows.iter().map(|r| r.s_total).collect();
    let km = kmeans_1d(&scores, k, seed)?;
    let mut members = vec![Vec::new(); k];
    for (row, &g) in rows.iter().zip(&km.labels) {
        members[g].push(row.sample_id.clone());
    }
    let mut group_order: Vec<usize> = (0..k).collect();
    group_order.sort_by(|&a, &b| km.means[a].partial_cmp(&km.means[b]).expect("finite").then(a.cmp(&b)));
    Ok(ClusterAssignment {
        class_label: class.to_string(),
        k,
        group_order,
        group_means: km.means,
        members,
        distortion: km.distortion,
        distortion_curve: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_obvious_groups() {
        let r = kmeans_1d(&[1.0, 1.1, 5.0, 5.1], 2, 0).unwrap();
        assert_eq!(r.labels, vec![0, 0, 1, 1]);
        assert!((r.means[0] - 1.05).abs() < 1e-12);
        assert!((r.means[1] - 5.05).abs() < 1e-12);
    }

    #[test]
    fn single_group_is_total_sse() {
        let s = [1.0, 2.0, 4.0, 9.0];
        let r = kmeans_1d(&s, 1, 0).unwrap();
        assert_eq!(r.means, vec![4.0]);
        assert!((r.distortion - (9.0 + 4.0 + 0.0 + 25.0)).abs() < 1e-12);
    }

    #[test]
    fn one_group_per_point() {
        let s = [3.0, 1.0, 2.0];
        let r = kmeans_1d(&s, 3, 0).unwrap();
        assert_eq!(r.distortion, 0.0);
        assert_eq!(r.labels, vec![2, 0, 1]);
    }

    #[test]
    fn invalid_k() {
        assert_eq!(kmeans_1d(&[1.0, 2.0], 0, 0), Err(ClusterError::ZeroK));
        assert_eq!(
            kmeans_1d(&[1.0, 1.0, 2.0], 3, 0),
            Err(ClusterError::TooManyGroups { k: 3, distinct: 2 })
        );
    }

    #[test]
    fn shared_k_mode_with_ties_to_smaller() {
        let curve = |k| DistortionCurve { k_values: vec![], distortions: vec![], chosen_k: k };
        assert_eq!(shared_k(&[curve(3), curve(3), curve(5)]).unwrap(), 3);
        assert_eq!(shared_k(&[curve(4)]).unwrap(), 4);
        assert_eq!(shared_k(&[curve(3), curve(2)]).unwrap(), 2);
        assert_eq!(shared_k(&[]), Err(ClusterError::NoCurves));
    }

    #[test]
    fn linear_curve_picks_smallest_interior_k() {
        let ks = [2, 3, 4, 5, 6];
        let d = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert_eq!(ks[chord_knee(&ks, &d)], 3);
    }

    #[test]
    fn elbow_needs_three_feasible_k() {
        let err = elbow_select_k(&[0.0, 1.0, 1.0, 0.0, 2.0], (2, 8), 0).unwrap_err();
        assert!(matches!(err, ClusterError::ElbowUndefined { feasible: 2, .. }));
    }

    #[test]
    fn histogram_right_inclusive() {
        let h = histogram(&[0.0, 0.5, 1.0], 2, Some((0.0, 1.0))).unwrap();
        assert_eq!(h.counts, vec![1, 2]);
        assert_eq!(h.edges, vec![0.0, 0.5, 1.0]);
        let h = histogram(&[], 4, None).unwrap();
        assert_eq!(h.counts, vec![0; 4]);
        let h = histogram(&[-1.0, 0.2, 3.0], 2, Some((0.0, 1.0))).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 1);
    }
}

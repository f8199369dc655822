//! Shiftness quantification: an internal-trained classifier replayed on the
//! external set as the highest-anomaly groups are dropped, and a random
//! sampling baseline of matching size.

mod classifier;
mod metrics;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classifier::{build_network, train_classifier, Classifier, ClassifierConfig, ClassifierMeta, LabelMode};
pub use metrics::{compute_metrics, rank_auc, Averages, ClassMetrics, MetricSet, MetricsReport, MULTI_THRESHOLD};

use crate::cluster::ClusterAssignment;
use crate::data::{DataError, Dataset, Labels};
use crate::seed;

#[derive(Debug, Error)]
pub enum QuantError {
    #[error("classifier needs at least two classes")]
    SingleClass,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{0}")]
    Config(String),
    #[error("unknown label: {0}")]
    UnknownLabel(String),
    #[error("clusters do not match the dataset: {0}")]
    ClusterMismatch(String),
    #[error("invalid drop plan: {0}")]
    InvalidPlan(String),
    #[error("target size {target} for {class} exceeds its {available} samples")]
    TargetTooLarge { class: String, target: usize, available: usize },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Nn(#[from] shiftgate_nn::NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, QuantError>;

pub fn evaluate(g: &Classifier, ds: &Dataset) -> Result<MetricsReport> {
    let probs = g.predict_dataset(ds)?;
    compute_metrics(&probs, &ds.labels, &ds.class_names, g.label_mode())
}

/// Metrics on the samples at `indices` using precomputed predictions.
pub fn evaluate_subset(probs: &[Vec<f64>], ds: &Dataset, indices: &[usize], mode: LabelMode) -> Result<MetricsReport> {
    let sub_probs: Vec<Vec<f64>> = indices.iter().map(|&i| probs[i].clone()).collect();
    let labels = match &ds.labels {
        Labels::Single(v) => Labels::Single(indices.iter().map(|&i| v[i]).collect()),
        Labels::Multi(v) => Labels::Multi(indices.iter().map(|&i| v[i].clone()).collect()),
    };
    compute_metrics(&sub_probs, &labels, &ds.class_names, mode)
}

/// Number of highest-mean groups removed per class.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DropPlan(pub BTreeMap<String, usize>);

impl DropPlan {
    pub fn none(clusters: &[ClusterAssignment]) -> Self {
        DropPlan(clusters.iter().map(|c| (c.class_label.clone(), 0)).collect())
    }

    /// Drops all but `keep` groups in every class.
    pub fn keep(clusters: &[ClusterAssignment], keep: usize) -> Self {
        DropPlan(
            clusters
                .iter()
                .map(|c| (c.class_label.clone(), c.k.saturating_sub(keep)))
                .collect(),
        )
    }

    /// Every class named must be clustered and keep at least one group.
    /// Classes absent from the plan drop nothing.
    pub fn validate(&self, clusters: &[ClusterAssignment]) -> Result<()> {
        for (class, &drop) in &self.0 {
            let Some(c) = clusters.iter().find(|c| &c.class_label == class) else {
                return Err(QuantError::InvalidPlan(format!("unknown class {class}")));
            };
            if drop >= c.k {
                return Err(QuantError::InvalidPlan(format!(
                    "class {class} has {} groups; at most {} may be dropped",
                    c.k,
                    c.k - 1
                )));
            }
        }
        Ok(())
    }

    pub fn dropped(&self, class: &str) -> usize {
        self.0.get(class).copied().unwrap_or(0)
    }
}

/// Checks that the assignments partition the dataset by class.
pub fn check_partition(ds: &Dataset, clusters: &[ClusterAssignment]) -> Result<()> {
    let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
    for c in clusters {
        for id in c.members.iter().flatten() {
            if seen.insert(id.as_str(), c.class_label.as_str()).is_some() {
                return Err(QuantError::ClusterMismatch(format!("{id} appears in more than one group")));
            }
        }
    }
    if seen.len() != ds.len() {
        return Err(QuantError::ClusterMismatch(format!(
            "{} clustered ids for {} samples",
            seen.len(),
            ds.len()
        )));
    }
    let single = ds.single_labels().ok();
    for (i, id) in ds.sample_ids.iter().enumerate() {
        let Some(&class) = seen.get(id.as_str()) else {
            return Err(QuantError::ClusterMismatch(format!("{id} is in no group")));
        };
        if let Some(y) = single {
            if ds.class_names[y[i]] != class {
                return Err(QuantError::ClusterMismatch(format!(
                    "{id} is labelled {} but clustered under {class}",
                    ds.class_names[y[i]]
                )));
            }
        }
    }
    Ok(())
}

/// Dataset indices kept by `plan`, in dataset order.
pub fn retained_indices(ds: &Dataset, clusters: &[ClusterAssignment], plan: &DropPlan) -> Result<Vec<usize>> {
    plan.validate(clusters)?;
    let mut keep: BTreeSet<&str> = BTreeSet::new();
    for c in clusters {
        keep.extend(c.retained(c.k - plan.dropped(&c.class_label)));
    }
    Ok((0..ds.len()).filter(|&i| keep.contains(ds.sample_ids[i].as_str())).collect())
}

/// Samples retained per class under `plan`.
pub fn plan_counts(clusters: &[ClusterAssignment], plan: &DropPlan) -> BTreeMap<String, usize> {
    clusters
        .iter()
        .map(|c| {
            let keep = c.k - plan.dropped(&c.class_label);
            let n = c.group_order.iter().take(keep).map(|&g| c.members[g].len()).sum();
            (c.class_label.clone(), n)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropEntry {
    pub label: String,
    pub counts: BTreeMap<String, usize>,
    pub metrics: MetricsReport,
}

impl DropEntry {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DropSeries(pub Vec<DropEntry>);

impl DropSeries {
    pub fn entry(&self, label: &str) -> Option<&DropEntry> {
        self.0.iter().find(|e| e.label == label)
    }
}

pub fn top_label(j: usize) -> String {
    format!("TOP {j}")
}

/// Evaluates one plan from cached predictions.
pub fn evaluate_plan(
    probs: &[Vec<f64>],
    ds: &Dataset,
    clusters: &[ClusterAssignment],
    plan: &DropPlan,
    mode: LabelMode,
) -> Result<(BTreeMap<String, usize>, MetricsReport)> {
    let idx = retained_indices(ds, clusters, plan)?;
    Ok((plan_counts(clusters, plan), evaluate_subset(probs, ds, &idx, mode)?))
}

/// TOP k down to TOP 1 from cached predictions.
pub fn drop_series(probs: &[Vec<f64>], ds: &Dataset, clusters: &[ClusterAssignment], mode: LabelMode) -> Result<DropSeries> {
    check_partition(ds, clusters)?;
    let k = clusters.iter().map(|c| c.k).max().ok_or_else(|| QuantError::ClusterMismatch("no clusters".into()))?;
    if clusters.iter().any(|c| c.k != k) {
        return Err(QuantError::ClusterMismatch("classes were clustered with different k".into()));
    }
    let mut out = Vec::with_capacity(k);
    for j in (1..=k).rev() {
        let plan = DropPlan::keep(clusters, j);
        let (counts, metrics) = evaluate_plan(probs, ds, clusters, &plan, mode)?;
        out.push(DropEntry {
            label: top_label(j),
            counts,
            metrics,
        });
    }
    Ok(DropSeries(out))
}

pub fn drop_evaluate(g: &Classifier, external: &Dataset, clusters: &[ClusterAssignment]) -> Result<DropSeries> {
    let probs = g.predict_dataset(external)?;
    drop_series(&probs, external, clusters, g.label_mode())
}

/// Sorted indices of a per-class uniform sample without replacement.
pub fn random_indices(ds: &Dataset, target_sizes: &BTreeMap<String, usize>, seed_value: u64) -> Result<Vec<usize>> {
    let mut picked = Vec::new();
    for (class, &target) in target_sizes {
        let c = ds
            .class_index(class)
            .ok_or_else(|| QuantError::UnknownLabel(class.clone()))?;
        let members = ds.indices_of_class(c);
        if target > members.len() {
            return Err(QuantError::TargetTooLarge {
                class: class.clone(),
                target,
                available: members.len(),
            });
        }
        let mut rng = seed::stream(seed_value, &format!("random-baseline/{class}"));
        picked.extend(index::sample(&mut rng, members.len(), target).into_iter().map(|j| members[j]));
    }
    picked.sort_unstable();
    picked.dedup();
    Ok(picked)
}

pub fn random_baseline_from(
    probs: &[Vec<f64>],
    ds: &Dataset,
    target_sizes: &BTreeMap<String, usize>,
    seed_value: u64,
    mode: LabelMode,
) -> Result<MetricsReport> {
    let idx = random_indices(ds, target_sizes, seed_value)?;
    evaluate_subset(probs, ds, &idx, mode)
}

pub fn random_baseline(
    g: &Classifier,
    external: &Dataset,
    target_sizes: &BTreeMap<String, usize>,
    seed_value: u64,
) -> Result<MetricsReport> {
    let probs = g.predict_dataset(external)?;
    random_baseline_from(&probs, external, target_sizes, seed_value, g.label_mode())
}

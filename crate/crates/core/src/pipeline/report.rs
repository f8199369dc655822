use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::artifacts::{ClusterArtifact, KSource, OtddScenario, Quantification};
use super::config::PipelineConfig;
use super::{PipelineError, Result};
use crate::cluster::{histogram, ClusterAssignment, Histogram, ScoreTable};
use crate::data::DatasetManifest;
use crate::otdd::OtddResult;
use crate::quant::{rank_auc, top_label, LabelMode};

pub const REPORT_VERSION: &str = "1.0";
pub const REPORT_SCHEMA: &str = include_str!("../../schema/report.schema.json");

/// Quantile at which the truncated histogram is cut.
const TRUNCATE_AT: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub class_label: String,
    pub n: usize,
    pub mean: f64,
    pub stdev: f64,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub histogram: Histogram,
    /// Same bins count over `[min, 95th percentile]`.
    pub histogram_truncated: Histogram,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flagged: Option<usize>,
    /// AUROC of `s_total` separating flagged from clean samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flagged_auroc: Option<f64>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Per-class summaries of the external score table. `flags` maps sample ids
/// to ground-truth corruption when it is known.
pub fn summarize_scores(
    table: &ScoreTable,
    class_names: &[String],
    bins: usize,
    flags: Option<&BTreeMap<String, bool>>,
) -> Result<Vec<ClassScores>> {
    let mut out = Vec::new();
    for class in class_names {
        let rows: Vec<_> = table.class_rows(class).collect();
        if rows.is_empty() {
            continue;
        }
        let scores: Vec<f64> = rows.iter().map(|r| r.s_total).collect();
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        let n = scores.len();
        let mean = scores.iter().sum::<f64>() / n as f64;
        let stdev = if n > 1 {
            (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let (min, max) = (sorted[0], sorted[n - 1]);
        let cut = quantile(&sorted, TRUNCATE_AT);
        let truncated = if cut > min {
            histogram(&scores, bins, Some((min, cut)))
        } else {
            histogram(&scores, bins, None)
        };
        let (flagged, flagged_auroc) = match flags {
            Some(f) => {
                let positive: Vec<bool> = rows.iter().map(|r| f.get(&r.sample_id).copied().unwrap_or(false)).collect();
                (Some(positive.iter().filter(|&&b| b).count()), rank_auc(&scores, &positive))
            }
            None => (None, None),
        };
        out.push(ClassScores {
            class_label: class.clone(),
            n,
            mean,
            stdev,
            min,
            median: quantile(&sorted, 0.5),
            max,
            histogram: histogram(&scores, bins, None)?,
            histogram_truncated: truncated?,
            flagged,
            flagged_auroc,
        });
    }
    Ok(out)
}

/// Report key of the OTDD scenario that keeps `j` groups per class.
pub fn otdd_key(j: usize) -> String {
    format!("TOP_{j}")
}

/// Scenario list as the report's keyed map.
pub fn keyed_otdd(scenarios: &[OtddScenario]) -> BTreeMap<String, OtddResult> {
    scenarios
        .iter()
        .map(|s| (s.label.replace(' ', "_"), s.result.clone()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub datasets: BTreeMap<String, DatasetManifest>,
    /// SHA-256 of every stage artifact the report was built from.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: String,
    pub generator: String,
    pub config: PipelineConfig,
    pub label_mode: LabelMode,
    pub class_names: Vec<String>,
    pub k: usize,
    pub k_source: KSource,
    pub scores: Vec<ClassScores>,
    pub clusters: Vec<ClusterAssignment>,
    pub quantification: Quantification,
    /// Keyed by scenario, `TOP_k` down to `TOP_1`.
    pub otdd: BTreeMap<String, OtddResult>,
    /// Multi-label runs: class, then scenario.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub otdd_per_class: Option<BTreeMap<String, BTreeMap<String, OtddResult>>>,
    pub provenance: Provenance,
    /// Wall-clock seconds per stage; the only non-deterministic block.
    pub timings: BTreeMap<String, f64>,
}

impl Report {
    pub fn cluster(&self, class: &str) -> Option<&ClusterAssignment> {
        self.clusters.iter().find(|c| c.class_label == class)
    }

    pub fn cluster_artifact(&self) -> ClusterArtifact {
        ClusterArtifact {
            k: self.k,
            k_source: self.k_source,
            assignments: self.clusters.clone(),
        }
    }

    /// Cluster ids must all be external samples, and each TOP-j entry must
    /// count exactly the j lowest groups of every class.
    pub fn check_consistency(&self, external_ids: &[String]) -> Result<()> {
        let known: BTreeSet<&str> = external_ids.iter().map(String::as_str).collect();
        for c in &self.clusters {
            if let Some(id) = c.members.iter().flatten().find(|id| !known.contains(id.as_str())) {
                return Err(PipelineError::Inconsistent(format!("cluster member {id} is not an external sample")));
            }
        }
        let keys: BTreeSet<String> = (1..=self.k).map(otdd_key).collect();
        let mut otdd_maps: Vec<(&str, &BTreeMap<String, OtddResult>)> = vec![("otdd", &self.otdd)];
        otdd_maps.extend(self.otdd_per_class.iter().flatten().map(|(c, m)| (c.as_str(), m)));
        for (name, map) in otdd_maps {
            if map.keys().cloned().collect::<BTreeSet<_>>() != keys {
                return Err(PipelineError::Inconsistent(format!("{name} scenarios {:?} for k={}", map.keys(), self.k)));
            }
        }
        for j in 1..=self.k {
            let label = top_label(j);
            let entry = self
                .quantification
                .series
                .entry(&label)
                .ok_or_else(|| PipelineError::Inconsistent(format!("missing {label}")))?;
            for c in &self.clusters {
                let sizes = c.group_sizes();
                let want: usize = c.group_order.iter().take(j).map(|&g| sizes[g]).sum();
                if entry.counts.get(&c.class_label) != Some(&want) {
                    return Err(PipelineError::Inconsistent(format!(
                        "{label} counts {:?} for {} but its groups hold {want}",
                        entry.counts.get(&c.class_label),
                        c.class_label
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn otdd_scenario(&self, j: usize) -> Option<&OtddResult> {
        self.otdd.get(&otdd_key(j))
    }

    /// The JSON value with the timing block removed.
    pub fn without_timings(value: &serde_json::Value) -> serde_json::Value {
        let mut v = value.clone();
        if let Some(obj) = v.as_object_mut() {
            obj.remove("timings");
        }
        v
    }
}

pub fn validate_schema(value: &serde_json::Value) -> Result<()> {
    let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA).expect("bundled schema is valid JSON");
    let compiled = jsonschema::JSONSchema::compile(&schema).expect("bundled schema compiles");
    if let Err(errors) = compiled.validate(value) {
        let problems: Vec<String> = errors.map(|e| format!("{}: {e}", e.instance_path)).collect();
        return Err(PipelineError::Inconsistent(format!("report fails its schema: {}", problems.join("; "))));
    }
    Ok(())
}

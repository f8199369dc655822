//! Precision / recall / F1 / AUC from raw classifier outputs.

use serde::{Deserialize, Serialize};

use super::{LabelMode, QuantError, Result};
use crate::data::Labels;

pub const MULTI_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSet {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
}

impl MetricSet {
    fn scaled_sum(items: &[(f64, MetricSet)]) -> MetricSet {
        let total: f64 = items.iter().map(|(w, _)| w).sum();
        if total <= 0.0 {
            return MetricSet::default();
        }
        let mut out = MetricSet::default();
        for (w, m) in items {
            out.precision += w * m.precision / total;
            out.recall += w * m.recall / total;
            out.f1 += w * m.f1 / total;
            out.auc += w * m.auc / total;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_label: String,
    pub support: usize,
    #[serde(flatten)]
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    #[serde(rename = "macro")]
    pub macro_avg: MetricSet,
    pub weighted: MetricSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub micro: Option<MetricSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<MetricSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_images: usize,
    /// Top-1 accuracy (single mode) or exact-match ratio (multi mode).
    pub accuracy: f64,
    /// `confusion[true][predicted]`, single mode only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<Vec<Vec<u64>>>,
    pub per_class: Vec<ClassMetrics>,
    pub averages: Averages,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl MetricsReport {
    pub fn class(&self, name: &str) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|c| c.class_label == name)
    }

    pub fn macro_f1(&self) -> f64 {
        self.averages.macro_avg.f1
    }
}

fn ratio(num: f64, den: f64, what: &str, class: &str, warnings: &mut Vec<String>) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        warnings.push(format!("{what} undefined for {class}; reported as 0"));
        0.0
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Mann-Whitney AUC of `scores` for the positives against the negatives,
/// with mid-ranks for ties. `None` when either side is empty.
pub fn rank_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if positive[idx] {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Metrics from per-sample class scores (`probs[i][c]`) and ground truth.
pub fn compute_metrics(probs: &[Vec<f64>], labels: &Labels, class_names: &[String], mode: LabelMode) -> Result<MetricsReport> {
    let n = probs.len();
    let c = class_names.len();
    if labels.len() != n {
        return Err(QuantError::Invalid(format!("{n} predictions for {} labels", labels.len())));
    }
    if let Some(row) = probs.iter().find(|p| p.len() != c) {
        return Err(QuantError::Invalid(format!("prediction of width {} for {c} classes", row.len())));
    }
    match (mode, labels) {
        (LabelMode::Single, Labels::Single(y)) => {
            if let Some(&bad) = y.iter().find(|&&l| l >= c) {
                return Err(QuantError::UnknownLabel(format!("class index {bad}")));
            }
            Ok(single(probs, y, class_names))
        }
        (LabelMode::Multi, Labels::Multi(y)) => {
            if y.iter().any(|r| r.len() != c) {
                return Err(QuantError::UnknownLabel("multi-hot row width differs from class count".into()));
            }
            Ok(multi(probs, y, class_names))
        }
        (LabelMode::Single, Labels::Multi(_)) => Err(QuantError::Invalid("single-label classifier on multi-hot labels".into())),
        (LabelMode::Multi, Labels::Single(_)) => Err(QuantError::Invalid("multi-label classifier on single labels".into())),
    }
}

fn single(probs: &[Vec<f64>], y: &[usize], class_names: &[String]) -> MetricsReport {
    let c = class_names.len();
    let n = y.len();
    let mut confusion = vec![vec![0u64; c]; c];
    for (p, &t) in probs.iter().zip(y) {
        confusion[t][argmax(p)] += 1;
    }
    let mut warnings = Vec::new();
    let mut per_class = Vec::with_capacity(c);
    for k in 0..c {
        let name = &class_names[k];
        let tp = confusion[k][k] as f64;
        let support: u64 = confusion[k].iter().sum();
        let predicted: u64 = confusion.iter().map(|row| row[k]).sum();
        let precision = ratio(tp, predicted as f64, "precision", name, &mut warnings);
        let recall = ratio(tp, support as f64, "recall", name, &mut warnings);
        let scores: Vec<f64> = probs.iter().map(|p| p[k]).collect();
        let positive: Vec<bool> = y.iter().map(|&t| t == k).collect();
        let auc = rank_auc(&scores, &positive).unwrap_or_else(|| {
            warnings.push(format!("auc undefined for {name}; reported as 0"));
            0.0
        });
        per_class.push(ClassMetrics {
            class_label: name.clone(),
            support: support as usize,
            metrics: MetricSet {
                precision,
                recall,
                f1: f1(precision, recall),
                auc,
            },
        });
    }
    let correct: u64 = (0..c).map(|k| confusion[k][k]).sum();
    MetricsReport {
        n_images: n,
        accuracy: if n > 0 { correct as f64 / n as f64 } else { 0.0 },
        confusion: Some(confusion),
        averages: Averages {
            macro_avg: MetricSet::scaled_sum(&per_class.iter().map(|m| (1.0, m.metrics)).collect::<Vec<_>>()),
            weighted: MetricSet::scaled_sum(&per_class.iter().map(|m| (m.support as f64, m.metrics)).collect::<Vec<_>>()),
            micro: None,
            samples: None,
        },
        per_class,
        warnings,
    }
}

fn multi(probs: &[Vec<f64>], y: &[Vec<u8>], class_names: &[String]) -> MetricsReport {
    let c = class_names.len();
    let n = y.len();
    let pred: Vec<Vec<bool>> = probs.iter().map(|p| p.iter().map(|&v| v >= MULTI_THRESHOLD).collect()).collect();
    let mut warnings = Vec::new();
    let mut per_class = Vec::with_capacity(c);
    let (mut tp_all, mut fp_all, mut fn_all) = (0.0, 0.0, 0.0);
    for k in 0..c {
        let name = &class_names[k];
        let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
        for i in 0..n {
            match (pred[i][k], y[i][k] == 1) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fneg += 1.0,
                _ => {}
            }
        }
        tp_all += tp;
        fp_all += fp;
        fn_all += fneg;
        let precision = ratio(tp, tp + fp, "precision", name, &mut warnings);
        let recall = ratio(tp, tp + fneg, "recall", name, &mut warnings);
        let scores: Vec<f64> = probs.iter().map(|p| p[k]).collect();
        let positive: Vec<bool> = y.iter().map(|r| r[k] == 1).collect();
        let auc = rank_auc(&scores, &positive).unwrap_or_else(|| {
            warnings.push(format!("auc undefined for {name}; reported as 0"));
            0.0
        });
        per_class.push(ClassMetrics {
            class_label: name.clone(),
            support: (tp + fneg) as usize,
            metrics: MetricSet {
                precision,
                recall,
                f1: f1(precision, recall),
                auc,
            },
        });
    }

    let micro_p = ratio(tp_all, tp_all + fp_all, "micro precision", "all classes", &mut warnings);
    let micro_r = ratio(tp_all, tp_all + fn_all, "micro recall", "all classes", &mut warnings);
    let flat_scores: Vec<f64> = probs.iter().flatten().copied().collect();
    let flat_pos: Vec<bool> = y.iter().flatten().map(|&b| b == 1).collect();
    let micro_auc = rank_auc(&flat_scores, &flat_pos).unwrap_or(0.0);

    let mut sample_sets = Vec::with_capacity(n);
    let mut sample_aucs = Vec::new();
    let mut exact = 0usize;
    for i in 0..n {
        let tp = (0..c).filter(|&k| pred[i][k] && y[i][k] == 1).count() as f64;
        let np = pred[i].iter().filter(|&&b| b).count() as f64;
        let nt = y[i].iter().filter(|&&b| b == 1).count() as f64;
        if (0..c).all(|k| pred[i][k] == (y[i][k] == 1)) {
            exact += 1;
        }
        let p = if np > 0.0 { tp / np } else { 0.0 };
        let r = if nt > 0.0 { tp / nt } else { 0.0 };
        sample_sets.push((1.0, MetricSet { precision: p, recall: r, f1: f1(p, r), auc: 0.0 }));
        let pos: Vec<bool> = y[i].iter().map(|&b| b == 1).collect();
        if let Some(a) = rank_auc(&probs[i], &pos) {
            sample_aucs.push(a);
        }
    }
    if sample_aucs.len() < n {
        warnings.push(format!(
            "samples auc skips {} rows whose labels are all positive or all negative",
            n - sample_aucs.len()
        ));
    }
    let mut samples = MetricSet::scaled_sum(&sample_sets);
    samples.auc = if sample_aucs.is_empty() {
        0.0
    } else {
        sample_aucs.iter().sum::<f64>() / sample_aucs.len() as f64
    };

    MetricsReport {
        n_images: n,
        accuracy: if n > 0 { exact as f64 / n as f64 } else { 0.0 },
        confusion: None,
        averages: Averages {
            macro_avg: MetricSet::scaled_sum(&per_class.iter().map(|m| (1.0, m.metrics)).collect::<Vec<_>>()),
            weighted: MetricSet::scaled_sum(&per_class.iter().map(|m| (m.support as f64, m.metrics)).collect::<Vec<_>>()),
            micro: Some(MetricSet {
                precision: micro_p,
                recall: micro_r,
                f1: f1(micro_p, micro_r),
                auc: micro_auc,
            }),
            samples: Some(samples),
        },
        per_class,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_edge_cases() {
        assert_eq!(rank_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]), Some(1.0));
        assert_eq!(rank_auc(&[0.5; 4], &[false, true, false, true]), Some(0.5));
        assert_eq!(rank_auc(&[0.9, 0.1], &[false, true]), Some(0.0));
        assert_eq!(rank_auc(&[0.1], &[true]), None);
    }

    #[test]
    fn auc_counts_pairs() {
        // positives 0.4, 0.8 vs negatives 0.4, 0.6: pairs (0.4 v 0.4) tie, (0.4 v 0.6) loss, 0.8 wins both
        let a = rank_auc(&[0.4, 0.8, 0.4, 0.6], &[true, true, false, false]).unwrap();
        assert!((a - 2.5 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn argmax_ties_take_first() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }
}

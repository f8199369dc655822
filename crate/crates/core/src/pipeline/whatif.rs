use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::artifacts::{load_dataset, primary_labels, require, Layout, EXTERNAL, INTERNAL_TRAIN};
use super::report::Report;
use super::{otdd_for_plan, read_report, stage_otdd_config, Result};
use crate::cluster::ClusterAssignment;
use crate::data::Dataset;
use crate::otdd::{LabeledFeatures, OtddConfig, OtddResult, OtddSide};
use crate::quant::{evaluate_plan, Classifier, DropPlan, LabelMode, MetricsReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatifResult {
    /// The plan with every clustered class spelled out.
    pub plan: DropPlan,
    pub counts: BTreeMap<String, usize>,
    pub metrics: MetricsReport,
    pub otdd: OtddResult,
    pub otdd_rounds: usize,
    pub otdd_sample_per_round: usize,
}

/// Validates `plan` and fills in zero for every clustered class it omits.
pub fn canonical_plan(plan: &DropPlan, clusters: &[ClusterAssignment]) -> Result<DropPlan> {
    plan.validate(clusters)?;
    Ok(DropPlan(
        clusters
            .iter()
            .map(|c| (c.class_label.clone(), plan.dropped(&c.class_label)))
            .collect(),
    ))
}

/// Everything a what-if evaluation needs, loaded once from a finished run.
pub struct WhatifContext {
    pub report: Report,
    pub external: Dataset,
    pub probs: Vec<Vec<f64>>,
    pub label_mode: LabelMode,
    pub internal: OtddSide,
    pub external_features: LabeledFeatures,
    pub otdd_config: OtddConfig,
}

impl WhatifContext {
    pub fn load(dir: &Path) -> Result<Self> {
        let layout = Layout::new(dir);
        let report = read_report(dir)?;
        require(&layout.classifier().join("classifier.json"), "classifier", "train")?;
        let g = Classifier::load(&layout.classifier())?;
        let external = load_dataset(&layout, EXTERNAL)?;
        let train = load_dataset(&layout, INTERNAL_TRAIN)?;
        let otdd_config = OtddConfig {
            rounds: report.config.whatif.rounds,
            sample_per_round: report.config.whatif.sample_per_round,
            ..stage_otdd_config(&report.config)
        };
        let internal = OtddSide::new(LabeledFeatures::with_labels(&train, primary_labels(&train)?)?, otdd_config.reg)?;
        let external_features = LabeledFeatures::with_labels(&external, primary_labels(&external)?)?;
        Ok(Self {
            probs: g.predict_dataset(&external)?,
            label_mode: g.label_mode(),
            report,
            external,
            internal,
            external_features,
            otdd_config,
        })
    }

    pub fn clusters(&self) -> &[ClusterAssignment] {
        &self.report.clusters
    }

    pub fn evaluate(&self, plan: &DropPlan) -> Result<WhatifResult> {
        let plan = canonical_plan(plan, self.clusters())?;
        let (counts, metrics) = evaluate_plan(&self.probs, &self.external, self.clusters(), &plan, self.label_mode)?;
        let otdd = otdd_for_plan(
            &self.internal,
            &self.external_features,
            &self.external,
            self.clusters(),
            &plan,
            &self.otdd_config,
        )?;
        Ok(WhatifResult {
            otdd_rounds: otdd.rounds.len(),
            otdd_sample_per_round: otdd.rounds.first().map_or(0, |r| r.n),
            plan,
            counts,
            metrics,
            otdd,
        })
    }
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};
use crate::anomaly::AnomalyTrainConfig;
use crate::cluster::DEFAULT_K_RANGE;
use crate::data::{ShiftSpec, SHAPE_FAMILIES};
use crate::otdd::OtddConfig;
use crate::quant::ClassifierConfig;

/// The run description. `seed` is mandatory; every stage derives its own
/// seeds from it, so the `seed` fields of the nested configs are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Output directory. Excluded from the report echo.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    #[serde(default)]
    pub anomaly: AnomalyTrainConfig,
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub otdd: OtddConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub whatif: WhatifConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataConfig {
    Synth(SynthData),
    Files(FileData),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthData {
    pub classes: usize,
    pub image_size: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub external_per_class: usize,
    pub shift: ShiftSpec,
}

impl Default for SynthData {
    fn default() -> Self {
        Self {
            classes: 6,
            image_size: 32,
            train_per_class: 300,
            test_per_class: 100,
            external_per_class: 200,
            shift: ShiftSpec {
                gaussian_noise: 0.3,
                occlusion: 0.3,
                label_noise: 1.0,
                affected_fraction: 0.25,
                ..ShiftSpec::default()
            },
        }
    }
}

/// An image IDX file plus labels: an IDX label file, or a CSV of multi-hot
/// rows when the path ends in `.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub images: PathBuf,
    pub labels: PathBuf,
}

impl DatasetPaths {
    pub fn is_multi(&self) -> bool {
        self.labels.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileData {
    pub internal: DatasetPaths,
    pub external: DatasetPaths,
    #[serde(default)]
    pub class_names: Option<Vec<String>>,
    /// Share of the internal set held out for the classifier sanity check.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Square size both sets are resized to; `None` keeps the stored size.
    #[serde(default)]
    pub image_size: Option<usize>,
}

fn default_test_fraction() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub k_range: (usize, usize),
    /// Skips the elbow and uses this k for every class.
    pub k_override: Option<usize>,
    pub histogram_bins: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k_range: DEFAULT_K_RANGE,
            k_override: None,
            histogram_bins: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub seeds: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { seeds: 10 }
    }
}

/// Reduced OTDD settings for interactive what-if requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WhatifConfig {
    pub rounds: usize,
    pub sample_per_round: usize,
}

impl Default for WhatifConfig {
    fn default() -> Self {
        Self {
            rounds: 5,
            sample_per_round: 100,
        }
    }
}

impl PipelineConfig {
    /// The default synthetic benchmark.
    pub fn benchmark(seed: u64) -> Self {
        Self {
            seed,
            out: None,
            data: DataConfig::Synth(SynthData::default()),
            anomaly: AnomalyTrainConfig::default(),
            cluster: ClusterConfig::default(),
            classifier: ClassifierConfig::default(),
            otdd: OtddConfig::default(),
            baseline: BaselineConfig::default(),
            whatif: WhatifConfig::default(),
        }
    }

    /// Parses a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(vec![format!("{}: {e}", path.display())]))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(out) = &mut self.out {
            fix(out);
        }
        if let DataConfig::Files(f) = &mut self.data {
            for d in [&mut f.internal, &mut f.external] {
                fix(&mut d.images);
                fix(&mut d.labels);
            }
        }
    }

    pub fn with_overrides(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        if out.is_some() {
            self.out = out;
        }
        self
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| PipelineError::Config(vec!["no output directory (set `out` or pass --out)".into()]))
    }

    pub fn is_multi_label(&self) -> bool {
        matches!(&self.data, DataConfig::Files(f) if f.internal.is_multi())
    }

    /// Every problem at once.
    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        if self.out.is_none() {
            p.push("no output directory (set `out` or pass --out)".to_string());
        }
        let batch = self.anomaly.batch_size;
        match &self.data {
            DataConfig::Synth(s) => {
                if !(2..=SHAPE_FAMILIES.len()).contains(&s.classes) {
                    p.push(format!("data.classes must be in 2..={}, got {}", SHAPE_FAMILIES.len(), s.classes));
                }
                if s.image_size < 8 || s.image_size % 4 != 0 {
                    p.push(format!("data.image_size must be a multiple of 4 and at least 8, got {}", s.image_size));
                }
                if s.train_per_class < 2 * batch.max(1) {
                    p.push(format!(
                        "data.train_per_class {} is below two anomaly batches ({})",
                        s.train_per_class,
                        2 * batch
                    ));
                }
                if s.test_per_class == 0 {
                    p.push("data.test_per_class must be positive".into());
                }
                if s.external_per_class == 0 {
                    p.push("data.external_per_class must be positive".into());
                }
                if let Err(e) = s.shift.validate() {
                    p.push(format!("data.shift: {e}"));
                }
            }
            DataConfig::Files(f) => {
                for (what, d) in [("internal", &f.internal), ("external", &f.external)] {
                    for path in [&d.images, &d.labels] {
                        if !path.is_file() {
                            p.push(format!("data.{what}: {} does not exist", path.display()));
                        }
                    }
                }
                if f.internal.is_multi() != f.external.is_multi() {
                    p.push("data.internal and data.external must both use CSV labels or both IDX labels".into());
                }
                if f.internal.is_multi() && f.class_names.is_none() {
                    p.push("data.class_names is required with CSV labels".into());
                }
                if !(f.test_fraction > 0.0 && f.test_fraction < 1.0) {
                    p.push(format!("data.test_fraction must be in (0, 1), got {}", f.test_fraction));
                }
                if let Some(s) = f.image_size {
                    if s < 8 || s % 4 != 0 {
                        p.push(format!("data.image_size must be a multiple of 4 and at least 8, got {s}"));
                    }
                }
            }
        }
        if let Err(e) = self.anomaly.validate() {
            p.push(format!("anomaly: {e}"));
        }
        let (lo, hi) = self.cluster.k_range;
        match self.cluster.k_override {
            Some(0) => p.push("cluster.k_override must be positive".into()),
            Some(_) => {}
            None if lo == 0 || hi < lo + 2 => {
                p.push(format!("cluster.k_range {lo}..={hi} must start at 1 or more and span at least 3 values"))
            }
            None => {}
        }
        if self.cluster.histogram_bins == 0 {
            p.push("cluster.histogram_bins must be positive".into());
        }
        if let Err(e) = self.classifier.validate() {
            p.push(format!("classifier: {e}"));
        }
        if let Err(e) = self.otdd.validate() {
            p.push(format!("otdd: {e}"));
        }
        if self.baseline.seeds == 0 {
            p.push("baseline.seeds must be positive".into());
        }
        if self.whatif.rounds == 0 || self.whatif.sample_per_round == 0 {
            p.push("whatif rounds and sample_per_round must be positive".into());
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::Config(p))
        }
    }
}

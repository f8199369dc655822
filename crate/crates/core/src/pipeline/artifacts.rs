//! On-disk layout of a run directory and the typed stage outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PipelineError, Result};
use crate::cluster::ClusterAssignment;
use crate::data::{
    load_labels_csv, read_idx_images, read_idx_labels, write_idx, write_idx_images, write_labels_csv, Dataset, DatasetManifest, Labels,
    ShiftKind,
};
use crate::otdd::{OtddConfig, OtddResult};
use crate::quant::{DropSeries, LabelMode, MetricsReport};

pub const INTERNAL_TRAIN: &str = "internal_train";
pub const INTERNAL_TEST: &str = "internal_test";
pub const EXTERNAL: &str = "external";
pub const LOCK_FILE: &str = ".shiftgate.lock";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn images(&self, name: &str) -> PathBuf {
        self.data_dir().join(format!("{name}.images.idx"))
    }

    pub fn idx_labels(&self, name: &str) -> PathBuf {
        self.data_dir().join(format!("{name}.labels.idx"))
    }

    pub fn csv_labels(&self, name: &str) -> PathBuf {
        self.data_dir().join(format!("{name}.labels.csv"))
    }

    pub fn manifest(&self, name: &str) -> PathBuf {
        self.data_dir().join(format!("{name}.manifest.json"))
    }

    pub fn flags(&self) -> PathBuf {
        self.data_dir().join("external_flags.json")
    }

    pub fn detectors(&self) -> PathBuf {
        self.root.join("detectors")
    }

    pub fn classifier(&self) -> PathBuf {
        self.root.join("classifier")
    }

    pub fn scores(&self) -> PathBuf {
        self.root.join("scores.json")
    }

    pub fn clusters(&self) -> PathBuf {
        self.root.join("clusters.json")
    }

    pub fn quantification(&self) -> PathBuf {
        self.root.join("quantification.json")
    }

    pub fn otdd(&self) -> PathBuf {
        self.root.join("otdd.json")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn timings(&self) -> PathBuf {
        self.root.join("timings.json")
    }

    pub fn thumbs(&self) -> PathBuf {
        self.root.join("thumbs")
    }

    pub fn thumb(&self, sample_id: &str) -> PathBuf {
        self.thumbs().join(format!("{sample_id}.pgm"))
    }

    pub fn lock(&self) -> PathBuf {
        self.root.join(LOCK_FILE)
    }
}

/// Fails with the command that produces `path` when it is absent.
pub fn require(path: &Path, what: &'static str, command: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::MissingArtifact { what, command })
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| PipelineError::Corrupt(format!("{}: {e}", path.display())))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

/// Stores `ds` under `name`. Ids become positional (`<name>-00000`) and
/// pixels are quantised to bytes, so the returned dataset is exactly what
/// [`load_dataset`] will read back.
pub fn save_dataset(layout: &Layout, ds: &Dataset, name: &str) -> Result<Dataset> {
    std::fs::create_dir_all(layout.data_dir())?;
    let images = layout.images(name);
    let (idx_labels, csv_labels) = (layout.idx_labels(name), layout.csv_labels(name));
    match &ds.labels {
        Labels::Single(_) => {
            write_idx(ds, &images, &idx_labels)?;
            remove_if_present(&csv_labels)?;
        }
        Labels::Multi(rows) => {
            write_idx_images(&ds.images, &images)?;
            remove_if_present(&idx_labels)?;
            write_labels_csv(&csv_labels, &ds.class_names, rows)?;
        }
    }
    let mut stored = read_stored(layout, name, &ds.class_names, matches!(ds.labels, Labels::Multi(_)))?;
    stored.name = name.to_string();
    write_json(&layout.manifest(name), &stored.manifest())?;
    Ok(stored)
}

fn remove_if_present(path: &Path) -> Result<()> {
    match std::fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
        _ => Ok(()),
    }
}

fn read_stored(layout: &Layout, name: &str, class_names: &[String], multi: bool) -> Result<Dataset> {
    let images = read_idx_images(&layout.images(name))?;
    let labels = if multi {
        Labels::Multi(load_labels_csv(&layout.csv_labels(name), class_names)?)
    } else {
        Labels::Single(read_idx_labels(&layout.idx_labels(name))?)
    };
    let ds = Dataset {
        name: name.to_string(),
        sample_ids: (0..images.len()).map(|i| format!("{name}-{i:05}")).collect(),
        images,
        labels,
        class_names: class_names.to_vec(),
    };
    ds.validate()?;
    Ok(ds)
}

/// Loads a stored dataset and checks it against its manifest.
pub fn load_dataset(layout: &Layout, name: &str) -> Result<Dataset> {
    require(&layout.manifest(name), "data", "synth")?;
    let manifest: DatasetManifest = read_json(&layout.manifest(name))?;
    let multi = layout.csv_labels(name).exists();
    let ds = read_stored(layout, name, &manifest.class_names, multi)?;
    if ds.sha256() != manifest.sha256 {
        return Err(PipelineError::Corrupt(format!("{name} does not match its manifest hash")));
    }
    Ok(ds)
}

pub fn read_manifest(layout: &Layout, name: &str) -> Result<DatasetManifest> {
    require(&layout.manifest(name), "data", "synth")?;
    read_json(&layout.manifest(name))
}

/// Class each sample is filed under: its label, or for multi-hot rows the
/// first positive class.
pub fn primary_labels(ds: &Dataset) -> Result<Vec<usize>> {
    match &ds.labels {
        Labels::Single(v) => Ok(v.clone()),
        Labels::Multi(rows) => rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.iter()
                    .position(|&b| b == 1)
                    .ok_or_else(|| PipelineError::Runtime(format!("{} has no positive class", ds.sample_ids[i])))
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagEntry {
    pub sample_id: String,
    pub flagged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ShiftKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KSource {
    Elbow,
    Override,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterArtifact {
    pub k: usize,
    pub k_source: KSource,
    pub assignments: Vec<ClusterAssignment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRun {
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

/// Random subsets matching one TOP-j entry's per-class counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomBaseline {
    pub label: String,
    pub counts: BTreeMap<String, usize>,
    pub runs: Vec<BaselineRun>,
    pub mean_accuracy: f64,
    pub mean_macro_f1: f64,
    /// Seeds whose random accuracy falls strictly below the TOP-j accuracy.
    pub wins: usize,
    /// One-sided sign-test p-value for `wins` out of `runs.len()`.
    pub sign_test_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantification {
    pub label_mode: LabelMode,
    /// Classifier on the held-out internal split.
    pub internal_test: MetricsReport,
    pub series: DropSeries,
    pub random_baseline: Vec<RandomBaseline>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OtddScenario {
    pub label: String,
    pub counts: BTreeMap<String, usize>,
    pub result: OtddResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OtddArtifact {
    pub config: OtddConfig,
    pub scenarios: Vec<OtddScenario>,
    /// Multi-label runs only: each class against its own internal samples,
    /// dropping that class's groups alone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class: Option<BTreeMap<String, Vec<OtddScenario>>>,
}

impl OtddArtifact {
    pub fn scenario(&self, label: &str) -> Option<&OtddScenario> {
        self.scenarios.iter().find(|s| s.label == label)
    }
}

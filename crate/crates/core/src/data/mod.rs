//! Datasets, file formats, the synthetic shape benchmark, and shift injection.

mod csv_labels;
mod idx;
mod resize;
mod shift;
mod split;
mod synth;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use shiftgate_nn::Tensor;
use thiserror::Error;

pub use csv_labels::{load_labels_csv, write_labels_csv};
pub use idx::{load_idx, read_idx_images, read_idx_labels, write_idx, write_idx_images};
pub use resize::{resize_bilinear, resize_dataset};
pub use shift::{apply_shift, ShiftKind, ShiftOutcome, ShiftSpec};
pub use split::split;
pub use synth::{synth_generate, SHAPE_FAMILIES};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("image {index} has shape {actual:?}, expected {expected:?}")]
    ShapeMismatch {
        index: usize,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("invalid shift spec: {0}")]
    InvalidShift(String),
    #[error("invalid split fractions: {0}")]
    InvalidSplit(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    /// One class index per sample.
    Single(Vec<usize>),
    /// Multi-hot rows, one entry per class.
    Multi(Vec<Vec<u8>>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Single(v) => v.len(),
            Labels::Multi(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn subset(&self, indices: &[usize]) -> Labels {
        match self {
            Labels::Single(v) => Labels::Single(indices.iter().map(|&i| v[i]).collect()),
            Labels::Multi(v) => Labels::Multi(indices.iter().map(|&i| v[i].clone()).collect()),
        }
    }
}

/// Images (`[h, w, c]`, values in `[0, 1]`) with labels and stable ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub images: Vec<Tensor>,
    pub labels: Labels,
    pub sample_ids: Vec<String>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn empty(name: impl Into<String>, class_names: Vec<String>) -> Self {
        Self {
            name: name.into(),
            images: Vec::new(),
            labels: Labels::Single(Vec::new()),
            sample_ids: Vec::new(),
            class_names,
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_shape(&self) -> Option<&[usize]> {
        self.images.first().map(|t| t.shape())
    }

    pub fn single_labels(&self) -> Result<&[usize]> {
        match &self.labels {
            Labels::Single(v) => Ok(v),
            Labels::Multi(_) => Err(DataError::Invalid(format!(
                "dataset {} has multi-hot labels where single labels are required",
                self.name
            ))),
        }
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    /// Indices of samples whose single label is `class`.
    pub fn indices_of_class(&self, class: usize) -> Vec<usize> {
        match &self.labels {
            Labels::Single(v) => (0..v.len()).filter(|&i| v[i] == class).collect(),
            Labels::Multi(v) => (0..v.len()).filter(|&i| v[i].get(class) == Some(&1)).collect(),
        }
    }

    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Dataset {
        Dataset {
            name: name.into(),
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: self.labels.subset(indices),
            sample_ids: indices.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            class_names: self.class_names.clone(),
        }
    }

    /// Checks the parallel-array, label-range, shape, and pixel-range invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.images.len();
        if self.labels.len() != n {
            return Err(DataError::CountMismatch {
                images: n,
                labels: self.labels.len(),
            });
        }
        if self.sample_ids.len() != n {
            return Err(DataError::Invalid(format!(
                "{} sample ids for {n} images",
                self.sample_ids.len()
            )));
        }
        let classes = self.class_names.len();
        match &self.labels {
            Labels::Single(v) => {
                if let Some(&label) = v.iter().find(|&&l| l >= classes) {
                    return Err(DataError::LabelOutOfRange { label, classes });
                }
            }
            Labels::Multi(v) => {
                if let Some(row) = v.iter().find(|r| r.len() != classes || r.iter().any(|&b| b > 1)) {
                    return Err(DataError::Invalid(format!("bad multi-hot row {row:?}")));
                }
            }
        }
        if let Some(expected) = self.image_shape() {
            for (index, img) in self.images.iter().enumerate() {
                if img.shape() != expected {
                    return Err(DataError::ShapeMismatch {
                        index,
                        expected: expected.to_vec(),
                        actual: img.shape().to_vec(),
                    });
                }
                if img.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(DataError::Invalid(format!("image {index} has pixels outside [0, 1]")));
                }
            }
        }
        Ok(())
    }

    pub fn class_counts(&self) -> BTreeMap<String, usize> {
        (0..self.class_names.len())
            .map(|c| (self.class_names[c].clone(), self.indices_of_class(c).len()))
            .collect()
    }

    /// SHA-256 over the quantized pixels, labels, and ids.
    pub fn sha256(&self) -> String {
        let mut h = Sha256::new();
        for (img, id) in self.images.iter().zip(&self.sample_ids) {
            h.update(id.as_bytes());
            for s in img.shape() {
                h.update((*s as u64).to_le_bytes());
            }
            let bytes: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
            h.update(&bytes);
        }
        match &self.labels {
            Labels::Single(v) => v.iter().for_each(|l| h.update((*l as u64).to_le_bytes())),
            Labels::Multi(v) => v.iter().for_each(|r| h.update(r)),
        }
        for c in &self.class_names {
            h.update(c.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            name: self.name.clone(),
            class_names: self.class_names.clone(),
            counts: self.class_counts(),
            sha256: self.sha256(),
        }
    }
}

pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub class_names: Vec<String>,
    pub counts: BTreeMap<String, usize>,
    pub sha256: String,
}

/// Binary PGM (P5) rendering of an image; channels are averaged.
pub fn to_pgm(image: &Tensor) -> Vec<u8> {
    let shape = image.shape();
    let (h, w, c) = (shape[0], shape[1], shape.get(2).copied().unwrap_or(1));
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for px in image.data().chunks(c) {
        out.push(quantize(px.iter().sum::<f64>() / c as f64));
    }
    out
}

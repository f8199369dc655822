use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use shiftgate_nn::{checkpoint, loss, AdamState, Network, Tensor};

use super::{QuantError, Result};
use crate::data::{Dataset, Labels};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Softmax over classes.
    Single,
    /// Independent sigmoid per class.
    Multi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub channels: (usize, usize),
    pub hidden: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 6,
            batch_size: 16,
            lr: 2e-3,
            seed: 0,
            channels: (4, 8),
            hidden: 32,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(QuantError::Config("classifier epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(QuantError::Config("classifier batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(QuantError::Config("classifier lr must be positive".into()));
        }
        if self.channels.0 == 0 || self.channels.1 == 0 || self.hidden == 0 {
            return Err(QuantError::Config("classifier widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMeta {
    pub label_mode: LabelMode,
    pub class_names: Vec<String>,
    pub input_shape: Vec<usize>,
    pub train_config: ClassifierConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub net: Network,
    pub meta: ClassifierMeta,
}

/// Two stride-2 convolutions then two dense layers, emitting logits.
pub fn build_network(input_shape: &[usize], classes: usize, cfg: &ClassifierConfig) -> Result<Network> {
    let (h, w, c) = (input_shape[0], input_shape[1], input_shape[2]);
    if h % 4 != 0 || w % 4 != 0 {
        return Err(QuantError::Invalid(format!("classifier input {h}x{w} must be divisible by 4")));
    }
    let (c1, c2) = cfg.channels;
    Ok(Network::builder(seed::derive(cfg.seed, "classifier-init"))
        .conv2d(c, c1, 4, 2, 1)
        .relu()
        .conv2d(c1, c2, 4, 2, 1)
        .relu()
        .flatten()
        .dense(c2 * h * w / 16, cfg.hidden)
        .relu()
        .dense(cfg.hidden, classes)
        .build_for(input_shape)?)
}

impl Classifier {
    pub fn label_mode(&self) -> LabelMode {
        self.meta.label_mode
    }

    pub fn class_names(&self) -> &[String] {
        &self.meta.class_names
    }

    /// Class probabilities for one image.
    pub fn predict(&self, image: &Tensor) -> Result<Vec<f64>> {
        let logits = self.net.forward(image)?;
        Ok(match self.meta.label_mode {
            LabelMode::Single => loss::softmax(logits.data()),
            LabelMode::Multi => logits.data().iter().map(|&z| 1.0 / (1.0 + (-z).exp())).collect(),
        })
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<Vec<f64>>> {
        if ds.class_names != self.meta.class_names {
            return Err(QuantError::UnknownLabel(format!(
                "dataset classes {:?} differ from classifier classes {:?}",
                ds.class_names, self.meta.class_names
            )));
        }
        ds.images.iter().map(|img| self.predict(img)).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        checkpoint::write(&self.net, std::fs::File::create(dir.join("classifier.sgnn"))?)?;
        std::fs::write(dir.join("classifier.json"), serde_json::to_vec_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let net = checkpoint::read(std::fs::File::open(dir.join("classifier.sgnn"))?)?;
        let meta: ClassifierMeta = serde_json::from_slice(&std::fs::read(dir.join("classifier.json"))?)?;
        let out = net.output_shape(&meta.input_shape)?;
        if out != [meta.class_names.len()] {
            return Err(QuantError::Invalid(format!(
                "classifier output {out:?} does not match {} classes",
                meta.class_names.len()
            )));
        }
        Ok(Self { net, meta })
    }
}

/// Trains the classifier with Adam on shuffled mini-batches.
pub fn train_classifier(internal: &Dataset, cfg: &ClassifierConfig) -> Result<Classifier> {
    cfg.validate()?;
    if internal.is_empty() {
        return Err(QuantError::EmptyDataset);
    }
    internal.validate()?;
    let classes = internal.class_names.len();
    let mode = match &internal.labels {
        Labels::Single(y) => {
            let mut present: Vec<usize> = y.clone();
            present.sort_unstable();
            present.dedup();
            if present.len() < 2 {
                return Err(QuantError::SingleClass);
            }
            LabelMode::Single
        }
        Labels::Multi(_) => {
            if classes < 2 {
                return Err(QuantError::SingleClass);
            }
            LabelMode::Multi
        }
    };
    let input_shape = internal.image_shape().expect("non-empty").to_vec();
    let mut net = build_network(&input_shape, classes, cfg)?;
    let mut adam = AdamState::new(cfg.lr);
    let mut rng = seed::stream(cfg.seed, "classifier-shuffle");
    let mut order: Vec<usize> = (0..internal.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            net.zero_grad();
            for &i in batch {
                let logits = net.forward_train(&internal.images[i])?;
                let grad = match &internal.labels {
                    Labels::Single(y) => loss::softmax_cross_entropy(logits.data(), y[i]).1,
                    Labels::Multi(y) => {
                        let t: Vec<f64> = y[i].iter().map(|&b| b as f64).collect();
                        loss::sigmoid_cross_entropy(logits.data(), &t)?.1
                    }
                };
                net.backward(&Tensor::from_vec(grad))?;
            }
            net.scale_grad(1.0 / batch.len() as f64);
            adam.step(net.params_mut())?;
        }
    }
    if !net.is_finite() {
        return Err(QuantError::Invalid("classifier training diverged".into()));
    }
    net.params_mut().into_iter().for_each(Tensor::clear_grad);
    Ok(Classifier {
        net,
        meta: ClassifierMeta {
            label_mode: mode,
            class_names: internal.class_names.clone(),
            input_shape,
            train_config: cfg.clone(),
        },
    })
}

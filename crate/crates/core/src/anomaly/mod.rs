//! Per-class cascade-VAE anomaly detectors. A coarse VAE reconstructs the
//! image, a fine VAE refines it from (image, coarse reconstruction), and a
//! discriminator separates originals from reconstructions. The anomaly score
//! adds the mean per-pixel reconstruction error to the discriminator output.

mod bundle;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use shiftgate_nn::{loss, AdamState, Network, NnError, Tensor};
use thiserror::Error;

pub use bundle::{read_bundle, write_bundle, BundleManifest, BUNDLE_MANIFEST, CVAD_MAGIC};

use crate::cluster::{ScoreRow, ScoreTable};
use crate::data::Dataset;
use crate::seed;

#[derive(Debug, Error)]
pub enum AnomalyError {
    #[error("invalid anomaly config: {0}")]
    Config(String),
    #[error("need at least {needed} images to train, got {got}")]
    TooFewImages { needed: usize, got: usize },
    #[error("image {index} has shape {actual:?}, expected {expected:?}")]
    Shape {
        index: usize,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("sample {sample_id}: {source}")]
    Sample {
        sample_id: String,
        #[source]
        source: Box<AnomalyError>,
    },
    #[error("bad detector file: {0}")]
    Format(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AnomalyError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnomalyTrainConfig {
    pub epochs_generator: usize,
    pub epochs_discriminator: usize,
    pub batch_size: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub kl_weight: f64,
    pub seed: u64,
    pub latent_coarse: usize,
    pub latent_fine: usize,
    /// Channel widths of the two stride-2 convolutions in every network.
    pub channels: (usize, usize),
}

impl Default for AnomalyTrainConfig {
    fn default() -> Self {
        Self {
            epochs_generator: 15,
            epochs_discriminator: 15,
            batch_size: 16,
            lr_generator: 2e-3,
            lr_discriminator: 1e-3,
            kl_weight: 1.0,
            seed: 0,
            latent_coarse: 8,
            latent_fine: 16,
            channels: (4, 8),
        }
    }
}

impl AnomalyTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.epochs_generator == 0 || self.epochs_discriminator == 0 {
            errs.push("zero epochs".to_string());
        }
        if self.batch_size == 0 {
            errs.push("batch_size must be positive".into());
        }
        for (name, v) in [("lr_generator", self.lr_generator), ("lr_discriminator", self.lr_discriminator)] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("{name} must be positive"));
            }
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            errs.push("kl_weight must be non-negative".into());
        }
        if self.latent_coarse == 0 || self.latent_fine == 0 || self.channels.0 == 0 || self.channels.1 == 0 {
            errs.push("latent sizes and channel widths must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(AnomalyError::Config(errs.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScore {
    pub s_rec: f64,
    pub s_dis: f64,
    pub s_total: f64,
}

impl AnomalyScore {
    pub fn new(s_rec: f64, s_dis: f64) -> Self {
        Self {
            s_rec,
            s_dis,
            s_total: s_rec + s_dis,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvadModel {
    pub class_label: String,
    pub input_shape: Vec<usize>,
    pub coarse_encoder: Network,
    pub coarse_decoder: Network,
    pub fine_encoder: Network,
    pub fine_decoder: Network,
    pub discriminator: Network,
    pub train_config: AnomalyTrainConfig,
}

fn encoder(seed: u64, h: usize, w: usize, in_c: usize, latent: usize, ch: (usize, usize)) -> Result<Network> {
    Ok(Network::builder(seed)
        .conv2d(in_c, ch.0, 4, 2, 1)
        .relu()
        .conv2d(ch.0, ch.1, 4, 2, 1)
        .relu()
        .flatten()
        .dense(ch.1 * h * w / 16, 2 * latent)
        .build_for(&[h, w, in_c])?)
}

fn decoder(seed: u64, h: usize, w: usize, out_c: usize, latent: usize, ch: (usize, usize)) -> Result<Network> {
    Ok(Network::builder(seed)
        .dense(latent, ch.1 * h * w / 16)
        .relu()
        .reshape(vec![h / 4, w / 4, ch.1])
        .conv_transpose2d(ch.1, ch.0, 4, 2, 1)
        .relu()
        .conv_transpose2d(ch.0, out_c, 4, 2, 1)
        .sigmoid()
        .build_for(&[latent])?)
}

fn discriminator(seed: u64, h: usize, w: usize, c: usize, ch: (usize, usize)) -> Result<Network> {
    Ok(Network::builder(seed)
        .conv2d(c, ch.0, 4, 2, 1)
        .relu()
        .conv2d(ch.0, ch.1, 4, 2, 1)
        .relu()
        .flatten()
        .dense(ch.1 * h * w / 16, 16)
        .relu()
        .dense(16, 1)
        .sigmoid()
        .build_for(&[h, w, c])?)
}

/// Stacks two HWC images along the channel axis.
fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    let s = a.shape();
    let (ca, cb) = (s[2], b.shape()[2]);
    let mut data = Vec::with_capacity(a.len() + b.len());
    for (pa, pb) in a.data().chunks(ca).zip(b.data().chunks(cb)) {
        data.extend_from_slice(pa);
        data.extend_from_slice(pb);
    }
    Tensor::new(vec![s[0], s[1], ca + cb], data).expect("consistent shape")
}

impl CvadModel {
    /// Freshly initialised networks for `[h, w, c]` inputs (h, w divisible by 4).
    pub fn init(class_label: impl Into<String>, input_shape: &[usize], cfg: &AnomalyTrainConfig) -> Result<Self> {
        cfg.validate()?;
        let [h, w, c] = *input_shape else {
            return Err(AnomalyError::Config(format!("input shape {input_shape:?} is not [h, w, c]")));
        };
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(AnomalyError::Config(format!("image size {h}x{w} must be divisible by 4")));
        }
        let class_label = class_label.into();
        let s = |part: &str| seed::derive(cfg.seed, &format!("cvad/{class_label}/{part}"));
        let ch = cfg.channels;
        Ok(Self {
            coarse_encoder: encoder(s("coarse-enc"), h, w, c, cfg.latent_coarse, ch)?,
            coarse_decoder: decoder(s("coarse-dec"), h, w, c, cfg.latent_coarse, ch)?,
            fine_encoder: encoder(s("fine-enc"), h, w, 2 * c, cfg.latent_fine, ch)?,
            fine_decoder: decoder(s("fine-dec"), h, w, c, cfg.latent_fine, ch)?,
            discriminator: discriminator(s("disc"), h, w, c, ch)?,
            input_shape: input_shape.to_vec(),
            train_config: cfg.clone(),
            class_label,
        })
    }

    pub fn latent_dims(&self) -> (usize, usize) {
        (self.train_config.latent_coarse, self.train_config.latent_fine)
    }

    fn check_shape(&self, image: &Tensor) -> Result<()> {
        if image.shape() != self.input_shape.as_slice() {
            return Err(AnomalyError::Shape {
                index: 0,
                expected: self.input_shape.clone(),
                actual: image.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Latent mean of the coarse encoder.
    pub fn coarse_latent(&self, image: &Tensor) -> Result<Vec<f64>> {
        self.check_shape(image)?;
        let h = self.coarse_encoder.forward(image)?;
        Ok(h.data()[..self.train_config.latent_coarse].to_vec())
    }

    /// Deterministic (coarse, fine) reconstructions from latent means.
    pub fn reconstruct(&self, image: &Tensor) -> Result<(Tensor, Tensor)> {
        let zc = Tensor::from_vec(self.coarse_latent(image)?);
        let coarse = self.coarse_decoder.forward(&zc)?;
        let hf = self.fine_encoder.forward(&concat_channels(image, &coarse))?;
        let zf = Tensor::from_vec(hf.data()[..self.train_config.latent_fine].to_vec());
        let fine = self.fine_decoder.forward(&zf)?;
        Ok((coarse, fine))
    }

    pub fn score(&self, image: &Tensor) -> Result<AnomalyScore> {
        let (_, fine) = self.reconstruct(image)?;
        let s_rec = loss::mse(fine.data(), image.data())?;
        let s_dis = self.discriminator.forward(image)?.data()[0];
        Ok(AnomalyScore::new(s_rec, s_dis))
    }

    fn all_finite(&self) -> bool {
        [
            &self.coarse_encoder,
            &self.coarse_decoder,
            &self.fine_encoder,
            &self.fine_decoder,
            &self.discriminator,
        ]
        .iter()
        .all(|n| n.is_finite())
    }
}

pub fn score(model: &CvadModel, image: &Tensor) -> Result<AnomalyScore> {
    model.score(image)
}

/// One row per sample, in dataset order, labelled with the model's class.
pub fn score_dataset(model: &CvadModel, ds: &Dataset) -> Result<ScoreTable> {
    let rows = ds
        .images
        .iter()
        .zip(&ds.sample_ids)
        .map(|(img, id)| {
            let s = model.score(img).map_err(|e| AnomalyError::Sample {
                sample_id: id.clone(),
                source: Box::new(e),
            })?;
            Ok(ScoreRow {
                sample_id: id.clone(),
                class_label: model.class_label.clone(),
                s_rec: s.s_rec,
                s_dis: s.s_dis,
                s_total: s.s_total,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreTable {
        source_dataset: ds.name.clone(),
        rows,
    })
}

/// One VAE stage: forward with reparameterisation, backward of
/// `mse + kl_weight * KL / n_pixels`. Returns the reconstruction.
fn vae_step<R: Rng>(
    enc: &mut Network,
    dec: &mut Network,
    input: &Tensor,
    target: &Tensor,
    latent: usize,
    kl_weight: f64,
    rng: &mut R,
) -> Result<Tensor> {
    let h = enc.forward_train(input)?;
    let (mu, logvar) = h.data().split_at(latent);
    let noise: Vec<f64> = (0..latent).map(|_| rng.sample(StandardNormal)).collect();
    let z: Vec<f64> = (0..latent).map(|i| mu[i] + (0.5 * logvar[i]).exp() * noise[i]).collect();
    let recon = dec.forward_train(&Tensor::from_vec(z))?;
    let grad_rec = loss::mse_grad(recon.data(), target.data())?;
    let grad_z = dec.backward(&Tensor::new(recon.shape().to_vec(), grad_rec)?)?;
    let scale = kl_weight / target.len() as f64;
    let (kl_mu, kl_lv) = loss::kl_gaussian_grad(mu, logvar)?;
    let mut grad_h = Vec::with_capacity(2 * latent);
    for i in 0..latent {
        grad_h.push(grad_z.data()[i] + scale * kl_mu[i]);
    }
    for i in 0..latent {
        let dz_dlv = 0.5 * (0.5 * logvar[i]).exp() * noise[i];
        grad_h.push(grad_z.data()[i] * dz_dlv + scale * kl_lv[i]);
    }
    enc.backward(&Tensor::from_vec(grad_h))?;
    Ok(recon)
}

/// Trains one detector on the images of a single class (labels ignored).
pub fn train_detector(class_images: &Dataset, class_label: &str, cfg: &AnomalyTrainConfig) -> Result<CvadModel> {
    cfg.validate()?;
    let n = class_images.len();
    if n < 2 * cfg.batch_size {
        return Err(AnomalyError::TooFewImages {
            needed: 2 * cfg.batch_size,
            got: n,
        });
    }
    let expected = class_images.images[0].shape().to_vec();
    for (index, img) in class_images.images.iter().enumerate() {
        if img.shape() != expected.as_slice() {
            return Err(AnomalyError::Shape {
                index,
                expected,
                actual: img.shape().to_vec(),
            });
        }
    }
    let mut m = CvadModel::init(class_label, &expected, cfg)?;
    let mut rng = seed::stream(cfg.seed, &format!("cvad/{class_label}/train"));
    let mut opt_gen: Vec<AdamState> = (0..4).map(|_| AdamState::new(cfg.lr_generator)).collect();
    let mut order: Vec<usize> = (0..n).collect();

    for _ in 0..cfg.epochs_generator {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            for net in [&mut m.coarse_encoder, &mut m.coarse_decoder, &mut m.fine_encoder, &mut m.fine_decoder] {
                net.zero_grad();
            }
            for &i in batch {
                let x = &class_images.images[i];
                let coarse = vae_step(&mut m.coarse_encoder, &mut m.coarse_decoder, x, x, cfg.latent_coarse, cfg.kl_weight, &mut rng)?;
                // the fine stage sees the coarse output as a constant input
                let fine_in = concat_channels(x, &coarse);
                vae_step(&mut m.fine_encoder, &mut m.fine_decoder, &fine_in, x, cfg.latent_fine, cfg.kl_weight, &mut rng)?;
            }
            let scale = 1.0 / batch.len() as f64;
            let nets = [&mut m.coarse_encoder, &mut m.coarse_decoder, &mut m.fine_encoder, &mut m.fine_decoder];
            for (net, opt) in nets.into_iter().zip(opt_gen.iter_mut()) {
                net.scale_grad(scale);
                opt.step(net.params_mut())?;
            }
        }
    }

    // discriminator: originals are 0, reconstructions 1
    let recons: Vec<Tensor> = class_images
        .images
        .iter()
        .map(|x| m.reconstruct(x).map(|(_, f)| f))
        .collect::<Result<_>>()?;
    let mut opt_dis = AdamState::new(cfg.lr_discriminator);
    let mut pairs: Vec<(usize, bool)> = (0..n).flat_map(|i| [(i, false), (i, true)]).collect();
    for _ in 0..cfg.epochs_discriminator {
        pairs.shuffle(&mut rng);
        for batch in pairs.chunks(cfg.batch_size) {
            m.discriminator.zero_grad();
            for &(i, fake) in batch {
                let input = if fake { &recons[i] } else { &class_images.images[i] };
                let p = m.discriminator.forward_train(input)?;
                let y = if fake { 1.0 } else { 0.0 };
                let g = loss::bce_grad(p.data(), &[y])?;
                m.discriminator.backward(&Tensor::from_vec(g))?;
            }
            m.discriminator.scale_grad(1.0 / batch.len() as f64);
            opt_dis.step(m.discriminator.params_mut())?;
        }
    }
    if !m.all_finite() {
        return Err(AnomalyError::Format("training produced non-finite weights".into()));
    }
    for net in [
        &mut m.coarse_encoder,
        &mut m.coarse_decoder,
        &mut m.fine_encoder,
        &mut m.fine_decoder,
        &mut m.discriminator,
    ] {
        net.params_mut().into_iter().for_each(Tensor::clear_grad);
    }
    Ok(m)
}

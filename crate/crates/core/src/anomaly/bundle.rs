//! Detector files: `<class>.cvad` holds a JSON meta section followed by one
//! network checkpoint per section; `manifest.json` indexes the directory.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use shiftgate_nn::checkpoint;

use super::{AnomalyError, AnomalyTrainConfig, CvadModel, Result};

pub const CVAD_MAGIC: &[u8; 8] = b"SGCVAD1\0";
pub const BUNDLE_MANIFEST: &str = "manifest.json";

const NETWORKS: [&str; 5] = ["coarse_encoder", "coarse_decoder", "fine_encoder", "fine_decoder", "discriminator"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    class_label: String,
    input_shape: Vec<usize>,
    train_config: AnomalyTrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub classes: Vec<String>,
    pub input_shape: Vec<usize>,
    pub latent_dims: (usize, usize),
    pub config: AnomalyTrainConfig,
    /// Hash of each class's training images.
    pub training_sha256: BTreeMap<String, String>,
}

fn push_section(out: &mut Vec<u8>, name: &str, body: &[u8]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(body);
}

impl CvadModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = CVAD_MAGIC.to_vec();
        out.extend_from_slice(&(1 + NETWORKS.len() as u32).to_le_bytes());
        let meta = Meta {
            class_label: self.class_label.clone(),
            input_shape: self.input_shape.clone(),
            train_config: self.train_config.clone(),
        };
        push_section(&mut out, "meta", &serde_json::to_vec(&meta)?);
        for (name, net) in NETWORKS.iter().zip(self.networks()) {
            push_section(&mut out, name, &checkpoint::to_bytes(net)?);
        }
        Ok(out)
    }

    fn networks(&self) -> [&shiftgate_nn::Network; 5] {
        [
            &self.coarse_encoder,
            &self.coarse_decoder,
            &self.fine_encoder,
            &self.fine_decoder,
            &self.discriminator,
        ]
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CVAD_MAGIC {
            return Err(AnomalyError::Format("bad magic".into()));
        }
        let count = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
        let mut sections = BTreeMap::new();
        for _ in 0..count {
            let len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| AnomalyError::Format("section name".into()))?;
            let body_len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
            sections.insert(name, r.take(body_len)?);
        }
        if r.pos != bytes.len() {
            return Err(AnomalyError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let section = |name: &str| {
            sections
                .get(name)
                .copied()
                .ok_or_else(|| AnomalyError::Format(format!("missing section {name}")))
        };
        let meta: Meta = serde_json::from_slice(section("meta")?)?;
        let mut nets = Vec::with_capacity(NETWORKS.len());
        for name in NETWORKS {
            let body = section(name)?;
            let (net, used) = checkpoint::from_bytes(body)?;
            if used != body.len() {
                return Err(AnomalyError::Format(format!("section {name} has trailing bytes")));
            }
            nets.push(net);
        }
        let [coarse_encoder, coarse_decoder, fine_encoder, fine_decoder, discriminator]: [_; 5] =
            nets.try_into().expect("five networks");
        let model = CvadModel {
            class_label: meta.class_label,
            input_shape: meta.input_shape,
            coarse_encoder,
            coarse_decoder,
            fine_encoder,
            fine_decoder,
            discriminator,
            train_config: meta.train_config,
        };
        model.check_structure()?;
        Ok(model)
    }

    /// Encoder widths, decoder output shapes and the scalar discriminator.
    pub fn check_structure(&self) -> Result<()> {
        let shape = &self.input_shape;
        let (lc, lf) = self.latent_dims();
        let mut fine_in = shape.clone();
        fine_in[2] *= 2;
        let checks = [
            (self.coarse_encoder.output_shape(shape)?, vec![2 * lc], "coarse encoder"),
            (self.coarse_decoder.output_shape(&[lc])?, shape.clone(), "coarse decoder"),
            (self.fine_encoder.output_shape(&fine_in)?, vec![2 * lf], "fine encoder"),
            (self.fine_decoder.output_shape(&[lf])?, shape.clone(), "fine decoder"),
            (self.discriminator.output_shape(shape)?, vec![1], "discriminator"),
        ];
        for (got, want, what) in checks {
            if got != want {
                return Err(AnomalyError::Format(format!("{what} emits {got:?}, expected {want:?}")));
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(AnomalyError::Format("truncated".into()));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

/// Writes every detector plus the manifest into `dir`.
pub fn write_bundle(dir: &Path, models: &[CvadModel], training_sha256: BTreeMap<String, String>) -> Result<BundleManifest> {
    let first = models
        .first()
        .ok_or_else(|| AnomalyError::Config("no detectors to write".into()))?;
    std::fs::create_dir_all(dir)?;
    for m in models {
        m.write(&dir.join(format!("{}.cvad", m.class_label)))?;
    }
    let manifest = BundleManifest {
        classes: models.iter().map(|m| m.class_label.clone()).collect(),
        input_shape: first.input_shape.clone(),
        latent_dims: first.latent_dims(),
        config: first.train_config.clone(),
        training_sha256,
    };
    std::fs::write(dir.join(BUNDLE_MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_bundle(dir: &Path) -> Result<(BundleManifest, Vec<CvadModel>)> {
    let manifest: BundleManifest = serde_json::from_slice(&std::fs::read(dir.join(BUNDLE_MANIFEST))?)?;
    let models = manifest
        .classes
        .iter()
        .map(|c| {
            let m = CvadModel::read(&dir.join(format!("{c}.cvad")))?;
            if &m.class_label != c || m.input_shape != manifest.input_shape {
                return Err(AnomalyError::Format(format!("{c}.cvad does not match the manifest")));
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, models))
}

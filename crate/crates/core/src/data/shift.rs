//! Controlled corruption of a dataset with ground-truth flags.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use shiftgate_nn::Tensor;

use super::{DataError, Dataset, Labels, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    GaussianNoise,
    IntensityScale,
    Rotation,
    Occlusion,
    LabelNoise,
}

/// Corruption intensities. A kind is active when its intensity differs from
/// the neutral value (0, or 1 for `intensity_scale`). Each affected sample
/// receives exactly one active kind, drawn by `mixture` weight (uniform over
/// active kinds when no weights are given).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftSpec {
    pub gaussian_noise: f64,
    pub intensity_scale: f64,
    pub rotation_degrees: f64,
    /// Fraction of the image area covered by a noise patch.
    pub occlusion: f64,
    /// For multi-hot labels, the per-class flip probability (at least one
    /// flip is forced). Single labels are always reassigned to another class.
    pub label_noise: f64,
    pub mixture: BTreeMap<ShiftKind, f64>,
    pub affected_fraction: f64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self {
            gaussian_noise: 0.0,
            intensity_scale: 1.0,
            rotation_degrees: 0.0,
            occlusion: 0.0,
            label_noise: 0.0,
            mixture: BTreeMap::new(),
            affected_fraction: 0.0,
        }
    }
}

impl ShiftSpec {
    pub fn active_kinds(&self) -> Vec<ShiftKind> {
        let mut kinds = Vec::new();
        if self.gaussian_noise > 0.0 {
            kinds.push(ShiftKind::GaussianNoise);
        }
        if self.intensity_scale != 1.0 {
            kinds.push(ShiftKind::IntensityScale);
        }
        if self.rotation_degrees != 0.0 {
            kinds.push(ShiftKind::Rotation);
        }
        if self.occlusion > 0.0 {
            kinds.push(ShiftKind::Occlusion);
        }
        if self.label_noise > 0.0 {
            kinds.push(ShiftKind::LabelNoise);
        }
        kinds
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("affected_fraction", self.affected_fraction),
            ("occlusion", self.occlusion),
            ("label_noise", self.label_noise),
        ] {
            if !(0.0..=1.0).contains(&v) {
                problems.push(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if self.gaussian_noise < 0.0 || !self.gaussian_noise.is_finite() {
            problems.push(format!("gaussian_noise must be >= 0, got {}", self.gaussian_noise));
        }
        if self.intensity_scale < 0.0 || !self.intensity_scale.is_finite() {
            problems.push(format!("intensity_scale must be >= 0, got {}", self.intensity_scale));
        }
        if self.mixture.values().any(|&w| w < 0.0 || !w.is_finite()) {
            problems.push("mixture weights must be finite and >= 0".into());
        }
        let active = self.active_kinds();
        if self.affected_fraction > 0.0 && active.is_empty() {
            problems.push("no-op shift: every intensity is neutral but affected_fraction > 0".into());
        }
        if !self.mixture.is_empty()
            && self.affected_fraction > 0.0
            && active.iter().all(|k| self.mixture.get(k).copied().unwrap_or(0.0) <= 0.0)
        {
            problems.push("mixture gives zero weight to every active kind".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(DataError::InvalidShift(problems.join("; ")))
        }
    }

    fn weights(&self, active: &[ShiftKind]) -> Vec<f64> {
        active
            .iter()
            .map(|k| {
                if self.mixture.is_empty() {
                    1.0
                } else {
                    self.mixture.get(k).copied().unwrap_or(0.0)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftOutcome {
    pub dataset: Dataset,
    /// True exactly for the corrupted samples.
    pub flags: Vec<bool>,
    pub kinds: Vec<Option<ShiftKind>>,
}

fn pick<R: Rng>(rng: &mut R, kinds: &[ShiftKind], weights: &[f64]) -> ShiftKind {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen_range(0.0..total);
    for (k, w) in kinds.iter().zip(weights) {
        if u < *w {
            return *k;
        }
        u -= w;
    }
    *kinds
        .iter()
        .zip(weights)
        .rev()
        .find(|(_, w)| **w > 0.0)
        .map(|(k, _)| k)
        .expect("validated: some weight is positive")
}

fn rotate(img: &Tensor, degrees: f64) -> Tensor {
    let s = img.shape();
    let (h, w, c) = (s[0], s[1], s[2]);
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let src = img.data();
    let sample = |x: f64, y: f64, ch: usize| -> f64 {
        if x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
            return 0.0;
        }
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (tx, ty) = (x - x0 as f64, y - y0 as f64);
        let at = |yy: usize, xx: usize| src[(yy * w + xx) * c + ch];
        (at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx) * (1.0 - ty) + (at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx) * ty
    };
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            // inverse map: destination pixel -> source location
            let sx = cos * dx + sin * dy + cx - 0.5;
            let sy = -sin * dx + cos * dy + cy - 0.5;
            for ch in 0..c {
                out[(y * w + x) * c + ch] = sample(sx, sy, ch).clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(s.to_vec(), out).expect("same shape")
}

/// Corrupts `round(affected_fraction * n)` seeded samples of `ds`.
pub fn apply_shift(ds: &Dataset, spec: &ShiftSpec, seed: u64) -> Result<ShiftOutcome> {
    spec.validate()?;
    let n = ds.len();
    let mut out = ds.clone();
    let mut flags = vec![false; n];
    let mut kinds = vec![None; n];
    let count = (spec.affected_fraction * n as f64).round() as usize;
    if count == 0 {
        return Ok(ShiftOutcome { dataset: out, flags, kinds });
    }
    let active = spec.active_kinds();
    let weights = spec.weights(&active);
    let classes = ds.class_names.len();
    if active.contains(&ShiftKind::LabelNoise) && classes < 2 {
        return Err(DataError::InvalidShift("label noise needs at least two classes".into()));
    }

    let mut rng = seed::rng(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut chosen: Vec<usize> = order[..count].to_vec();
    chosen.sort_unstable();

    for i in chosen {
        let kind = pick(&mut rng, &active, &weights);
        flags[i] = true;
        kinds[i] = Some(kind);
        let img = &mut out.images[i];
        match kind {
            ShiftKind::GaussianNoise => {
                let normal = Normal::new(0.0, spec.gaussian_noise).expect("validated sigma");
                for v in img.data_mut() {
                    *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
                }
            }
            ShiftKind::IntensityScale => {
                for v in img.data_mut() {
                    *v = (*v * spec.intensity_scale).clamp(0.0, 1.0);
                }
            }
            ShiftKind::Rotation => {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                *img = rotate(img, sign * spec.rotation_degrees);
            }
            ShiftKind::Occlusion => {
                let s = img.shape().to_vec();
                let (h, w, c) = (s[0], s[1], s[2]);
                let side_h = ((spec.occlusion.sqrt() * h as f64).round() as usize).clamp(1, h);
                let side_w = ((spec.occlusion.sqrt() * w as f64).round() as usize).clamp(1, w);
                let y0 = rng.gen_range(0..=h - side_h);
                let x0 = rng.gen_range(0..=w - side_w);
                let data = img.data_mut();
                for y in y0..y0 + side_h {
                    for x in x0..x0 + side_w {
                        for ch in 0..c {
                            data[(y * w + x) * c + ch] = rng.gen_range(0.0..1.0);
                        }
                    }
                }
            }
            ShiftKind::LabelNoise => match &mut out.labels {
                Labels::Single(v) => {
                    let other = rng.gen_range(0..classes - 1);
                    v[i] = if other >= v[i] { other + 1 } else { other };
                }
                Labels::Multi(v) => {
                    let row = &mut v[i];
                    let mut flipped = false;
                    for b in row.iter_mut() {
                        if rng.gen_bool(spec.label_noise) {
                            *b = 1 - *b;
                            flipped = true;
                        }
                    }
                    if !flipped {
                        let j = rng.gen_range(0..row.len());
                        row[j] = 1 - row[j];
                    }
                }
            },
        }
    }
    Ok(ShiftOutcome { dataset: out, flags, kinds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_generate;

    fn base() -> Dataset {
        synth_generate("ext", 10, 3, 16, 5).unwrap()
    }

    #[test]
    fn zero_fraction_is_identity() {
        let ds = base();
        let spec = ShiftSpec { gaussian_noise: 0.3, ..Default::default() };
        let out = apply_shift(&ds, &spec, 1).unwrap();
        assert_eq!(out.dataset, ds);
        assert!(out.flags.iter().all(|f| !f));
    }

    #[test]
    fn no_op_spec_is_rejected() {
        let spec = ShiftSpec { affected_fraction: 0.2, ..Default::default() };
        let err = apply_shift(&base(), &spec, 1).unwrap_err();
        assert!(err.to_string().contains("no-op shift"));
    }

    #[test]
    fn full_label_noise_changes_every_flagged_label() {
        let ds = base();
        let spec = ShiftSpec { label_noise: 1.0, affected_fraction: 0.5, ..Default::default() };
        let out = apply_shift(&ds, &spec, 3).unwrap();
        let before = ds.single_labels().unwrap();
        let after = out.dataset.single_labels().unwrap();
        assert_eq!(out.flags.iter().filter(|f| **f).count(), 15);
        for i in 0..ds.len() {
            assert_eq!(out.flags[i], before[i] != after[i]);
        }
    }

    #[test]
    fn flags_mark_exactly_the_changed_samples_and_rerun_is_identical() {
        let ds = base();
        let spec = ShiftSpec {
            gaussian_noise: 0.3,
            occlusion: 0.25,
            rotation_degrees: 30.0,
            intensity_scale: 0.5,
            affected_fraction: 0.4,
            ..Default::default()
        };
        let a = apply_shift(&ds, &spec, 11).unwrap();
        let b = apply_shift(&ds, &spec, 11).unwrap();
        assert_eq!(a, b);
        for i in 0..ds.len() {
            if !a.flags[i] {
                assert_eq!(a.dataset.images[i], ds.images[i]);
            } else {
                assert_ne!(a.dataset.images[i], ds.images[i]);
            }
        }
        a.dataset.validate().unwrap();
    }

    #[test]
    fn mixture_restricts_kinds() {
        let spec = ShiftSpec {
            gaussian_noise: 0.3,
            occlusion: 0.25,
            mixture: [(ShiftKind::Occlusion, 1.0)].into_iter().collect(),
            affected_fraction: 1.0,
            ..Default::default()
        };
        let out = apply_shift(&base(), &spec, 2).unwrap();
        assert!(out.kinds.iter().all(|k| *k == Some(ShiftKind::Occlusion)));
    }

    #[test]
    fn out_of_range_fraction_is_rejected() {
        let spec = ShiftSpec { gaussian_noise: 0.1, affected_fraction: 1.5, ..Default::default() };
        assert!(spec.validate().is_err());
    }
}

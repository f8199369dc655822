//! Optimal Transport Dataset Distance: OT over (feature, label) pairs with
//! ground cost `sqrt(‖x − x'‖² + W2(P_y, P_y')²)`, where each label is modelled
//! as a Gaussian over its features.

mod gaussian;
mod solver;

use nalgebra::DMatrix;
use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gaussian::{fit_gaussian, sqrt_psd, w2_dense, w2_gaussian, LabelGaussian, Regularization};
pub use solver::{solve_ot_exact, solve_ot_sinkhorn, Coupling, SolverKind, EXACT_BOUND};

use crate::data::Dataset;
use crate::seed;

#[derive(Debug, Error)]
pub enum OtddError {
    #[error("label {label} has {n} samples; at least 2 are needed")]
    TooFewSamples { label: String, n: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    Dimension { left: usize, right: usize },
    #[error("{n_a}x{n_b} exceeds the exact solver bound of {bound}; use the sinkhorn solver")]
    TooLarge { n_a: usize, n_b: usize, bound: usize },
    #[error("sinkhorn did not converge in {iterations} iterations (violation {violation:e})")]
    NotConverged { iterations: usize, violation: f64 },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{0}")]
    Config(String),
    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<OtddError>,
    },
}

pub type Result<T> = std::result::Result<T, OtddError>;

/// Feature rows with their single labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatures {
    /// `n × d`.
    pub x: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl LabeledFeatures {
    /// Flattened pixels.
    pub fn from_pixels(ds: &Dataset) -> Result<Self> {
        let labels = ds
            .single_labels()
            .map_err(|e| OtddError::Config(format!("{e}; multi-hot datasets are measured per class")))?
            .to_vec();
        let d = ds.images.first().map(|t| t.len()).unwrap_or(0);
        let x = DMatrix::from_fn(ds.len(), d, |i, j| ds.images[i].data()[j]);
        Ok(Self {
            x,
            labels,
            class_names: ds.class_names.clone(),
        })
    }

    /// Flattened pixels under caller-chosen labels, one per sample.
    pub fn with_labels(ds: &Dataset, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != ds.len() || labels.iter().any(|&l| l >= ds.class_names.len()) {
            return Err(OtddError::Config(format!("bad label vector for dataset {}", ds.name)));
        }
        let d = ds.images.first().map(|t| t.len()).unwrap_or(0);
        Ok(Self {
            x: DMatrix::from_fn(ds.len(), d, |i, j| ds.images[i].data()[j]),
            labels,
            class_names: ds.class_names.clone(),
        })
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: self.rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    /// The rows carrying `label`, as a one-label dataset.
    pub fn single_class(&self, label: usize) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == label).collect();
        Self {
            x: self.rows(&idx),
            labels: vec![0; idx.len()],
            class_names: vec![self.class_names[label].clone()],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn rows(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), self.x.ncols(), |r, c| self.x[(idx[r], c)])
    }
}

/// One Gaussian per class index present in `data` (`None` for absent classes).
pub fn fit_label_gaussians(data: &LabeledFeatures, reg: Regularization) -> Result<Vec<Option<LabelGaussian>>> {
    (0..data.class_names.len())
        .map(|c| {
            let idx: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == c).collect();
            if idx.is_empty() {
                return Ok(None);
            }
            fit_gaussian(&data.class_names[c], &data.rows(&idx), reg).map(Some)
        })
        .collect()
}

/// `W2` between every present label pair, `[label_a][label_b]`.
pub fn label_distances(ga: &[Option<LabelGaussian>], gb: &[Option<LabelGaussian>]) -> Result<Vec<Vec<f64>>> {
    ga.iter()
        .map(|a| {
            gb.iter()
                .map(|b| match (a, b) {
                    (Some(a), Some(b)) => w2_gaussian(a, b),
                    _ => Ok(f64::NAN),
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinkhornSettings {
    /// Entropic strength relative to the largest ground cost.
    pub epsilon: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SinkhornSettings {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            max_iter: 20_000,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    #[default]
    Exact,
    Sinkhorn(SinkhornSettings),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OtddConfig {
    pub rounds: usize,
    pub sample_per_round: usize,
    pub reg: Regularization,
    pub solver: Solver,
    pub seed: u64,
}

impl Default for OtddConfig {
    fn default() -> Self {
        Self {
            rounds: 10,
            sample_per_round: 200,
            reg: Regularization::default(),
            solver: Solver::Exact,
            seed: 0,
        }
    }
}

impl OtddConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(OtddError::Config("otdd rounds must be positive".into()));
        }
        if self.sample_per_round < 1 {
            return Err(OtddError::Config("otdd sample_per_round must be positive".into()));
        }
        if let Solver::Sinkhorn(s) = self.solver {
            if !(s.epsilon > 0.0) || !(s.tol > 0.0) || s.max_iter == 0 {
                return Err(OtddError::Config("sinkhorn settings must be positive".into()));
            }
        }
        match self.reg {
            Regularization::Absolute(v) | Regularization::Relative(v) if v >= 0.0 && v.is_finite() => Ok(()),
            _ => Err(OtddError::Config("regularisation must be non-negative".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OtddRound {
    pub seed: u64,
    pub n: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OtddResult {
    pub rounds: Vec<OtddRound>,
    pub mean: f64,
    /// Sample standard deviation over rounds (0 for a single round).
    pub stdev: f64,
}

impl OtddResult {
    pub fn from_rounds(rounds: Vec<OtddRound>) -> Self {
        let n = rounds.len() as f64;
        let mean = rounds.iter().map(|r| r.distance).sum::<f64>() / n;
        let stdev = if rounds.len() > 1 {
            (rounds.iter().map(|r| (r.distance - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { rounds, mean, stdev }
    }
}

/// Ground costs between the sampled rows.
pub fn ground_cost(
    a: &LabeledFeatures,
    ia: &[usize],
    b: &LabeledFeatures,
    ib: &[usize],
    label_w2: &[Vec<f64>],
) -> Vec<f64> {
    let mut cost = Vec::with_capacity(ia.len() * ib.len());
    for &i in ia {
        let xi = a.x.row(i);
        for &j in ib {
            let feat = (xi - b.x.row(j)).norm_squared();
            let w = label_w2[a.labels[i]][b.labels[j]];
            cost.push((feat + w * w).sqrt());
        }
    }
    cost
}

fn solve(cost: &[f64], n_a: usize, n_b: usize, solver: Solver) -> Result<f64> {
    let mu = vec![1.0 / n_a as f64; n_a];
    let nu = vec![1.0 / n_b as f64; n_b];
    match solver {
        Solver::Exact => Ok(solve_ot_exact(cost, n_a, n_b, &mu, &nu)?.total_cost),
        Solver::Sinkhorn(s) => {
            let scale = cost.iter().cloned().fold(0.0, f64::max);
            if scale == 0.0 {
                return Ok(0.0);
            }
            let scaled: Vec<f64> = cost.iter().map(|c| c / scale).collect();
            let coupling = solve_ot_sinkhorn(&scaled, n_a, n_b, &mu, &nu, s.epsilon, s.max_iter, s.tol)?;
            Ok(coupling.total_cost * scale)
        }
    }
}

/// Features with their fitted label Gaussians, reusable across distances.
#[derive(Debug, Clone)]
pub struct OtddSide {
    pub data: LabeledFeatures,
    pub gaussians: Vec<Option<LabelGaussian>>,
}

impl OtddSide {
    pub fn new(data: LabeledFeatures, reg: Regularization) -> Result<Self> {
        let gaussians = fit_label_gaussians(&data, reg)?;
        Ok(Self { data, gaussians })
    }
}

/// Ten-round style subsampled OTDD. In round `r` both sides draw
/// `sample_per_round` rows without replacement from the same derived seed,
/// so identical inputs sample identical rows.
pub fn otdd_between(a: &OtddSide, b: &OtddSide, cfg: &OtddConfig) -> Result<OtddResult> {
    cfg.validate()?;
    if a.data.x.ncols() != b.data.x.ncols() {
        return Err(OtddError::Dimension {
            left: a.data.x.ncols(),
            right: b.data.x.ncols(),
        });
    }
    let n = cfg.sample_per_round;
    if n > a.data.len() || n > b.data.len() {
        return Err(OtddError::Config(format!(
            "sample_per_round {n} exceeds dataset sizes {} / {}",
            a.data.len(),
            b.data.len()
        )));
    }
    let label_w2 = label_distances(&a.gaussians, &b.gaussians)?;
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for r in 0..cfg.rounds {
        let round_seed = seed::derive(cfg.seed, &format!("otdd-round-{r}"));
        let draw = |len: usize| {
            let mut rng = seed::stream(round_seed, "subsample");
            let mut idx = index::sample(&mut rng, len, n).into_vec();
            idx.sort_unstable();
            idx
        };
        let ia = draw(a.data.len());
        let ib = draw(b.data.len());
        let cost = ground_cost(&a.data, &ia, &b.data, &ib, &label_w2);
        let distance = solve(&cost, n, n, cfg.solver).map_err(|e| OtddError::Round {
            round: r,
            source: Box::new(e),
        })?;
        rounds.push(OtddRound {
            seed: round_seed,
            n,
            distance,
        });
    }
    Ok(OtddResult::from_rounds(rounds))
}

pub fn otdd_distance(a: &LabeledFeatures, b: &LabeledFeatures, cfg: &OtddConfig) -> Result<OtddResult> {
    let sa = OtddSide::new(a.clone(), cfg.reg)?;
    let sb = OtddSide::new(b.clone(), cfg.reg)?;
    otdd_between(&sa, &sb, cfg)
}

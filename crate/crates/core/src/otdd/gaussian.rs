use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{OtddError, Result};

/// Ridge added to every fitted covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularization {
    /// `λ` used as given.
    Absolute(f64),
    /// `λ = r · mean diagonal of the raw covariance`; falls back to `r` when the
    /// raw covariance is zero.
    Relative(f64),
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization::Relative(1e-4)
    }
}

/// Gaussian of one label's features, kept as `U diag(s) Uᵀ + λI` with
/// orthonormal `U` so high-dimensional covariances never materialise.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGaussian {
    pub label: String,
    pub mean: DVector<f64>,
    pub basis: DMatrix<f64>,
    pub spectrum: DVector<f64>,
    pub reg: f64,
    pub support: usize,
}

impl LabelGaussian {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn rank(&self) -> usize {
        self.spectrum.len()
    }

    /// Dense `d × d` covariance including the ridge.
    pub fn covariance(&self) -> DMatrix<f64> {
        let scaled = &self.basis * DMatrix::from_diagonal(&self.spectrum);
        let mut cov = scaled * self.basis.transpose();
        for i in 0..self.dim() {
            cov[(i, i)] += self.reg;
        }
        cov
    }

    /// From an explicit mean and covariance; `reg` is added on top.
    pub fn from_moments(label: impl Into<String>, mean: DVector<f64>, cov: &DMatrix<f64>, reg: f64, support: usize) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(OtddError::Dimension { left: d, right: cov.nrows() });
        }
        let (basis, spectrum) = positive_eigen(&symmetrize(cov))?;
        Ok(Self {
            label: label.into(),
            mean,
            basis,
            spectrum,
            reg,
            support,
        })
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenpairs with eigenvalue above a relative floor.
fn positive_eigen(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(OtddError::Numeric("non-finite covariance".into()));
    }
    let eig = m.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > 1e-12 * top && eig.eigenvalues[i] > 0.0)
        .collect();
    let basis = DMatrix::from_fn(m.nrows(), keep.len(), |r, c| eig.eigenvectors[(r, keep[c])]);
    let spectrum = DVector::from_iterator(keep.len(), keep.iter().map(|&i| eig.eigenvalues[i]));
    Ok((basis, spectrum))
}

/// Sample mean and unbiased covariance (plus ridge) of the rows of `x`.
pub fn fit_gaussian(label: &str, x: &DMatrix<f64>, reg: Regularization) -> Result<LabelGaussian> {
    let n = x.nrows();
    let d = x.ncols();
    if n < 2 {
        return Err(OtddError::TooFewSamples {
            label: label.to_string(),
            n,
        });
    }
    let mean = DVector::from_iterator(d, (0..d).map(|j| x.column(j).sum() / n as f64));
    let mut centred = x.clone();
    for mut row in centred.row_iter_mut() {
        row -= mean.transpose();
    }
    let denom = (n - 1) as f64;
    let (basis, spectrum) = if n - 1 < d {
        // eigenvectors of the Gram matrix map to those of the covariance
        let gram = &centred * centred.transpose();
        let (v, lam) = positive_eigen(&symmetrize(&gram))?;
        let mut u = centred.transpose() * v;
        for (c, &l) in lam.iter().enumerate() {
            u.column_mut(c).scale_mut(1.0 / l.sqrt());
        }
        (u, lam / denom)
    } else {
        let cov = centred.transpose() * &centred / denom;
        positive_eigen(&symmetrize(&cov))?
    };
    let lambda = match reg {
        Regularization::Absolute(l) => l,
        Regularization::Relative(r) => {
            let mean_diag = spectrum.sum() / d as f64;
            if mean_diag > 0.0 { r * mean_diag } else { r }
        }
    };
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(OtddError::Config(format!("regularisation {lambda} must be non-negative")));
    }
    Ok(LabelGaussian {
        label: label.to_string(),
        mean,
        basis,
        spectrum,
        reg: lambda,
        support: n,
    })
}

fn sqrt_trace_eigen(m: &DMatrix<f64>) -> Result<f64> {
    let vals = symmetrize(m).symmetric_eigenvalues();
    let scale = vals.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    if vals.iter().any(|v| !v.is_finite() || *v < -1e-6 * scale) {
        return Err(OtddError::Numeric("matrix square root of an indefinite matrix".into()));
    }
    Ok(vals.iter().map(|v| v.max(0.0).sqrt()).sum())
}

/// 2-Wasserstein distance between two label Gaussians.
///
/// Works in the span of both bases: with `Q = [Ua, W]` the first covariance
/// is diagonal, the second is `λb I + B diag(sb) Bᵀ` with `B = [C; R]`,
/// `C = Uaᵀ Ub` and `RᵀR = I − CᵀC`. Outside the span both are multiples of
/// the identity. Arguments are put in a canonical order first so the result
/// is exactly symmetric.
pub fn w2_gaussian(a: &LabelGaussian, b: &LabelGaussian) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(OtddError::Dimension {
            left: a.dim(),
            right: b.dim(),
        });
    }
    if a.mean == b.mean && a.basis == b.basis && a.spectrum == b.spectrum && a.reg == b.reg {
        return Ok(0.0);
    }
    let (a, b) = if canonical_first(a, b) { (a, b) } else { (b, a) };
    let d = a.dim();
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let (ra, rb) = (a.rank(), b.rank());

    let c = a.basis.transpose() * &b.basis;
    let mut e = -(c.transpose() * &c);
    for i in 0..rb {
        e[(i, i)] += 1.0;
    }
    let (ev, el) = positive_eigen(&symmetrize(&e)).unwrap_or_else(|_| (DMatrix::zeros(rb, 0), DVector::zeros(0)));
    let floor = 1e-12;
    let keep: Vec<usize> = (0..el.len()).filter(|&i| el[i] > floor).collect();
    let s = keep.len();
    let m = ra + s;
    // R = diag(sqrt λ) Vᵀ over the kept directions, s × rb
    let r = DMatrix::from_fn(s, rb, |i, j| el[keep[i]].sqrt() * ev[(j, keep[i])]);
    let mut bm = DMatrix::zeros(m, rb);
    bm.view_mut((0, 0), (ra, rb)).copy_from(&c);
    bm.view_mut((ra, 0), (s, rb)).copy_from(&r);

    let sa: Vec<f64> = (0..m).map(|i| if i < ra { a.spectrum[i] + a.reg } else { a.reg }).collect();
    let sqrt_sb = b.spectrum.map(f64::sqrt);
    // K = Sa^{1/2} B diag(sb)^{1/2}, so Sa^{1/2} Sb Sa^{1/2} = λb Sa + K Kᵀ
    let k = DMatrix::from_fn(m, rb, |i, j| sa[i].sqrt() * bm[(i, j)] * sqrt_sb[j]);
    let mut inner = &k * k.transpose();
    for i in 0..m {
        inner[(i, i)] += b.reg * sa[i];
    }
    let tr_sa: f64 = sa.iter().sum();
    let bdb = DMatrix::from_fn(m, rb, |i, j| bm[(i, j)] * b.spectrum[j]) * bm.transpose();
    let tr_sb = bdb.trace() + b.reg * m as f64;
    let cross = sqrt_trace_eigen(&inner)?;
    let rest = (d as f64 - m as f64) * (a.reg.sqrt() - b.reg.sqrt()).powi(2);
    let w2sq = mean_term + tr_sa + tr_sb - 2.0 * cross + rest;
    Ok(w2sq.max(0.0).sqrt())
}

fn canonical_first(a: &LabelGaussian, b: &LabelGaussian) -> bool {
    use std::cmp::Ordering;
    let by_rank = a.rank().cmp(&b.rank());
    let by_mean = a
        .mean
        .iter()
        .zip(b.mean.iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal);
    let by_reg = a.reg.total_cmp(&b.reg);
    let by_spec = a
        .spectrum
        .iter()
        .zip(b.spectrum.iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal);
    by_rank.then(by_mean).then(by_reg).then(by_spec) != Ordering::Greater
}

/// Symmetric PSD square root by eigendecomposition. Negative eigenvalues are
/// clamped to 0; if the matrix is clearly indefinite a growing jitter is added
/// to the diagonal, at most three times.
pub fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let base = symmetrize(m);
    let scale = (base.trace().abs() / n.max(1) as f64).max(1e-300);
    let mut jitter = 0.0;
    for attempt in 0..4 {
        let mut work = base.clone();
        for i in 0..n {
            work[(i, i)] += jitter;
        }
        let eig = work.symmetric_eigen();
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let finite = eig.eigenvalues.iter().all(|v| v.is_finite());
        if finite && min >= -1e-9 * scale {
            let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
            let v = &eig.eigenvectors;
            return Ok(v * DMatrix::from_diagonal(&root) * v.transpose());
        }
        jitter = 1e-10 * scale * 10f64.powi(attempt);
    }
    Err(OtddError::Numeric("PSD square root failed after jitter escalation".into()))
}

/// Textbook W2 on dense moments:
/// `‖μa−μb‖² + tr(Σa + Σb − 2(Σb^{1/2} Σa Σb^{1/2})^{1/2})`.
pub fn w2_dense(mean_a: &DVector<f64>, cov_a: &DMatrix<f64>, mean_b: &DVector<f64>, cov_b: &DMatrix<f64>) -> Result<f64> {
    if mean_a.len() != mean_b.len() {
        return Err(OtddError::Dimension {
            left: mean_a.len(),
            right: mean_b.len(),
        });
    }
    let rb = sqrt_psd(cov_b)?;
    let inner = &rb * cov_a * &rb;
    let cross = sqrt_psd(&inner)?.trace();
    let w2sq = (mean_a - mean_b).norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    Ok(w2sq.max(0.0).sqrt())
}

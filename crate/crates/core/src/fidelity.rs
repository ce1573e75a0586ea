//! Distribution-level image quality: Inception Score, its temperature-scaled
//! variant, and Fréchet distance between Gaussian feature fits.
//!
//! The object-centric variants (O-IS, O-FID) run the same math on matrices
//! whose rows are detector crops rather than whole images.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::artifact_io::{MatrixArtifact, MatrixRole};
use crate::calibration::{scaled_probabilities, Temperature};
use crate::error::{EvalError, Result};
use crate::numeric::order_independent_sum;

pub const DEFAULT_SPLITS: usize = 10;

/// Conditional probabilities below this contribute nothing to KL.
pub const KL_ZERO_THRESHOLD: f64 = 1e-12;

/// Negative Fréchet distances within this (relative) band of zero clamp to 0.
pub const FRECHET_NEGATIVE_TOLERANCE: f64 = 1e-6;

const SYMMETRY_TOLERANCE: f64 = 1e-9;
const EIGEN_MAX_ITERATIONS: usize = 10_000;

/// Mean and population standard deviation of per-split scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitScore {
    pub mean: f64,
    pub std: f64,
    pub n_splits: usize,
}

fn split_bounds(rows: usize, n_splits: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n_splits).map(move |s| (s * rows / n_splits, (s + 1) * rows / n_splits))
}

/// `exp(E_x KL(p(y|x) || p(y)))` on one chunk of rows.
///
/// Sums are order-independent, so a split's score does not depend on the
/// order of its rows.
fn split_inception_score(rows: &[Vec<f64>]) -> f64 {
    let classes = rows[0].len();
    let n = rows.len() as f64;
    let marginal: Vec<f64> = (0..classes)
        .map(|k| order_independent_sum(rows.iter().map(|row| row[k]).collect()) / n)
        .collect();

    let kl_terms = rows
        .iter()
        .map(|row| {
            row.iter()
                .zip(&marginal)
                .filter(|(&p, _)| p >= KL_ZERO_THRESHOLD)
                .map(|(&p, &q)| p * (p.ln() - q.ln()))
                .sum::<f64>()
        })
        .collect();
    let mean_kl = order_independent_sum(kl_terms) / n;
    mean_kl.max(0.0).exp()
}

/// Inception Score over `n_splits` contiguous chunks of `probs`, in input order.
pub fn inception_score_rows(probs: &[Vec<f64>], n_splits: usize) -> Result<SplitScore> {
    if n_splits == 0 {
        return Err(EvalError::Validation("n_splits must be at least 1".into()));
    }
    if probs.len() < n_splits {
        return Err(EvalError::Validation(format!(
            "{} rows cannot fill {n_splits} splits",
            probs.len()
        )));
    }
    let classes = probs[0].len();
    if classes == 0 || probs.iter().any(|r| r.len() != classes) {
        return Err(EvalError::Validation(
            "ragged or empty probability rows".into(),
        ));
    }

    let scores: Vec<f64> = split_bounds(probs.len(), n_splits)
        .map(|(start, end)| split_inception_score(&probs[start..end]))
        .collect();
    let k = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / k;
    let std = if n_splits == 1 {
        0.0
    } else {
        (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / k).sqrt()
    };
    Ok(SplitScore {
        mean,
        std,
        n_splits,
    })
}

pub fn inception_score(probs: &MatrixArtifact, n_splits: usize) -> Result<SplitScore> {
    probs.expect_role(MatrixRole::Probabilities)?;
    inception_score_rows(&probs.to_rows(), n_splits)
}

/// IS computed on `softmax(z / T)` rows.
pub fn is_star_rows(logits: &[Vec<f64>], t: Temperature, n_splits: usize) -> Result<SplitScore> {
    inception_score_rows(&scaled_probabilities(logits, t)?, n_splits)
}

pub fn is_star(logits: &MatrixArtifact, t: Temperature, n_splits: usize) -> Result<SplitScore> {
    logits.expect_role(MatrixRole::Logits)?;
    is_star_rows(&logits.to_rows(), t, n_splits)
}

/// Object-centric IS: the rows are detector crops.
pub fn o_is(crop_probs: &MatrixArtifact, n_splits: usize) -> Result<SplitScore> {
    inception_score(crop_probs, n_splits)
}

/// Mean and unbiased covariance of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    n: usize,
}

impl GaussianStats {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, n: usize) -> Result<Self> {
        let d = mu.len();
        if d == 0 || sigma.shape() != (d, d) {
            return Err(EvalError::Validation(format!(
                "mean of dimension {d} needs a {d}x{d} covariance, got {:?}",
                sigma.shape()
            )));
        }
        if n < 2 {
            return Err(EvalError::Validation(format!(
                "Gaussian fit needs at least 2 samples, got {n}"
            )));
        }
        if (&sigma - sigma.transpose()).amax() > SYMMETRY_TOLERANCE {
            return Err(EvalError::Validation("covariance is not symmetric".into()));
        }
        Ok(GaussianStats { mu, sigma, n })
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Fits column means and the `n - 1` covariance of `features` (one sample per row).
pub fn fit_gaussian_matrix(features: &DMatrix<f64>) -> Result<GaussianStats> {
    let n = features.nrows();
    if n < 2 {
        return Err(EvalError::Validation(format!(
            "Gaussian fit needs at least 2 rows, got {n}"
        )));
    }
    let mu = features.row_mean().transpose();
    let mut centered = features.clone();
    for mut row in centered.row_iter_mut() {
        row -= mu.transpose();
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let sigma = (&cov + cov.transpose()) * 0.5;
    GaussianStats::new(mu, sigma, n)
}

pub fn fit_gaussian(features: &MatrixArtifact) -> Result<GaussianStats> {
    features.expect_role(MatrixRole::Features)?;
    fit_gaussian_matrix(&features.to_f64())
}

fn symmetric_eigen(m: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    SymmetricEigen::try_new(m, f64::EPSILON, EIGEN_MAX_ITERATIONS)
        .ok_or_else(|| EvalError::Numerical("symmetric eigendecomposition did not converge".into()))
}

/// Square root of a symmetric PSD matrix with negative eigenvalues clamped to 0.
pub fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = symmetric_eigen((m + m.transpose()) * 0.5)?;
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `tr((A^{1/2} B A^{1/2})^{1/2})`, which equals `tr((AB)^{1/2})` for PSD `A`, `B`.
pub fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let root_a = sqrt_psd(a)?;
    let inner = &root_a * b * &root_a;
    let eig = symmetric_eigen((&inner + inner.transpose()) * 0.5)?;
    Ok(eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum())
}

/// Fréchet distance between two Gaussians.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(EvalError::Validation(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let mean_term = (&a.mu - &b.mu).norm_squared();
    let traces = a.sigma.trace() + b.sigma.trace();
    let distance = mean_term + traces - 2.0 * trace_sqrt_product(&a.sigma, &b.sigma)?;
    if !distance.is_finite() {
        return Err(EvalError::Numerical(format!(
            "non-finite distance {distance}"
        )));
    }
    if distance >= 0.0 {
        return Ok(distance);
    }
    let band = FRECHET_NEGATIVE_TOLERANCE * (mean_term + traces).max(1.0);
    if distance >= -band {
        Ok(0.0)
    } else {
        Err(EvalError::Numerical(format!(
            "Fréchet distance {distance} is negative beyond tolerance {band}"
        )))
    }
}

pub fn fid(real_features: &MatrixArtifact, gen_features: &MatrixArtifact) -> Result<f64> {
    frechet_distance(&fit_gaussian(real_features)?, &fit_gaussian(gen_features)?)
}

/// Object-centric FID: the rows are features of detector crops.
pub fn o_fid(
    real_crop_features: &MatrixArtifact,
    gen_crop_features: &MatrixArtifact,
) -> Result<f64> {
    fid(real_crop_features, gen_crop_features)
}

//! Interacting-multiple-model building blocks.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fusion::SubModelBank;
use crate::linalg;

/// Likelihood sums at or below this value (or non-finite) count as collapsed.
pub const ANOMALY_THRESHOLD: f64 = 1e-300;

/// Mixing probabilities `χ^{ij} = P̃^{ij} χ^i / c̄^j` and normalisers
/// `c̄^j = Σᵢ P̃^{ij} χ^i`. Column `j` of the returned matrix sums to one.
pub fn imm_mix(chi_prev: &[f64], transition: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let l = chi_prev.len();
    if transition.shape() != (l, l) {
        return Err(Error::Dimension(format!(
            "transition {:?} does not match {l} model probabilities",
            transition.shape()
        )));
    }
    let cbar: Vec<f64> = (0..l)
        .map(|j| (0..l).map(|i| transition[(i, j)] * chi_prev[i]).sum())
        .collect();
    if let Some(j) = cbar.iter().position(|&c| !(c > 0.0)) {
        return Err(Error::Numerical(format!(
            "mixing normaliser for sub-model {} is zero",
            j + 1
        )));
    }
    let mixing = DMatrix::from_fn(l, l, |i, j| transition[(i, j)] * chi_prev[i] / cbar[j]);
    Ok((mixing, cbar))
}

/// Mixed initial conditions for every sub-model:
/// `x̂^{pre_j} = Σᵢ χ^{ij} x̂^i`,
/// `M^{pre_j} = Σᵢ χ^{ij} (M^i + (x̂^i − x̂^{pre_j})(x̂^i − x̂^{pre_j})ᵀ)`.
pub fn imm_mixed_moments(
    states: &[(DVector<f64>, DMatrix<f64>)],
    mixing: &DMatrix<f64>,
) -> Vec<(DVector<f64>, DMatrix<f64>)> {
    let l = states.len();
    (0..l)
        .map(|j| {
            let weights: Vec<f64> = (0..l).map(|i| mixing[(i, j)]).collect();
            mix_with(states.iter().map(|(x, m)| (x, m)), &weights)
        })
        .collect()
}

pub(crate) fn mix_with<'a, I>(states: I, weights: &[f64]) -> (DVector<f64>, DMatrix<f64>)
where
    I: IntoIterator<Item = (&'a DVector<f64>, &'a DMatrix<f64>)> + Clone,
{
    let mut it = states.clone().into_iter();
    let (x0, m0) = it.next().expect("at least one sub-model");
    let mut x = x0 * weights[0];
    for ((xi, _), &w) in it.zip(&weights[1..]) {
        x += xi * w;
    }
    let mut m = DMatrix::zeros(m0.nrows(), m0.ncols());
    for ((xi, mi), &w) in states.into_iter().zip(weights) {
        let dx = xi - &x;
        m += (mi + &dx * dx.transpose()) * w;
    }
    linalg::symmetrize(&mut m);
    (x, m)
}

/// `Λ = c̄ · (2π)^{−D/2} |S|^{−1/2} exp(−½ Ūᵀ S⁻¹ Ū)`; non-finite results map to 0.
pub fn submodel_likelihood(innovation: &DVector<f64>, s: &DMatrix<f64>, cbar: f64) -> Result<f64> {
    let d = innovation.len();
    if s.shape() != (d, d) {
        return Err(Error::Dimension(format!(
            "innovation covariance {:?} does not match innovation of length {d}",
            s.shape()
        )));
    }
    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("innovation covariance is not positive definite".into()))?;
    let l = chol.l();
    let log_det = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
    let maha = l
        .solve_lower_triangular(innovation)
        .map(|w| w.norm_squared())
        .unwrap_or(f64::INFINITY);
    Ok(likelihood_from_parts(cbar, d, log_det, maha))
}

pub(crate) fn likelihood_from_parts(
    cbar: f64,
    dim: usize,
    log_det_s: f64,
    mahalanobis: f64,
) -> f64 {
    let log_l = cbar.ln() - 0.5 * (dim as f64 * (2.0 * PI).ln() + log_det_s + mahalanobis);
    let v = log_l.exp();
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

/// Model-probability update.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbabilityUpdate {
    /// `χ^j = Λ^j / Σ Λ`.
    Normalized(Vec<f64>),
    /// All likelihoods collapsed: probability mass moves to `model`, whose
    /// fused covariance is replaced for this step by `corrected_b`.
    Anomaly {
        chi: Vec<f64>,
        model: usize,
        corrected_b: DMatrix<f64>,
    },
}

impl ProbabilityUpdate {
    pub fn chi(&self) -> &[f64] {
        match self {
            ProbabilityUpdate::Normalized(c) => c,
            ProbabilityUpdate::Anomaly { chi, .. } => chi,
        }
    }
}

/// Normalises likelihoods into model probabilities. When the likelihood sum
/// collapses, the sub-model with the largest fused covariance takes all the
/// probability and its covariance is rebuilt from its own innovation,
/// `ŪŪᵀ + 1e-6·trace(B)·I`. A single-model bank has nothing to renormalise and
/// never reports an anomaly.
pub fn update_model_probabilities(
    likelihoods: &[f64],
    bank: &SubModelBank,
    innovations: &[DVector<f64>],
) -> ProbabilityUpdate {
    let l = likelihoods.len();
    let cleaned: Vec<f64> = likelihoods
        .iter()
        .map(|&v| if v.is_finite() && v > 0.0 { v } else { 0.0 })
        .collect();
    if l == 1 {
        return ProbabilityUpdate::Normalized(vec![1.0]);
    }
    let total: f64 = cleaned.iter().sum();
    if total.is_finite() && total > ANOMALY_THRESHOLD {
        return ProbabilityUpdate::Normalized(cleaned.iter().map(|v| v / total).collect());
    }
    let model = bank.largest;
    let nominal = &bank.covariances[model];
    let d = nominal.nrows();
    let ridge = 1e-6 * nominal.trace();
    let corrected_b =
        linalg::outer(&innovations[model]) + DMatrix::from_diagonal_element(d, d, ridge);
    let mut chi = vec![0.0; l];
    chi[model] = 1.0;
    ProbabilityUpdate::Anomaly {
        chi,
        model,
        corrected_b,
    }
}

/// `x̂ = Σⱼ χ^j x̂^j`.
pub fn fuse_estimates(estimates: &[&DVector<f64>], chi: &[f64]) -> DVector<f64> {
    let mut x = DVector::zeros(estimates[0].len());
    for (xj, &c) in estimates.iter().zip(chi) {
        x += *xj * c;
    }
    x
}

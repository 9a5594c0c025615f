//! Gaussian mixture models fitted by expectation–maximization.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;

/// κ-component Gaussian mixture, components sorted by ascending covariance trace.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    /// Number of samples the model was fitted on (ρ).
    pub sample_count: usize,
}

impl GmmModel {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let model = Self {
            weights,
            means,
            covariances,
            sample_count: 0,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn kappa(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.covariances.len() != k {
            return Err(Error::Input(
                "GMM needs matching, non-empty weight/mean/covariance lists".into(),
            ));
        }
        let d = self.dim();
        if self.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::ParameterDomain(
                "GMM weights must be non-negative".into(),
            ));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::ParameterDomain(format!(
                "GMM weights must sum to 1, got {total}"
            )));
        }
        for (m, c) in self.means.iter().zip(&self.covariances) {
            if m.len() != d || c.shape() != (d, d) {
                return Err(Error::Dimension("GMM component dimensions disagree".into()));
            }
            if !linalg::is_psd(c, 1e-12) {
                return Err(Error::ParameterDomain(
                    "GMM covariances must be symmetric PSD".into(),
                ));
            }
        }
        Ok(())
    }

    /// Reorders components by ascending covariance trace.
    pub fn sort_by_trace(&mut self) {
        let mut order: Vec<usize> = (0..self.kappa()).collect();
        order.sort_by(|&a, &b| {
            self.covariances[a]
                .trace()
                .total_cmp(&self.covariances[b].trace())
        });
        self.weights = order.iter().map(|&i| self.weights[i]).collect();
        self.means = order.iter().map(|&i| self.means[i].clone()).collect();
        self.covariances = order.iter().map(|&i| self.covariances[i].clone()).collect();
    }

    /// Mixture log-density at `x`.
    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let comps: Vec<Component> = (0..self.kappa())
            .filter_map(|i| Component::new(self.weights[i], &self.means[i], &self.covariances[i]))
            .collect();
        let mut logs = vec![0.0; comps.len()];
        let mut diff = vec![0.0; x.len()];
        for (c, l) in comps.iter().zip(logs.iter_mut()) {
            *l = c.log_weighted_density(x.as_slice(), &mut diff);
        }
        log_sum_exp(&logs)
    }
}

/// Moment-matched covariance of the whole mixture:
/// `Σᵢ γⁱ(Rⁱ + μⁱμⁱᵀ) − μ̄μ̄ᵀ`, `μ̄ = Σᵢ γⁱμⁱ`.
pub fn overall_covariance(model: &GmmModel) -> DMatrix<f64> {
    let d = model.dim();
    let mut mean_bar = DVector::zeros(d);
    let mut second = DMatrix::zeros(d, d);
    for ((w, m), c) in model
        .weights
        .iter()
        .zip(&model.means)
        .zip(&model.covariances)
    {
        mean_bar += *w * m;
        second += *w * (c + m * m.transpose());
    }
    let mut out = second - &mean_bar * mean_bar.transpose();
    linalg::symmetrize(&mut out);
    out
}

#[derive(Debug, Clone)]
pub struct EmConfig {
    pub max_iterations: usize,
    /// Stop when `|ΔLL| < relative_tolerance · |LL|`.
    pub relative_tolerance: f64,
    pub max_restarts: usize,
    /// Points used for k-means++ seeding.
    pub seeding_subsample: usize,
    /// Eigenvalue floor as a fraction of the sample-covariance trace.
    pub covariance_floor: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            relative_tolerance: 1e-8,
            max_restarts: 10,
            seeding_subsample: 2000,
            covariance_floor: 1e-12,
            seed: 0,
        }
    }
}

/// Result of an EM fit.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Log-likelihood evaluated before each M-step of the accepted attempt,
    /// plus the final value.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub restarts: usize,
    pub converged: bool,
}

impl GmmFit {
    /// True if the log-likelihood never decreased by more than `rel_tol`.
    pub fn is_monotone(&self, rel_tol: f64) -> bool {
        self.log_likelihood
            .windows(2)
            .all(|w| w[1] >= w[0] - rel_tol * w[0].abs().max(1.0))
    }
}

/// Fits a κ-component GMM to `samples`.
pub fn em_fit_gmm(samples: &[DVector<f64>], kappa: usize, config: &EmConfig) -> Result<GmmFit> {
    if samples.is_empty() {
        return Err(Error::Input("EM needs at least one sample".into()));
    }
    if kappa == 0 {
        return Err(Error::Config {
            key: "kappa".into(),
            message: "kappa must be ≥ 1".into(),
        });
    }
    let d = samples[0].len();
    if d == 0 || samples.iter().any(|s| s.len() != d) {
        return Err(Error::Dimension(
            "samples must share a non-zero dimension".into(),
        ));
    }
    if samples.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
        return Err(Error::Input("samples must be finite".into()));
    }
    let n = samples.len();
    if n < 10 * kappa {
        return Err(Error::Input(format!(
            "EM with kappa={kappa} needs at least {} samples, got {n}",
            10 * kappa
        )));
    }

    let data = Data::new(samples);
    let (mean, cov) = data.moments();
    let floor = (config.covariance_floor * cov.trace()).max(f64::MIN_POSITIVE);

    if kappa == 1 {
        let (cov, _) = linalg::clamp_eigenvalues(&cov, floor);
        let model = GmmModel {
            weights: vec![1.0],
            means: vec![mean],
            covariances: vec![cov],
            sample_count: n,
        };
        let ll = data.log_likelihood(&model);
        return Ok(GmmFit {
            model,
            log_likelihood: vec![ll],
            iterations: 0,
            restarts: 0,
            converged: true,
        });
    }

    let mut last_reason = String::new();
    for attempt in 0..=config.max_restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(attempt as u64);
        let init = initialize(&data, kappa, &cov, attempt > 0, config, &mut rng);
        match run_em(&data, init, floor, config) {
            Ok((mut model, trace, iterations, converged)) => {
                model.sample_count = n;
                model.sort_by_trace();
                return Ok(GmmFit {
                    model,
                    log_likelihood: trace,
                    iterations,
                    restarts: attempt,
                    converged,
                });
            }
            Err(reason) => last_reason = reason,
        }
    }
    Err(Error::EmCollapse {
        restarts: config.max_restarts,
        reason: last_reason,
    })
}

struct Data {
    dim: usize,
    n: usize,
    flat: Vec<f64>,
}

impl Data {
    fn new(samples: &[DVector<f64>]) -> Self {
        let dim = samples[0].len();
        let flat = samples.iter().flat_map(|s| s.iter().copied()).collect();
        Self {
            dim,
            n: samples.len(),
            flat,
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.flat[i * self.dim..(i + 1) * self.dim]
    }

    fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.dim;
        let mut mean = DVector::zeros(d);
        for i in 0..self.n {
            for (a, v) in self.row(i).iter().enumerate() {
                mean[a] += v;
            }
        }
        mean /= self.n as f64;
        let mut cov = DMatrix::zeros(d, d);
        for i in 0..self.n {
            let r = self.row(i);
            for a in 0..d {
                for b in 0..=a {
                    cov[(a, b)] += (r[a] - mean[a]) * (r[b] - mean[b]);
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                cov[(b, a)] = cov[(a, b)];
            }
        }
        cov /= self.n as f64;
        (mean, cov)
    }

    fn log_likelihood(&self, model: &GmmModel) -> f64 {
        let comps: Vec<Component> = (0..model.kappa())
            .filter_map(|i| {
                Component::new(model.weights[i], &model.means[i], &model.covariances[i])
            })
            .collect();
        let mut diff = vec![0.0; self.dim];
        let mut logs = vec![0.0; comps.len()];
        (0..self.n)
            .map(|i| {
                for (c, l) in comps.iter().zip(logs.iter_mut()) {
                    *l = c.log_weighted_density(self.row(i), &mut diff);
                }
                log_sum_exp(&logs)
            })
            .sum()
    }
}

/// Component prepared for density evaluation.
struct Component {
    mean: Vec<f64>,
    /// Row-major lower Cholesky factor.
    chol: Vec<f64>,
    /// `ln γ − ½(D ln 2π + ln|R|)`.
    log_norm: f64,
}

impl Component {
    fn new(weight: f64, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Option<Self> {
        let d = mean.len();
        let ch = cov.clone().cholesky()?;
        let l = ch.l();
        let log_det: f64 = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
        let chol = (0..d * d).map(|k| l[(k / d, k % d)]).collect();
        Some(Self {
            mean: mean.iter().copied().collect(),
            chol,
            log_norm: weight.ln() - 0.5 * (d as f64 * (2.0 * PI).ln() + log_det),
        })
    }

    fn log_weighted_density(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        let d = self.mean.len();
        // Forward substitution L·y = x − μ.
        let mut maha = 0.0;
        for i in 0..d {
            let mut s = x[i] - self.mean[i];
            for j in 0..i {
                s -= self.chol[i * d + j] * scratch[j];
            }
            let y = s / self.chol[i * d + i];
            scratch[i] = y;
            maha += y * y;
        }
        self.log_norm - 0.5 * maha
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

struct Init {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
}

// k-means++ seeding of the means on a random subsample; every covariance
// starts at the sample covariance (scaled randomly on restarts).
fn initialize(
    data: &Data,
    kappa: usize,
    cov: &DMatrix<f64>,
    perturb: bool,
    config: &EmConfig,
    rng: &mut ChaCha8Rng,
) -> Init {
    let m = config.seeding_subsample.clamp(kappa, data.n);
    let picks: Vec<usize> = index::sample(rng, data.n, m).into_vec();
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();

    let mut centers: Vec<usize> = vec![picks[rng.random_range(0..m)]];
    let mut best: Vec<f64> = picks
        .iter()
        .map(|&p| dist2(data.row(p), data.row(centers[0])))
        .collect();
    while centers.len() < kappa {
        let total: f64 = best.iter().sum();
        let next = if total > 0.0 && total.is_finite() {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = m - 1;
            for (k, &b) in best.iter().enumerate() {
                target -= b;
                if target <= 0.0 {
                    chosen = k;
                    break;
                }
            }
            picks[chosen]
        } else {
            picks[rng.random_range(0..m)]
        };
        centers.push(next);
        for (k, &p) in picks.iter().enumerate() {
            best[k] = best[k].min(dist2(data.row(p), data.row(next)));
        }
    }

    let means = centers
        .iter()
        .map(|&c| DVector::from_column_slice(data.row(c)))
        .collect();
    let covariances = (0..kappa)
        .map(|_| {
            if perturb {
                // log-uniform scale in [1e-3, 1]
                let s = 10f64.powf(-3.0 * rng.random::<f64>());
                cov * s
            } else {
                cov.clone()
            }
        })
        .collect();
    Init {
        weights: vec![1.0 / kappa as f64; kappa],
        means,
        covariances,
    }
}

type EmOutcome = (GmmModel, Vec<f64>, usize, bool);

fn run_em(
    data: &Data,
    init: Init,
    floor: f64,
    config: &EmConfig,
) -> std::result::Result<EmOutcome, String> {
    let (n, d) = (data.n, data.dim);
    let kappa = init.weights.len();
    let mut weights = init.weights;
    let mut means = init.means;
    let mut covs = init.covariances;
    let mut resp = vec![0.0; n * kappa];
    let mut trace = Vec::new();
    let mut diff = vec![0.0; d];
    let mut logs = vec![0.0; kappa];
    let mut converged = false;
    let mut iterations = 0;

    loop {
        // E-step.
        let comps: Vec<Component> = (0..kappa)
            .map(|k| {
                Component::new(weights[k], &means[k], &covs[k])
                    .ok_or_else(|| format!("component {k} covariance is not positive definite"))
            })
            .collect::<std::result::Result<_, _>>()?;
        let mut ll = 0.0;
        for i in 0..n {
            let x = data.row(i);
            for (c, l) in comps.iter().zip(logs.iter_mut()) {
                *l = c.log_weighted_density(x, &mut diff);
            }
            let lse = log_sum_exp(&logs);
            if !lse.is_finite() {
                return Err(format!(
                    "sample {i} has zero likelihood under every component"
                ));
            }
            ll += lse;
            for k in 0..kappa {
                resp[i * kappa + k] = (logs[k] - lse).exp();
            }
        }
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            if (ll - prev).abs() < config.relative_tolerance * prev.abs() {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        if iterations >= config.max_iterations {
            break;
        }
        iterations += 1;

        // M-step.
        for k in 0..kappa {
            let nk: f64 = (0..n).map(|i| resp[i * kappa + k]).sum();
            if !(nk >= (d + 1) as f64) {
                return Err(format!(
                    "component {k} collapsed to {nk:.3} effective samples"
                ));
            }
            let mut mu = DVector::zeros(d);
            for i in 0..n {
                let w = resp[i * kappa + k];
                for (a, v) in data.row(i).iter().enumerate() {
                    mu[a] += w * v;
                }
            }
            mu /= nk;
            let mut c = DMatrix::zeros(d, d);
            for i in 0..n {
                let w = resp[i * kappa + k];
                let r = data.row(i);
                for a in 0..d {
                    let da = r[a] - mu[a];
                    for b in 0..=a {
                        c[(a, b)] += w * da * (r[b] - mu[b]);
                    }
                }
            }
            for a in 0..d {
                for b in 0..a {
                    c[(b, a)] = c[(a, b)];
                }
            }
            c /= nk;
            let (c, clamped) = linalg::clamp_eigenvalues(&c, floor);
            if clamped {
                return Err(format!("component {k} covariance fell below the floor"));
            }
            weights[k] = nk / n as f64;
            means[k] = mu;
            covs[k] = c;
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
    }

    let model = GmmModel {
        weights,
        means,
        covariances: covs,
        sample_count: n,
    };
    Ok((model, trace, iterations, converged))
}

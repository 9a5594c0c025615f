//! Observation-noise distributions, their samplers, and the Gaussian-mixture
//! approximation fitted to calibration samples.

mod gmm;
mod stable;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;

pub use gmm::{em_fit_gmm, overall_covariance, EmConfig, GmmFit, GmmModel};
pub use stable::AlphaStableSpec;

/// Multivariate normal noise.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpec {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianSpec {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let spec = Self { mean, covariance };
        spec.validate()?;
        Ok(spec)
    }

    /// Scalar `𝒩(μ, σ)` with `σ` the variance, replicated i.i.d. over `dim` axes.
    pub fn isotropic(mean: f64, variance: f64, dim: usize) -> Result<Self> {
        Self::new(
            DVector::from_element(dim, mean),
            DMatrix::from_diagonal_element(dim, dim, variance),
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.mean.len();
        if d == 0 || self.covariance.shape() != (d, d) {
            return Err(Error::ParameterDomain(format!(
                "gaussian covariance must be {d}x{d}, got {:?}",
                self.covariance.shape()
            )));
        }
        if linalg::asymmetry(&self.covariance) > 1e-12 * self.covariance.amax().max(1.0)
            || !linalg::is_psd(&self.covariance, 1e-12)
        {
            return Err(Error::ParameterDomain(
                "gaussian covariance must be symmetric positive semi-definite".into(),
            ));
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let d = self.dim();
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let factor = psd_factor(&self.covariance);
        &self.mean + factor * z
    }
}

// Lower-triangular factor of a PSD matrix; falls back to an eigen square root
// when Cholesky fails on a singular matrix.
pub(crate) fn psd_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = cov.clone().cholesky() {
        return ch.l();
    }
    let eig = cov.clone().symmetric_eigen();
    let roots = eig.eigenvalues.map(|e| e.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// Two-component scalar mixture `λ𝒩(μ, σ₁) + (1 − λ)𝒩(μ, σ₂)` (variances).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedGaussianSpec {
    pub mixing: f64,
    pub mean: f64,
    pub variance_1: f64,
    pub variance_2: f64,
}

impl MixedGaussianSpec {
    pub fn new(mixing: f64, mean: f64, variance_1: f64, variance_2: f64) -> Result<Self> {
        let spec = Self {
            mixing,
            mean,
            variance_1,
            variance_2,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mixing) {
            return Err(Error::ParameterDomain(format!(
                "mixing coefficient must lie in [0, 1], got {}",
                self.mixing
            )));
        }
        if !(self.variance_1 > 0.0 && self.variance_2 > 0.0) {
            return Err(Error::ParameterDomain(
                "mixture variances must be positive".into(),
            ));
        }
        if !self.mean.is_finite() {
            return Err(Error::ParameterDomain("mixture mean must be finite".into()));
        }
        Ok(())
    }

    /// Closed-form variance of the mixture.
    pub fn variance(&self) -> f64 {
        self.mixing * self.variance_1 + (1.0 - self.mixing) * self.variance_2
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let var = if rng.random::<f64>() < self.mixing {
            self.variance_1
        } else {
            self.variance_2
        };
        let z: f64 = StandardNormal.sample(rng);
        self.mean + var.sqrt() * z
    }
}

/// Observation-noise family.
///
/// The mixed and α-stable families are scalar; vector draws apply them i.i.d.
/// per axis. Gaussian specs carry their own dimension.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpec {
    Gaussian(GaussianSpec),
    Mixed(MixedGaussianSpec),
    AlphaStable(AlphaStableSpec),
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseSpec::Gaussian(g) => g.validate(),
            NoiseSpec::Mixed(m) => m.validate(),
            NoiseSpec::AlphaStable(a) => a.validate(),
        }
    }

    /// Adapts a spec to a `dim`-dimensional observation. A scalar Gaussian is
    /// broadcast to an isotropic one; other dimension mismatches are errors.
    pub fn for_dim(&self, dim: usize) -> Result<NoiseSpec> {
        match self {
            NoiseSpec::Gaussian(g) if g.dim() == dim => Ok(self.clone()),
            NoiseSpec::Gaussian(g) if g.dim() == 1 => Ok(NoiseSpec::Gaussian(
                GaussianSpec::isotropic(g.mean[0], g.covariance[(0, 0)], dim)?,
            )),
            NoiseSpec::Gaussian(g) => Err(Error::Dimension(format!(
                "gaussian noise has dimension {} but observations have {dim}",
                g.dim()
            ))),
            _ => Ok(self.clone()),
        }
    }

    /// One `dim`-dimensional draw.
    pub fn sample_one<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> DVector<f64> {
        match self {
            NoiseSpec::Gaussian(g) => {
                debug_assert_eq!(g.dim(), dim);
                g.sample(rng)
            }
            NoiseSpec::Mixed(m) => DVector::from_fn(dim, |_, _| m.sample(rng)),
            NoiseSpec::AlphaStable(a) => DVector::from_fn(dim, |_, _| a.sample(rng)),
        }
    }
}

/// `count` i.i.d. draws of `dim`-dimensional noise.
pub fn sample<R: Rng + ?Sized>(
    spec: &NoiseSpec,
    dim: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    if count == 0 {
        return Err(Error::Input("sample count must be at least 1".into()));
    }
    if dim == 0 {
        return Err(Error::Input("noise dimension must be at least 1".into()));
    }
    spec.validate()?;
    let spec = spec.for_dim(dim)?;
    Ok((0..count).map(|_| spec.sample_one(dim, rng)).collect())
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseSpec::Gaussian(g) if g.dim() == 1 => {
                write!(f, "gaussian({}, {})", g.mean[0], g.covariance[(0, 0)])
            }
            NoiseSpec::Gaussian(g) => write!(f, "gaussian(dim={})", g.dim()),
            NoiseSpec::Mixed(m) => write!(
                f,
                "mixed({}, {}, {}, {})",
                m.mixing, m.mean, m.variance_1, m.variance_2
            ),
            NoiseSpec::AlphaStable(a) => write!(
                f,
                "alpha({}, {}, {}, {})",
                a.char_exponent, a.symmetry, a.dispersion, a.location
            ),
        }
    }
}

/// Parses the shorthand used in config files:
/// `gaussian(mean, variance)`, `mixed(λ, μ, σ₁, σ₂)`, `alpha(a, b, ζ, ϖ)`.
impl FromStr for NoiseSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let open = s
            .find('(')
            .ok_or_else(|| Error::Input(format!("noise spec `{s}` is missing `(`")))?;
        if !s.ends_with(')') {
            return Err(Error::Input(format!("noise spec `{s}` is missing `)`")));
        }
        let name = s[..open].trim().to_ascii_lowercase();
        let args: Vec<f64> = s[open + 1..s.len() - 1]
            .split(',')
            .map(|a| {
                a.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Input(format!("bad number `{}` in `{s}`", a.trim())))
            })
            .collect::<Result<_>>()?;
        let want = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(Error::Input(format!(
                    "`{name}` takes {n} arguments, got {} in `{s}`",
                    args.len()
                )))
            }
        };
        match name.as_str() {
            "gaussian" | "normal" | "n" => {
                want(2)?;
                Ok(NoiseSpec::Gaussian(GaussianSpec::isotropic(
                    args[0], args[1], 1,
                )?))
            }
            "mixed" | "m" => {
                want(4)?;
                Ok(NoiseSpec::Mixed(MixedGaussianSpec::new(
                    args[0], args[1], args[2], args[3],
                )?))
            }
            "alpha" | "stable" | "s" => {
                want(4)?;
                Ok(NoiseSpec::AlphaStable(AlphaStableSpec::new(
                    args[0], args[1], args[2], args[3],
                )?))
            }
            other => Err(Error::Input(format!("unknown noise family `{other}`"))),
        }
    }
}

/// Writes samples as CSV, one row per sample and one column per dimension.
pub fn write_samples_csv(path: &Path, samples: &[DVector<f64>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    for s in samples {
        w.write_record(s.iter().map(|v| format!("{v:.16e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv(path: &Path) -> Result<Vec<DVector<f64>>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    let mut out = Vec::new();
    let mut dim = None;
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|c| {
                c.trim().parse::<f64>().map_err(|_| {
                    Error::Input(format!(
                        "{}: row {}: bad number `{c}`",
                        path.display(),
                        row + 1
                    ))
                })
            })
            .collect::<Result<_>>()?;
        match dim {
            None => dim = Some(vals.len()),
            Some(d) if d != vals.len() => {
                return Err(Error::Input(format!(
                    "{}: row {} has {} columns, expected {d}",
                    path.display(),
                    row + 1,
                    vals.len()
                )))
            }
            _ => {}
        }
        out.push(DVector::from_vec(vals));
    }
    if out.is_empty() {
        return Err(Error::Input(format!("{}: no samples", path.display())));
    }
    Ok(out)
}

//! Kalman filtering: the conventional distributed filter over a fused
//! neighbourhood observation, and the model-fusion (IMM) filter over a bank of
//! observation sub-models.

mod imm;
mod mfdkf;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fusion::FusedObservation;
use crate::linalg;

pub use imm::{
    fuse_estimates, imm_mix, imm_mixed_moments, submodel_likelihood, update_model_probabilities,
    ProbabilityUpdate, ANOMALY_THRESHOLD,
};
pub use mfdkf::{mfdkf_step, NodeFilterState, StepOutcome, SubFilterState};

/// `x(k) = A x(k−1) + G w(k−1)`, `w ~ 𝒩(0, Q)`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub g: Option<DMatrix<f64>>,
    q_eff: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, q: DMatrix<f64>, g: Option<DMatrix<f64>>) -> Result<Self> {
        let p = a.nrows();
        if a.ncols() != p {
            return Err(Error::Dimension("state transition must be square".into()));
        }
        let q_eff = match &g {
            Some(g) => {
                if g.nrows() != p || q.shape() != (g.ncols(), g.ncols()) {
                    return Err(Error::Dimension(format!(
                        "noise input {:?} and process covariance {:?} do not fit a {p}-state system",
                        g.shape(),
                        q.shape()
                    )));
                }
                g * &q * g.transpose()
            }
            None => {
                if q.shape() != (p, p) {
                    return Err(Error::Dimension(format!(
                        "process covariance must be {p}x{p}, got {:?}",
                        q.shape()
                    )));
                }
                q.clone()
            }
        };
        if !linalg::is_psd(&q, 1e-12) || linalg::asymmetry(&q) > 1e-12 * q.amax().max(1.0) {
            return Err(Error::ParameterDomain(
                "process covariance must be symmetric PSD".into(),
            ));
        }
        let mut q_eff = q_eff;
        linalg::symmetrize(&mut q_eff);
        Ok(Self { a, q, g, q_eff })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Process-noise dimension.
    pub fn noise_dim(&self) -> usize {
        self.q.nrows()
    }

    /// Covariance of the process noise as it enters the state.
    pub fn q_eff(&self) -> &DMatrix<f64> {
        &self.q_eff
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialCondition {
    pub x0: DVector<f64>,
    pub x_hat0: DVector<f64>,
    pub m0: DMatrix<f64>,
}

impl InitialCondition {
    /// Estimate starts at the true state with identity covariance.
    pub fn exact(x0: DVector<f64>) -> Self {
        let p = x0.len();
        Self {
            x_hat0: x0.clone(),
            x0,
            m0: DMatrix::identity(p, p),
        }
    }
}

/// Estimate and covariance of a single Kalman filter.
#[derive(Debug, Clone, PartialEq)]
pub struct KfState {
    pub x: DVector<f64>,
    pub m: DMatrix<f64>,
}

impl KfState {
    pub fn new(init: &InitialCondition) -> Self {
        Self {
            x: init.x_hat0.clone(),
            m: init.m0.clone(),
        }
    }
}

/// `x̄ = A x̂`, `P = A M Aᵀ + Q_eff`.
pub fn kf_predict(
    sys: &LinearSystem,
    x_prev: &DVector<f64>,
    m_prev: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = sys.state_dim();
    if x_prev.len() != p || m_prev.shape() != (p, p) {
        return Err(Error::Dimension(format!(
            "prediction needs a {p}-state estimate, got {} and {:?}",
            x_prev.len(),
            m_prev.shape()
        )));
    }
    let x_bar = &sys.a * x_prev;
    let mut pred = &sys.a * m_prev * sys.a.transpose() + sys.q_eff();
    linalg::symmetrize(&mut pred);
    Ok((x_bar, pred))
}

/// Output of a measurement update.
#[derive(Debug, Clone)]
pub struct KfUpdate {
    pub x: DVector<f64>,
    pub m: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub innovation: DVector<f64>,
    /// `ln|S|`.
    pub log_det_s: f64,
    /// `Ūᵀ S⁻¹ Ū`.
    pub mahalanobis: f64,
}

/// Standard Kalman measurement update with a Joseph-form covariance.
pub fn kf_update(
    x_bar: &DVector<f64>,
    p: &DMatrix<f64>,
    c: &DMatrix<f64>,
    b: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<KfUpdate> {
    let n = p.nrows();
    let d = c.nrows();
    if c.ncols() != n || b.shape() != (d, d) || y.len() != d || x_bar.len() != n {
        return Err(Error::Dimension(format!(
            "update with C {:?}, B {:?}, Y {}, x̄ {}, P {:?}",
            c.shape(),
            b.shape(),
            y.len(),
            x_bar.len(),
            p.shape()
        )));
    }
    let cp = c * p;
    let mut s = &cp * c.transpose() + b;
    linalg::symmetrize(&mut s);
    let chol = match s.clone().cholesky() {
        Some(ch) => ch,
        None => {
            let ridge = 1e-9 * (s.trace().abs() / d as f64).max(f64::MIN_POSITIVE);
            let ridged = &s + DMatrix::from_diagonal_element(d, d, ridge);
            match ridged.clone().cholesky() {
                Some(ch) => {
                    s = ridged;
                    ch
                }
                None => {
                    return Err(Error::Numerical(
                        "innovation covariance is singular after ridge retry".into(),
                    ))
                }
            }
        }
    };
    let innovation = y - c * x_bar;
    // K = P Cᵀ S⁻¹ ⇔ S Kᵀ = C P.
    let gain = chol.solve(&cp).transpose();
    let x = x_bar + &gain * &innovation;
    let i_kc = DMatrix::identity(n, n) - &gain * c;
    let mut m = &i_kc * p * i_kc.transpose() + &gain * b * gain.transpose();
    linalg::symmetrize(&mut m);

    let l = chol.l();
    let log_det_s = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
    let whitened = l
        .solve_lower_triangular(&innovation)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let mahalanobis = whitened.norm_squared();
    Ok(KfUpdate {
        x,
        m,
        gain,
        s,
        innovation,
        log_det_s,
        mahalanobis,
    })
}

/// One predict/update cycle of the conventional distributed filter with the
/// static nominal covariance of the fused observation.
pub fn cdkf_step(sys: &LinearSystem, fused: &FusedObservation, state: &mut KfState) -> Result<()> {
    let (x_bar, p) = kf_predict(sys, &state.x, &state.m)?;
    let upd = kf_update(&x_bar, &p, &fused.c, &fused.b, &fused.y)?;
    state.x = upd.x;
    state.m = upd.m;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn rotation(theta: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()])
    }

    #[test]
    fn identity_prediction() {
        let sys = LinearSystem::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 2), None).unwrap();
        let x = DVector::from_vec(vec![1.0, -2.0]);
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let (xb, p) = kf_predict(&sys, &x, &m).unwrap();
        assert_eq!(xb, x);
        assert_eq!(p, m);
    }

    #[test]
    fn rotation_preserves_norm() {
        let th = PI / 18.0;
        let sys = LinearSystem::new(rotation(th), DMatrix::zeros(2, 2), None).unwrap();
        let (xb, _) = kf_predict(
            &sys,
            &DVector::from_vec(vec![1.0, 0.0]),
            &DMatrix::identity(2, 2),
        )
        .unwrap();
        assert!((xb[0] - th.cos()).abs() < 1e-15 && (xb[1] - th.sin()).abs() < 1e-15);
        assert!((xb.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_velocity_step() {
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[
                1., 1., 0., 0., 0., 1., 0., 0., 0., 0., 1., 1., 0., 0., 0., 1.,
            ],
        );
        let g = DMatrix::from_row_slice(4, 2, &[0.5, 0., 1., 0., 0., 0.5, 0., 1.]);
        let sys = LinearSystem::new(a, DMatrix::zeros(2, 2), Some(g)).unwrap();
        let x = DVector::from_vec(vec![500., 10., 500., -10.]);
        let (xb, _) = kf_predict(&sys, &x, &DMatrix::identity(4, 4)).unwrap();
        assert_eq!(xb.as_slice(), &[510., 10., 490., -10.]);
    }

    #[test]
    fn dimension_mismatch() {
        let sys = LinearSystem::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 2), None).unwrap();
        assert!(kf_predict(&sys, &DVector::zeros(3), &DMatrix::identity(3, 3)).is_err());
        assert!(LinearSystem::new(DMatrix::identity(2, 2), DMatrix::zeros(3, 3), None).is_err());
    }

    #[test]
    fn scalar_update_by_hand() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let u = kf_update(
            &DVector::zeros(1),
            &one,
            &one,
            &one,
            &DVector::from_element(1, 2.0),
        )
        .unwrap();
        assert!((u.gain[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((u.x[0] - 1.0).abs() < 1e-15);
        assert!((u.m[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((u.s[(0, 0)] - 2.0).abs() < 1e-15);
        assert!((u.mahalanobis - 2.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_useless_observation_limits() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 2.0]);
        let xb = DVector::from_vec(vec![0.3, -0.2]);
        let truth = DVector::from_vec(vec![1.0, 2.0]);
        let y = &c * &truth;
        let tiny = DMatrix::identity(2, 2) * 1e-12;
        let u = kf_update(&xb, &p, &c, &tiny, &y).unwrap();
        assert!((u.x - &truth).amax() < 1e-9);
        let huge = DMatrix::identity(2, 2) * 1e12;
        let u = kf_update(&xb, &p, &c, &huge, &y).unwrap();
        assert!((u.x - &xb).amax() < 1e-9);
    }

    #[test]
    fn singular_innovation_gets_ridged() {
        let p = DMatrix::zeros(1, 1);
        let c = DMatrix::from_element(1, 1, 1.0);
        let b = DMatrix::zeros(1, 1);
        let u = kf_update(&DVector::zeros(1), &p, &c, &b, &DVector::zeros(1)).unwrap();
        assert!(u.x[0].is_finite());
    }

    #[test]
    fn noiseless_cdkf_tracks_truth() {
        let sys = LinearSystem::new(rotation(PI / 18.0), DMatrix::zeros(2, 2), None).unwrap();
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let mut truth = DVector::from_vec(vec![1.0, 1.0]);
        let mut state = KfState {
            x: DVector::from_vec(vec![0.0, 3.0]),
            m: DMatrix::identity(2, 2) * 10.0,
        };
        for _ in 0..300 {
            truth = &sys.a * &truth;
            let fused = FusedObservation {
                y: &c * &truth,
                c: c.clone(),
                b: DMatrix::from_element(1, 1, 1e-8),
            };
            cdkf_step(&sys, &fused, &mut state).unwrap();
        }
        assert!((state.x - truth).amax() < 1e-6);
    }
}

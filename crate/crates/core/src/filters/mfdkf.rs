//! Per-node model-fusion filter.

use nalgebra::{DMatrix, DVector};

use super::imm::{self, ProbabilityUpdate};
use super::{kf_predict, kf_update, InitialCondition, KfUpdate, LinearSystem};
use crate::error::{Error, Result};
use crate::fusion::{FusedObservation, SubModelBank};
use crate::linalg;

/// One hypothesis filter of the bank, with the quantities of its last update.
#[derive(Debug, Clone)]
pub struct SubFilterState {
    pub x: DVector<f64>,
    pub m: DMatrix<f64>,
    pub innovation: DVector<f64>,
    pub s: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub prediction_cov: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct NodeFilterState {
    pub sub: Vec<SubFilterState>,
    pub chi: Vec<f64>,
    pub x: DVector<f64>,
    /// Moment-matched covariance of the fused estimate; diagnostic only.
    pub cov: DMatrix<f64>,
}

impl NodeFilterState {
    pub fn new(bank: &SubModelBank, init: &InitialCondition) -> Self {
        let p = init.x_hat0.len();
        let d = bank.covariances.first().map_or(0, |b| b.nrows());
        let sub = SubFilterState {
            x: init.x_hat0.clone(),
            m: init.m0.clone(),
            innovation: DVector::zeros(d),
            s: DMatrix::zeros(d, d),
            gain: DMatrix::zeros(p, d),
            prediction_cov: init.m0.clone(),
        };
        Self {
            sub: vec![sub; bank.len()],
            chi: bank.priors.clone(),
            x: init.x_hat0.clone(),
            cov: init.m0.clone(),
        }
    }

    /// Moves the fused estimate and every sub-filter estimate by `delta`.
    pub fn shift(&mut self, delta: &DVector<f64>) {
        self.x += delta;
        for s in &mut self.sub {
            s.x += delta;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepOutcome {
    /// Sub-model that absorbed a collapsed likelihood sum, if any.
    pub anomaly: Option<usize>,
}

/// One step of the model-fusion filter at a node. The stacked observation and
/// observation matrix come from `fused`; each sub-model uses its own `B^j`.
pub fn mfdkf_step(
    sys: &LinearSystem,
    bank: &SubModelBank,
    fused: &FusedObservation,
    state: &mut NodeFilterState,
) -> Result<StepOutcome> {
    let l = bank.len();
    if state.sub.len() != l || state.chi.len() != l {
        return Err(Error::Dimension(format!(
            "node state has {} sub-filters, bank has {l}",
            state.sub.len()
        )));
    }

    // Mixing and prediction.
    let (priors_pred, cbar): (Vec<(DVector<f64>, DMatrix<f64>)>, Vec<f64>) =
        if bank.rows_identical() {
            let total: f64 = state.chi.iter().sum();
            let weights: Vec<f64> = state.chi.iter().map(|c| c / total).collect();
            let (x_pre, m_pre) = imm::mix_with(state.sub.iter().map(|s| (&s.x, &s.m)), &weights);
            let shared = kf_predict(sys, &x_pre, &m_pre)?;
            let cbar = bank.priors.iter().map(|a| a * total).collect();
            (vec![shared], cbar)
        } else {
            let (mixing, cbar) = imm::imm_mix(&state.chi, &bank.transition)?;
            let moments: Vec<(DVector<f64>, DMatrix<f64>)> = state
                .sub
                .iter()
                .map(|s| (s.x.clone(), s.m.clone()))
                .collect();
            let preds = imm::imm_mixed_moments(&moments, &mixing)
                .iter()
                .map(|(x, m)| kf_predict(sys, x, m))
                .collect::<Result<Vec<_>>>()?;
            (preds, cbar)
        };
    let pred = |j: usize| &priors_pred[if priors_pred.len() == 1 { 0 } else { j }];

    // Sub-model updates and likelihoods.
    let mut updates: Vec<KfUpdate> = Vec::with_capacity(l);
    let mut likelihoods = Vec::with_capacity(l);
    for j in 0..l {
        let (x_bar, p) = pred(j);
        let u = kf_update(x_bar, p, &fused.c, &bank.covariances[j], &fused.y)?;
        likelihoods.push(imm::likelihood_from_parts(
            cbar[j],
            u.innovation.len(),
            u.log_det_s,
            u.mahalanobis,
        ));
        updates.push(u);
    }

    let innovations: Vec<DVector<f64>> = updates.iter().map(|u| u.innovation.clone()).collect();
    let mut outcome = StepOutcome::default();
    let chi = match imm::update_model_probabilities(&likelihoods, bank, &innovations) {
        ProbabilityUpdate::Normalized(chi) => chi,
        ProbabilityUpdate::Anomaly {
            chi,
            model,
            corrected_b,
        } => {
            let (x_bar, p) = pred(model);
            updates[model] = kf_update(x_bar, p, &fused.c, &corrected_b, &fused.y)?;
            outcome.anomaly = Some(model);
            chi
        }
    };

    for ((sub, u), j) in state.sub.iter_mut().zip(updates).zip(0..) {
        sub.x = u.x;
        sub.m = u.m;
        sub.innovation = u.innovation;
        sub.s = u.s;
        sub.gain = u.gain;
        sub.prediction_cov = pred(j).1.clone();
    }
    let estimates: Vec<&DVector<f64>> = state.sub.iter().map(|s| &s.x).collect();
    state.x = imm::fuse_estimates(&estimates, &chi);
    let p = state.x.len();
    let mut cov = DMatrix::zeros(p, p);
    for (s, &c) in state.sub.iter().zip(&chi) {
        if c > 0.0 {
            let d = &s.x - &state.x;
            cov += (&s.m + linalg::outer(&d)) * c;
        }
    }
    linalg::symmetrize(&mut cov);
    state.cov = cov;
    state.chi = chi;
    if state.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("fused estimate is not finite".into()));
    }
    Ok(outcome)
}

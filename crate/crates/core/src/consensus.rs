//! Consensus fusion of neighbouring node estimates.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{mfdkf_step, LinearSystem, NodeFilterState, StepOutcome};
use crate::fusion::{FusedObservation, SubModelBank};
use crate::wsn::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusConfig {
    pub xi: f64,
}

impl ConsensusConfig {
    pub fn new(xi: f64) -> Result<Self> {
        let cfg = Self { xi };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi >= 0.0 && self.xi < 1.0) {
            return Err(Error::config("xi", "xi must satisfy 0 ≤ ξ < 1"));
        }
        Ok(())
    }

    /// `η_n = ξ / d_n`.
    pub fn gain(&self, degree: usize) -> f64 {
        self.xi / degree as f64
    }
}

/// `φ_n(k) = A x̂_n(k−1)` for every node.
pub fn propagate_estimates(sys: &LinearSystem, estimates: &[DVector<f64>]) -> Vec<DVector<f64>> {
    estimates.iter().map(|x| &sys.a * x).collect()
}

/// `x̂_n^c = x̂_n + η_n Σ_{m ∈ Nei_n, m ≠ n} (φ_m − φ_n)`.
pub fn consensus_fuse(
    x_hat: &DVector<f64>,
    phis: &[Option<DVector<f64>>],
    topo: &Topology,
    n: usize,
    cfg: &ConsensusConfig,
) -> Result<DVector<f64>> {
    let others = topo.others(n)?;
    if cfg.xi == 0.0 || others.is_empty() {
        return Ok(x_hat.clone());
    }
    let missing = |m: usize| {
        Error::DataUnavailable(format!(
            "node {} has no propagated estimate from node {}",
            n + 1,
            m + 1
        ))
    };
    let phi_n = phis
        .get(n)
        .and_then(|p| p.as_ref())
        .ok_or_else(|| missing(n))?;
    let mut sum = DVector::zeros(x_hat.len());
    for m in others {
        let phi_m = phis
            .get(m)
            .and_then(|p| p.as_ref())
            .ok_or_else(|| missing(m))?;
        sum += phi_m - phi_n;
    }
    Ok(x_hat + sum * cfg.gain(topo.degree(n)?))
}

/// Second phase of a consensus step: every node reads the same snapshot of
/// propagated previous estimates, and the correction re-centres the node's
/// sub-filters.
fn apply_consensus(
    states: &mut [NodeFilterState],
    phis: &[Option<DVector<f64>>],
    topo: &Topology,
    cfg: &ConsensusConfig,
) -> Result<()> {
    let fused: Vec<DVector<f64>> = states
        .iter()
        .enumerate()
        .map(|(n, st)| consensus_fuse(&st.x, phis, topo, n, cfg))
        .collect::<Result<_>>()?;
    for (st, xc) in states.iter_mut().zip(fused) {
        let delta = &xc - &st.x;
        st.shift(&delta);
    }
    Ok(())
}

fn check_lengths(topo: &Topology, states: usize, observations: usize, banks: usize) -> Result<()> {
    let n = topo.node_count();
    if states != n || observations != n || banks != n {
        return Err(Error::Dimension(format!(
            "{n}-node network got {states} states, {observations} observations, {banks} banks"
        )));
    }
    Ok(())
}

/// Consensus step over full-neighbourhood model-fusion filters. `fused[n]`
/// is node `n`'s stacked neighbourhood observation and `banks[n]` its bank.
pub fn c_mfdkf_step(
    sys: &LinearSystem,
    states: &mut [NodeFilterState],
    fused: &[FusedObservation],
    banks: &[&SubModelBank],
    topo: &Topology,
    cfg: &ConsensusConfig,
) -> Result<Vec<StepOutcome>> {
    check_lengths(topo, states.len(), fused.len(), banks.len())?;
    consensus_step(sys, states, fused, banks, topo, cfg)
}

/// Consensus step over communication-free filters: `local[n]` holds only
/// node `n`'s own observation and `banks[n]` has `κ` sub-models from the
/// node's own mixture.
pub fn s_mfdkf_step(
    sys: &LinearSystem,
    states: &mut [NodeFilterState],
    local: &[FusedObservation],
    banks: &[&SubModelBank],
    topo: &Topology,
    cfg: &ConsensusConfig,
) -> Result<Vec<StepOutcome>> {
    check_lengths(topo, states.len(), local.len(), banks.len())?;
    for (n, (obs, bank)) in local.iter().zip(banks).enumerate() {
        if obs.y.len() != obs.c.nrows()
            || bank.covariances.first().map(|b| b.nrows()) != Some(obs.y.len())
        {
            return Err(Error::Dimension(format!(
                "node {} local model does not match its observation",
                n + 1
            )));
        }
    }
    consensus_step(sys, states, local, banks, topo, cfg)
}

fn consensus_step(
    sys: &LinearSystem,
    states: &mut [NodeFilterState],
    obs: &[FusedObservation],
    banks: &[&SubModelBank],
    topo: &Topology,
    cfg: &ConsensusConfig,
) -> Result<Vec<StepOutcome>> {
    cfg.validate()?;
    let prev: Vec<DVector<f64>> = states.iter().map(|s| s.x.clone()).collect();
    let phis: Vec<Option<DVector<f64>>> = propagate_estimates(sys, &prev)
        .into_iter()
        .map(Some)
        .collect();
    let outcomes = states
        .iter_mut()
        .zip(obs)
        .zip(banks)
        .map(|((st, o), bank)| mfdkf_step(sys, bank, o, st))
        .collect::<Result<Vec<_>>>()?;
    apply_consensus(states, &phis, topo, cfg)?;
    Ok(outcomes)
}

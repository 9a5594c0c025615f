//! Fused neighbourhood observation models and their sub-model banks.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::noise::GmmModel;
use crate::wsn::Topology;

/// Stacked observation of a node's neighbourhood (self included), row blocks
/// in ascending neighbour order.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedObservation {
    pub y: DVector<f64>,
    pub c: DMatrix<f64>,
    /// Block-diagonal nominal noise covariance.
    pub b: DMatrix<f64>,
}

/// The time-invariant part of a node's fused observation: which neighbours
/// contribute, their stacked observation matrix and nominal covariance.
#[derive(Debug, Clone)]
pub struct FusedLayout {
    pub node: usize,
    pub neighbors: Vec<usize>,
    pub c: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl FusedLayout {
    pub fn new(
        topo: &Topology,
        node: usize,
        per_node_h: &[DMatrix<f64>],
        per_node_r: &[DMatrix<f64>],
    ) -> Result<Self> {
        let neighbors = topo.neighbors(node)?;
        if per_node_h.len() != topo.node_count() || per_node_r.len() != topo.node_count() {
            return Err(Error::Dimension(format!(
                "need one observation matrix and covariance per node ({}), got {} and {}",
                topo.node_count(),
                per_node_h.len(),
                per_node_r.len()
            )));
        }
        let p = per_node_h[node].ncols();
        for &m in &neighbors {
            let (q, cols) = per_node_h[m].shape();
            if cols != p || per_node_r[m].shape() != (q, q) {
                return Err(Error::Dimension(format!(
                    "node {} observation model is inconsistent with node {}",
                    m + 1,
                    node + 1
                )));
            }
        }
        let c = linalg::vstack(neighbors.iter().map(|&m| &per_node_h[m]));
        let b = linalg::block_diag(neighbors.iter().map(|&m| &per_node_r[m]));
        Ok(Self {
            node,
            neighbors,
            c,
            b,
        })
    }

    /// Layout that uses only the node's own observation.
    pub fn local(node: usize, h: &DMatrix<f64>, r: &DMatrix<f64>) -> Self {
        Self {
            node,
            neighbors: vec![node],
            c: h.clone(),
            b: r.clone(),
        }
    }

    /// Stacks this step's observations of the neighbourhood.
    pub fn stack(&self, observations: &[Option<DVector<f64>>]) -> Result<DVector<f64>> {
        let mut parts = Vec::with_capacity(self.neighbors.len());
        for &m in &self.neighbors {
            match observations.get(m) {
                Some(Some(z)) => parts.push(z),
                _ => {
                    return Err(Error::DataUnavailable(format!(
                        "node {} has no observation from neighbour {}",
                        self.node + 1,
                        m + 1
                    )))
                }
            }
        }
        let y = linalg::vstack_vectors(parts);
        if y.len() != self.c.nrows() {
            return Err(Error::Dimension(format!(
                "stacked observation has {} rows, expected {}",
                y.len(),
                self.c.nrows()
            )));
        }
        Ok(y)
    }

    pub fn fuse(&self, observations: &[Option<DVector<f64>>]) -> Result<FusedObservation> {
        Ok(FusedObservation {
            y: self.stack(observations)?,
            c: self.c.clone(),
            b: self.b.clone(),
        })
    }
}

/// Stacks the neighbourhood of `n`: observations, observation matrices and
/// nominal covariances of every `m` with `a_mn = 1`, in ascending order.
pub fn build_fused_observation(
    topo: &Topology,
    n: usize,
    per_node_observations: &[Option<DVector<f64>>],
    per_node_h: &[DMatrix<f64>],
    per_node_nominal_r: &[DMatrix<f64>],
) -> Result<FusedObservation> {
    FusedLayout::new(topo, n, per_node_h, per_node_nominal_r)?.fuse(per_node_observations)
}

/// The κ^{d} observation sub-models of a node.
#[derive(Debug, Clone)]
pub struct SubModelBank {
    pub kappa: usize,
    /// Fused noise covariance `B^j` of each sub-model.
    pub covariances: Vec<DMatrix<f64>>,
    /// Prior probability `α^j` of each sub-model.
    pub priors: Vec<f64>,
    /// Component index chosen for each neighbour, first neighbour most significant.
    pub digits: Vec<Vec<usize>>,
    /// Markov transition matrix `P̃`; row `i`, column `j` is the i → j probability.
    pub transition: DMatrix<f64>,
    /// Sub-model with the largest `trace(B^j)`.
    pub largest: usize,
    rows_identical: bool,
}

impl SubModelBank {
    pub fn len(&self) -> usize {
        self.priors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.priors.is_empty()
    }

    /// Whether every row of the transition matrix is the same vector.
    pub fn rows_identical(&self) -> bool {
        self.rows_identical
    }

    /// Replaces the transition matrix (rows must be probability vectors).
    pub fn with_transition(mut self, transition: DMatrix<f64>) -> Result<Self> {
        let l = self.len();
        if transition.shape() != (l, l) {
            return Err(Error::Dimension(format!(
                "transition matrix must be {l}x{l}, got {:?}",
                transition.shape()
            )));
        }
        for i in 0..l {
            let row = transition.row(i);
            if row.iter().any(|&p| !(p >= 0.0)) || (row.sum() - 1.0).abs() > 1e-9 {
                return Err(Error::ParameterDomain(format!(
                    "transition row {} is not a probability vector",
                    i + 1
                )));
            }
        }
        self.rows_identical = (1..l).all(|i| transition.row(i) == transition.row(0));
        self.transition = transition;
        Ok(self)
    }
}

/// Enumerates every assignment of mixture components to the neighbours, in
/// mixed-radix order with the first neighbour as the most significant digit
/// and components ordered by ascending covariance.
pub fn enumerate_submodels(gmms: &[&GmmModel], kappa: usize) -> Result<SubModelBank> {
    if gmms.is_empty() {
        return Err(Error::Input(
            "sub-model enumeration needs at least one neighbour".into(),
        ));
    }
    if kappa == 0 {
        return Err(Error::config("kappa", "kappa must be ≥ 1"));
    }
    if let Some(pos) = gmms.iter().position(|g| g.kappa() != kappa) {
        return Err(Error::config(
            "kappa",
            format!(
                "neighbour {} has a {}-component model, expected {kappa}",
                pos + 1,
                gmms[pos].kappa()
            ),
        ));
    }
    let d = gmms.len();
    let l = kappa
        .checked_pow(d as u32)
        .filter(|&l| l <= 1 << 20)
        .ok_or_else(|| Error::config("kappa", format!("kappa^{d} sub-models is too many")))?;

    let mut covariances = Vec::with_capacity(l);
    let mut priors = Vec::with_capacity(l);
    let mut digits = Vec::with_capacity(l);
    for j in 0..l {
        let mut rem = j;
        let mut dig = vec![0; d];
        for t in (0..d).rev() {
            dig[t] = rem % kappa;
            rem /= kappa;
        }
        priors.push(
            dig.iter()
                .enumerate()
                .map(|(t, &c)| gmms[t].weights[c])
                .product(),
        );
        covariances.push(linalg::block_diag(
            dig.iter()
                .enumerate()
                .map(|(t, &c)| &gmms[t].covariances[c]),
        ));
        digits.push(dig);
    }
    // Ties resolve to the later index, so the all-largest combination wins.
    let largest = (0..l)
        .max_by(|&a, &b| covariances[a].trace().total_cmp(&covariances[b].trace()))
        .unwrap_or(0);

    let mut bank = SubModelBank {
        kappa,
        covariances,
        priors,
        digits,
        transition: DMatrix::zeros(0, 0),
        largest,
        rows_identical: true,
    };
    bank.transition = transition_matrix(&bank);
    Ok(bank)
}

/// Transition matrix whose every row is the prior vector.
pub fn transition_matrix(bank: &SubModelBank) -> DMatrix<f64> {
    let l = bank.priors.len();
    DMatrix::from_fn(l, l, |_, j| bank.priors[j])
}

//! Monte Carlo simulation harness: scenario configuration, oracle calibration
//! of the per-node noise models, seeded ensembles and their metrics.

mod metrics;
mod report;
mod scenario;

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::consensus::{c_mfdkf_step, s_mfdkf_step, ConsensusConfig};
use crate::error::{Error, Result};
use crate::filters::{cdkf_step, mfdkf_step, KfState, NodeFilterState};
use crate::fusion::{enumerate_submodels, FusedLayout, FusedObservation, SubModelBank};
use crate::noise::{self, em_fit_gmm, overall_covariance, EmConfig, GmmFit, GmmModel, NoiseSpec};
use crate::wsn::Topology;

pub use metrics::{disagreement, disagreement_series, rmse_series, steady_median, steady_rmse};
pub use report::{
    format_summary_table, write_disagreement_csv, write_failures_csv, write_reports,
    write_rmse_csv, write_state_dump_csv, write_summary_csv,
};
pub use scenario::{Algorithm, ComponentGroup, Scenario, SystemKind};

pub const DEFAULT_RUNS: usize = 500;
pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BURN_IN: usize = 100;
pub const DEFAULT_CALIBRATION_SAMPLES: usize = 100_000;
pub const DEFAULT_PROCESS_VARIANCE: f64 = 0.01;

const CALIBRATION_STREAM: u64 = 1 << 63;

/// Additive observation outliers, `magnitude` on every component of the
/// listed nodes for steps `start..start + len` (steps count from 1).
#[derive(Debug, Clone, PartialEq)]
pub struct OutlierInjection {
    pub nodes: Vec<usize>,
    pub start: usize,
    pub len: usize,
    pub magnitude: f64,
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub system: SystemKind,
    pub process_variance: f64,
    pub topology: Topology,
    /// Observation noise of every node.
    pub noise: Vec<NoiseSpec>,
    pub algorithm: Algorithm,
    pub kappa: usize,
    pub xi: f64,
    pub steps: usize,
    pub runs: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub calibration_samples: usize,
    /// Nodes to report (0-based); all nodes when `None`.
    pub focus: Option<Vec<usize>>,
    pub em: EmConfig,
    pub components: ComponentShape,
    pub outliers: Vec<OutlierInjection>,
}

impl ScenarioConfig {
    /// Configuration with the default sizes and the same noise at every node.
    pub fn new(
        system: SystemKind,
        topology: Topology,
        noise: NoiseSpec,
        algorithm: Algorithm,
    ) -> Self {
        let n = topology.node_count();
        Self {
            system,
            process_variance: DEFAULT_PROCESS_VARIANCE,
            topology,
            noise: vec![noise; n],
            algorithm,
            kappa: 2,
            xi: 0.0,
            steps: DEFAULT_STEPS,
            runs: DEFAULT_RUNS,
            burn_in: DEFAULT_BURN_IN,
            seed: 0,
            calibration_samples: DEFAULT_CALIBRATION_SAMPLES,
            focus: None,
            em: EmConfig::default(),
            components: ComponentShape::default(),
            outliers: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let violations = self.topology.validate();
        if let Some(v) = violations.first() {
            return Err(Error::config("topology", v.to_string()));
        }
        let n = self.topology.node_count();
        if self.noise.len() != n {
            return Err(Error::config(
                "noise",
                format!("{} noise specs for {n} nodes", self.noise.len()),
            ));
        }
        for (i, spec) in self.noise.iter().enumerate() {
            spec.validate()
                .map_err(|e| Error::config(format!("noise[{}]", i + 1), e.to_string()))?;
        }
        if self.kappa == 0 {
            return Err(Error::config("kappa", "kappa must be ≥ 1"));
        }
        ConsensusConfig::new(self.xi)?;
        if self.runs == 0 {
            return Err(Error::config("runs", "runs must be ≥ 1"));
        }
        if self.steps <= self.burn_in {
            return Err(Error::config(
                "steps",
                format!(
                    "steps ({}) must exceed burn_in ({})",
                    self.steps, self.burn_in
                ),
            ));
        }
        if self.calibration_samples < 10 * self.kappa {
            return Err(Error::config(
                "calibration_samples",
                format!(
                    "need at least {} samples for kappa={}",
                    10 * self.kappa,
                    self.kappa
                ),
            ));
        }
        if let Some(focus) = &self.focus {
            if focus.is_empty() {
                return Err(Error::config("node", "node focus is empty"));
            }
            if let Some(&bad) = focus.iter().find(|&&f| f >= n) {
                return Err(Error::config(
                    "node",
                    Error::NodeOutOfRange {
                        node: bad + 1,
                        count: n,
                    }
                    .to_string(),
                ));
            }
        }
        for o in &self.outliers {
            if o.nodes.iter().any(|&m| m >= n) || !o.magnitude.is_finite() {
                return Err(Error::config(
                    "outliers",
                    "outlier nodes or magnitude out of range",
                ));
            }
        }
        self.system.build(self.process_variance)?;
        Ok(())
    }

    /// Nodes whose estimates are reported.
    pub fn reported_nodes(&self) -> Vec<usize> {
        match &self.focus {
            Some(f) => {
                let mut f = f.clone();
                f.sort_unstable();
                f.dedup();
                f
            }
            None => (0..self.topology.node_count()).collect(),
        }
    }

    /// Nodes whose filters have to run: consensus couples the whole network.
    pub fn simulated_nodes(&self) -> Vec<usize> {
        if self.algorithm.uses_consensus() {
            (0..self.topology.node_count()).collect()
        } else {
            self.reported_nodes()
        }
    }

    /// Nodes whose observations (and noise models) the simulated filters use.
    pub fn observed_nodes(&self) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for n in self.simulated_nodes() {
            if self.algorithm == Algorithm::SMfdkf {
                out.push(n);
            } else {
                out.extend(self.topology.neighbors(n)?);
            }
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }
}

/// Noise model of one node fitted from calibration samples.
#[derive(Debug, Clone)]
pub struct NodeCalibration {
    pub gmm: Arc<GmmModel>,
    /// Overall covariance of the fitted model, the conventional filter's `R`.
    pub nominal: DMatrix<f64>,
    pub iterations: usize,
    pub restarts: usize,
    pub converged: bool,
    pub log_likelihood: f64,
}

/// Shape of the fitted mixture components for vector observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ComponentShape {
    /// Full covariance per component.
    Full,
    /// One scalar mixture over all observation axes, used as `rᵢ·I`.
    #[default]
    Isotropic,
}

impl std::str::FromStr for ComponentShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(ComponentShape::Full),
            "isotropic" => Ok(ComponentShape::Isotropic),
            other => Err(Error::config(
                "components",
                format!("unknown component shape `{other}` (expected full or isotropic)"),
            )),
        }
    }
}

fn fit_shaped(
    samples: &[DVector<f64>],
    kappa: usize,
    em: &EmConfig,
    shape: ComponentShape,
) -> Result<GmmFit> {
    let dim = samples.first().map_or(0, |s| s.len());
    if shape == ComponentShape::Full || dim <= 1 {
        return em_fit_gmm(samples, kappa, em);
    }
    let pooled: Vec<DVector<f64>> = samples
        .iter()
        .flat_map(|s| s.iter().map(|&v| DVector::from_element(1, v)))
        .collect();
    let mut fit = em_fit_gmm(&pooled, kappa, em)?;
    let m = &fit.model;
    fit.model = GmmModel::new(
        m.weights.clone(),
        m.means
            .iter()
            .map(|mu| DVector::from_element(dim, mu[0]))
            .collect(),
        m.covariances
            .iter()
            .map(|c| DMatrix::from_diagonal_element(dim, dim, c[(0, 0)]))
            .collect(),
    )?;
    fit.model.sample_count = samples.len();
    Ok(fit)
}

impl NodeCalibration {
    pub fn fit(samples: &[DVector<f64>], kappa: usize, em: &EmConfig) -> Result<Self> {
        Self::fit_with(samples, kappa, em, ComponentShape::Full)
    }

    pub fn fit_with(
        samples: &[DVector<f64>],
        kappa: usize,
        em: &EmConfig,
        shape: ComponentShape,
    ) -> Result<Self> {
        let fit = fit_shaped(samples, kappa, em, shape)?;
        let nominal = if kappa == 1 {
            overall_covariance(&fit.model)
        } else {
            overall_covariance(&fit_shaped(samples, 1, em, shape)?.model)
        };
        Ok(Self {
            nominal,
            iterations: fit.iterations,
            restarts: fit.restarts,
            converged: fit.converged,
            log_likelihood: fit.log_likelihood.last().copied().unwrap_or(f64::NAN),
            gmm: Arc::new(fit.model),
        })
    }
}

/// Fitted noise models for the observed nodes of a configuration.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub kappa: usize,
    pub nodes: Vec<Option<NodeCalibration>>,
}

impl Calibration {
    pub fn node(&self, n: usize) -> Result<&NodeCalibration> {
        self.nodes
            .get(n)
            .and_then(|c| c.as_ref())
            .ok_or_else(|| Error::DataUnavailable(format!("node {} is not calibrated", n + 1)))
    }

    /// Whether this calibration serves `cfg` without refitting.
    pub fn covers(&self, cfg: &ScenarioConfig) -> bool {
        self.kappa == cfg.kappa
            && self.nodes.len() == cfg.topology.node_count()
            && cfg
                .observed_nodes()
                .map(|o| o.iter().all(|&n| self.nodes[n].is_some()))
                .unwrap_or(false)
    }
}

/// Calibration samples of node `n`, drawn from its true noise model.
pub fn calibration_samples(cfg: &ScenarioConfig, n: usize) -> Result<Vec<DVector<f64>>> {
    let dim = cfg.system.build(cfg.process_variance)?.obs_dim();
    let mut rng = stream_rng(cfg.seed, CALIBRATION_STREAM | n as u64);
    noise::sample(&cfg.noise[n], dim, cfg.calibration_samples, &mut rng)
}

/// Draws calibration samples for every observed node and fits its model.
pub fn calibrate(cfg: &ScenarioConfig) -> Result<Calibration> {
    cfg.validate()?;
    let observed = cfg.observed_nodes()?;
    let fitted = observed
        .par_iter()
        .map(|&n| {
            let samples = calibration_samples(cfg, n)?;
            NodeCalibration::fit_with(&samples, cfg.kappa, &node_em(cfg, n), cfg.components)
        })
        .collect::<Vec<Result<NodeCalibration>>>();
    let mut nodes = vec![None; cfg.topology.node_count()];
    for (&n, fit) in observed.iter().zip(fitted) {
        nodes[n] = Some(fit?);
    }
    Ok(Calibration {
        kappa: cfg.kappa,
        nodes,
    })
}

/// Fits one model to externally supplied samples and uses it at every node.
pub fn calibrate_from_samples(
    cfg: &ScenarioConfig,
    samples: &[DVector<f64>],
) -> Result<Calibration> {
    cfg.validate()?;
    let dim = cfg.system.build(cfg.process_variance)?.obs_dim();
    if samples.first().map(|s| s.len()) != Some(dim) {
        return Err(Error::Dimension(format!(
            "calibration samples must have dimension {dim}"
        )));
    }
    let fit = NodeCalibration::fit_with(samples, cfg.kappa, &cfg.em, cfg.components)?;
    Ok(Calibration {
        kappa: cfg.kappa,
        nodes: vec![Some(fit); cfg.topology.node_count()],
    })
}

fn node_em(cfg: &ScenarioConfig, n: usize) -> EmConfig {
    EmConfig {
        seed: cfg.em.seed
            ^ cfg.seed.rotate_left(17)
            ^ (n as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        ..cfg.em.clone()
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn lane_rng(seed: u64, run: usize, lane: usize) -> ChaCha8Rng {
    stream_rng(seed, ((run as u64) << 16) | lane as u64)
}

/// Why a run was excluded from the aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub run: usize,
    pub step: usize,
    pub node: Option<usize>,
    pub message: String,
}

/// Trajectories of one Monte Carlo run. Estimate rows follow `nodes`.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub run: usize,
    pub nodes: Vec<usize>,
    pub truth: Vec<DVector<f64>>,
    pub estimates: Vec<Vec<DVector<f64>>>,
    /// Model probabilities per node and step, when requested.
    pub chi: Option<Vec<Vec<Vec<f64>>>>,
    /// Steps (from 1) at which each node took the collapsed-likelihood branch.
    pub anomalies: Vec<Vec<usize>>,
    pub failure: Option<RunFailure>,
}

/// Borrowed filter states of every simulated node.
#[derive(Clone, Copy)]
pub enum FilterView<'a> {
    Conventional(&'a [KfState]),
    Mixture(&'a [NodeFilterState]),
}

enum Filters {
    Cdkf(Vec<KfState>),
    Mixture(Vec<NodeFilterState>),
}

/// A configuration bound to its calibration, ready to simulate runs.
pub struct Experiment {
    pub config: ScenarioConfig,
    pub scenario: Scenario,
    nodes: Vec<usize>,
    observed: Vec<usize>,
    layouts: Vec<FusedLayout>,
    banks: Vec<Arc<SubModelBank>>,
    noise: Vec<Option<NoiseSpec>>,
    q_factor: DMatrix<f64>,
}

impl Experiment {
    pub fn new(config: ScenarioConfig, calibration: &Calibration) -> Result<Self> {
        config.validate()?;
        let scenario = config.system.build(config.process_variance)?;
        let topo = &config.topology;
        let n_nodes = topo.node_count();
        let nodes = config.simulated_nodes();
        let observed = config.observed_nodes()?;
        if config.algorithm.uses_mixture() && calibration.kappa != config.kappa {
            return Err(Error::config(
                "kappa",
                format!(
                    "calibration has kappa={}, configuration has {}",
                    calibration.kappa, config.kappa
                ),
            ));
        }
        let q = scenario.obs_dim();
        let mut h = vec![scenario.h.clone(); n_nodes];
        let mut r = vec![DMatrix::identity(q, q); n_nodes];
        for &m in &observed {
            let cal = calibration.node(m)?;
            if cal.nominal.nrows() != q {
                return Err(Error::Dimension(format!(
                    "node {} calibration has dimension {}, observations have {q}",
                    m + 1,
                    cal.nominal.nrows()
                )));
            }
            r[m] = cal.nominal.clone();
            h[m] = scenario.h.clone();
        }
        let mut layouts = Vec::with_capacity(nodes.len());
        let mut banks = Vec::new();
        for &n in &nodes {
            let local = config.algorithm == Algorithm::SMfdkf;
            let layout = if local {
                FusedLayout::local(n, &h[n], &r[n])
            } else {
                FusedLayout::new(topo, n, &h, &r)?
            };
            if config.algorithm.uses_mixture() {
                let gmms: Vec<&GmmModel> = layout
                    .neighbors
                    .iter()
                    .map(|&m| calibration.node(m).map(|c| c.gmm.as_ref()))
                    .collect::<Result<_>>()?;
                banks.push(Arc::new(enumerate_submodels(&gmms, config.kappa)?));
            }
            layouts.push(layout);
        }
        let noise = (0..n_nodes)
            .map(|m| {
                if observed.contains(&m) {
                    config.noise[m].for_dim(q).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_>>()?;
        let q_factor = noise::psd_factor(&scenario.system.q);
        Ok(Self {
            config,
            scenario,
            nodes,
            observed,
            layouts,
            banks,
            noise,
            q_factor,
        })
    }

    /// Nodes with a running filter, in estimate-row order.
    pub fn simulated_nodes(&self) -> &[usize] {
        &self.nodes
    }

    /// Sub-model bank of the `i`-th simulated node.
    pub fn bank(&self, i: usize) -> Option<&SubModelBank> {
        self.banks.get(i).map(|b| b.as_ref())
    }

    fn initial_filters(&self) -> Filters {
        let init = &self.scenario.init;
        if self.config.algorithm.uses_mixture() {
            Filters::Mixture(
                self.banks
                    .iter()
                    .map(|b| NodeFilterState::new(b, init))
                    .collect(),
            )
        } else {
            Filters::Cdkf(self.nodes.iter().map(|_| KfState::new(init)).collect())
        }
    }

    /// Simulates run `run` and records its trajectories. Failures are
    /// reported in the record, which then holds the steps completed so far.
    pub fn simulate_run(&self, run: usize, record_chi: bool) -> RunRecord {
        self.simulate_run_observed(run, record_chi, &mut |_, _, _| {})
    }

    /// As [`Experiment::simulate_run`], calling `observer` with the step, the
    /// true state and every node's filter state after each completed step.
    pub fn simulate_run_observed(
        &self,
        run: usize,
        record_chi: bool,
        observer: &mut dyn FnMut(usize, &DVector<f64>, FilterView<'_>),
    ) -> RunRecord {
        let cfg = &self.config;
        let sys = &self.scenario.system;
        let n_nodes = cfg.topology.node_count();
        let steps = cfg.steps;
        let mut truth_rng = lane_rng(cfg.seed, run, 0);
        let mut noise_rngs: Vec<Option<ChaCha8Rng>> = (0..n_nodes)
            .map(|m| {
                self.noise[m]
                    .as_ref()
                    .map(|_| lane_rng(cfg.seed, run, m + 1))
            })
            .collect();
        let q = self.scenario.obs_dim();
        let mut x = self.scenario.init.x0.clone();
        let mut filters = self.initial_filters();
        let consensus = ConsensusConfig { xi: cfg.xi };
        let bank_refs: Vec<&SubModelBank> = self.banks.iter().map(|b| b.as_ref()).collect();

        let mut rec = RunRecord {
            run,
            nodes: self.nodes.clone(),
            truth: Vec::with_capacity(steps),
            estimates: vec![Vec::with_capacity(steps); self.nodes.len()],
            chi: record_chi.then(|| vec![Vec::with_capacity(steps); self.nodes.len()]),
            anomalies: vec![Vec::new(); self.nodes.len()],
            failure: None,
        };
        let mut obs: Vec<Option<DVector<f64>>> = vec![None; n_nodes];

        for k in 1..=steps {
            let w = DVector::from_fn(self.q_factor.ncols(), |_, _| {
                StandardNormal.sample(&mut truth_rng)
            });
            let w = &self.q_factor * w;
            x = match &sys.g {
                Some(g) => &sys.a * &x + g * w,
                None => &sys.a * &x + w,
            };
            let clean = &self.scenario.h * &x;
            for &m in &self.observed {
                let rng = noise_rngs[m]
                    .as_mut()
                    .expect("observed node has a noise stream");
                let spec = self.noise[m]
                    .as_ref()
                    .expect("observed node has a noise model");
                let mut z = &clean + spec.sample_one(q, rng);
                for o in &cfg.outliers {
                    if o.nodes.contains(&m) && k >= o.start && k < o.start + o.len {
                        z.add_scalar_mut(o.magnitude);
                    }
                }
                obs[m] = Some(z);
            }

            let fail = |node: Option<usize>, e: Error| RunFailure {
                run,
                step: k,
                node: node.map(|i| self.nodes[i]),
                message: e.to_string(),
            };
            let fused: Vec<FusedObservation> = match self
                .layouts
                .iter()
                .map(|l| l.fuse(&obs))
                .collect::<Result<_>>()
            {
                Ok(f) => f,
                Err(e) => {
                    rec.failure = Some(fail(None, e));
                    return rec;
                }
            };

            let stepped: std::result::Result<Vec<Option<usize>>, RunFailure> = match &mut filters {
                Filters::Cdkf(states) => states
                    .iter_mut()
                    .zip(&fused)
                    .enumerate()
                    .map(|(i, (st, f))| {
                        cdkf_step(sys, f, st)
                            .map(|_| None)
                            .map_err(|e| fail(Some(i), e))
                    })
                    .collect(),
                Filters::Mixture(states) => match cfg.algorithm {
                    Algorithm::Mfdkf => states
                        .iter_mut()
                        .zip(&fused)
                        .zip(&bank_refs)
                        .enumerate()
                        .map(|(i, ((st, f), b))| {
                            mfdkf_step(sys, b, f, st)
                                .map(|o| o.anomaly)
                                .map_err(|e| fail(Some(i), e))
                        })
                        .collect(),
                    Algorithm::CMfdkf => {
                        c_mfdkf_step(sys, states, &fused, &bank_refs, &cfg.topology, &consensus)
                            .map(|o| o.into_iter().map(|s| s.anomaly).collect())
                            .map_err(|e| fail(None, e))
                    }
                    Algorithm::SMfdkf => {
                        s_mfdkf_step(sys, states, &fused, &bank_refs, &cfg.topology, &consensus)
                            .map(|o| o.into_iter().map(|s| s.anomaly).collect())
                            .map_err(|e| fail(None, e))
                    }
                    Algorithm::Cdkf => unreachable!("conventional filter has no mixture state"),
                },
            };
            let anomalies = match stepped {
                Ok(a) => a,
                Err(f) => {
                    rec.failure = Some(f);
                    return rec;
                }
            };

            rec.truth.push(x.clone());
            for (i, a) in anomalies.iter().enumerate() {
                if a.is_some() {
                    rec.anomalies[i].push(k);
                }
            }
            match &filters {
                Filters::Cdkf(states) => {
                    for (i, st) in states.iter().enumerate() {
                        rec.estimates[i].push(st.x.clone());
                    }
                }
                Filters::Mixture(states) => {
                    for (i, st) in states.iter().enumerate() {
                        rec.estimates[i].push(st.x.clone());
                        if let Some(chi) = rec.chi.as_mut() {
                            chi[i].push(st.chi.clone());
                        }
                    }
                }
            }
            if let Some(i) = rec
                .estimates
                .iter()
                .position(|e| e.last().is_some_and(|v| v.iter().any(|c| !c.is_finite())))
            {
                rec.failure = Some(fail(
                    Some(i),
                    Error::Numerical("estimate is not finite".into()),
                ));
                return rec;
            }
            let view = match &filters {
                Filters::Cdkf(states) => FilterView::Conventional(states),
                Filters::Mixture(states) => FilterView::Mixture(states),
            };
            observer(k, &x, view);
        }
        rec
    }

    /// Runs the full ensemble and aggregates its metrics.
    pub fn run_monte_carlo(&self) -> MetricsReport {
        let cfg = &self.config;
        let reported = cfg.reported_nodes();
        let rows: Vec<usize> = reported
            .iter()
            .map(|n| {
                self.nodes
                    .iter()
                    .position(|m| m == n)
                    .expect("reported node is simulated")
            })
            .collect();
        let groups = &self.scenario.groups;

        let stats: Vec<RunStats> = (0..cfg.runs)
            .into_par_iter()
            .map(|run| {
                let t0 = Instant::now();
                let rec = self.simulate_run(run, false);
                RunStats::from_record(rec, &rows, groups, t0.elapsed().as_secs_f64())
            })
            .collect();

        let steps = cfg.steps;
        let mut sq = vec![vec![vec![0.0; steps]; groups.len()]; rows.len()];
        let mut dis = vec![vec![0.0; steps]; groups.len()];
        let mut ok = 0usize;
        let mut failures = Vec::new();
        let mut final_errors = vec![Vec::new(); rows.len()];
        let mut anomaly_steps = 0;
        let mut wall_clock = Vec::with_capacity(cfg.runs);
        for s in stats {
            wall_clock.push(s.seconds);
            if let Some(f) = s.failure {
                failures.push(f);
                continue;
            }
            ok += 1;
            anomaly_steps += s.anomaly_steps;
            for (acc, run) in sq.iter_mut().zip(&s.sq) {
                for (a, r) in acc.iter_mut().zip(run) {
                    for (x, y) in a.iter_mut().zip(r) {
                        *x += y;
                    }
                }
            }
            for (acc, run) in dis.iter_mut().zip(&s.disagreement) {
                for (x, y) in acc.iter_mut().zip(run) {
                    *x += y;
                }
            }
            for (f, e) in final_errors.iter_mut().zip(s.final_errors) {
                f.push(e);
            }
        }

        let denom = ok as f64;
        let rmse: Vec<Vec<Vec<f64>>> = sq
            .iter()
            .map(|node| {
                node.iter()
                    .map(|g| g.iter().map(|s| (s / denom).sqrt()).collect())
                    .collect()
            })
            .collect();
        let network_rmse: Vec<Vec<f64>> = (0..groups.len())
            .map(|g| {
                (0..steps)
                    .map(|k| {
                        let total: f64 = sq.iter().map(|node| node[g][k]).sum();
                        (total / (denom * rows.len() as f64)).sqrt()
                    })
                    .collect()
            })
            .collect();
        let disagreement = (self.nodes.len() >= 2).then(|| {
            dis.iter()
                .map(|g| g.iter().map(|d| d / denom).collect::<Vec<f64>>())
                .collect::<Vec<_>>()
        });
        let steady_disagreement = disagreement.as_ref().map(|d| {
            d.iter()
                .map(|g| steady_rmse(g, cfg.burn_in).unwrap_or(f64::NAN))
                .collect::<Vec<f64>>()
        });

        let summarize = |node: Option<usize>, group: usize, series: &[f64]| NodeSummary {
            node,
            group: groups[group].name.clone(),
            steady_rmse_mean: steady_rmse(series, cfg.burn_in).unwrap_or(f64::NAN),
            steady_rmse_median: steady_median(series, cfg.burn_in).unwrap_or(f64::NAN),
            steady_disagreement: steady_disagreement.as_ref().map(|d| d[group]),
        };
        let mut summaries = Vec::new();
        for (i, &n) in reported.iter().enumerate() {
            for g in 0..groups.len() {
                summaries.push(summarize(Some(n), g, &rmse[i][g]));
            }
        }
        if reported.len() > 1 {
            for (g, series) in network_rmse.iter().enumerate() {
                summaries.push(summarize(None, g, series));
            }
        }

        MetricsReport {
            algorithm: cfg.algorithm,
            kappa: cfg.kappa,
            xi: cfg.xi,
            seed: cfg.seed,
            steps,
            burn_in: cfg.burn_in,
            nodes: reported,
            groups: groups.iter().map(|g| g.name.clone()).collect(),
            rmse,
            network_rmse,
            summaries,
            disagreement,
            steady_disagreement,
            successful_runs: ok,
            failures,
            anomaly_steps,
            final_errors,
            wall_clock,
        }
    }
}

fn project(x: &DVector<f64>, indices: &[usize]) -> DVector<f64> {
    if indices.is_empty() {
        x.clone()
    } else {
        DVector::from_iterator(indices.len(), indices.iter().map(|&i| x[i]))
    }
}

struct RunStats {
    sq: Vec<Vec<Vec<f64>>>,
    disagreement: Vec<Vec<f64>>,
    final_errors: Vec<DVector<f64>>,
    anomaly_steps: usize,
    failure: Option<RunFailure>,
    seconds: f64,
}

impl RunStats {
    fn from_record(
        rec: RunRecord,
        rows: &[usize],
        groups: &[ComponentGroup],
        seconds: f64,
    ) -> Self {
        if rec.failure.is_some() {
            return Self {
                sq: Vec::new(),
                disagreement: Vec::new(),
                final_errors: Vec::new(),
                anomaly_steps: 0,
                failure: rec.failure,
                seconds,
            };
        }
        let sq = rows
            .iter()
            .map(|&i| {
                groups
                    .iter()
                    .map(|g| {
                        rec.estimates[i]
                            .iter()
                            .zip(&rec.truth)
                            .map(|(e, t)| metrics::squared_error(e, t, &g.indices))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let disagreement = groups
            .iter()
            .map(|g| {
                let projected: Vec<Vec<DVector<f64>>> = rec
                    .estimates
                    .iter()
                    .map(|traj| traj.iter().map(|x| project(x, &g.indices)).collect())
                    .collect();
                disagreement_series(&projected).unwrap_or_default()
            })
            .collect();
        let final_errors = rows
            .iter()
            .map(|&i| {
                rec.estimates[i].last().expect("non-empty run")
                    - rec.truth.last().expect("non-empty run")
            })
            .collect();
        Self {
            sq,
            disagreement,
            final_errors,
            anomaly_steps: rec.anomalies.iter().map(|a| a.len()).sum(),
            failure: None,
            seconds,
        }
    }
}

/// Steady-state accuracy of one node (or the pooled network when `node` is
/// `None`) in one component group.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSummary {
    pub node: Option<usize>,
    pub group: String,
    pub steady_rmse_mean: f64,
    pub steady_rmse_median: f64,
    /// Steady disagreement of the whole network in this group.
    pub steady_disagreement: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub algorithm: Algorithm,
    pub kappa: usize,
    pub xi: f64,
    pub seed: u64,
    pub steps: usize,
    pub burn_in: usize,
    /// Reported nodes (0-based), in row order of `rmse`.
    pub nodes: Vec<usize>,
    pub groups: Vec<String>,
    /// Per-step RMSE indexed by node row, group, step.
    pub rmse: Vec<Vec<Vec<f64>>>,
    /// Per-step RMSE pooled over the reported nodes, by group.
    pub network_rmse: Vec<Vec<f64>>,
    pub summaries: Vec<NodeSummary>,
    /// Per-step disagreement over the simulated nodes by group, averaged over runs.
    pub disagreement: Option<Vec<Vec<f64>>>,
    pub steady_disagreement: Option<Vec<f64>>,
    pub successful_runs: usize,
    pub failures: Vec<RunFailure>,
    pub anomaly_steps: usize,
    /// Final-step estimation error of every successful run, by node row.
    pub final_errors: Vec<Vec<DVector<f64>>>,
    pub wall_clock: Vec<f64>,
}

impl MetricsReport {
    /// Steady summary of `node` (0-based) in `group`.
    pub fn summary(&self, node: usize, group: &str) -> Option<&NodeSummary> {
        self.summaries
            .iter()
            .find(|s| s.node == Some(node) && s.group == group)
    }

    pub fn steady(&self, node: usize, group: &str) -> f64 {
        self.summary(node, group)
            .map_or(f64::NAN, |s| s.steady_rmse_mean)
    }

    /// Pooled network summary in `group`, or the single node's when only one is reported.
    pub fn network(&self, group: &str) -> Option<&NodeSummary> {
        self.summaries
            .iter()
            .find(|s| s.node.is_none() && s.group == group)
            .or_else(|| {
                (self.nodes.len() == 1)
                    .then(|| self.summary(self.nodes[0], group))
                    .flatten()
            })
    }
}

/// Calibrates, then runs the ensemble.
pub fn run_monte_carlo(cfg: &ScenarioConfig) -> Result<MetricsReport> {
    let cal = calibrate(cfg)?;
    Ok(Experiment::new(cfg.clone(), &cal)?.run_monte_carlo())
}

/// Truth trajectory and per-node observations without any filter.
pub fn simulate_truth(
    cfg: &ScenarioConfig,
    run: usize,
) -> Result<(Vec<DVector<f64>>, Vec<Vec<DVector<f64>>>)> {
    cfg.validate()?;
    let sc = cfg.system.build(cfg.process_variance)?;
    let n_nodes = cfg.topology.node_count();
    let q = sc.obs_dim();
    let factor = noise::psd_factor(&sc.system.q);
    let specs: Vec<NoiseSpec> = cfg
        .noise
        .iter()
        .map(|s| s.for_dim(q))
        .collect::<Result<_>>()?;
    let mut truth_rng = lane_rng(cfg.seed, run, 0);
    let mut rngs: Vec<ChaCha8Rng> = (0..n_nodes)
        .map(|m| lane_rng(cfg.seed, run, m + 1))
        .collect();
    let mut x = sc.init.x0.clone();
    let mut truth = Vec::with_capacity(cfg.steps);
    let mut obs = vec![Vec::with_capacity(cfg.steps); n_nodes];
    for _ in 0..cfg.steps {
        let w = &factor
            * DVector::from_fn(factor.ncols(), |_, _| StandardNormal.sample(&mut truth_rng));
        x = match &sc.system.g {
            Some(g) => &sc.system.a * &x + g * w,
            None => &sc.system.a * &x + w,
        };
        for m in 0..n_nodes {
            obs[m].push(&sc.h * &x + specs[m].sample_one(q, &mut rngs[m]));
        }
        truth.push(x.clone());
    }
    Ok((truth, obs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(algorithm: Algorithm) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::new(
            SystemKind::rotating(),
            Topology::paper10(),
            "alpha(1.2, 0, 2, 0)".parse().unwrap(),
            algorithm,
        );
        cfg.runs = 4;
        cfg.steps = 60;
        cfg.burn_in = 10;
        cfg.calibration_samples = 5000;
        cfg.seed = 7;
        cfg
    }

    #[test]
    fn validation_messages() {
        let mut cfg = small(Algorithm::Mfdkf);
        cfg.kappa = 0;
        assert!(cfg
            .validate()
            .unwrap_err()
            .to_string()
            .contains("kappa must be ≥ 1"));
        let mut cfg = small(Algorithm::CMfdkf);
        cfg.xi = 1.0;
        assert!(cfg
            .validate()
            .unwrap_err()
            .to_string()
            .contains("xi must satisfy 0 ≤ ξ < 1"));
        let mut cfg = small(Algorithm::Cdkf);
        cfg.steps = cfg.burn_in;
        assert!(cfg.validate().is_err());
        let mut cfg = small(Algorithm::Cdkf);
        cfg.focus = Some(vec![10]);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn observed_nodes_follow_neighbourhoods() {
        let mut cfg = small(Algorithm::Mfdkf);
        cfg.focus = Some(vec![3]);
        assert_eq!(cfg.observed_nodes().unwrap(), vec![2, 3, 4, 5]);
        cfg.algorithm = Algorithm::SMfdkf;
        assert_eq!(cfg.simulated_nodes().len(), 10);
        assert_eq!(cfg.observed_nodes().unwrap().len(), 10);
    }

    #[test]
    fn process_noise_variance() {
        let mut cfg = small(Algorithm::Cdkf);
        cfg.process_variance = 0.1;
        cfg.noise =
            vec![
                NoiseSpec::Gaussian(crate::noise::GaussianSpec::isotropic(0.0, 1.0, 1).unwrap());
                10
            ];
        cfg.steps = 100_000;
        cfg.burn_in = 0;
        let (truth, _) = simulate_truth(&cfg, 0).unwrap();
        let a = &cfg.system.build(0.1).unwrap().system.a;
        let mut prev = cfg.system.build(0.1).unwrap().init.x0;
        let mut acc = 0.0;
        for x in &truth {
            let w = x - a * &prev;
            acc += w.norm_squared();
            prev = x.clone();
        }
        let var = acc / (2.0 * truth.len() as f64);
        assert!((var - 0.1).abs() < 0.005, "variance {var}");
    }

    #[test]
    fn deterministic_and_order_free() {
        let cfg = small(Algorithm::Mfdkf);
        let cal = calibrate(&cfg).unwrap();
        let exp = Experiment::new(cfg.clone(), &cal).unwrap();
        let a = exp.run_monte_carlo();
        let b = Experiment::new(cfg, &cal).unwrap().run_monte_carlo();
        assert_eq!(a.rmse, b.rmse);
        assert_eq!(a.disagreement, b.disagreement);
        let r2 = exp.simulate_run(2, false);
        let r2_again = exp.simulate_run(2, false);
        assert_eq!(r2.estimates, r2_again.estimates);
    }

    #[test]
    fn degenerate_sizes() {
        let mut cfg = small(Algorithm::Cdkf);
        cfg.runs = 1;
        cfg.steps = cfg.burn_in + 1;
        let rep = run_monte_carlo(&cfg).unwrap();
        assert_eq!(rep.successful_runs, 1);
        let s = rep.summary(3, "state").unwrap();
        assert_eq!(s.steady_rmse_mean, rep.rmse[3][0][cfg.burn_in]);
        assert_eq!(s.steady_rmse_mean, s.steady_rmse_median);
    }

    #[test]
    fn single_reported_node_has_no_disagreement() {
        let mut cfg = small(Algorithm::Cdkf);
        cfg.focus = Some(vec![3]);
        let rep = run_monte_carlo(&cfg).unwrap();
        assert!(rep.disagreement.is_none());
        assert!(rep.network("state").is_some());
    }
}

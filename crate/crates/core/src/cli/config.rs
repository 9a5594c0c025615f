//! Scenario configuration files.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::harness::{Algorithm, OutlierInjection, ScenarioConfig, SystemKind};
use crate::noise::{EmConfig, NoiseSpec};
use crate::wsn::Topology;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    system: String,
    theta: Option<f64>,
    process_variance: Option<f64>,
    topology: Option<RawTopology>,
    noise: RawNoise,
    algorithm: Option<String>,
    algo: Option<String>,
    kappa: Option<i64>,
    xi: Option<f64>,
    runs: Option<i64>,
    steps: Option<i64>,
    burn_in: Option<i64>,
    seed: Option<u64>,
    calibration_samples: Option<i64>,
    nodes: Option<Vec<i64>>,
    calibration_file: Option<PathBuf>,
    em: Option<RawEm>,
    components: Option<String>,
    #[serde(default)]
    outliers: Vec<RawOutliers>,
    #[serde(default)]
    sweep: Vec<RawSweep>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawTopology {
    Named(String),
    Edges {
        nodes: usize,
        #[serde(default)]
        edges: Vec<(usize, usize)>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawNoise {
    Shared(String),
    PerNode(Vec<String>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEm {
    max_iterations: Option<usize>,
    relative_tolerance: Option<f64>,
    max_restarts: Option<usize>,
    seeding_subsample: Option<usize>,
    covariance_floor: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutliers {
    nodes: Vec<usize>,
    start: usize,
    len: usize,
    magnitude: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    param: String,
    values: Vec<toml::Value>,
}

/// One swept parameter and its values, kept as text until applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Algorithm,
    Kappa,
    Xi,
    Noise,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "algorithm" | "algo" => Ok(SweepParam::Algorithm),
            "kappa" => Ok(SweepParam::Kappa),
            "xi" => Ok(SweepParam::Xi),
            "noise" => Ok(SweepParam::Noise),
            other => Err(Error::config(
                "sweep.param",
                format!("cannot sweep `{other}` (expected algorithm, kappa, xi or noise)"),
            )),
        }
    }
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Algorithm => "algorithm",
            SweepParam::Kappa => "kappa",
            SweepParam::Xi => "xi",
            SweepParam::Noise => "noise",
        }
    }

    /// Sets this parameter on `cfg` and re-validates.
    pub fn apply(&self, cfg: &mut ScenarioConfig, value: &str) -> Result<()> {
        let key = format!("sweep.{}", self.name());
        match self {
            SweepParam::Algorithm => cfg.algorithm = value.parse()?,
            SweepParam::Kappa => cfg.kappa = parse_count(&key, value.trim(), 1)?,
            SweepParam::Xi => {
                cfg.xi = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::config(&key, format!("`{value}` is not a number")))?
            }
            SweepParam::Noise => {
                let spec: NoiseSpec = value
                    .parse()
                    .map_err(|e: Error| Error::config(&key, e.to_string()))?;
                cfg.noise = vec![spec; cfg.topology.node_count()];
            }
        }
        cfg.validate()
    }
}

#[derive(Debug, Clone)]
pub struct ConfigFile {
    pub scenario: ScenarioConfig,
    pub sweeps: Vec<Sweep>,
    pub calibration_file: Option<PathBuf>,
}

fn parse_count(key: &str, text: &str, min: i64) -> Result<usize> {
    let v: i64 = text
        .parse()
        .map_err(|_| Error::config(key, format!("`{text}` is not an integer")))?;
    check_count(key, v, min)
}

fn check_count(key: &str, v: i64, min: i64) -> Result<usize> {
    if v < min {
        let msg = if key == "kappa" {
            "kappa must be ≥ 1".to_string()
        } else {
            format!("{key} must be ≥ {min}, got {v}")
        };
        return Err(Error::config(key, msg));
    }
    Ok(v as usize)
}

fn value_text(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Parses configuration text; relative paths resolve against `base`.
pub fn parse_config_str(text: &str, base: Option<&Path>) -> Result<ConfigFile> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let key = e
            .span()
            .and_then(|s| text.get(s))
            .map(|k| k.trim().to_string())
            .unwrap_or_default();
        Error::config(
            if key.is_empty() {
                "<root>".to_string()
            } else {
                key
            },
            e.message().to_string(),
        )
    })?;

    let system = match raw.system.trim().to_ascii_lowercase().as_str() {
        "rotating" | "linear" => match raw.theta {
            Some(theta) => SystemKind::Rotating { theta },
            None => SystemKind::rotating(),
        },
        "cv" | "constant_velocity" | "tracking" => {
            if raw.theta.is_some() {
                return Err(Error::config(
                    "theta",
                    "theta only applies to the rotating system",
                ));
            }
            SystemKind::ConstantVelocity
        }
        other => {
            return Err(Error::config(
                "system",
                format!("unknown system `{other}` (expected rotating or cv)"),
            ))
        }
    };

    let topology = match raw.topology {
        None => Topology::paper10(),
        Some(RawTopology::Named(name)) => match name.trim().to_ascii_lowercase().as_str() {
            "paper10" | "default" => Topology::paper10(),
            "single" | "isolated1" => Topology::isolated(1)?,
            other => {
                return Err(Error::config(
                    "topology",
                    format!("unknown topology `{other}`"),
                ))
            }
        },
        Some(RawTopology::Edges { nodes, edges }) => Topology::from_edges(nodes, &edges)
            .map_err(|e| Error::config("topology", e.to_string()))?,
    };
    let n = topology.node_count();

    let noise = match raw.noise {
        RawNoise::Shared(s) => {
            let spec: NoiseSpec = s
                .parse()
                .map_err(|e: Error| Error::config("noise", e.to_string()))?;
            vec![spec; n]
        }
        RawNoise::PerNode(list) => {
            if list.len() != n {
                return Err(Error::config(
                    "noise",
                    format!("{} entries for {n} nodes", list.len()),
                ));
            }
            list.iter()
                .enumerate()
                .map(|(i, s)| {
                    s.parse().map_err(|e: Error| {
                        Error::config(format!("noise[{}]", i + 1), e.to_string())
                    })
                })
                .collect::<Result<_>>()?
        }
    };

    let algorithm: Algorithm = match raw.algorithm.or(raw.algo) {
        Some(a) => a.parse()?,
        None => return Err(Error::config("algorithm", "missing required field")),
    };

    let mut cfg = ScenarioConfig::new(system, topology, noise[0].clone(), algorithm);
    cfg.noise = noise;
    if let Some(v) = raw.process_variance {
        cfg.process_variance = v;
    }
    if let Some(k) = raw.kappa {
        cfg.kappa = check_count("kappa", k, 1)?;
    }
    if let Some(xi) = raw.xi {
        cfg.xi = xi;
    }
    if let Some(v) = raw.runs {
        cfg.runs = check_count("runs", v, 1)?;
    }
    if let Some(v) = raw.steps {
        cfg.steps = check_count("steps", v, 1)?;
    }
    if let Some(v) = raw.burn_in {
        cfg.burn_in = check_count("burn_in", v, 0)?;
    }
    if let Some(v) = raw.seed {
        cfg.seed = v;
    }
    if let Some(v) = raw.calibration_samples {
        cfg.calibration_samples = check_count("calibration_samples", v, 1)?;
    }
    if let Some(nodes) = raw.nodes {
        cfg.focus = Some(
            nodes
                .iter()
                .map(|&v| {
                    if v < 1 || v as usize > n {
                        Err(Error::config(
                            "nodes",
                            format!("node {v} is not in 1..={n}"),
                        ))
                    } else {
                        Ok(v as usize - 1)
                    }
                })
                .collect::<Result<_>>()?,
        );
    }
    if let Some(em) = raw.em {
        let d = EmConfig::default();
        cfg.em = EmConfig {
            max_iterations: em.max_iterations.unwrap_or(d.max_iterations),
            relative_tolerance: em.relative_tolerance.unwrap_or(d.relative_tolerance),
            max_restarts: em.max_restarts.unwrap_or(d.max_restarts),
            seeding_subsample: em.seeding_subsample.unwrap_or(d.seeding_subsample),
            covariance_floor: em.covariance_floor.unwrap_or(d.covariance_floor),
            seed: em.seed.unwrap_or(d.seed),
        };
    }
    if let Some(c) = raw.components {
        cfg.components = c.parse()?;
    }
    cfg.outliers = raw
        .outliers
        .into_iter()
        .map(|o| {
            if o.nodes.iter().any(|&m| m < 1 || m > n) {
                return Err(Error::config(
                    "outliers.nodes",
                    format!("nodes must be in 1..={n}"),
                ));
            }
            Ok(OutlierInjection {
                nodes: o.nodes.iter().map(|m| m - 1).collect(),
                start: o.start,
                len: o.len,
                magnitude: o.magnitude,
            })
        })
        .collect::<Result<_>>()?;
    cfg.validate()?;

    let sweeps = raw
        .sweep
        .into_iter()
        .map(|s| {
            let param: SweepParam = s.param.parse()?;
            if s.values.is_empty() {
                return Err(Error::config(
                    format!("sweep.{}", param.name()),
                    "no values",
                ));
            }
            Ok(Sweep {
                param,
                values: s.values.iter().map(value_text).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let calibration_file = raw.calibration_file.map(|p| match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p,
    });
    Ok(ConfigFile {
        scenario: cfg,
        sweeps,
        calibration_file,
    })
}

pub fn parse_config(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    parse_config_str(&text, path.parent()).map_err(|e| match e {
        Error::Config { key, message } => Error::Config {
            key: format!("{}: {key}", path.display()),
            message,
        },
        other => other,
    })
}

/// Cartesian product of the sweeps, each point as `(param, value)` pairs.
pub fn expand_sweeps(sweeps: &[Sweep]) -> Vec<Vec<(SweepParam, String)>> {
    let mut points: Vec<Vec<(SweepParam, String)>> = vec![Vec::new()];
    for s in sweeps {
        points = points
            .into_iter()
            .flat_map(|p| {
                s.values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((s.param, v.clone()));
                    q
                })
            })
            .collect();
    }
    points
}

#![allow(dead_code)]

use mfdkf::harness::{Algorithm, ScenarioConfig, SystemKind};
use mfdkf::noise::NoiseSpec;
use mfdkf::wsn::Topology;

pub const ALPHA: &str = "alpha(1.2, 0, 2, 0)";
pub const MIXED: &str = "mixed(0.9, 0, 1, 1e4)";
pub const GAUSS: &str = "gaussian(0, 1)";

/// Node 4 of the ten-node network, 0-based.
pub const NODE4: usize = 3;

pub fn noise(spec: &str) -> NoiseSpec {
    spec.parse().expect("valid noise spec")
}

pub fn rotating(spec: &str, algorithm: Algorithm) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(
        SystemKind::rotating(),
        Topology::paper10(),
        noise(spec),
        algorithm,
    );
    cfg.seed = 1;
    cfg
}

pub fn cv(spec: &str, algorithm: Algorithm) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(
        SystemKind::ConstantVelocity,
        Topology::paper10(),
        noise(spec),
        algorithm,
    );
    cfg.seed = 1;
    cfg
}

pub fn shrink(mut cfg: ScenarioConfig, runs: usize, steps: usize) -> ScenarioConfig {
    cfg.runs = runs;
    cfg.steps = steps;
    cfg.burn_in = cfg.burn_in.min(steps.saturating_sub(1));
    cfg.calibration_samples = cfg.calibration_samples.min(20_000);
    cfg
}

pub fn within(value: f64, target: f64, rel: f64) -> bool {
    value.is_finite() && (value - target).abs() <= rel * target.abs()
}

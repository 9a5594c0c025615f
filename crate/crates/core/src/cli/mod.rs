//! Command-line front end.

mod config;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::fusion::enumerate_submodels;
use crate::harness::{
    calibrate, calibrate_from_samples, calibration_samples, format_summary_table, write_reports,
    write_state_dump_csv, Calibration, Experiment, MetricsReport, ScenarioConfig,
};
use crate::noise::{read_samples_csv, write_samples_csv};

pub use config::{expand_sweeps, parse_config, parse_config_str, ConfigFile, Sweep, SweepParam};

pub const WORKERS_ENV: &str = "MFDKF_WORKERS";

#[derive(Debug, Parser)]
#[command(
    name = "mfdkf",
    version,
    about = "Distributed Kalman filtering experiments on sensor networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one Monte Carlo experiment.
    Run(Overrides),
    /// Run every point of the configured parameter sweep.
    Sweep(Overrides),
    /// Fit the noise models and summarise the sub-model banks.
    Calibrate {
        #[command(flatten)]
        overrides: Overrides,
        /// Also write the calibration samples of every node.
        #[arg(long)]
        dump_samples: bool,
    },
    /// Check the configured topology.
    ValidateTopology {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct Overrides {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub algo: Option<String>,
    #[arg(long)]
    pub kappa: Option<usize>,
    #[arg(long)]
    pub xi: Option<f64>,
    /// Report only these nodes (1-based).
    #[arg(long, value_delimiter = ',')]
    pub node: Option<Vec<usize>>,
    #[arg(long, alias = "param")]
    pub sweep_param: Option<String>,
    #[arg(long, alias = "values", value_delimiter = ',')]
    pub sweep_values: Option<Vec<String>>,
    /// Also write per-step node states of this run (0-based) to `states.csv`.
    #[arg(long)]
    pub dump_run: Option<usize>,
}

impl Overrides {
    /// Loads the config file and applies the command-line overrides.
    pub fn resolve(&self) -> Result<ConfigFile> {
        let mut file = parse_config(&self.config)?;
        let cfg = &mut file.scenario;
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.runs {
            cfg.runs = v;
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(a) = &self.algo {
            cfg.algorithm = a.parse()?;
        }
        if let Some(k) = self.kappa {
            cfg.kappa = k;
        }
        if let Some(xi) = self.xi {
            cfg.xi = xi;
        }
        if let Some(nodes) = &self.node {
            let n = cfg.topology.node_count();
            if let Some(&bad) = nodes.iter().find(|&&m| m < 1 || m > n) {
                return Err(Error::config(
                    "--node",
                    format!("node {bad} is not in 1..={n}"),
                ));
            }
            cfg.focus = Some(nodes.iter().map(|m| m - 1).collect());
        }
        match (&self.sweep_param, &self.sweep_values) {
            (Some(p), Some(v)) => file.sweeps.push(Sweep {
                param: p.parse()?,
                values: v.clone(),
            }),
            (None, None) => {}
            _ => {
                return Err(Error::config(
                    "--sweep-param",
                    "--sweep-param and --sweep-values go together",
                ))
            }
        }
        cfg.validate()?;
        Ok(file)
    }
}

/// Exit code for an error: 1 for configuration problems, 2 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. }
        | Error::ParameterDomain(_)
        | Error::Dimension(_)
        | Error::NodeOutOfRange { .. } => 1,
        _ => 2,
    }
}

/// Configures the worker pool from the environment, if set.
pub fn init_workers() -> Result<()> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::config(WORKERS_ENV, format!("`{v}` is not a worker count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config(WORKERS_ENV, e.to_string()))?;
    }
    Ok(())
}

/// Runs a parsed command line and returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let result = init_workers().and_then(|_| match &cli.command {
        Command::Run(o) => o.resolve().and_then(|mut f| {
            f.sweeps.clear();
            run_points(&f, &o.out, o.dump_run)
        }),
        Command::Sweep(o) => o.resolve().and_then(|f| {
            if f.sweeps.is_empty() {
                return Err(Error::config("sweep", "no sweep configured"));
            }
            run_points(&f, &o.out, None)
        }),
        Command::Calibrate {
            overrides,
            dump_samples,
        } => overrides
            .resolve()
            .and_then(|f| run_calibrate(&f, &overrides.out, *dump_samples)),
        Command::ValidateTopology { config } => validate_topology(config),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn calibration_for(file: &ConfigFile, cfg: &ScenarioConfig) -> Result<Calibration> {
    match &file.calibration_file {
        Some(path) => calibrate_from_samples(cfg, &read_samples_csv(path)?),
        None => calibrate(cfg),
    }
}

fn point_label(point: &[(SweepParam, String)]) -> String {
    if point.is_empty() {
        return "base".into();
    }
    point
        .iter()
        .map(|(p, v)| {
            let clean: String = v
                .chars()
                .map(|c| {
                    if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                        c
                    } else {
                        '_'
                    }
                })
                .collect();
            format!("{}={}", p.name(), clean.trim_matches('_'))
        })
        .collect::<Vec<_>>()
        .join("_")
}

fn run_points(file: &ConfigFile, out: &Path, dump_run: Option<usize>) -> Result<i32> {
    let points = expand_sweeps(&file.sweeps);
    let mut cache: HashMap<String, Calibration> = HashMap::new();
    let mut reports: Vec<MetricsReport> = Vec::with_capacity(points.len());
    let mut labels = Vec::with_capacity(points.len());
    for point in &points {
        let mut cfg = file.scenario.clone();
        for (param, value) in point {
            param.apply(&mut cfg, value)?;
        }
        let key = format!(
            "{}|{}",
            cfg.kappa,
            cfg.noise
                .iter()
                .map(|n| n.to_string())
                .collect::<Vec<_>>()
                .join(";")
        );
        let reusable = cache.get(&key).is_some_and(|c| c.covers(&cfg));
        if !reusable {
            cache.insert(key.clone(), calibration_for(file, &cfg)?);
        }
        let exp = Experiment::new(cfg, &cache[&key])?;
        if let Some(run) = dump_run {
            std::fs::create_dir_all(out)?;
            write_state_dump_csv(&out.join("states.csv"), &exp.simulate_run(run, true))?;
        }
        let report = exp.run_monte_carlo();
        reports.push(report);
        labels.push(point_label(point));
    }
    write_reports(out, &reports, &labels)?;
    print!("{}", format_summary_table(&reports));
    let failed: usize = reports.iter().map(|r| r.failures.len()).sum();
    if failed > 0 {
        eprintln!(
            "{failed} run(s) failed; see {}",
            out.join("failures.csv").display()
        );
        return Ok(2);
    }
    Ok(0)
}

fn run_calibrate(file: &ConfigFile, out: &Path, dump_samples: bool) -> Result<i32> {
    let cfg = &file.scenario;
    let cal = calibration_for(file, cfg)?;
    std::fs::create_dir_all(out)?;
    let mut gmm = csv::Writer::from_path(out.join("gmm.csv"))?;
    gmm.write_record([
        "node",
        "component",
        "weight",
        "mean",
        "covariance",
        "iterations",
        "restarts",
        "converged",
        "log_likelihood",
    ])?;
    let join = |v: &mut dyn Iterator<Item = f64>| {
        v.map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(" ")
    };
    for (n, c) in cal.nodes.iter().enumerate() {
        let Some(c) = c else { continue };
        for i in 0..c.gmm.kappa() {
            gmm.write_record([
                (n + 1).to_string(),
                (i + 1).to_string(),
                format!("{:.16e}", c.gmm.weights[i]),
                join(&mut c.gmm.means[i].iter().copied()),
                join(&mut c.gmm.covariances[i].iter().copied()),
                c.iterations.to_string(),
                c.restarts.to_string(),
                c.converged.to_string(),
                format!("{:.16e}", c.log_likelihood),
            ])?;
        }
    }
    gmm.flush()?;

    let mut banks = csv::Writer::from_path(out.join("banks.csv"))?;
    banks.write_record([
        "node",
        "degree",
        "submodels",
        "largest",
        "largest_trace",
        "largest_prior",
    ])?;
    for n in cfg.simulated_nodes() {
        let neighbours = if cfg.algorithm == crate::harness::Algorithm::SMfdkf {
            vec![n]
        } else {
            cfg.topology.neighbors(n)?
        };
        let gmms = neighbours
            .iter()
            .map(|&m| cal.node(m).map(|c| c.gmm.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let bank = enumerate_submodels(&gmms, cfg.kappa)?;
        banks.write_record([
            (n + 1).to_string(),
            cfg.topology.degree(n)?.to_string(),
            bank.len().to_string(),
            (bank.largest + 1).to_string(),
            format!("{:.16e}", bank.covariances[bank.largest].trace()),
            format!("{:.16e}", bank.priors[bank.largest]),
        ])?;
    }
    banks.flush()?;

    if dump_samples {
        for n in cfg.observed_nodes()? {
            let samples = calibration_samples(cfg, n)?;
            write_samples_csv(&out.join(format!("samples_node{}.csv", n + 1)), &samples)?;
        }
    }
    println!(
        "calibrated {} node(s) with kappa={}",
        cal.nodes.iter().flatten().count(),
        cal.kappa
    );
    Ok(0)
}

fn validate_topology(path: &Path) -> Result<i32> {
    let file = parse_config(path);
    let topo = match file {
        Ok(f) => f.scenario.topology,
        Err(Error::Config { key, message }) if key.ends_with("topology") => {
            println!("invalid topology: {message}");
            return Ok(1);
        }
        Err(e) => return Err(e),
    };
    let violations = topo.validate();
    if !violations.is_empty() {
        for v in &violations {
            println!("{v}");
        }
        return Ok(1);
    }
    for n in 0..topo.node_count() {
        println!(
            "node {}: degree {}, neighbours {:?}",
            n + 1,
            topo.degree(n)?,
            topo.neighbors(n)?.iter().map(|m| m + 1).collect::<Vec<_>>()
        );
    }
    Ok(0)
}

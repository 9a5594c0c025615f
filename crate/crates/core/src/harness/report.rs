//! CSV output of Monte Carlo reports.

use std::fs;
use std::path::Path;

use super::{MetricsReport, RunRecord};
use crate::error::Result;

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn node_label(node: Option<usize>) -> String {
    node.map_or_else(|| "all".to_string(), |n| (n + 1).to_string())
}

/// `step,node,component_group,rmse`; nodes are 1-based, `all` is the pooled network.
pub fn write_rmse_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "node", "component_group", "rmse"])?;
    for (i, &n) in report.nodes.iter().enumerate() {
        for (g, name) in report.groups.iter().enumerate() {
            for (k, v) in report.rmse[i][g].iter().enumerate() {
                w.write_record([
                    (k + 1).to_string(),
                    node_label(Some(n)),
                    name.clone(),
                    num(*v),
                ])?;
            }
        }
    }
    if report.nodes.len() > 1 {
        for (g, name) in report.groups.iter().enumerate() {
            for (k, v) in report.network_rmse[g].iter().enumerate() {
                w.write_record([(k + 1).to_string(), node_label(None), name.clone(), num(*v)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per reported node and component group, for every report.
pub fn write_summary_csv(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "algorithm",
        "kappa",
        "xi",
        "node",
        "component_group",
        "steady_rmse_mean",
        "steady_rmse_median",
        "steady_disagreement",
        "runs",
        "steps",
        "seed",
    ])?;
    for r in reports {
        for s in &r.summaries {
            w.write_record([
                r.algorithm.to_string(),
                r.kappa.to_string(),
                r.xi.to_string(),
                node_label(s.node),
                s.group.clone(),
                num(s.steady_rmse_mean),
                num(s.steady_rmse_median),
                s.steady_disagreement.map(num).unwrap_or_default(),
                r.successful_runs.to_string(),
                r.steps.to_string(),
                r.seed.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `step,component_group,disagreement`; empty when fewer than two nodes were simulated.
pub fn write_disagreement_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "component_group", "disagreement"])?;
    if let Some(d) = &report.disagreement {
        for (series, name) in d.iter().zip(&report.groups) {
            for (k, v) in series.iter().enumerate() {
                w.write_record([(k + 1).to_string(), name.clone(), num(*v)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `algorithm,kappa,xi,run,step,node,message`.
pub fn write_failures_csv(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["algorithm", "kappa", "xi", "run", "step", "node", "message"])?;
    for r in reports {
        for f in &r.failures {
            w.write_record([
                r.algorithm.to_string(),
                r.kappa.to_string(),
                r.xi.to_string(),
                f.run.to_string(),
                f.step.to_string(),
                f.node.map(|n| (n + 1).to_string()).unwrap_or_default(),
                f.message.clone(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `summary.csv` and `failures.csv` for all reports into `dir`. A
/// single report puts `rmse.csv` and `disagreement.csv` beside them; several
/// reports get one sub-directory each, named by `labels`.
pub fn write_reports(dir: &Path, reports: &[MetricsReport], labels: &[String]) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_summary_csv(&dir.join("summary.csv"), reports)?;
    write_failures_csv(&dir.join("failures.csv"), reports)?;
    if reports.len() == 1 {
        write_rmse_csv(&dir.join("rmse.csv"), &reports[0])?;
        write_disagreement_csv(&dir.join("disagreement.csv"), &reports[0])?;
    } else {
        for (r, label) in reports.iter().zip(labels) {
            let sub = dir.join(label);
            fs::create_dir_all(&sub)?;
            write_rmse_csv(&sub.join("rmse.csv"), r)?;
            write_disagreement_csv(&sub.join("disagreement.csv"), r)?;
        }
    }
    Ok(())
}

/// Fixed-width summary at three decimals.
pub fn format_summary_table(reports: &[MetricsReport]) -> String {
    let mut out = format!(
        "{:<8} {:>5} {:>6} {:>5} {:>6} {:>9} {:>9} {:>9} {:>5}\n",
        "algo", "kappa", "xi", "node", "group", "rmse", "median", "disagr", "runs"
    );
    for r in reports {
        for s in &r.summaries {
            out.push_str(&format!(
                "{:<8} {:>5} {:>6} {:>5} {:>6} {:>9.3} {:>9.3} {:>9} {:>5}\n",
                r.algorithm.as_str(),
                r.kappa,
                r.xi,
                node_label(s.node),
                s.group,
                s.steady_rmse_mean,
                s.steady_rmse_median,
                s.steady_disagreement
                    .map_or_else(|| "-".to_string(), |d| format!("{d:.3}")),
                r.successful_runs
            ));
        }
    }
    out
}

/// `node,step,x_1..x_p,chi_1..chi_L` for every simulated node of one run;
/// nodes with fewer sub-models leave the trailing columns empty.
pub fn write_state_dump_csv(path: &Path, record: &RunRecord) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let p = record.truth.first().map_or(0, |x| x.len());
    let l = record
        .chi
        .as_ref()
        .and_then(|c| c.iter().filter_map(|node| node.first().map(Vec::len)).max())
        .unwrap_or(0);
    let mut header = vec!["node".to_string(), "step".to_string()];
    header.extend((1..=p).map(|i| format!("x_{i}")));
    header.extend((1..=l).map(|j| format!("chi_{j}")));
    w.write_record(&header)?;
    for (i, &n) in record.nodes.iter().enumerate() {
        for (k, x) in record.estimates[i].iter().enumerate() {
            let mut row = vec![(n + 1).to_string(), (k + 1).to_string()];
            row.extend(x.iter().map(|v| num(*v)));
            let chi = record
                .chi
                .as_ref()
                .and_then(|c| c[i].get(k))
                .map_or(&[][..], Vec::as_slice);
            row.extend(chi.iter().map(|v| num(*v)));
            row.resize(2 + p + l, String::new());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

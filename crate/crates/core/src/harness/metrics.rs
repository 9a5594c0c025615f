//! Accuracy and agreement metrics over Monte Carlo ensembles.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// `RMSE(k) = sqrt((1/N₁) Σ_runs ‖x̂(k) − x(k)‖²)` restricted to `components`
/// (all components when empty). Outer index is the run, inner the step.
pub fn rmse_series(
    estimates: &[Vec<DVector<f64>>],
    truth: &[Vec<DVector<f64>>],
    components: &[usize],
) -> Result<Vec<f64>> {
    if estimates.len() != truth.len() || estimates.is_empty() {
        return Err(Error::Input(format!(
            "{} estimate runs against {} truth runs",
            estimates.len(),
            truth.len()
        )));
    }
    let steps = truth[0].len();
    if estimates.iter().chain(truth).any(|r| r.len() != steps) {
        return Err(Error::Input("runs have different lengths".into()));
    }
    let mut acc = vec![0.0; steps];
    for (est, tru) in estimates.iter().zip(truth) {
        for (k, (e, t)) in est.iter().zip(tru).enumerate() {
            acc[k] += squared_error(e, t, components);
        }
    }
    let n = estimates.len() as f64;
    Ok(acc.into_iter().map(|s| (s / n).sqrt()).collect())
}

pub(crate) fn squared_error(e: &DVector<f64>, t: &DVector<f64>, components: &[usize]) -> f64 {
    if components.is_empty() {
        (e - t).norm_squared()
    } else {
        components.iter().map(|&i| (e[i] - t[i]).powi(2)).sum()
    }
}

fn tail(series: &[f64], burn_in: usize) -> Result<&[f64]> {
    if series.len() <= burn_in {
        return Err(Error::Input(format!(
            "series of length {} has nothing after a burn-in of {burn_in}",
            series.len()
        )));
    }
    Ok(&series[burn_in..])
}

/// Mean of the series after the first `burn_in` steps.
pub fn steady_rmse(series: &[f64], burn_in: usize) -> Result<f64> {
    let t = tail(series, burn_in)?;
    Ok(t.iter().sum::<f64>() / t.len() as f64)
}

/// Median of the series after the first `burn_in` steps.
pub fn steady_median(series: &[f64], burn_in: usize) -> Result<f64> {
    let mut t = tail(series, burn_in)?.to_vec();
    t.sort_by(f64::total_cmp);
    let m = t.len() / 2;
    Ok(if t.len() % 2 == 1 {
        t[m]
    } else {
        0.5 * (t[m - 1] + t[m])
    })
}

/// `δ = sqrt(Σ_n ‖x̂_n − μ‖²)` with `μ` the mean of the node estimates.
pub fn disagreement(estimates: &[&DVector<f64>]) -> f64 {
    let n = estimates.len();
    if n == 0 {
        return 0.0;
    }
    let mut mu = DVector::zeros(estimates[0].len());
    for x in estimates {
        mu += *x;
    }
    mu /= n as f64;
    estimates
        .iter()
        .map(|x| (*x - &mu).norm_squared())
        .sum::<f64>()
        .sqrt()
}

/// Per-step disagreement; outer index is the node, inner the step.
pub fn disagreement_series(estimates: &[Vec<DVector<f64>>]) -> Result<Vec<f64>> {
    if estimates.len() < 2 {
        return Err(Error::Input("disagreement needs at least two nodes".into()));
    }
    let steps = estimates[0].len();
    if estimates.iter().any(|e| e.len() != steps) {
        return Err(Error::Input(
            "node trajectories have different lengths".into(),
        ));
    }
    Ok((0..steps)
        .map(|k| disagreement(&estimates.iter().map(|e| &e[k]).collect::<Vec<_>>()))
        .collect())
}

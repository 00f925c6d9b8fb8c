//! Evaluation metrics for predicted fields: R², relative norms, MASE,
//! pooled histograms, parity tails, and the training-cost FLOP model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::delta_field;

/// Pooled and per-instance evaluation metrics for one model/dataset pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Coefficient of determination over all cells of all instances.
    pub r2: f64,
    /// Relative L2 error in percent.
    pub relative_l2: f64,
    /// Unnormalized squared L2 norm of the error, for transparency.
    pub l2_squared: f64,
    pub relative_mae: f64,
    pub relative_mse: f64,
    /// Mean absolute scaled error in percent.
    pub mase: f64,
    pub per_instance: Vec<InstanceMetrics>,
    /// Bin edges shared by the oracle and prediction histograms
    /// (`n_bins + 1` values).
    pub histogram_edges: Vec<f64>,
    pub oracle_counts: Vec<u64>,
    pub prediction_counts: Vec<u64>,
    /// (oracle, prediction) pairs from the extreme oracle quantiles.
    pub parity: Vec<(f64, f64)>,
    /// Cells whose relative pointwise error exceeds the flag threshold.
    pub flagged_cells: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub r2: f64,
    pub relative_l2: f64,
    pub relative_mae: f64,
    pub relative_mse: f64,
    pub mase: f64,
}

/// Knobs for [`evaluate`]; the defaults match the reporting conventions used
/// throughout (128 histogram bins, 1% parity tails, 0.5% flag threshold).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOptions {
    pub n_bins: usize,
    pub tail_fraction: f64,
    /// Percent relative-error threshold for counting flagged cells.
    pub flag_threshold: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            n_bins: 128,
            tail_fraction: 0.01,
            flag_threshold: 0.5,
        }
    }
}

fn check_sizes(oracle: &[f64], prediction: &[f64]) -> Result<()> {
    if oracle.len() != prediction.len() {
        return Err(Error::invalid(format!(
            "metric inputs differ in length: {} vs {}",
            oracle.len(),
            prediction.len()
        )));
    }
    if oracle.is_empty() {
        return Err(Error::invalid("metric inputs are empty"));
    }
    Ok(())
}

/// Coefficient of determination `1 − Σ(o−p)² / Σ(o−mean(o))²` pooled over
/// all cells. Errors if the oracle is constant (undefined denominator).
pub fn r2(oracle: &[f64], prediction: &[f64]) -> Result<f64> {
    check_sizes(oracle, prediction)?;
    let mean = oracle.iter().sum::<f64>() / oracle.len() as f64;
    let ss_tot: f64 = oracle.iter().map(|o| (o - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::invalid("r2 is undefined for a constant oracle"));
    }
    let ss_res: f64 = oracle
        .iter()
        .zip(prediction)
        .map(|(o, p)| (o - p).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Relative L2 error `‖o − p‖₂ / ‖o‖₂ × 100` (percent).
pub fn relative_l2(oracle: &[f64], prediction: &[f64]) -> Result<f64> {
    check_sizes(oracle, prediction)?;
    let num: f64 = oracle
        .iter()
        .zip(prediction)
        .map(|(o, p)| (o - p).powi(2))
        .sum();
    let den: f64 = oracle.iter().map(|o| o * o).sum();
    if den == 0.0 {
        return Err(Error::invalid("relative_l2 is undefined for a zero oracle"));
    }
    Ok((num / den).sqrt() * 100.0)
}

/// Mean absolute error normalized by the mean absolute oracle value.
pub fn relative_mae(oracle: &[f64], prediction: &[f64]) -> Result<f64> {
    check_sizes(oracle, prediction)?;
    let num: f64 = oracle
        .iter()
        .zip(prediction)
        .map(|(o, p)| (o - p).abs())
        .sum();
    let den: f64 = oracle.iter().map(|o| o.abs()).sum();
    if den == 0.0 {
        return Err(Error::invalid("relative_mae is undefined for a zero oracle"));
    }
    Ok(num / den)
}

/// Mean squared error normalized by the mean squared oracle value.
pub fn relative_mse(oracle: &[f64], prediction: &[f64]) -> Result<f64> {
    check_sizes(oracle, prediction)?;
    let num: f64 = oracle
        .iter()
        .zip(prediction)
        .map(|(o, p)| (o - p).powi(2))
        .sum();
    let den: f64 = oracle.iter().map(|o| o * o).sum();
    if den == 0.0 {
        return Err(Error::invalid("relative_mse is undefined for a zero oracle"));
    }
    Ok(num / den)
}

/// Mean absolute scaled error in percent:
/// `Σ_x |(o(x) − p(x)) / (N · mean_strain)| × 100`.
pub fn mase(oracle: &[f64], prediction: &[f64], mean_strain: f64) -> Result<f64> {
    check_sizes(oracle, prediction)?;
    if mean_strain == 0.0 {
        return Err(Error::invalid("mase is undefined for zero mean strain"));
    }
    let n = oracle.len() as f64;
    Ok(oracle
        .iter()
        .zip(prediction)
        .map(|(o, p)| ((o - p) / (n * mean_strain)).abs())
        .sum::<f64>()
        * 100.0)
}

/// A fixed-width histogram; `edges` has `counts.len() + 1` entries and
/// values outside the range are clamped into the edge bins so that counts
/// always sum to the sample count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Bins `values` into `n_bins` equal-width bins. The range defaults to
/// `[min, max]` of `values`; pass `range` to reuse another field's binning
/// (e.g. bin a prediction with the oracle's range for overlay plots).
pub fn histogram(values: &[f64], n_bins: usize, range: Option<(f64, f64)>) -> Result<Histogram> {
    if n_bins < 2 {
        return Err(Error::invalid("histogram requires at least 2 bins"));
    }
    if values.is_empty() {
        return Err(Error::invalid("histogram of an empty field"));
    }
    let (lo, hi) = match range {
        Some((lo, hi)) if lo <= hi => (lo, hi),
        Some(_) => return Err(Error::invalid("histogram range must satisfy lo <= hi")),
        None => values.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), &v| (lo.min(v), hi.max(v)),
        ),
    };
    let width = (hi - lo) / n_bins as f64;
    let edges: Vec<f64> = (0..=n_bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0u64; n_bins];
    for &v in values {
        let bin = if width == 0.0 {
            0
        } else {
            (((v - lo) / width).floor() as i64).clamp(0, n_bins as i64 - 1) as usize
        };
        counts[bin] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Returns the (oracle, prediction) pairs whose oracle value lies in the
/// lowest or highest `tail_fraction` quantiles of the pooled oracle values.
pub fn parity_tail(
    oracle: &[f64],
    prediction: &[f64],
    tail_fraction: f64,
) -> Result<Vec<(f64, f64)>> {
    check_sizes(oracle, prediction)?;
    if !(tail_fraction > 0.0 && tail_fraction <= 0.5) {
        return Err(Error::invalid("tail_fraction must lie in (0, 0.5]"));
    }
    let n = oracle.len();
    let k = ((tail_fraction * n as f64).ceil() as usize).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| oracle[a].total_cmp(&oracle[b]));
    let mut picked = vec![false; n];
    for &i in order.iter().take(k).chain(order.iter().rev().take(k)) {
        picked[i] = true;
    }
    Ok((0..n)
        .filter(|&i| picked[i])
        .map(|i| (oracle[i], prediction[i]))
        .collect())
}

/// Training-cost estimate in FLOPs for a surrogate with maximum rank `k`
/// over `n` total cells: with `a = 2k` regression coefficients,
/// `5(a + 180)·N·log₂N + 72aN + 648N`.
pub fn xlra_train_flops(k: usize, n: usize) -> u64 {
    let a = 2.0 * k as f64;
    let nf = n as f64;
    let log2n = if n > 1 { nf.log2() } else { 0.0 };
    (5.0 * (a + 180.0) * nf * log2n + 72.0 * a * nf + 648.0 * nf).round() as u64
}

/// Pools every instance of `oracle` / `prediction` and computes the full
/// metric suite plus per-instance breakdowns, overlay histograms, parity
/// tails, and the flagged-cell count.
pub fn evaluate(
    oracle: &[Vec<f64>],
    prediction: &[Vec<f64>],
    mean_strain: f64,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if oracle.len() != prediction.len() || oracle.is_empty() {
        return Err(Error::invalid(
            "evaluate requires matching, non-empty instance lists",
        ));
    }
    let mut pooled_o = Vec::new();
    let mut pooled_p = Vec::new();
    let mut per_instance = Vec::with_capacity(oracle.len());
    let mut flagged = 0usize;
    for (o, p) in oracle.iter().zip(prediction) {
        per_instance.push(InstanceMetrics {
            r2: r2(o, p)?,
            relative_l2: relative_l2(o, p)?,
            relative_mae: relative_mae(o, p)?,
            relative_mse: relative_mse(o, p)?,
            mase: mase(o, p, mean_strain)?,
        });
        let (delta, _) = delta_field(o, p);
        flagged += delta.iter().filter(|&&d| d > opts.flag_threshold).count();
        pooled_o.extend_from_slice(o);
        pooled_p.extend_from_slice(p);
    }
    let l2_squared = pooled_o
        .iter()
        .zip(&pooled_p)
        .map(|(o, p)| (o - p).powi(2))
        .sum();
    let oracle_hist = histogram(&pooled_o, opts.n_bins, None)?;
    let range = (oracle_hist.edges[0], *oracle_hist.edges.last().unwrap());
    let prediction_hist = histogram(&pooled_p, opts.n_bins, Some(range))?;
    Ok(EvalReport {
        r2: r2(&pooled_o, &pooled_p)?,
        relative_l2: relative_l2(&pooled_o, &pooled_p)?,
        l2_squared,
        relative_mae: relative_mae(&pooled_o, &pooled_p)?,
        relative_mse: relative_mse(&pooled_o, &pooled_p)?,
        mase: mase(&pooled_o, &pooled_p, mean_strain)?,
        per_instance,
        histogram_edges: oracle_hist.edges,
        oracle_counts: oracle_hist.counts,
        prediction_counts: prediction_hist.counts,
        parity: parity_tail(&pooled_o, &pooled_p, opts.tail_fraction)?,
        flagged_cells: flagged,
    })
}

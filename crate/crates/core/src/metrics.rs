//! Ranking-agreement metrics between harness scores and human scores.
//!
//! TTCW pass counts over a handful of candidates tie often, so both
//! statistics are the tie-corrected variants: Spearman is Pearson over
//! tie-averaged ranks and Kendall is tau-b. Pairwise accuracy counts only
//! human-distinct pairs and treats a predicted tie on such a pair as
//! incorrect, so it credits genuine order recovery only.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{CandidateScore, EvalDataset};
use crate::engine::EvalRunResult;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("input vectors differ in length: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least 2 items to rank, got {0}")]
    TooFewItems(usize),
    #[error("inputs must be finite numbers")]
    NonFinite,
    #[error("plot {plot_id:?} has no human score for scored system {system:?}")]
    MissingHumanScore { plot_id: String, system: String },
    #[error("plot {plot_id:?} has {count} scored candidate(s); ranking needs at least 2")]
    TooFewSystems { plot_id: String, count: usize },
}

/// Per-plot metric values. Correlations are `None` when undefined (constant
/// vector on either side).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotMetrics {
    pub spearman: Option<f64>,
    pub kendall: Option<f64>,
    pub pair_correct: u32,
    pub pair_total: u32,
}

/// Ranking agreement for a full run: per-plot values, unweighted averages
/// over plots with defined values, and pooled pairwise accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub per_plot: BTreeMap<String, PlotMetrics>,
    pub avg_spearman: Option<f64>,
    pub avg_kendall: Option<f64>,
    pub pairwise_accuracy: Option<f64>,
}

fn check_inputs(xs: &[f64], ys: &[f64]) -> Result<(), MetricsError> {
    if xs.len() != ys.len() {
        return Err(MetricsError::LengthMismatch { left: xs.len(), right: ys.len() });
    }
    if xs.len() < 2 {
        return Err(MetricsError::TooFewItems(xs.len()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    Ok(())
}

/// Tie-averaged (fractional) ranks, 1-based: tied values share the mean of
/// the positions they occupy.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite inputs"));

    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end + 1 < n && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end+1 share their mean
        let rank = (start + end) as f64 / 2.0 + 1.0;
        for &idx in &order[start..=end] {
            ranks[idx] = rank;
        }
        start = end + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return None;
    }
    Some(cov / (var_x * var_y).sqrt())
}

/// Spearman's rank correlation with tie-averaged ranks: the Pearson
/// correlation of the two rank vectors. `None` when either vector is
/// constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<Option<f64>, MetricsError> {
    check_inputs(xs, ys)?;
    Ok(pearson(&average_ranks(xs), &average_ranks(ys)))
}

fn tie_pair_count<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for i in 1..sorted.len() {
        if sorted[i] == sorted[i - 1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Counts strict inversions via merge sort. Equal elements are not
/// inversions.
fn count_inversions(values: &mut [f64], scratch: &mut [f64]) -> u64 {
    let n = values.len();
    if n <= 1 {
        return 0;
    }
    let mid = n / 2;
    let (left, right) = values.split_at_mut(mid);
    let mut inversions = count_inversions(left, scratch) + count_inversions(right, scratch);

    let (mut i, mut j, mut k) = (0, 0, 0);
    while i < left.len() && j < right.len() {
        if left[i] <= right[j] {
            scratch[k] = left[i];
            i += 1;
        } else {
            scratch[k] = right[j];
            inversions += (left.len() - i) as u64;
            j += 1;
        }
        k += 1;
    }
    while i < left.len() {
        scratch[k] = left[i];
        i += 1;
        k += 1;
    }
    while j < right.len() {
        scratch[k] = right[j];
        j += 1;
        k += 1;
    }
    values.copy_from_slice(&scratch[..n]);
    inversions
}

/// Kendall's tau-b: tie-corrected rank correlation. Computed from sorted tie
/// groups and a merge-sort discordance count. `None` when either tie-adjusted
/// denominator factor is zero.
pub fn kendall(xs: &[f64], ys: &[f64]) -> Result<Option<f64>, MetricsError> {
    check_inputs(xs, ys)?;
    let n = xs.len();
    let n0 = (n as u64) * (n as u64 - 1) / 2;

    let mut pairs: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    pairs.sort_by(|a, b| a.partial_cmp(b).expect("finite inputs"));

    let x_sorted: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let x_ties = tie_pair_count(&x_sorted);
    let xy_ties = tie_pair_count(&pairs);

    let mut y_seq: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut y_sorted = y_seq.clone();
    y_sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite inputs"));
    let y_ties = tie_pair_count(&y_sorted);

    if n0 == x_ties || n0 == y_ties {
        return Ok(None);
    }

    let mut scratch = vec![0.0; n];
    let discordant = count_inversions(&mut y_seq, &mut scratch);

    let numerator = n0 as f64 - x_ties as f64 - y_ties as f64 + xy_ties as f64 - 2.0 * discordant as f64;
    let denominator = ((n0 - x_ties) as f64 * (n0 - y_ties) as f64).sqrt();
    Ok(Some(numerator / denominator))
}

/// Counts unordered pairs with distinct human scores (`total`) and how many
/// of them the predicted scores order the same way (`correct`). A predicted
/// tie on a human-distinct pair counts as incorrect.
pub fn pairwise_stats(predicted: &[f64], human: &[f64]) -> Result<(u32, u32), MetricsError> {
    check_inputs(predicted, human)?;
    let mut correct = 0u32;
    let mut total = 0u32;
    for i in 0..human.len() {
        for j in (i + 1)..human.len() {
            if human[i] == human[j] {
                continue;
            }
            total += 1;
            let human_order = human[i] > human[j];
            let predicted_strict = predicted[i] != predicted[j];
            if predicted_strict && (predicted[i] > predicted[j]) == human_order {
                correct += 1;
            }
        }
    }
    Ok((correct, total))
}

/// Compares a run's pass counts against the dataset's human scores, per plot
/// and aggregated: unweighted mean correlations over plots where defined,
/// pairwise accuracy pooled over all plots' pairs.
pub fn build_report(run: &EvalRunResult, dataset: &EvalDataset) -> Result<RankingReport, MetricsError> {
    let mut by_plot: BTreeMap<&str, Vec<&CandidateScore>> = BTreeMap::new();
    for score in &run.scores {
        by_plot.entry(score.plot_id.as_str()).or_default().push(score);
    }

    let mut per_plot = BTreeMap::new();
    let mut spearman_values = Vec::new();
    let mut kendall_values = Vec::new();
    let mut pooled_correct = 0u32;
    let mut pooled_total = 0u32;

    for (plot_id, mut scores) in by_plot {
        scores.sort_by(|a, b| a.candidate_system.cmp(&b.candidate_system));
        if scores.len() < 2 {
            return Err(MetricsError::TooFewSystems { plot_id: plot_id.to_string(), count: scores.len() });
        }
        let plot = dataset.plot(plot_id);
        let mut predicted = Vec::with_capacity(scores.len());
        let mut human = Vec::with_capacity(scores.len());
        for score in &scores {
            let value = plot
                .and_then(|p| p.human_scores.get(&score.candidate_system))
                .copied()
                .ok_or_else(|| MetricsError::MissingHumanScore {
                    plot_id: plot_id.to_string(),
                    system: score.candidate_system.clone(),
                })?;
            predicted.push(f64::from(score.passes));
            human.push(value);
        }

        let rho = spearman(&predicted, &human)?;
        let tau = kendall(&predicted, &human)?;
        let (correct, total) = pairwise_stats(&predicted, &human)?;

        if let Some(v) = rho {
            spearman_values.push(v);
        }
        if let Some(v) = tau {
            kendall_values.push(v);
        }
        pooled_correct += correct;
        pooled_total += total;
        per_plot.insert(
            plot_id.to_string(),
            PlotMetrics { spearman: rho, kendall: tau, pair_correct: correct, pair_total: total },
        );
    }

    let mean = |values: &[f64]| -> Option<f64> {
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    };

    Ok(RankingReport {
        per_plot,
        avg_spearman: mean(&spearman_values),
        avg_kendall: mean(&kendall_values),
        pairwise_accuracy: if pooled_total == 0 {
            None
        } else {
            Some(f64::from(pooled_correct) / f64::from(pooled_total))
        },
    })
}

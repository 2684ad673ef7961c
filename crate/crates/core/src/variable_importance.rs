//! Permutation variable importance, reported as an interval from the loss on
//! intact data to the mean loss after shuffling one variable.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::derive_seed;
use crate::error::{Error, Result};
use crate::model::Explainer;
use crate::performance::{check_labels, loss, LossKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub variable: String,
    pub permuted_mean: f64,
    /// Loss of every repeat, in repeat order.
    pub permuted: Vec<f64>,
    /// `permuted_mean - baseline`; negative values are kept as-is.
    pub drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceResult {
    pub label: String,
    pub loss: LossKind,
    pub baseline: f64,
    /// One row per variable, sorted by variable name.
    pub rows: Vec<ImportanceRow>,
    /// Mean loss with every feature column shuffled independently.
    pub all_shuffled: f64,
    pub all_shuffled_permuted: Vec<f64>,
    pub repeats: usize,
    pub seed: u64,
}

impl ImportanceResult {
    pub fn row(&self, variable: &str) -> Option<&ImportanceRow> {
        self.rows.iter().find(|r| r.variable == variable)
    }
}

/// Seed of the all-columns shuffle for one repeat, kept apart from the
/// single-variable streams.
fn all_shuffled_seed(seed: u64, repeat: u64) -> u64 {
    derive_seed(derive_seed(seed, u64::MAX), repeat)
}

pub fn variable_importance(
    explainer: &Explainer,
    loss_kind: LossKind,
    repeats: usize,
    seed: u64,
    variables: Option<&[String]>,
) -> Result<ImportanceResult> {
    if repeats < 1 {
        return Err(Error::usage("importance needs at least one repeat"));
    }
    let data = explainer.data();
    let y = explainer.y();
    let mut names: Vec<String> = match variables {
        Some(vs) => {
            for v in vs {
                data.require(v)?;
            }
            vs.to_vec()
        }
        None => data.column_names().into_iter().map(str::to_string).collect(),
    };
    names.sort();
    names.dedup();

    let baseline = loss(loss_kind, y, &explainer.predict_batch(data)?)?;

    let tasks: Vec<(usize, usize)> = (0..names.len())
        .flat_map(|j| (0..repeats).map(move |b| (j, b)))
        .collect();
    let losses = tasks
        .par_iter()
        .map(|&(j, b)| {
            let variable = &names[j];
            let permuted = data.permute_column(variable, derive_seed(seed, b as u64))?;
            let pred = explainer
                .predict_batch(&permuted)
                .map_err(|e| e.context(format!("variable '{variable}', repeat {b}")))?;
            loss(loss_kind, y, &pred)
        })
        .collect::<Result<Vec<f64>>>()?;

    let rows = names
        .iter()
        .zip(losses.chunks(repeats))
        .map(|(variable, permuted)| {
            let permuted_mean = crate::mean(permuted);
            ImportanceRow {
                variable: variable.clone(),
                permuted_mean,
                permuted: permuted.to_vec(),
                drop: permuted_mean - baseline,
            }
        })
        .collect();

    let all_shuffled_permuted = (0..repeats)
        .into_par_iter()
        .map(|b| {
            let s = all_shuffled_seed(seed, b as u64);
            let mut shuffled = data.clone();
            for col in data.column_names() {
                shuffled = shuffled.permute_column(col, s)?;
            }
            let pred = explainer
                .predict_batch(&shuffled)
                .map_err(|e| e.context(format!("all variables shuffled, repeat {b}")))?;
            loss(loss_kind, y, &pred)
        })
        .collect::<Result<Vec<f64>>>()?;

    Ok(ImportanceResult {
        label: explainer.label().to_string(),
        loss: loss_kind,
        baseline,
        rows,
        all_shuffled: crate::mean(&all_shuffled_permuted),
        all_shuffled_permuted,
        repeats,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceOverlayRow {
    pub label: String,
    pub variable: String,
    pub baseline: f64,
    pub permuted_mean: f64,
    pub drop: f64,
}

/// Variable order shared by an overlay: the first result's variables by
/// decreasing drop, then any others by name.
pub fn variable_order(results: &[ImportanceResult]) -> Vec<String> {
    let Some(first) = results.first() else {
        return Vec::new();
    };
    let mut rows: Vec<&ImportanceRow> = first.rows.iter().collect();
    rows.sort_by(|a, b| b.drop.total_cmp(&a.drop).then_with(|| a.variable.cmp(&b.variable)));
    let mut order: Vec<String> = rows.into_iter().map(|r| r.variable.clone()).collect();
    let mut rest: Vec<String> = results[1..]
        .iter()
        .flat_map(|r| r.rows.iter().map(|row| row.variable.clone()))
        .filter(|v| !order.contains(v))
        .collect();
    rest.sort();
    rest.dedup();
    order.extend(rest);
    order
}

/// Long-format table of several importance results; each model's intervals
/// start at its own baseline.
pub fn compare_importance(results: &[ImportanceResult]) -> Result<Vec<ImportanceOverlayRow>> {
    check_labels(results.iter().map(|r| r.label.as_str()))?;
    let loss_kind = results[0].loss;
    if let Some(other) = results.iter().find(|r| r.loss != loss_kind) {
        return Err(Error::usage(format!(
            "cannot compare importance computed with {} and {} losses",
            loss_kind, other.loss
        )));
    }
    let order = variable_order(results);
    let mut out = Vec::new();
    for result in results {
        for variable in &order {
            if let Some(row) = result.row(variable) {
                out.push(ImportanceOverlayRow {
                    label: result.label.clone(),
                    variable: variable.clone(),
                    baseline: result.baseline,
                    permuted_mean: row.permuted_mean,
                    drop: row.drop,
                });
            }
        }
    }
    Ok(out)
}

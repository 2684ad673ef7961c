//! Residual diagnostics: losses, reverse ECDF of absolute residuals and
//! boxplot statistics.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::quantile_sorted;
use crate::error::{Error, Result};
use crate::model::Explainer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Rmse,
    Mse,
    Mae,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Rmse => "rmse",
            LossKind::Mse => "mse",
            LossKind::Mae => "mae",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rmse" => Ok(LossKind::Rmse),
            "mse" => Ok(LossKind::Mse),
            "mae" => Ok(LossKind::Mae),
            _ => Err(Error::usage(format!("unknown loss '{s}' (expected rmse, mse or mae)"))),
        }
    }
}

pub fn loss(kind: LossKind, y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::usage(format!(
            "loss needs equal lengths, got {} targets and {} predictions",
            y.len(),
            yhat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::usage("loss of an empty sample"));
    }
    let n = y.len() as f64;
    let residuals = y.iter().zip(yhat).map(|(a, b)| a - b);
    Ok(match kind {
        LossKind::Mse => residuals.map(|r| r * r).sum::<f64>() / n,
        LossKind::Rmse => (residuals.map(|r| r * r).sum::<f64>() / n).sqrt(),
        LossKind::Mae => residuals.map(f64::abs).sum::<f64>() / n,
    })
}

/// Tukey boxplot summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Most extreme values inside the 1.5 IQR fences.
    pub lower_whisker: f64,
    pub upper_whisker: f64,
    pub outliers: Vec<f64>,
}

impl BoxStats {
    /// Summary of an ascending, nonempty sample.
    pub fn from_sorted(sorted: &[f64]) -> BoxStats {
        let q1 = quantile_sorted(sorted, 0.25);
        let q3 = quantile_sorted(sorted, 0.75);
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside = || sorted.iter().copied().filter(|&v| v >= lo_fence && v <= hi_fence);
        BoxStats {
            min: sorted[0],
            q1,
            median: quantile_sorted(sorted, 0.5),
            q3,
            max: sorted[sorted.len() - 1],
            lower_whisker: inside().next().unwrap_or(q1),
            upper_whisker: inside().next_back().unwrap_or(q3),
            outliers: sorted
                .iter()
                .copied()
                .filter(|&v| v < lo_fence || v > hi_fence)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceResult {
    pub label: String,
    /// `y - f(x)` per validation row.
    pub residuals: Vec<f64>,
    pub abs_sorted: Vec<f64>,
    /// `(t, 1 - ECDF(t))` at every distinct absolute residual, ascending.
    pub recdf: Vec<(f64, f64)>,
    #[serde(rename = "box")]
    pub boxplot: BoxStats,
    pub rmse: f64,
    pub mse: f64,
    pub mae: f64,
}

impl PerformanceResult {
    pub fn from_residuals(label: impl Into<String>, residuals: Vec<f64>) -> Result<Self> {
        if residuals.is_empty() {
            return Err(Error::usage("no residuals"));
        }
        let n = residuals.len();
        let mut abs_sorted: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
        abs_sorted.sort_by(f64::total_cmp);
        let mut recdf = Vec::new();
        for (i, &t) in abs_sorted.iter().enumerate() {
            if i + 1 < n && abs_sorted[i + 1] == t {
                continue;
            }
            recdf.push((t, (n - (i + 1)) as f64 / n as f64));
        }
        let zeros = vec![0.0; n];
        Ok(PerformanceResult {
            label: label.into(),
            boxplot: BoxStats::from_sorted(&abs_sorted),
            rmse: loss(LossKind::Rmse, &residuals, &zeros)?,
            mse: loss(LossKind::Mse, &residuals, &zeros)?,
            mae: loss(LossKind::Mae, &residuals, &zeros)?,
            residuals,
            abs_sorted,
            recdf,
        })
    }

    /// `1 - ECDF(t)` of the absolute residuals, read off the step table.
    pub fn survival_at(&self, t: f64) -> f64 {
        self.recdf
            .iter()
            .take_while(|(step, _)| *step <= t)
            .last()
            .map_or(1.0, |(_, s)| *s)
    }

    pub fn max_abs_residual(&self) -> f64 {
        self.abs_sorted[self.abs_sorted.len() - 1]
    }
}

/// Fraction of `a`'s absolute residuals larger than the largest of `b`'s.
pub fn fraction_exceeding_max(a: &PerformanceResult, b: &PerformanceResult) -> f64 {
    a.survival_at(b.max_abs_residual())
}

pub fn model_performance(explainer: &Explainer) -> Result<PerformanceResult> {
    let pred = explainer.predict_batch(explainer.data())?;
    let residuals = explainer
        .y()
        .iter()
        .zip(&pred)
        .map(|(y, p)| y - p)
        .collect();
    PerformanceResult::from_residuals(explainer.label(), residuals)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecdfRow {
    pub label: String,
    pub t: f64,
    pub survival: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRow {
    pub label: String,
    #[serde(rename = "box")]
    pub boxplot: BoxStats,
    pub rmse: f64,
}

/// Long-format merge of several performance results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceOverlay {
    pub recdf: Vec<RecdfRow>,
    pub boxes: Vec<BoxRow>,
}

pub(crate) fn check_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    let mut any = false;
    for label in labels {
        any = true;
        if !seen.insert(label) {
            return Err(Error::usage(format!("duplicate model label '{label}'")));
        }
    }
    if !any {
        return Err(Error::usage("at least one result is required"));
    }
    Ok(())
}

pub fn compare_performance(results: &[PerformanceResult]) -> Result<PerformanceOverlay> {
    check_labels(results.iter().map(|r| r.label.as_str()))?;
    Ok(PerformanceOverlay {
        recdf: results
            .iter()
            .flat_map(|r| {
                r.recdf.iter().map(|&(t, survival)| RecdfRow {
                    label: r.label.clone(),
                    t,
                    survival,
                })
            })
            .collect(),
        boxes: results
            .iter()
            .map(|r| BoxRow {
                label: r.label.clone(),
                boxplot: r.boxplot.clone(),
                rmse: r.rmse,
            })
            .collect(),
    })
}

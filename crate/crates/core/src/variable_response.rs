//! Global response of the model to a single variable: partial dependence and
//! accumulated local effects for numeric variables, merging paths for
//! categorical ones.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_grid, ColumnData, GridStrategy, Value};
use crate::error::{Error, Result};
use crate::model::Explainer;

pub const DEFAULT_PDP_GRID: GridStrategy = GridStrategy::Quantile(21);
pub const DEFAULT_ALE_BINS: usize = 20;
pub const DEFAULT_MERGE_GROUPS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    Pdp,
    Ale,
    Cp,
}

/// A response curve over a grid of one variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCurve {
    pub label: String,
    pub variable: String,
    pub kind: ProfileKind,
    pub points: Vec<(Value, f64)>,
}

impl ProfileCurve {
    /// Response at grid value `x`, if `x` is on the grid.
    pub fn at(&self, x: &Value) -> Option<f64> {
        self.points.iter().find(|(z, _)| z == x).map(|(_, g)| *g)
    }

    pub fn responses(&self) -> Vec<f64> {
        self.points.iter().map(|(_, g)| *g).collect()
    }

    pub fn numeric_grid(&self) -> Option<Vec<f64>> {
        self.points.iter().map(|(z, _)| z.as_f64()).collect()
    }
}

/// Mean prediction with `variable` fixed at each grid value, over all rows.
pub fn partial_dependence(
    explainer: &Explainer,
    variable: &str,
    strategy: GridStrategy,
) -> Result<ProfileCurve> {
    let data = explainer.data();
    if data.require(variable)?.as_numeric().is_none() {
        return Err(Error::usage(format!(
            "partial dependence needs a numeric variable; '{variable}' is categorical (use factor merging)"
        )));
    }
    let grid = make_grid(data, variable, strategy)?;
    let points = grid
        .into_par_iter()
        .map(|z| {
            let g = explainer.mean_prediction(&data.substitute(variable, &z)?)?;
            Ok((z, g))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProfileCurve {
        label: explainer.label().to_string(),
        variable: variable.to_string(),
        kind: ProfileKind::Pdp,
        points,
    })
}

/// Accumulated local effects over quantile bins.
///
/// Breakpoints are the deduplicated quantiles at `0, 1/k, ..., 1`. A row
/// belongs to the first bin whose upper breakpoint is at or above its value.
/// The accumulated curve starts at zero and is then shifted so that its
/// bin-count-weighted trapezoid mean is zero.
pub fn accumulated_local_effects(
    explainer: &Explainer,
    variable: &str,
    bins: usize,
) -> Result<ProfileCurve> {
    if bins < 1 {
        return Err(Error::usage("ALE needs at least one bin"));
    }
    let data = explainer.data();
    let x = data.numeric(variable)?;
    let breaks: Vec<f64> = make_grid(data, variable, GridStrategy::Quantile(bins + 1))?
        .into_iter()
        .map(|v| v.as_f64().expect("numeric grid"))
        .collect();
    let curve = |points| ProfileCurve {
        label: explainer.label().to_string(),
        variable: variable.to_string(),
        kind: ProfileKind::Ale,
        points,
    };
    if breaks.len() < 2 {
        return Ok(curve(vec![(Value::Num(breaks[0]), 0.0)]));
    }
    let n_bins = breaks.len() - 1;
    let bin_of: Vec<usize> = x
        .iter()
        .map(|&v| breaks.partition_point(|&b| b < v).clamp(1, n_bins))
        .collect();
    let upper = data.with_column_data(
        variable,
        ColumnData::Numeric(bin_of.iter().map(|&k| breaks[k]).collect()),
    )?;
    let lower = data.with_column_data(
        variable,
        ColumnData::Numeric(bin_of.iter().map(|&k| breaks[k - 1]).collect()),
    )?;
    let (hi, lo) = rayon::join(
        || explainer.predict_batch(&upper),
        || explainer.predict_batch(&lower),
    );
    let (hi, lo) = (hi?, lo?);

    let mut sums = vec![0.0; n_bins + 1];
    let mut counts = vec![0usize; n_bins + 1];
    for (i, &k) in bin_of.iter().enumerate() {
        sums[k] += hi[i] - lo[i];
        counts[k] += 1;
    }
    let mut acc = vec![0.0; n_bins + 1];
    for k in 1..=n_bins {
        let effect = if counts[k] == 0 {
            0.0
        } else {
            sums[k] / counts[k] as f64
        };
        acc[k] = acc[k - 1] + effect;
    }
    let n = x.len() as f64;
    let center: f64 = (1..=n_bins)
        .map(|k| counts[k] as f64 * (acc[k - 1] + acc[k]) / 2.0)
        .sum::<f64>()
        / n;
    Ok(curve(
        breaks
            .iter()
            .zip(&acc)
            .map(|(&z, &g)| (Value::Num(z), g - center))
            .collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStat {
    pub level: String,
    pub count: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeStep {
    pub left: Vec<String>,
    pub right: Vec<String>,
    pub cost: f64,
    pub cumulative: f64,
}

/// Agglomerative merging of categorical levels by similarity of the model's
/// mean response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergingPath {
    pub label: String,
    pub variable: String,
    /// Levels ordered by mean response.
    pub levels: Vec<LevelStat>,
    pub steps: Vec<MergeStep>,
    pub cut: usize,
    pub groups: Vec<Vec<String>>,
}

#[derive(Clone)]
struct Group {
    members: Vec<String>,
    count: usize,
    mean: f64,
}

fn ward_cost(a: &Group, b: &Group) -> f64 {
    let (na, nb) = (a.count as f64, b.count as f64);
    na * nb / (na + nb) * (a.mean - b.mean).powi(2)
}

fn initial_groups(levels: &[LevelStat]) -> Vec<Group> {
    levels
        .iter()
        .map(|l| Group {
            members: vec![l.level.clone()],
            count: l.count,
            mean: l.mean,
        })
        .collect()
}

/// Applies the cheapest adjacent merge; returns `(left, right, cost)`.
fn merge_cheapest(groups: &mut Vec<Group>) -> (Vec<String>, Vec<String>, f64) {
    let (i, cost) = (0..groups.len() - 1)
        .map(|i| (i, ward_cost(&groups[i], &groups[i + 1])))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
    let right = groups.remove(i + 1);
    let left = &mut groups[i];
    let (left_members, right_members) = (left.members.clone(), right.members.clone());
    let total = left.count + right.count;
    left.mean = (left.mean * left.count as f64 + right.mean * right.count as f64) / total as f64;
    left.count = total;
    left.members.extend(right.members);
    (left_members, right_members, cost)
}

impl MergingPath {
    /// Level groups that remain when `cut` groups are left.
    pub fn groups_at(&self, cut: usize) -> Vec<Vec<String>> {
        let cut = cut.clamp(1, self.levels.len());
        let mut groups = initial_groups(&self.levels);
        while groups.len() > cut {
            merge_cheapest(&mut groups);
        }
        groups.into_iter().map(|g| g.members).collect()
    }
}

pub fn factor_merge(
    explainer: &Explainer,
    variable: &str,
    cut: Option<usize>,
) -> Result<MergingPath> {
    let data = explainer.data();
    let values = data
        .require(variable)?
        .as_categorical()
        .ok_or_else(|| {
            Error::usage(format!(
                "factor merging needs a categorical variable; '{variable}' is numeric"
            ))
        })?;
    let pred = explainer.predict_batch(data)?;
    let mut stats: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for (level, p) in values.iter().zip(&pred) {
        let e = stats.entry(level.as_str()).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += p;
    }
    let mut levels: Vec<LevelStat> = stats
        .into_iter()
        .map(|(level, (count, sum))| LevelStat {
            level: level.to_string(),
            count,
            mean: sum / count as f64,
        })
        .collect();
    levels.sort_by(|a, b| a.mean.total_cmp(&b.mean));

    let mut groups = initial_groups(&levels);
    let mut steps = Vec::with_capacity(levels.len().saturating_sub(1));
    let mut cumulative = 0.0;
    while groups.len() > 1 {
        let (left, right, cost) = merge_cheapest(&mut groups);
        cumulative += cost;
        steps.push(MergeStep {
            left,
            right,
            cost,
            cumulative,
        });
    }
    let cut = cut.unwrap_or(DEFAULT_MERGE_GROUPS).clamp(1, levels.len());
    let mut path = MergingPath {
        label: explainer.label().to_string(),
        variable: variable.to_string(),
        levels,
        steps,
        cut,
        groups: Vec::new(),
    };
    path.groups = path.groups_at(cut);
    Ok(path)
}

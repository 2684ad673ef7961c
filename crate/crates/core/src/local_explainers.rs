//! Explainers for a single observation: ceteris-paribus profiles and
//! break-down attributions, plus an exact Shapley computation for small
//! feature counts.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ecdf_position, make_grid, ColumnData, GridStrategy, Observation, TabularDataset, Value};
use crate::error::{Error, Result};
use crate::model::Explainer;
use crate::variable_response::{ProfileCurve, ProfileKind};

pub const DEFAULT_CP_GRID: GridStrategy = GridStrategy::Quantile(21);
pub const SHAPLEY_MAX_FEATURES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpAnchor {
    pub observation: Observation,
    pub prediction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpProfile {
    pub label: String,
    pub anchor: CpAnchor,
    pub curves: Vec<ProfileCurve>,
    /// Per numeric variable, `(ecdf position of grid value, response)`.
    /// Filled by [`normalize_cp`].
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub normalized: BTreeMap<String, Vec<(f64, f64)>>,
}

impl CpProfile {
    pub fn curve(&self, variable: &str) -> Option<&ProfileCurve> {
        self.curves.iter().find(|c| c.variable == variable)
    }
}

fn grid_with_value(
    data: &TabularDataset,
    variable: &str,
    strategy: GridStrategy,
    own: &Value,
) -> Result<Vec<Value>> {
    let col = data.require(variable)?;
    match col.data() {
        ColumnData::Numeric(_) => {
            let mut grid: Vec<f64> = make_grid(data, variable, strategy)?
                .into_iter()
                .filter_map(|v| v.as_f64())
                .collect();
            grid.push(own.as_f64().expect("kind validated"));
            grid.sort_by(f64::total_cmp);
            grid.dedup();
            Ok(grid.into_iter().map(Value::Num).collect())
        }
        ColumnData::Categorical(_) => {
            let mut grid: Vec<String> = col.levels();
            let own = own.as_str().expect("kind validated").to_string();
            if let Err(pos) = grid.binary_search(&own) {
                grid.insert(pos, own);
            }
            Ok(grid.into_iter().map(Value::Cat).collect())
        }
    }
}

/// Model response for `obs` as each variable in turn sweeps its grid, all
/// other values held fixed. The observation's own value is always on the grid.
pub fn ceteris_paribus(
    explainer: &Explainer,
    obs: &Observation,
    variables: Option<&[String]>,
    strategy: GridStrategy,
) -> Result<CpProfile> {
    let data = explainer.data();
    obs.validate(data)?;
    let names: Vec<String> = match variables {
        Some(vs) => {
            for v in vs {
                data.require(v)?;
            }
            vs.to_vec()
        }
        None => data.column_names().into_iter().map(str::to_string).collect(),
    };
    let prediction = explainer.predict_observation(obs)?;
    let curves = names
        .par_iter()
        .map(|variable| {
            let own = obs.get(variable).expect("validated");
            let grid = grid_with_value(data, variable, strategy, own)?;
            let base = obs.to_dataset(data, grid.len())?;
            let column = match &grid[0] {
                Value::Num(_) => ColumnData::Numeric(grid.iter().filter_map(Value::as_f64).collect()),
                Value::Cat(_) => ColumnData::Categorical(
                    grid.iter().filter_map(|v| v.as_str().map(str::to_string)).collect(),
                ),
            };
            let query = base.with_column_data(variable, column)?;
            let responses = explainer.predict_batch(&query)?;
            Ok(ProfileCurve {
                label: explainer.label().to_string(),
                variable: variable.clone(),
                kind: ProfileKind::Cp,
                points: grid.into_iter().zip(responses).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CpProfile {
        label: explainer.label().to_string(),
        anchor: CpAnchor {
            observation: obs.clone(),
            prediction,
        },
        curves,
        normalized: BTreeMap::new(),
    })
}

/// Maps each numeric grid value to its ECDF position in the validation data.
/// Categorical curves have no normalized form and are left out.
pub fn normalize_cp(profile: &CpProfile, explainer: &Explainer) -> Result<CpProfile> {
    let mut out = profile.clone();
    out.normalized.clear();
    for curve in &profile.curves {
        let Some(column) = explainer.data().require(&curve.variable)?.as_numeric() else {
            continue;
        };
        let points = curve
            .points
            .iter()
            .filter_map(|(z, g)| z.as_f64().map(|z| (ecdf_position(column, z), *g)))
            .collect();
        out.normalized.insert(curve.variable.clone(), points);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Up => "up",
            Direction::Down => "down",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "up" => Ok(Direction::Up),
            "down" => Ok(Direction::Down),
            _ => Err(Error::usage(format!("unknown direction '{s}' (expected up or down)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionStep {
    pub variable: String,
    pub value: Value,
    pub contribution: f64,
}

/// Additive decomposition of `prediction - baseline` into per-variable steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub label: String,
    pub baseline: f64,
    pub steps: Vec<AttributionStep>,
    pub prediction: f64,
    pub direction: Direction,
}

impl Attribution {
    pub fn contribution(&self, variable: &str) -> Option<f64> {
        self.steps
            .iter()
            .find(|s| s.variable == variable)
            .map(|s| s.contribution)
    }

    /// `baseline + sum(contributions) - prediction`.
    pub fn additivity_gap(&self) -> f64 {
        self.baseline + self.steps.iter().map(|s| s.contribution).sum::<f64>() - self.prediction
    }
}

/// Evaluates every candidate dataset and returns the index chosen by `pick`,
/// scanning candidates in name order so the earliest name wins ties.
fn best_candidate(
    explainer: &Explainer,
    candidates: &[(String, TabularDataset)],
    current: f64,
    step: usize,
    prefer_larger: bool,
) -> Result<(usize, f64)> {
    let means = candidates
        .par_iter()
        .map(|(_, d)| explainer.mean_prediction(d))
        .collect::<Result<Vec<f64>>>()
        .map_err(|e| e.context(format!("break-down step {step}")))?;
    let mut best = 0;
    for i in 1..means.len() {
        let (gap, best_gap) = ((means[i] - current).abs(), (means[best] - current).abs());
        if (prefer_larger && gap > best_gap) || (!prefer_larger && gap < best_gap) {
            best = i;
        }
    }
    Ok((best, means[best]))
}

/// Greedy break-down attribution of one prediction.
///
/// `Up` fixes, one at a time, the variable that moves the mean prediction
/// the most; `Down` starts from the observation and releases the variable
/// that moves it the least. Steps are reported in fixing order either way.
pub fn break_down(explainer: &Explainer, obs: &Observation, direction: Direction) -> Result<Attribution> {
    let data = explainer.data();
    obs.validate(data)?;
    let mut names: Vec<String> = data.column_names().into_iter().map(str::to_string).collect();
    names.sort();
    let baseline = explainer.mean_prediction(data)?;
    let prediction = explainer.predict_observation(obs)?;
    let value_of = |v: &str| obs.get(v).expect("validated").clone();

    let steps = match direction {
        Direction::Up => {
            let mut current_data = data.clone();
            let mut current = baseline;
            let mut steps = Vec::with_capacity(names.len());
            while !names.is_empty() {
                let candidates = names
                    .iter()
                    .map(|v| Ok((v.clone(), current_data.substitute(v, &value_of(v))?)))
                    .collect::<Result<Vec<_>>>()?;
                let (i, mean) = best_candidate(explainer, &candidates, current, steps.len() + 1, true)?;
                let (variable, next) = candidates.into_iter().nth(i).expect("index in range");
                names.retain(|v| *v != variable);
                steps.push(AttributionStep {
                    value: value_of(&variable),
                    variable,
                    contribution: mean - current,
                });
                current_data = next;
                current = mean;
            }
            steps
        }
        Direction::Down => {
            let mut current_data = obs.to_dataset(data, data.n_rows())?;
            let mut current = explainer.mean_prediction(&current_data)?;
            let mut released = Vec::with_capacity(names.len());
            while !names.is_empty() {
                let candidates = names
                    .iter()
                    .map(|v| {
                        let original = data.require(v)?.data().clone();
                        Ok((v.clone(), current_data.with_column_data(v, original)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let (i, mean) =
                    best_candidate(explainer, &candidates, current, released.len() + 1, false)?;
                let (variable, next) = candidates.into_iter().nth(i).expect("index in range");
                names.retain(|v| *v != variable);
                released.push(AttributionStep {
                    value: value_of(&variable),
                    variable,
                    contribution: current - mean,
                });
                current_data = next;
                current = mean;
            }
            released.reverse();
            released
        }
    };
    Ok(Attribution {
        label: explainer.label().to_string(),
        baseline,
        steps,
        prediction,
        direction,
    })
}

/// Exact Shapley values of the value function
/// `S -> mean prediction with the variables in S fixed at obs`.
///
/// Enumerates all `2^p` subsets, so `p` is limited to
/// [`SHAPLEY_MAX_FEATURES`].
pub fn shapley_oracle(explainer: &Explainer, obs: &Observation) -> Result<BTreeMap<String, f64>> {
    let data = explainer.data();
    obs.validate(data)?;
    let names: Vec<String> = data.column_names().into_iter().map(str::to_string).collect();
    let p = names.len();
    if p > SHAPLEY_MAX_FEATURES {
        return Err(Error::usage(format!(
            "exact Shapley values support at most {SHAPLEY_MAX_FEATURES} variables, got {p}"
        )));
    }
    let values = (0..1usize << p)
        .into_par_iter()
        .map(|mask| {
            let mut d = data.clone();
            for (j, name) in names.iter().enumerate() {
                if mask & (1 << j) != 0 {
                    d = d.substitute(name, obs.get(name).expect("validated"))?;
                }
            }
            explainer.mean_prediction(&d)
        })
        .collect::<Result<Vec<f64>>>()?;
    let factorial = |k: usize| (1..=k).map(|i| i as f64).product::<f64>();
    let p_fact = factorial(p);
    let mut out = BTreeMap::new();
    for (j, name) in names.iter().enumerate() {
        let bit = 1usize << j;
        let mut phi = 0.0;
        for mask in (0..1usize << p).filter(|m| m & bit == 0) {
            let s = mask.count_ones() as usize;
            let weight = factorial(s) * factorial(p - s - 1) / p_fact;
            phi += weight * (values[mask | bit] - values[mask]);
        }
        out.insert(name.clone(), phi);
    }
    Ok(out)
}

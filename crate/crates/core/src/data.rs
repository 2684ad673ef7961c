//! Immutable columnar datasets and the column primitives shared by every
//! explainer: grids, quantiles, permutations and value substitution.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnKind::Numeric => f.write_str("numeric"),
            ColumnKind::Categorical => f.write_str("categorical"),
        }
    }
}

/// A single cell value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Num(f64),
    Cat(String),
}

impl Value {
    pub fn kind(&self) -> ColumnKind {
        match self {
            Value::Num(_) => ColumnKind::Numeric,
            Value::Cat(_) => ColumnKind::Categorical,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Num(v) => Some(*v),
            Value::Cat(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Num(_) => None,
            Value::Cat(s) => Some(s),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(v) => write!(f, "{v}"),
            Value::Cat(s) => f.write_str(s),
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Num(v)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Cat(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

impl ColumnData {
    pub fn kind(&self) -> ColumnKind {
        match self {
            ColumnData::Numeric(_) => ColumnKind::Numeric,
            ColumnData::Categorical(_) => ColumnKind::Categorical,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Value {
        match self {
            ColumnData::Numeric(v) => Value::Num(v[i]),
            ColumnData::Categorical(v) => Value::Cat(v[i].clone()),
        }
    }

    fn take(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&i| v[i]).collect()),
            ColumnData::Categorical(v) => {
                ColumnData::Categorical(rows.iter().map(|&i| v[i].clone()).collect())
            }
        }
    }

    fn constant(value: &Value, n: usize) -> ColumnData {
        match value {
            Value::Num(v) => ColumnData::Numeric(vec![*v; n]),
            Value::Cat(s) => ColumnData::Categorical(vec![s.clone(); n]),
        }
    }
}

/// A named column. Data is shared between datasets derived from one another.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    name: String,
    data: Arc<ColumnData>,
}

impl Column {
    pub fn numeric(name: impl Into<String>, values: Vec<f64>) -> Self {
        Column {
            name: name.into(),
            data: Arc::new(ColumnData::Numeric(values)),
        }
    }

    pub fn categorical<S: Into<String>>(name: impl Into<String>, values: Vec<S>) -> Self {
        Column {
            name: name.into(),
            data: Arc::new(ColumnData::Categorical(
                values.into_iter().map(Into::into).collect(),
            )),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> ColumnKind {
        self.data.kind()
    }

    pub fn data(&self) -> &ColumnData {
        &self.data
    }

    pub fn as_numeric(&self) -> Option<&[f64]> {
        match &*self.data {
            ColumnData::Numeric(v) => Some(v),
            ColumnData::Categorical(_) => None,
        }
    }

    pub fn as_categorical(&self) -> Option<&[String]> {
        match &*self.data {
            ColumnData::Numeric(_) => None,
            ColumnData::Categorical(v) => Some(v),
        }
    }

    /// Sorted distinct values of a categorical column; empty for numeric columns.
    pub fn levels(&self) -> Vec<String> {
        match &*self.data {
            ColumnData::Numeric(_) => Vec::new(),
            ColumnData::Categorical(v) => v
                .iter()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .cloned()
                .collect(),
        }
    }
}

/// Immutable table of typed, equally long columns.
///
/// The optional target name records which column held the response when the
/// table was loaded; [`TabularDataset::split_target`] separates it out.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    columns: Vec<Column>,
    n: usize,
    target: Option<String>,
}

impl TabularDataset {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let Some(first) = columns.first() else {
            return Err(Error::data("dataset must have at least one column"));
        };
        let n = first.data.len();
        let mut seen = HashSet::new();
        for col in &columns {
            if !seen.insert(col.name.as_str()) {
                return Err(Error::data(format!("duplicate column name '{}'", col.name)));
            }
            if col.data.len() != n {
                return Err(Error::data(format!(
                    "column '{}' has {} values, expected {n}",
                    col.name,
                    col.data.len()
                )));
            }
            if let ColumnData::Numeric(v) = &*col.data {
                if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                    return Err(Error::data(format!(
                        "column '{}' row {} is not a finite number",
                        col.name,
                        i + 1
                    )));
                }
            }
        }
        Ok(TabularDataset {
            columns,
            n,
            target: None,
        })
    }

    pub fn with_target(mut self, target: impl Into<String>) -> Result<Self> {
        let target = target.into();
        if self.column(&target).is_none() {
            return Err(Error::data(format!("target column '{target}' not found")));
        }
        self.target = Some(target);
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn target(&self) -> Option<&str> {
        self.target.as_deref()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Column> {
        self.column(name)
            .ok_or_else(|| Error::usage(format!("unknown variable '{name}'")))
    }

    pub fn numeric(&self, name: &str) -> Result<&[f64]> {
        let col = self.require(name)?;
        col.as_numeric()
            .ok_or_else(|| Error::usage(format!("variable '{name}' is categorical, expected numeric")))
    }

    /// Column names and kinds in column order.
    pub fn schema(&self) -> Vec<(String, ColumnKind)> {
        self.columns
            .iter()
            .map(|c| (c.name.clone(), c.kind()))
            .collect()
    }

    pub fn cell(&self, column: usize, row: usize) -> Value {
        self.columns[column].data.get(row)
    }

    /// Feature columns and numeric target values.
    pub fn split_target(&self) -> Result<(TabularDataset, Vec<f64>)> {
        let target = self
            .target
            .as_deref()
            .ok_or_else(|| Error::usage("dataset has no target column"))?;
        let y = self
            .require(target)?
            .as_numeric()
            .ok_or_else(|| Error::data(format!("target column '{target}' must be numeric")))?
            .to_vec();
        let features: Vec<Column> = self
            .columns
            .iter()
            .filter(|c| c.name != target)
            .cloned()
            .collect();
        if features.is_empty() {
            return Err(Error::data("dataset has no feature columns besides the target"));
        }
        Ok((TabularDataset::new(features)?, y))
    }

    /// Rows selected by index, in the given order (repeats allowed).
    pub fn take_rows(&self, rows: &[usize]) -> TabularDataset {
        TabularDataset {
            columns: self
                .columns
                .iter()
                .map(|c| Column {
                    name: c.name.clone(),
                    data: Arc::new(c.data.take(rows)),
                })
                .collect(),
            n: rows.len(),
            target: self.target.clone(),
        }
    }

    pub fn row(&self, i: usize) -> Observation {
        Observation {
            values: self
                .columns
                .iter()
                .map(|c| (c.name.clone(), c.data.get(i)))
                .collect(),
        }
    }

    /// Replaces the named column by `value` in every row.
    ///
    /// Unseen categorical levels are accepted.
    pub fn substitute(&self, variable: &str, value: &Value) -> Result<TabularDataset> {
        let col = self.require(variable)?;
        if col.kind() != value.kind() {
            return Err(Error::usage(format!(
                "cannot substitute a {} value into {} column '{variable}'",
                value.kind(),
                col.kind()
            )));
        }
        self.replace_column(variable, ColumnData::constant(value, self.n))
    }

    /// Replaces the named column's values wholesale; kind and length must match.
    pub fn with_column_data(&self, variable: &str, data: ColumnData) -> Result<TabularDataset> {
        let col = self.require(variable)?;
        if col.kind() != data.kind() {
            return Err(Error::usage(format!(
                "cannot replace {} column '{variable}' with {} values",
                col.kind(),
                data.kind()
            )));
        }
        if data.len() != self.n {
            return Err(Error::usage(format!(
                "replacement for '{variable}' has {} values, expected {}",
                data.len(),
                self.n
            )));
        }
        self.replace_column(variable, data)
    }

    fn replace_column(&self, variable: &str, data: ColumnData) -> Result<TabularDataset> {
        if let ColumnData::Numeric(v) = &data {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::usage(format!(
                    "non-finite value substituted into '{variable}'"
                )));
            }
        }
        let data = Arc::new(data);
        let columns = self
            .columns
            .iter()
            .map(|c| {
                if c.name == variable {
                    Column {
                        name: c.name.clone(),
                        data: Arc::clone(&data),
                    }
                } else {
                    c.clone()
                }
            })
            .collect();
        Ok(TabularDataset {
            columns,
            n: self.n,
            target: self.target.clone(),
        })
    }

    /// Shuffles one column with a Fisher-Yates pass driven by a generator keyed
    /// on `(seed, variable)`.
    pub fn permute_column(&self, variable: &str, seed: u64) -> Result<TabularDataset> {
        let col = self.require(variable)?;
        let order = permutation(self.n, seed, variable);
        let data = col.data.take(&order);
        self.replace_column(variable, data)
    }

    /// Writes the table as RFC 4180 CSV with a header row. Numbers use the
    /// shortest representation that parses back to the same value.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(self.columns.iter().map(|c| c.name.as_str()))
            .map_err(csv_io)?;
        let mut record: Vec<String> = Vec::with_capacity(self.columns.len());
        for i in 0..self.n {
            record.clear();
            for c in &self.columns {
                record.push(match &*c.data {
                    ColumnData::Numeric(v) => format!("{}", v[i]),
                    ColumnData::Categorical(v) => v[i].clone(),
                });
            }
            w.write_record(&record).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::data(e.to_string()))
    }

    /// Checks that `other` has the same column names and kinds, in order.
    pub fn check_schema(&self, other: &TabularDataset) -> Result<()> {
        let a = self.schema();
        let b = other.schema();
        if a != b {
            let fmt = |s: &[(String, ColumnKind)]| {
                s.iter()
                    .map(|(n, k)| format!("{n}:{k}"))
                    .collect::<Vec<_>>()
                    .join(",")
            };
            return Err(Error::usage(format!(
                "schema mismatch: expected [{}], got [{}]",
                fmt(&a),
                fmt(&b)
            )));
        }
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// One row of feature values, keyed by column name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub values: BTreeMap<String, Value>,
}

impl Observation {
    pub fn new(values: BTreeMap<String, Value>) -> Self {
        Observation { values }
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.values.get(name)
    }

    /// Verifies the observation carries exactly the dataset's feature columns
    /// with matching kinds.
    pub fn validate(&self, schema: &TabularDataset) -> Result<()> {
        for col in schema.columns() {
            match self.values.get(col.name()) {
                None => {
                    return Err(Error::usage(format!(
                        "observation is missing column '{}'",
                        col.name()
                    )))
                }
                Some(v) if v.kind() != col.kind() => {
                    return Err(Error::usage(format!(
                        "observation value for '{}' is {}, expected {}",
                        col.name(),
                        v.kind(),
                        col.kind()
                    )))
                }
                Some(Value::Num(x)) if !x.is_finite() => {
                    return Err(Error::usage(format!(
                        "observation value for '{}' is not finite",
                        col.name()
                    )))
                }
                _ => {}
            }
        }
        if let Some(extra) = self
            .values
            .keys()
            .find(|k| schema.column(k).is_none())
        {
            return Err(Error::usage(format!(
                "observation has unexpected column '{extra}'"
            )));
        }
        Ok(())
    }

    /// The observation repeated `times` rows, laid out in `schema`'s column order.
    pub fn to_dataset(&self, schema: &TabularDataset, times: usize) -> Result<TabularDataset> {
        self.validate(schema)?;
        let columns = schema
            .columns()
            .iter()
            .map(|c| Column {
                name: c.name.clone(),
                data: Arc::new(ColumnData::constant(&self.values[&c.name], times)),
            })
            .collect();
        Ok(TabularDataset {
            columns,
            n: times,
            target: None,
        })
    }
}

/// Grid construction strategy for profile explainers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridStrategy {
    Uniform(usize),
    Quantile(usize),
    Unique,
}

impl FromStr for GridStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, k) = match s.split_once(':') {
            Some((name, k)) => (name, Some(k)),
            None => (s, None),
        };
        let parse_k = |k: Option<&str>| -> Result<usize> {
            let k = k.ok_or_else(|| Error::usage(format!("grid '{s}' needs a point count")))?;
            let k: usize = k
                .parse()
                .map_err(|_| Error::usage(format!("invalid grid point count '{k}'")))?;
            if k < 2 {
                return Err(Error::usage("grid point count must be at least 2"));
            }
            Ok(k)
        };
        match name {
            "uniform" => Ok(GridStrategy::Uniform(parse_k(k)?)),
            "quantile" => Ok(GridStrategy::Quantile(parse_k(k)?)),
            "unique" if k.is_none() => Ok(GridStrategy::Unique),
            _ => Err(Error::usage(format!(
                "unknown grid '{s}' (expected quantile:K, uniform:K or unique)"
            ))),
        }
    }
}

/// Reads a CSV table with a header row.
///
/// Columns default to numeric when every cell parses as a finite decimal
/// number; `hints` overrides the detected kind per column.
pub fn load_csv<R: Read>(
    source: R,
    target: &str,
    hints: &HashMap<String, ColumnKind>,
) -> Result<TabularDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::data(format!("cannot read CSV header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::data("CSV input is empty"));
    }
    for hint in hints.keys() {
        if !header.contains(hint) {
            return Err(Error::data(format!("schema hint for unknown column '{hint}'")));
        }
    }
    let mut cells: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::data(format!("row {row}: {e}")))?;
        if record.len() != header.len() {
            return Err(Error::data(format!(
                "row {row} has {} fields, expected {}",
                record.len(),
                header.len()
            )));
        }
        for (j, cell) in record.iter().enumerate() {
            if cell.trim().is_empty() {
                return Err(Error::data(format!(
                    "missing value at row {row}, column '{}'",
                    header[j]
                )));
            }
            cells[j].push(cell.to_string());
        }
    }
    if cells[0].is_empty() {
        return Err(Error::data("CSV input has a header but no data rows"));
    }

    let mut columns = Vec::with_capacity(header.len());
    for (name, values) in header.iter().zip(cells) {
        let parsed: Vec<Option<f64>> = values.iter().map(|s| parse_number(s)).collect();
        let kind = match hints.get(name) {
            Some(k) => *k,
            None if parsed.iter().all(Option::is_some) => ColumnKind::Numeric,
            None => ColumnKind::Categorical,
        };
        let column = match kind {
            ColumnKind::Numeric => {
                let mut out = Vec::with_capacity(values.len());
                for (i, (v, raw)) in parsed.iter().zip(&values).enumerate() {
                    match v {
                        Some(x) => out.push(*x),
                        None => {
                            return Err(Error::data(format!(
                                "cannot parse '{raw}' as a number at row {}, column '{name}'",
                                i + 1
                            )))
                        }
                    }
                }
                Column::numeric(name.clone(), out)
            }
            ColumnKind::Categorical => Column::categorical(name.clone(), values),
        };
        columns.push(column);
    }
    TabularDataset::new(columns)?.with_target(target)
}

pub(crate) fn parse_number(s: &str) -> Option<f64> {
    let t = s.trim();
    // Rust also accepts "inf"/"NaN"; those are not decimal numbers here.
    if !t
        .bytes()
        .all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e' | b'E'))
    {
        return None;
    }
    t.parse::<f64>().ok().filter(|x| x.is_finite())
}

/// Type-7 (linearly interpolated) sample quantile.
pub fn quantile(column: &[f64], p: f64) -> Result<f64> {
    if column.is_empty() {
        return Err(Error::data("quantile of an empty column"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::usage(format!("quantile probability {p} outside [0, 1]")));
    }
    let mut sorted = column.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, p))
}

/// Type-7 quantile of an already ascending, nonempty slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// Fraction of column values `<= v`.
pub fn ecdf_position(column: &[f64], v: f64) -> f64 {
    if column.is_empty() {
        return 0.0;
    }
    let count = column.iter().filter(|&&x| x <= v).count();
    count as f64 / column.len() as f64
}

/// Ordered grid of values for `variable`.
pub fn make_grid(
    dataset: &TabularDataset,
    variable: &str,
    strategy: GridStrategy,
) -> Result<Vec<Value>> {
    let col = dataset.require(variable)?;
    match (strategy, col.data()) {
        (GridStrategy::Unique, ColumnData::Categorical(_)) => {
            Ok(col.levels().into_iter().map(Value::Cat).collect())
        }
        (GridStrategy::Unique, ColumnData::Numeric(v)) => {
            let mut sorted = v.clone();
            sorted.sort_by(f64::total_cmp);
            sorted.dedup();
            Ok(sorted.into_iter().map(Value::Num).collect())
        }
        (_, ColumnData::Categorical(_)) => Err(Error::usage(format!(
            "variable '{variable}' is categorical; only the unique grid applies"
        ))),
        (GridStrategy::Uniform(k), ColumnData::Numeric(v)) => {
            check_k(k)?;
            let (lo, hi) = min_max(v);
            let points = (0..k).map(|i| {
                if i == k - 1 {
                    hi
                } else {
                    lo + (hi - lo) * (i as f64 / (k - 1) as f64)
                }
            });
            Ok(strictly_increasing(points))
        }
        (GridStrategy::Quantile(k), ColumnData::Numeric(v)) => {
            check_k(k)?;
            let mut sorted = v.clone();
            sorted.sort_by(f64::total_cmp);
            let points = (0..k).map(|i| quantile_sorted(&sorted, i as f64 / (k - 1) as f64));
            Ok(strictly_increasing(points))
        }
    }
}

fn check_k(k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::usage("grid point count must be at least 2"));
    }
    Ok(())
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}

fn strictly_increasing(points: impl Iterator<Item = f64>) -> Vec<Value> {
    let mut out: Vec<f64> = Vec::new();
    for p in points {
        if out.last().is_none_or(|&last| p > last) {
            out.push(p);
        }
    }
    out.into_iter().map(Value::Num).collect()
}

/// Mixes a seed with a repeat index into an independent seed.
pub fn derive_seed(seed: u64, repeat: u64) -> u64 {
    splitmix64(seed ^ splitmix64(repeat.wrapping_add(0x5eed)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Row order produced by a seeded Fisher-Yates shuffle.
///
/// The ChaCha stream id is the FNV-1a hash of `key`, so different columns
/// shuffled under one seed draw from independent streams.
pub fn permutation(n: usize, seed: u64, key: &str) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a64(key.as_bytes()));
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    order
}

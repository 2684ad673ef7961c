//! The explainer wrapper around a predict function, plus the two built-in
//! reference models (ordinary least squares and a CART regression tree).

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnData, ColumnKind, Observation, TabularDataset};
use crate::error::{Error, Result};

/// Anything that maps query rows to one finite score per row.
///
/// Implementations must be deterministic. Non-reentrant predictors are
/// serialized by [`Explainer`] through a mutex.
pub trait Predictor: Send + Sync {
    fn predict(&self, query: &TabularDataset) -> Result<Vec<f64>>;

    fn is_reentrant(&self) -> bool {
        true
    }
}

/// Adapts a closure into a [`Predictor`].
pub struct FnPredictor<F> {
    f: F,
    reentrant: bool,
}

impl<F> FnPredictor<F>
where
    F: Fn(&TabularDataset) -> Result<Vec<f64>> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        FnPredictor { f, reentrant: true }
    }

    pub fn non_reentrant(f: F) -> Self {
        FnPredictor { f, reentrant: false }
    }
}

impl<F> Predictor for FnPredictor<F>
where
    F: Fn(&TabularDataset) -> Result<Vec<f64>> + Send + Sync,
{
    fn predict(&self, query: &TabularDataset) -> Result<Vec<f64>> {
        (self.f)(query)
    }

    fn is_reentrant(&self) -> bool {
        self.reentrant
    }
}

const PROBE_ROWS: usize = 8;

/// A model bound to its validation data, true targets and a display label.
pub struct Explainer {
    predictor: Arc<dyn Predictor>,
    gate: Mutex<()>,
    data: TabularDataset,
    y: Vec<f64>,
    label: String,
}

impl fmt::Debug for Explainer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Explainer")
            .field("label", &self.label)
            .field("n", &self.data.n_rows())
            .field("features", &self.data.column_names())
            .finish()
    }
}

/// Wraps `predictor` with validation data `data` (feature columns only) and
/// targets `y`.
///
/// The first rows of `data` are sent through the predictor twice; a wrong
/// output length, non-finite scores, or differing answers fail the wrap.
pub fn explain(
    predictor: Arc<dyn Predictor>,
    data: TabularDataset,
    y: Vec<f64>,
    label: impl Into<String>,
) -> Result<Explainer> {
    let label = label.into();
    if label.is_empty() {
        return Err(Error::usage("explainer label must not be empty"));
    }
    if y.len() != data.n_rows() {
        return Err(Error::usage(format!(
            "target has {} values but data has {} rows",
            y.len(),
            data.n_rows()
        )));
    }
    if data.n_rows() == 0 {
        return Err(Error::data("validation data has no rows"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("target values must be finite"));
    }
    let explainer = Explainer {
        predictor,
        gate: Mutex::new(()),
        data,
        y,
        label,
    };
    let rows: Vec<usize> = (0..explainer.data.n_rows().min(PROBE_ROWS)).collect();
    let probe = explainer.data.take_rows(&rows);
    let first = explainer
        .predict_batch(&probe)
        .map_err(|e| e.context(format!("model '{}' failed the probe call", explainer.label)))?;
    let second = explainer.predict_batch(&probe)?;
    if first
        .iter()
        .zip(&second)
        .any(|(a, b)| a.to_bits() != b.to_bits())
    {
        return Err(Error::adapter(format!(
            "model '{}' is not deterministic: repeated probe predictions differ",
            explainer.label
        )));
    }
    Ok(explainer)
}

impl Explainer {
    pub fn data(&self) -> &TabularDataset {
        &self.data
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn predictor(&self) -> &Arc<dyn Predictor> {
        &self.predictor
    }

    /// Scores `query`, which must share the validation data's schema.
    pub fn predict_batch(&self, query: &TabularDataset) -> Result<Vec<f64>> {
        self.data.check_schema(query)?;
        if query.n_rows() == 0 {
            return Ok(Vec::new());
        }
        let out = if self.predictor.is_reentrant() {
            self.predictor.predict(query)
        } else {
            let _guard = self.gate.lock().unwrap_or_else(|p| p.into_inner());
            self.predictor.predict(query)
        };
        let out = out.map_err(|e| match e {
            Error::Adapter(_) => e,
            other => Error::Adapter(other.to_string()),
        })?;
        if out.len() != query.n_rows() {
            return Err(Error::adapter(format!(
                "expected {} predictions, got {}",
                query.n_rows(),
                out.len()
            )));
        }
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::adapter(format!(
                "prediction {} is not finite ({})",
                i + 1,
                out[i]
            )));
        }
        Ok(out)
    }

    pub fn predict_observation(&self, obs: &Observation) -> Result<f64> {
        let row = obs.to_dataset(&self.data, 1)?;
        Ok(self.predict_batch(&row)?[0])
    }

    pub fn mean_prediction(&self, query: &TabularDataset) -> Result<f64> {
        Ok(crate::mean(&self.predict_batch(query)?))
    }
}

/// One additive term of a [`LinearModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LinearTerm {
    Numeric {
        column: String,
        coefficient: f64,
    },
    /// Dummy-coded factor; `reference` has an implicit offset of zero.
    Categorical {
        column: String,
        reference: String,
        offsets: BTreeMap<String, f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub terms: Vec<LinearTerm>,
}

impl LinearModel {
    pub fn coefficient(&self, column: &str) -> Option<f64> {
        self.terms.iter().find_map(|t| match t {
            LinearTerm::Numeric {
                column: c,
                coefficient,
            } if c == column => Some(*coefficient),
            _ => None,
        })
    }

    pub fn predict(&self, query: &TabularDataset) -> Result<Vec<f64>> {
        let mut out = vec![self.intercept; query.n_rows()];
        for term in &self.terms {
            match term {
                LinearTerm::Numeric {
                    column,
                    coefficient,
                } => {
                    let x = query.numeric(column)?;
                    for (o, &xi) in out.iter_mut().zip(x) {
                        *o += coefficient * xi;
                    }
                }
                LinearTerm::Categorical {
                    column,
                    reference,
                    offsets,
                } => {
                    let values = query
                        .require(column)?
                        .as_categorical()
                        .ok_or_else(|| Error::usage(format!("column '{column}' must be categorical")))?;
                    for (o, level) in out.iter_mut().zip(values) {
                        if level == reference {
                            continue;
                        }
                        match offsets.get(level) {
                            Some(off) => *o += off,
                            None => {
                                return Err(Error::adapter(format!(
                                    "linear model has no coefficient for level '{level}' of '{column}'"
                                )))
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Ordinary least squares with an intercept, solved through a Householder QR
/// factorisation of the design matrix.
///
/// Categorical columns are dummy coded against their first (sorted) level.
pub fn fit_linear(data: &TabularDataset, y: &[f64]) -> Result<LinearModel> {
    let n = data.n_rows();
    if y.len() != n {
        return Err(Error::usage(format!(
            "target has {} values but data has {n} rows",
            y.len()
        )));
    }
    let mut names = vec!["(intercept)".to_string()];
    let mut design: Vec<Vec<f64>> = vec![vec![1.0; n]];
    for col in data.columns() {
        match col.data() {
            ColumnData::Numeric(v) => {
                names.push(col.name().to_string());
                design.push(v.clone());
            }
            ColumnData::Categorical(v) => {
                for level in col.levels().iter().skip(1) {
                    names.push(format!("{}={level}", col.name()));
                    design.push(v.iter().map(|s| f64::from(u8::from(s == level))).collect());
                }
            }
        }
    }
    let p = design.len();
    if n <= p {
        return Err(Error::Fit(format!(
            "linear model needs more rows than parameters ({n} rows, {p} parameters)"
        )));
    }
    let x = DMatrix::from_fn(n, p, |i, j| design[j][i]);
    let qr = x.qr();
    let r = qr.r();
    for j in 0..p {
        let norm = design[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || r[(j, j)].abs() <= 1e-10 * norm {
            return Err(Error::Fit(format!(
                "design matrix is rank deficient at column '{}'",
                names[j]
            )));
        }
    }
    let mut qtb = DVector::from_column_slice(y);
    qr.q_tr_mul(&mut qtb);
    let beta = r
        .solve_upper_triangular(&qtb.rows(0, p).into_owned())
        .ok_or_else(|| Error::Fit("triangular solve failed".into()))?;

    let mut k = 1;
    let mut terms = Vec::new();
    for col in data.columns() {
        match col.kind() {
            ColumnKind::Numeric => {
                terms.push(LinearTerm::Numeric {
                    column: col.name().to_string(),
                    coefficient: beta[k],
                });
                k += 1;
            }
            ColumnKind::Categorical => {
                let levels = col.levels();
                let mut offsets = BTreeMap::new();
                for level in levels.iter().skip(1) {
                    offsets.insert(level.clone(), beta[k]);
                    k += 1;
                }
                terms.push(LinearTerm::Categorical {
                    column: col.name().to_string(),
                    reference: levels[0].clone(),
                    offsets,
                });
            }
        }
    }
    Ok(LinearModel {
        intercept: beta[0],
        terms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SplitRule {
    /// Rows with `x < threshold` go left.
    Below { threshold: f64 },
    /// Rows whose level is listed go left; every other level goes right.
    Levels { left: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        value: f64,
        count: usize,
    },
    Split {
        variable: String,
        rule: SplitRule,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub root: TreeNode,
}

impl RegressionTree {
    pub fn predict(&self, query: &TabularDataset) -> Result<Vec<f64>> {
        (0..query.n_rows())
            .map(|i| {
                let mut node = &self.root;
                loop {
                    match node {
                        TreeNode::Leaf { value, .. } => return Ok(*value),
                        TreeNode::Split {
                            variable,
                            rule,
                            left,
                            right,
                        } => {
                            let col = query.require(variable)?;
                            let goes_left = match (rule, col.data()) {
                                (SplitRule::Below { threshold }, ColumnData::Numeric(v)) => {
                                    v[i] < *threshold
                                }
                                (SplitRule::Levels { left }, ColumnData::Categorical(v)) => {
                                    left.contains(&v[i])
                                }
                                _ => {
                                    return Err(Error::usage(format!(
                                        "column '{variable}' has the wrong kind for this tree"
                                    )))
                                }
                            };
                            node = if goes_left { left } else { right };
                        }
                    }
                }
            })
            .collect()
    }

    pub fn depth(&self) -> usize {
        fn walk(n: &TreeNode) -> usize {
            match n {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(left).max(walk(right)),
            }
        }
        walk(&self.root)
    }

    pub fn n_leaves(&self) -> usize {
        fn walk(n: &TreeNode) -> usize {
            match n {
                TreeNode::Leaf { .. } => 1,
                TreeNode::Split { left, right, .. } => walk(left) + walk(right),
            }
        }
        walk(&self.root)
    }
}

/// Grows a CART regression tree by greedy minimisation of within-child SSE.
pub fn fit_tree(
    data: &TabularDataset,
    y: &[f64],
    max_depth: usize,
    min_leaf: usize,
) -> Result<RegressionTree> {
    if max_depth < 1 {
        return Err(Error::usage("max_depth must be at least 1"));
    }
    if min_leaf < 1 {
        return Err(Error::usage("min_leaf must be at least 1"));
    }
    if y.len() != data.n_rows() {
        return Err(Error::usage(format!(
            "target has {} values but data has {} rows",
            y.len(),
            data.n_rows()
        )));
    }
    let rows: Vec<usize> = (0..data.n_rows()).collect();
    let builder = TreeBuilder {
        data,
        y,
        max_depth,
        min_leaf,
    };
    Ok(RegressionTree {
        max_depth,
        min_leaf,
        root: builder.grow(rows, 0),
    })
}

struct TreeBuilder<'a> {
    data: &'a TabularDataset,
    y: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
}

struct Candidate {
    column: usize,
    rule: SplitRule,
    reduction: f64,
}

impl TreeBuilder<'_> {
    fn leaf(&self, rows: &[usize]) -> TreeNode {
        let first = self.y[rows[0]];
        let value = if rows.iter().all(|&i| self.y[i] == first) {
            first
        } else {
            rows.iter().map(|&i| self.y[i]).sum::<f64>() / rows.len() as f64
        };
        TreeNode::Leaf {
            value,
            count: rows.len(),
        }
    }

    fn grow(&self, rows: Vec<usize>, depth: usize) -> TreeNode {
        let n = rows.len();
        if depth >= self.max_depth || n < 2 * self.min_leaf {
            return self.leaf(&rows);
        }
        let mean = rows.iter().map(|&i| self.y[i]).sum::<f64>() / n as f64;
        let sse: f64 = rows.iter().map(|&i| (self.y[i] - mean).powi(2)).sum();
        if sse == 0.0 {
            return self.leaf(&rows);
        }
        let mut best: Option<Candidate> = None;
        for (j, col) in self.data.columns().iter().enumerate() {
            let cand = match col.data() {
                ColumnData::Numeric(x) => self.best_numeric(&rows, x),
                ColumnData::Categorical(x) => self.best_categorical(&rows, x),
            };
            if let Some((rule, reduction)) = cand {
                if best.as_ref().is_none_or(|b| reduction > b.reduction) {
                    best = Some(Candidate {
                        column: j,
                        rule,
                        reduction,
                    });
                }
            }
        }
        let Some(best) = best.filter(|b| b.reduction > 1e-12 * sse) else {
            return self.leaf(&rows);
        };
        let col = &self.data.columns()[best.column];
        let (left, right): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| {
            match (&best.rule, col.data()) {
                (SplitRule::Below { threshold }, ColumnData::Numeric(x)) => x[i] < *threshold,
                (SplitRule::Levels { left }, ColumnData::Categorical(x)) => left.contains(&x[i]),
                _ => unreachable!("rule kind follows column kind"),
            }
        });
        TreeNode::Split {
            variable: col.name().to_string(),
            rule: best.rule,
            left: Box::new(self.grow(left, depth + 1)),
            right: Box::new(self.grow(right, depth + 1)),
        }
    }

    /// SSE reduction of splitting a node into the given left/right sums.
    fn reduction(n_left: usize, sum_left: f64, n_right: usize, sum_right: f64) -> f64 {
        let (nl, nr) = (n_left as f64, n_right as f64);
        let diff = sum_left / nl - sum_right / nr;
        nl * nr / (nl + nr) * diff * diff
    }

    fn best_numeric(&self, rows: &[usize], x: &[f64]) -> Option<(SplitRule, f64)> {
        let mut sorted = rows.to_vec();
        sorted.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
        let total: f64 = sorted.iter().map(|&i| self.y[i]).sum();
        let n = sorted.len();
        let mut sum_left = 0.0;
        let mut best: Option<(f64, f64)> = None;
        for k in 0..n - 1 {
            sum_left += self.y[sorted[k]];
            let n_left = k + 1;
            let (lo, hi) = (x[sorted[k]], x[sorted[k + 1]]);
            if lo == hi || n_left < self.min_leaf || n - n_left < self.min_leaf {
                continue;
            }
            let red = Self::reduction(n_left, sum_left, n - n_left, total - sum_left);
            if best.is_none_or(|(_, r)| red > r) {
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold <= lo {
                    threshold = hi;
                }
                best = Some((threshold, red));
            }
        }
        best.map(|(threshold, red)| (SplitRule::Below { threshold }, red))
    }

    fn best_categorical(&self, rows: &[usize], x: &[String]) -> Option<(SplitRule, f64)> {
        let mut stats: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
        for &i in rows {
            let e = stats.entry(x[i].as_str()).or_insert((0, 0.0));
            e.0 += 1;
            e.1 += self.y[i];
        }
        if stats.len() < 2 {
            return None;
        }
        let mut levels: Vec<(&str, usize, f64)> =
            stats.into_iter().map(|(l, (c, s))| (l, c, s)).collect();
        // Stable sort keeps lexicographic order among equal means.
        levels.sort_by(|a, b| (a.2 / a.1 as f64).total_cmp(&(b.2 / b.1 as f64)));
        let n: usize = levels.iter().map(|l| l.1).sum();
        let total: f64 = levels.iter().map(|l| l.2).sum();
        let (mut n_left, mut sum_left) = (0usize, 0.0);
        let mut best: Option<(usize, f64)> = None;
        for (k, level) in levels.iter().enumerate().take(levels.len() - 1) {
            n_left += level.1;
            sum_left += level.2;
            if n_left < self.min_leaf || n - n_left < self.min_leaf {
                continue;
            }
            let red = Self::reduction(n_left, sum_left, n - n_left, total - sum_left);
            if best.is_none_or(|(_, r)| red > r) {
                best = Some((k, red));
            }
        }
        best.map(|(k, red)| {
            let mut left: Vec<String> = levels[..=k].iter().map(|l| l.0.to_string()).collect();
            left.sort();
            (SplitRule::Levels { left }, red)
        })
    }
}

/// A fitted built-in model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BuiltinModel {
    Ols(LinearModel),
    Tree(RegressionTree),
}

impl Predictor for BuiltinModel {
    fn predict(&self, query: &TabularDataset) -> Result<Vec<f64>> {
        match self {
            BuiltinModel::Ols(m) => m.predict(query),
            BuiltinModel::Tree(m) => m.predict(query),
        }
    }
}

impl Predictor for LinearModel {
    fn predict(&self, query: &TabularDataset) -> Result<Vec<f64>> {
        LinearModel::predict(self, query)
    }
}

impl Predictor for RegressionTree {
    fn predict(&self, query: &TabularDataset) -> Result<Vec<f64>> {
        RegressionTree::predict(self, query)
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    version: u32,
    #[serde(flatten)]
    model: BuiltinModel,
}

impl BuiltinModel {
    /// Serialises the model as a versioned JSON document.
    pub fn to_json(&self) -> String {
        let doc = ModelDocument {
            version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        };
        let value = serde_json::to_value(&doc).expect("model serialises");
        let mut text = serde_json::to_string_pretty(&value).expect("model serialises");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)
            .map_err(|e| Error::data(format!("invalid model document: {e}")))?;
        if doc.version != MODEL_FORMAT_VERSION {
            return Err(Error::data(format!(
                "unsupported model document version {} (expected {MODEL_FORMAT_VERSION})",
                doc.version
            )));
        }
        Ok(doc.model)
    }
}

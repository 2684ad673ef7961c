//! Python bindings for boxplain.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::sync::Arc;

use boxplain::data::{load_csv, Column, ColumnData};
use boxplain::local_explainers::{break_down, ceteris_paribus, normalize_cp, shapley_oracle, Direction};
use boxplain::model::{fit_linear, fit_tree};
use boxplain::performance::{model_performance, LossKind};
use boxplain::variable_importance::variable_importance;
use boxplain::variable_response::{accumulated_local_effects, factor_merge, partial_dependence};
use boxplain::viz::{export_json, export_json_many, parse_json, render, Explanation, RenderOptions};
use boxplain::{BuiltinModel, ColumnKind, Error, GridStrategy, Observation, Predictor, TabularDataset, Value};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError, PyTypeError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

create_exception!(boxplain, BoxplainError, PyException);
create_exception!(boxplain, UsageError, BoxplainError);
create_exception!(boxplain, DataError, BoxplainError);
create_exception!(boxplain, AdapterError, BoxplainError);

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Usage(_) => UsageError::new_err(msg),
        Error::Data(_) | Error::Fit(_) => DataError::new_err(msg),
        Error::Adapter(_) => AdapterError::new_err(msg),
        Error::Io(_) => PyOSError::new_err(msg),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

/// A table of named numeric or categorical columns with a target column.
#[pyclass(module = "boxplain", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Dataset {
    features: TabularDataset,
    y: Vec<f64>,
    target: String,
}

#[pymethods]
impl Dataset {
    /// Builds a dataset from a dict of equal-length lists. Lists of str are
    /// categorical; lists of numbers are numeric.
    #[new]
    fn new(columns: &Bound<'_, PyDict>, target: String) -> PyResult<Self> {
        let mut cols = Vec::with_capacity(columns.len());
        for (name, values) in columns.iter() {
            let name: String = name.extract()?;
            let list = values.cast::<PyList>().map_err(|_| PyTypeError::new_err(format!("column '{name}' must be a list")))?;
            let column = if let Ok(v) = list.extract::<Vec<f64>>() {
                Column::numeric(name, v)
            } else if let Ok(v) = list.extract::<Vec<String>>() {
                Column::categorical(name, v)
            } else {
                return Err(PyTypeError::new_err(format!("column '{name}' must hold only numbers or only strings")));
            };
            cols.push(column);
        }
        let data = TabularDataset::new(cols).and_then(|d| d.with_target(&target)).map_err(to_py)?;
        let (features, y) = data.split_target().map_err(to_py)?;
        Ok(Dataset { features, y, target })
    }

    /// Reads a CSV file; `categorical` forces columns to be read as text.
    #[staticmethod]
    #[pyo3(signature = (path, target, categorical=None))]
    fn from_csv(path: &str, target: String, categorical: Option<Vec<String>>) -> PyResult<Self> {
        let file = File::open(path).map_err(|e| PyOSError::new_err(format!("cannot open '{path}': {e}")))?;
        let hints: HashMap<String, ColumnKind> = categorical
            .unwrap_or_default()
            .into_iter()
            .map(|c| (c, ColumnKind::Categorical))
            .collect();
        let data = load_csv(file, &target, &hints).map_err(to_py)?;
        let (features, y) = data.split_target().map_err(to_py)?;
        Ok(Dataset { features, y, target })
    }

    #[getter]
    fn n_rows(&self) -> usize {
        self.features.n_rows()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.features.column_names().into_iter().map(str::to_string).collect()
    }

    #[getter]
    fn target(&self) -> &str {
        &self.target
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.y.clone()
    }

    /// Feature values of one row as a dict.
    fn row<'py>(&self, py: Python<'py>, index: usize) -> PyResult<Bound<'py, PyDict>> {
        if index >= self.features.n_rows() {
            return Err(UsageError::new_err(format!(
                "index {index} out of range 0..{}",
                self.features.n_rows() - 1
            )));
        }
        observation_to_dict(py, &self.features.row(index))
    }

    fn __len__(&self) -> usize {
        self.features.n_rows()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n_rows={}, features={:?}, target={:?})",
            self.features.n_rows(),
            self.features.column_names(),
            self.target
        )
    }
}

fn observation_to_dict<'py>(py: Python<'py>, obs: &Observation) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (k, v) in &obs.values {
        match v {
            Value::Num(x) => d.set_item(k, *x)?,
            Value::Cat(s) => d.set_item(k, s)?,
        }
    }
    Ok(d)
}

fn columns_to_dict<'py>(py: Python<'py>, data: &TabularDataset) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for c in data.columns() {
        match c.data() {
            ColumnData::Numeric(v) => d.set_item(c.name(), v.clone())?,
            ColumnData::Categorical(v) => d.set_item(c.name(), v.clone())?,
        }
    }
    Ok(d)
}

/// A fitted built-in model (ordinary least squares or a regression tree).
#[pyclass(module = "boxplain", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Model {
    inner: BuiltinModel,
}

#[pymethods]
impl Model {
    /// Fits `kind` ("ols" or "tree") to a dataset.
    #[staticmethod]
    #[pyo3(signature = (data, kind="ols", max_depth=6, min_leaf=5))]
    fn fit(py: Python<'_>, data: &Dataset, kind: &str, max_depth: usize, min_leaf: usize) -> PyResult<Self> {
        let inner = py
            .detach(|| match kind {
                "ols" => fit_linear(&data.features, &data.y).map(BuiltinModel::Ols),
                "tree" => fit_tree(&data.features, &data.y, max_depth, min_leaf).map(BuiltinModel::Tree),
                other => Err(Error::usage(format!("unknown model kind '{other}' (use ols or tree)"))),
            })
            .map_err(to_py)?;
        Ok(Model { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Model {
            inner: BuiltinModel::from_json(text).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn predict(&self, py: Python<'_>, data: &Dataset) -> PyResult<Vec<f64>> {
        py.detach(|| self.inner.predict(&data.features)).map_err(to_py)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        match self.inner {
            BuiltinModel::Ols(_) => "ols",
            BuiltinModel::Tree(_) => "tree",
        }
    }
}

/// Wraps a Python callable taking a dict of column lists and returning one
/// float per row.
struct CallablePredictor {
    func: Py<PyAny>,
}

impl Predictor for CallablePredictor {
    fn predict(&self, query: &TabularDataset) -> boxplain::Result<Vec<f64>> {
        Python::attach(|py| {
            let fail = |e: PyErr| Error::adapter(format!("Python model: {e}"));
            let args = columns_to_dict(py, query).map_err(fail)?;
            let out = self.func.bind(py).call1((args,)).map_err(fail)?;
            out.extract::<Vec<f64>>()
                .map_err(|_| Error::adapter("Python model must return a sequence of floats"))
        })
    }

    fn is_reentrant(&self) -> bool {
        false
    }
}

/// One explainer result; `to_json()` gives its canonical JSON.
#[pyclass(module = "boxplain", frozen, from_py_object, name = "Result")]
#[derive(Clone)]
struct PyExplanation {
    inner: Explanation,
}

#[pymethods]
impl PyExplanation {
    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind()
    }

    #[getter]
    fn label(&self) -> &str {
        self.inner.label()
    }

    fn to_json(&self) -> String {
        export_json(&self.inner)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Vec<PyExplanation>> {
        Ok(parse_json(text)
            .map_err(to_py)?
            .into_iter()
            .map(|inner| PyExplanation { inner })
            .collect())
    }

    fn __repr__(&self) -> String {
        format!("Result(kind={:?}, label={:?})", self.inner.kind(), self.inner.label())
    }
}

/// A model bound to validation data and a label.
#[pyclass(module = "boxplain", frozen)]
struct Explainer {
    inner: boxplain::Explainer,
}

fn observation(explainer: &boxplain::Explainer, obs: &Bound<'_, PyAny>) -> PyResult<Observation> {
    if let Ok(i) = obs.extract::<usize>() {
        let n = explainer.data().n_rows();
        if i >= n {
            return Err(UsageError::new_err(format!("index {i} out of range 0..{}", n - 1)));
        }
        return Ok(explainer.data().row(i));
    }
    let dict = obs
        .cast::<PyDict>()
        .map_err(|_| PyTypeError::new_err("observation must be a row index or a dict"))?;
    let mut values = BTreeMap::new();
    for (k, v) in dict.iter() {
        let k: String = k.extract()?;
        let value = if let Ok(s) = v.extract::<String>() {
            Value::Cat(s)
        } else {
            Value::Num(v.extract::<f64>()?)
        };
        values.insert(k, value);
    }
    let obs = Observation::new(values);
    obs.validate(explainer.data()).map_err(to_py)?;
    Ok(obs)
}

fn wrap(r: boxplain::Result<Explanation>) -> PyResult<PyExplanation> {
    r.map(|inner| PyExplanation { inner }).map_err(to_py)
}

#[pymethods]
impl Explainer {
    /// `model` is a fitted `Model` or any callable taking a dict of column
    /// lists and returning a list of floats.
    #[new]
    fn new(py: Python<'_>, model: &Bound<'_, PyAny>, data: &Dataset, label: String) -> PyResult<Self> {
        let predictor: Arc<dyn Predictor> = if let Ok(m) = model.cast::<Model>() {
            Arc::new(m.get().inner.clone())
        } else if model.is_callable() {
            Arc::new(CallablePredictor {
                func: model.clone().unbind(),
            })
        } else {
            return Err(PyTypeError::new_err("model must be a boxplain.Model or a callable"));
        };
        let (x, y) = (data.features.clone(), data.y.clone());
        let inner = py.detach(|| boxplain::explain(predictor, x, y, label)).map_err(to_py)?;
        Ok(Explainer { inner })
    }

    #[getter]
    fn label(&self) -> &str {
        self.inner.label()
    }

    fn predict(&self, py: Python<'_>, data: &Dataset) -> PyResult<Vec<f64>> {
        py.detach(|| self.inner.predict_batch(&data.features)).map_err(to_py)
    }

    fn performance(&self, py: Python<'_>) -> PyResult<PyExplanation> {
        wrap(py.detach(|| model_performance(&self.inner).map(Explanation::Performance)))
    }

    #[pyo3(signature = (variable, grid="quantile:21"))]
    fn pdp(&self, py: Python<'_>, variable: &str, grid: &str) -> PyResult<PyExplanation> {
        let grid: GridStrategy = parse(grid)?;
        wrap(py.detach(|| partial_dependence(&self.inner, variable, grid).map(Explanation::Profile)))
    }

    #[pyo3(signature = (variable, bins=20))]
    fn ale(&self, py: Python<'_>, variable: &str, bins: usize) -> PyResult<PyExplanation> {
        wrap(py.detach(|| accumulated_local_effects(&self.inner, variable, bins).map(Explanation::Profile)))
    }

    #[pyo3(signature = (variable, cut=None))]
    fn merge(&self, py: Python<'_>, variable: &str, cut: Option<usize>) -> PyResult<PyExplanation> {
        wrap(py.detach(|| factor_merge(&self.inner, variable, cut).map(Explanation::FactorMerge)))
    }

    #[pyo3(signature = (loss="rmse", repeats=10, seed=0, variables=None))]
    fn importance(
        &self,
        py: Python<'_>,
        loss: &str,
        repeats: usize,
        seed: u64,
        variables: Option<Vec<String>>,
    ) -> PyResult<PyExplanation> {
        let loss: LossKind = parse(loss)?;
        wrap(py.detach(|| {
            variable_importance(&self.inner, loss, repeats, seed, variables.as_deref()).map(Explanation::Importance)
        }))
    }

    #[pyo3(signature = (observation, variables=None, grid="quantile:21", normalized=false))]
    fn cp(
        &self,
        py: Python<'_>,
        observation: &Bound<'_, PyAny>,
        variables: Option<Vec<String>>,
        grid: &str,
        normalized: bool,
    ) -> PyResult<PyExplanation> {
        let obs = self::observation(&self.inner, observation)?;
        let grid: GridStrategy = parse(grid)?;
        wrap(py.detach(|| {
            let p = ceteris_paribus(&self.inner, &obs, variables.as_deref(), grid)?;
            let p = if normalized { normalize_cp(&p, &self.inner)? } else { p };
            Ok(Explanation::Cp(p))
        }))
    }

    #[pyo3(signature = (observation, direction="up"))]
    fn breakdown(&self, py: Python<'_>, observation: &Bound<'_, PyAny>, direction: &str) -> PyResult<PyExplanation> {
        let obs = self::observation(&self.inner, observation)?;
        let direction: Direction = parse(direction)?;
        wrap(py.detach(|| break_down(&self.inner, &obs, direction).map(Explanation::Breakdown)))
    }

    /// Exact Shapley values by subset enumeration (at most 8 features).
    fn shapley(&self, py: Python<'_>, observation: &Bound<'_, PyAny>) -> PyResult<BTreeMap<String, f64>> {
        let obs = self::observation(&self.inner, observation)?;
        py.detach(|| shapley_oracle(&self.inner, &obs)).map_err(to_py)
    }
}

/// Renders same-kind results as one SVG chart.
#[pyfunction]
#[pyo3(signature = (results, width=800, height=500, title=None, log_y=false))]
fn render_svg(results: Vec<PyExplanation>, width: u32, height: u32, title: Option<String>, log_y: bool) -> PyResult<String> {
    let inner: Vec<Explanation> = results.into_iter().map(|r| r.inner).collect();
    let options = RenderOptions {
        width,
        height,
        title,
        log_y,
    };
    Ok(render(&inner, &options).map_err(to_py)?.svg)
}

/// Canonical JSON array of several results.
#[pyfunction]
fn to_json(results: Vec<PyExplanation>) -> String {
    let inner: Vec<Explanation> = results.into_iter().map(|r| r.inner).collect();
    export_json_many(&inner)
}

#[pymodule]
#[pyo3(name = "boxplain")]
fn boxplain_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_class::<Explainer>()?;
    m.add_class::<PyExplanation>()?;
    m.add_function(wrap_pyfunction!(render_svg, m)?)?;
    m.add_function(wrap_pyfunction!(to_json, m)?)?;
    m.add("BoxplainError", py.get_type::<BoxplainError>())?;
    m.add("UsageError", py.get_type::<UsageError>())?;
    m.add("DataError", py.get_type::<DataError>())?;
    m.add("AdapterError", py.get_type::<AdapterError>())?;
    Ok(())
}

//! Model-agnostic explainers for predictive models that return a numeric score.
//!
//! A model is wrapped together with validation data into an [`Explainer`]
//! via [`explain`]; the explainer modules then only ever call its predict
//! function. Every result can be exported as canonical JSON and rendered to
//! SVG through [`viz`], alone or overlaid with results for other models.

pub mod adapters;
pub mod data;
pub mod error;
pub mod local_explainers;
pub mod model;
pub mod performance;
pub mod variable_importance;
pub mod variable_response;
pub mod viz;
pub mod cli;

pub use data::{ColumnKind, GridStrategy, Observation, TabularDataset, Value};
pub use error::{Error, Result};
pub use model::{explain, BuiltinModel, Explainer, Predictor};

/// Arithmetic mean, shifted by the first value so that a constant input
/// returns that constant exactly.
pub(crate) fn mean(values: &[f64]) -> f64 {
    let Some(&first) = values.first() else {
        return f64::NAN;
    };
    first + values.iter().map(|v| v - first).sum::<f64>() / values.len() as f64
}

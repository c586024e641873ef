//! Regression machinery: random forests, damped least squares and SMAPE.
//!
//! Everything here is generic over the floating-point scalar; the crate root
//! exposes `f64` aliases.

mod forest;
mod linear;
mod metrics;

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codecs::DataType;

pub use forest::{ForestHyper, ForestModel, Tree};
pub use linear::{LinearModel, RIDGE_LAMBDA};
pub use metrics::smape;

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + Serialize + DeserializeOwned + 'static
{
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).unwrap()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("need at least {needed} training rows, have {have}")]
    InsufficientData { needed: usize, have: usize },
    #[error("expected a {expected}-dimensional input, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("design matrix is rank-deficient")]
    DegenerateDesign,
    #[error("sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("invalid training data: {0}")]
    InvalidData(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Target {
    EncodedSize,
    MemScanNs,
    StorageScanNs,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::EncodedSize, Target::MemScanNs, Target::StorageScanNs];

    pub fn name(self) -> &'static str {
        match self {
            Target::EncodedSize => "size",
            Target::MemScanNs => "mem_ns",
            Target::StorageScanNs => "storage_ns",
        }
    }
}

/// Labeled design matrix for one (dtype, encoding, target) model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TrainingSet<T: Scalar> {
    pub dtype: DataType,
    pub target: Target,
    pub feature_layout_id: String,
    /// One name per feature column; names record where each input came from
    /// (e.g. `predicted_size` vs a measured quantity).
    pub feature_names: Vec<String>,
    pub features: Vec<Vec<T>>,
    pub labels: Vec<T>,
}

impl<T: Scalar> TrainingSet<T> {
    pub fn new(dtype: DataType, target: Target, feature_layout_id: impl Into<String>, feature_names: Vec<String>) -> Self {
        Self {
            dtype,
            target,
            feature_layout_id: feature_layout_id.into(),
            feature_names,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, x: Vec<T>, y: T) {
        self.features.push(x);
        self.labels.push(y);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(self.feature_names.len(), Vec::len)
    }

    /// Labels finite and ≥ 0, every row the same width.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.features.len() != self.labels.len() {
            return Err(ModelError::LengthMismatch(self.features.len(), self.labels.len()));
        }
        let d = self.feature_dim();
        if let Some(row) = self.features.iter().find(|r| r.len() != d) {
            return Err(ModelError::DimensionMismatch {
                expected: d,
                got: row.len(),
            });
        }
        if self.labels.iter().any(|y| !y.is_finite() || *y < T::zero()) {
            return Err(ModelError::InvalidData("labels must be finite and ≥ 0".into()));
        }
        if self.features.iter().flatten().any(|x| !x.is_finite()) {
            return Err(ModelError::InvalidData("features must be finite".into()));
        }
        Ok(())
    }

    pub fn map_labels(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            labels: self.labels.iter().map(|y| f(*y)).collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", bound = "")]
pub enum Model<T: Scalar> {
    Forest(ForestModel<T>),
    Linear(LinearModel<T>),
}

impl<T: Scalar> Model<T> {
    pub fn predict(&self, x: &[T]) -> Result<T, ModelError> {
        match self {
            Model::Forest(m) => m.predict(x),
            Model::Linear(m) => m.predict(x),
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Model::Forest(m) => m.feature_dim,
            Model::Linear(m) => m.feature_dim,
        }
    }
}

pub fn fit_forest<T: Scalar>(data: &TrainingSet<T>, hyper: &ForestHyper) -> Result<ForestModel<T>, ModelError> {
    ForestModel::fit(data, hyper)
}

pub fn fit_linear<T: Scalar>(data: &TrainingSet<T>) -> Result<LinearModel<T>, ModelError> {
    LinearModel::fit(data)
}

//! From-scratch random forest and RBF support vector classifiers, grid-search
//! tuning and model files.

mod forest;
mod persist;
mod svm;
mod tree;
mod tuning;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SampleTable;
use crate::label::Label;
use crate::scalar::Scalar;
use crate::spectra::{feature_vector, FeatureSet, FeatureVector, SpectraError};

pub use forest::{
    fit_rf, rf_permutation_importance, train_rf, Criterion, MaxFeatures, RfHyperParams, RfModel,
};
pub use persist::{load_model, load_rf, load_svm, save_model, save_rf, save_svm, SCHEMA_VERSION};
pub use svm::{dual_objective, fit_svm, kernel_matrix, smo, train_svm, DualSolution, Scaler, SvmHyperParams, SvmModel};
pub use tree::{Tree, TreeNode};
pub use tuning::{
    grid_search, grid_search_design, stratified_folds, CvRow, GridPoint, GridSpec, SelectionMetric, TuneResult, TuneTarget,
    TunedParams,
};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("training data holds a single class")]
    SingleClass,
    #[error("no usable features")]
    EmptyFeatures,
    #[error("feature row has {actual} values, expected {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("feature set {actual} does not match model feature set {expected}")]
    SpecMismatch { expected: FeatureSet, actual: FeatureSet },
    #[error("non-finite feature value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),
    #[error("optimizer did not converge within {iterations} iterations")]
    NotConverged { iterations: usize },
    #[error("model carries no out-of-bag records")]
    MissingOobRecords,
    #[error("class {label} has {count} samples, fewer than {folds} folds")]
    FoldTooSmall { label: Label, count: usize, folds: usize },
    #[error("model file is {found}, expected {expected}")]
    SchemaVersionMismatch { expected: String, found: String },
    #[error("corrupt model payload: {0}")]
    CorruptPayload(String),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Feature matrix with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Design<T> {
    pub rows: Vec<Vec<T>>,
    pub labels: Vec<Label>,
    pub spec: FeatureSet,
}

impl<T: Scalar> Design<T> {
    /// Checks row widths against `spec` and rejects non-finite values.
    pub fn new(rows: Vec<Vec<T>>, labels: Vec<Label>, spec: FeatureSet) -> Result<Self, ClassifierError> {
        if rows.len() != labels.len() {
            return Err(ClassifierError::LengthMismatch {
                expected: rows.len(),
                actual: labels.len(),
            });
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != spec.len() {
                return Err(ClassifierError::LengthMismatch {
                    expected: spec.len(),
                    actual: row.len(),
                });
            }
            if let Some(column) = row.iter().position(|v| !v.is_finite()) {
                return Err(ClassifierError::NonFinite { row: r, column });
            }
        }
        Ok(Self { rows, labels, spec })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.spec.len()
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|l| **l == label).count()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            spec: self.spec,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Design<U> {
        Design {
            rows: self
                .rows
                .iter()
                .map(|r| r.iter().map(|v| U::lit(v.as_f64())).collect())
                .collect(),
            labels: self.labels.clone(),
            spec: self.spec,
        }
    }

    pub(crate) fn require_both_classes(&self) -> Result<(), ClassifierError> {
        if Label::ALL.iter().any(|l| self.count(*l) == 0) {
            Err(ClassifierError::SingleClass)
        } else {
            Ok(())
        }
    }
}

impl Design<f64> {
    /// Feature rows of `table` in canonical `(site, date, row, col)` order.
    pub fn from_table(table: &SampleTable, spec: FeatureSet) -> Result<Self, ClassifierError> {
        let mut rows = Vec::with_capacity(table.len());
        let mut labels = Vec::with_capacity(table.len());
        for s in table.canonical() {
            rows.push(feature_vector(&s.spectrum, spec)?.values);
            labels.push(s.label);
        }
        Design::new(rows, labels, spec)
    }
}

/// `exp(-sigma * |a - b|^2)`. The `1 / (2 s^2)` width form is the same
/// kernel with `sigma = 1 / (2 s^2)`.
pub fn rbf_kernel<T: Scalar>(a: &[T], b: &[T], sigma: T) -> Result<T, ClassifierError> {
    if a.len() != b.len() {
        return Err(ClassifierError::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if !(sigma > T::zero()) {
        return Err(ClassifierError::InvalidHyperParams(format!("sigma must be > 0, got {sigma}")));
    }
    Ok(rbf_unchecked(a, b, sigma))
}

#[inline]
pub(crate) fn rbf_unchecked<T: Scalar>(a: &[T], b: &[T], sigma: T) -> T {
    let d2 = a
        .iter()
        .zip(b)
        .fold(T::zero(), |acc, (x, y)| acc + (*x - *y) * (*x - *y));
    (-sigma * d2).exp()
}

pub(crate) fn check_row<T>(row: &[T], n_features: usize) -> Result<(), ClassifierError> {
    if row.len() != n_features {
        return Err(ClassifierError::LengthMismatch {
            expected: n_features,
            actual: row.len(),
        });
    }
    Ok(())
}

pub(crate) fn check_spec(expected: FeatureSet, fv: &FeatureVector) -> Result<(), ClassifierError> {
    if fv.spec != expected {
        return Err(ClassifierError::SpecMismatch {
            expected,
            actual: fv.spec,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Svm,
    Rf,
}

impl Algo {
    pub const ALL: [Algo; 2] = [Algo::Svm, Algo::Rf];

    pub fn as_str(self) -> &'static str {
        match self {
            Algo::Svm => "svm",
            Algo::Rf => "rf",
        }
    }

    pub(crate) fn code(self) -> u64 {
        match self {
            Algo::Svm => 1,
            Algo::Rf => 2,
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algo {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "svm" => Ok(Algo::Svm),
            "rf" => Ok(Algo::Rf),
            _ => Err(format!("unknown algorithm {s:?}, expected svm or rf")),
        }
    }
}

/// A trained model of either kind, as loaded from a model file.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedClassifier {
    Rf(RfModel<f64>),
    Svm(SvmModel<f64>),
}

impl TrainedClassifier {
    pub fn feature_spec(&self) -> FeatureSet {
        match self {
            TrainedClassifier::Rf(m) => m.feature_spec,
            TrainedClassifier::Svm(m) => m.feature_spec,
        }
    }

    pub fn algo(&self) -> Algo {
        match self {
            TrainedClassifier::Rf(_) => Algo::Rf,
            TrainedClassifier::Svm(_) => Algo::Svm,
        }
    }

    pub fn predict(&self, fv: &FeatureVector) -> Result<Label, ClassifierError> {
        match self {
            TrainedClassifier::Rf(m) => m.predict(fv),
            TrainedClassifier::Svm(m) => m.predict(fv),
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<Label, ClassifierError> {
        match self {
            TrainedClassifier::Rf(m) => m.predict_row(row),
            TrainedClassifier::Svm(m) => m.predict_row(row),
        }
    }
}

impl From<RfModel<f64>> for TrainedClassifier {
    fn from(m: RfModel<f64>) -> Self {
        TrainedClassifier::Rf(m)
    }
}

impl From<SvmModel<f64>> for TrainedClassifier {
    fn from(m: SvmModel<f64>) -> Self {
        TrainedClassifier::Svm(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kernel_values() {
        let a = [0.3, -1.2, 4.0];
        assert_eq!(rbf_kernel(&a, &a, 0.5).unwrap(), 1.0);
        let k: f64 = rbf_kernel(&[0.0, 0.0], &[1.0, 0.0], 0.09).unwrap();
        assert!((k - 0.913_931_2).abs() < 1e-7);
        assert!(rbf_kernel(&[0.0], &[1.0, 0.0], 0.09).is_err());
        assert!(rbf_kernel(&[0.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn design_checks() {
        let ok = Design::new(vec![vec![0.0; 4]], vec![Label::Water], FeatureSet::Model3);
        assert!(ok.is_ok());
        let wide = Design::new(vec![vec![0.0; 5]], vec![Label::Water], FeatureSet::Model3);
        assert!(matches!(wide, Err(ClassifierError::LengthMismatch { .. })));
        let nan = Design::new(vec![vec![0.0, f64::NAN, 0.0, 0.0]], vec![Label::Water], FeatureSet::Model3);
        assert!(matches!(nan, Err(ClassifierError::NonFinite { row: 0, column: 1 })));
    }

    proptest! {
        #[test]
        fn prop_kernel_symmetric_bounded(
            a in prop::collection::vec(-5.0f64..5.0, 3),
            b in prop::collection::vec(-5.0f64..5.0, 3),
            s in 0.001f64..2.0,
        ) {
            let k = rbf_kernel(&a, &b, s).unwrap();
            prop_assert_eq!(k, rbf_kernel(&b, &a, s).unwrap());
            prop_assert!(k > 0.0 && k <= 1.0);
        }
    }
}

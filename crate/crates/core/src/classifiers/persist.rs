//! JSON model files. Every file opens with `schema_version`, `algo` and
//! `dtype`; loaders check all three before reading the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::forest::{RfHyperParams, RfModel};
use super::svm::{Scaler, SvmHyperParams, SvmModel};
use super::tree::Tree;
use super::{ClassifierError, TrainedClassifier};
use crate::scalar::Scalar;
use crate::spectra::FeatureSet;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct RfFile<T> {
    schema_version: u32,
    algo: String,
    dtype: String,
    feature_spec: FeatureSet,
    hyperparams: RfHyperParams,
    n_trees: usize,
    n_train: usize,
    trees: Vec<Tree<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    oob_records: Option<Vec<Vec<u32>>>,
    oob_error: Option<f64>,
    oob_curve: Vec<Option<f64>>,
    importances: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SvmFile<T> {
    schema_version: u32,
    algo: String,
    dtype: String,
    feature_spec: FeatureSet,
    hyperparams: SvmHyperParams,
    support_vectors: Vec<Vec<T>>,
    dual_coefs: Vec<T>,
    bias: T,
    sigma: T,
    scaler: Scaler<T>,
}

fn corrupt(msg: impl Into<String>) -> ClassifierError {
    ClassifierError::CorruptPayload(msg.into())
}

fn write_json<S: Serialize>(doc: &S, path: &Path) -> Result<(), ClassifierError> {
    let mut text = serde_json::to_string(doc).map_err(|e| corrupt(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|source| ClassifierError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json(path: &Path) -> Result<Value, ClassifierError> {
    let text = fs::read_to_string(path).map_err(|source| ClassifierError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))
}

fn header(doc: &Value) -> Result<(u64, String, String), ClassifierError> {
    let version = doc
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| corrupt("missing schema_version"))?;
    let text = |key: &str| {
        doc.get(key)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| corrupt(format!("missing {key}")))
    };
    Ok((version, text("algo")?, text("dtype")?))
}

fn check_header(doc: &Value, algo: &str, dtype: &str) -> Result<(), ClassifierError> {
    let (version, found_algo, found_dtype) = header(doc)?;
    if version != SCHEMA_VERSION as u64 || found_algo != algo || found_dtype != dtype {
        return Err(ClassifierError::SchemaVersionMismatch {
            expected: format!("{algo}/{dtype} v{SCHEMA_VERSION}"),
            found: format!("{found_algo}/{found_dtype} v{version}"),
        });
    }
    Ok(())
}

pub fn save_rf<T: Scalar>(model: &RfModel<T>, path: &Path) -> Result<(), ClassifierError> {
    let doc = RfFile {
        schema_version: SCHEMA_VERSION,
        algo: "rf".into(),
        dtype: T::DTYPE.into(),
        feature_spec: model.feature_spec,
        hyperparams: model.hyperparams.clone(),
        n_trees: model.trees.len(),
        n_train: model.n_train,
        trees: model.trees.clone(),
        oob_records: model.oob_records.clone(),
        oob_error: model.oob_error,
        oob_curve: model.oob_curve.clone(),
        importances: model.importances.clone(),
    };
    write_json(&doc, path)
}

fn rf_from_value<T: Scalar>(doc: Value) -> Result<RfModel<T>, ClassifierError> {
    check_header(&doc, "rf", T::DTYPE)?;
    let f: RfFile<T> = serde_json::from_value(doc).map_err(|e| corrupt(e.to_string()))?;
    let p = f.feature_spec.len();
    if f.n_trees != f.trees.len() || f.n_trees == 0 {
        return Err(corrupt(format!("n_trees {} but {} trees stored", f.n_trees, f.trees.len())));
    }
    if f.hyperparams.n_trees != f.n_trees {
        return Err(corrupt("hyperparams.n_trees disagrees with tree count"));
    }
    if f.oob_curve.len() != f.n_trees {
        return Err(corrupt("oob_curve length differs from tree count"));
    }
    if f.importances.len() != p {
        return Err(corrupt("importances length differs from feature count"));
    }
    if let Some(records) = &f.oob_records {
        if records.len() != f.n_trees || records.iter().flatten().any(|&i| i as usize >= f.n_train) {
            return Err(corrupt("out-of-bag records do not match the forest"));
        }
    }
    for (i, tree) in f.trees.iter().enumerate() {
        tree.validate(p).map_err(|e| corrupt(format!("tree {i}: {e}")))?;
    }
    Ok(RfModel {
        feature_spec: f.feature_spec,
        hyperparams: f.hyperparams,
        trees: f.trees,
        oob_records: f.oob_records,
        n_train: f.n_train,
        oob_error: f.oob_error,
        oob_curve: f.oob_curve,
        importances: f.importances,
    })
}

pub fn load_rf<T: Scalar>(path: &Path) -> Result<RfModel<T>, ClassifierError> {
    rf_from_value(read_json(path)?)
}

pub fn save_svm<T: Scalar>(model: &SvmModel<T>, path: &Path) -> Result<(), ClassifierError> {
    let doc = SvmFile {
        schema_version: SCHEMA_VERSION,
        algo: "svm".into(),
        dtype: T::DTYPE.into(),
        feature_spec: model.feature_spec,
        hyperparams: model.hyperparams.clone(),
        support_vectors: model.support_vectors.clone(),
        dual_coefs: model.dual_coefs.clone(),
        bias: model.bias,
        sigma: model.sigma,
        scaler: model.scaler.clone(),
    };
    write_json(&doc, path)
}

fn svm_from_value<T: Scalar>(doc: Value) -> Result<SvmModel<T>, ClassifierError> {
    check_header(&doc, "svm", T::DTYPE)?;
    let f: SvmFile<T> = serde_json::from_value(doc).map_err(|e| corrupt(e.to_string()))?;
    let p = f.feature_spec.len();
    let s = &f.scaler;
    if s.mean.len() != p || s.sd.len() != p {
        return Err(corrupt("scaler length differs from feature count"));
    }
    if s.retained.is_empty() || s.retained.iter().any(|&r| r >= p || !(s.sd[r] > T::zero())) {
        return Err(corrupt("scaler retains an invalid feature"));
    }
    if f.support_vectors.is_empty() || f.support_vectors.len() != f.dual_coefs.len() {
        return Err(corrupt("support vectors and dual coefficients disagree"));
    }
    if f.support_vectors.iter().any(|sv| sv.len() != s.retained.len()) {
        return Err(corrupt("support vector width differs from retained features"));
    }
    let bound = T::lit(f.hyperparams.c * (1.0 + 1e-9));
    if f.dual_coefs.iter().any(|c| !(c.abs() <= bound)) {
        return Err(corrupt("dual coefficient exceeds C"));
    }
    Ok(SvmModel {
        feature_spec: f.feature_spec,
        hyperparams: f.hyperparams,
        support_vectors: f.support_vectors,
        dual_coefs: f.dual_coefs,
        bias: f.bias,
        sigma: f.sigma,
        scaler: f.scaler,
    })
}

pub fn load_svm<T: Scalar>(path: &Path) -> Result<SvmModel<T>, ClassifierError> {
    svm_from_value(read_json(path)?)
}

pub fn save_model(model: &TrainedClassifier, path: &Path) -> Result<(), ClassifierError> {
    match model {
        TrainedClassifier::Rf(m) => save_rf(m, path),
        TrainedClassifier::Svm(m) => save_svm(m, path),
    }
}

/// Loads an `f64` model of either kind.
pub fn load_model(path: &Path) -> Result<TrainedClassifier, ClassifierError> {
    let doc = read_json(path)?;
    let (_, algo, _) = header(&doc)?;
    match algo.as_str() {
        "rf" => rf_from_value(doc).map(TrainedClassifier::Rf),
        "svm" => svm_from_value(doc).map(TrainedClassifier::Svm),
        other => Err(ClassifierError::SchemaVersionMismatch {
            expected: "rf or svm".into(),
            found: other.into(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::super::{fit_rf, fit_svm, Design};
    use super::*;
    use crate::label::Label;
    use crate::seed::stream_rng;
    use rand::Rng;

    fn design() -> Design<f64> {
        let mut rng = stream_rng(21, 0);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..60 {
            let label = if i % 2 == 0 { Label::Plastic } else { Label::Water };
            rows.push((0..4).map(|_| label.sign() * 0.5 + rng.random_range(-1.0..1.0)).collect());
            labels.push(label);
        }
        Design::new(rows, labels, FeatureSet::Model3).unwrap()
    }

    fn random_rows(n: usize) -> Vec<Vec<f64>> {
        let mut rng = stream_rng(99, 0);
        (0..n).map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
    }

    #[test]
    fn rf_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rf.json");
        let m = fit_rf(&design(), &RfHyperParams { n_trees: 15, ..Default::default() }).unwrap();
        save_rf(&m, &path).unwrap();
        let back: RfModel<f64> = load_rf(&path).unwrap();
        assert_eq!(back, m);
        for row in random_rows(1000) {
            assert_eq!(back.predict_row(&row).unwrap(), m.predict_row(&row).unwrap());
        }
        assert!(matches!(load_svm::<f64>(&path), Err(ClassifierError::SchemaVersionMismatch { .. })));
        assert!(matches!(load_rf::<f32>(&path), Err(ClassifierError::SchemaVersionMismatch { .. })));
        assert!(matches!(load_model(&path), Ok(TrainedClassifier::Rf(_))));
    }

    #[test]
    fn svm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("svm.json");
        let m = fit_svm(&design(), &SvmHyperParams::default()).unwrap();
        save_svm(&m, &path).unwrap();
        let back: SvmModel<f64> = load_svm(&path).unwrap();
        assert_eq!(back, m);
        for row in random_rows(1000) {
            assert_eq!(
                back.decision_function(&row).unwrap().to_bits(),
                m.decision_function(&row).unwrap().to_bits()
            );
        }
        assert!(matches!(load_rf::<f64>(&path), Err(ClassifierError::SchemaVersionMismatch { .. })));
    }

    #[test]
    fn f32_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("svm32.json");
        let m = fit_svm(&design().cast::<f32>(), &SvmHyperParams::default()).unwrap();
        save_svm(&m, &path).unwrap();
        assert_eq!(load_svm::<f32>(&path).unwrap(), m);
        let path = dir.path().join("rf32.json");
        let m = fit_rf(&design().cast::<f32>(), &RfHyperParams { n_trees: 5, ..Default::default() }).unwrap();
        save_rf(&m, &path).unwrap();
        assert_eq!(load_rf::<f32>(&path).unwrap(), m);
    }

    #[test]
    fn tampered_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rf.json");
        let m = fit_rf(&design(), &RfHyperParams { n_trees: 4, ..Default::default() }).unwrap();
        save_rf(&m, &path).unwrap();
        let mut doc: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        doc["n_trees"] = Value::from(7);
        fs::write(&path, doc.to_string()).unwrap();
        assert!(matches!(load_rf::<f64>(&path), Err(ClassifierError::CorruptPayload(_))));

        doc["n_trees"] = Value::from(4);
        doc["schema_version"] = Value::from(2);
        fs::write(&path, doc.to_string()).unwrap();
        assert!(matches!(load_rf::<f64>(&path), Err(ClassifierError::SchemaVersionMismatch { .. })));

        fs::write(&path, "{not json").unwrap();
        assert!(matches!(load_model(&path), Err(ClassifierError::CorruptPayload(_))));
        assert!(matches!(load_model(&dir.path().join("absent.json")), Err(ClassifierError::Io { .. })));
    }
}

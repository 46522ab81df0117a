//! Bagged Gini trees with out-of-bag error tracking and permutation
//! importance.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow, GrowParams, Tree};
use super::{check_row, check_spec, ClassifierError, Design};
use crate::dataset::SampleTable;
use crate::label::Label;
use crate::scalar::Scalar;
use crate::seed::{self, salt};
use crate::spectra::{FeatureSet, FeatureVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Gini,
}

/// Features drawn per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MaxFeaturesRepr", into = "MaxFeaturesRepr")]
pub enum MaxFeatures {
    /// `max(1, floor(sqrt(p)))`
    Sqrt,
    Count(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum MaxFeaturesRepr {
    Count(usize),
    Name(String),
}

impl TryFrom<MaxFeaturesRepr> for MaxFeatures {
    type Error = String;

    fn try_from(r: MaxFeaturesRepr) -> Result<Self, Self::Error> {
        match r {
            MaxFeaturesRepr::Count(n) => Ok(MaxFeatures::Count(n)),
            MaxFeaturesRepr::Name(s) if s == "sqrt" => Ok(MaxFeatures::Sqrt),
            MaxFeaturesRepr::Name(s) => Err(format!("unknown max_features {s:?}")),
        }
    }
}

impl From<MaxFeatures> for MaxFeaturesRepr {
    fn from(m: MaxFeatures) -> Self {
        match m {
            MaxFeatures::Sqrt => MaxFeaturesRepr::Name("sqrt".into()),
            MaxFeatures::Count(n) => MaxFeaturesRepr::Count(n),
        }
    }
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        match self {
            MaxFeatures::Sqrt => ((n_features as f64).sqrt().floor() as usize).max(1),
            MaxFeatures::Count(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfHyperParams {
    pub n_trees: usize,
    pub mtry: MaxFeatures,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_leaf_nodes: Option<usize>,
    pub criterion: Criterion,
    pub seed: u64,
}

impl RfHyperParams {
    /// 100 trees, sqrt features, depth 6, 8 leaves, min leaf 2, seed 0.
    pub fn final_model() -> Self {
        Self {
            n_trees: 100,
            mtry: MaxFeatures::Sqrt,
            max_depth: Some(6),
            min_samples_split: 2,
            min_samples_leaf: 2,
            max_leaf_nodes: Some(8),
            criterion: Criterion::Gini,
            seed: 0,
        }
    }

    /// 500 unrestricted trees; mtry is left to tuning.
    pub fn matrix_profile() -> Self {
        Self {
            n_trees: 500,
            mtry: MaxFeatures::Sqrt,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_leaf_nodes: None,
            criterion: Criterion::Gini,
            seed: 0,
        }
    }

    pub fn validate(&self, n_features: usize) -> Result<usize, ClassifierError> {
        let bad = |m: String| Err(ClassifierError::InvalidHyperParams(m));
        let mtry = self.mtry.resolve(n_features);
        if n_features == 0 {
            return Err(ClassifierError::EmptyFeatures);
        }
        if mtry == 0 || mtry > n_features {
            return bad(format!("mtry {mtry} outside 1..={n_features}"));
        }
        if self.n_trees == 0 {
            return bad("n_trees must be >= 1".into());
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be >= 1".into());
        }
        if self.min_samples_split < 2 {
            return bad("min_samples_split must be >= 2".into());
        }
        if self.max_depth == Some(0) {
            return bad("max_depth must be >= 1".into());
        }
        if self.max_leaf_nodes.is_some_and(|m| m < 2) {
            return bad("max_leaf_nodes must be >= 2".into());
        }
        Ok(mtry)
    }
}

impl Default for RfHyperParams {
    fn default() -> Self {
        Self::final_model()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfModel<T> {
    pub feature_spec: FeatureSet,
    pub hyperparams: RfHyperParams,
    pub trees: Vec<Tree<T>>,
    /// Per tree, the training rows (canonical order) absent from its bootstrap.
    pub oob_records: Option<Vec<Vec<u32>>>,
    pub n_train: usize,
    /// Misclassification rate of the out-of-bag vote over rows with at least
    /// one out-of-bag tree.
    pub oob_error: Option<f64>,
    /// Out-of-bag error after the first `t + 1` trees.
    pub oob_curve: Vec<Option<f64>>,
    /// Mean decrease in out-of-bag accuracy per feature.
    pub importances: Vec<f64>,
}

fn vote<T: Scalar>(trees: &[Tree<T>], row: &[T]) -> Label {
    let plastic = trees.iter().filter(|t| t.predict(row) == Label::Plastic).count();
    if 2 * plastic >= trees.len() {
        Label::Plastic
    } else {
        Label::Water
    }
}

impl<T: Scalar> RfModel<T> {
    pub fn n_features(&self) -> usize {
        self.feature_spec.len()
    }

    /// Majority vote of the trees; a tied vote is plastic.
    pub fn predict_row(&self, row: &[T]) -> Result<Label, ClassifierError> {
        check_row(row, self.n_features())?;
        Ok(vote(&self.trees, row))
    }

    pub fn predict(&self, fv: &FeatureVector) -> Result<Label, ClassifierError> {
        check_spec(self.feature_spec, fv)?;
        let row: Vec<T> = fv.values.iter().map(|v| T::lit(*v)).collect();
        self.predict_row(&row)
    }
}

fn oob_curve<T: Scalar>(design: &Design<T>, trees: &[Tree<T>], oob: &[Vec<u32>]) -> Vec<Option<f64>> {
    let mut votes = vec![[0u32; 2]; design.len()];
    let mut curve = Vec::with_capacity(trees.len());
    for (tree, rows) in trees.iter().zip(oob) {
        for &i in rows {
            let i = i as usize;
            votes[i][tree.predict(&design.rows[i]).index()] += 1;
        }
        let mut seen = 0usize;
        let mut wrong = 0usize;
        for (v, truth) in votes.iter().zip(&design.labels) {
            if v[0] + v[1] == 0 {
                continue;
            }
            seen += 1;
            let pred = if v[0] >= v[1] { Label::Plastic } else { Label::Water };
            if pred != *truth {
                wrong += 1;
            }
        }
        curve.push((seen > 0).then(|| wrong as f64 / seen as f64));
    }
    curve
}

fn accuracy_on<T: Scalar>(tree: &Tree<T>, rows: &[Vec<T>], labels: &[Label]) -> f64 {
    let hits = rows.iter().zip(labels).filter(|(r, l)| tree.predict(r) == **l).count();
    hits as f64 / rows.len() as f64
}

fn permutation_importance<T: Scalar>(
    design: &Design<T>,
    trees: &[Tree<T>],
    oob: &[Vec<u32>],
    model_seed: u64,
) -> Vec<f64> {
    let p = design.n_features();
    let base = seed::derive(&[model_seed, salt::IMPORTANCE]);
    let per_tree: Vec<Option<Vec<f64>>> = trees
        .par_iter()
        .zip(oob.par_iter())
        .enumerate()
        .map(|(t, (tree, rows))| {
            if rows.is_empty() {
                return None;
            }
            let mut rng = seed::stream_rng(base, t as u64);
            let mut x: Vec<Vec<T>> = rows.iter().map(|&i| design.rows[i as usize].clone()).collect();
            let y: Vec<Label> = rows.iter().map(|&i| design.labels[i as usize]).collect();
            let reference = accuracy_on(tree, &x, &y);
            let drops = (0..p)
                .map(|f| {
                    let original: Vec<T> = x.iter().map(|r| r[f]).collect();
                    let mut shuffled = original.clone();
                    shuffled.shuffle(&mut rng);
                    for (r, v) in x.iter_mut().zip(&shuffled) {
                        r[f] = *v;
                    }
                    let acc = accuracy_on(tree, &x, &y);
                    for (r, v) in x.iter_mut().zip(&original) {
                        r[f] = *v;
                    }
                    reference - acc
                })
                .collect();
            Some(drops)
        })
        .collect();
    let mut sum = vec![0.0; p];
    let mut used = 0usize;
    for drops in per_tree.into_iter().flatten() {
        used += 1;
        for (s, d) in sum.iter_mut().zip(drops) {
            *s += d;
        }
    }
    if used > 0 {
        sum.iter_mut().for_each(|s| *s /= used as f64);
    }
    sum
}

/// Fits a forest on `design`. Tree `t` draws its bootstrap and split
/// features from its own stream of the model seed, so the result does not
/// depend on the number of workers.
pub fn fit_rf<T: Scalar>(design: &Design<T>, hp: &RfHyperParams) -> Result<RfModel<T>, ClassifierError> {
    let mtry = hp.validate(design.n_features())?;
    design.require_both_classes()?;
    let n = design.len();
    let params = GrowParams {
        mtry,
        max_depth: hp.max_depth,
        min_samples_split: hp.min_samples_split,
        min_samples_leaf: hp.min_samples_leaf,
        max_leaf_nodes: hp.max_leaf_nodes,
    };
    let base = seed::derive(&[hp.seed, salt::BOOTSTRAP]);
    let grown: Vec<(Tree<T>, Vec<u32>)> = (0..hp.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::stream_rng(base, t as u64);
            let mut in_bag = vec![false; n];
            let draws: Vec<usize> = (0..n)
                .map(|_| {
                    let i = rng.random_range(0..n);
                    in_bag[i] = true;
                    i
                })
                .collect();
            let oob = (0..n as u32).filter(|&i| !in_bag[i as usize]).collect();
            (grow(design, &draws, &params, &mut rng), oob)
        })
        .collect();
    let (trees, oob): (Vec<_>, Vec<_>) = grown.into_iter().unzip();
    let oob_curve = oob_curve(design, &trees, &oob);
    let importances = permutation_importance(design, &trees, &oob, hp.seed);
    Ok(RfModel {
        feature_spec: design.spec,
        hyperparams: hp.clone(),
        trees,
        oob_error: *oob_curve.last().expect("n_trees >= 1"),
        oob_curve,
        oob_records: Some(oob),
        n_train: n,
        importances,
    })
}

pub fn train_rf(train: &SampleTable, spec: FeatureSet, hp: &RfHyperParams) -> Result<RfModel<f64>, ClassifierError> {
    fit_rf(&Design::from_table(train, spec)?, hp)
}

/// Recomputes the permutation importances from the training table the model
/// was fitted on.
pub fn rf_permutation_importance<T: Scalar>(
    model: &RfModel<T>,
    train: &SampleTable,
) -> Result<Vec<f64>, ClassifierError> {
    let oob = model.oob_records.as_ref().ok_or(ClassifierError::MissingOobRecords)?;
    let design: Design<T> = Design::from_table(train, model.feature_spec)?.cast();
    if design.len() != model.n_train {
        return Err(ClassifierError::LengthMismatch {
            expected: model.n_train,
            actual: design.len(),
        });
    }
    Ok(permutation_importance(&design, &model.trees, oob, model.hyperparams.seed))
}

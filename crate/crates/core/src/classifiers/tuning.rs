//! Exhaustive grid search scored by stratified k-fold accuracy.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forest::{fit_rf, MaxFeatures, RfHyperParams};
use super::svm::{fit_svm, SvmHyperParams};
use super::{ClassifierError, Design};
use crate::dataset::SampleTable;
use crate::label::Label;
use crate::scalar::Scalar;
use crate::seed::{self, salt};
use crate::spectra::FeatureSet;

const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMetric {
    #[default]
    Accuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// `None` tries every mtry from 1 to the feature count.
    pub rf_mtry_grid: Option<Vec<usize>>,
    pub svm_sigma_grid: Vec<f64>,
    pub svm_c_grid: Vec<f64>,
    pub cv_folds: usize,
    pub selection_metric: SelectionMetric,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            rf_mtry_grid: None,
            svm_sigma_grid: vec![0.01, 0.03, 0.05, 0.07, 0.09],
            svm_c_grid: vec![2.0, 4.0, 6.0, 8.0, 10.0],
            cv_folds: 5,
            selection_metric: SelectionMetric::Accuracy,
        }
    }
}

/// Base hyperparameters; the searched fields are overwritten per point.
#[derive(Debug, Clone, PartialEq)]
pub enum TuneTarget {
    Rf(RfHyperParams),
    Svm(SvmHyperParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algo", rename_all = "lowercase")]
pub enum GridPoint {
    Rf { mtry: usize },
    Svm { c: f64, sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algo", content = "hyperparams", rename_all = "lowercase")]
pub enum TunedParams {
    Rf(RfHyperParams),
    Svm(SvmHyperParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub point: GridPoint,
    pub fold_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: TunedParams,
    pub best_point: GridPoint,
    pub table: Vec<CvRow>,
}

/// Fold id per row. Each class is shuffled on its own stream and dealt
/// round-robin, so fold class counts differ by at most one.
pub fn stratified_folds(labels: &[Label], k: usize, seed: u64) -> Result<Vec<usize>, ClassifierError> {
    let base = seed::derive(&[seed, salt::FOLDS]);
    let mut fold = vec![0; labels.len()];
    for label in Label::ALL {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        if members.len() < k {
            return Err(ClassifierError::FoldTooSmall {
                label,
                count: members.len(),
                folds: k,
            });
        }
        members.shuffle(&mut seed::stream_rng(base, label.index() as u64));
        for (pos, i) in members.into_iter().enumerate() {
            fold[i] = pos % k;
        }
    }
    Ok(fold)
}

fn points(target: &TuneTarget, grid: &GridSpec, n_features: usize) -> Result<Vec<GridPoint>, ClassifierError> {
    let bad = |m: &str| Err(ClassifierError::InvalidHyperParams(m.into()));
    if grid.cv_folds < 2 {
        return bad("cv_folds must be >= 2");
    }
    let mut out = Vec::new();
    match target {
        TuneTarget::Rf(_) => {
            let mut mtry = grid.rf_mtry_grid.clone().unwrap_or_else(|| (1..=n_features).collect());
            mtry.sort_unstable();
            mtry.dedup();
            if mtry.is_empty() {
                return bad("mtry grid is empty");
            }
            if mtry.iter().any(|&m| m == 0 || m > n_features) {
                return bad("mtry grid value outside 1..=feature count");
            }
            out.extend(mtry.into_iter().map(|mtry| GridPoint::Rf { mtry }));
        }
        TuneTarget::Svm(_) => {
            let sorted = |v: &[f64]| {
                let mut v = v.to_vec();
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            };
            let (cs, sigmas) = (sorted(&grid.svm_c_grid), sorted(&grid.svm_sigma_grid));
            if cs.is_empty() || sigmas.is_empty() {
                return bad("svm grid is empty");
            }
            if cs.iter().chain(&sigmas).any(|v| !(*v > 0.0 && v.is_finite())) {
                return bad("svm grid values must be positive");
            }
            for &c in &cs {
                for &sigma in &sigmas {
                    out.push(GridPoint::Svm { c, sigma });
                }
            }
        }
    }
    Ok(out)
}

fn params_at(target: &TuneTarget, point: GridPoint, seed: u64) -> TunedParams {
    match (target, point) {
        (TuneTarget::Rf(base), GridPoint::Rf { mtry }) => TunedParams::Rf(RfHyperParams {
            mtry: MaxFeatures::Count(mtry),
            seed,
            ..base.clone()
        }),
        (TuneTarget::Svm(base), GridPoint::Svm { c, sigma }) => TunedParams::Svm(SvmHyperParams {
            c,
            sigma,
            seed,
            ..base.clone()
        }),
        _ => unreachable!("grid points are built from the target"),
    }
}

fn fold_accuracy<T: Scalar>(train: &Design<T>, test: &Design<T>, params: &TunedParams) -> Result<f64, ClassifierError> {
    let hits = match params {
        TunedParams::Rf(hp) => {
            let m = fit_rf(train, hp)?;
            test.rows
                .iter()
                .zip(&test.labels)
                .filter(|(r, l)| m.predict_row(r).ok() == Some(**l))
                .count()
        }
        TunedParams::Svm(hp) => {
            let m = fit_svm(train, hp)?;
            test.rows
                .iter()
                .zip(&test.labels)
                .filter(|(r, l)| m.predict_row(r).ok() == Some(**l))
                .count()
        }
    };
    Ok(hits as f64 / test.len() as f64)
}

/// Scores every grid point by mean fold accuracy. Ties within 1e-12 go to
/// the smaller C, then the smaller sigma (SVM) or the smaller mtry (RF).
/// Models of fold `k` are seeded from `(seed, k)` at every grid point.
pub fn grid_search_design<T: Scalar>(
    design: &Design<T>,
    target: &TuneTarget,
    grid: &GridSpec,
    seed: u64,
) -> Result<TuneResult, ClassifierError> {
    let points = points(target, grid, design.n_features())?;
    let k = grid.cv_folds;
    let fold = stratified_folds(&design.labels, k, seed)?;
    let splits: Vec<(Design<T>, Design<T>)> = (0..k)
        .map(|f| {
            let (tr, te): (Vec<usize>, Vec<usize>) = (0..design.len()).partition(|&i| fold[i] != f);
            (design.subset(&tr), design.subset(&te))
        })
        .collect();
    let fold_seeds: Vec<u64> = (0..k).map(|f| seed::derive(&[seed, salt::FOLD_MODEL, f as u64])).collect();

    let tasks: Vec<(usize, usize)> = (0..points.len()).flat_map(|p| (0..k).map(move |f| (p, f))).collect();
    let scores: Vec<f64> = tasks
        .par_iter()
        .map(|&(p, f)| {
            let params = params_at(target, points[p], fold_seeds[f]);
            fold_accuracy(&splits[f].0, &splits[f].1, &params)
        })
        .collect::<Result<_, _>>()?;

    let table: Vec<CvRow> = points
        .iter()
        .enumerate()
        .map(|(p, point)| {
            let fold_accuracy = scores[p * k..(p + 1) * k].to_vec();
            let mean_accuracy = fold_accuracy.iter().sum::<f64>() / k as f64;
            CvRow {
                point: *point,
                fold_accuracy,
                mean_accuracy,
            }
        })
        .collect();
    let mut best = 0;
    for (i, row) in table.iter().enumerate() {
        if row.mean_accuracy > table[best].mean_accuracy + TIE_EPS {
            best = i;
        }
    }
    let best_point = table[best].point;
    let base_seed = match target {
        TuneTarget::Rf(b) => b.seed,
        TuneTarget::Svm(b) => b.seed,
    };
    let best = params_at(target, best_point, base_seed);
    Ok(TuneResult { best, best_point, table })
}

pub fn grid_search(
    train: &SampleTable,
    spec: FeatureSet,
    target: &TuneTarget,
    grid: &GridSpec,
    seed: u64,
) -> Result<TuneResult, ClassifierError> {
    grid_search_design(&Design::from_table(train, spec)?, target, grid, seed)
}

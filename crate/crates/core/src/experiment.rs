//! The feature-set × test-case × algorithm evaluation matrix and whole-scene
//! classification.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::{
    fit_rf, fit_svm, grid_search_design, Algo, ClassifierError, Design, GridSpec, RfHyperParams, SvmHyperParams,
    TrainedClassifier, TuneTarget, TunedParams,
};
use crate::dataset::{build_test_case, split, DatasetError, SampleTable, TestCase};
use crate::label::Label;
use crate::metrics::{confusion, evaluate, ConfusionMatrix, MetricName, MetricValue, MetricsError, MetricsReport};
use crate::raster::{self, BandStack, RasterError};
use crate::scalar::Scalar;
use crate::seed;
use crate::spectra::{feature_vector, FeatureSet};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("label grid is {actual:?}, expected {expected:?}")]
    GridMismatch { expected: (usize, usize), actual: (usize, usize) },
    #[error("matrix CSV line {line}: {reason}")]
    MatrixParse { line: u64, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Per-pixel class of a classified scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelClass {
    Plastic,
    Water,
    Nodata,
}

impl PixelClass {
    /// Grey level in label-map PGM files.
    pub fn grey(self) -> u8 {
        match self {
            PixelClass::Nodata => 0,
            PixelClass::Water => 128,
            PixelClass::Plastic => 255,
        }
    }

    pub fn from_grey(v: u8) -> Option<Self> {
        match v {
            0 => Some(PixelClass::Nodata),
            128 => Some(PixelClass::Water),
            255 => Some(PixelClass::Plastic),
            _ => None,
        }
    }
}

impl From<Label> for PixelClass {
    fn from(l: Label) -> Self {
        match l {
            Label::Plastic => PixelClass::Plastic,
            Label::Water => PixelClass::Water,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelGrid {
    width: usize,
    height: usize,
    cells: Vec<PixelClass>,
}

impl LabelGrid {
    pub fn filled(width: usize, height: usize, class: PixelClass) -> Self {
        Self {
            width,
            height,
            cells: vec![class; width * height],
        }
    }

    pub fn from_cells(width: usize, height: usize, cells: Vec<PixelClass>) -> Result<Self, ExperimentError> {
        if cells.len() != width * height {
            return Err(ExperimentError::GridMismatch {
                expected: (width, height),
                actual: (cells.len(), 1),
            });
        }
        Ok(Self { width, height, cells })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> &[PixelClass] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> PixelClass {
        self.cells[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, class: PixelClass) {
        self.cells[row * self.width + col] = class;
    }

    pub fn count(&self, class: PixelClass) -> usize {
        self.cells.iter().filter(|c| **c == class).count()
    }

    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> LabelGrid {
        let mut cells = Vec::with_capacity(height * width);
        for r in row..row + height {
            cells.extend_from_slice(&self.cells[r * self.width + col..r * self.width + col + width]);
        }
        LabelGrid { width, height, cells }
    }

    /// Share of `truth`'s labelled cells that this grid reproduces.
    pub fn agreement(&self, truth: &LabelGrid) -> Result<f64, ExperimentError> {
        if (self.width, self.height) != (truth.width, truth.height) {
            return Err(ExperimentError::GridMismatch {
                expected: (truth.width, truth.height),
                actual: (self.width, self.height),
            });
        }
        let (mut hit, mut total) = (0usize, 0usize);
        for (a, t) in self.cells.iter().zip(&truth.cells) {
            if *t != PixelClass::Nodata {
                total += 1;
                hit += usize::from(a == t);
            }
        }
        Ok(if total == 0 { 1.0 } else { hit as f64 / total as f64 })
    }

    pub fn write_pgm(&self, path: &Path) -> Result<(), ExperimentError> {
        let pixels: Vec<u8> = self.cells.iter().map(|c| c.grey()).collect();
        Ok(raster::write_pgm(path, self.width, self.height, &pixels)?)
    }

    pub fn read_pgm(path: &Path) -> Result<Self, ExperimentError> {
        let (width, height, pixels) = raster::read_pgm(path)?;
        let cells = pixels
            .iter()
            .map(|v| {
                PixelClass::from_grey(*v).ok_or_else(|| RasterError::Pgm(format!("grey level {v} is not a label")))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { width, height, cells })
    }
}

/// Labels every pixel of `stack`. Pixels with nodata in a required band or a
/// degenerate index are `Nodata`.
pub fn classify_scene<T: Scalar>(stack: &BandStack<T>, model: &TrainedClassifier) -> Result<LabelGrid, ExperimentError> {
    let spec = model.feature_spec();
    let bands = spec.required_bands();
    stack.require(&bands)?;
    let (w, h) = (stack.width(), stack.height());
    let rows: Vec<Vec<PixelClass>> = (0..h)
        .into_par_iter()
        .map(|r| {
            (0..w)
                .map(|c| {
                    let Some(px) = stack.pixel(r * w + c, &bands) else {
                        return Ok(PixelClass::Nodata);
                    };
                    match feature_vector(&px, spec) {
                        Ok(fv) => Ok(model.predict(&fv)?.into()),
                        Err(_) => Ok(PixelClass::Nodata),
                    }
                })
                .collect::<Result<Vec<_>, ClassifierError>>()
        })
        .collect::<Result<_, _>>()?;
    LabelGrid::from_cells(w, h, rows.concat())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixConfig {
    pub grid: GridSpec,
    pub rf_base: RfHyperParams,
    pub svm_base: SvmHyperParams,
    pub train_fraction: f64,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            rf_base: RfHyperParams::matrix_profile(),
            svm_base: SvmHyperParams::default(),
            train_fraction: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub tuned: TunedParams,
    pub confusion: ConfusionMatrix,
    pub report: MetricsReport<f64>,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixCell {
    pub model: FeatureSet,
    pub test_case: TestCase,
    pub algo: Algo,
    pub seed: u64,
    /// The error message when any stage of the cell failed.
    pub outcome: Result<CellOutcome, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentMatrix {
    pub cells: Vec<MatrixCell>,
    pub master_seed: u64,
    pub provenance: String,
}

pub const FEATURE_SETS: [FeatureSet; 5] = [
    FeatureSet::Model1,
    FeatureSet::Model2,
    FeatureSet::Model3,
    FeatureSet::Model4,
    FeatureSet::Model5,
];

/// Seed of one matrix cell; cells never share random streams.
pub fn cell_seed(master_seed: u64, model: FeatureSet, tc: TestCase, algo: Algo) -> u64 {
    seed::derive(&[master_seed, model.number() as u64, tc.water_multiplier() as u64, algo.code()])
}

fn run_cell(
    plastic: &SampleTable,
    water: &SampleTable,
    config: &MatrixConfig,
    model: FeatureSet,
    tc: TestCase,
    algo: Algo,
    seed: u64,
) -> Result<CellOutcome, ExperimentError> {
    let table = build_test_case(plastic, water, tc, seed)?;
    let parts = split(&table, config.train_fraction, seed)?;
    let train = Design::from_table(&parts.train, model)?;
    let test = Design::from_table(&parts.test, model)?;
    let target = match algo {
        Algo::Svm => TuneTarget::Svm(SvmHyperParams { seed, ..config.svm_base.clone() }),
        Algo::Rf => TuneTarget::Rf(RfHyperParams { seed, ..config.rf_base.clone() }),
    };
    let tuned = grid_search_design(&train, &target, &config.grid, seed)?.best;
    let classifier: TrainedClassifier = match &tuned {
        TunedParams::Svm(hp) => fit_svm(&train, hp)?.into(),
        TunedParams::Rf(hp) => fit_rf(&train, hp)?.into(),
    };
    let predictions = test
        .rows
        .iter()
        .map(|r| classifier.predict_row(r))
        .collect::<Result<Vec<Label>, _>>()?;
    let cm = confusion(&predictions, &test.labels)?;
    Ok(CellOutcome {
        tuned,
        confusion: cm,
        report: evaluate(&cm)?,
        n_test: test.len(),
    })
}

/// Builds, splits, tunes, trains and scores every (feature set, test case,
/// algorithm) cell. A failing cell records its error and the others still run.
pub fn run_matrix(
    plastic_pool: &SampleTable,
    water_pool: &SampleTable,
    config: &MatrixConfig,
    master_seed: u64,
) -> Result<ExperimentMatrix, ExperimentError> {
    let required = TestCase::TC5.water_multiplier() * plastic_pool.len();
    if water_pool.len() < required {
        return Err(DatasetError::InsufficientWaterPool {
            required,
            available: water_pool.len(),
        }
        .into());
    }
    let combos: Vec<(FeatureSet, TestCase, Algo)> = FEATURE_SETS
        .iter()
        .flat_map(|m| TestCase::ALL.iter().flat_map(move |t| Algo::ALL.iter().map(move |a| (*m, *t, *a))))
        .collect();
    let cells = combos
        .into_par_iter()
        .map(|(model, test_case, algo)| {
            let seed = cell_seed(master_seed, model, test_case, algo);
            let outcome = run_cell(plastic_pool, water_pool, config, model, test_case, algo, seed).map_err(|e| {
                log::warn!("{model} {test_case} {algo} failed: {e}");
                e.to_string()
            });
            MatrixCell {
                model,
                test_case,
                algo,
                seed,
                outcome,
            }
        })
        .collect();
    Ok(ExperimentMatrix {
        cells,
        master_seed,
        provenance: format!(
            "plastic pool {} rows, water pool {} rows, master seed {master_seed}",
            plastic_pool.len(),
            water_pool.len()
        ),
    })
}

pub const MATRIX_COLUMNS: [&str; 6] = ["model", "test_case", "algo", "metric", "value", "error"];

/// Path of the text table written next to a matrix CSV.
pub fn table_path_for(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("table.txt")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the long-form metric CSV and, beside it, a text table with one
/// block per feature set.
pub fn export_matrix(matrix: &ExperimentMatrix, path: &Path) -> Result<(), ExperimentError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(MATRIX_COLUMNS)?;
    for cell in &matrix.cells {
        for metric in MetricName::ALL {
            let (value, error) = match &cell.outcome {
                Ok(o) => (o.report.get(metric).to_string(), String::new()),
                Err(e) => ("NA".to_string(), e.clone()),
            };
            w.write_record([
                cell.model.as_str(),
                cell.test_case.as_str(),
                cell.algo.as_str(),
                metric.as_str(),
                &value,
                &error,
            ])?;
        }
    }
    w.flush().map_err(io_err(path))?;
    let table = table_path_for(path);
    fs::write(&table, render_matrix(matrix)).map_err(io_err(&table))
}

/// Text table: one block per feature set, one column per (test case, algo).
pub fn render_matrix(matrix: &ExperimentMatrix) -> String {
    let mut out = String::new();
    for model in FEATURE_SETS {
        out.push_str(&format!("{model}\n{:<20}", ""));
        for tc in TestCase::ALL {
            for algo in Algo::ALL {
                out.push_str(&format!("{:>9}", format!("{tc} {}", algo.as_str().to_uppercase())));
            }
        }
        out.push('\n');
        for metric in MetricName::ALL {
            out.push_str(&format!("{:<20}", metric.title()));
            for tc in TestCase::ALL {
                for algo in Algo::ALL {
                    let cell = matrix
                        .cells
                        .iter()
                        .find(|c| c.model == model && c.test_case == tc && c.algo == algo);
                    let text = match cell.map(|c| &c.outcome) {
                        Some(Ok(o)) => match o.report.get(metric) {
                            MetricValue::Value(v) => format!("{v:.3}"),
                            MetricValue::NotAValue(_) => "NA".into(),
                        },
                        _ => "NA".into(),
                    };
                    out.push_str(&format!("{text:>9}"));
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub model: FeatureSet,
    pub test_case: TestCase,
    pub algo: Algo,
    pub metric: MetricName,
    pub value: Option<f64>,
    pub error: Option<String>,
}

pub fn read_matrix_csv(path: &Path) -> Result<Vec<MatrixRow>, ExperimentError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != MATRIX_COLUMNS {
        return Err(ExperimentError::MatrixParse {
            line: 1,
            reason: format!("unexpected header {header:?}"),
        });
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |reason: String| ExperimentError::MatrixParse { line, reason };
        let value = match &rec[4] {
            "NA" => None,
            v => Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
        };
        rows.push(MatrixRow {
            model: rec[0].parse().map_err(|e: crate::spectra::SpectraError| bad(e.to_string()))?,
            test_case: rec[1].parse().map_err(|e: DatasetError| bad(e.to_string()))?,
            algo: rec[2].parse().map_err(bad)?,
            metric: rec[3].parse().map_err(bad)?,
            value,
            error: (!rec[5].is_empty()).then(|| rec[5].to_string()),
        });
    }
    Ok(rows)
}

//! Floating marine debris detection from multispectral surface reflectance:
//! spectral indices, raster I/O, labelled sample tables, from-scratch Random
//! Forest and RBF-SVM classifiers, accuracy metrics, the feature-set ×
//! test-case evaluation matrix and a synthetic spectral-mixing generator.
//!
//! Numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below fix the common precisions.

pub mod classifiers;
pub mod dataset;
pub mod experiment;
pub mod label;
pub mod metrics;
pub mod raster;
pub mod scalar;
pub mod seed;
pub mod special;
pub mod spectra;
pub mod synth;

use thiserror::Error;

pub use label::Label;
pub use scalar::Scalar;

pub type GridF32 = raster::Grid<f32>;
pub type GridF64 = raster::Grid<f64>;
pub type BandStackF32 = raster::BandStack<f32>;
pub type BandStackF64 = raster::BandStack<f64>;
pub type DesignF32 = classifiers::Design<f32>;
pub type DesignF64 = classifiers::Design<f64>;
pub type RfModelF32 = classifiers::RfModel<f32>;
pub type RfModelF64 = classifiers::RfModel<f64>;
pub type SvmModelF32 = classifiers::SvmModel<f32>;
pub type SvmModelF64 = classifiers::SvmModel<f64>;
pub type MetricsReportF64 = metrics::MetricsReport<f64>;

/// Any error raised by the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Spectra(#[from] spectra::SpectraError),
    #[error(transparent)]
    Raster(#[from] raster::RasterError),
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error(transparent)]
    Classifier(#[from] classifiers::ClassifierError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Experiment(#[from] experiment::ExperimentError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
}

impl Error {
    /// True for failures of the numerics (degenerate index denominators,
    /// non-finite values, solver non-convergence) rather than of the inputs'
    /// shape or format.
    pub fn is_numeric(&self) -> bool {
        use classifiers::ClassifierError as C;
        fn classifier(e: &C) -> bool {
            matches!(
                e,
                C::NonFinite { .. } | C::NotConverged { .. } | C::Spectra(spectra::SpectraError::DegenerateDenominator { .. })
            )
        }
        match self {
            Error::Spectra(e) => matches!(
                e,
                spectra::SpectraError::DegenerateDenominator { .. } | spectra::SpectraError::NonFinite(_)
            ),
            Error::Classifier(e) => classifier(e),
            Error::Experiment(experiment::ExperimentError::Classifier(e)) => classifier(e),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

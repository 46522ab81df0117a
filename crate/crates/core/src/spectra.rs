//! Sentinel-2 band registry, the four plastic-detection spectral indices and
//! model feature vectors.
//!
//! Band roles used throughout: Red = B4, Red-Edge 2 = B6, NIR = B8,
//! SWIR-1 = B11.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Denominators with magnitude below this are treated as degenerate.
pub const DEGENERATE_EPS: f64 = 1e-12;

/// Red centre wavelength used in the FDI baseline (nm).
pub const FDI_RED_NM: f64 = 665.0;
/// NIR centre wavelength used in the FDI baseline (nm). Deliberately 833, not
/// B8's 842.
pub const FDI_NIR_NM: f64 = 833.0;
/// SWIR-1 centre wavelength used in the FDI baseline (nm).
pub const FDI_SWIR1_NM: f64 = 1610.0;
/// Multiplier applied to the wavelength ratio in the FDI baseline.
pub const FDI_BASELINE_SCALE: f64 = 10.0;

/// `(833 - 665) / (1610 - 665) * 10`, roughly 1.7777778.
pub fn fdi_baseline_factor() -> f64 {
    (FDI_NIR_NM - FDI_RED_NM) / (FDI_SWIR1_NM - FDI_RED_NM) * FDI_BASELINE_SCALE
}

/// Valid reflectance window; values outside only produce a warning.
pub const REFLECTANCE_WARN_RANGE: (f64, f64) = (-0.1, 1.5);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectraError {
    #[error("degenerate denominator {denominator:e} computing {index}")]
    DegenerateDenominator {
        index: IndexKind,
        denominator: f64,
    },
    #[error("non-finite input computing {0}")]
    NonFinite(&'static str),
    #[error("pixel is missing band {0}")]
    MissingBand(BandId),
    #[error("sigma must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("unknown band id {0:?}")]
    UnknownBand(String),
    #[error("unknown index {0:?}")]
    UnknownIndex(String),
    #[error("unknown feature set {0:?}")]
    UnknownFeatureSet(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BandId {
    B2,
    B3,
    B4,
    B5,
    B6,
    B7,
    B8,
    B8A,
    B11,
    B12,
}

/// Static description of one band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandDef {
    pub id: BandId,
    pub center_wavelength_nm: f64,
    pub native_resolution_m: f64,
}

const REGISTRY: [BandDef; 10] = [
    BandDef { id: BandId::B2, center_wavelength_nm: 490.0, native_resolution_m: 10.0 },
    BandDef { id: BandId::B3, center_wavelength_nm: 560.0, native_resolution_m: 10.0 },
    BandDef { id: BandId::B4, center_wavelength_nm: 665.0, native_resolution_m: 10.0 },
    BandDef { id: BandId::B5, center_wavelength_nm: 705.0, native_resolution_m: 20.0 },
    BandDef { id: BandId::B6, center_wavelength_nm: 740.0, native_resolution_m: 20.0 },
    BandDef { id: BandId::B7, center_wavelength_nm: 783.0, native_resolution_m: 20.0 },
    BandDef { id: BandId::B8, center_wavelength_nm: 842.0, native_resolution_m: 10.0 },
    BandDef { id: BandId::B8A, center_wavelength_nm: 865.0, native_resolution_m: 20.0 },
    BandDef { id: BandId::B11, center_wavelength_nm: 1610.0, native_resolution_m: 20.0 },
    BandDef { id: BandId::B12, center_wavelength_nm: 2190.0, native_resolution_m: 20.0 },
];

impl BandId {
    pub const ALL: [BandId; 10] = [
        BandId::B2,
        BandId::B3,
        BandId::B4,
        BandId::B5,
        BandId::B6,
        BandId::B7,
        BandId::B8,
        BandId::B8A,
        BandId::B11,
        BandId::B12,
    ];

    pub fn def(self) -> &'static BandDef {
        REGISTRY
            .iter()
            .find(|d| d.id == self)
            .expect("every BandId has a registry entry")
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BandId::B2 => "B2",
            BandId::B3 => "B3",
            BandId::B4 => "B4",
            BandId::B5 => "B5",
            BandId::B6 => "B6",
            BandId::B7 => "B7",
            BandId::B8 => "B8",
            BandId::B8A => "B8A",
            BandId::B11 => "B11",
            BandId::B12 => "B12",
        }
    }
}

/// Full band registry in band order.
pub fn band_registry() -> &'static [BandDef] {
    &REGISTRY
}

impl fmt::Display for BandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BandId {
    type Err = SpectraError;

    /// Accepts `B8`, `b8`, and zero-padded forms such as `B08`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        let digits = upper
            .strip_prefix('B')
            .ok_or_else(|| SpectraError::UnknownBand(s.to_string()))?;
        let digits = digits.trim_start_matches('0');
        let canonical = format!("B{digits}");
        BandId::ALL
            .into_iter()
            .find(|b| b.as_str() == canonical)
            .ok_or_else(|| SpectraError::UnknownBand(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IndexKind {
    #[serde(rename = "FDI")]
    Fdi,
    #[serde(rename = "PI")]
    Pi,
    #[serde(rename = "NDVI")]
    Ndvi,
    #[serde(rename = "kNDVI")]
    Kndvi,
}

impl IndexKind {
    pub const ALL: [IndexKind; 4] = [IndexKind::Fdi, IndexKind::Pi, IndexKind::Ndvi, IndexKind::Kndvi];

    pub fn as_str(self) -> &'static str {
        match self {
            IndexKind::Fdi => "FDI",
            IndexKind::Pi => "PI",
            IndexKind::Ndvi => "NDVI",
            IndexKind::Kndvi => "kNDVI",
        }
    }

    /// Bands the index reads, in (red, re2, nir, swir1) role order.
    pub fn required_bands(self) -> &'static [BandId] {
        match self {
            IndexKind::Fdi => &[BandId::B6, BandId::B8, BandId::B11],
            IndexKind::Pi | IndexKind::Ndvi | IndexKind::Kndvi => &[BandId::B4, BandId::B8],
        }
    }

    /// Evaluates the index on a spectrum.
    pub fn compute(self, pixel: &PixelSpectrum) -> Result<f64, SpectraError> {
        let get = |b: BandId| pixel.get(b).ok_or(SpectraError::MissingBand(b));
        match self {
            IndexKind::Fdi => fdi(get(BandId::B6)?, get(BandId::B8)?, get(BandId::B11)?),
            IndexKind::Pi => pi(get(BandId::B4)?, get(BandId::B8)?),
            IndexKind::Ndvi => ndvi(get(BandId::B4)?, get(BandId::B8)?),
            IndexKind::Kndvi => kndvi(get(BandId::B4)?, get(BandId::B8)?),
        }
    }
}

impl fmt::Display for IndexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IndexKind {
    type Err = SpectraError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "FDI" => Ok(IndexKind::Fdi),
            "PI" => Ok(IndexKind::Pi),
            "NDVI" => Ok(IndexKind::Ndvi),
            "KNDVI" => Ok(IndexKind::Kndvi),
            _ => Err(SpectraError::UnknownIndex(s.to_string())),
        }
    }
}

fn check_finite<T: Scalar>(values: &[T], what: &'static str) -> Result<(), SpectraError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SpectraError::NonFinite(what))
    }
}

fn nonzero_denominator<T: Scalar>(den: T, index: IndexKind) -> Result<T, SpectraError> {
    if den.abs() < T::lit(DEGENERATE_EPS) {
        Err(SpectraError::DegenerateDenominator {
            index,
            denominator: den.as_f64(),
        })
    } else {
        Ok(den)
    }
}

/// Normalised difference `(nir - red) / (nir + red)`.
pub fn ndvi<T: Scalar>(red: T, nir: T) -> Result<T, SpectraError> {
    check_finite(&[red, nir], "NDVI")?;
    let den = nonzero_denominator(nir + red, IndexKind::Ndvi)?;
    Ok((nir - red) / den)
}

/// Kernel NDVI, `tanh(ndvi^2)`.
pub fn kndvi<T: Scalar>(red: T, nir: T) -> Result<T, SpectraError> {
    let n = ndvi(red, nir).map_err(|e| retag(e, IndexKind::Kndvi))?;
    Ok((n * n).tanh())
}

/// Kernel NDVI with an explicit RBF width: `tanh(((nir - red) / (2 sigma))^2)`.
///
/// `sigma = (nir + red) / 2` reproduces [`kndvi`].
pub fn kndvi_sigma<T: Scalar>(red: T, nir: T, sigma: T) -> Result<T, SpectraError> {
    check_finite(&[red, nir], "kNDVI")?;
    if !(sigma.is_finite() && sigma > T::zero()) {
        return Err(SpectraError::InvalidSigma(sigma.as_f64()));
    }
    let z = (nir - red) / (T::lit(2.0) * sigma);
    Ok((z * z).tanh())
}

/// Plastic index `nir / (nir + red)`.
pub fn pi<T: Scalar>(red: T, nir: T) -> Result<T, SpectraError> {
    check_finite(&[red, nir], "PI")?;
    let den = nonzero_denominator(nir + red, IndexKind::Pi)?;
    Ok(nir / den)
}

/// Floating debris index: NIR minus a baseline interpolated between the
/// Red-Edge 2 and SWIR-1 reflectances.
pub fn fdi<T: Scalar>(re2: T, nir: T, swir1: T) -> Result<T, SpectraError> {
    check_finite(&[re2, nir, swir1], "FDI")?;
    let baseline = re2 + (swir1 - re2) * T::lit(fdi_baseline_factor());
    Ok(nir - baseline)
}

fn retag(e: SpectraError, index: IndexKind) -> SpectraError {
    match e {
        SpectraError::DegenerateDenominator { denominator, .. } => {
            SpectraError::DegenerateDenominator { index, denominator }
        }
        SpectraError::NonFinite(_) => SpectraError::NonFinite(index.as_str()),
        other => other,
    }
}

/// Surface reflectance per band for one pixel.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PixelSpectrum {
    reflectance: BTreeMap<BandId, f64>,
}

impl PixelSpectrum {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a spectrum, rejecting non-finite values.
    pub fn from_pairs<I>(pairs: I) -> Result<Self, SpectraError>
    where
        I: IntoIterator<Item = (BandId, f64)>,
    {
        let mut px = Self::new();
        for (b, v) in pairs {
            px.set(b, v)?;
        }
        Ok(px)
    }

    pub fn set(&mut self, band: BandId, value: f64) -> Result<(), SpectraError> {
        if !value.is_finite() {
            return Err(SpectraError::NonFinite("reflectance"));
        }
        self.reflectance.insert(band, value);
        Ok(())
    }

    pub fn get(&self, band: BandId) -> Option<f64> {
        self.reflectance.get(&band).copied()
    }

    pub fn bands(&self) -> impl Iterator<Item = (BandId, f64)> + '_ {
        self.reflectance.iter().map(|(b, v)| (*b, *v))
    }

    pub fn len(&self) -> usize {
        self.reflectance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reflectance.is_empty()
    }

    /// Bands whose value falls outside [`REFLECTANCE_WARN_RANGE`].
    pub fn out_of_range_bands(&self) -> Vec<BandId> {
        let (lo, hi) = REFLECTANCE_WARN_RANGE;
        self.bands()
            .filter(|(_, v)| *v < lo || *v > hi)
            .map(|(b, _)| b)
            .collect()
    }

    pub fn indices(&self) -> Result<SpectralIndexSet, SpectraError> {
        SpectralIndexSet::from_pixel(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralIndexSet {
    pub fdi: f64,
    pub pi: f64,
    pub ndvi: f64,
    pub kndvi: f64,
}

impl SpectralIndexSet {
    pub fn from_pixel(pixel: &PixelSpectrum) -> Result<Self, SpectraError> {
        Ok(Self {
            fdi: IndexKind::Fdi.compute(pixel)?,
            pi: IndexKind::Pi.compute(pixel)?,
            ndvi: IndexKind::Ndvi.compute(pixel)?,
            kndvi: IndexKind::Kndvi.compute(pixel)?,
        })
    }
}

/// One model input column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Feature {
    Band(BandId),
    Index(IndexKind),
}

impl Feature {
    pub fn name(self) -> &'static str {
        match self {
            Feature::Band(b) => b.as_str(),
            Feature::Index(i) => i.as_str(),
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The five feature sets of the experiment matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureSet {
    Model1,
    Model2,
    Model3,
    Model4,
    Model5,
}

use Feature::{Band as Bd, Index as Ix};

const MODEL1: [Feature; 6] = [
    Bd(BandId::B6),
    Bd(BandId::B8),
    Bd(BandId::B11),
    Ix(IndexKind::Fdi),
    Ix(IndexKind::Pi),
    Ix(IndexKind::Ndvi),
];
const MODEL2: [Feature; 6] = [
    Bd(BandId::B6),
    Bd(BandId::B8),
    Bd(BandId::B11),
    Ix(IndexKind::Fdi),
    Ix(IndexKind::Pi),
    Ix(IndexKind::Kndvi),
];
const MODEL3: [Feature; 4] = [Bd(BandId::B6), Bd(BandId::B8), Bd(BandId::B11), Ix(IndexKind::Fdi)];
const MODEL4: [Feature; 3] = [Ix(IndexKind::Fdi), Ix(IndexKind::Pi), Ix(IndexKind::Ndvi)];
const MODEL5: [Feature; 3] = [Ix(IndexKind::Fdi), Ix(IndexKind::Pi), Ix(IndexKind::Kndvi)];

impl FeatureSet {
    pub const ALL: [FeatureSet; 5] = [
        FeatureSet::Model1,
        FeatureSet::Model2,
        FeatureSet::Model3,
        FeatureSet::Model4,
        FeatureSet::Model5,
    ];

    pub fn members(self) -> &'static [Feature] {
        match self {
            FeatureSet::Model1 => &MODEL1,
            FeatureSet::Model2 => &MODEL2,
            FeatureSet::Model3 => &MODEL3,
            FeatureSet::Model4 => &MODEL4,
            FeatureSet::Model5 => &MODEL5,
        }
    }

    pub fn len(self) -> usize {
        self.members().len()
    }

    pub fn number(self) -> u8 {
        match self {
            FeatureSet::Model1 => 1,
            FeatureSet::Model2 => 2,
            FeatureSet::Model3 => 3,
            FeatureSet::Model4 => 4,
            FeatureSet::Model5 => 5,
        }
    }

    pub fn from_number(n: u8) -> Option<FeatureSet> {
        FeatureSet::ALL.into_iter().find(|f| f.number() == n)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSet::Model1 => "Model1",
            FeatureSet::Model2 => "Model2",
            FeatureSet::Model3 => "Model3",
            FeatureSet::Model4 => "Model4",
            FeatureSet::Model5 => "Model5",
        }
    }

    /// Bands a pixel must carry to build this feature set, in band order.
    pub fn required_bands(self) -> Vec<BandId> {
        let mut out: Vec<BandId> = self
            .members()
            .iter()
            .flat_map(|f| match f {
                Feature::Band(b) => std::slice::from_ref(b),
                Feature::Index(i) => i.required_bands(),
            })
            .copied()
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureSet {
    type Err = SpectraError;

    /// Accepts `Model3`, `model3` or `3`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        let digits = t.strip_prefix("model").unwrap_or(&t);
        digits
            .parse::<u8>()
            .ok()
            .and_then(FeatureSet::from_number)
            .ok_or_else(|| SpectraError::UnknownFeatureSet(s.to_string()))
    }
}

/// Ordered model input row produced from one pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub spec: FeatureSet,
}

/// Builds the feature row for `spec`. Band members copy reflectance, index
/// members are evaluated from B4/B6/B8/B11.
pub fn feature_vector(pixel: &PixelSpectrum, spec: FeatureSet) -> Result<FeatureVector, SpectraError> {
    for b in spec.required_bands() {
        if pixel.get(b).is_none() {
            return Err(SpectraError::MissingBand(b));
        }
    }
    let values = spec
        .members()
        .iter()
        .map(|f| match *f {
            Feature::Band(b) => pixel.get(b).ok_or(SpectraError::MissingBand(b)),
            Feature::Index(i) => i.compute(pixel),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FeatureVector { values, spec })
}

//! Synthetic samples and scenes from linear mixing of plastic and water
//! endmembers with Gaussian noise.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, FractionCategory, Sample, SampleTable};
use crate::experiment::{LabelGrid, PixelClass};
use crate::label::Label;
use crate::raster::{BandStack, Grid, RasterError};
use crate::scalar::Scalar;
use crate::seed::{self, salt};
use crate::spectra::{BandId, PixelSpectrum};

const DEFAULT_LIBRARY: &str = include_str!("../data/endmembers.json");

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("endmember {name}: {reason}")]
    InvalidEndmember { name: String, reason: String },
    #[error("endmember library has no {0}")]
    MissingEndmember(EndmemberKind),
    #[error("invalid synthesis config: {0}")]
    InvalidConfig(String),
    #[error("mixing fraction {0} outside [0, 1]")]
    InvalidFraction(f64),
    #[error("patch at ({row}, {col}) size {height}x{width} exceeds {scene_height}x{scene_width} scene")]
    PatchOutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
        scene_height: usize,
        scene_width: usize,
    },
    #[error("endmember library: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndmemberKind {
    PlasticBottle,
    PlasticBag,
    Fishnet,
    Water,
}

impl EndmemberKind {
    pub const PLASTICS: [EndmemberKind; 3] = [EndmemberKind::PlasticBottle, EndmemberKind::PlasticBag, EndmemberKind::Fishnet];

    pub fn as_str(self) -> &'static str {
        match self {
            EndmemberKind::PlasticBottle => "plastic_bottle",
            EndmemberKind::PlasticBag => "plastic_bag",
            EndmemberKind::Fishnet => "fishnet",
            EndmemberKind::Water => "water",
        }
    }
}

impl fmt::Display for EndmemberKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EndmemberKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [EndmemberKind::Water]
            .into_iter()
            .chain(EndmemberKind::PLASTICS)
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown endmember {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Endmember {
    pub name: EndmemberKind,
    pub reflectance: BTreeMap<BandId, f64>,
}

impl Endmember {
    fn get(&self, band: BandId) -> Option<f64> {
        self.reflectance.get(&band).copied()
    }

    /// Plastic must peak in NIR above red and red edge; water must absorb
    /// NIR below green.
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |reason: String| {
            Err(SynthError::InvalidEndmember {
                name: self.name.to_string(),
                reason,
            })
        };
        for b in [BandId::B3, BandId::B4, BandId::B6, BandId::B8, BandId::B11] {
            if self.get(b).is_none() {
                return fail(format!("missing band {}", b.as_str()));
            }
        }
        if let Some((b, v)) = self.reflectance.iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return fail(format!("band {} has reflectance {v}", b.as_str()));
        }
        let r = |b| self.get(b).expect("checked above");
        match self.name {
            EndmemberKind::Water => {
                if r(BandId::B8) >= r(BandId::B3) {
                    return fail("water B8 must be below B3".into());
                }
            }
            _ => {
                if r(BandId::B8) <= r(BandId::B4) || r(BandId::B8) <= r(BandId::B6) {
                    return fail("plastic B8 must exceed B4 and B6".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndmemberLibrary {
    #[serde(default)]
    pub note: String,
    pub endmembers: Vec<Endmember>,
}

impl EndmemberLibrary {
    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let lib: Self = serde_json::from_str(text)?;
        lib.validate()?;
        Ok(lib)
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// The shipped synthetic library.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_LIBRARY).expect("builtin endmember library is valid")
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        self.endmembers.iter().try_for_each(Endmember::validate)?;
        let water = self.get(EndmemberKind::Water)?;
        for e in &self.endmembers {
            if !e.reflectance.keys().eq(water.reflectance.keys()) {
                return Err(SynthError::InvalidEndmember {
                    name: e.name.to_string(),
                    reason: "band set differs from water".into(),
                });
            }
        }
        Ok(())
    }

    pub fn get(&self, kind: EndmemberKind) -> Result<&Endmember, SynthError> {
        self.endmembers
            .iter()
            .find(|e| e.name == kind)
            .ok_or(SynthError::MissingEndmember(kind))
    }
}

impl Default for EndmemberLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}

fn mix_with(
    plastic: &Endmember,
    water: &Endmember,
    fraction: f64,
    noise: Option<&Normal<f64>>,
    rng: &mut ChaCha8Rng,
) -> Result<PixelSpectrum, SynthError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(SynthError::InvalidFraction(fraction));
    }
    let mut px = PixelSpectrum::new();
    for (band, w) in &water.reflectance {
        let p = plastic.get(*band).ok_or_else(|| SynthError::InvalidEndmember {
            name: plastic.name.to_string(),
            reason: format!("missing band {}", band.as_str()),
        })?;
        let e = noise.map_or(0.0, |n| n.sample(rng));
        let v = (fraction * p + (1.0 - fraction) * w + e).max(0.0);
        px.set(*band, v).expect("mixed reflectance is finite");
    }
    Ok(px)
}

fn normal(noise_sd: f64) -> Result<Option<Normal<f64>>, SynthError> {
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(SynthError::InvalidConfig(format!("noise_sd {noise_sd} must be >= 0")));
    }
    Ok((noise_sd > 0.0).then(|| Normal::new(0.0, noise_sd).expect("valid sd")))
}

/// `fraction * plastic + (1 - fraction) * water + N(0, noise_sd)` per band,
/// clipped below at 0.
pub fn mix_pixel(
    plastic: &Endmember,
    water: &Endmember,
    fraction: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<PixelSpectrum, SynthError> {
    let noise = normal(noise_sd)?;
    let mut rng = seed::stream_rng(seed::derive(&[seed, salt::SYNTH]), 1);
    mix_with(plastic, water, fraction, noise.as_ref(), &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub endmembers: EndmemberLibrary,
    /// Plastic endmembers drawn uniformly per sample.
    pub plastic_kinds: Vec<EndmemberKind>,
    pub n_plastic: usize,
    pub n_water: usize,
    /// Probability of each coverage category, in category order.
    pub fraction_distribution: [f64; 5],
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// 54 plastic and 270 water samples, every plastic sample above 40%
    /// coverage, noise sd 0.005.
    fn default() -> Self {
        Self {
            endmembers: EndmemberLibrary::builtin(),
            plastic_kinds: EndmemberKind::PLASTICS.to_vec(),
            n_plastic: 54,
            n_water: 270,
            fraction_distribution: [0.0, 0.0, 0.0, 0.0, 1.0],
            noise_sd: 0.005,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        self.endmembers.validate()?;
        if self.plastic_kinds.is_empty() {
            return bad("plastic_kinds is empty".into());
        }
        for k in &self.plastic_kinds {
            if *k == EndmemberKind::Water {
                return bad("water is not a plastic kind".into());
            }
            self.endmembers.get(*k)?;
        }
        let d = &self.fraction_distribution;
        if d.iter().any(|p| !(*p >= 0.0)) || (d.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("fraction_distribution {d:?} must be non-negative and sum to 1"));
        }
        normal(self.noise_sd)?;
        Ok(())
    }
}

pub const SYNTH_SITE: &str = "synthetic";

fn synth_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2021, 1, 1).expect("valid date")
}

/// Labelled table with exactly `n_plastic` plastic and `n_water` water rows.
/// Plastic rows record their coverage percent; water rows are pure water.
pub fn gen_dataset(config: &SynthConfig) -> Result<SampleTable, SynthError> {
    config.validate()?;
    let noise = normal(config.noise_sd)?;
    let water = config.endmembers.get(EndmemberKind::Water)?;
    let categories = WeightedIndex::new(config.fraction_distribution).expect("validated distribution");
    let mut rng = seed::stream_rng(seed::derive(&[config.seed, salt::SYNTH]), 0);
    let mut rows = Vec::with_capacity(config.n_plastic + config.n_water);
    for i in 0..config.n_plastic + config.n_water {
        let (label, percent, kind) = if i < config.n_plastic {
            let (lo, hi) = FractionCategory::ALL[categories.sample(&mut rng)].bounds();
            let kind = config.plastic_kinds[rng.random_range(0..config.plastic_kinds.len())];
            (Label::Plastic, Some(rng.random_range(lo..hi)), kind)
        } else {
            (Label::Water, None, config.plastic_kinds[0])
        };
        let plastic = config.endmembers.get(kind)?;
        let fraction = percent.unwrap_or(0.0) / 100.0;
        rows.push(Sample {
            site: SYNTH_SITE.into(),
            date: synth_date(),
            row: i as i64,
            col: 0,
            lat: None,
            lon: None,
            spectrum: mix_with(plastic, water, fraction, noise.as_ref(), &mut rng)?,
            label,
            plastic_fraction: percent,
        });
    }
    Ok(SampleTable::new(rows)?)
}

/// Rectangle of plastic-water mixture placed on the water background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
    /// Plastic coverage ratio in `(0, 1]`.
    pub fraction: f64,
    /// Defaults to the first configured plastic kind.
    #[serde(default)]
    pub kind: Option<EndmemberKind>,
}

/// Water scene with mixed-plastic patches and its aligned truth grid. Later
/// patches overwrite earlier ones where they overlap. Each scene row draws
/// noise from its own stream.
pub fn gen_scene<T: Scalar>(
    config: &SynthConfig,
    width: usize,
    height: usize,
    patches: &[Patch],
) -> Result<(BandStack<T>, LabelGrid), SynthError> {
    config.validate()?;
    let noise = normal(config.noise_sd)?;
    let water = config.endmembers.get(EndmemberKind::Water)?;
    let mut cover: Vec<Option<(f64, EndmemberKind)>> = vec![None; width * height];
    for p in patches {
        if p.row + p.height > height || p.col + p.width > width {
            return Err(SynthError::PatchOutOfBounds {
                row: p.row,
                col: p.col,
                height: p.height,
                width: p.width,
                scene_height: height,
                scene_width: width,
            });
        }
        if !(p.fraction > 0.0 && p.fraction <= 1.0) {
            return Err(SynthError::InvalidFraction(p.fraction));
        }
        let kind = p.kind.unwrap_or(config.plastic_kinds[0]);
        config.endmembers.get(kind)?;
        for r in p.row..p.row + p.height {
            for c in p.col..p.col + p.width {
                cover[r * width + c] = Some((p.fraction, kind));
            }
        }
    }
    let bands: Vec<BandId> = water.reflectance.keys().copied().collect();
    let mut values: BTreeMap<BandId, Vec<T>> = bands.iter().map(|b| (*b, Vec::with_capacity(width * height))).collect();
    let mut truth = LabelGrid::filled(width, height, PixelClass::Water);
    let base = seed::derive(&[config.seed, salt::SCENE]);
    for r in 0..height {
        let mut rng = seed::stream_rng(base, r as u64);
        for c in 0..width {
            let (fraction, kind) = cover[r * width + c].unwrap_or((0.0, config.plastic_kinds[0]));
            let px = mix_with(config.endmembers.get(kind)?, water, fraction, noise.as_ref(), &mut rng)?;
            for (b, v) in px.bands() {
                values.get_mut(&b).expect("same band set").push(T::lit(v));
            }
            if fraction > 0.0 {
                truth.set(r, c, PixelClass::Plastic);
            }
        }
    }
    let grids = values
        .into_iter()
        .map(|(b, v)| Ok((b, Grid::from_values(width, height, v)?)))
        .collect::<Result<_, RasterError>>()?;
    let stack = BandStack::new(grids, 10.0, format!("synthetic scene, seed {}", config.seed))?;
    Ok((stack, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lib() -> EndmemberLibrary {
        EndmemberLibrary::builtin()
    }

    #[test]
    fn builtin_library_is_marked_and_valid() {
        let l = lib();
        assert!(l.note.contains("SYNTHETIC"));
        assert_eq!(l.endmembers.len(), 4);
        l.validate().unwrap();
    }

    #[test]
    fn shape_constraints_enforced() {
        let mut l = lib();
        let bottle = l.endmembers.iter_mut().find(|e| e.name == EndmemberKind::PlasticBottle).unwrap();
        bottle.reflectance.insert(BandId::B8, 0.05);
        assert!(matches!(l.validate(), Err(SynthError::InvalidEndmember { .. })));
        let mut l = lib();
        l.endmembers[0].reflectance.insert(BandId::B8, 0.5);
        assert!(l.validate().is_err());
        let mut l = lib();
        l.endmembers[1].reflectance.remove(&BandId::B2);
        assert!(l.validate().is_err());
    }

    #[test]
    fn mixing_endpoints_and_midpoint() {
        let l = lib();
        let (p, w) = (l.get(EndmemberKind::PlasticBottle).unwrap(), l.get(EndmemberKind::Water).unwrap());
        let px = mix_pixel(p, w, 0.0, 0.0, 1).unwrap();
        assert!(px.bands().all(|(b, v)| v == w.get(b).unwrap()));
        let px = mix_pixel(p, w, 1.0, 0.0, 1).unwrap();
        assert!(px.bands().all(|(b, v)| v == p.get(b).unwrap()));

        let mut p2 = p.clone();
        let mut w2 = w.clone();
        p2.reflectance.insert(BandId::B8, 0.5);
        w2.reflectance.insert(BandId::B8, 0.02);
        let px = mix_pixel(&p2, &w2, 0.5, 0.0, 1).unwrap();
        assert!((px.get(BandId::B8).unwrap() - 0.26).abs() < 1e-15);
        assert!(matches!(mix_pixel(p, w, 1.5, 0.0, 1), Err(SynthError::InvalidFraction(_))));
    }

    #[test]
    fn noise_is_clipped_and_seeded() {
        let l = lib();
        let (p, w) = (l.get(EndmemberKind::Fishnet).unwrap(), l.get(EndmemberKind::Water).unwrap());
        for s in 0..50 {
            let px = mix_pixel(p, w, 0.0, 0.05, s).unwrap();
            assert!(px.bands().all(|(_, v)| v >= 0.0));
        }
        assert_eq!(mix_pixel(p, w, 0.3, 0.01, 9).unwrap(), mix_pixel(p, w, 0.3, 0.01, 9).unwrap());
    }

    #[test]
    fn dataset_counts_and_determinism() {
        let cfg = SynthConfig::default();
        let t = gen_dataset(&cfg).unwrap();
        assert_eq!(t.len(), 324);
        assert_eq!(t.count(Label::Plastic), 54);
        assert_eq!(t.count(Label::Water), 270);
        assert_eq!(t, gen_dataset(&cfg).unwrap());
        assert_ne!(t, gen_dataset(&SynthConfig { seed: 1, ..cfg }).unwrap());
    }

    #[test]
    fn noiseless_plastic_nir_exceeds_water() {
        let cfg = SynthConfig {
            noise_sd: 0.0,
            ..SynthConfig::default()
        };
        let t = gen_dataset(&cfg).unwrap();
        let b8 = |l| t.filter_label(l).rows().iter().map(|s| s.spectrum.get(BandId::B8).unwrap()).collect::<Vec<_>>();
        let min_plastic = b8(Label::Plastic).into_iter().fold(f64::INFINITY, f64::min);
        let max_water = b8(Label::Water).into_iter().fold(0.0, f64::max);
        assert!(min_plastic > max_water);
    }

    #[test]
    fn fractions_respect_categories() {
        let cfg = SynthConfig {
            fraction_distribution: [0.2; 5],
            n_plastic: 300,
            n_water: 0,
            ..SynthConfig::default()
        };
        let t = gen_dataset(&cfg).unwrap();
        let mut seen = [0usize; 5];
        for s in t.rows() {
            let f = s.plastic_fraction.unwrap();
            assert!((0.0..=100.0).contains(&f));
            seen[FractionCategory::from_percent(f) as usize] += 1;
        }
        assert!(seen.iter().all(|n| *n > 20));
        let bad = SynthConfig {
            fraction_distribution: [0.5; 5],
            ..SynthConfig::default()
        };
        assert!(gen_dataset(&bad).is_err());
    }

    #[test]
    fn scenes() {
        let cfg = SynthConfig::default();
        let (stack, truth) = gen_scene::<f32>(&cfg, 12, 8, &[]).unwrap();
        assert_eq!((stack.width(), stack.height()), (12, 8));
        assert_eq!(truth.count(PixelClass::Water), 96);

        let patch = Patch { row: 2, col: 1, height: 3, width: 10, fraction: 0.8, kind: None };
        let (_, truth) = gen_scene::<f32>(&cfg, 12, 8, std::slice::from_ref(&patch)).unwrap();
        assert_eq!(truth.count(PixelClass::Plastic), 30);
        assert_eq!(truth.get(2, 1), PixelClass::Plastic);
        assert_eq!(truth.get(1, 1), PixelClass::Water);

        let outside = Patch { row: 6, ..patch };
        assert!(matches!(gen_scene::<f32>(&cfg, 12, 8, &[outside]), Err(SynthError::PatchOutOfBounds { .. })));
    }

    proptest! {
        #[test]
        fn prop_mixing_is_affine(f in 0.0f64..=1.0) {
            let l = lib();
            let (p, w) = (l.get(EndmemberKind::PlasticBag).unwrap(), l.get(EndmemberKind::Water).unwrap());
            let a = mix_pixel(p, w, f, 0.0, 0).unwrap();
            let b = mix_pixel(p, w, 1.0 - f, 0.0, 0).unwrap();
            let mid = mix_pixel(p, w, 0.5, 0.0, 0).unwrap();
            for (band, v) in mid.bands() {
                prop_assert!(((a.get(band).unwrap() + b.get(band).unwrap()) / 2.0 - v).abs() < 1e-12);
            }
        }
    }
}

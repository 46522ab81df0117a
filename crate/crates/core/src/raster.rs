//! Band stacks, masks, resampling, histogram stretch, index rasters and the
//! BSQF / PGM file formats.
//!
//! BSQF is a JSON header next to a raw payload of little-endian `f32`
//! samples, band-sequential and row-major. For a header at `scene.bsqf.json`
//! the payload lives at `scene.bsqf.raw`.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::spectra::{BandId, IndexKind, PixelSpectrum, SpectraError};

pub const BSQF_FORMAT: &str = "bsqf/1";

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("malformed header field `{field}`: {reason}")]
    MalformedHeader { field: String, reason: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("unknown band id {0:?}")]
    UnknownBand(String),
    #[error("stack is missing band {0}")]
    MissingBand(BandId),
    #[error("invalid percentiles: need 0 <= low < high <= 100, got {low} / {high}")]
    InvalidPercentiles { low: f64, high: f64 },
    #[error("malformed PGM: {0}")]
    Pgm(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RasterError + '_ {
    move |source| RasterError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Row-major raster with a per-cell nodata flag. Nodata cells hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    values: Vec<T>,
    nodata: Vec<bool>,
}

impl<T: Scalar> Grid<T> {
    /// Non-finite samples become nodata.
    pub fn from_values(width: usize, height: usize, values: Vec<T>) -> Result<Self, RasterError> {
        if values.len() != width * height {
            return Err(RasterError::DimensionMismatch(format!(
                "{} values for a {width}x{height} grid",
                values.len()
            )));
        }
        let nodata: Vec<bool> = values.iter().map(|v| !v.is_finite()).collect();
        let mut g = Self {
            width,
            height,
            values,
            nodata,
        };
        g.normalise_sentinels();
        Ok(g)
    }

    pub fn with_nodata(width: usize, height: usize, values: Vec<T>, nodata: Vec<bool>) -> Result<Self, RasterError> {
        if values.len() != width * height || nodata.len() != width * height {
            return Err(RasterError::DimensionMismatch(format!(
                "{} values / {} flags for a {width}x{height} grid",
                values.len(),
                nodata.len()
            )));
        }
        let nodata = values
            .iter()
            .zip(nodata)
            .map(|(v, nd)| nd || !v.is_finite())
            .collect();
        let mut g = Self {
            width,
            height,
            values,
            nodata,
        };
        g.normalise_sentinels();
        Ok(g)
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self::from_values(width, height, vec![value; width * height]).expect("size matches")
    }

    pub fn all_nodata(width: usize, height: usize) -> Self {
        Self::from_values(width, height, vec![T::nan(); width * height]).expect("size matches")
    }

    fn normalise_sentinels(&mut self) {
        for (v, nd) in self.values.iter_mut().zip(&self.nodata) {
            if *nd {
                *v = T::nan();
            }
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Raw samples including NaN sentinels.
    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn nodata_flags(&self) -> &[bool] {
        &self.nodata
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    /// Value at a flat index, `None` for nodata.
    #[inline]
    pub fn at(&self, i: usize) -> Option<T> {
        if self.nodata[i] {
            None
        } else {
            Some(self.values[i])
        }
    }

    pub fn get(&self, row: usize, col: usize) -> Option<T> {
        self.at(self.index(row, col))
    }

    pub fn is_nodata(&self, row: usize, col: usize) -> bool {
        self.nodata[self.index(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, value: Option<T>) {
        let i = self.index(row, col);
        match value {
            Some(v) if v.is_finite() => {
                self.values[i] = v;
                self.nodata[i] = false;
            }
            _ => {
                self.values[i] = T::nan();
                self.nodata[i] = true;
            }
        }
    }

    pub fn nodata_count(&self) -> usize {
        self.nodata.iter().filter(|&&n| n).count()
    }

    pub fn valid_values(&self) -> impl Iterator<Item = T> + '_ {
        (0..self.len()).filter_map(|i| self.at(i))
    }

    /// Sub-rectangle copy.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self, RasterError> {
        if row + height > self.height || col + width > self.width {
            return Err(RasterError::DimensionMismatch(format!(
                "crop {height}x{width} at ({row},{col}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut values = Vec::with_capacity(width * height);
        let mut nodata = Vec::with_capacity(width * height);
        for r in row..row + height {
            let start = self.index(r, col);
            values.extend_from_slice(&self.values[start..start + width]);
            nodata.extend_from_slice(&self.nodata[start..start + width]);
        }
        Self::with_nodata(width, height, values, nodata)
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        let values = (0..self.len())
            .map(|i| self.at(i).map(&f).unwrap_or_else(U::nan))
            .collect();
        Grid::with_nodata(self.width, self.height, values, self.nodata.clone()).expect("same shape")
    }

    pub fn cast<U: Scalar>(&self) -> Grid<U> {
        self.map(|v| U::lit(v.as_f64()))
    }
}

/// Land/cloud mask. `true` cells are masked out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskGrid {
    width: usize,
    height: usize,
    masked: Vec<bool>,
}

impl MaskGrid {
    pub fn new(width: usize, height: usize, masked: Vec<bool>) -> Result<Self, RasterError> {
        if masked.len() != width * height {
            return Err(RasterError::DimensionMismatch(format!(
                "{} mask cells for a {width}x{height} grid",
                masked.len()
            )));
        }
        Ok(Self { width, height, masked })
    }

    pub fn keep_all(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            masked: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let masked = (0..height)
            .flat_map(|r| (0..width).map(move |c| (r, c)))
            .map(|(r, c)| f(r, c))
            .collect();
        Self { width, height, masked }
    }

    /// Any non-zero PGM sample is masked.
    pub fn read_pgm(path: &Path) -> Result<Self, RasterError> {
        let (w, h, px) = read_pgm(path)?;
        Self::new(w, h, px.into_iter().map(|p| p != 0).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.masked[i]
    }
}

/// Co-registered reflectance bands sharing one grid geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct BandStack<T> {
    grids: BTreeMap<BandId, Grid<T>>,
    pub resolution_m: f64,
    pub provenance: String,
}

impl<T: Scalar> BandStack<T> {
    pub fn new(grids: BTreeMap<BandId, Grid<T>>, resolution_m: f64, provenance: impl Into<String>) -> Result<Self, RasterError> {
        let mut dims = grids.values().map(|g| (g.width, g.height));
        if let Some(first) = dims.next() {
            if let Some(bad) = dims.find(|d| *d != first) {
                return Err(RasterError::DimensionMismatch(format!(
                    "band grids disagree: {}x{} vs {}x{}",
                    first.0, first.1, bad.0, bad.1
                )));
            }
        }
        Ok(Self {
            grids,
            resolution_m,
            provenance: provenance.into(),
        })
    }

    pub fn width(&self) -> usize {
        self.grids.values().next().map_or(0, |g| g.width)
    }

    pub fn height(&self) -> usize {
        self.grids.values().next().map_or(0, |g| g.height)
    }

    pub fn band(&self, id: BandId) -> Option<&Grid<T>> {
        self.grids.get(&id)
    }

    pub fn bands(&self) -> impl Iterator<Item = (BandId, &Grid<T>)> {
        self.grids.iter().map(|(b, g)| (*b, g))
    }

    pub fn band_ids(&self) -> Vec<BandId> {
        self.grids.keys().copied().collect()
    }

    pub fn require(&self, bands: &[BandId]) -> Result<(), RasterError> {
        match bands.iter().find(|b| !self.grids.contains_key(b)) {
            Some(b) => Err(RasterError::MissingBand(*b)),
            None => Ok(()),
        }
    }

    /// Spectrum of the given bands at a flat index; `None` when any is nodata.
    pub fn pixel(&self, i: usize, bands: &[BandId]) -> Option<PixelSpectrum> {
        let mut px = PixelSpectrum::new();
        for b in bands {
            let v = self.grids.get(b)?.at(i)?;
            px.set(*b, v.as_f64()).ok()?;
        }
        Some(px)
    }

    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self, RasterError> {
        let grids = self
            .grids
            .iter()
            .map(|(b, g)| Ok((*b, g.crop(row, col, height, width)?)))
            .collect::<Result<_, RasterError>>()?;
        Self::new(grids, self.resolution_m, self.provenance.clone())
    }

    pub fn cast<U: Scalar>(&self) -> BandStack<U> {
        BandStack {
            grids: self.grids.iter().map(|(b, g)| (*b, g.cast())).collect(),
            resolution_m: self.resolution_m,
            provenance: self.provenance.clone(),
        }
    }
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn resample_nearest<T: Scalar>(grid: &Grid<T>, factor: NonZeroUsize) -> Grid<T> {
    let f = factor.get();
    let (w, h) = (grid.width * f, grid.height * f);
    let mut values = Vec::with_capacity(w * h);
    let mut nodata = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let i = grid.index(r / f, c / f);
            values.push(grid.values[i]);
            nodata.push(grid.nodata[i]);
        }
    }
    Grid::with_nodata(w, h, values, nodata).expect("shape computed above")
}

/// Masked cells become nodata in every band.
pub fn apply_mask<T: Scalar>(stack: &BandStack<T>, mask: &MaskGrid) -> Result<BandStack<T>, RasterError> {
    if mask.width != stack.width() || mask.height != stack.height() {
        return Err(RasterError::DimensionMismatch(format!(
            "mask {}x{} vs stack {}x{}",
            mask.width,
            mask.height,
            stack.width(),
            stack.height()
        )));
    }
    let grids = stack
        .grids
        .iter()
        .map(|(b, g)| {
            let nodata = g.nodata.iter().zip(&mask.masked).map(|(n, m)| *n || *m).collect();
            let g = Grid::with_nodata(g.width, g.height, g.values.clone(), nodata).expect("same shape");
            (*b, g)
        })
        .collect();
    BandStack::new(grids, stack.resolution_m, stack.provenance.clone())
}

/// Linear-interpolated percentile of sorted values, `p` in [0, 100].
fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stretched<T> {
    pub grid: Grid<T>,
    /// Set when the percentile range collapsed; valid cells are then all 0.
    pub degenerate: bool,
    pub low_value: f64,
    pub high_value: f64,
}

/// Maps the `p_low` percentile to 0 and `p_high` to 1, clipping to [0, 1].
/// Nodata cells are ignored for the percentiles and preserved.
pub fn histogram_stretch<T: Scalar>(grid: &Grid<T>, p_low: f64, p_high: f64) -> Result<Stretched<T>, RasterError> {
    if !(0.0..=100.0).contains(&p_low) || !(0.0..=100.0).contains(&p_high) || p_low >= p_high {
        return Err(RasterError::InvalidPercentiles { low: p_low, high: p_high });
    }
    let mut sorted: Vec<f64> = grid.valid_values().map(Scalar::as_f64).collect();
    sorted.sort_by(f64::total_cmp);
    if sorted.is_empty() {
        return Ok(Stretched {
            grid: grid.clone(),
            degenerate: true,
            low_value: f64::NAN,
            high_value: f64::NAN,
        });
    }
    let lo = percentile_sorted(&sorted, p_low);
    let hi = percentile_sorted(&sorted, p_high);
    let degenerate = hi - lo <= 0.0;
    if degenerate {
        log::warn!("histogram stretch: percentile range collapsed at {lo}");
    }
    let out = grid.map(|v| {
        if degenerate {
            T::zero()
        } else {
            T::lit(((v.as_f64() - lo) / (hi - lo)).clamp(0.0, 1.0))
        }
    });
    Ok(Stretched {
        grid: out,
        degenerate,
        low_value: lo,
        high_value: hi,
    })
}

/// Per-pixel index over a stack. Nodata inputs and degenerate denominators
/// give nodata cells.
pub fn compute_index_raster<T: Scalar>(stack: &BandStack<T>, index: IndexKind) -> Result<Grid<T>, RasterError> {
    let bands = index.required_bands();
    stack.require(bands)?;
    let n = stack.width() * stack.height();
    let values: Vec<T> = (0..n)
        .into_par_iter()
        .map(|i| {
            stack
                .pixel(i, bands)
                .and_then(|px| match index.compute(&px) {
                    Ok(v) => Some(T::lit(v)),
                    Err(SpectraError::DegenerateDenominator { .. }) | Err(SpectraError::NonFinite(_)) => None,
                    Err(e) => unreachable!("bands were checked: {e}"),
                })
                .unwrap_or_else(T::nan)
        })
        .collect();
    Grid::from_values(stack.width(), stack.height(), values)
}

// ---------------------------------------------------------------------------
// BSQF container

/// One band entry of a BSQF header. `center_wavelength_nm` is `None` for
/// index rasters.
#[derive(Debug, Clone, PartialEq)]
pub struct BsqfBand {
    pub id: String,
    pub center_wavelength_nm: Option<f64>,
    pub native_resolution_m: f64,
}

/// Format-level view of a BSQF file, without band-registry validation.
#[derive(Debug, Clone, PartialEq)]
pub struct BsqfRaster {
    pub width: usize,
    pub height: usize,
    /// `None` means NaN.
    pub nodata_value: Option<f32>,
    pub resolution_m: Option<f64>,
    pub provenance: String,
    pub bands: Vec<BsqfBand>,
    pub grids: Vec<Grid<f32>>,
}

/// Payload path belonging to a header path.
pub fn raw_path_for(header: &Path) -> PathBuf {
    let name = header
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem = name.strip_suffix(".json").unwrap_or(&name);
    header.with_file_name(format!("{stem}.raw"))
}

fn malformed(field: &str, reason: impl Into<String>) -> RasterError {
    RasterError::MalformedHeader {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn req<'a>(obj: &'a Map<String, Value>, field: &str) -> Result<&'a Value, RasterError> {
    obj.get(field).ok_or_else(|| malformed(field, "missing"))
}

fn req_str<'a>(obj: &'a Map<String, Value>, field: &str) -> Result<&'a str, RasterError> {
    req(obj, field)?.as_str().ok_or_else(|| malformed(field, "expected a string"))
}

fn req_usize(obj: &Map<String, Value>, field: &str) -> Result<usize, RasterError> {
    req(obj, field)?
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| malformed(field, "expected a non-negative integer"))
}

fn expect_str(obj: &Map<String, Value>, field: &str, want: &str) -> Result<(), RasterError> {
    let got = req_str(obj, field)?;
    if got == want {
        Ok(())
    } else {
        Err(malformed(field, format!("expected {want:?}, found {got:?}")))
    }
}

impl BsqfRaster {
    fn header_json(&self) -> Value {
        let bands: Vec<Value> = self
            .bands
            .iter()
            .map(|b| {
                json!({
                    "id": b.id,
                    "center_wavelength_nm": b.center_wavelength_nm,
                    "native_resolution_m": b.native_resolution_m,
                })
            })
            .collect();
        let mut obj = Map::new();
        obj.insert("format".into(), json!(BSQF_FORMAT));
        obj.insert("width".into(), json!(self.width));
        obj.insert("height".into(), json!(self.height));
        obj.insert("dtype".into(), json!("f32"));
        obj.insert("byte_order".into(), json!("little"));
        obj.insert("interleave".into(), json!("bsq"));
        obj.insert("nodata_value".into(), json!(self.nodata_value));
        obj.insert("bands".into(), Value::Array(bands));
        if let Some(r) = self.resolution_m {
            obj.insert("resolution_m".into(), json!(r));
        }
        obj.insert("provenance".into(), json!(self.provenance));
        Value::Object(obj)
    }

    fn payload(&self) -> Vec<u8> {
        let sentinel = self.nodata_value.unwrap_or(f32::NAN);
        let mut out = Vec::with_capacity(self.width * self.height * self.bands.len() * 4);
        for g in &self.grids {
            for i in 0..g.len() {
                let v = g.at(i).unwrap_or(sentinel);
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), RasterError> {
        if self.grids.len() != self.bands.len() {
            return Err(RasterError::DimensionMismatch(format!(
                "{} grids for {} header bands",
                self.grids.len(),
                self.bands.len()
            )));
        }
        if let Some(g) = self.grids.iter().find(|g| g.width != self.width || g.height != self.height) {
            return Err(RasterError::DimensionMismatch(format!(
                "grid {}x{} in a {}x{} raster",
                g.width, g.height, self.width, self.height
            )));
        }
        let mut header = serde_json::to_string_pretty(&self.header_json()).expect("header serialises");
        header.push('\n');
        fs::write(path, header).map_err(io_err(path))?;
        let raw = raw_path_for(path);
        fs::write(&raw, self.payload()).map_err(io_err(&raw))
    }

    pub fn read(path: &Path) -> Result<Self, RasterError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| malformed("<document>", e.to_string()))?;
        let obj = value.as_object().ok_or_else(|| malformed("<document>", "expected a JSON object"))?;
        expect_str(obj, "format", BSQF_FORMAT)?;
        expect_str(obj, "dtype", "f32")?;
        expect_str(obj, "byte_order", "little")?;
        expect_str(obj, "interleave", "bsq")?;
        let width = req_usize(obj, "width")?;
        let height = req_usize(obj, "height")?;
        let nodata_value = match req(obj, "nodata_value")? {
            Value::Null => None,
            v => Some(v.as_f64().ok_or_else(|| malformed("nodata_value", "expected a number or null"))? as f32),
        };
        let resolution_m = match obj.get("resolution_m") {
            None | Some(Value::Null) => None,
            Some(v) => Some(v.as_f64().ok_or_else(|| malformed("resolution_m", "expected a number"))?),
        };
        let provenance = req_str(obj, "provenance")?.to_string();
        let band_values = req(obj, "bands")?
            .as_array()
            .ok_or_else(|| malformed("bands", "expected an array"))?;
        let mut bands = Vec::with_capacity(band_values.len());
        for (k, b) in band_values.iter().enumerate() {
            let field = |f: &str| format!("bands[{k}].{f}");
            let bo = b.as_object().ok_or_else(|| malformed(&format!("bands[{k}]"), "expected an object"))?;
            let id = bo
                .get("id")
                .and_then(Value::as_str)
                .ok_or_else(|| malformed(&field("id"), "expected a string"))?
                .to_string();
            let center_wavelength_nm = match bo.get("center_wavelength_nm") {
                None | Some(Value::Null) => None,
                Some(v) => Some(v.as_f64().ok_or_else(|| malformed(&field("center_wavelength_nm"), "expected a number"))?),
            };
            let native_resolution_m = bo
                .get("native_resolution_m")
                .and_then(Value::as_f64)
                .ok_or_else(|| malformed(&field("native_resolution_m"), "expected a number"))?;
            bands.push(BsqfBand {
                id,
                center_wavelength_nm,
                native_resolution_m,
            });
        }

        let raw_path = raw_path_for(path);
        let raw = fs::read(&raw_path).map_err(io_err(&raw_path))?;
        let cells = width * height;
        let expected = cells * bands.len() * 4;
        if raw.len() < expected {
            return Err(RasterError::TruncatedPayload {
                expected,
                actual: raw.len(),
            });
        }
        if raw.len() > expected {
            return Err(RasterError::DimensionMismatch(format!(
                "payload has {} bytes, header implies {expected}",
                raw.len()
            )));
        }
        let grids = raw
            .chunks_exact((cells * 4).max(1))
            .take(bands.len())
            .map(|chunk| {
                let values: Vec<f32> = chunk
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect();
                let nodata = values
                    .iter()
                    .map(|v| v.is_nan() || nodata_value.is_some_and(|nd| *v == nd))
                    .collect();
                Grid::with_nodata(width, height, values, nodata)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let grids = if cells == 0 {
            vec![Grid::from_values(width, height, vec![])?; bands.len()]
        } else {
            grids
        };
        Ok(Self {
            width,
            height,
            nodata_value,
            resolution_m,
            provenance,
            bands,
            grids,
        })
    }
}

/// Writes a reflectance stack with a NaN nodata sentinel.
pub fn write_stack(stack: &BandStack<f32>, path: &Path) -> Result<(), RasterError> {
    write_stack_with_nodata(stack, path, None)
}

/// Writes a stack with an explicit nodata sentinel (`None` = NaN).
pub fn write_stack_with_nodata(stack: &BandStack<f32>, path: &Path, nodata_value: Option<f32>) -> Result<(), RasterError> {
    let raster = BsqfRaster {
        width: stack.width(),
        height: stack.height(),
        nodata_value,
        resolution_m: Some(stack.resolution_m),
        provenance: stack.provenance.clone(),
        bands: stack
            .grids
            .keys()
            .map(|b| BsqfBand {
                id: b.as_str().to_string(),
                center_wavelength_nm: Some(b.def().center_wavelength_nm),
                native_resolution_m: b.def().native_resolution_m,
            })
            .collect(),
        grids: stack.grids.values().cloned().collect(),
    };
    raster.write(path)
}

pub fn read_stack(path: &Path) -> Result<BandStack<f32>, RasterError> {
    let raster = BsqfRaster::read(path)?;
    let mut grids = BTreeMap::new();
    for (band, grid) in raster.bands.iter().zip(raster.grids) {
        let id: BandId = band.id.parse().map_err(|_| RasterError::UnknownBand(band.id.clone()))?;
        if grids.insert(id, grid).is_some() {
            return Err(malformed("bands", format!("duplicate band {id}")));
        }
    }
    let resolution_m = raster
        .resolution_m
        .or_else(|| raster.bands.first().map(|b| b.native_resolution_m))
        .unwrap_or(10.0);
    BandStack::new(grids, resolution_m, raster.provenance)
}

/// Single-band BSQF whose band id is the index name.
pub fn write_index_raster(grid: &Grid<f32>, index: IndexKind, resolution_m: f64, provenance: &str, path: &Path) -> Result<(), RasterError> {
    BsqfRaster {
        width: grid.width,
        height: grid.height,
        nodata_value: None,
        resolution_m: Some(resolution_m),
        provenance: provenance.to_string(),
        bands: vec![BsqfBand {
            id: index.as_str().to_string(),
            center_wavelength_nm: None,
            native_resolution_m: resolution_m,
        }],
        grids: vec![grid.clone()],
    }
    .write(path)
}

pub fn read_index_raster(path: &Path) -> Result<(IndexKind, Grid<f32>), RasterError> {
    let mut raster = BsqfRaster::read(path)?;
    if raster.bands.len() != 1 {
        return Err(malformed("bands", format!("index raster needs 1 band, found {}", raster.bands.len())));
    }
    let id = &raster.bands[0].id;
    let kind: IndexKind = id.parse().map_err(|_| RasterError::UnknownBand(id.clone()))?;
    Ok((kind, raster.grids.remove(0)))
}

// ---------------------------------------------------------------------------
// PGM (P5, maxval 255)

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<(), RasterError> {
    if pixels.len() != width * height {
        return Err(RasterError::DimensionMismatch(format!(
            "{} pixels for a {width}x{height} image",
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>), RasterError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut pos = 0;
    let mut token = || -> Result<String, RasterError> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(RasterError::Pgm("unexpected end of header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(RasterError::Pgm("magic is not P5".into()));
    }
    let num = |s: String| s.parse::<usize>().map_err(|_| RasterError::Pgm(format!("bad number {s:?}")));
    let width = num(token()?)?;
    let height = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval != 255 {
        return Err(RasterError::Pgm(format!("maxval {maxval} unsupported")));
    }
    let data = &bytes[pos + 1..];
    if data.len() != width * height {
        return Err(RasterError::Pgm(format!("expected {} pixels, found {}", width * height, data.len())));
    }
    Ok((width, height, data.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{fdi, kndvi, ndvi, pi};
    use proptest::prelude::*;

    fn nz(n: usize) -> NonZeroUsize {
        NonZeroUsize::new(n).unwrap()
    }

    fn stack4(b4: &[f32], b6: &[f32], b8: &[f32], b11: &[f32], w: usize, h: usize) -> BandStack<f32> {
        let mut grids = BTreeMap::new();
        grids.insert(BandId::B4, Grid::from_values(w, h, b4.to_vec()).unwrap());
        grids.insert(BandId::B6, Grid::from_values(w, h, b6.to_vec()).unwrap());
        grids.insert(BandId::B8, Grid::from_values(w, h, b8.to_vec()).unwrap());
        grids.insert(BandId::B11, Grid::from_values(w, h, b11.to_vec()).unwrap());
        BandStack::new(grids, 10.0, "test").unwrap()
    }

    #[test]
    fn grid_rejects_bad_length() {
        assert!(Grid::<f32>::from_values(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn stack_rejects_mixed_dims() {
        let mut grids = BTreeMap::new();
        grids.insert(BandId::B4, Grid::<f32>::filled(2, 2, 0.1));
        grids.insert(BandId::B8, Grid::<f32>::filled(3, 2, 0.1));
        assert!(matches!(BandStack::new(grids, 10.0, ""), Err(RasterError::DimensionMismatch(_))));
    }

    #[test]
    fn resample_examples() {
        let g = Grid::<f64>::from_values(2, 1, vec![1.0, 2.0]).unwrap();
        assert_eq!(resample_nearest(&g, nz(1)), g);
        let r = resample_nearest(&g, nz(2));
        assert_eq!((r.width(), r.height()), (4, 2));
        assert_eq!(r.values(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
        let one = Grid::<f32>::filled(1, 1, 0.7);
        let r1 = resample_nearest(&one, nz(2));
        assert!(r1.values().iter().all(|v| *v == 0.7));
    }

    #[test]
    fn resample_propagates_nodata() {
        let g = Grid::<f32>::from_values(2, 1, vec![f32::NAN, 2.0]).unwrap();
        let r = resample_nearest(&g, nz(3));
        assert_eq!(r.nodata_count(), 9);
    }

    #[test]
    fn mask_examples() {
        let s = stack4(&[0.1; 4], &[0.1; 4], &[0.2; 4], &[0.05; 4], 2, 2);
        assert_eq!(apply_mask(&s, &MaskGrid::keep_all(2, 2)).unwrap(), s);
        let all = apply_mask(&s, &MaskGrid::from_fn(2, 2, |_, _| true)).unwrap();
        assert!(all.bands().all(|(_, g)| g.nodata_count() == 4));
        let checker = apply_mask(&s, &MaskGrid::from_fn(2, 2, |r, c| (r + c) % 2 == 0)).unwrap();
        assert!(checker.bands().all(|(_, g)| g.nodata_count() == 2));
        assert!(apply_mask(&s, &MaskGrid::keep_all(3, 2)).is_err());
    }

    #[test]
    fn stretch_constant_is_degenerate() {
        let g = Grid::<f64>::filled(3, 3, 0.4);
        let s = histogram_stretch(&g, 2.0, 98.0).unwrap();
        assert!(s.degenerate);
        assert!(s.grid.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn stretch_percentile_arithmetic() {
        let g = Grid::<f64>::from_values(101, 1, (0..=100).map(f64::from).collect()).unwrap();
        let s = histogram_stretch(&g, 2.0, 98.0).unwrap();
        assert!(!s.degenerate);
        assert_eq!(s.grid.get(0, 2), Some(0.0));
        assert_eq!(s.grid.get(0, 98), Some(1.0));
        assert_eq!(s.grid.get(0, 100), Some(1.0));
        assert_eq!(s.grid.get(0, 0), Some(0.0));
        assert!((s.grid.get(0, 50).unwrap() - 48.0 / 96.0).abs() < 1e-15);
    }

    #[test]
    fn stretch_rejects_bad_percentiles() {
        let g = Grid::<f64>::filled(2, 2, 1.0);
        assert!(histogram_stretch(&g, 50.0, 50.0).is_err());
        assert!(histogram_stretch(&g, -1.0, 50.0).is_err());
        assert!(histogram_stretch(&g, 10.0, 101.0).is_err());
    }

    #[test]
    fn index_raster_matches_scalar_ops() {
        let s = stack4(&[0.2], &[0.05], &[0.6], &[0.02], 1, 1);
        let (r, re2, n, sw) = (0.2f32 as f64, 0.05f32 as f64, 0.6f32 as f64, 0.02f32 as f64);
        let expect = [
            (IndexKind::Fdi, fdi(re2, n, sw).unwrap()),
            (IndexKind::Pi, pi(r, n).unwrap()),
            (IndexKind::Ndvi, ndvi(r, n).unwrap()),
            (IndexKind::Kndvi, kndvi(r, n).unwrap()),
        ];
        for (k, v) in expect {
            let g = compute_index_raster(&s, k).unwrap();
            assert_eq!(g.get(0, 0), Some(v as f32), "{k}");
        }
    }

    #[test]
    fn index_raster_nodata_and_worked_cell() {
        let s = stack4(
            &[0.1, 0.1, 0.0, 0.1],
            &[0.05, 0.05, 0.05, 0.05],
            &[0.25, f32::NAN, 0.0, 0.3],
            &[0.02, 0.02, 0.02, 0.02],
            2,
            2,
        );
        let f = compute_index_raster(&s, IndexKind::Fdi).unwrap();
        assert!((f.get(0, 0).unwrap() as f64 - 0.2533333).abs() < 1e-6);
        assert!(f.is_nodata(0, 1));
        let n = compute_index_raster(&s, IndexKind::Ndvi).unwrap();
        assert!(n.is_nodata(1, 0), "degenerate denominator");
        let mut g = BTreeMap::new();
        g.insert(BandId::B4, Grid::<f32>::filled(1, 1, 0.1));
        let only_red = BandStack::new(g, 10.0, "").unwrap();
        assert!(matches!(
            compute_index_raster(&only_red, IndexKind::Ndvi),
            Err(RasterError::MissingBand(BandId::B8))
        ));
    }

    #[test]
    fn bsqf_round_trip_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let s = stack4(
            &[0.1, 0.2, 0.3, f32::NAN],
            &[0.05, -0.01, 0.05, 0.05],
            &[0.25, 0.3, 1.2, 0.0],
            &[0.02, 0.02, 0.02, 0.02],
            2,
            2,
        );
        let a = dir.path().join("a.bsqf.json");
        let b = dir.path().join("b.bsqf.json");
        write_stack(&s, &a).unwrap();
        write_stack(&s, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(fs::read(raw_path_for(&a)).unwrap(), fs::read(raw_path_for(&b)).unwrap());
        assert_eq!(fs::read(raw_path_for(&a)).unwrap().len(), 2 * 2 * 4 * 4);
        let back = read_stack(&a).unwrap();
        assert_eq!(back.width(), 2);
        for ((ba, ga), (bb, gb)) in s.bands().zip(back.bands()) {
            assert_eq!(ba, bb);
            let bits_a: Vec<u32> = ga.values().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = gb.values().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
            assert_eq!(ga.nodata_flags(), gb.nodata_flags());
        }
    }

    #[test]
    fn bsqf_minimal_and_payload_size() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.bsqf.json");
        let mut g = BTreeMap::new();
        g.insert(BandId::B8, Grid::<f32>::filled(1, 1, 0.25));
        write_stack(&BandStack::new(g, 10.0, "x").unwrap(), &p).unwrap();
        assert_eq!(read_stack(&p).unwrap().band(BandId::B8).unwrap().get(0, 0), Some(0.25));

        let q = dir.path().join("two.bsqf.json");
        let mut g = BTreeMap::new();
        g.insert(BandId::B4, Grid::<f32>::filled(2, 2, 0.1));
        g.insert(BandId::B8, Grid::<f32>::filled(2, 2, 0.2));
        write_stack(&BandStack::new(g, 10.0, "x").unwrap(), &q).unwrap();
        assert_eq!(fs::read(raw_path_for(&q)).unwrap().len(), 2 * 2 * 2 * 4);
    }

    #[test]
    fn bsqf_nodata_sentinel_serialised() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nd.bsqf.json");
        let mut g = BTreeMap::new();
        g.insert(BandId::B8, Grid::<f32>::from_values(2, 1, vec![0.5, f32::NAN]).unwrap());
        let s = BandStack::new(g, 10.0, "").unwrap();
        write_stack_with_nodata(&s, &p, Some(-9999.0)).unwrap();
        let raw = fs::read(raw_path_for(&p)).unwrap();
        assert_eq!(&raw[4..8], &(-9999.0f32).to_le_bytes());
        let back = read_stack(&p).unwrap();
        assert!(back.band(BandId::B8).unwrap().is_nodata(0, 1));

        write_stack(&s, &p).unwrap();
        let raw = fs::read(raw_path_for(&p)).unwrap();
        assert!(f32::from_le_bytes([raw[4], raw[5], raw[6], raw[7]]).is_nan());
    }

    #[test]
    fn bsqf_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bsqf.json");
        let mut g = BTreeMap::new();
        g.insert(BandId::B4, Grid::<f32>::filled(2, 2, 0.1));
        g.insert(BandId::B8, Grid::<f32>::filled(2, 2, 0.2));
        write_stack(&BandStack::new(g, 10.0, "").unwrap(), &p).unwrap();
        // payload sized for a single band
        fs::write(raw_path_for(&p), vec![0u8; 16]).unwrap();
        assert!(matches!(
            read_stack(&p),
            Err(RasterError::TruncatedPayload { expected: 32, actual: 16 })
        ));
    }

    #[test]
    fn bsqf_header_errors_name_fields() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.bsqf.json");
        let mut g = BTreeMap::new();
        g.insert(BandId::B4, Grid::<f32>::filled(1, 1, 0.1));
        write_stack(&BandStack::new(g, 10.0, "").unwrap(), &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();

        fs::write(&p, text.replace("\"f32\"", "\"u16\"")).unwrap();
        match read_stack(&p) {
            Err(RasterError::MalformedHeader { field, .. }) => assert_eq!(field, "dtype"),
            other => panic!("{other:?}"),
        }
        fs::write(&p, text.replace("\"width\": 1", "\"width\": -1")).unwrap();
        match read_stack(&p) {
            Err(RasterError::MalformedHeader { field, .. }) => assert_eq!(field, "width"),
            other => panic!("{other:?}"),
        }
        fs::write(&p, text.replace("\"B4\"", "\"B9\"")).unwrap();
        assert!(matches!(read_stack(&p), Err(RasterError::UnknownBand(b)) if b == "B9"));
        fs::write(&p, text.replace("\"width\": 1", "\"width\": 2")).unwrap();
        assert!(matches!(read_stack(&p), Err(RasterError::TruncatedPayload { .. })));
    }

    #[test]
    fn index_raster_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fdi.bsqf.json");
        let g = Grid::<f32>::from_values(2, 1, vec![0.25, f32::NAN]).unwrap();
        write_index_raster(&g, IndexKind::Fdi, 10.0, "t", &p).unwrap();
        let (k, back) = read_index_raster(&p).unwrap();
        assert_eq!(k, IndexKind::Fdi);
        assert_eq!(back.get(0, 0), Some(0.25));
        assert!(back.is_nodata(0, 1));
        assert!(matches!(read_stack(&p), Err(RasterError::UnknownBand(_))));
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        write_pgm(&p, 3, 1, &[0, 128, 255]).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P5\n3 1\n255\n"));
        assert_eq!(read_pgm(&p).unwrap(), (3, 1, vec![0, 128, 255]));
        assert!(write_pgm(&p, 2, 2, &[0]).is_err());
    }

    fn arb_stack() -> impl Strategy<Value = (BandStack<f32>, MaskGrid)> {
        (1usize..5, 1usize..5).prop_flat_map(|(w, h)| {
            let n = w * h;
            (
                prop::collection::vec(0.0f32..0.5, n * 4),
                prop::collection::vec(any::<bool>(), n),
            )
                .prop_map(move |(v, m)| {
                    let s = stack4(&v[..n], &v[n..2 * n], &v[2 * n..3 * n], &v[3 * n..], w, h);
                    (s, MaskGrid::new(w, h, m).unwrap())
                })
        })
    }

    proptest! {
        #[test]
        fn prop_index_commutes_with_mask((s, m) in arb_stack(), k in 0usize..4) {
            let kind = IndexKind::ALL[k];
            let a = compute_index_raster(&apply_mask(&s, &m).unwrap(), kind).unwrap();
            let b = compute_index_raster(&s, kind).unwrap();
            let nodata: Vec<bool> = b.nodata_flags().iter().enumerate().map(|(i, n)| *n || m.is_masked(i)).collect();
            let b = Grid::with_nodata(b.width(), b.height(), b.values().to_vec(), nodata).unwrap();
            let bits = |g: &Grid<f32>| g.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a), bits(&b));
        }

        #[test]
        fn prop_stretch_bounded(vals in prop::collection::vec(prop::option::of(-1.0f64..2.0), 1..60), lo in 0.0f64..50.0, span in 1.0f64..50.0) {
            let n = vals.len();
            let g = Grid::from_values(n, 1, vals.iter().map(|v| v.unwrap_or(f64::NAN)).collect()).unwrap();
            let s = histogram_stretch(&g, lo, lo + span).unwrap();
            prop_assert_eq!(s.grid.nodata_count(), g.nodata_count());
            prop_assert!(s.grid.valid_values().all(|v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn prop_stretch_monotone(mut vals in prop::collection::vec(-1.0f64..2.0, 2..60)) {
            vals.sort_by(f64::total_cmp);
            let g = Grid::from_values(vals.len(), 1, vals).unwrap();
            let s = histogram_stretch(&g, 2.0, 98.0).unwrap();
            let out: Vec<f64> = s.grid.valid_values().collect();
            prop_assert!(out.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn prop_resample_keeps_distinct_values(vals in prop::collection::vec(0u8..6, 1..20), f in 1usize..4) {
            let g = Grid::from_values(vals.len(), 1, vals.iter().map(|v| *v as f64).collect()).unwrap();
            let r = resample_nearest(&g, nz(f));
            let set = |g: &Grid<f64>| {
                let mut v: Vec<u64> = g.valid_values().map(f64::to_bits).collect();
                v.sort();
                v.dedup();
                v
            };
            prop_assert_eq!(set(&g), set(&r));
        }
    }
}

//! Labelled pixel samples: CSV I/O, test-case construction, stratified
//! splitting and spectral profiles by plastic-fraction category.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::Label;
use crate::seed::{self, salt};
use crate::spectra::{BandId, PixelSpectrum};

pub const SCHEMA_VERSION: u32 = 1;

/// Sample CSV columns, in order.
pub const CSV_COLUMNS: [&str; 12] = [
    "site",
    "date",
    "row",
    "col",
    "lat",
    "lon",
    "B04",
    "B06",
    "B08",
    "B11",
    "label",
    "plastic_fraction",
];

/// Bands carried by sample rows.
pub const SAMPLE_BANDS: [BandId; 4] = [BandId::B4, BandId::B6, BandId::B8, BandId::B11];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("sample file is missing columns: {}", .0.join(", "))]
    SchemaMismatch(Vec<String>),
    #[error("line {line}: bad label {value:?}")]
    BadLabel { line: u64, value: String },
    #[error("line {line}: column {column} is not a number: {value:?}")]
    NonNumeric { line: u64, column: String, value: String },
    #[error("line {line}: bad date {value:?} (expected YYYY-MM-DD)")]
    BadDate { line: u64, value: String },
    #[error("line {line}: {reason}")]
    BadFraction { line: u64, reason: String },
    #[error("duplicate sample key (site={site}, date={date}, row={row}, col={col})")]
    DuplicateKey {
        site: String,
        date: NaiveDate,
        row: i64,
        col: i64,
    },
    #[error("insufficient water pool: need {required}, have {available}")]
    InsufficientWaterPool { required: usize, available: usize },
    #[error("pool for {expected} contains a {found} sample")]
    WrongClassInPool { expected: Label, found: Label },
    #[error("class {label} has {count} samples, need at least {needed}")]
    ClassTooSmall { label: Label, count: usize, needed: usize },
    #[error("train fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("plastic sample {index} has no plastic_fraction")]
    MissingFraction { index: usize },
    #[error("unknown test case {0:?}")]
    UnknownTestCase(String),
    #[error("CSV error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One labelled pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub site: String,
    pub date: NaiveDate,
    pub row: i64,
    pub col: i64,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
    pub spectrum: PixelSpectrum,
    pub label: Label,
    /// Percent of the pixel footprint covered by plastic; plastic rows only.
    pub plastic_fraction: Option<f64>,
}

pub type SampleKey<'a> = (&'a str, NaiveDate, i64, i64);

impl Sample {
    pub fn key(&self) -> SampleKey<'_> {
        (&self.site, self.date, self.row, self.col)
    }
}

/// Ordered sample rows with unique `(site, date, row, col)` keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTable {
    rows: Vec<Sample>,
    pub schema_version: u32,
}

impl SampleTable {
    pub fn new(rows: Vec<Sample>) -> Result<Self, DatasetError> {
        let mut seen = BTreeSet::new();
        for s in &rows {
            if !seen.insert(s.key()) {
                return Err(DatasetError::DuplicateKey {
                    site: s.site.clone(),
                    date: s.date,
                    row: s.row,
                    col: s.col,
                });
            }
        }
        Ok(Self {
            rows,
            schema_version: SCHEMA_VERSION,
        })
    }

    pub fn empty() -> Self {
        Self {
            rows: Vec::new(),
            schema_version: SCHEMA_VERSION,
        }
    }

    pub fn rows(&self) -> &[Sample] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.rows.iter().filter(|s| s.label == label).count()
    }

    /// Rows of one class, as a new table.
    pub fn filter_label(&self, label: Label) -> SampleTable {
        self.filter(|s| s.label == label)
    }

    pub fn filter(&self, pred: impl Fn(&Sample) -> bool) -> SampleTable {
        SampleTable {
            rows: self.rows.iter().filter(|s| pred(s)).cloned().collect(),
            schema_version: self.schema_version,
        }
    }

    /// Rows sorted by `(site, date, row, col)`. All seeded operations start
    /// from this order so results do not depend on file row order.
    pub fn canonical(&self) -> Vec<&Sample> {
        let mut v: Vec<&Sample> = self.rows.iter().collect();
        v.sort_by(|a, b| a.key().cmp(&b.key()));
        v
    }

    pub fn canonical_table(&self) -> SampleTable {
        SampleTable {
            rows: self.canonical().into_iter().cloned().collect(),
            schema_version: self.schema_version,
        }
    }

    /// Fails unless both classes have at least `needed` rows.
    pub fn require_classes(&self, needed: usize) -> Result<(), DatasetError> {
        for label in Label::ALL {
            let count = self.count(label);
            if count < needed {
                return Err(DatasetError::ClassTooSmall { label, count, needed });
            }
        }
        Ok(())
    }
}

fn parse_num(line: u64, column: &str, raw: &str) -> Result<f64, DatasetError> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| DatasetError::NonNumeric {
            line,
            column: column.to_string(),
            value: raw.to_string(),
        })
}

fn parse_opt(line: u64, column: &str, raw: &str) -> Result<Option<f64>, DatasetError> {
    if raw.trim().is_empty() {
        Ok(None)
    } else {
        parse_num(line, column, raw).map(Some)
    }
}

fn parse_int(line: u64, column: &str, raw: &str) -> Result<i64, DatasetError> {
    raw.trim().parse::<i64>().map_err(|_| DatasetError::NonNumeric {
        line,
        column: column.to_string(),
        value: raw.to_string(),
    })
}

/// Reads a sample CSV. Extra columns are ignored.
pub fn load_samples(path: &Path) -> Result<SampleTable, DatasetError> {
    let csv_err = |source| DatasetError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let find = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let missing: Vec<String> = CSV_COLUMNS
        .iter()
        .filter(|c| find(c).is_none())
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(DatasetError::SchemaMismatch(missing));
    }
    let col: Vec<usize> = CSV_COLUMNS.iter().map(|c| find(c).expect("checked")).collect();

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |k: usize| record.get(col[k]).unwrap_or("");

        let date_raw = field(1);
        let date = NaiveDate::parse_from_str(date_raw.trim(), "%Y-%m-%d").map_err(|_| DatasetError::BadDate {
            line,
            value: date_raw.to_string(),
        })?;
        let mut spectrum = PixelSpectrum::new();
        for (k, band) in SAMPLE_BANDS.iter().enumerate() {
            let v = parse_num(line, CSV_COLUMNS[6 + k], field(6 + k))?;
            spectrum.set(*band, v).expect("finite by parse_num");
        }
        let out_of_range = spectrum.out_of_range_bands();
        if !out_of_range.is_empty() {
            log::warn!("line {line}: reflectance outside the expected range in {out_of_range:?}");
        }
        let label = field(10).parse::<Label>().map_err(|_| DatasetError::BadLabel {
            line,
            value: field(10).to_string(),
        })?;
        let plastic_fraction = parse_opt(line, "plastic_fraction", field(11))?;
        if let Some(f) = plastic_fraction {
            if label == Label::Water {
                return Err(DatasetError::BadFraction {
                    line,
                    reason: "plastic_fraction given for a water sample".into(),
                });
            }
            if !(0.0..=100.0).contains(&f) {
                return Err(DatasetError::BadFraction {
                    line,
                    reason: format!("plastic_fraction {f} outside [0, 100]"),
                });
            }
        }
        rows.push(Sample {
            site: field(0).to_string(),
            date,
            row: parse_int(line, "row", field(2))?,
            col: parse_int(line, "col", field(3))?,
            lat: parse_opt(line, "lat", field(4))?,
            lon: parse_opt(line, "lon", field(5))?,
            spectrum,
            label,
            plastic_fraction,
        });
    }
    SampleTable::new(rows)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the sample CSV; numbers use shortest round-trip formatting.
pub fn write_samples(table: &SampleTable, path: &Path) -> Result<(), DatasetError> {
    let csv_err = |source| DatasetError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for s in table.rows() {
        let mut rec = vec![
            s.site.clone(),
            s.date.format("%Y-%m-%d").to_string(),
            s.row.to_string(),
            s.col.to_string(),
            fmt_opt(s.lat),
            fmt_opt(s.lon),
        ];
        rec.extend(SAMPLE_BANDS.iter().map(|b| fmt_opt(s.spectrum.get(*b))));
        rec.push(s.label.as_str().to_string());
        rec.push(fmt_opt(s.plastic_fraction));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Class-imbalance scenario: water count is `multiplier` times the plastic
/// count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TestCase {
    TC1,
    TC2,
    TC3,
    TC4,
    TC5,
}

impl TestCase {
    pub const ALL: [TestCase; 5] = [TestCase::TC1, TestCase::TC2, TestCase::TC3, TestCase::TC4, TestCase::TC5];

    pub fn water_multiplier(self) -> usize {
        match self {
            TestCase::TC1 => 1,
            TestCase::TC2 => 2,
            TestCase::TC3 => 3,
            TestCase::TC4 => 4,
            TestCase::TC5 => 5,
        }
    }

    pub fn from_number(n: usize) -> Option<TestCase> {
        TestCase::ALL.into_iter().find(|t| t.water_multiplier() == n)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TestCase::TC1 => "TC1",
            TestCase::TC2 => "TC2",
            TestCase::TC3 => "TC3",
            TestCase::TC4 => "TC4",
            TestCase::TC5 => "TC5",
        }
    }
}

impl fmt::Display for TestCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TestCase {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_uppercase();
        let digits = t.strip_prefix("TC").unwrap_or(&t);
        digits
            .parse::<usize>()
            .ok()
            .and_then(TestCase::from_number)
            .ok_or_else(|| DatasetError::UnknownTestCase(s.to_string()))
    }
}

fn check_pool(pool: &SampleTable, expected: Label) -> Result<(), DatasetError> {
    match pool.rows().iter().find(|s| s.label != expected) {
        Some(s) => Err(DatasetError::WrongClassInPool {
            expected,
            found: s.label,
        }),
        None => Ok(()),
    }
}

/// All plastic samples plus `multiplier * n_plastic` water samples drawn
/// without replacement, shuffled by `seed`.
pub fn build_test_case(
    plastic_pool: &SampleTable,
    water_pool: &SampleTable,
    spec: TestCase,
    seed: u64,
) -> Result<SampleTable, DatasetError> {
    check_pool(plastic_pool, Label::Plastic)?;
    check_pool(water_pool, Label::Water)?;
    let required = spec.water_multiplier() * plastic_pool.len();
    if water_pool.len() < required {
        return Err(DatasetError::InsufficientWaterPool {
            required,
            available: water_pool.len(),
        });
    }
    let mut rng = seed::stream_rng(seed::derive(&[seed, salt::TEST_CASE]), 0);
    let water = water_pool.canonical();
    let picked = rand::seq::index::sample(&mut rng, water.len(), required);
    let mut rows: Vec<Sample> = plastic_pool.canonical().into_iter().cloned().collect();
    rows.extend(picked.iter().map(|i| water[i].clone()));
    rows.shuffle(&mut rng);
    SampleTable::new(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub train: SampleTable,
    pub test: SampleTable,
    pub seed: u64,
}

/// Per-class train count: `fraction * n` rounded half-up, kept within
/// `[1, n - 1]` so both sides see every class.
pub fn stratum_train_count(n: usize, fraction: f64) -> usize {
    let k = (fraction * n as f64 + 0.5).floor() as usize;
    k.clamp(1, n.saturating_sub(1).max(1))
}

/// Stratified split. Output tables are in canonical order.
pub fn split(table: &SampleTable, train_fraction: f64, seed: u64) -> Result<SplitResult, DatasetError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(train_fraction));
    }
    table.require_classes(2)?;
    let base = seed::derive(&[seed, salt::SPLIT]);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for label in Label::ALL {
        let mut members: Vec<&Sample> = table.canonical().into_iter().filter(|s| s.label == label).collect();
        let mut rng = seed::stream_rng(base, label.index() as u64);
        members.shuffle(&mut rng);
        let k = stratum_train_count(members.len(), train_fraction);
        train.extend(members[..k].iter().map(|s| (*s).clone()));
        test.extend(members[k..].iter().map(|s| (*s).clone()));
    }
    Ok(SplitResult {
        train: SampleTable::new(train)?.canonical_table(),
        test: SampleTable::new(test)?.canonical_table(),
        seed,
    })
}

/// Plastic-coverage bins, left-closed: [0,10), [10,20), [20,30), [30,40), [40,100].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FractionCategory {
    #[serde(rename = "0-10%")]
    Pct0To10,
    #[serde(rename = "10-20%")]
    Pct10To20,
    #[serde(rename = "20-30%")]
    Pct20To30,
    #[serde(rename = "30-40%")]
    Pct30To40,
    #[serde(rename = ">40%")]
    Over40,
}

impl FractionCategory {
    pub const ALL: [FractionCategory; 5] = [
        FractionCategory::Pct0To10,
        FractionCategory::Pct10To20,
        FractionCategory::Pct20To30,
        FractionCategory::Pct30To40,
        FractionCategory::Over40,
    ];

    pub fn from_percent(p: f64) -> FractionCategory {
        match p {
            p if p < 10.0 => FractionCategory::Pct0To10,
            p if p < 20.0 => FractionCategory::Pct10To20,
            p if p < 30.0 => FractionCategory::Pct20To30,
            p if p < 40.0 => FractionCategory::Pct30To40,
            _ => FractionCategory::Over40,
        }
    }

    /// Percent bounds `[lo, hi)`; the last bin is capped at 100.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            FractionCategory::Pct0To10 => (0.0, 10.0),
            FractionCategory::Pct10To20 => (10.0, 20.0),
            FractionCategory::Pct20To30 => (20.0, 30.0),
            FractionCategory::Pct30To40 => (30.0, 40.0),
            FractionCategory::Over40 => (40.0, 100.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FractionCategory::Pct0To10 => "0-10%",
            FractionCategory::Pct10To20 => "10-20%",
            FractionCategory::Pct20To30 => "20-30%",
            FractionCategory::Pct30To40 => "30-40%",
            FractionCategory::Over40 => ">40%",
        }
    }
}

impl fmt::Display for FractionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralProfile {
    pub category: FractionCategory,
    /// Mean reflectance per requested band, in request order.
    pub means: Vec<(BandId, f64)>,
    pub count: usize,
}

/// Mean spectrum of plastic samples per coverage category. Empty categories
/// are omitted; water rows are ignored.
pub fn spectral_profile(table: &SampleTable, bands: &[BandId]) -> Result<Vec<SpectralProfile>, DatasetError> {
    let mut sums = [(); 5].map(|_| vec![0.0f64; bands.len()]);
    let mut counts = [0usize; 5];
    for (i, s) in table.rows().iter().enumerate() {
        if s.label != Label::Plastic {
            continue;
        }
        let frac = s.plastic_fraction.ok_or(DatasetError::MissingFraction { index: i })?;
        let cat = FractionCategory::from_percent(frac) as usize;
        for (k, b) in bands.iter().enumerate() {
            sums[cat][k] += s.spectrum.get(*b).unwrap_or(f64::NAN);
        }
        counts[cat] += 1;
    }
    Ok(FractionCategory::ALL
        .into_iter()
        .enumerate()
        .filter(|(c, _)| counts[*c] > 0)
        .map(|(c, category)| SpectralProfile {
            category,
            means: bands
                .iter()
                .zip(&sums[c])
                .map(|(b, s)| (*b, s / counts[c] as f64))
                .collect(),
            count: counts[c],
        })
        .collect())
}

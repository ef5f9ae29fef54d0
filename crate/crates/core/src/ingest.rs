//! Session CSV and rider-profile parsing.
//!
//! Session files carry one row per recorded second under the exact header
//! [`SESSION_HEADER`]. Empty cells mean the channel was not recorded; they are
//! kept as `None` all the way through the pipeline.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SESSION_HEADER: &str = "t_s,hr_bpm,power_w,speed_kmh,cadence_rpm,altitude_m,distance_km";
const COLUMNS: [&str; 7] = [
    "t_s",
    "hr_bpm",
    "power_w",
    "speed_kmh",
    "cadence_rpm",
    "altitude_m",
    "distance_km",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("input is not valid UTF-8")]
    NotUtf8,
    #[error("empty session file")]
    Empty,
    #[error("malformed header: expected `{SESSION_HEADER}`, found `{found}`")]
    MalformedHeader { found: String },
    #[error("row {row}: expected 7 cells, found {found}")]
    WrongCellCount { row: usize, found: usize },
    #[error("row {row}: non-numeric value `{value}` in column {column}")]
    NonNumeric { row: usize, column: &'static str, value: String },
    #[error("row {row}: missing timestamp")]
    MissingTimestamp { row: usize },
    #[error("row {row}: duplicate timestamp t={t}")]
    DuplicateTimestamp { row: usize, t: u32 },
    #[error("row {row}: {message}")]
    Csv { row: usize, message: String },
    #[error("rider profile: missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("rider profile: `{key}` must be positive, got {value}")]
    NonPositive { key: &'static str, value: f64 },
    #[error("rider profile: {0}")]
    ProfileJson(String),
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
}

/// One second of recorded data. Absent channels are `None`, never a sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Sample {
    pub t: u32,
    pub heart_rate: Option<f64>,
    pub power: Option<f64>,
    pub speed: Option<f64>,
    pub distance: Option<f64>,
    pub cadence: Option<f64>,
    pub altitude: Option<f64>,
}

impl Sample {
    pub fn at(t: u32) -> Self {
        Sample { t, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub rider_id: String,
    /// Strictly increasing in `t`.
    pub samples: Vec<Sample>,
}

impl Session {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Serializes back to the canonical CSV form. Values are written with the
    /// shortest representation that parses back to the same `f64`.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(32 * (self.samples.len() + 1));
        out.push_str(SESSION_HEADER);
        out.push('\n');
        for s in &self.samples {
            let _ = write!(out, "{}", s.t);
            for v in [s.heart_rate, s.power, s.speed, s.cadence, s.altitude, s.distance] {
                out.push(',');
                if let Some(v) = v {
                    let _ = write!(out, "{v}");
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiderProfile {
    pub rider_id: String,
    pub weight: f64,
    pub max_hr: Option<f64>,
    pub vo2max: Option<f64>,
    pub ftp: Option<f64>,
    pub lactate_threshold_hr: Option<f64>,
}

/// Wire form of a profile entry, as found in the profiles JSON array.
#[derive(Debug, Default, Serialize, Deserialize)]
pub struct ProfileRecord {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rider_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_kg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_hr_bpm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vo2max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ftp_w: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lt_hr_bpm: Option<f64>,
}

impl From<&RiderProfile> for ProfileRecord {
    fn from(p: &RiderProfile) -> Self {
        ProfileRecord {
            rider_id: Some(p.rider_id.clone()),
            weight_kg: Some(p.weight),
            max_hr_bpm: p.max_hr,
            vo2max: p.vo2max,
            ftp_w: p.ftp,
            lt_hr_bpm: p.lactate_threshold_hr,
        }
    }
}

impl TryFrom<ProfileRecord> for RiderProfile {
    type Error = IngestError;

    fn try_from(rec: ProfileRecord) -> Result<Self, IngestError> {
        let rider_id = rec.rider_id.ok_or(IngestError::MissingKey("rider_id"))?;
        let weight = rec.weight_kg.ok_or(IngestError::MissingKey("weight_kg"))?;
        let positive = |key: &'static str, v: Option<f64>| match v {
            Some(x) if !(x > 0.0) => Err(IngestError::NonPositive { key, value: x }),
            _ => Ok(v),
        };
        positive("weight_kg", Some(weight))?;
        Ok(RiderProfile {
            rider_id,
            weight,
            max_hr: positive("max_hr_bpm", rec.max_hr_bpm)?,
            vo2max: positive("vo2max", rec.vo2max)?,
            ftp: positive("ftp_w", rec.ftp_w)?,
            lactate_threshold_hr: positive("lt_hr_bpm", rec.lt_hr_bpm)?,
        })
    }
}

fn parse_cell(raw: &str, row: usize, column: &'static str) -> Result<Option<f64>, IngestError> {
    let cell = raw.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(IngestError::NonNumeric { row, column, value: cell.to_string() }),
    }
}

/// Parses one session CSV. Row numbers in errors count data rows from 1
/// (the header is not counted).
pub fn parse_session(raw: &[u8], rider_id: &str, session_id: &str) -> Result<Session, IngestError> {
    let text = std::str::from_utf8(raw).map_err(|_| IngestError::NotUtf8)?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    if text.trim().is_empty() {
        return Err(IngestError::Empty);
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::None)
        .from_reader(text.as_bytes());

    let header = reader
        .headers()
        .map_err(|e| IngestError::Csv { row: 0, message: e.to_string() })?;
    if header.len() != COLUMNS.len() || header.iter().zip(COLUMNS).any(|(h, c)| h.trim() != c) {
        return Err(IngestError::MalformedHeader { found: header.iter().collect::<Vec<_>>().join(",") });
    }

    let mut samples = Vec::new();
    let mut seen: HashSet<u32> = HashSet::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| IngestError::Csv { row, message: e.to_string() })?;
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != COLUMNS.len() {
            return Err(IngestError::WrongCellCount { row, found: record.len() });
        }
        let t_cell = record[0].trim();
        if t_cell.is_empty() {
            return Err(IngestError::MissingTimestamp { row });
        }
        let t: u32 = t_cell.parse().map_err(|_| IngestError::NonNumeric {
            row,
            column: "t_s",
            value: t_cell.to_string(),
        })?;
        if !seen.insert(t) {
            return Err(IngestError::DuplicateTimestamp { row, t });
        }
        samples.push(Sample {
            t,
            heart_rate: parse_cell(&record[1], row, COLUMNS[1])?,
            power: parse_cell(&record[2], row, COLUMNS[2])?,
            speed: parse_cell(&record[3], row, COLUMNS[3])?,
            cadence: parse_cell(&record[4], row, COLUMNS[4])?,
            altitude: parse_cell(&record[5], row, COLUMNS[5])?,
            distance: parse_cell(&record[6], row, COLUMNS[6])?,
        });
    }
    if samples.is_empty() {
        return Err(IngestError::Empty);
    }
    samples.sort_by_key(|s| s.t);
    Ok(Session { session_id: session_id.to_string(), rider_id: rider_id.to_string(), samples })
}

/// Parses a single profile object.
pub fn parse_rider_profile(raw: &[u8]) -> Result<RiderProfile, IngestError> {
    let rec: ProfileRecord =
        serde_json::from_slice(raw).map_err(|e| IngestError::ProfileJson(e.to_string()))?;
    RiderProfile::try_from(rec)
}

/// Parses the profiles file: a JSON array of profile objects.
pub fn parse_rider_profiles(raw: &[u8]) -> Result<Vec<RiderProfile>, IngestError> {
    let recs: Vec<ProfileRecord> =
        serde_json::from_slice(raw).map_err(|e| IngestError::ProfileJson(e.to_string()))?;
    recs.into_iter().map(RiderProfile::try_from).collect()
}

pub fn profiles_to_json(profiles: &[RiderProfile]) -> String {
    let recs: Vec<ProfileRecord> = profiles.iter().map(ProfileRecord::from).collect();
    serde_json::to_string_pretty(&recs).expect("profile records serialize")
}

/// Splits `<rider_id>__<session_id>.csv` into its two ids.
pub fn split_session_filename(name: &str) -> Option<(&str, &str)> {
    let stem = name.strip_suffix(".csv")?;
    let (rider, session) = stem.split_once("__")?;
    if rider.is_empty() || session.is_empty() {
        return None;
    }
    Some((rider, session))
}

pub fn session_filename(rider_id: &str, session_id: &str) -> String {
    format!("{rider_id}__{session_id}.csv")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkipReport {
    pub file: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    /// Sorted by file name.
    pub pairs: Vec<(Session, RiderProfile)>,
    pub skipped: Vec<SkipReport>,
}

/// Loads every `*.csv` session under `session_dir` and joins it to its rider
/// profile. Unparseable files and sessions of unprofiled riders are reported
/// in [`Dataset::skipped`] rather than failing the whole load.
pub fn load_dataset(session_dir: &Path, profiles_file: &Path) -> Result<Dataset, IngestError> {
    let io_err = |path: &Path, e: std::io::Error| IngestError::Io { path: path.to_path_buf(), message: e.to_string() };
    let profiles_raw = fs::read(profiles_file).map_err(|e| io_err(profiles_file, e))?;
    let profiles: BTreeMap<String, RiderProfile> = parse_rider_profiles(&profiles_raw)?
        .into_iter()
        .map(|p| (p.rider_id.clone(), p))
        .collect();

    let mut files: Vec<(String, PathBuf)> = fs::read_dir(session_dir)
        .map_err(|e| io_err(session_dir, e))?
        .filter_map(|entry| entry.ok())
        .map(|entry| entry.path())
        .filter(|p| p.is_file() && p.extension().is_some_and(|ext| ext == "csv"))
        .filter_map(|p| Some((p.file_name()?.to_str()?.to_string(), p)))
        .collect();
    files.sort();

    let parsed: Vec<Result<(Session, RiderProfile), SkipReport>> = files
        .par_iter()
        .map(|(name, path)| {
            let skip = |reason: String| SkipReport { file: name.clone(), reason };
            let (rider_id, session_id) = split_session_filename(name)
                .ok_or_else(|| skip("file name is not <rider_id>__<session_id>.csv".into()))?;
            let profile = profiles
                .get(rider_id)
                .ok_or_else(|| skip(format!("no profile for rider `{rider_id}`")))?;
            let raw = fs::read(path).map_err(|e| skip(e.to_string()))?;
            let session = parse_session(&raw, rider_id, session_id).map_err(|e| skip(e.to_string()))?;
            Ok((session, profile.clone()))
        })
        .collect();

    let mut dataset = Dataset::default();
    for item in parsed {
        match item {
            Ok(pair) => dataset.pairs.push(pair),
            Err(skip) => {
                log::warn!("skipping {}: {}", skip.file, skip.reason);
                dataset.skipped.push(skip);
            }
        }
    }
    if files.is_empty() {
        log::warn!("no session files found in {}", session_dir.display());
    }
    Ok(dataset)
}

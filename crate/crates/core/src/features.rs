//! Model inputs: 30 s heart-rate lag, 0.3 Hz bin averaging, power-to-weight,
//! and z-score standardization fit on the training pool.
//!
//! Column order is fixed by [`FEATURE_NAMES`]. The lag channel is built on the
//! original 1 Hz timebase, then every channel is averaged into bins of index
//! `floor(0.3 t)`. Bins below [`FIRST_KEPT_BIN`] cover `t < 30` and are dropped.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{RiderProfile, Sample, Session};
use crate::scalar::Scalar;

pub const N_FEATURES: usize = 8;
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "time_s",
    "speed_kmh",
    "distance_km",
    "power_w",
    "cadence_rpm",
    "power_per_kg",
    "altitude_m",
    "hr_lag30_bpm",
];
pub const HR_LAG_COLUMN: usize = 7;

/// Output samples per input second.
pub const DOWNSAMPLE_RATE: f64 = 0.3;
pub const LAG_SECONDS: u32 = 30;
/// `0.3 × 30`: the first bin whose members all have a defined lag.
pub const FIRST_KEPT_BIN: u32 = 9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("session `{session_id}` too short: last sample at t={last_t}s, need at least {LAG_SECONDS}s")]
    TooShort { session_id: String, last_t: u32 },
    #[error("zero variance in column `{column}`")]
    ZeroVariance { column: &'static str },
    #[error("standardizer needs at least 2 pooled rows, found {found}")]
    InsufficientRows { found: usize },
}

/// Bin index for a 1 Hz timestamp: `floor(0.3 t)` in exact integer arithmetic.
pub fn bin_index(t: u32) -> u32 {
    ((3 * t as u64) / 10) as u32
}

/// Groups rows by `bin_index(t)` and averages each channel over its present
/// members. A channel is absent in a bin iff it is absent in every member.
fn bin_average<const N: usize>(ts: &[u32], rows: &[[Option<f64>; N]]) -> Vec<(u32, [Option<f64>; N])> {
    let mut out: Vec<(u32, [Option<f64>; N])> = Vec::new();
    let mut sums = [0.0; N];
    let mut counts = [0usize; N];
    let mut current: Option<u32> = None;

    let mut flush = |bin: u32, sums: &mut [f64; N], counts: &mut [usize; N]| {
        let mut avg = [None; N];
        for k in 0..N {
            if counts[k] > 0 {
                avg[k] = Some(sums[k] / counts[k] as f64);
            }
        }
        out.push((bin, avg));
        *sums = [0.0; N];
        *counts = [0; N];
    };

    for (&t, row) in ts.iter().zip(rows) {
        let bin = bin_index(t);
        if let Some(c) = current {
            if c != bin {
                flush(c, &mut sums, &mut counts);
            }
        }
        current = Some(bin);
        for k in 0..N {
            if let Some(v) = row[k] {
                sums[k] += v;
                counts[k] += 1;
            }
        }
    }
    if let Some(c) = current {
        flush(c, &mut sums, &mut counts);
    }
    out
}

/// Bin-averages every channel at 0.3 Hz. Output `t` is the bin index.
pub fn downsample(session: &Session) -> Session {
    let ts: Vec<u32> = session.samples.iter().map(|s| s.t).collect();
    let rows: Vec<[Option<f64>; 6]> = session
        .samples
        .iter()
        .map(|s| [s.heart_rate, s.power, s.speed, s.distance, s.cadence, s.altitude])
        .collect();
    let samples = bin_average(&ts, &rows)
        .into_iter()
        .map(|(bin, [heart_rate, power, speed, distance, cadence, altitude])| Sample {
            t: bin,
            heart_rate,
            power,
            speed,
            distance,
            cadence,
            altitude,
        })
        .collect();
    Session { session_id: session.session_id.clone(), rider_id: session.rider_id.clone(), samples }
}

/// Heart rate 30 s before each sample, carrying the latest positive reading
/// forward across dropouts. `None` for samples with `t < 30`.
pub fn build_lag_channel(session: &Session) -> Result<Vec<Option<f64>>, FeatureError> {
    let samples = &session.samples;
    let last_t = samples.last().map_or(0, |s| s.t);
    if samples.is_empty() || last_t < LAG_SECONDS {
        return Err(FeatureError::TooShort { session_id: session.session_id.clone(), last_t });
    }
    let mut lagged = Vec::with_capacity(samples.len());
    let mut cursor = 0;
    let mut carried: Option<f64> = None;
    for s in samples {
        if s.t < LAG_SECONDS {
            lagged.push(None);
            continue;
        }
        let horizon = s.t - LAG_SECONDS;
        while cursor < samples.len() && samples[cursor].t <= horizon {
            if let Some(hr) = samples[cursor].heart_rate.filter(|&hr| hr > 0.0) {
                carried = Some(hr);
            }
            cursor += 1;
        }
        lagged.push(carried);
    }
    Ok(lagged)
}

/// Bin-averaged features before standardization; absent channels are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFeatures {
    pub session_id: String,
    /// Bin index (`t_ds`) of each row.
    pub bins: Vec<u32>,
    pub rows: Vec<[Option<f64>; N_FEATURES]>,
    /// Bin-averaged heart rate over positive readings; `None` means masked out.
    pub targets: Vec<Option<f64>>,
}

impl RawFeatures {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn mask(&self) -> Vec<bool> {
        self.targets.iter().map(Option::is_some).collect()
    }
}

/// Lag → downsample → drop the first 9 bins → power per kg.
///
/// Heart-rate readings of 0 are dropouts: they never enter a target average,
/// and a bin with no positive reading is masked out of the loss.
pub fn build_raw_features(session: &Session, profile: &RiderProfile) -> Result<RawFeatures, FeatureError> {
    let lag = build_lag_channel(session)?;
    let ts: Vec<u32> = session.samples.iter().map(|s| s.t).collect();
    let per_second: Vec<[Option<f64>; N_FEATURES + 1]> = session
        .samples
        .iter()
        .zip(&lag)
        .map(|(s, &lag)| {
            [
                Some(s.t as f64),
                s.speed,
                s.distance,
                s.power,
                s.cadence,
                s.power.map(|p| p / profile.weight),
                s.altitude,
                lag,
                s.heart_rate.filter(|&hr| hr > 0.0),
            ]
        })
        .collect();

    let mut raw = RawFeatures { session_id: session.session_id.clone(), bins: vec![], rows: vec![], targets: vec![] };
    for (bin, values) in bin_average(&ts, &per_second) {
        if bin < FIRST_KEPT_BIN {
            continue;
        }
        let mut row = [None; N_FEATURES];
        row.copy_from_slice(&values[..N_FEATURES]);
        raw.bins.push(bin);
        raw.rows.push(row);
        raw.targets.push(values[N_FEATURES]);
    }
    Ok(raw)
}

/// Standardized model input with aligned targets.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    pub session_id: String,
    pub bins: Vec<u32>,
    pub rows: Vec<[T; N_FEATURES]>,
    /// Standardized heart rate; masked-out entries hold 0.
    pub targets: Vec<T>,
    pub target_mask: Vec<bool>,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn masked_count(&self) -> usize {
        self.target_mask.iter().filter(|&&m| m).count()
    }

    /// Debug export: the 8 standardized columns plus `target` and `mask`.
    pub fn to_csv(&self) -> String {
        let mut out = FEATURE_NAMES.join(",");
        out.push_str(",target,mask\n");
        for ((row, target), mask) in self.rows.iter().zip(&self.targets).zip(&self.target_mask) {
            for v in row {
                let _ = write!(out, "{v},");
            }
            let _ = writeln!(out, "{target},{}", u8::from(*mask));
        }
        out
    }
}

/// Per-column z-score statistics, fit on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer<T> {
    pub means: [T; N_FEATURES],
    pub stds: [T; N_FEATURES],
    pub target_mean: T,
    pub target_std: T,
}

fn mean_std<T: Scalar>(values: &[T], column: &'static str) -> Result<(T, T), FeatureError> {
    if values.is_empty() {
        return Err(FeatureError::ZeroVariance { column });
    }
    let n = T::from_usize_lossy(values.len());
    let mean = values.iter().copied().sum::<T>() / n;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let std = var.sqrt();
    if !(std > T::zero()) {
        return Err(FeatureError::ZeroVariance { column });
    }
    Ok((mean, std))
}

impl<T: Scalar> Standardizer<T> {
    /// Population mean/std per column over the masked-in rows of every
    /// training session. Absent cells do not contribute.
    pub fn fit(training: &[RawFeatures]) -> Result<Self, FeatureError> {
        let pooled = || {
            training
                .iter()
                .flat_map(|m| m.rows.iter().zip(&m.targets))
                .filter(|(_, target)| target.is_some())
        };
        let found = pooled().count();
        if found < 2 {
            return Err(FeatureError::InsufficientRows { found });
        }
        let mut means = [T::zero(); N_FEATURES];
        let mut stds = [T::one(); N_FEATURES];
        for col in 0..N_FEATURES {
            let values: Vec<T> = pooled().filter_map(|(row, _)| row[col]).map(T::lit).collect();
            (means[col], stds[col]) = mean_std(&values, FEATURE_NAMES[col])?;
        }
        let targets: Vec<T> = pooled().filter_map(|(_, t)| *t).map(T::lit).collect();
        let (target_mean, target_std) = mean_std(&targets, "target_hr_bpm")?;
        Ok(Standardizer { means, stds, target_mean, target_std })
    }

    pub fn standardize(&self, column: usize, value: T) -> T {
        (value - self.means[column]) / self.stds[column]
    }

    pub fn destandardize(&self, column: usize, z: T) -> T {
        z * self.stds[column] + self.means[column]
    }

    pub fn standardize_target(&self, hr: T) -> T {
        (hr - self.target_mean) / self.target_std
    }

    pub fn destandardize_target(&self, z: T) -> T {
        z * self.target_std + self.target_mean
    }

    /// Absent cells become 0, i.e. the training mean.
    pub fn apply(&self, raw: &RawFeatures) -> FeatureMatrix<T> {
        let rows = raw
            .rows
            .iter()
            .map(|row| {
                let mut out = [T::zero(); N_FEATURES];
                for (col, cell) in row.iter().enumerate() {
                    if let Some(v) = cell {
                        out[col] = self.standardize(col, T::lit(*v));
                    }
                }
                out
            })
            .collect();
        let targets = raw
            .targets
            .iter()
            .map(|t| t.map_or(T::zero(), |hr| self.standardize_target(T::lit(hr))))
            .collect();
        FeatureMatrix {
            session_id: raw.session_id.clone(),
            bins: raw.bins.clone(),
            rows,
            targets,
            target_mask: raw.mask(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Standardizer<U> {
        let c = |x: T| U::lit(x.as_f64());
        Standardizer {
            means: self.means.map(c),
            stds: self.stds.map(c),
            target_mean: c(self.target_mean),
            target_std: c(self.target_std),
        }
    }
}

pub fn build_features<T: Scalar>(
    session: &Session,
    profile: &RiderProfile,
    standardizer: &Standardizer<T>,
) -> Result<FeatureMatrix<T>, FeatureError> {
    Ok(standardizer.apply(&build_raw_features(session, profile)?))
}

/// Fit mode: builds raw features for every training session, fits the
/// standardizer on them and returns the standardized matrices.
pub fn fit_and_build<T: Scalar>(
    training: &[(Session, RiderProfile)],
) -> Result<(Standardizer<T>, Vec<FeatureMatrix<T>>), FeatureError> {
    let raw = training
        .iter()
        .map(|(s, p)| build_raw_features(s, p))
        .collect::<Result<Vec<_>, _>>()?;
    let standardizer = Standardizer::fit(&raw)?;
    let matrices = raw.iter().map(|r| standardizer.apply(r)).collect();
    Ok((standardizer, matrices))
}

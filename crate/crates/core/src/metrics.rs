//! Normalized power and training stress score from 1 Hz power.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Session;
use crate::scalar::Scalar;

pub const SMOOTHING_WINDOW_S: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("power series of {found} s is shorter than the {SMOOTHING_WINDOW_S} s smoothing window")]
    TooShort { found: usize },
    #[error("power must be non-negative and finite (index {index})")]
    InvalidPower { index: usize },
    #[error("rider has no FTP")]
    MissingFtp,
    #[error("FTP must be positive")]
    NonPositiveFtp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadMetrics<T> {
    pub normalized_power: T,
    pub intensity_factor: T,
    pub tss: T,
    pub duration_s: usize,
}

/// Fourth root of the mean fourth power of the 30 s trailing moving average.
/// The first average is complete at index 29.
pub fn normalized_power<T: Scalar>(power: &[T]) -> Result<T, MetricsError> {
    if power.len() < SMOOTHING_WINDOW_S {
        return Err(MetricsError::TooShort { found: power.len() });
    }
    if let Some(index) = power.iter().position(|p| !p.is_finite() || *p < T::zero()) {
        return Err(MetricsError::InvalidPower { index });
    }
    let window = T::from_usize_lossy(SMOOTHING_WINDOW_S);
    let mut running: T = power[..SMOOTHING_WINDOW_S].iter().copied().sum();
    let mut fourth = Vec::with_capacity(power.len() - SMOOTHING_WINDOW_S + 1);
    fourth.push((running / window).powi(4));
    for t in SMOOTHING_WINDOW_S..power.len() {
        running += power[t] - power[t - SMOOTHING_WINDOW_S];
        // Rolling differences can drift a hair below zero on all-zero tails.
        let avg = (running / window).max(T::zero());
        fourth.push(avg.powi(4));
    }
    let mean = fourth.iter().copied().sum::<T>() / T::from_usize_lossy(fourth.len());
    Ok(mean.sqrt().sqrt())
}

/// `IF = NP / FTP`, `TSS = duration · NP · IF / (FTP · 3600) · 100`.
pub fn tss<T: Scalar>(power: &[T], ftp: T) -> Result<LoadMetrics<T>, MetricsError> {
    if !(ftp > T::zero()) {
        return Err(MetricsError::NonPositiveFtp);
    }
    let np = normalized_power(power)?;
    let intensity_factor = np / ftp;
    let duration = T::from_usize_lossy(power.len());
    let tss = duration * np * intensity_factor / (ftp * T::lit(3600.0)) * T::lit(100.0);
    Ok(LoadMetrics { normalized_power: np, intensity_factor, tss, duration_s: power.len() })
}

/// Per-second power over `0..=last_t`, with unrecorded seconds as 0 W.
pub fn session_power(session: &Session) -> Vec<f64> {
    let len = session.samples.last().map_or(0, |s| s.t as usize + 1);
    let mut out = vec![0.0; len];
    for s in &session.samples {
        out[s.t as usize] = s.power.unwrap_or(0.0);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub session_id: String,
    pub np_w: f64,
    #[serde(rename = "if")]
    pub intensity_factor: f64,
    pub tss: f64,
    pub duration_s: usize,
}

pub fn session_metrics(session: &Session, ftp: Option<f64>) -> Result<SessionMetrics, MetricsError> {
    let ftp = ftp.ok_or(MetricsError::MissingFtp)?;
    let m = tss(&session_power(session), ftp)?;
    Ok(SessionMetrics {
        session_id: session.session_id.clone(),
        np_w: m.normalized_power,
        intensity_factor: m.intensity_factor,
        tss: m.tss,
        duration_s: m.duration_s,
    })
}

//! Per-session RMSE in beats/minute, persistence baseline, prediction traces
//! and session embeddings.

pub mod cluster;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{build_raw_features, FeatureError, FeatureMatrix, RawFeatures, Standardizer, HR_LAG_COLUMN};
use crate::ingest::{RiderProfile, Session};
use crate::lstm::{sequence_forward, LstmError, LstmParams, LstmState};
use crate::train::Checkpoint;

/// Validation min/mean/max RMSE (bpm) reported for the original LSTM on 2362
/// sessions of 5 held-out professional riders. Reference only: that data is
/// proprietary, so these are not reproduced by this crate.
pub const REFERENCE_VALIDATION_RMSE_BPM: [f64; 3] = [2.51, 5.62, 25.67];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("session `{session_id}` has no masked-in heart-rate steps")]
    NoMaskedSteps { session_id: String },
    #[error("no evaluable sessions")]
    EmptyEvaluableSet,
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Lstm(#[from] LstmError),
}

/// Produces one standardized heart-rate prediction per row.
pub trait Predictor {
    fn predict(&self, matrix: &FeatureMatrix<f64>) -> Result<Vec<f64>, EvalError>;
}

impl Predictor for LstmParams<f64> {
    fn predict(&self, matrix: &FeatureMatrix<f64>) -> Result<Vec<f64>, EvalError> {
        Ok(sequence_forward(self, &matrix.rows)?.predictions)
    }
}

/// Predicts the heart rate from 30 s earlier, i.e. the lag input itself.
pub struct Persistence<'a>(pub &'a Standardizer<f64>);

impl Predictor for Persistence<'_> {
    fn predict(&self, matrix: &FeatureMatrix<f64>) -> Result<Vec<f64>, EvalError> {
        let st = self.0;
        Ok(matrix
            .rows
            .iter()
            .map(|row| st.standardize_target(st.destandardize(HR_LAG_COLUMN, row[HR_LAG_COLUMN])))
            .collect())
    }
}

/// RMSE over masked-in steps; `None` if nothing is masked in.
pub fn rmse(predicted: &[f64], actual: &[f64], mask: &[bool]) -> Option<f64> {
    let (sum, n) = predicted
        .iter()
        .zip(actual)
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), ((p, a), _)| (s + (p - a) * (p - a), n + 1));
    (n > 0).then(|| (sum / n as f64).sqrt())
}

/// De-standardized RMSE of any predictor on one matrix.
pub fn predictor_rmse_bpm<P: Predictor + ?Sized>(
    predictor: &P,
    standardizer: &Standardizer<f64>,
    matrix: &FeatureMatrix<f64>,
) -> Result<f64, EvalError> {
    let predicted: Vec<f64> = predictor
        .predict(matrix)?
        .into_iter()
        .map(|z| standardizer.destandardize_target(z))
        .collect();
    let actual: Vec<f64> = matrix.targets.iter().map(|&z| standardizer.destandardize_target(z)).collect();
    rmse(&predicted, &actual, &matrix.target_mask)
        .ok_or_else(|| EvalError::NoMaskedSteps { session_id: matrix.session_id.clone() })
}

pub fn matrix_rmse_bpm(params: &LstmParams<f64>, standardizer: &Standardizer<f64>, matrix: &FeatureMatrix<f64>) -> Result<f64, EvalError> {
    predictor_rmse_bpm(params, standardizer, matrix)
}

pub fn persistence_baseline_rmse(standardizer: &Standardizer<f64>, matrix: &FeatureMatrix<f64>) -> Result<f64, EvalError> {
    predictor_rmse_bpm(&Persistence(standardizer), standardizer, matrix)
}

fn prepare(checkpoint: &Checkpoint, session: &Session, profile: &RiderProfile) -> Result<(RawFeatures, FeatureMatrix<f64>), EvalError> {
    let raw = build_raw_features(session, profile)?;
    let matrix = checkpoint.standardizer.apply(&raw);
    Ok((raw, matrix))
}

/// `sqrt(mean((de-standardized prediction − bin-averaged hr)²))` over
/// masked-in steps.
pub fn session_rmse(checkpoint: &Checkpoint, session: &Session, profile: &RiderProfile) -> Result<f64, EvalError> {
    let trace = predict_trace(checkpoint, session, profile)?;
    let predicted: Vec<f64> = trace.iter().map(|r| r.predicted_hr_bpm).collect();
    let actual: Vec<f64> = trace.iter().map(|r| r.actual_hr_bpm.unwrap_or(0.0)).collect();
    let mask: Vec<bool> = trace.iter().map(|r| r.actual_hr_bpm.is_some()).collect();
    rmse(&predicted, &actual, &mask).ok_or_else(|| EvalError::NoMaskedSteps { session_id: session.session_id.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmseSummary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl RmseSummary {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // Clamp guards the ordering against rounding in the mean.
        let mean = (values.iter().sum::<f64>() / values.len() as f64).clamp(min, max);
        Some(RmseSummary { min, mean, max })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEval {
    pub session_id: String,
    pub rider_id: String,
    pub rmse_bpm: f64,
    pub baseline_rmse_bpm: f64,
    pub t_ds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excluded {
    pub session_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Sorted by session id.
    pub sessions: Vec<SessionEval>,
    pub rmse_bpm: RmseSummary,
    pub baseline_rmse_bpm: RmseSummary,
    pub excluded: Vec<Excluded>,
    pub reference_rmse_bpm: [f64; 3],
}

/// Evaluates every session; too-short or fully masked sessions are listed in
/// [`EvalReport::excluded`].
pub fn evaluate_dataset(checkpoint: &Checkpoint, pairs: &[(Session, RiderProfile)]) -> Result<EvalReport, EvalError> {
    let outcomes: Vec<Result<SessionEval, Excluded>> = pairs
        .par_iter()
        .map(|(session, profile)| {
            let exclude = |e: EvalError| Excluded { session_id: session.session_id.clone(), reason: e.to_string() };
            let (_, matrix) = prepare(checkpoint, session, profile).map_err(exclude)?;
            let rmse_bpm = matrix_rmse_bpm(&checkpoint.params, &checkpoint.standardizer, &matrix).map_err(exclude)?;
            let baseline_rmse_bpm = persistence_baseline_rmse(&checkpoint.standardizer, &matrix).map_err(exclude)?;
            Ok(SessionEval {
                session_id: session.session_id.clone(),
                rider_id: session.rider_id.clone(),
                rmse_bpm,
                baseline_rmse_bpm,
                t_ds: matrix.len(),
            })
        })
        .collect();

    let mut sessions = Vec::new();
    let mut excluded = Vec::new();
    for o in outcomes {
        match o {
            Ok(s) => sessions.push(s),
            Err(x) => excluded.push(x),
        }
    }
    sessions.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    excluded.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    let rmse_bpm = RmseSummary::from_values(&sessions.iter().map(|s| s.rmse_bpm).collect::<Vec<_>>())
        .ok_or(EvalError::EmptyEvaluableSet)?;
    let baseline_rmse_bpm = RmseSummary::from_values(&sessions.iter().map(|s| s.baseline_rmse_bpm).collect::<Vec<_>>())
        .ok_or(EvalError::EmptyEvaluableSet)?;
    Ok(EvalReport { sessions, rmse_bpm, baseline_rmse_bpm, excluded, reference_rmse_bpm: REFERENCE_VALIDATION_RMSE_BPM })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t_ds: u32,
    /// Bin-averaged measured heart rate; `None` where the sensor dropped out.
    pub actual_hr_bpm: Option<f64>,
    pub predicted_hr_bpm: f64,
}

pub fn predict_trace(checkpoint: &Checkpoint, session: &Session, profile: &RiderProfile) -> Result<Vec<TraceRow>, EvalError> {
    let (raw, matrix) = prepare(checkpoint, session, profile)?;
    let predictions = checkpoint.params.predict(&matrix)?;
    Ok(raw
        .bins
        .iter()
        .zip(&raw.targets)
        .zip(predictions)
        .map(|((&t_ds, &actual), z)| TraceRow {
            t_ds,
            actual_hr_bpm: actual,
            predicted_hr_bpm: checkpoint.standardizer.destandardize_target(z),
        })
        .collect())
}

pub fn trace_to_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("t_ds,actual_hr_bpm,predicted_hr_bpm\n");
    for r in rows {
        let actual = r.actual_hr_bpm.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{}", r.t_ds, actual, r.predicted_hr_bpm);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingMode {
    /// Hidden state after the last step.
    #[default]
    FinalState,
    /// Mean of the hidden state over all steps.
    MeanPooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub session_id: String,
    pub vector: Vec<f64>,
}

pub fn embed_matrix(params: &LstmParams<f64>, matrix: &FeatureMatrix<f64>, mode: EmbeddingMode) -> Result<Vec<f64>, EvalError> {
    let fwd = crate::lstm::forward_from(params, LstmState::zeros(params.hidden_dim), &matrix.rows)?;
    Ok(match mode {
        EmbeddingMode::FinalState => fwd.final_state.h,
        EmbeddingMode::MeanPooled => {
            let mut mean = vec![0.0; params.hidden_dim];
            for cache in &fwd.caches {
                for (m, h) in mean.iter_mut().zip(&cache.h) {
                    *m += h;
                }
            }
            let n = fwd.caches.len().max(1) as f64;
            mean.iter_mut().for_each(|m| *m /= n);
            mean
        }
    })
}

pub fn extract_embedding(
    checkpoint: &Checkpoint,
    session: &Session,
    profile: &RiderProfile,
    mode: EmbeddingMode,
) -> Result<Embedding, EvalError> {
    let (_, matrix) = prepare(checkpoint, session, profile)?;
    Ok(Embedding { session_id: session.session_id.clone(), vector: embed_matrix(&checkpoint.params, &matrix, mode)? })
}

/// `session_id,e0,...,e{H-1}` plus `pc1,pc2` when projections are given.
pub fn embeddings_to_csv(embeddings: &[Embedding], projection: Option<&[[f64; 2]]>) -> String {
    let dim = embeddings.first().map_or(0, |e| e.vector.len());
    let mut out = String::from("session_id");
    for k in 0..dim {
        let _ = write!(out, ",e{k}");
    }
    if projection.is_some() {
        out.push_str(",pc1,pc2");
    }
    out.push('\n');
    for (idx, e) in embeddings.iter().enumerate() {
        out.push_str(&e.session_id);
        for v in &e.vector {
            let _ = write!(out, ",{v}");
        }
        if let Some(pcs) = projection {
            let _ = write!(out, ",{},{}", pcs[idx][0], pcs[idx][1]);
        }
        out.push('\n');
    }
    out
}

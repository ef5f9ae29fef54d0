//! Rider-level split, truncated-BPTT training loop and run reporting.

pub mod adam;
pub mod checkpoint;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cleanse::{clean_pairs, CleanConfig, CleanReport, DEFAULT_SPURIOUS_HR_BPM};
use crate::evaluate::{self, RmseSummary};
use crate::features::{build_raw_features, FeatureError, FeatureMatrix, RawFeatures, Standardizer, N_FEATURES};
use crate::ingest::{RiderProfile, Session};
use crate::lstm::{forward_from, sequence_backward, truncated_windows, LstmError, LstmParams, LstmState};

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState, StepInfo};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("rider split needs at least 2 distinct riders, found {found}")]
    TooFewRiders { found: usize },
    #[error("no usable training sessions")]
    EmptyTrainingSet,
    #[error("non-finite gradient in tensor `{tensor}`")]
    NonFiniteGradient { tensor: &'static str },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Lstm(#[from] LstmError),
    #[error(transparent)]
    Eval(#[from] evaluate::EvalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden_dim: usize,
    /// Truncated-BPTT window length in downsampled steps.
    pub window: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub grad_clip_norm: f64,
    pub epochs: usize,
    pub seed: u64,
    pub spurious_hr_threshold: f64,
    pub validation_rider_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_dim: 64,
            window: 200,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            grad_clip_norm: 5.0,
            epochs: 20,
            seed: 0,
            spurious_hr_threshold: DEFAULT_SPURIOUS_HR_BPM,
            validation_rider_fraction: 1.0 / 3.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::InvalidConfig(msg.to_string()));
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be at least 1");
        }
        if self.window == 0 {
            return bad("window must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.spurious_hr_threshold > 0.0) {
            return bad("spurious_hr_threshold must be positive");
        }
        if !(self.validation_rider_fraction > 0.0 && self.validation_rider_fraction < 1.0) {
            return bad("validation_rider_fraction must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig<f64> {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            grad_clip_norm: self.grad_clip_norm,
        }
    }

    pub fn clean(&self) -> CleanConfig {
        CleanConfig { spurious_hr_threshold: self.spurious_hr_threshold }
    }
}

pub type Pair = (Session, RiderProfile);

#[derive(Debug, Clone, Default)]
pub struct Split {
    pub train: Vec<Pair>,
    pub validation: Vec<Pair>,
    pub train_riders: Vec<String>,
    pub validation_riders: Vec<String>,
}

/// Partitions riders, not sessions: `round(fraction · riders)` riders (at
/// least one, and leaving at least one) go to validation.
pub fn split_by_rider(pairs: Vec<Pair>, fraction: f64, seed: u64) -> Result<Split, TrainError> {
    let riders: BTreeSet<String> = pairs.iter().map(|(s, _)| s.rider_id.clone()).collect();
    if riders.len() < 2 {
        return Err(TrainError::TooFewRiders { found: riders.len() });
    }
    let mut order: Vec<String> = riders.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((fraction * order.len() as f64).round() as usize).clamp(1, order.len() - 1);
    let mut validation_riders = order.split_off(order.len() - n_val);
    let mut train_riders = order;
    train_riders.sort();
    validation_riders.sort();

    let mut split = Split { train_riders, validation_riders, ..Default::default() };
    for pair in pairs {
        if split.validation_riders.binary_search(&pair.0.rider_id).is_ok() {
            split.validation.push(pair);
        } else {
            split.train.push(pair);
        }
    }
    Ok(split)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean squared error in standardized units over every masked-in step.
    pub train_loss: f64,
    /// `sqrt(train_loss)` expressed in beats/minute.
    pub train_rmse_bpm: f64,
    pub val_rmse_min_bpm: Option<f64>,
    pub val_rmse_mean_bpm: Option<f64>,
    pub val_rmse_max_bpm: Option<f64>,
    pub window: usize,
    pub windows: usize,
    /// Windows with no masked-in target; no update was applied for them.
    pub all_masked_windows: usize,
    pub clipped_steps: usize,
    pub max_grad_norm: f64,
    /// Excluded from the JSONL report so reruns stay byte-identical.
    #[serde(skip)]
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept in the checkpoint.
    pub best_epoch: usize,
    /// Sessions left out of training or validation (too short for the lag).
    pub excluded_sessions: Vec<String>,
}

impl TrainReport {
    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.epochs {
            out.push_str(&serde_json::to_string(rec).expect("epoch record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn timing_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.epochs {
            let _ = writeln!(out, "{{\"epoch\":{},\"wall_clock_s\":{}}}", rec.epoch, rec.wall_clock_s);
        }
        out
    }
}

fn raw_features_or_exclude(pairs: &[Pair], excluded: &mut Vec<String>) -> Result<Vec<RawFeatures>, TrainError> {
    let mut out = Vec::new();
    for (session, profile) in pairs {
        match build_raw_features(session, profile) {
            Ok(raw) => out.push(raw),
            Err(FeatureError::TooShort { session_id, .. }) => {
                log::warn!("excluding too-short session {session_id}");
                excluded.push(session_id);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

/// Trains on an already split dataset. Validation may be empty, in which case
/// the final epoch's parameters are kept.
pub fn train_model(train: &[Pair], validation: &[Pair], config: &TrainConfig) -> Result<(Checkpoint, TrainReport), TrainError> {
    config.validate()?;
    let mut report = TrainReport::default();

    let train_raw = raw_features_or_exclude(train, &mut report.excluded_sessions)?;
    let val_raw = raw_features_or_exclude(validation, &mut report.excluded_sessions)?;
    let train_raw: Vec<RawFeatures> = train_raw.into_iter().filter(|r| r.mask().contains(&true)).collect();
    if train_raw.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let standardizer: Standardizer<f64> = Standardizer::fit(&train_raw)?;
    let train_m: Vec<FeatureMatrix<f64>> = train_raw.iter().map(|r| standardizer.apply(r)).collect();
    let val_m: Vec<FeatureMatrix<f64>> = val_raw
        .iter()
        .map(|r| standardizer.apply(r))
        .filter(|m| m.masked_count() > 0)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = LstmParams::<f64>::init(N_FEATURES, config.hidden_dim, &mut rng);
    let mut adam = AdamState::new(&params);
    let adam_cfg = config.adam();

    let mut best: Option<(f64, LstmParams<f64>, usize)> = None;
    let mut order: Vec<usize> = (0..train_m.len()).collect();

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut rec = EpochRecord {
            epoch,
            train_loss: 0.0,
            train_rmse_bpm: 0.0,
            val_rmse_min_bpm: None,
            val_rmse_mean_bpm: None,
            val_rmse_max_bpm: None,
            window: config.window,
            windows: 0,
            all_masked_windows: 0,
            clipped_steps: 0,
            max_grad_norm: 0.0,
            wall_clock_s: 0.0,
        };
        let mut sq_sum = 0.0;
        let mut count = 0usize;

        for &idx in &order {
            let m = &train_m[idx];
            let mut state = LstmState::zeros(config.hidden_dim);
            for range in truncated_windows(m.len(), config.window) {
                let fwd = forward_from(&params, state, &m.rows[range.clone()])?;
                let back = sequence_backward(
                    &params,
                    &fwd.caches,
                    &fwd.predictions,
                    &m.targets[range.clone()],
                    &m.target_mask[range],
                )?;
                state = fwd.final_state;
                rec.windows += 1;
                if back.all_masked() {
                    rec.all_masked_windows += 1;
                    continue;
                }
                sq_sum += back.loss * back.masked_count as f64;
                count += back.masked_count;
                let info = adam_step(&mut params, &back.grads, &mut adam, &adam_cfg)?;
                rec.clipped_steps += usize::from(info.clipped);
                rec.max_grad_norm = rec.max_grad_norm.max(info.pre_clip_norm);
            }
        }
        rec.train_loss = sq_sum / count.max(1) as f64;
        rec.train_rmse_bpm = rec.train_loss.sqrt() * standardizer.target_std;

        if !val_m.is_empty() {
            let rmses = val_m
                .par_iter()
                .map(|m| evaluate::matrix_rmse_bpm(&params, &standardizer, m))
                .collect::<Result<Vec<f64>, _>>()?;
            let s = RmseSummary::from_values(&rmses).expect("non-empty validation set");
            rec.val_rmse_min_bpm = Some(s.min);
            rec.val_rmse_mean_bpm = Some(s.mean);
            rec.val_rmse_max_bpm = Some(s.max);
            if best.as_ref().is_none_or(|(b, _, _)| s.mean < *b) {
                best = Some((s.mean, params.clone(), epoch));
            }
        }
        rec.wall_clock_s = started.elapsed().as_secs_f64();
        log::info!(
            "epoch {epoch}: train loss {:.5} ({:.2} bpm), val mean {:?} bpm",
            rec.train_loss,
            rec.train_rmse_bpm,
            rec.val_rmse_mean_bpm
        );
        report.epochs.push(rec);
    }

    let (params, epoch) = match best {
        Some((_, p, e)) => (p, e),
        None => (params, config.epochs),
    };
    report.best_epoch = epoch;
    let mut training_rider_ids: Vec<String> = train.iter().map(|(s, _)| s.rider_id.clone()).collect();
    training_rider_ids.sort();
    training_rider_ids.dedup();
    let checkpoint = Checkpoint { config: config.clone(), params, standardizer, training_rider_ids, epoch };
    Ok((checkpoint, report))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub report: TrainReport,
    pub clean_report: CleanReport,
    pub train_riders: Vec<String>,
    pub validation_riders: Vec<String>,
}

/// Cleans raw pairs, splits by rider and trains.
pub fn train_pipeline(pairs: Vec<Pair>, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let (cleaned, clean_report) = clean_pairs(pairs, &config.clean());
    let split = split_by_rider(cleaned, config.validation_rider_fraction, config.seed)?;
    let (checkpoint, report) = train_model(&split.train, &split.validation, config)?;
    Ok(TrainOutcome {
        checkpoint,
        report,
        clean_report,
        train_riders: split.train_riders,
        validation_riders: split.validation_riders,
    })
}

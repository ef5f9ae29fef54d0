//! Synthetic riders and sessions with first-order heart-rate dynamics.
//!
//! Heart rate relaxes toward a power-dependent steady state,
//! `hr_ss(P) = min(hr_max, hr_rest + gain · P)`, with separate time constants
//! for rising and falling. Gaussian sensor noise is added to the observed
//! value only; the latent trajectory stays noise free.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{profiles_to_json, session_filename, RiderProfile, Sample, Session};

pub const PROFILES_FILE: &str = "profiles.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("corpus needs at least 2 riders, got {0}")]
    TooFewRiders(usize),
    #[error("invalid session plan: {0}")]
    InvalidPlan(String),
    #[error("invalid rider parameters: {0}")]
    InvalidRider(String),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRiderParams {
    pub rider_id: String,
    pub weight: f64,
    pub hr_rest: f64,
    pub hr_max: f64,
    /// bpm per watt.
    pub hr_gain: f64,
    pub tau_rise: f64,
    pub tau_fall: f64,
    pub noise_std: f64,
    pub ftp: f64,
}

impl SynthRiderParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidRider(format!("{}: {m}", self.rider_id)));
        if !(self.hr_rest < self.hr_max) {
            return bad("hr_rest must be below hr_max");
        }
        if !(self.tau_rise >= 1.0 && self.tau_fall >= 1.0) {
            return bad("time constants must be at least 1 s");
        }
        if !(self.noise_std >= 0.0) {
            return bad("noise_std must be non-negative");
        }
        if !(self.weight > 0.0 && self.ftp > 0.0) {
            return bad("weight and ftp must be positive");
        }
        Ok(())
    }

    pub fn steady_state(&self, power: f64) -> f64 {
        (self.hr_rest + self.hr_gain * power).min(self.hr_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum Regime {
    /// Repeating blocks: `high_w` for `high_s` seconds, then `low_w` for `low_s`.
    Interval { high_w: f64, high_s: u32, low_w: f64, low_s: u32 },
    /// `target_w` plus Gaussian jitter with std `jitter_w`.
    Steady { target_w: f64, jitter_w: f64 },
}

impl Regime {
    pub fn label(&self) -> &'static str {
        match self {
            Regime::Interval { .. } => "interval",
            Regime::Steady { .. } => "steady",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub regime: Regime,
    pub duration_s: u32,
    pub seed: u64,
}

impl SessionPlan {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.duration_s < 60 {
            return Err(SynthError::InvalidPlan(format!("duration {} s is below 60 s", self.duration_s)));
        }
        let ok = match self.regime {
            Regime::Interval { high_w, high_s, low_w, low_s } => high_w >= 0.0 && low_w >= 0.0 && high_s + low_s > 0,
            Regime::Steady { target_w, jitter_w } => target_w >= 0.0 && jitter_w >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(SynthError::InvalidPlan("powers must be non-negative and blocks non-empty".into()))
        }
    }
}

/// Per-second power for a plan, never negative.
pub fn generate_power(plan: &SessionPlan) -> Vec<f64> {
    let n = plan.duration_s as usize;
    match plan.regime {
        Regime::Interval { high_w, high_s, low_w, low_s } => {
            let period = (high_s + low_s) as usize;
            (0..n).map(|t| if t % period < high_s as usize { high_w } else { low_w }).collect()
        }
        Regime::Steady { target_w, jitter_w } => {
            if jitter_w == 0.0 {
                return vec![target_w; n];
            }
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            let jitter = Normal::new(0.0, jitter_w).expect("finite jitter");
            (0..n).map(|_| (target_w + jitter.sample(&mut rng)).max(0.0)).collect()
        }
    }
}

/// Euler integration at 1 s: `hr[t+1] = hr[t] + (hr_ss(P[t]) − hr[t]) / τ`,
/// τ = `tau_rise` while rising and `tau_fall` otherwise, starting at `hr_rest`.
/// Observed values get noise and are clamped to `[hr_rest − 10, hr_max]`.
pub fn simulate_hr(rider: &SynthRiderParams, power: &[f64], seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = (rider.noise_std > 0.0).then(|| Normal::new(0.0, rider.noise_std).expect("finite noise"));
    let mut latent = rider.hr_rest;
    let mut out = Vec::with_capacity(power.len());
    for &p in power {
        let observed = latent + noise.map_or(0.0, |n| n.sample(&mut rng));
        out.push(observed.clamp(rider.hr_rest - 10.0, rider.hr_max));
        let target = rider.steady_state(p);
        let tau = if target > latent { rider.tau_rise } else { rider.tau_fall };
        latent += (target - latent) / tau;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_riders: usize,
    pub sessions_per_rider: usize,
    /// Share of each rider's sessions that follow the interval regime.
    pub interval_fraction: f64,
    pub seed: u64,
    pub min_duration_s: u32,
    pub max_duration_s: u32,
    /// Overrides every rider's sensor noise when set.
    pub noise_std: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_riders: 15,
            sessions_per_rider: 20,
            interval_fraction: 0.5,
            seed: 0,
            min_duration_s: 1800,
            max_duration_s: 3600,
            noise_std: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSession {
    pub rider_id: String,
    pub session_id: String,
    pub regime: String,
    pub plan: SessionPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: SynthConfig,
    pub riders: Vec<SynthRiderParams>,
    pub sessions: Vec<GeneratedSession>,
}

impl Manifest {
    pub fn regime_of(&self, session_id: &str) -> Option<&str> {
        self.sessions.iter().find(|s| s.session_id == session_id).map(|s| s.regime.as_str())
    }
}

fn draw_rider<R: Rng>(rng: &mut R, rider_id: String, noise_override: Option<f64>) -> SynthRiderParams {
    let noise_std = rng.random_range(1.0..3.0);
    SynthRiderParams {
        rider_id,
        weight: rng.random_range(55.0..85.0),
        hr_rest: rng.random_range(40.0..60.0),
        hr_max: rng.random_range(180.0..205.0),
        hr_gain: rng.random_range(0.18..0.30),
        tau_rise: rng.random_range(25.0..45.0),
        tau_fall: rng.random_range(50.0..90.0),
        noise_std: noise_override.unwrap_or(noise_std),
        ftp: rng.random_range(240.0..360.0),
    }
}

fn draw_plan<R: Rng>(rng: &mut R, rider: &SynthRiderParams, interval: bool, cfg: &SynthConfig) -> SessionPlan {
    let duration_s = rng.random_range(cfg.min_duration_s..=cfg.max_duration_s.max(cfg.min_duration_s));
    let regime = if interval {
        Regime::Interval {
            high_w: (rider.ftp * rng.random_range(1.05..1.35)).round(),
            high_s: rng.random_range(30..=240),
            low_w: (rider.ftp * rng.random_range(0.3..0.55)).round(),
            low_s: rng.random_range(60..=240),
        }
    } else {
        Regime::Steady { target_w: (rider.ftp * rng.random_range(0.55..0.9)).round(), jitter_w: 15.0 }
    };
    SessionPlan { regime, duration_s, seed: rng.random() }
}

fn round_to(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (x * scale).round() / scale
}

/// Builds all channels for one session. Speed follows a cube-root power law
/// slowed on climbs; altitude is a rolling profile over distance.
pub fn synthesize_session(rider: &SynthRiderParams, session_id: &str, plan: &SessionPlan) -> Session {
    let power = generate_power(plan);
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ 0x5eed_cafe);
    let hr = simulate_hr(rider, &power, plan.seed.wrapping_add(1));
    let drag = rng.random_range(0.17..0.23);
    let hill_km = rng.random_range(3.0..12.0);
    let hill_m = rng.random_range(10.0..80.0);
    let base_alt = rng.random_range(0.0..500.0);
    let cadence_noise = Normal::new(0.0, 3.0).expect("finite");

    let mut distance_km = 0.0;
    let mut samples = Vec::with_capacity(power.len());
    for (t, (&p, &h)) in power.iter().zip(&hr).enumerate() {
        let phase = std::f64::consts::TAU * distance_km / hill_km;
        let altitude = base_alt + hill_m * phase.sin();
        let grade = hill_m * std::f64::consts::TAU / (hill_km * 1000.0) * phase.cos();
        let speed_ms = ((p / drag).cbrt() * (1.0 - 4.0 * grade)).max(1.5);
        let cadence = if p > 0.0 { (80.0 + 10.0 * p / rider.ftp + cadence_noise.sample(&mut rng)).max(40.0) } else { 0.0 };
        samples.push(Sample {
            t: t as u32,
            heart_rate: Some(round_to(h, 1)),
            power: Some(p.round()),
            speed: Some(round_to(speed_ms * 3.6, 2)),
            distance: Some(round_to(distance_km, 4)),
            cadence: Some(cadence.round()),
            altitude: Some(round_to(altitude, 1)),
        });
        distance_km += speed_ms / 1000.0;
    }
    Session { session_id: session_id.to_string(), rider_id: rider.rider_id.clone(), samples }
}

pub fn rider_profile(rider: &SynthRiderParams) -> RiderProfile {
    RiderProfile {
        rider_id: rider.rider_id.clone(),
        weight: round_to(rider.weight, 1),
        max_hr: Some(round_to(rider.hr_max, 0)),
        vo2max: None,
        ftp: Some(round_to(rider.ftp, 0)),
        lactate_threshold_hr: Some(round_to(rider.steady_state(rider.ftp), 0)),
    }
}

/// Generates the whole corpus in memory. Each rider draws from its own
/// ChaCha stream, so the result does not depend on generation order.
pub fn generate_pairs(cfg: &SynthConfig) -> Result<(Vec<(Session, RiderProfile)>, Manifest), SynthError> {
    if cfg.n_riders < 2 {
        return Err(SynthError::TooFewRiders(cfg.n_riders));
    }
    if cfg.min_duration_s < 60 {
        return Err(SynthError::InvalidPlan("min_duration_s must be at least 60".into()));
    }
    let per_rider: Vec<_> = (0..cfg.n_riders)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(r as u64 + 1);
            let rider = draw_rider(&mut rng, format!("r{:02}", r + 1), cfg.noise_std);
            rider.validate()?;
            let profile = rider_profile(&rider);
            let n_interval = (cfg.interval_fraction * cfg.sessions_per_rider as f64).round() as usize;
            let mut sessions = Vec::with_capacity(cfg.sessions_per_rider);
            for k in 0..cfg.sessions_per_rider {
                let plan = draw_plan(&mut rng, &rider, k < n_interval, cfg);
                plan.validate()?;
                let session_id = format!("{}-s{:03}", rider.rider_id, k + 1);
                let session = synthesize_session(&rider, &session_id, &plan);
                let meta = GeneratedSession {
                    rider_id: rider.rider_id.clone(),
                    session_id,
                    regime: plan.regime.label().to_string(),
                    plan,
                };
                sessions.push((session, profile.clone(), meta));
            }
            Ok::<_, SynthError>((rider, sessions))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut manifest = Manifest { config: cfg.clone(), riders: vec![], sessions: vec![] };
    let mut pairs = Vec::new();
    for (rider, sessions) in per_rider {
        manifest.riders.push(rider);
        for (s, p, meta) in sessions {
            pairs.push((s, p));
            manifest.sessions.push(meta);
        }
    }
    Ok((pairs, manifest))
}

/// Writes session CSVs, `profiles.json` and `manifest.json` into `dir`.
pub fn generate_corpus(dir: &Path, cfg: &SynthConfig) -> Result<Manifest, SynthError> {
    let (pairs, manifest) = generate_pairs(cfg)?;
    let write = |path: PathBuf, contents: &[u8]| fs::write(&path, contents).map_err(|source| SynthError::Io { path, source });
    fs::create_dir_all(dir).map_err(|source| SynthError::Io { path: dir.to_path_buf(), source })?;
    let profiles: Vec<RiderProfile> = manifest.riders.iter().map(rider_profile).collect();
    write(dir.join(PROFILES_FILE), profiles_to_json(&profiles).as_bytes())?;
    write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes").as_bytes(),
    )?;
    pairs
        .par_iter()
        .map(|(s, _)| write(dir.join(session_filename(&s.rider_id, &s.session_id)), s.to_csv().as_bytes()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(manifest)
}

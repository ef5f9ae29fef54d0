//! Independent reference implementations used as test oracles. Nothing here
//! calls into the library's numeric code paths.
#![allow(dead_code)]

use cyclehr::ingest::{RiderProfile, Sample, Session};
use cyclehr::lstm::LstmParams;

pub fn profile(rider: &str, weight: f64) -> RiderProfile {
    RiderProfile {
        rider_id: rider.into(),
        weight,
        max_hr: None,
        vo2max: None,
        ftp: Some(250.0),
        lactate_threshold_hr: None,
    }
}

/// A 1 Hz session where every channel is present and moving.
pub fn session_from(id: &str, rider: &str, hr: impl Fn(u32) -> f64, n: u32) -> Session {
    let samples = (0..n)
        .map(|t| Sample {
            t,
            heart_rate: Some(hr(t)),
            power: Some(150.0 + (t % 17) as f64 * 5.0),
            speed: Some(30.0 + (t % 5) as f64),
            distance: Some(t as f64 * 0.008),
            cadence: Some(80.0 + (t % 7) as f64),
            altitude: Some(100.0 + (t % 40) as f64),
        })
        .collect();
    Session { session_id: id.into(), rider_id: rider.into(), samples }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Straight transcription of the cell equations with explicit index loops.
/// Returns the per-step predictions and the final `(h, c)`.
pub fn naive_forward(
    p: &LstmParams<f64>,
    h0: &[f64],
    c0: &[f64],
    xs: &[Vec<f64>],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (ni, nh) = (p.input_dim, p.hidden_dim);
    let mut h = h0.to_vec();
    let mut c = c0.to_vec();
    let mut ys = Vec::new();
    for x in xs {
        let mut z = vec![0.0; 4 * nh];
        for r in 0..4 * nh {
            let mut acc = p.b[r];
            for k in 0..ni {
                acc += p.w_x[r * ni + k] * x[k];
            }
            for k in 0..nh {
                acc += p.w_h[r * nh + k] * h[k];
            }
            z[r] = acc;
        }
        let mut h_new = vec![0.0; nh];
        for j in 0..nh {
            let i = logistic(z[j]);
            let f = logistic(z[nh + j]);
            let g = z[2 * nh + j].tanh();
            let o = logistic(z[3 * nh + j]);
            c[j] = f * c[j] + i * g;
            h_new[j] = o * c[j].tanh();
        }
        h = h_new;
        let mut y = p.c_out;
        for j in 0..nh {
            y += p.v[j] * h[j];
        }
        ys.push(y);
    }
    (ys, h, c)
}

pub fn naive_masked_mse(ys: &[f64], targets: &[f64], mask: &[bool]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for t in 0..ys.len() {
        if mask[t] {
            sum += (ys[t] - targets[t]).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Bin of second `t` at 0.3 Hz, computed as an integer floor.
pub fn oracle_bin(t: u32) -> u32 {
    (3 * t) / 10
}

/// Heart rate 30 s earlier at 1 Hz, averaged within each output bin, for a
/// gap-free session starting at t = 0. A non-positive reading is a dropout
/// and the last positive one stands in for it. Bins below 9 are dropped.
pub fn oracle_lag_by_bin(hr: &[f64]) -> Vec<(u32, Option<f64>)> {
    let mut sums: std::collections::BTreeMap<u32, (f64, usize)> = Default::default();
    for t in 30..hr.len() {
        let e = sums.entry(oracle_bin(t as u32)).or_default();
        if let Some(v) = (0..=t - 30).rev().map(|u| hr[u]).find(|&v| v > 0.0) {
            e.0 += v;
            e.1 += 1;
        }
    }
    sums.into_iter()
        .filter(|(b, _)| *b >= 9)
        .map(|(b, (s, n))| (b, (n > 0).then(|| s / n as f64)))
        .collect()
}

/// Mean of positive heart-rate readings per bin for bins ≥ 9; `None` when a
/// bin holds only dropouts.
pub fn oracle_target_by_bin(session: &Session) -> Vec<(u32, Option<f64>)> {
    let mut bins: std::collections::BTreeMap<u32, (f64, usize)> = Default::default();
    for s in &session.samples {
        let e = bins.entry(oracle_bin(s.t)).or_default();
        if let Some(hr) = s.heart_rate.filter(|&v| v > 0.0) {
            e.0 += hr;
            e.1 += 1;
        }
    }
    bins.into_iter()
        .filter(|(b, _)| *b >= 9)
        .map(|(b, (s, n))| (b, (n > 0).then(|| s / n as f64)))
        .collect()
}

pub fn loop_rmse(pred: &[f64], actual: &[Option<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..pred.len() {
        if let Some(a) = actual[i] {
            sum += (pred[i] - a) * (pred[i] - a);
            n += 1;
        }
    }
    (sum / n as f64).sqrt()
}

/// Reference cleaning rules: returns the kept index range or the reason name.
pub fn oracle_clean(samples: &[Sample], threshold: f64) -> Result<(usize, usize), &'static str> {
    if samples.iter().all(|s| s.heart_rate.is_none()) {
        return Err("no_heart_rate");
    }
    for s in samples {
        if let Some(hr) = s.heart_rate {
            if hr > threshold {
                return Err("spurious_heart_rate");
            }
        }
    }
    for s in samples {
        for v in [s.distance, s.speed, s.power].into_iter().flatten() {
            if v < 0.0 {
                return Err("negative_value");
            }
        }
    }
    let mut any_power = false;
    for s in samples {
        if let Some(p) = s.power {
            if p > 0.0 {
                any_power = true;
            }
        }
    }
    if any_power {
        let d: Vec<f64> = samples.iter().filter_map(|s| s.distance).collect();
        if d.is_empty() || d.iter().all(|&x| x == d[0]) {
            return Err("stationary");
        }
    }
    let good = |s: &Sample| matches!(s.heart_rate, Some(v) if v != 0.0);
    let mut first = None;
    let mut last = None;
    for (i, s) in samples.iter().enumerate() {
        if good(s) {
            if first.is_none() {
                first = Some(i);
            }
            last = Some(i);
        }
    }
    let (a, b) = match (first, last) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err("all_hr_zero"),
    };
    let kept = &samples[a..=b];
    if kept.iter().any(|s| matches!(s.power, Some(p) if p > 0.0)) {
        let d: Vec<f64> = kept.iter().filter_map(|s| s.distance).collect();
        if d.is_empty() || d.iter().all(|&x| x == d[0]) {
            return Err("stationary");
        }
    }
    Ok((a, b))
}

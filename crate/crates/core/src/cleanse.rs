//! Session-level rejection rules and heart-rate trimming.
//!
//! Rules run in a fixed order: no heart rate, spurious values, stationary
//! trainer, then trimming of leading/trailing heart-rate zeros.

use serde::{Deserialize, Serialize};

use crate::ingest::{RiderProfile, Session};

pub const DEFAULT_SPURIOUS_HR_BPM: f64 = 220.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    NoHeartRate,
    SpuriousHeartRate,
    NegativeValue,
    Stationary,
    AllHrZero,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RejectReason::NoHeartRate => "no_heart_rate",
            RejectReason::SpuriousHeartRate => "spurious_heart_rate",
            RejectReason::NegativeValue => "negative_value",
            RejectReason::Stationary => "stationary",
            RejectReason::AllHrZero => "all_hr_zero",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Keep,
    Reject(RejectReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleanConfig {
    /// Any heart rate strictly above this is treated as a faulty reading.
    pub spurious_hr_threshold: f64,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig { spurious_hr_threshold: DEFAULT_SPURIOUS_HR_BPM }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub session_id: String,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimRecord {
    pub session_id: String,
    pub leading: usize,
    pub trailing: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleanReport {
    pub kept: usize,
    pub rejected: Vec<Rejection>,
    /// One record per kept session, in output order.
    pub trimmed: Vec<TrimRecord>,
}

impl CleanReport {
    pub fn trimmed_leading(&self, session_id: &str) -> Option<usize> {
        self.trimmed.iter().find(|r| r.session_id == session_id).map(|r| r.leading)
    }

    pub fn trimmed_trailing(&self, session_id: &str) -> Option<usize> {
        self.trimmed.iter().find(|r| r.session_id == session_id).map(|r| r.trailing)
    }

    pub fn total(&self) -> usize {
        self.kept + self.rejected.len()
    }
}

pub fn reject_no_heart_rate(session: &Session) -> Decision {
    if session.samples.iter().any(|s| s.heart_rate.is_some()) {
        Decision::Keep
    } else {
        Decision::Reject(RejectReason::NoHeartRate)
    }
}

pub fn reject_spurious(session: &Session, config: &CleanConfig) -> Decision {
    let too_high = session
        .samples
        .iter()
        .any(|s| s.heart_rate.is_some_and(|hr| hr > config.spurious_hr_threshold));
    if too_high {
        return Decision::Reject(RejectReason::SpuriousHeartRate);
    }
    let negative = session.samples.iter().any(|s| {
        [s.distance, s.speed, s.power].into_iter().flatten().any(|v| v < 0.0)
    });
    if negative {
        Decision::Reject(RejectReason::NegativeValue)
    } else {
        Decision::Keep
    }
}

/// Power recorded while distance never changed: a home trainer session.
pub fn reject_stationary(session: &Session) -> Decision {
    let has_power = session.samples.iter().any(|s| s.power.is_some_and(|p| p > 0.0));
    if !has_power {
        return Decision::Keep;
    }
    let (lo, hi) = session
        .samples
        .iter()
        .filter_map(|s| s.distance)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
    if lo > hi || hi - lo == 0.0 {
        Decision::Reject(RejectReason::Stationary)
    } else {
        Decision::Keep
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trimmed {
    pub session: Session,
    pub leading: usize,
    pub trailing: usize,
}

fn hr_missing(hr: Option<f64>) -> bool {
    hr.is_none_or(|v| v == 0.0)
}

/// Drops the leading and trailing runs of samples with absent or zero heart
/// rate and re-bases `t` so the first kept sample is at 0. Interior zeros stay.
pub fn trim_heart_rate_zeros(session: &Session) -> Result<Trimmed, RejectReason> {
    let samples = &session.samples;
    let first = samples.iter().position(|s| !hr_missing(s.heart_rate)).ok_or(RejectReason::AllHrZero)?;
    let last = samples.iter().rposition(|s| !hr_missing(s.heart_rate)).expect("first exists");
    let t0 = samples[first].t;
    let kept = samples[first..=last]
        .iter()
        .map(|s| {
            let mut s = *s;
            s.t -= t0;
            s
        })
        .collect();
    Ok(Trimmed {
        session: Session { session_id: session.session_id.clone(), rider_id: session.rider_id.clone(), samples: kept },
        leading: first,
        trailing: samples.len() - 1 - last,
    })
}

/// Applies every rule to one session, returning the trimmed session or the
/// first rule that rejected it.
///
/// Trimming can drop the only samples where distance moved, so the
/// stationary rule is checked again on the trimmed session; otherwise a
/// second pass would reject what the first one kept.
pub fn clean_session(session: &Session, config: &CleanConfig) -> Result<Trimmed, RejectReason> {
    for decision in [reject_no_heart_rate(session), reject_spurious(session, config), reject_stationary(session)] {
        if let Decision::Reject(reason) = decision {
            return Err(reason);
        }
    }
    let trimmed = trim_heart_rate_zeros(session)?;
    match reject_stationary(&trimmed.session) {
        Decision::Reject(reason) => Err(reason),
        Decision::Keep => Ok(trimmed),
    }
}

pub fn clean_dataset(sessions: Vec<Session>, config: &CleanConfig) -> (Vec<Session>, CleanReport) {
    let (kept, report) = clean_tagged(sessions.into_iter().map(|s| (s, ())).collect(), config);
    (kept.into_iter().map(|(s, ())| s).collect(), report)
}

/// Same as [`clean_dataset`] with rider profiles riding along.
pub fn clean_pairs(
    pairs: Vec<(Session, RiderProfile)>,
    config: &CleanConfig,
) -> (Vec<(Session, RiderProfile)>, CleanReport) {
    clean_tagged(pairs, config)
}

fn clean_tagged<X>(items: Vec<(Session, X)>, config: &CleanConfig) -> (Vec<(Session, X)>, CleanReport) {
    let mut report = CleanReport::default();
    let mut kept = Vec::with_capacity(items.len());
    for (session, tag) in items {
        match clean_session(&session, config) {
            Ok(t) => {
                report.trimmed.push(TrimRecord {
                    session_id: session.session_id.clone(),
                    leading: t.leading,
                    trailing: t.trailing,
                });
                kept.push((t.session, tag));
            }
            Err(reason) => report.rejected.push(Rejection { session_id: session.session_id, reason }),
        }
    }
    report.kept = kept.len();
    (kept, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Sample;

    fn with_hr(id: &str, hrs: &[Option<f64>]) -> Session {
        Session {
            session_id: id.into(),
            rider_id: "r".into(),
            samples: hrs
                .iter()
                .enumerate()
                .map(|(t, &hr)| Sample { t: t as u32, heart_rate: hr, distance: Some(t as f64 * 0.01), ..Default::default() })
                .collect(),
        }
    }

    fn hrs(v: &[f64]) -> Vec<Option<f64>> {
        v.iter().map(|&x| Some(x)).collect()
    }

    #[test]
    fn no_heart_rate_rule() {
        assert_eq!(reject_no_heart_rate(&with_hr("a", &[None, None])), Decision::Reject(RejectReason::NoHeartRate));
        assert_eq!(reject_no_heart_rate(&with_hr("a", &[None, Some(80.0)])), Decision::Keep);
    }

    #[test]
    fn spurious_rule() {
        let cfg = CleanConfig::default();
        assert_eq!(reject_spurious(&with_hr("a", &hrs(&[100.0, 250.0])), &cfg), Decision::Reject(RejectReason::SpuriousHeartRate));
        assert_eq!(reject_spurious(&with_hr("a", &hrs(&[40.0, 200.0, 220.0])), &cfg), Decision::Keep);
        assert_eq!(reject_spurious(&with_hr("a", &hrs(&[221.0])), &cfg), Decision::Reject(RejectReason::SpuriousHeartRate));
        let mut s = with_hr("a", &hrs(&[100.0, 110.0]));
        s.samples[1].speed = Some(-3.0);
        assert_eq!(reject_spurious(&s, &cfg), Decision::Reject(RejectReason::NegativeValue));
    }

    #[test]
    fn stationary_rule() {
        let mut s = with_hr("a", &hrs(&[100.0; 5]));
        for x in &mut s.samples {
            x.power = Some(200.0);
            x.distance = Some(0.0);
        }
        assert_eq!(reject_stationary(&s), Decision::Reject(RejectReason::Stationary));
        for x in &mut s.samples {
            x.distance = None;
        }
        assert_eq!(reject_stationary(&s), Decision::Reject(RejectReason::Stationary));
        for x in &mut s.samples {
            x.power = None;
            x.distance = Some(3.0);
        }
        assert_eq!(reject_stationary(&s), Decision::Keep);
        for (i, x) in s.samples.iter_mut().enumerate() {
            x.power = Some(150.0);
            x.distance = Some(i as f64);
        }
        assert_eq!(reject_stationary(&s), Decision::Keep);
    }

    #[test]
    fn trimming() {
        let t = trim_heart_rate_zeros(&with_hr("a", &hrs(&[0.0, 0.0, 90.0, 95.0, 0.0]))).unwrap();
        assert_eq!((t.leading, t.trailing), (2, 1));
        let ts: Vec<u32> = t.session.samples.iter().map(|s| s.t).collect();
        assert_eq!(ts, vec![0, 1]);
        assert_eq!(t.session.samples[0].heart_rate, Some(90.0));

        let t = trim_heart_rate_zeros(&with_hr("a", &hrs(&[80.0, 0.0, 85.0]))).unwrap();
        assert_eq!(t.session.samples.len(), 3);

        assert_eq!(trim_heart_rate_zeros(&with_hr("a", &hrs(&[0.0, 0.0, 0.0]))), Err(RejectReason::AllHrZero));
        let t = trim_heart_rate_zeros(&with_hr("a", &[None, Some(70.0), None])).unwrap();
        assert_eq!((t.leading, t.trailing, t.session.len()), (1, 1, 1));
    }

    #[test]
    fn dataset_composition() {
        let cfg = CleanConfig::default();
        let sessions = vec![
            with_hr("absent", &[None, None, None]),
            with_hr("spike", &hrs(&[100.0, 250.0, 100.0])),
            with_hr("clean", &hrs(&[0.0, 100.0, 110.0])),
        ];
        let (kept, report) = clean_dataset(sessions, &cfg);
        assert_eq!(kept.len(), 1);
        assert_eq!(report.kept, 1);
        assert_eq!(
            report.rejected,
            vec![
                Rejection { session_id: "absent".into(), reason: RejectReason::NoHeartRate },
                Rejection { session_id: "spike".into(), reason: RejectReason::SpuriousHeartRate },
            ]
        );
        assert_eq!(report.trimmed_leading("clean"), Some(1));

        let (kept, report) = clean_dataset(vec![], &cfg);
        assert!(kept.is_empty());
        assert_eq!(report, CleanReport::default());
    }

    #[test]
    fn report_json_shape() {
        let (_, report) = clean_dataset(vec![with_hr("x", &[None])], &CleanConfig::default());
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains(r#""reason":"no_heart_rate""#), "{json}");
    }
}

mod common;

use std::collections::BTreeSet;

use cyclehr::features::{
    build_features, build_raw_features, fit_and_build, FeatureError, Standardizer, FIRST_KEPT_BIN, HR_LAG_COLUMN,
};
use cyclehr::ingest::{Sample, Session};
use proptest::prelude::*;

/// Sessions with gaps after the first 30 s, dropouts and absent channels;
/// always long enough for the lag and with variation in every channel.
fn gappy_session() -> impl Strategy<Value = Session> {
    (prop::collection::btree_set(0u32..1200, 40..400), any::<u64>()).prop_map(|(mut ts, salt)| {
        ts.extend(0..=30);
        ts.insert(1199);
        let samples = ts
            .into_iter()
            .map(|t| {
                let k = (t as u64).wrapping_mul(0x9e37_79b9).wrapping_add(salt);
                let hr = match k % 13 {
                    0 => Some(0.0),
                    1 => None,
                    _ => Some(100.0 + (k % 60) as f64),
                };
                Sample {
                    t,
                    heart_rate: hr,
                    power: (k % 11 != 0).then(|| (k % 400) as f64),
                    speed: Some(20.0 + (k % 17) as f64),
                    distance: Some(t as f64 * 0.009),
                    cadence: (k % 7 != 0).then(|| 70.0 + (k % 30) as f64),
                    altitude: Some(50.0 + (k % 23) as f64),
                }
            })
            .collect();
        Session { session_id: format!("g{salt}"), rider_id: "r".into(), samples }
    })
}

/// Lag of every sample: the last positive heart rate at or before `t − 30`.
fn oracle_lag_gappy(session: &Session) -> Vec<(u32, Option<f64>)> {
    let mut bins: std::collections::BTreeMap<u32, (f64, usize)> = Default::default();
    for s in &session.samples {
        let e = bins.entry(common::oracle_bin(s.t)).or_default();
        if s.t < 30 {
            continue;
        }
        let lag = session
            .samples
            .iter()
            .filter(|u| u.t + 30 <= s.t)
            .filter_map(|u| u.heart_rate.filter(|&v| v > 0.0))
            .last();
        if let Some(v) = lag {
            e.0 += v;
            e.1 += 1;
        }
    }
    bins.into_iter().filter(|(b, _)| *b >= 9).map(|(b, (s, n))| (b, (n > 0).then(|| s / n as f64))).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pipeline_is_bit_deterministic(s in gappy_session()) {
        let p = common::profile("r", 72.0);
        let a = build_raw_features(&s, &p).unwrap();
        let b = build_raw_features(&s.clone(), &p).unwrap();
        prop_assert_eq!(&a, &b);
        let st = Standardizer::<f64>::fit(std::slice::from_ref(&a)).unwrap();
        let (ma, mb) = (st.apply(&a), st.apply(&b));
        let bits = |m: &cyclehr::FeatureMatrix| m.rows.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&ma), bits(&mb));
    }

    #[test]
    fn length_is_distinct_bins_minus_nine(s in gappy_session()) {
        let raw = build_raw_features(&s, &common::profile("r", 72.0)).unwrap();
        let bins: BTreeSet<u32> = s.samples.iter().map(|x| common::oracle_bin(x.t)).collect();
        let dropped = bins.iter().filter(|&&b| b < FIRST_KEPT_BIN).count();
        prop_assert_eq!(dropped, 9);
        prop_assert_eq!(raw.len(), bins.len() - 9);
    }

    #[test]
    fn lag_matches_shift_oracle_with_gaps(s in gappy_session()) {
        let raw = build_raw_features(&s, &common::profile("r", 72.0)).unwrap();
        let want = oracle_lag_gappy(&s);
        prop_assert_eq!(raw.bins.clone(), want.iter().map(|w| w.0).collect::<Vec<_>>());
        for (row, (_, w)) in raw.rows.iter().zip(&want) {
            match (row[HR_LAG_COLUMN], w) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9),
                (a, b) => prop_assert_eq!(a, *b),
            }
        }
    }

    #[test]
    fn targets_match_bin_oracle(s in gappy_session()) {
        let raw = build_raw_features(&s, &common::profile("r", 72.0)).unwrap();
        for (got, (_, want)) in raw.targets.iter().zip(common::oracle_target_by_bin(&s)) {
            match (got, want) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9),
                (a, b) => prop_assert_eq!(*a, b),
            }
        }
    }

    #[test]
    fn standardization_round_trips(s in gappy_session()) {
        let p = common::profile("r", 72.0);
        let raw = build_raw_features(&s, &p).unwrap();
        let st = Standardizer::<f64>::fit(std::slice::from_ref(&raw)).unwrap();
        let m = build_features(&s, &p, &st).unwrap();
        for (i, row) in raw.rows.iter().enumerate() {
            for (c, cell) in row.iter().enumerate() {
                match cell {
                    Some(v) => prop_assert!((st.destandardize(c, m.rows[i][c]) - v).abs() < 1e-9),
                    None => prop_assert_eq!(m.rows[i][c], 0.0),
                }
            }
            match raw.targets[i] {
                Some(y) => {
                    prop_assert!(m.target_mask[i]);
                    prop_assert!((st.destandardize_target(m.targets[i]) - y).abs() < 1e-9);
                }
                None => prop_assert!(!m.target_mask[i]),
            }
        }
    }
}

#[test]
fn standardizer_uses_training_rows_only() {
    let a = common::session_from("a", "r1", |t| 100.0 + (t % 9) as f64, 300);
    let b = common::session_from("b", "r2", |t| 160.0 + (t % 5) as f64, 300);
    let p = common::profile("r", 70.0);
    let (st, _) = fit_and_build::<f64>(&[(a.clone(), p.clone())]).unwrap();
    let (st_both, _) = fit_and_build::<f64>(&[(a, p.clone()), (b, p)]).unwrap();
    assert!(st.target_mean < 105.0);
    assert!(st_both.target_mean > st.target_mean + 20.0);
}

#[test]
fn f32_and_f64_agree() {
    let s = common::session_from("a", "r", |t| 120.0 + 15.0 * (t as f64 / 60.0).sin(), 900);
    let p = common::profile("r", 70.0);
    let (st64, m64) = fit_and_build::<f64>(&[(s.clone(), p.clone())]).unwrap();
    let (_, m32) = fit_and_build::<f32>(&[(s, p)]).unwrap();
    for (r64, r32) in m64[0].rows.iter().zip(&m32[0].rows) {
        for (a, b) in r64.iter().zip(r32) {
            assert!((a - *b as f64).abs() < 1e-4, "{a} vs {b}");
        }
    }
    assert!(st64.target_std > 0.0);
}

#[test]
fn short_sessions_are_reported() {
    let s = common::session_from("short", "r", |_| 100.0, 30);
    assert!(matches!(
        build_raw_features(&s, &common::profile("r", 70.0)),
        Err(FeatureError::TooShort { last_t: 29, .. })
    ));
}

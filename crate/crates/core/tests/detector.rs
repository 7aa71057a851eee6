use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::Duration;
use nalgebra::{DMatrix, DVector};
use phasorwatch::detector::{
    conditional_scores, cooccurrence_counts, mahalanobis_score, BufferUpdate, EventSignal,
    Scorer,
};
use phasorwatch::synth::default_start;
use phasorwatch::{AnomalyEvent, DetectorConfig, DetectorState, Mode, TriggerSet, VarModel};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn spd_from(entries: &[f64]) -> DMatrix<f64> {
    let b = DMatrix::from_row_slice(4, 4, entries);
    &b * b.transpose() + DMatrix::identity(4, 4) * 0.5
}

fn arb_spd() -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0f64..2.0, 16).prop_map(|v| spd_from(&v))
}

fn arb_residual() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, 4)
}

fn arb_invertible() -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, 16).prop_filter_map("ill-conditioned", |v| {
        let m = DMatrix::from_row_slice(4, 4, &v) + DMatrix::identity(4, 4) * 2.0;
        let sv = m.clone().svd(false, false).singular_values;
        (sv.min() > 0.2).then_some(m)
    })
}

/// Conditional score by partitioning sigma directly.
fn schur_conditional(r: &[f64], sigma: &DMatrix<f64>, k: usize) -> f64 {
    let rest: Vec<usize> = (0..4).filter(|&i| i != k).collect();
    let s_oo = DMatrix::from_fn(3, 3, |i, j| sigma[(rest[i], rest[j])]);
    let s_ko = DMatrix::from_fn(1, 3, |_, j| sigma[(k, rest[j])]);
    let r_o = DVector::from_fn(3, |i, _| r[rest[i]]);
    let inv = s_oo.try_inverse().unwrap();
    let mean = (&s_ko * &inv * &r_o)[(0, 0)];
    let var = sigma[(k, k)] - (&s_ko * &inv * s_ko.transpose())[(0, 0)];
    (r[k] - mean).abs() / var.sqrt()
}

proptest! {
    #[test]
    fn mahalanobis_is_invariant_under_linear_maps(
        sigma in arb_spd(),
        r in arb_residual(),
        m in arb_invertible(),
    ) {
        let rv = DVector::from_vec(r.clone());
        let mr = &m * rv;
        let ms = &m * &sigma * m.transpose();
        let ms = (&ms + ms.transpose()) * 0.5;
        let a = mahalanobis_score(&r, &sigma).unwrap();
        let b = mahalanobis_score(mr.as_slice(), &ms).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * (1.0 + a), "{a} vs {b}");
    }

    #[test]
    fn mahalanobis_matches_whitened_norm(sigma in arb_spd(), r in arb_residual()) {
        let l = sigma.clone().cholesky().unwrap().l();
        let z = l.solve_lower_triangular(&DVector::from_vec(r.clone())).unwrap();
        let direct = (DVector::from_vec(r.clone()).transpose()
            * sigma.clone().try_inverse().unwrap()
            * DVector::from_vec(r.clone()))[(0, 0)]
            .sqrt();
        let m = mahalanobis_score(&r, &sigma).unwrap();
        prop_assert!((m - z.norm()).abs() < 1e-9 * (1.0 + m));
        prop_assert!((m - direct).abs() < 1e-9 * (1.0 + m));
    }

    #[test]
    fn conditional_matches_schur_complement(sigma in arb_spd(), r in arb_residual()) {
        let got = conditional_scores(&r, &sigma).unwrap();
        for k in 0..4 {
            let want = schur_conditional(&r, &sigma, k);
            prop_assert!((got[k] - want).abs() < 1e-6 * (1.0 + want), "k={k} {} vs {want}", got[k]);
        }
    }

    #[test]
    fn conditional_never_exceeds_mahalanobis(sigma in arb_spd(), r in arb_residual()) {
        let m = mahalanobis_score(&r, &sigma).unwrap();
        for c in conditional_scores(&r, &sigma).unwrap() {
            prop_assert!(c <= m * (1.0 + 1e-12) + 1e-12);
        }
    }

    #[test]
    fn diagonal_conditional_is_standardized_residual(
        d in prop::collection::vec(0.01f64..10.0, 4),
        r in arb_residual(),
    ) {
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(d.clone()));
        let c = conditional_scores(&r, &sigma).unwrap();
        for k in 0..4 {
            let want = r[k].abs() / d[k].sqrt();
            prop_assert!((c[k] - want).abs() < 1e-12 * (1.0 + want));
        }
    }

    #[test]
    fn any_channel_trigger_implies_multivariate(
        sigma in arb_spd(),
        r in arb_residual(),
        t in 0.5f64..5.0,
    ) {
        let score = Scorer::new(&sigma).unwrap().score(default_start(), [r[0], r[1], r[2], r[3]]);
        let set = TriggerSet::from_score(&score, t);
        if set.channels().next().is_some() {
            prop_assert!(set.has_multivariate());
        }
    }
}

/// White-noise model with identity covariance.
fn white_model() -> Arc<VarModel> {
    Arc::new(
        VarModel::new(
            DVector::zeros(4),
            vec![DMatrix::zeros(4, 4)],
            DMatrix::identity(4, 4),
        )
        .unwrap(),
    )
}

fn installed(threshold: f64, horizon: usize) -> DetectorState {
    let mut st = DetectorState::new(DetectorConfig {
        threshold,
        horizon,
        lag_order: 1,
    })
    .unwrap();
    let window = vec![[0.0; 4]; 50];
    st.install(&window, &[false; 50], white_model()).unwrap();
    st
}

fn ts(i: i64) -> chrono::DateTime<chrono::Utc> {
    default_start() + Duration::milliseconds(500 * i)
}

#[test]
fn large_voltage_deviation_opens_event() {
    let mut st = installed(12.0, 10);
    let out = st.step(ts(0), [20.0, 0.0, 0.0, 0.0]).unwrap();
    assert_eq!(st.mode(), Mode::Anomaly);
    let expected = TriggerSet::from_names(&["multivariate", "V"]).unwrap();
    assert_eq!(out.signal, Some(EventSignal::Opened(expected)));
    assert!((out.score.mahalanobis - 20.0).abs() < 1e-6);
}

#[test]
fn exact_prediction_scores_zero() {
    let mut st = installed(12.0, 10);
    let out = st.step(ts(0), [0.0; 4]).unwrap();
    assert_eq!(out.score.mahalanobis, 0.0);
    assert!(out.score.conditional.iter().all(|&c| c == 0.0));
    assert_eq!(out.buffer, BufferUpdate::Appended);
}

#[test]
fn single_spike_gives_one_event_closed_after_horizon() {
    let q = 10;
    let mut st = installed(12.0, q);
    let mut opened = Vec::new();
    let mut closed = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..200 {
        let mut obs = [0.0; 4];
        for v in obs.iter_mut() {
            *v = 0.1 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
        }
        if i == 50 {
            obs[0] += 15.0;
        }
        let out = st.step(ts(i), obs).unwrap();
        match out.signal {
            Some(EventSignal::Opened(_)) => opened.push(i),
            Some(EventSignal::Closed { imputed, persisted }) => {
                closed.push(i);
                assert_eq!(imputed, 1);
                assert!(!persisted);
            }
            None => {}
        }
    }
    assert_eq!(opened, vec![50]);
    assert_eq!(closed, vec![50 + q as i64]);
}

#[test]
fn detector_is_deterministic() {
    let model = VarModel::from_rows(
        &[0.0; 4],
        &[&[
            0.5, 0.1, 0.0, 0.0, 0.0, 0.4, 0.1, 0.0, 0.0, 0.0, 0.3, 0.1, 0.1, 0.0, 0.0, 0.2,
        ]],
        &[1.0, 0.2, 0.0, 0.0, 0.2, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0],
    )
    .unwrap();
    let run = || {
        let y = model.simulate(3000, 99).unwrap();
        let pts: Vec<[f64; 4]> = y.iter().map(|v| [v[0], v[1], v[2], v[3]]).collect();
        let mut st = DetectorState::new(DetectorConfig {
            threshold: 3.5,
            horizon: 5,
            lag_order: 1,
        })
        .unwrap();
        st.initialize(&pts[..600]).unwrap();
        let mut log = Vec::new();
        for (i, p) in pts[600..].iter().enumerate() {
            let out = st.step(ts(i as i64), *p).unwrap();
            log.push(format!("{:?}", out));
            if st.needs_retrain() && i % 100 == 0 {
                st.retrain().unwrap();
            }
        }
        log
    };
    assert_eq!(run(), run());
}

#[test]
fn false_alarm_rate_on_own_model() {
    // 2e5 draws at T=3: chi-square(4) tail e^{-x/2}(1 + x/2) with x = 9.
    let sigma = spd_from(&[
        1.0, 0.2, 0.0, 0.1, 0.0, 0.8, 0.3, 0.0, 0.2, 0.0, 0.5, 0.0, 0.0, 0.1, 0.0, 0.9,
    ]);
    let scorer = Scorer::new(&sigma).unwrap();
    let l = sigma.clone().cholesky().unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 200_000;
    let mut hits = 0;
    for _ in 0..n {
        let z = DVector::from_fn(4, |_, _| {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        let r = &l * z;
        if scorer.mahalanobis(r.as_slice()) > 3.0 {
            hits += 1;
        }
    }
    let rate = hits as f64 / n as f64;
    let expected = (-4.5f64).exp() * 5.5;
    assert!((rate / expected - 1.0).abs() < 0.05, "{rate} vs {expected}");
}

fn event_with(set: TriggerSet, id: u64) -> AnomalyEvent {
    AnomalyEvent {
        event_id: id,
        start_timestamp: ts(id as i64),
        end_timestamp: None,
        threshold: 12.0,
        trigger_set: set,
        score_window: vec![],
        raw_window: vec![],
        standardized_window: vec![],
        class_label: None,
        label_source: None,
    }
}

#[test]
fn cooccurrence_counts_partition_events() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let events: Vec<AnomalyEvent> = (0..300)
        .map(|i| {
            let bits: u8 = rand::Rng::random_range(&mut rng, 1..32);
            let names: Vec<&str> = (0..5)
                .filter(|b| bits & (1 << b) != 0)
                .map(|b| phasorwatch::detector::TRIGGER_NAMES[b])
                .collect();
            event_with(TriggerSet::from_names(&names).unwrap(), i)
        })
        .collect();
    let counts: BTreeMap<TriggerSet, usize> = cooccurrence_counts(events.iter());
    assert_eq!(counts.values().sum::<usize>(), events.len());
    for (set, n) in &counts {
        assert_eq!(*n, events.iter().filter(|e| e.trigger_set == *set).count());
    }
}

use nalgebra::{DMatrix, DVector};
use phasorwatch::hyperlab::{
    drift_experiment, lag_depth_experiment, matrix_distance, retrain_error_experiment,
    GroundTruth, LabConfig,
};
use phasorwatch::synth::default_start;
use phasorwatch::{ChannelVector, Error, VarModel};
use proptest::prelude::*;

fn arb_matrix() -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0f64..3.0, 16).prop_map(|v| DMatrix::from_vec(4, 4, v))
}

proptest! {
    #[test]
    fn distance_is_a_metric(a in arb_matrix(), b in arb_matrix(), c in arb_matrix()) {
        let ab = matrix_distance(&a, &b).unwrap();
        prop_assert_eq!(matrix_distance(&a, &a).unwrap(), 0.0);
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, matrix_distance(&b, &a).unwrap());
        let via = matrix_distance(&a, &c).unwrap() + matrix_distance(&c, &b).unwrap();
        prop_assert!(ab <= via + 1e-12);
        if a != b {
            prop_assert!(ab > 0.0);
        }
    }
}

fn rotation(r: f64, th: f64) -> [f64; 4] {
    [r * th.cos(), -r * th.sin(), r * th.sin(), r * th.cos()]
}

fn noiseless_var1() -> VarModel {
    let (b1, b2) = (rotation(0.98, 0.4), rotation(0.97, 1.3));
    let a = DMatrix::from_row_slice(
        4,
        4,
        &[
            b1[0], b1[1], 0.0, 0.0, b1[2], b1[3], 0.0, 0.0, 0.0, 0.0, b2[0], b2[1], 0.0, 0.0,
            b2[2], b2[3],
        ],
    );
    VarModel::new(DVector::from_element(4, 0.1), vec![a], DMatrix::zeros(4, 4)).unwrap()
}

/// Decoupled AR(2) channels with complex roots of modulus r_k.
fn noiseless_var2() -> VarModel {
    let params = [(0.99, 0.3), (0.98, 0.7), (0.97, 1.1), (0.985, 1.7)];
    let a1 = DMatrix::from_diagonal(&DVector::from_iterator(
        4,
        params.iter().map(|&(r, th)| 2.0 * r * f64::cos(th)),
    ));
    let a2 = DMatrix::from_diagonal(&DVector::from_iterator(4, params.iter().map(|&(r, _)| -r * r)));
    VarModel::new(DVector::zeros(4), vec![a1, a2], DMatrix::zeros(4, 4)).unwrap()
}

#[test]
fn zero_noise_retraining_is_exact() {
    let cfg = LabConfig::default();
    let m1 = noiseless_var1();
    let r1 = retrain_error_experiment(&GroundTruth::Fixed(&m1), &[0.5, 2.0], 3, 1, &cfg).unwrap();
    let m2 = noiseless_var2();
    let r2 = lag_depth_experiment(&GroundTruth::Fixed(&m2), &[(2, 0.5), (2, 2.0)], 3, 1, &cfg).unwrap();
    for d in r1.distributions.iter().chain(&r2.distributions) {
        assert!(d.values.iter().all(|&v| v < 1e-6), "{:?}", d.values);
    }
}

#[test]
fn experiments_are_deterministic_per_seed() {
    let cfg = LabConfig::default();
    let src = GroundTruth::RandomStable { dim: 4 };
    let a = retrain_error_experiment(&src, &[0.5, 1.0], 4, 77, &cfg).unwrap();
    let b = retrain_error_experiment(&src, &[0.5, 1.0], 4, 77, &cfg).unwrap();
    let c = retrain_error_experiment(&src, &[0.5, 1.0], 4, 78, &cfg).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_ne!(a.to_csv(), c.to_csv());
}

#[test]
fn retraining_error_falls_with_window_length() {
    let cfg = LabConfig::default();
    let r = retrain_error_experiment(&GroundTruth::RandomStable { dim: 4 }, &[0.5, 2.0, 8.0], 20, 3, &cfg)
        .unwrap();
    let m = r.medians();
    assert!(m[0] > m[1] && m[1] > m[2], "{m:?}");
}

fn to_series(y: &[Vec<f64>]) -> Vec<ChannelVector> {
    y.iter()
        .enumerate()
        .map(|(i, v)| {
            ChannelVector::new(
                default_start() + chrono::Duration::milliseconds(500 * i as i64),
                [v[0], v[1], v[2], v[3]],
            )
        })
        .collect()
}

fn drift_model(a: f64) -> VarModel {
    VarModel::new(
        DVector::zeros(4),
        vec![DMatrix::identity(4, 4) * a],
        DMatrix::identity(4, 4),
    )
    .unwrap()
}

#[test]
fn stationary_drift_shrinks_with_window() {
    let y = drift_model(0.6).simulate(48_000, 5).unwrap();
    let r = drift_experiment(&to_series(&y), &[1.0, 4.0, 20.0], &LabConfig::default()).unwrap();
    let m = r.medians();
    assert!(m[0] > m[1] && m[1] > m[2], "{m:?}");
    assert_eq!(r.replicate_count, None);
}

#[test]
fn regime_switches_keep_drift_from_vanishing() {
    // Alternating regimes every 10 minutes: long windows average over both.
    let mut series = Vec::new();
    for block in 0..40 {
        let a = if block % 2 == 0 { 0.2 } else { 0.8 };
        series.extend(drift_model(a).simulate(1200, block).unwrap());
    }
    let stationary = drift_model(0.5).simulate(series.len(), 1).unwrap();
    let cfg = LabConfig::default();
    let switching = drift_experiment(&to_series(&series), &[1.0, 10.0], &cfg).unwrap().medians();
    let calm = drift_experiment(&to_series(&stationary), &[1.0, 10.0], &cfg).unwrap().medians();
    assert!(switching[1] > 3.0 * calm[1], "{switching:?} vs {calm:?}");
}

#[test]
fn window_longer_than_series_is_rejected() {
    let y = drift_model(0.5).simulate(1000, 1).unwrap();
    let err = drift_experiment(&to_series(&y), &[10.0], &LabConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Length { .. }));
}

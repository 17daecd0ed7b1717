use nalgebra::DMatrix;
use pcs_core::anomaly::{detect_anomaly, detect_anomaly_with, ks_critical, ks_statistic};
use pcs_core::classifier::{LikelihoodRecord, PcsModel};
use pcs_core::dictionary::Dictionary;
use pcs_core::patches::PatchConfig;
use pcs_core::rng::rng_from_seed;
use pcs_core::solver::SpikeSlabParams;
use pcs_core::PcsError;
use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::Rng;

fn model(reference: Vec<f64>) -> PcsModel {
    let atoms = DMatrix::identity(2, 2);
    let dict =
        Dictionary::new(atoms, vec![vec![0], vec![1]], vec!["a".into(), "b".into()]).unwrap();
    let params = SpikeSlabParams::uniform(1e-3, 0.05, 2).unwrap();
    let other = reference.iter().map(|v| 1.0 - v).collect();
    PcsModel::new(dict, params, PatchConfig::default(), vec![reference, other]).unwrap()
}

/// A record whose class-0 normalised column is exactly `values` (all > 0.5,
/// so class 0 wins).
fn record(values: &[f64]) -> LikelihoodRecord {
    let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v, 1.0 - v]).collect();
    let r = LikelihoodRecord::from_affinities(&rows).unwrap();
    assert_eq!(r.predicted, 0);
    r
}

fn reference() -> Vec<f64> {
    let mut rng = rng_from_seed(31);
    (0..200).map(|_| rng.random_range(0.55..0.95)).collect()
}

#[test]
fn sample_from_reference_is_not_flagged() {
    let reference = reference();
    let m = model(reference.clone());
    let mut rng = rng_from_seed(5);
    let test: Vec<f64> = (0..30)
        .map(|_| *reference.choose(&mut rng).unwrap())
        .collect();
    let d = detect_anomaly(&record(&test), &m, 0.001).unwrap();
    assert!(!d.flagged, "{d:?}");
    assert_eq!(d.assigned_class, 0);
    assert_eq!(d.assigned_label, "a");
}

#[test]
fn shifted_sample_is_flagged() {
    let reference = reference();
    let m = model(reference.clone());
    let shifted: Vec<f64> = reference[..30]
        .iter()
        .map(|v| (v + 0.5).min(0.999))
        .collect();
    let d = detect_anomaly(&record(&shifted), &m, 0.001).unwrap();
    assert!(d.flagged);
    assert!(d.statistic > 0.99);
}

#[test]
fn too_few_test_patches() {
    let m = model(reference());
    let err = detect_anomaly_with(&record(&[0.7, 0.8, 0.9]), &m, 0.001, 5).unwrap_err();
    assert!(matches!(err, PcsError::InsufficientData(_)));
}

#[test]
fn critical_value_is_strictly_decreasing() {
    let base = ks_critical(0.001, 50, 50).unwrap();
    assert!(ks_critical(0.001, 51, 50).unwrap() < base);
    assert!(ks_critical(0.001, 50, 51).unwrap() < base);
    assert!(ks_critical(0.01, 50, 50).unwrap() < base);
    assert!((ks_critical(0.001, 1000, 1000).unwrap() - 0.08719).abs() < 1e-5);
    assert!(ks_critical(1.5, 10, 10).is_err());
    assert!(ks_critical(0.0, 10, 10).is_err());
}

fn samples() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0f64..1.0, 1..40)
}

proptest! {
    #[test]
    fn statistic_is_symmetric_and_bounded(a in samples(), b in samples()) {
        let ab = ks_statistic(&a, &b).unwrap();
        let ba = ks_statistic(&b, &a).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn statistic_ignores_order(a in samples(), b in samples(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut rng = rng_from_seed(seed);
        let (mut pa, mut pb) = (a.clone(), b.clone());
        pa.shuffle(&mut rng);
        pb.shuffle(&mut rng);
        prop_assert_eq!(ks_statistic(&a, &b).unwrap(), ks_statistic(&pa, &pb).unwrap());
    }

    /// Tightening α from 0.001 to 0.0001 raises the threshold, so an
    /// unflagged image stays unflagged.
    #[test]
    fn lower_alpha_never_adds_flags(values in proptest::collection::vec(0.51f64..0.999, 5..40)) {
        let m = model(reference());
        let r = record(&values);
        let loose = detect_anomaly(&r, &m, 0.001).unwrap();
        let strict = detect_anomaly(&r, &m, 0.0001).unwrap();
        prop_assert!(strict.threshold > loose.threshold);
        prop_assert!(!strict.flagged || loose.flagged);
    }
}

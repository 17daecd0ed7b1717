use nalgebra::{DMatrix, DVector};
use pcs_core::classifier::{
    classify_patch_set, residual_affinity, CvConfig, LikelihoodRecord, PcsModel,
};
use pcs_core::dictionary::{normalize_columns, Dictionary};
use pcs_core::eval::{evaluate, LabeledImage};
use pcs_core::harness::{image_patches, train_pcs, TrainSettings};
use pcs_core::image::{Image, WindowRegime};
use pcs_core::patches::{PatchConfig, PatchSet};
use pcs_core::rng::rng_from_seed;
use pcs_core::solver::SpikeSlabParams;
use pcs_core::synth::{capture_spec, render_scene, Shape};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn rows_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..6, 2usize..5).prop_flat_map(|(c, k)| {
        proptest::collection::vec(proptest::collection::vec(1e-3f64..1e8, k), c)
    })
}

proptest! {
    #[test]
    fn normalised_rows_are_distributions(rows in rows_strategy()) {
        let r = LikelihoodRecord::from_affinities(&rows).unwrap();
        for row in r.normalized.row_iter() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|v| *v > 0.0 && *v < 1.0));
        }
        let best = r.log_likelihoods.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(r.log_likelihoods[r.predicted], best);
    }

    #[test]
    fn per_patch_scaling_keeps_the_label(rows in rows_strategy(), scales in proptest::collection::vec(1e-3f64..1e3, 6)) {
        let base = LikelihoodRecord::from_affinities(&rows).unwrap();
        let scaled: Vec<Vec<f64>> = rows
            .iter()
            .zip(&scales)
            .map(|(row, s)| row.iter().map(|v| v * s).collect())
            .collect();
        let r = LikelihoodRecord::from_affinities(&scaled).unwrap();
        prop_assert_eq!(r.predicted, base.predicted);
    }

    #[test]
    fn patch_order_does_not_matter(rows in rows_strategy(), seed in any::<u64>()) {
        let base = LikelihoodRecord::from_affinities(&rows).unwrap();
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut rng_from_seed(seed));
        let r = LikelihoodRecord::from_affinities(&shuffled).unwrap();
        prop_assert_eq!(r.predicted, base.predicted);
        for (a, b) in r.log_likelihoods.iter().zip(&base.log_likelihoods) {
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        }
    }
}

#[test]
fn other_class_affinity_is_one_for_unit_patch() {
    let atoms = normalize_columns(DMatrix::from_column_slice(
        3,
        3,
        &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0],
    ))
    .unwrap();
    let dict = Dictionary::new(
        atoms,
        vec![vec![0, 1], vec![2]],
        vec!["a".into(), "b".into()],
    )
    .unwrap();
    let y = DVector::from_vec(vec![0.6, 0.8, 0.0]);
    let beta = DVector::from_vec(vec![0.3, 0.5, 0.0]);
    let r = residual_affinity(&y, &dict, &beta, 1e-8).unwrap();
    assert!((r[1] - 1.0).abs() < 1e-15);
}

fn images(shape: Shape, range: std::ops::Range<usize>) -> Vec<Image> {
    range
        .map(|i| render_scene(&capture_spec(shape, i, WindowRegime::Narrow, 3, true)).unwrap())
        .collect()
}

fn settings() -> TrainSettings {
    let mut s = TrainSettings::default();
    s.patch.threshold_percentile = 80.0;
    s.patch.min_survive_fraction = 0.25;
    s.dfdl.atoms_per_class = 16;
    s.dfdl.outer_iters = 4;
    s.cv = CvConfig {
        trials: 6,
        xi_min: 0.01,
        xi_max: 0.1,
        seed: 2,
        ..CvConfig::default()
    };
    s
}

#[test]
fn training_contracts_and_model_round_trip() {
    let shapes = [Shape::Block, Shape::Sphere];
    let labels: Vec<String> = shapes.iter().map(|s| s.as_str().to_string()).collect();
    let train: Vec<Vec<Image>> = shapes.iter().map(|&s| images(s, 0..8)).collect();
    let trained = train_pcs(&train, &labels, &settings()).unwrap();

    // The winner is the best trial, earliest among ties.
    let accs: Vec<f64> = trained.cv.trials.iter().map(|t| t.accuracy).collect();
    let best = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(
        trained.cv.best_trial,
        accs.iter().position(|a| *a == best).unwrap()
    );
    assert_eq!(
        trained.model.params.xi,
        trained.cv.trials[trained.cv.best_trial].xi
    );
    // Two of eight images per class are held out, 17 patches each.
    for refs in &trained.model.reference_samples {
        assert_eq!(refs.len(), 2 * 17);
        assert!(refs.iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.pcsd");
    trained.model.save(&path).unwrap();
    let loaded = PcsModel::load(&path).unwrap();
    assert_eq!(loaded.dictionary(), trained.model.dictionary());
    assert_eq!(loaded.params, trained.model.params);
    assert_eq!(loaded.patch_config, trained.model.patch_config);
    assert_eq!(loaded.reference_samples, trained.model.reference_samples);

    // Memorised data comes back with its own label, deterministically.
    let tests: Vec<LabeledImage> = train
        .iter()
        .enumerate()
        .flat_map(|(class, ims)| {
            ims.iter().take(3).map(move |im| LabeledImage {
                image: im.clone(),
                class,
            })
        })
        .collect();
    let a = evaluate(&trained.model, &tests, WindowRegime::Narrow, None).unwrap();
    let b = evaluate(&loaded, &tests, WindowRegime::Narrow, None).unwrap();
    assert_eq!(a, b);
    assert!(a.mean_recall >= 0.5);

    let patches = image_patches(&train[0][0], &trained.model.patch_config, 0)
        .unwrap()
        .unwrap();
    let r1 = classify_patch_set(&patches, &trained.model).unwrap();
    let r2 = classify_patch_set(&patches, &trained.model).unwrap();
    assert_eq!(r1, r2);
}

#[test]
fn cross_validation_needs_two_classes_and_a_holdout() {
    let labels = vec!["block".to_string()];
    assert!(train_pcs(&[images(Shape::Block, 0..4)], &labels, &settings()).is_err());
    let two = vec!["block".to_string(), "cone".to_string()];
    let single = vec![images(Shape::Block, 0..1), images(Shape::Cone, 0..4)];
    assert!(train_pcs(&single, &two, &settings()).is_err());
}

#[test]
fn small_images_are_rejected() {
    let atoms = DMatrix::identity(256, 2);
    let dict =
        Dictionary::new(atoms, vec![vec![0], vec![1]], vec!["a".into(), "b".into()]).unwrap();
    let params = SpikeSlabParams::uniform(1e-3, 0.05, 2).unwrap();
    let refs = vec![vec![0.5; 20]; 2];
    let model = PcsModel::new(dict, params, PatchConfig::default(), refs).unwrap();
    let tiny = Image::new(DMatrix::from_element(8, 8, 1.0), WindowRegime::Narrow).unwrap();
    let tests = [LabeledImage {
        image: tiny,
        class: 0,
    }];
    assert!(evaluate(&model, &tests, WindowRegime::Narrow, None).is_err());
    assert!(classify_patch_set(&PatchSet::default(), &model).is_err());
}

//! Seeded fixtures shared by the benchmarks.

use nalgebra::{DMatrix, DVector};
use pcs_core::dictionary::{normalize_columns, Dictionary};
use pcs_core::harness::{synthetic_dataset, train_pcs, TrainSettings};
use pcs_core::rng::rng_from_seed;
use pcs_core::{Image, PcsModel, RunConfig, SpikeSlabParams, WindowRegime};
use rand::Rng;
use rand_distr::StandardNormal;

/// Gaussian unit-norm dictionary of `m` atoms in `k` equal classes, and a
/// unit-norm observation.
pub fn gaussian_problem(n: usize, m: usize, k: usize, seed: u64) -> (DVector<f64>, Dictionary) {
    let mut rng = rng_from_seed(seed);
    let atoms =
        normalize_columns(DMatrix::from_fn(n, m, |_, _| rng.sample(StandardNormal))).unwrap();
    let per = m / k;
    let sets = (0..k)
        .map(|c| (c * per..if c + 1 == k { m } else { (c + 1) * per }).collect())
        .collect();
    let labels = (0..k).map(|c| format!("c{c}")).collect();
    let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
    (y, Dictionary::new(atoms, sets, labels).unwrap())
}

pub fn uniform_params(xi: f64, k: usize) -> SpikeSlabParams {
    SpikeSlabParams::uniform(1e-3, xi, k).unwrap()
}

/// A small model on the synthetic narrow set, plus test images from the
/// same classes.
pub fn small_model() -> (PcsModel, Vec<Image>) {
    let mut config = RunConfig::default();
    config.patch.threshold_percentile = 80.0;
    config.patch.min_survive_fraction = 0.25;
    config.cv.xi_min = 0.01;
    config.cv.xi_max = 0.1;
    config.cv.trials = 3;
    config.dfdl.atoms_per_class = 32;
    let data = synthetic_dataset(&config).unwrap();
    let train: Vec<Vec<Image>> = (0..data.labels.len())
        .map(|k| {
            data.class_images(WindowRegime::Narrow, k)[..12]
                .iter()
                .map(|n| n.image.clone())
                .collect()
        })
        .collect();
    let tests = (0..data.labels.len())
        .map(|k| data.class_images(WindowRegime::Narrow, k)[50].image.clone())
        .collect();
    let trained = train_pcs(&train, &data.labels, &TrainSettings::from_config(&config)).unwrap();
    (trained.model, tests)
}

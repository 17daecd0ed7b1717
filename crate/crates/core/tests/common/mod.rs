#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pcs_core::dictionary::{normalize_columns, Dictionary};
use pcs_core::rng::{derive_seed, rng_from_seed};
use pcs_core::solver::SpikeSlabParams;
use rand::Rng;
use rand_distr::StandardNormal;

/// Seeded Gaussian instance: unit-norm N×M dictionary split evenly into K
/// classes, Gaussian observation, ξ log-uniform in (xi_lo, xi_hi].
pub fn random_instance(
    seed: u64,
    n: usize,
    m: usize,
    k: usize,
    xi_lo: f64,
    xi_hi: f64,
) -> (DVector<f64>, Dictionary, SpikeSlabParams) {
    let mut rng = rng_from_seed(derive_seed(seed, 0xA11CE));
    let atoms = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let atoms = normalize_columns(atoms).unwrap();
    let per = m / k;
    let sets: Vec<Vec<usize>> = (0..k)
        .map(|c| {
            let end = if c + 1 == k { m } else { (c + 1) * per };
            (c * per..end).collect()
        })
        .collect();
    let labels = (0..k).map(|c| format!("c{c}")).collect();
    let dict = Dictionary::new(atoms, sets, labels).unwrap();
    let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let (lo, hi) = (xi_lo.ln(), xi_hi.ln());
    let xi = (0..k)
        .map(|_| {
            let u: f64 = 1.0 - rng.random::<f64>(); // (0,1]
            (lo + u * (hi - lo)).exp()
        })
        .collect();
    let params = SpikeSlabParams::new(1e-3, xi).unwrap();
    (y, dict, params)
}

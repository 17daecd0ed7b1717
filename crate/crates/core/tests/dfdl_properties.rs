use pcs_core::dfdl::{dfdl_objective, learn_dictionary, sparse_code_omp, DfdlConfig};
use pcs_core::harness::image_patches;
use pcs_core::image::WindowRegime;
use pcs_core::patches::{PatchConfig, PatchSet};
use pcs_core::synth::{capture_spec, render_scene, Shape};

fn pools(shapes: &[Shape], images: usize) -> (Vec<PatchSet>, Vec<String>) {
    let config = PatchConfig {
        threshold_percentile: 80.0,
        min_survive_fraction: 0.25,
        patches_per_image: 8,
        ..PatchConfig::default()
    };
    let pools = shapes
        .iter()
        .map(|&s| {
            let mut pool = PatchSet::default();
            for i in 0..images {
                let image =
                    render_scene(&capture_spec(s, i, WindowRegime::Narrow, 9, true)).unwrap();
                pool.extend(image_patches(&image, &config, i as u64).unwrap().unwrap());
            }
            pool
        })
        .collect();
    (
        pools,
        shapes.iter().map(|s| s.as_str().to_string()).collect(),
    )
}

fn config() -> DfdlConfig {
    DfdlConfig {
        atoms_per_class: 12,
        outer_iters: 6,
        seed: 4,
        ..DfdlConfig::default()
    }
}

#[test]
fn every_accepted_step_is_non_increasing() {
    let (pools, labels) = pools(&[Shape::Block, Shape::Sphere, Shape::Cone], 5);
    let learned = learn_dictionary(&pools, &labels, &config()).unwrap();
    assert_eq!(learned.trace.len(), 3 * 6);
    for step in &learned.trace {
        if step.accepted {
            assert!(
                step.objective_after <= step.objective_before + 1e-9,
                "{step:?}"
            );
        }
        assert!(step.max_norm_error <= 1e-10);
    }
    assert_eq!(learned.dictionary.num_atoms(), 36);
    for c in learned.dictionary.atoms().column_iter() {
        assert!((c.norm() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn learning_is_deterministic() {
    let (pools, labels) = pools(&[Shape::Block, Shape::Cylinder], 4);
    let a = learn_dictionary(&pools, &labels, &config()).unwrap();
    let b = learn_dictionary(&pools, &labels, &config()).unwrap();
    assert_eq!(a.dictionary, b.dictionary);
    assert_eq!(a.trace, b.trace);
}

#[test]
fn class_permutation_permutes_blocks() {
    let (pools, labels) = pools(&[Shape::Block, Shape::Sphere, Shape::Cone], 4);
    let forward = learn_dictionary(&pools, &labels, &config()).unwrap();
    let order = [2, 0, 1];
    let p_pools: Vec<PatchSet> = order.iter().map(|&i| pools[i].clone()).collect();
    let p_labels: Vec<String> = order.iter().map(|&i| labels[i].clone()).collect();
    let permuted = learn_dictionary(&p_pools, &p_labels, &config()).unwrap();
    assert_eq!(permuted.dictionary.class_labels(), &p_labels[..]);
    for (new_k, &old_k) in order.iter().enumerate() {
        let old = &forward.dictionary.class_index_sets()[old_k];
        let new = &permuted.dictionary.class_index_sets()[new_k];
        assert_eq!(old.len(), new.len());
        for (&i, &j) in old.iter().zip(new) {
            assert_eq!(
                forward.dictionary.atoms().column(i),
                permuted.dictionary.atoms().column(j)
            );
        }
    }
}

#[test]
fn rho_zero_with_every_patch_as_atom_is_a_no_op() {
    let (pools, labels) = pools(&[Shape::Block, Shape::Cone], 1);
    let n = pools[0].len().min(pools[1].len());
    let pools: Vec<PatchSet> = pools
        .into_iter()
        .map(|p| PatchSet {
            patches: p.patches[..n].to_vec(),
            origins: p.origins[..n].to_vec(),
            source_ids: p.source_ids[..n].to_vec(),
            label: p.label,
        })
        .collect();
    let cfg = DfdlConfig {
        rho: 0.0,
        sparsity: 1,
        atoms_per_class: n,
        outer_iters: 3,
        seed: 1,
    };
    let learned = learn_dictionary(&pools, &labels, &cfg).unwrap();
    for step in &learned.trace {
        assert!(step.objective_before.abs() < 1e-20, "{step:?}");
        assert_eq!(step.objective_after, step.objective_before);
    }
    // The learned block of class 0 is a permutation of its patches.
    let block = &learned.dictionary.class_index_sets()[0];
    for p in &pools[0].patches {
        assert!(block
            .iter()
            .any(|&j| (learned.dictionary.atoms().column(j) - p).norm() < 1e-12));
    }
    let y = pools[0].as_matrix();
    let b = sparse_code_omp(&y, learned.dictionary.atoms(), 1).unwrap();
    let empty = nalgebra::DMatrix::zeros(y.nrows(), 0);
    assert!(dfdl_objective(learned.dictionary.atoms(), &y, &y, &b, &b, 0.0).unwrap() < 1e-20);
    assert!(dfdl_objective(learned.dictionary.atoms(), &y, &empty, &b, &b, 0.0).is_err());
}

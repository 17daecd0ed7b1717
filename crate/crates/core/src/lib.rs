//! Pose-corrected sparse classification for synthetic aperture sonar ATR.
//!
//! The pipeline extracts intensity-stratified patches from sonar magnitude
//! images, refines them into a discriminative dictionary, codes each test
//! patch under a spike-and-slab prior with class-specific sparsity
//! penalties, and aggregates per-patch residual affinities into an ensemble
//! decision. The same per-patch likelihoods drive a two-sample KS anomaly
//! screen. A synthetic scene generator and an evaluation harness make the
//! experiments reproducible without proprietary data.

pub mod anomaly;
pub mod classifier;
pub mod config;
pub mod dfdl;
pub mod dictionary;
pub mod error;
pub mod eval;
pub mod harness;
pub mod image;
pub mod patches;
pub mod rng;
pub mod solver;
pub mod synth;

pub use anomaly::{detect_anomaly, ks_critical, ks_statistic, KsDecision, ReferenceDistribution};
pub use classifier::{
    classify_patch_set, cross_validate, residual_affinity, CvConfig, LikelihoodRecord, PcsModel,
};
pub use config::RunConfig;
pub use dfdl::{dfdl_objective, learn_dictionary, sparse_code_omp, CodeMatrix, DfdlConfig};
pub use dictionary::Dictionary;
pub use error::{PcsError, Result};
pub use eval::{evaluate, EvalReport, LabeledImage, SrcBaseline};
pub use harness::{run_sweep, train_pcs, Dataset, TrainSettings};
pub use image::{Image, WindowRegime};
pub use patches::{build_dictionary, intensity_mask, sample_patches, PatchConfig, PatchSet};
pub use solver::{
    brute_force_oracle, map_prior_to_penalties, objective_value, solve_l1, solve_spike_slab,
    ProbabilisticPrior, SolverOptions, SparseSolution, SpikeSlabParams,
};
pub use synth::{
    apply_rayleigh_noise, generate_dataset, render_scene, NoiseSpec, SceneSpec, Shape,
};

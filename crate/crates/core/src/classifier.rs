//! Ensemble patch classification with class-specific sparsity, and the
//! cross-validation that tunes the per-class penalties.
//!
//! Each test patch `y_i` is coded under the spike-and-slab prior. Its
//! residual affinity to class k is `r_{i,k} = 1 / ‖y_i − X δ_k(β_i)‖`, where
//! `δ_k` keeps only the class-k coefficients. Rows are normalised by
//! `R_i = Σ_k r_{i,k}` and the image label is
//! `argmax_k Σ_i ln(r_{i,k} / R_i)`.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::anomaly::{load_samples, save_samples};
use crate::dictionary::Dictionary;
use crate::error::{dim, PcsError, Result};
use crate::patches::{PatchConfig, PatchSet};
use crate::rng::{derive_seed, rng_from_seed};
use crate::solver::{SolverOptions, SpikeSlabParams, SpikeSlabSolver};

/// A trained classifier. Immutable once built; safe to share across threads.
#[derive(Debug, Clone)]
pub struct PcsModel {
    dictionary: Dictionary,
    gram: DMatrix<f64>,
    pub params: SpikeSlabParams,
    pub patch_config: PatchConfig,
    pub solver_options: SolverOptions,
    /// Per class, the in-class normalised likelihoods of held-out patches.
    pub reference_samples: Vec<Vec<f64>>,
}

impl PcsModel {
    pub fn new(
        dictionary: Dictionary,
        params: SpikeSlabParams,
        patch_config: PatchConfig,
        reference_samples: Vec<Vec<f64>>,
    ) -> Result<Self> {
        params.validate(Some(dictionary.num_classes()))?;
        if reference_samples.len() != dictionary.num_classes() {
            return Err(dim(format!(
                "{} reference samples for {} classes",
                reference_samples.len(),
                dictionary.num_classes()
            )));
        }
        let gram = dictionary.atoms().tr_mul(dictionary.atoms());
        Ok(Self {
            dictionary,
            gram,
            params,
            patch_config,
            solver_options: SolverOptions::default(),
            reference_samples,
        })
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dictionary
    }

    pub fn class_labels(&self) -> &[String] {
        self.dictionary.class_labels()
    }

    pub fn num_classes(&self) -> usize {
        self.dictionary.num_classes()
    }

    pub fn solver(&self) -> Result<SpikeSlabSolver<'_>> {
        self.solver_with(self.params.clone())
    }

    fn solver_with(&self, params: SpikeSlabParams) -> Result<SpikeSlabSolver<'_>> {
        SpikeSlabSolver::with_gram(
            &self.dictionary,
            Cow::Borrowed(&self.gram),
            params,
            self.solver_options.clone(),
        )
    }

    /// Writes the dictionary to `path`, a `key = value` sidecar to
    /// `path.cfg`, and one reference-sample file per class beside them.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.dictionary.save(path)?;
        let stem = path
            .file_name()
            .and_then(|s| s.to_str())
            .ok_or_else(|| PcsError::InvalidInput("model path needs a file name".into()))?;
        let dir = path.parent().unwrap_or(Path::new(""));
        let mut ref_names = Vec::new();
        for (label, samples) in self.class_labels().iter().zip(&self.reference_samples) {
            let name = format!("{stem}.ref.{label}.txt");
            save_samples(dir.join(&name), samples)?;
            ref_names.push(name);
        }
        let pc = &self.patch_config;
        let list = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:e}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut f = fs::File::create(sidecar_path(path))?;
        writeln!(f, "alpha = {:e}", self.params.alpha)?;
        writeln!(f, "xi = {}", list(&self.params.xi))?;
        writeln!(f, "residual_floor = {:e}", self.params.residual_floor)?;
        writeln!(f, "class_labels = {}", self.class_labels().join(","))?;
        writeln!(f, "patch_height = {}", pc.patch_height)?;
        writeln!(f, "patch_width = {}", pc.patch_width)?;
        writeln!(f, "patches_per_image = {}", pc.patches_per_image)?;
        writeln!(f, "threshold_percentile = {}", pc.threshold_percentile)?;
        writeln!(f, "min_survive_fraction = {}", pc.min_survive_fraction)?;
        writeln!(f, "patch_seed = {}", pc.seed)?;
        writeln!(f, "reference_files = {}", ref_names.join(","))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(sidecar_path(path))?;
        let mut kv = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| PcsError::ConfigParse {
                line: n + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            kv.get(k)
                .map(String::as_str)
                .ok_or_else(|| PcsError::Format(format!("model sidecar lacks `{k}`")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| PcsError::Format(format!("bad number for `{k}`")))
        };
        let int = |k: &str| -> Result<u64> {
            get(k)?
                .parse()
                .map_err(|_| PcsError::Format(format!("bad integer for `{k}`")))
        };
        let xi = get("xi")?
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| PcsError::Format("bad xi list".into()))?;
        let labels: Vec<String> = get("class_labels")?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let mut params = SpikeSlabParams::new(num("alpha")?, xi)?;
        params.residual_floor = num("residual_floor")?;
        let patch_config = PatchConfig {
            patch_height: int("patch_height")? as usize,
            patch_width: int("patch_width")? as usize,
            patches_per_image: int("patches_per_image")? as usize,
            threshold_percentile: num("threshold_percentile")?,
            min_survive_fraction: num("min_survive_fraction")?,
            seed: int("patch_seed")?,
        };
        let dir = path.parent().unwrap_or(Path::new(""));
        let reference_samples = get("reference_files")?
            .split(',')
            .map(|name| load_samples(dir.join(name.trim())))
            .collect::<Result<Vec<_>>>()?;
        let dictionary = Dictionary::load(path)?.with_labels(labels)?;
        Self::new(dictionary, params, patch_config, reference_samples)
    }
}

pub fn sidecar_path(model_path: &Path) -> PathBuf {
    let mut s = model_path.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

/// `r_k = 1 / max(‖y − X δ_k(β)‖, floor)` for every class.
pub fn residual_affinity(
    y: &DVector<f64>,
    dict: &Dictionary,
    beta: &DVector<f64>,
    residual_floor: f64,
) -> Result<Vec<f64>> {
    if y.len() != dict.dim() || beta.len() != dict.num_atoms() {
        return Err(dim(
            "patch or coefficient length does not match the dictionary",
        ));
    }
    Ok(dict
        .class_index_sets()
        .iter()
        .map(|set| {
            let mut residual = y.clone();
            for &i in set {
                if beta[i] != 0.0 {
                    residual.axpy(-beta[i], &dict.atoms().column(i), 1.0);
                }
            }
            1.0 / residual.norm().max(residual_floor)
        })
        .collect())
}

/// Per-patch affinities and the ensemble decision for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodRecord {
    /// `C × K` matrix of `r_{i,k}`.
    pub affinities: DMatrix<f64>,
    /// Rows of `affinities` divided by their sums.
    pub normalized: DMatrix<f64>,
    /// `Σ_i ln(r_{i,k} / R_i)` per class.
    pub log_likelihoods: Vec<f64>,
    pub predicted: usize,
    /// Patches skipped because their solve failed.
    pub dropped: usize,
}

impl LikelihoodRecord {
    /// Builds the record from per-patch affinity rows. Ties in the
    /// log-likelihood go to the lower class index.
    pub fn from_affinities(rows: &[Vec<f64>]) -> Result<Self> {
        let c = rows.len();
        if c == 0 {
            return Err(PcsError::InsufficientData("no patch affinities".into()));
        }
        let k = rows[0].len();
        if k == 0 || rows.iter().any(|r| r.len() != k) {
            return Err(dim("affinity rows must share a positive class count"));
        }
        if rows.iter().flatten().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(PcsError::InvalidInput(
                "affinities must be finite and positive".into(),
            ));
        }
        let affinities = DMatrix::from_fn(c, k, |i, j| rows[i][j]);
        let mut normalized = affinities.clone();
        for mut row in normalized.row_iter_mut() {
            let total = row.sum();
            row /= total;
        }
        let log_likelihoods: Vec<f64> = (0..k)
            .map(|j| normalized.column(j).iter().map(|v| v.ln()).sum())
            .collect();
        let mut predicted = 0;
        for j in 1..k {
            if log_likelihoods[j] > log_likelihoods[predicted] {
                predicted = j;
            }
        }
        Ok(Self {
            affinities,
            normalized,
            log_likelihoods,
            predicted,
            dropped: 0,
        })
    }

    pub fn num_patches(&self) -> usize {
        self.normalized.nrows()
    }

    /// Normalised likelihood of every patch for class `k`.
    pub fn class_column(&self, k: usize) -> Vec<f64> {
        self.normalized.column(k).iter().copied().collect()
    }
}

fn classify_with(
    patches: &PatchSet,
    solver: &SpikeSlabSolver<'_>,
    floor: f64,
) -> Result<LikelihoodRecord> {
    if patches.is_empty() {
        return Err(PcsError::InsufficientData("patch set is empty".into()));
    }
    let dict = solver.dictionary();
    let rows: Vec<Option<Vec<f64>>> = patches
        .patches
        .par_iter()
        .map(|y| match solver.solve(y) {
            Ok(sol) => residual_affinity(y, dict, &sol.beta, floor).ok(),
            Err(e) => {
                log::warn!("dropping patch: {e}");
                None
            }
        })
        .collect();
    let dropped = rows.iter().filter(|r| r.is_none()).count();
    let rows: Vec<Vec<f64>> = rows.into_iter().flatten().collect();
    if rows.is_empty() {
        return Err(PcsError::InsufficientData(
            "every patch failed to solve".into(),
        ));
    }
    let mut record = LikelihoodRecord::from_affinities(&rows)?;
    record.dropped = dropped;
    Ok(record)
}

/// Solves every patch and returns the ensemble decision.
pub fn classify_patch_set(patches: &PatchSet, model: &PcsModel) -> Result<LikelihoodRecord> {
    classify_with(patches, &model.solver()?, model.params.residual_floor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub trials: usize,
    /// ξ_k are drawn log-uniformly on `(xi_min, xi_max]`.
    pub xi_min: f64,
    pub xi_max: f64,
    pub alpha: f64,
    /// Fraction of training images per class held out for scoring.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            trials: 25,
            xi_min: 1e-8,
            xi_max: 1e-4,
            alpha: crate::solver::DEFAULT_ALPHA,
            holdout_fraction: 0.25,
            seed: 0,
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(PcsError::Domain("at least one trial is required".into()));
        }
        if !(self.xi_min > 0.0 && self.xi_max >= self.xi_min && self.xi_max.is_finite()) {
            return Err(PcsError::Domain(format!(
                "xi range ({}, {}] is invalid",
                self.xi_min, self.xi_max
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(PcsError::Domain("alpha must be >= 0".into()));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(PcsError::Domain(
                "holdout fraction must lie in (0,1)".into(),
            ));
        }
        Ok(())
    }

    /// Penalty vector of trial `t`: `K` independent log-uniform draws.
    pub fn trial_xi(&self, t: usize, classes: usize) -> Vec<f64> {
        let mut rng = rng_from_seed(derive_seed(self.seed, t as u64));
        let (lo, hi) = (self.xi_min.ln(), self.xi_max.ln());
        (0..classes)
            .map(|_| {
                let u = 1.0 - rng.random::<f64>();
                (lo + u * (hi - lo)).exp().min(self.xi_max)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvTrial {
    pub xi: Vec<f64>,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub params: SpikeSlabParams,
    pub reference_samples: Vec<Vec<f64>>,
    pub trials: Vec<CvTrial>,
    pub best_trial: usize,
}

/// Scores `trials` random penalty vectors by held-out patch-set accuracy and
/// keeps the best (earliest on ties). `holdout[k]` holds one patch set per
/// held-out class-k image. Under the winning penalties the class-k
/// normalised likelihood of every held-out class-k patch is collected as
/// that class's reference sample.
pub fn cross_validate(
    holdout: &[Vec<PatchSet>],
    dictionary: &Dictionary,
    cv: &CvConfig,
    residual_floor: f64,
    solver_options: &SolverOptions,
) -> Result<CvOutcome> {
    let k = dictionary.num_classes();
    if k < 2 || holdout.len() < 2 {
        return Err(PcsError::InvalidInput(
            "cross-validation needs at least two classes".into(),
        ));
    }
    if holdout.len() != k {
        return Err(dim(format!(
            "{} holdout classes for {k} dictionary classes",
            holdout.len()
        )));
    }
    if let Some(c) = holdout
        .iter()
        .position(|sets| sets.iter().all(PatchSet::is_empty))
    {
        return Err(PcsError::InsufficientData(format!(
            "empty holdout for class {c}"
        )));
    }
    cv.validate()?;
    let gram = dictionary.atoms().tr_mul(dictionary.atoms());
    let results: Vec<Result<(CvTrial, Vec<Vec<f64>>)>> = (0..cv.trials)
        .into_par_iter()
        .map(|t| {
            let xi = cv.trial_xi(t, k);
            let mut params = SpikeSlabParams::new(cv.alpha, xi.clone())?;
            params.residual_floor = residual_floor;
            let solver = SpikeSlabSolver::with_gram(
                dictionary,
                Cow::Borrowed(&gram),
                params,
                solver_options.clone(),
            )?;
            let mut correct = 0usize;
            let mut total = 0usize;
            let mut refs = vec![Vec::new(); k];
            for (class, sets) in holdout.iter().enumerate() {
                for set in sets.iter().filter(|s| !s.is_empty()) {
                    let record = classify_with(set, &solver, residual_floor)?;
                    total += 1;
                    if record.predicted == class {
                        correct += 1;
                    }
                    refs[class].extend(record.class_column(class));
                }
            }
            Ok((
                CvTrial {
                    xi,
                    accuracy: correct as f64 / total as f64,
                },
                refs,
            ))
        })
        .collect();
    let mut trials = Vec::with_capacity(cv.trials);
    let mut best: Option<(usize, Vec<Vec<f64>>)> = None;
    for (t, r) in results.into_iter().enumerate() {
        let (trial, refs) = r?;
        if best
            .as_ref()
            .is_none_or(|(b, _)| trial.accuracy > trials_acc(&trials, *b))
        {
            best = Some((t, refs));
        }
        trials.push(trial);
    }
    let (best_trial, reference_samples) = best.expect("at least one trial");
    let mut params = SpikeSlabParams::new(cv.alpha, trials[best_trial].xi.clone())?;
    params.residual_floor = residual_floor;
    Ok(CvOutcome {
        params,
        reference_samples,
        trials,
        best_trial,
    })
}

fn trials_acc(trials: &[CvTrial], i: usize) -> f64 {
    trials[i].accuracy
}

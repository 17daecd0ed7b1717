//! Discriminative feature dictionary learning.
//!
//! For every class k a sub-dictionary `D_k` is fitted to minimise
//!
//! ```text
//! (1/n)‖Y_in − D B_in‖_F² − (ρ/n̄)‖Y_out − D B_out‖_F²
//! ```
//!
//! where `Y_in` are the class-k training patches, `Y_out` the patches of all
//! other classes, and the codes `B` are at most `L`-sparse per column. The
//! learner alternates OMP coding with a projected gradient step on `D`
//! (columns renormalised to unit norm) accepted only if the objective does
//! not increase at the fixed codes.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::dictionary::Dictionary;
use crate::error::{dim, PcsError, Result};
use crate::patches::PatchSet;
use crate::rng::{derive_seed, label_tag, rng_from_seed};

const OMP_RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DfdlConfig {
    /// Weight of the out-of-class term.
    pub rho: f64,
    /// Sparsity level L of every code column.
    pub sparsity: usize,
    pub atoms_per_class: usize,
    pub outer_iters: usize,
    pub seed: u64,
}

impl Default for DfdlConfig {
    fn default() -> Self {
        Self {
            rho: 0.1,
            sparsity: 4,
            atoms_per_class: 64,
            outer_iters: 10,
            seed: 0,
        }
    }
}

impl DfdlConfig {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(PcsError::Domain(format!(
                "rho must be >= 0, got {}",
                self.rho
            )));
        }
        if self.sparsity == 0 || self.atoms_per_class == 0 || self.outer_iters == 0 {
            return Err(PcsError::Domain(
                "sparsity, atoms_per_class and outer_iters must be positive".into(),
            ));
        }
        if self.sparsity > self.atoms_per_class * classes {
            return Err(PcsError::Domain(format!(
                "sparsity {} exceeds total atom count {}",
                self.sparsity,
                self.atoms_per_class * classes
            )));
        }
        Ok(())
    }
}

/// Sparse codes, one column per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeMatrix {
    pub num_atoms: usize,
    /// `(atom, coefficient)` pairs per sample, in selection order.
    pub columns: Vec<Vec<(usize, f64)>>,
}

impl CodeMatrix {
    pub fn num_samples(&self) -> usize {
        self.columns.len()
    }

    pub fn support_sizes(&self) -> Vec<usize> {
        self.columns.iter().map(Vec::len).collect()
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.num_atoms, self.columns.len());
        for (s, col) in self.columns.iter().enumerate() {
            for &(a, v) in col {
                b[(a, s)] = v;
            }
        }
        b
    }

    /// `D · B` without forming `B` densely.
    pub fn reconstruct(&self, d: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(d.nrows(), self.columns.len());
        for (s, col) in self.columns.iter().enumerate() {
            let mut target = out.column_mut(s);
            for &(a, v) in col {
                target.axpy(v, &d.column(a), 1.0);
            }
        }
        out
    }
}

/// Orthogonal matching pursuit on every column of `y`.
///
/// Each column selects up to `sparsity` atoms (fewer if the residual drops
/// below 1e-10 or the next atom is linearly dependent on the selection); the
/// coefficients are the least-squares fit on the selected atoms.
pub fn sparse_code_omp(y: &DMatrix<f64>, d: &DMatrix<f64>, sparsity: usize) -> Result<CodeMatrix> {
    if y.nrows() != d.nrows() {
        return Err(dim(format!(
            "samples have {} rows, dictionary {}",
            y.nrows(),
            d.nrows()
        )));
    }
    let gram = d.tr_mul(d);
    let corr_all = d.tr_mul(y);
    let columns = (0..y.ncols())
        .into_par_iter()
        .map(|s| {
            omp_column(
                &gram,
                &corr_all.column(s).into_owned(),
                y.column(s).norm_squared(),
                sparsity,
            )
        })
        .collect();
    Ok(CodeMatrix {
        num_atoms: d.ncols(),
        columns,
    })
}

fn omp_column(
    gram: &DMatrix<f64>,
    corr: &DVector<f64>,
    y_norm2: f64,
    sparsity: usize,
) -> Vec<(usize, f64)> {
    let m = gram.nrows();
    let mut support: Vec<usize> = Vec::new();
    let mut coef = DVector::zeros(0);
    let mut residual_corr = corr.clone();
    let mut residual_norm2 = y_norm2;
    while support.len() < sparsity.min(m) {
        if residual_norm2.max(0.0).sqrt() < OMP_RESIDUAL_TOL {
            break;
        }
        let mut best: Option<(usize, f64)> = None;
        for j in 0..m {
            if support.contains(&j) {
                continue;
            }
            let v = residual_corr[j].abs();
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        let Some((j, v)) = best else { break };
        if v <= 0.0 {
            break;
        }
        support.push(j);
        let s = support.len();
        let g = DMatrix::from_fn(s, s, |r, c| gram[(support[r], support[c])]);
        let rhs = DVector::from_iterator(s, support.iter().map(|&i| corr[i]));
        let Some(chol) = g.cholesky() else {
            support.pop();
            break;
        };
        let x = chol.solve(&rhs);
        // Dependent atom: the Gram factor is numerically singular.
        if x.iter().any(|v| !v.is_finite()) {
            support.pop();
            break;
        }
        coef = x;
        residual_corr = corr.clone();
        for (k, &i) in support.iter().enumerate() {
            residual_corr.axpy(-coef[k], &gram.column(i), 1.0);
        }
        residual_norm2 = y_norm2 - rhs.dot(&coef);
    }
    support.into_iter().zip(coef.iter().copied()).collect()
}

/// `(1/n)‖Y_in − D B_in‖_F² − (ρ/n̄)‖Y_out − D B_out‖_F²`.
pub fn dfdl_objective(
    d: &DMatrix<f64>,
    y_in: &DMatrix<f64>,
    y_out: &DMatrix<f64>,
    b_in: &CodeMatrix,
    b_out: &CodeMatrix,
    rho: f64,
) -> Result<f64> {
    let n = y_in.ncols();
    let n_bar = y_out.ncols();
    if n == 0 || n_bar == 0 {
        return Err(PcsError::InsufficientData(
            "in-class and out-of-class sample sets must be non-empty".into(),
        ));
    }
    if b_in.num_samples() != n || b_out.num_samples() != n_bar {
        return Err(dim("code matrices do not match the sample counts"));
    }
    if y_in.nrows() != d.nrows() || y_out.nrows() != d.nrows() {
        return Err(dim("samples do not match the dictionary dimension"));
    }
    let e_in = (y_in - b_in.reconstruct(d)).norm_squared();
    let e_out = (y_out - b_out.reconstruct(d)).norm_squared();
    Ok(e_in / n as f64 - rho * e_out / n_bar as f64)
}

/// One dictionary-update attempt, recorded for diagnostics and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct DfdlStep {
    pub class: usize,
    pub iteration: usize,
    pub objective_before: f64,
    pub objective_after: f64,
    pub step_size: f64,
    pub accepted: bool,
    /// Largest `|‖d_j‖ − 1|` after the step.
    pub max_norm_error: f64,
}

#[derive(Debug, Clone)]
pub struct LearnedDictionary {
    pub dictionary: Dictionary,
    pub trace: Vec<DfdlStep>,
}

const MAX_BACKTRACKS: usize = 30;

fn residual_times_codes(residual: &DMatrix<f64>, codes: &CodeMatrix, atoms: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(residual.nrows(), atoms);
    for (s, col) in codes.columns.iter().enumerate() {
        for &(a, v) in col {
            out.column_mut(a).axpy(v, &residual.column(s), 1.0);
        }
    }
    out
}

/// Renormalises every column; a column that collapses to zero keeps its
/// previous value.
fn project_unit_columns(mut d: DMatrix<f64>, fallback: &DMatrix<f64>) -> DMatrix<f64> {
    for (j, mut col) in d.column_iter_mut().enumerate() {
        let norm = col.norm();
        if norm.is_finite() && norm > 1e-300 {
            col /= norm;
        } else {
            col.copy_from(&fallback.column(j));
        }
    }
    d
}

fn max_norm_error(d: &DMatrix<f64>) -> f64 {
    d.column_iter()
        .map(|c| (c.norm() - 1.0).abs())
        .fold(0.0, f64::max)
}

fn learn_class(
    class: usize,
    y_in: &DMatrix<f64>,
    y_out: &DMatrix<f64>,
    config: &DfdlConfig,
    seed: u64,
) -> Result<(DMatrix<f64>, Vec<DfdlStep>)> {
    let mut rng = rng_from_seed(seed);
    let picks = rand::seq::index::sample(&mut rng, y_in.ncols(), config.atoms_per_class).into_vec();
    let mut d = DMatrix::zeros(y_in.nrows(), config.atoms_per_class);
    for (c, &i) in picks.iter().enumerate() {
        let col = y_in.column(i);
        d.set_column(c, &(col / col.norm()));
    }
    let n = y_in.ncols() as f64;
    let n_bar = y_out.ncols() as f64;
    let mut trace = Vec::with_capacity(config.outer_iters);
    let mut step = 1.0;
    for iteration in 0..config.outer_iters {
        let b_in = sparse_code_omp(y_in, &d, config.sparsity)?;
        let b_out = sparse_code_omp(y_out, &d, config.sparsity)?;
        let before = dfdl_objective(&d, y_in, y_out, &b_in, &b_out, config.rho)?;
        let r_in = y_in - b_in.reconstruct(&d);
        let r_out = y_out - b_out.reconstruct(&d);
        let grad = residual_times_codes(&r_in, &b_in, d.ncols()) * (-2.0 / n)
            + residual_times_codes(&r_out, &b_out, d.ncols()) * (2.0 * config.rho / n_bar);

        let mut record = DfdlStep {
            class,
            iteration,
            objective_before: before,
            objective_after: before,
            step_size: 0.0,
            accepted: false,
            max_norm_error: max_norm_error(&d),
        };
        if grad.norm() > 0.0 {
            let mut t = step;
            for _ in 0..MAX_BACKTRACKS {
                let candidate = project_unit_columns(&d - &grad * t, &d);
                let after = dfdl_objective(&candidate, y_in, y_out, &b_in, &b_out, config.rho)?;
                if after <= before {
                    d = candidate;
                    record.objective_after = after;
                    record.step_size = t;
                    record.accepted = true;
                    record.max_norm_error = max_norm_error(&d);
                    step = (t * 2.0).min(64.0);
                    break;
                }
                t *= 0.5;
            }
            if !record.accepted {
                step = t;
            }
        } else {
            record.accepted = true;
        }
        trace.push(record);
    }
    Ok((d, trace))
}

/// Learns `atoms_per_class` atoms for each class pool and concatenates the
/// class blocks in input order.
///
/// Each class uses a random stream derived from the seed and its label, so
/// reordering the input classes reorders the output blocks.
pub fn learn_dictionary(
    class_pools: &[PatchSet],
    labels: &[String],
    config: &DfdlConfig,
) -> Result<LearnedDictionary> {
    let k = class_pools.len();
    if k < 2 {
        return Err(PcsError::InvalidInput(
            "at least two classes are required".into(),
        ));
    }
    if labels.len() != k {
        return Err(dim("one label per class pool is required"));
    }
    config.validate(k)?;
    let b = class_pools
        .iter()
        .flat_map(|p| p.patches.first())
        .map(|v| v.len())
        .next()
        .unwrap_or(0);
    for (pool, label) in class_pools.iter().zip(labels) {
        if pool.len() < config.atoms_per_class {
            return Err(PcsError::InsufficientData(format!(
                "class `{label}` has {} patches, needs {}",
                pool.len(),
                config.atoms_per_class
            )));
        }
        if pool.patches.iter().any(|v| v.len() != b) {
            return Err(dim("inconsistent patch lengths"));
        }
        if pool.patches.iter().all(|v| v.iter().all(|x| *x == 0.0)) {
            return Err(PcsError::InvalidInput(format!(
                "class `{label}` is all zero"
            )));
        }
    }
    let mats: Vec<DMatrix<f64>> = class_pools.iter().map(PatchSet::as_matrix).collect();
    let results: Vec<Result<(DMatrix<f64>, Vec<DfdlStep>)>> = (0..k)
        .into_par_iter()
        .map(|class| {
            // Out-of-class samples in label order, so the result does not
            // depend on where the other classes sit in the input.
            let mut others: Vec<usize> = (0..k).filter(|&j| j != class).collect();
            others.sort_by(|&a, &b| labels[a].cmp(&labels[b]));
            let total_out: usize = others.iter().map(|&j| mats[j].ncols()).sum();
            let mut y_out = DMatrix::zeros(b, total_out);
            let mut at = 0;
            for j in others {
                y_out.columns_mut(at, mats[j].ncols()).copy_from(&mats[j]);
                at += mats[j].ncols();
            }
            let seed = derive_seed(config.seed, label_tag(&labels[class]));
            learn_class(class, &mats[class], &y_out, config, seed)
        })
        .collect();
    let mut blocks = Vec::with_capacity(k);
    let mut trace = Vec::new();
    for r in results {
        let (block, steps) = r?;
        blocks.push(block);
        trace.extend(steps);
    }
    let dictionary = Dictionary::from_blocks(blocks, labels.to_vec())?;
    Ok(LearnedDictionary { dictionary, trace })
}

/// Uniformly random unit vector; handy for building synthetic pools.
pub fn random_unit<R: Rng + ?Sized>(rng: &mut R, len: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(len, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

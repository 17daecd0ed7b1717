//! Class-specific spike-and-slab MAP coding.
//!
//! The objective for an observation `y` against dictionary `X` is
//!
//! ```text
//! ‖y − Xβ‖² + α‖β‖² + Σ_k ξ_k · #{i ∈ I_k : γ_i = 1}
//! ```
//!
//! with `γ_i = 1` exactly when `β_i ≠ 0`. For a fixed support `S` the
//! optimal coefficients are the ridge solution on `S`, so the search is over
//! supports. [`solve_spike_slab`] starts from the ℓ1 support and greedily
//! applies the best single-coordinate flip until none improves the
//! objective. [`brute_force_oracle`] enumerates every support and is used to
//! check the greedy solver on small problems.

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector};

use crate::dictionary::Dictionary;
use crate::error::{dim, domain, PcsError, Result};

/// Coefficients with magnitude at or below this are treated as zero.
pub const NONZERO_THRESHOLD: f64 = 1e-12;
pub const DEFAULT_ALPHA: f64 = 1e-3;
pub const DEFAULT_RESIDUAL_FLOOR: f64 = 1e-8;
/// Enumeration guard for [`brute_force_oracle`].
pub const ORACLE_MAX_ATOMS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct SpikeSlabParams {
    /// Ridge weight α = σ²/κ².
    pub alpha: f64,
    /// Per-class support penalty ξ_k.
    pub xi: Vec<f64>,
    /// Floor ε_res applied to class residual norms before taking reciprocals.
    pub residual_floor: f64,
}

impl SpikeSlabParams {
    pub fn new(alpha: f64, xi: Vec<f64>) -> Result<Self> {
        let p = Self {
            alpha,
            xi,
            residual_floor: DEFAULT_RESIDUAL_FLOOR,
        };
        p.validate(None)?;
        Ok(p)
    }

    pub fn uniform(alpha: f64, xi: f64, classes: usize) -> Result<Self> {
        Self::new(alpha, vec![xi; classes])
    }

    pub fn validate(&self, classes: Option<usize>) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(domain(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if let Some(x) = self.xi.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
            return Err(domain(format!("every xi must be finite and > 0, got {x}")));
        }
        if !(self.residual_floor > 0.0 && self.residual_floor.is_finite()) {
            return Err(domain("residual floor must be positive"));
        }
        if let Some(k) = classes {
            if self.xi.len() != k {
                return Err(dim(format!("{} penalties for {k} classes", self.xi.len())));
            }
        }
        Ok(())
    }

    /// Penalty of every dictionary column.
    pub fn column_penalties(&self, dict: &Dictionary) -> Vec<f64> {
        dict.atom_classes().iter().map(|&c| self.xi[c]).collect()
    }
}

/// Generative parameters of the spike-and-slab prior.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilisticPrior {
    /// Observation noise variance σ².
    pub sigma2: f64,
    /// Slab variance κ².
    pub kappa2: f64,
    /// Per-class activation probability θ_k.
    pub theta: Vec<f64>,
}

/// Maps (σ², κ², θ) onto the penalised form:
/// `α = σ²/κ²`, `ξ_k = σ² · ln(2πκ²(1−θ_k)²/θ_k²)`.
///
/// Large θ makes ξ_k non-positive; that regime is rejected.
pub fn map_prior_to_penalties(prior: &ProbabilisticPrior) -> Result<SpikeSlabParams> {
    let ProbabilisticPrior {
        sigma2,
        kappa2,
        ref theta,
    } = *prior;
    if !(sigma2 > 0.0 && sigma2.is_finite()) || !(kappa2 > 0.0 && kappa2.is_finite()) {
        return Err(domain("variances must be finite and positive"));
    }
    if theta.is_empty() {
        return Err(domain("at least one class probability is required"));
    }
    let mut xi = Vec::with_capacity(theta.len());
    for &t in theta {
        if !(t > 0.0 && t < 1.0) {
            return Err(domain(format!("theta must lie in (0,1), got {t}")));
        }
        let v = sigma2 * (2.0 * std::f64::consts::PI * kappa2 * (1.0 - t).powi(2) / (t * t)).ln();
        if v.is_nan() || v <= 0.0 {
            return Err(domain(format!(
                "theta={t} yields non-positive penalty {v}; activation probability too large"
            )));
        }
        xi.push(v);
    }
    SpikeSlabParams::new(sigma2 / kappa2, xi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseSolution {
    pub beta: DVector<f64>,
    pub gamma: Vec<bool>,
    pub objective: f64,
    /// False when the solver hit its iteration cap; the solution is then the
    /// best found so far.
    pub converged: bool,
    pub iterations: usize,
}

impl SparseSolution {
    fn zero(m: usize, y_norm2: f64) -> Self {
        Self {
            beta: DVector::zeros(m),
            gamma: vec![false; m],
            objective: y_norm2,
            converged: true,
            iterations: 0,
        }
    }

    pub fn support(&self) -> Vec<usize> {
        support_of(&self.gamma)
    }
}

fn support_of(gamma: &[bool]) -> Vec<usize> {
    gamma
        .iter()
        .enumerate()
        .filter_map(|(i, &g)| g.then_some(i))
        .collect()
}

fn gamma_from_beta(beta: &DVector<f64>) -> Vec<bool> {
    beta.iter().map(|b| b.abs() > NONZERO_THRESHOLD).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// A flip must lower the objective by more than this to be accepted.
    pub flip_tol: f64,
    /// ℓ1 weight for the initial support; derived from the penalties if
    /// `None`.
    pub init_lambda: Option<f64>,
    pub l1_gap_tol: f64,
    pub l1_max_iter: usize,
    /// Try exchanging one support atom for another once no single flip
    /// improves.
    pub swap_moves: bool,
    /// Also refine from the empty support and keep the better result.
    pub restart_from_empty: bool,
    /// Also refine from the full support (backward elimination) when the
    /// dictionary has at most this many atoms.
    pub full_restart_max_atoms: usize,
    /// Extra ℓ1 starts at these multiples of the initial λ.
    pub l1_path: Vec<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            flip_tol: 1e-9,
            init_lambda: None,
            l1_gap_tol: 1e-6,
            l1_max_iter: 10_000,
            swap_moves: true,
            restart_from_empty: true,
            full_restart_max_atoms: 64,
            l1_path: Vec::new(),
        }
    }
}

/// `‖y − Xβ‖² + α‖β‖² + Σ_k ξ_k Σ_{i∈I_k} γ_i`.
pub fn objective_value(
    y: &DVector<f64>,
    dict: &Dictionary,
    beta: &DVector<f64>,
    gamma: &[bool],
    params: &SpikeSlabParams,
) -> Result<f64> {
    check_dims(y, dict)?;
    let m = dict.num_atoms();
    if beta.len() != m || gamma.len() != m {
        return Err(dim(format!(
            "beta/gamma lengths {}/{} for {m} atoms",
            beta.len(),
            gamma.len()
        )));
    }
    if params.xi.len() != dict.num_classes() {
        return Err(dim("penalty count does not match class count"));
    }
    let residual = y - dict.atoms() * beta;
    let penalty: f64 = gamma
        .iter()
        .zip(dict.atom_classes())
        .filter(|(g, _)| **g)
        .map(|(_, &c)| params.xi[c])
        .sum();
    Ok(residual.norm_squared() + params.alpha * beta.norm_squared() + penalty)
}

fn check_dims(y: &DVector<f64>, dict: &Dictionary) -> Result<()> {
    if y.len() != dict.dim() {
        return Err(dim(format!(
            "observation length {} vs dictionary dimension {}",
            y.len(),
            dict.dim()
        )));
    }
    Ok(())
}

fn check_finite(y: &DVector<f64>) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(PcsError::InvalidInput(
            "observation contains NaN or infinity".into(),
        ))
    }
}

/// A dictionary with its Gram matrix precomputed, reusable across many
/// observations. Immutable and `Sync`, so patches can be coded in parallel.
#[derive(Debug, Clone)]
pub struct SpikeSlabSolver<'a> {
    dict: &'a Dictionary,
    gram: Cow<'a, DMatrix<f64>>,
    params: SpikeSlabParams,
    penalties: Vec<f64>,
    opts: SolverOptions,
}

impl<'a> SpikeSlabSolver<'a> {
    pub fn new(dict: &'a Dictionary, params: SpikeSlabParams, opts: SolverOptions) -> Result<Self> {
        let gram = dict.atoms().tr_mul(dict.atoms());
        Self::with_gram(dict, Cow::Owned(gram), params, opts)
    }

    /// Reuses a Gram matrix `XᵀX` computed for the same dictionary.
    pub fn with_gram(
        dict: &'a Dictionary,
        gram: Cow<'a, DMatrix<f64>>,
        params: SpikeSlabParams,
        opts: SolverOptions,
    ) -> Result<Self> {
        params.validate(Some(dict.num_classes()))?;
        if gram.shape() != (dict.num_atoms(), dict.num_atoms()) {
            return Err(dim("Gram matrix does not match the dictionary"));
        }
        let penalties = params.column_penalties(dict);
        Ok(Self {
            dict,
            gram,
            params,
            penalties,
            opts,
        })
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn dictionary(&self) -> &Dictionary {
        self.dict
    }

    pub fn params(&self) -> &SpikeSlabParams {
        &self.params
    }

    pub fn solve(&self, y: &DVector<f64>) -> Result<SparseSolution> {
        check_dims(y, self.dict)?;
        check_finite(y)?;
        let m = self.dict.num_atoms();
        let y_norm2 = y.norm_squared();
        if y_norm2 == 0.0 {
            return Ok(SparseSolution::zero(m, 0.0));
        }
        let corr = self.dict.atoms().tr_mul(y);

        let lambda = self.opts.init_lambda.unwrap_or_else(|| {
            let mean_xi = self.penalties.iter().sum::<f64>() / m as f64;
            2.0 * (mean_xi * (1.0 + self.params.alpha)).sqrt()
        });
        let l1 = l1_coordinate_descent(
            &self.gram,
            &corr,
            y_norm2,
            lambda,
            self.opts.l1_gap_tol,
            self.opts.l1_max_iter,
        );
        let mut starts = vec![support_of(&gamma_from_beta(&l1.beta))];
        for &scale in &self.opts.l1_path {
            let extra = l1_coordinate_descent(
                &self.gram,
                &corr,
                y_norm2,
                lambda * scale,
                self.opts.l1_gap_tol,
                self.opts.l1_max_iter,
            );
            starts.push(support_of(&gamma_from_beta(&extra.beta)));
        }
        if self.opts.restart_from_empty {
            starts.push(Vec::new());
        }
        if m <= self.opts.full_restart_max_atoms {
            starts.push((0..m).collect());
        }
        starts.sort();
        starts.dedup();
        let mut best: Option<(RidgeState, f64)> = None;
        let mut converged = true;
        let mut iterations = 0;
        for start in starts {
            let (state, objective, conv, iters) = self.refine(&corr, y_norm2, start);
            converged &= conv;
            iterations += iters;
            let better = match &best {
                None => true,
                Some((b, bf)) => {
                    objective < bf - self.opts.flip_tol
                        || (objective <= bf + self.opts.flip_tol
                            && (state.support.len(), &state.support)
                                < (b.support.len(), &b.support))
                }
            };
            if better {
                best = Some((state, objective));
            }
        }
        let (state, _) = best.expect("at least one start");

        let mut beta = DVector::zeros(m);
        for (&i, &b) in state.support.iter().zip(state.beta.iter()) {
            beta[i] = b;
        }
        let gamma = gamma_from_beta(&beta);
        let objective = objective_value(y, self.dict, &beta, &gamma, &self.params)?;
        Ok(SparseSolution {
            beta,
            gamma,
            objective,
            converged,
            iterations,
        })
    }

    /// Flip/swap descent from `start`. Returns the final state, its
    /// objective, whether it converged and the number of accepted moves.
    fn refine(
        &self,
        corr: &DVector<f64>,
        y_norm2: f64,
        start: Vec<usize>,
    ) -> (RidgeState, f64, bool, usize) {
        let alpha = self.params.alpha;
        let mut state = RidgeState::fit(&self.gram, corr, alpha, start);
        let mut objective = self.support_objective(&state, y_norm2);
        if objective > y_norm2 {
            state = RidgeState::fit(&self.gram, corr, alpha, Vec::new());
            objective = y_norm2;
        }
        let mut iterations = 0;
        while iterations < self.opts.max_iter {
            let mut support = state.support.clone();
            match self.best_flip(&state, corr) {
                Some(flip) if flip.delta < -self.opts.flip_tol => {
                    match support.binary_search(&flip.index) {
                        Ok(pos) => {
                            support.remove(pos);
                        }
                        Err(pos) => support.insert(pos, flip.index),
                    }
                }
                _ => {
                    if !self.opts.swap_moves {
                        return (state, objective, true, iterations);
                    }
                    match self.best_swap(&state, corr, y_norm2, objective) {
                        Some((out, inn)) => {
                            let pos = support.binary_search(&out).expect("in support");
                            support.remove(pos);
                            let pos = support.binary_search(&inn).expect_err("not in support");
                            support.insert(pos, inn);
                        }
                        None => return (state, objective, true, iterations),
                    }
                }
            }
            let candidate = RidgeState::fit(&self.gram, corr, alpha, support);
            let candidate_objective = self.support_objective(&candidate, y_norm2);
            iterations += 1;
            if candidate_objective >= objective - self.opts.flip_tol {
                // The rank-one prediction disagreed with the refit; keep the
                // current support.
                return (state, objective, true, iterations);
            }
            state = candidate;
            objective = candidate_objective;
        }
        (state, objective, false, iterations)
    }

    /// Best exchange of one support atom for one outside atom, if it lowers
    /// the objective by more than the flip tolerance.
    fn best_swap(
        &self,
        state: &RidgeState,
        corr: &DVector<f64>,
        y_norm2: f64,
        objective: f64,
    ) -> Option<(usize, usize)> {
        let mut best: Option<(f64, usize, usize)> = None;
        for &out in &state.support {
            let reduced: Vec<usize> = state
                .support
                .iter()
                .copied()
                .filter(|&i| i != out)
                .collect();
            let reduced = RidgeState::fit(&self.gram, corr, self.params.alpha, reduced);
            if !reduced.support.is_empty() && reduced.chol.is_none() {
                continue;
            }
            let base = self.support_objective(&reduced, y_norm2);
            for (j, delta) in self.add_deltas(&reduced, corr) {
                if j == out {
                    continue;
                }
                let f = base + delta;
                let improves = f < objective - self.opts.flip_tol;
                let better = match best {
                    None => improves,
                    Some((bf, bo, bj)) => improves && (f < bf || (f == bf && (out, j) < (bo, bj))),
                };
                if better {
                    best = Some((f, out, j));
                }
            }
        }
        best.map(|(_, out, j)| (out, j))
    }

    /// Objective at the ridge optimum of `state.support`:
    /// `‖y‖² − c_Sᵀ β_S + Σ ξ`.
    fn support_objective(&self, state: &RidgeState, y_norm2: f64) -> f64 {
        let fit = state.corr_s.dot(&state.beta);
        let penalty: f64 = state.support.iter().map(|&i| self.penalties[i]).sum();
        (y_norm2 - fit).max(0.0) + penalty
    }

    /// Objective change of adding each atom outside the support.
    fn add_deltas(&self, state: &RidgeState, corr: &DVector<f64>) -> Vec<(usize, f64)> {
        let m = self.gram.nrows();
        let alpha = self.params.alpha;
        let s = state.support.len();
        let mut out = Vec::with_capacity(m - s);
        if s == 0 {
            for j in 0..m {
                let d = self.gram[(j, j)] + alpha;
                if d > 1e-12 {
                    out.push((j, self.penalties[j] - corr[j] * corr[j] / d));
                }
            }
            return out;
        }
        let Some(chol) = state.chol.as_ref() else {
            return out;
        };
        let mut g_s = DMatrix::zeros(s, m);
        for (r, &i) in state.support.iter().enumerate() {
            g_s.row_mut(r).copy_from(&self.gram.row(i));
        }
        let Some(z) = chol.l().solve_lower_triangular(&g_s) else {
            return out;
        };
        let fitted = g_s.tr_mul(&state.beta);
        let mut in_support = vec![false; m];
        for &i in &state.support {
            in_support[i] = true;
        }
        for j in 0..m {
            if in_support[j] {
                continue;
            }
            let q = corr[j] - fitted[j];
            let d = self.gram[(j, j)] + alpha - z.column(j).norm_squared();
            if d > 1e-12 {
                out.push((j, self.penalties[j] - q * q / d));
            }
        }
        out
    }

    /// Best objective change over all single-coordinate flips. Ties prefer
    /// removals, then the smaller index.
    fn best_flip(&self, state: &RidgeState, corr: &DVector<f64>) -> Option<Flip> {
        let mut best: Option<Flip> = None;
        let mut consider = |f: Flip| {
            let better = match &best {
                None => true,
                Some(b) => {
                    f.delta < b.delta
                        || (f.delta == b.delta
                            && (f.removal && !b.removal
                                || f.removal == b.removal && f.index < b.index))
                }
            };
            if better {
                best = Some(f);
            }
        };
        if let Some(chol) = state.chol.as_ref() {
            let inv = chol.inverse();
            for (pos, &i) in state.support.iter().enumerate() {
                let increase = state.beta[pos] * state.beta[pos] / inv[(pos, pos)];
                consider(Flip {
                    index: i,
                    delta: increase - self.penalties[i],
                    removal: true,
                });
            }
        } else if !state.support.is_empty() {
            return None;
        }
        for (j, delta) in self.add_deltas(state, corr) {
            consider(Flip {
                index: j,
                delta,
                removal: false,
            });
        }
        best
    }
}

#[derive(Debug, Clone, Copy)]
struct Flip {
    index: usize,
    delta: f64,
    removal: bool,
}

/// Ridge fit restricted to a sorted support.
struct RidgeState {
    support: Vec<usize>,
    beta: DVector<f64>,
    corr_s: DVector<f64>,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl RidgeState {
    fn fit(gram: &DMatrix<f64>, corr: &DVector<f64>, alpha: f64, support: Vec<usize>) -> Self {
        let s = support.len();
        let corr_s = DVector::from_iterator(s, support.iter().map(|&i| corr[i]));
        if s == 0 {
            return Self {
                support,
                beta: DVector::zeros(0),
                corr_s,
                chol: None,
            };
        }
        let a = DMatrix::from_fn(s, s, |r, c| {
            gram[(support[r], support[c])] + if r == c { alpha } else { 0.0 }
        });
        match a.clone().cholesky() {
            Some(chol) => {
                let beta = chol.solve(&corr_s);
                Self {
                    support,
                    beta,
                    corr_s,
                    chol: Some(chol),
                }
            }
            None => {
                // Singular normal equations (α = 0 with dependent columns):
                // fall back to the minimum-norm solution, no flip gains.
                let beta = a
                    .svd(true, true)
                    .solve(&corr_s, 1e-12)
                    .unwrap_or_else(|_| DVector::zeros(s));
                Self {
                    support,
                    beta,
                    corr_s,
                    chol: None,
                }
            }
        }
    }
}

/// Solves the class-specific spike-and-slab problem for one observation.
///
/// For repeated solves against one dictionary build a [`SpikeSlabSolver`]
/// once instead.
pub fn solve_spike_slab(
    y: &DVector<f64>,
    dict: &Dictionary,
    params: &SpikeSlabParams,
    opts: &SolverOptions,
) -> Result<SparseSolution> {
    SpikeSlabSolver::new(dict, params.clone(), opts.clone())?.solve(y)
}

/// Exact ridge coefficients on `support` via an SVD least-squares solve of
/// the augmented system `[X_S; √α I] β = [y; 0]`.
pub fn ridge_on_support(
    y: &DVector<f64>,
    atoms: &DMatrix<f64>,
    support: &[usize],
    alpha: f64,
) -> DVector<f64> {
    let n = atoms.nrows();
    let s = support.len();
    if s == 0 {
        return DVector::zeros(0);
    }
    let mut aug = DMatrix::zeros(n + s, s);
    for (c, &i) in support.iter().enumerate() {
        aug.view_mut((0, c), (n, 1)).copy_from(&atoms.column(i));
        aug[(n + c, c)] = alpha.sqrt();
    }
    let mut rhs = DVector::zeros(n + s);
    rhs.rows_mut(0, n).copy_from(y);
    aug.svd(true, true)
        .solve(&rhs, 1e-13)
        .unwrap_or_else(|_| DVector::zeros(s))
}

/// Global minimiser by enumeration of all `2^M` supports. Ties go to the
/// smaller support, then to the lexicographically smallest index list.
pub fn brute_force_oracle(
    y: &DVector<f64>,
    dict: &Dictionary,
    params: &SpikeSlabParams,
) -> Result<SparseSolution> {
    check_dims(y, dict)?;
    check_finite(y)?;
    params.validate(Some(dict.num_classes()))?;
    let m = dict.num_atoms();
    if m > ORACLE_MAX_ATOMS {
        return Err(PcsError::InvalidInput(format!(
            "oracle enumerates at most {ORACLE_MAX_ATOMS} atoms, got {m}"
        )));
    }
    let mut best: Option<(f64, Vec<usize>, DVector<f64>)> = None;
    for mask in 0u32..(1u32 << m) {
        let support: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let coef = ridge_on_support(y, dict.atoms(), &support, params.alpha);
        let mut beta = DVector::zeros(m);
        for (&i, &b) in support.iter().zip(coef.iter()) {
            beta[i] = b;
        }
        let gamma: Vec<bool> = (0..m).map(|i| mask & (1 << i) != 0).collect();
        let f = objective_value(y, dict, &beta, &gamma, params)?;
        let replace = match &best {
            None => true,
            Some((bf, bs, _)) => {
                let eps = 1e-12 * (1.0 + bf.abs());
                if f < bf - eps {
                    true
                } else if (f - bf).abs() <= eps {
                    support.len() < bs.len() || (support.len() == bs.len() && support < *bs)
                } else {
                    false
                }
            }
        };
        if replace {
            best = Some((f, support, beta));
        }
    }
    let (_, _, beta) = best.expect("at least the empty support is enumerated");
    let gamma = gamma_from_beta(&beta);
    let objective = objective_value(y, dict, &beta, &gamma, params)?;
    Ok(SparseSolution {
        beta,
        gamma,
        objective,
        converged: true,
        iterations: 1 << m,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct L1Solution {
    pub beta: DVector<f64>,
    pub duality_gap: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Minimises `‖y − Xβ‖² + λ‖β‖₁` by cyclic coordinate descent, stopping
/// once the duality gap is at most `gap_tol`.
pub fn solve_l1(y: &DVector<f64>, dict: &Dictionary, lambda: f64) -> Result<L1Solution> {
    solve_l1_with(y, dict.atoms(), lambda, 1e-6, 100_000)
}

pub fn solve_l1_with(
    y: &DVector<f64>,
    atoms: &DMatrix<f64>,
    lambda: f64,
    gap_tol: f64,
    max_iter: usize,
) -> Result<L1Solution> {
    if y.len() != atoms.nrows() {
        return Err(dim("observation length does not match dictionary"));
    }
    check_finite(y)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(domain(format!("lambda must be positive, got {lambda}")));
    }
    let gram = atoms.tr_mul(atoms);
    let corr = atoms.tr_mul(y);
    Ok(l1_coordinate_descent(
        &gram,
        &corr,
        y.norm_squared(),
        lambda,
        gap_tol,
        max_iter,
    ))
}

/// Coordinate descent on the Gram form. The gap is certified with the
/// residual scaled into the dual-feasible set `‖Xᵀθ‖∞ ≤ λ/2`.
pub(crate) fn l1_coordinate_descent(
    gram: &DMatrix<f64>,
    corr: &DVector<f64>,
    y_norm2: f64,
    lambda: f64,
    gap_tol: f64,
    max_iter: usize,
) -> L1Solution {
    let m = gram.nrows();
    let half = lambda / 2.0;
    let mut beta = DVector::zeros(m);
    // grad_j = (Xᵀ(y − Xβ))_j, kept up to date.
    let mut xtr = corr.clone();
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        for j in 0..m {
            let gjj = gram[(j, j)];
            if gjj <= 0.0 {
                continue;
            }
            let old = beta[j];
            let rho = xtr[j] + gjj * old;
            let new = soft_threshold(rho, half) / gjj;
            if new != old {
                let diff = new - old;
                xtr.axpy(-diff, &gram.column(j), 1.0);
                beta[j] = new;
            }
        }
        gap = l1_duality_gap(&beta, &xtr, corr, y_norm2, lambda);
        if gap <= gap_tol {
            break;
        }
    }
    L1Solution {
        converged: gap <= gap_tol,
        beta,
        duality_gap: gap,
        iterations,
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Gap of `‖y − Xβ‖² + λ‖β‖₁` expressed through Gram quantities: with
/// `r = y − Xβ`, `‖r‖² = ‖y‖² − 2βᵀc + βᵀ(c − Xᵀr)`.
fn l1_duality_gap(
    beta: &DVector<f64>,
    xtr: &DVector<f64>,
    corr: &DVector<f64>,
    y_norm2: f64,
    lambda: f64,
) -> f64 {
    let half = lambda / 2.0;
    let bc = beta.dot(corr);
    let b_gb = beta.dot(&(corr - xtr));
    let r_norm2 = (y_norm2 - 2.0 * bc + b_gb).max(0.0);
    let primal = 0.5 * r_norm2 + half * beta.lp_norm(1);
    let max_corr = xtr.amax();
    let scale = if max_corr > half {
        half / max_corr
    } else {
        1.0
    };
    // θ = scale·r; ½‖y‖² − ½‖y − θ‖² = θᵀy − ½‖θ‖², with rᵀy = ‖y‖² − βᵀc.
    let r_dot_y = y_norm2 - bc;
    let dual = scale * r_dot_y - 0.5 * scale * scale * r_norm2;
    (2.0 * (primal - dual)).max(0.0)
}

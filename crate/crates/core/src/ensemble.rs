//! Bagged regression trees and LASSO ensemble pruning.
//!
//! Pruning fits non-negative learner coefficients `α` on a validation set by
//! minimizing
//!
//! ```text
//! (1/N) Σ_n (y_n − Σ_k α_k f_k(x_n))² + β Σ_k α_k,   α_k ≥ 0
//! ```
//!
//! with cyclic coordinate descent on the Gram form of the problem. Tree
//! predictions are strongly collinear, so descent can stall short of the
//! optimum; its support then seeds an exact active-set (Lawson–Hanson) pass.
//! The budget form `Σ α_k ≤ 1/λ` is reached by bisection on `β`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::seed;
use crate::tree::{fit_tree_on, FitParams, RegressionTree, TreeNode};

pub const DEFAULT_TREES: usize = 50;
pub const DEFAULT_LAMBDA: f64 = 2e-2;

/// Coordinate-descent stopping rule: largest coefficient change in a sweep.
pub const CD_TOL: f64 = 1e-8;
pub const CD_MAX_SWEEPS: usize = 10_000;
/// Coefficients above this are considered selected.
pub const ACTIVE_EPS: f64 = 1e-10;
/// KKT tolerance below which an unconverged descent is not reported.
pub const KKT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub params: FitParams,
    pub n_features: usize,
    pub trees: Vec<RegressionTree>,
    pub tree_seeds: Vec<u64>,
    pub alpha: Vec<f64>,
    /// Indices of selected trees, ascending.
    pub active: Vec<usize>,
    pub lambda: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Bundle {
    params: FitParams,
    n_features: usize,
    lambda: Option<f64>,
    tree_seeds: Vec<u64>,
    alpha: Vec<f64>,
    active: Vec<usize>,
    trees: Vec<TreeNode>,
}

/// `n` uniform draws with replacement from `0..n`.
pub fn bootstrap_indices(n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Argument("bootstrap of an empty set".into()));
    }
    let mut rng = seed::rng(seed);
    Ok((0..n).map(|_| rng.random_range(0..n)).collect())
}

/// Seed of tree `k` under `master_seed`. The sequence is prefix-stable: the
/// first `K` trees of a larger bag are the bag of size `K`.
pub fn tree_seed(master_seed: u64, k: usize) -> u64 {
    seed::derive(master_seed, "tree", k as u64)
}

/// One tree per bootstrap replicate of `(x, y)`.
pub fn fit_bagged(
    x: &FeatureMatrix,
    y: &[f64],
    k: usize,
    params: &FitParams,
    master_seed: u64,
) -> Result<Ensemble> {
    if k == 0 {
        return Err(Error::Argument("ensemble needs at least one tree".into()));
    }
    if x.n_rows() == 0 || x.n_rows() != y.len() {
        return Err(Error::Dimension(format!(
            "{} feature rows, {} targets",
            x.n_rows(),
            y.len()
        )));
    }
    x.check_finite()?;
    let tree_seeds: Vec<u64> = (0..k).map(|i| tree_seed(master_seed, i)).collect();
    let trees = tree_seeds
        .par_iter()
        .map(|&s| {
            let sample = bootstrap_indices(y.len(), s)?;
            fit_tree_on(x, y, &sample, params)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble {
        params: *params,
        n_features: x.n_cols(),
        trees,
        tree_seeds,
        alpha: vec![1.0 / k as f64; k],
        active: (0..k).collect(),
        lambda: None,
    })
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    fn check_row(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::Schema(format!(
                "feature row has {} columns, ensemble expects {}",
                x.len(),
                self.n_features
            )));
        }
        Ok(())
    }

    /// Unweighted mean over the active trees.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.check_row(x)?;
        if self.active.is_empty() {
            return Err(Error::State("no active trees in ensemble".into()));
        }
        let s: f64 = self.active.iter().map(|&k| self.trees[k].root.predict(x)).sum();
        Ok(s / self.active.len() as f64)
    }

    /// `Σ α_k f_k(x)` over the active trees.
    pub fn predict_weighted(&self, x: &[f64]) -> Result<f64> {
        self.check_row(x)?;
        if self.active.is_empty() {
            return Err(Error::State("no active trees in ensemble".into()));
        }
        Ok(self
            .active
            .iter()
            .map(|&k| self.alpha[k] * self.trees[k].root.predict(x))
            .sum())
    }

    pub fn predict_all(&self, x: &FeatureMatrix, weighted: bool) -> Result<Vec<f64>> {
        x.rows()
            .map(|r| {
                if weighted {
                    self.predict_weighted(r)
                } else {
                    self.predict(r)
                }
            })
            .collect()
    }

    /// Per-tree predictions, `out[k][n] = f_k(x_n)`.
    pub fn tree_predictions(&self, x: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        if x.n_cols() != self.n_features {
            return Err(Error::Schema(format!(
                "matrix has {} columns, ensemble expects {}",
                x.n_cols(),
                self.n_features
            )));
        }
        let preds: Vec<Vec<f64>> = self
            .trees
            .iter()
            .map(|t| x.rows().map(|r| t.root.predict(r)).collect())
            .collect();
        if preds.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite tree prediction".into()));
        }
        Ok(preds)
    }

    pub fn to_json(&self) -> String {
        let b = Bundle {
            params: self.params,
            n_features: self.n_features,
            lambda: self.lambda,
            tree_seeds: self.tree_seeds.clone(),
            alpha: self.alpha.clone(),
            active: self.active.clone(),
            trees: self.trees.iter().map(|t| t.root.clone()).collect(),
        };
        serde_json::to_string(&b).expect("ensemble serialization is infallible")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let b: Bundle =
            serde_json::from_str(s).map_err(|e| Error::Data(format!("ensemble JSON: {e}")))?;
        let k = b.trees.len();
        if b.tree_seeds.len() != k || b.alpha.len() != k || b.active.iter().any(|&a| a >= k) {
            return Err(Error::Data("inconsistent ensemble bundle".into()));
        }
        Ok(Ensemble {
            params: b.params,
            n_features: b.n_features,
            trees: b
                .trees
                .into_iter()
                .map(|root| RegressionTree {
                    n_features: b.n_features,
                    root,
                })
                .collect(),
            tree_seeds: b.tree_seeds,
            alpha: b.alpha,
            active: b.active,
            lambda: b.lambda,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneResult {
    pub alpha: Vec<f64>,
    pub active: Vec<usize>,
    pub objective_value: f64,
    pub n_active: usize,
    /// Mean squared error of `Σ α_k f_k` on the fitting data.
    pub resubstitution_error: f64,
    pub beta: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub final_delta: f64,
    /// Whether the active-set pass replaced the descent iterate.
    pub refined: bool,
    /// Objective after each sweep.
    pub objective_trace: Vec<f64>,
}

impl PruneResult {
    pub fn alpha_sum(&self) -> f64 {
        self.alpha.iter().sum()
    }
}

/// Gram form of the pruning problem: `Q = FᵀF/N`, `b = Fᵀy/N`, `c = yᵀy/N`.
#[derive(Debug, Clone)]
pub struct PruneProblem {
    preds: Vec<Vec<f64>>,
    y: Vec<f64>,
    q: Vec<Vec<f64>>,
    b: Vec<f64>,
    c: f64,
}

impl PruneProblem {
    /// `preds[k][n]` is learner `k` on validation sample `n`.
    pub fn new(preds: Vec<Vec<f64>>, y: &[f64]) -> Result<Self> {
        let n = y.len();
        if n == 0 || preds.is_empty() {
            return Err(Error::Argument("empty pruning problem".into()));
        }
        if preds.iter().any(|p| p.len() != n) {
            return Err(Error::Dimension("prediction/target length mismatch".into()));
        }
        if preds.iter().flatten().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite value in pruning problem".into()));
        }
        let k = preds.len();
        let nf = n as f64;
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>() / nf;
        let mut q = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in i..k {
                let v = dot(&preds[i], &preds[j]);
                q[i][j] = v;
                q[j][i] = v;
            }
        }
        let b = preds.iter().map(|p| dot(p, y)).collect();
        let c = dot(y, y);
        Ok(PruneProblem {
            preds,
            y: y.to_vec(),
            q,
            b,
            c,
        })
    }

    pub fn n_learners(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, alpha: &[f64], beta: f64) -> f64 {
        let k = alpha.len();
        let mut quad = 0.0;
        for i in 0..k {
            if alpha[i] == 0.0 {
                continue;
            }
            let qi: f64 = (0..k).map(|j| self.q[i][j] * alpha[j]).sum();
            quad += alpha[i] * qi;
        }
        let lin: f64 = alpha.iter().zip(&self.b).map(|(a, b)| a * b).sum();
        self.c - 2.0 * lin + quad + beta * alpha.iter().sum::<f64>()
    }

    /// Gradient of the squared-loss term, `2(Qα − b)`.
    pub fn loss_gradient(&self, alpha: &[f64]) -> Vec<f64> {
        (0..alpha.len())
            .map(|i| {
                let qa: f64 = (0..alpha.len()).map(|j| self.q[i][j] * alpha[j]).sum();
                2.0 * (qa - self.b[i])
            })
            .collect()
    }

    /// Largest KKT violation at `alpha`.
    pub fn kkt_residual(&self, alpha: &[f64], beta: f64) -> f64 {
        self.loss_gradient(alpha)
            .iter()
            .zip(alpha)
            .map(|(g, &a)| {
                if a > 0.0 {
                    (g + beta).abs()
                } else {
                    (-(g + beta)).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn mse(&self, alpha: &[f64]) -> f64 {
        let n = self.y.len();
        (0..n)
            .map(|i| {
                let fit: f64 = alpha
                    .iter()
                    .zip(&self.preds)
                    .filter(|(a, _)| **a != 0.0)
                    .map(|(a, p)| a * p[i])
                    .sum();
                (self.y[i] - fit).powi(2)
            })
            .sum::<f64>()
            / n as f64
    }

    /// Penalty at which `α = 0` becomes optimal.
    pub fn beta_max(&self) -> f64 {
        self.b.iter().map(|b| 2.0 * b).fold(0.0, f64::max)
    }

    /// Non-negative LASSO by cyclic coordinate descent from `α = 0`.
    pub fn solve(&self, beta: f64) -> Result<PruneResult> {
        if !(beta >= 0.0) {
            return Err(Error::Argument(format!("penalty must be >= 0, got {beta}")));
        }
        let k = self.n_learners();
        let mut alpha = vec![0.0; k];
        // qa = Qα, maintained incrementally
        let mut qa = vec![0.0; k];
        let mut trace = Vec::new();
        let mut last = self.objective(&alpha, beta);
        let mut delta = f64::INFINITY;
        let mut sweeps = 0;
        while sweeps < CD_MAX_SWEEPS {
            sweeps += 1;
            delta = 0.0;
            for i in 0..k {
                let qii = self.q[i][i];
                let new = if qii > 0.0 {
                    let rho = self.b[i] - (qa[i] - qii * alpha[i]);
                    ((rho - 0.5 * beta) / qii).max(0.0)
                } else {
                    0.0
                };
                let d = new - alpha[i];
                if d != 0.0 {
                    for (j, qaj) in qa.iter_mut().enumerate() {
                        *qaj += self.q[j][i] * d;
                    }
                    alpha[i] = new;
                    delta = f64::max(delta, d.abs());
                }
            }
            let obj = self.objective(&alpha, beta);
            debug_assert!(
                obj <= last + 1e-12 * (1.0 + last.abs()),
                "objective rose from {last} to {obj}"
            );
            trace.push(obj);
            last = obj;
            if delta < CD_TOL {
                break;
            }
        }
        let converged = delta < CD_TOL;
        let mut refined = false;
        if let Some(polished) = self.refine(&alpha, beta) {
            let before = (self.objective(&alpha, beta), self.kkt_residual(&alpha, beta));
            let after = (self.objective(&polished, beta), self.kkt_residual(&polished, beta));
            if after.0 <= before.0 + 1e-15 * (1.0 + before.0.abs()) && after.1 <= before.1 {
                refined = polished != alpha;
                alpha = polished;
            }
        }
        if !converged && self.kkt_residual(&alpha, beta) > KKT_TOL {
            log::warn!("coordinate descent stopped after {sweeps} sweeps, last change {delta:e}");
        }
        let active: Vec<usize> = (0..k).filter(|&i| alpha[i] > ACTIVE_EPS).collect();
        for (i, a) in alpha.iter_mut().enumerate() {
            if !active.contains(&i) {
                *a = 0.0;
            }
        }
        Ok(PruneResult {
            objective_value: self.objective(&alpha, beta),
            resubstitution_error: self.mse(&alpha),
            n_active: active.len(),
            active,
            alpha,
            beta,
            sweeps,
            converged,
            final_delta: delta,
            refined,
            objective_trace: trace,
        })
    }

    /// Exact minimizer by the Lawson–Hanson active-set method, warm-started
    /// from the support of `start`. `None` if a subproblem is singular.
    fn refine(&self, start: &[f64], beta: f64) -> Option<Vec<f64>> {
        let k = self.n_learners();
        // minimize ½αᵀHα − gᵀα with H = 2Q, g = 2b − β
        let g: Vec<f64> = self.b.iter().map(|b| 2.0 * b - beta).collect();
        let mut alpha = start.to_vec();
        let mut passive: Vec<bool> = alpha.iter().map(|&a| a > 0.0).collect();
        let neg_grad = |alpha: &[f64]| -> Vec<f64> {
            (0..k)
                .map(|i| g[i] - 2.0 * (0..k).map(|j| self.q[i][j] * alpha[j]).sum::<f64>())
                .collect()
        };
        let scale = self.q.iter().enumerate().map(|(i, r)| r[i]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let tol = 1e-13 * scale.max(g.iter().fold(0.0, |m, v| f64::max(m, v.abs())));
        let mut first = passive.iter().any(|&p| p);
        for _ in 0..3 * k + 3 {
            if !first {
                let w = neg_grad(&alpha);
                let pick = (0..k)
                    .filter(|&j| !passive[j] && w[j] > tol)
                    .max_by(|&a, &b| w[a].total_cmp(&w[b]).then(b.cmp(&a)));
                match pick {
                    Some(j) => passive[j] = true,
                    None => return Some(alpha),
                }
            }
            first = false;
            for _ in 0..=k {
                let idx: Vec<usize> = (0..k).filter(|&i| passive[i]).collect();
                let s = self.solve_subproblem(&idx, &g)?;
                if s.iter().all(|&v| v > 0.0) {
                    for (&i, &v) in idx.iter().zip(&s) {
                        alpha[i] = v;
                    }
                    break;
                }
                let mut step = 1.0f64;
                for (&i, &v) in idx.iter().zip(&s) {
                    if v <= 0.0 {
                        step = step.min(alpha[i] / (alpha[i] - v));
                    }
                }
                for (&i, &v) in idx.iter().zip(&s) {
                    alpha[i] += step * (v - alpha[i]);
                    if alpha[i] <= ACTIVE_EPS * 1e-3 {
                        alpha[i] = 0.0;
                        passive[i] = false;
                    }
                }
                if !passive.iter().any(|&p| p) {
                    break;
                }
            }
        }
        None
    }

    /// Solves `H_PP s = g_P` on the passive set by Cholesky.
    fn solve_subproblem(&self, idx: &[usize], g: &[f64]) -> Option<Vec<f64>> {
        let m = idx.len();
        let h = nalgebra::DMatrix::from_fn(m, m, |r, c| 2.0 * self.q[idx[r]][idx[c]]);
        let rhs = nalgebra::DVector::from_iterator(m, idx.iter().map(|&i| g[i]));
        let chol = h.cholesky()?;
        let s = chol.solve(&rhs);
        s.iter().all(|v| v.is_finite()).then(|| s.iter().copied().collect())
    }

    /// Solution at the smallest `β` whose coefficients satisfy
    /// `Σ α ≤ budget`, located by bisection.
    pub fn solve_budget(&self, budget: f64) -> Result<PruneResult> {
        if !(budget > 0.0) {
            return Err(Error::Argument(format!("budget must be > 0, got {budget}")));
        }
        let free = self.solve(0.0)?;
        if free.alpha_sum() <= budget {
            return Ok(free);
        }
        let (mut lo, mut hi) = (0.0, self.beta_max());
        let mut best = self.solve(hi)?;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let r = self.solve(mid)?;
            if r.alpha_sum() <= budget {
                hi = mid;
                best = r;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-12 * hi {
                break;
            }
        }
        Ok(best)
    }
}

/// Non-negative L1-penalized fit of learner coefficients on `(x_val, y_val)`.
pub fn lasso_prune(
    e: &Ensemble,
    x_val: &FeatureMatrix,
    y_val: &[f64],
    beta: f64,
) -> Result<PruneResult> {
    if x_val.n_rows() != y_val.len() {
        return Err(Error::Dimension("validation rows/targets mismatch".into()));
    }
    PruneProblem::new(e.tree_predictions(x_val)?, y_val)?.solve(beta)
}

/// Prunes `e` under the budget `Σ α ≤ 1/λ`; the active set becomes the
/// support of the solution.
pub fn select_trees(
    e: &Ensemble,
    x_val: &FeatureMatrix,
    y_val: &[f64],
    lambda: f64,
) -> Result<(Ensemble, PruneResult)> {
    if !(lambda > 0.0) {
        return Err(Error::Argument(format!("lambda must be > 0, got {lambda}")));
    }
    if x_val.n_rows() != y_val.len() {
        return Err(Error::Dimension("validation rows/targets mismatch".into()));
    }
    let problem = PruneProblem::new(e.tree_predictions(x_val)?, y_val)?;
    let r = problem.solve_budget(1.0 / lambda)?;
    let mut out = e.clone();
    out.alpha = r.alpha.clone();
    out.active = r.active.clone();
    out.lambda = Some(lambda);
    Ok((out, r))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    /// `1/Σα` at the solution; infinite when every coefficient is zero.
    pub lambda: f64,
    pub beta: f64,
    pub n_active: usize,
    pub resub_error: f64,
    /// Support of the solution.
    pub active: Vec<usize>,
}

/// Solution path over the given penalties.
pub fn beta_sweep(e: &Ensemble, x_val: &FeatureMatrix, y_val: &[f64], betas: &[f64]) -> Result<Vec<SweepPoint>> {
    let problem = PruneProblem::new(e.tree_predictions(x_val)?, y_val)?;
    betas
        .par_iter()
        .map(|&beta| {
            let r = problem.solve(beta)?;
            let s = r.alpha_sum();
            Ok(SweepPoint {
                lambda: if s > 0.0 { 1.0 / s } else { f64::INFINITY },
                beta,
                n_active: r.n_active,
                resub_error: r.resubstitution_error,
                active: r.active,
            })
        })
        .collect()
}

/// `n` log-spaced penalties from `beta_max·1e-6` to `beta_max`, plus zero.
pub fn default_beta_grid(e: &Ensemble, x_val: &FeatureMatrix, y_val: &[f64], n: usize) -> Result<Vec<f64>> {
    let bmax = PruneProblem::new(e.tree_predictions(x_val)?, y_val)?.beta_max();
    let mut g = vec![0.0];
    if n >= 2 {
        for i in 0..n {
            let t = i as f64 / (n - 1) as f64;
            g.push(bmax * 10f64.powf(-6.0 + 6.0 * t));
        }
    }
    Ok(g)
}

/// `folds`-fold cross-validated RMSE of unpruned bags of each size in `k_grid`.
pub fn cross_validate_treecount(
    x: &FeatureMatrix,
    y: &[f64],
    k_grid: &[usize],
    folds: usize,
    params: &FitParams,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    let n = y.len();
    if folds < 2 || folds > n {
        return Err(Error::Argument(format!(
            "need 2 <= folds <= n, got folds = {folds}, n = {n}"
        )));
    }
    if k_grid.is_empty() || k_grid.contains(&0) {
        return Err(Error::Argument("tree-count grid must be non-empty and positive".into()));
    }
    let k_max = *k_grid.iter().max().unwrap();
    let fold_of = fold_assignment(n, folds, seed);
    let mut sums = vec![0.0; k_grid.len()];
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
        let xt = x.select_rows(&train);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let bag = fit_bagged(&xt, &yt, k_max, params, seed::derive(seed, "cv-fold", f as u64))?;
        // running[k][j]: sum of the first k+1 trees on test row j
        let mut running = vec![0.0; test.len()];
        let mut rmse_at = vec![0.0; k_max + 1];
        for (k, tree) in bag.trees.iter().enumerate() {
            for (j, &i) in test.iter().enumerate() {
                running[j] += tree.root.predict(x.row(i));
            }
            let kk = (k + 1) as f64;
            let mse = test
                .iter()
                .enumerate()
                .map(|(j, &i)| (running[j] / kk - y[i]).powi(2))
                .sum::<f64>()
                / test.len() as f64;
            rmse_at[k + 1] = mse.sqrt();
        }
        for (s, &k) in sums.iter_mut().zip(k_grid) {
            *s += rmse_at[k];
        }
    }
    Ok(k_grid
        .iter()
        .zip(sums)
        .map(|(&k, s)| (k, s / folds as f64))
        .collect())
}

/// Fold index per row: a seeded shuffle dealt round-robin into equal parts.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed::derive(seed, "folds", 0)));
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }
    fold_of
}

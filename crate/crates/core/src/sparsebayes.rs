//! Bayesian sparse linear regression over a fixed design matrix.
//!
//! Each coefficient `c_i` has a zero-mean Gaussian prior with its own
//! precision `alpha_i`; the noise has precision `beta`. Hyperparameters are
//! set by type-II maximum likelihood with the sequential add / delete /
//! re-estimate scheme of the fast marginal-likelihood algorithm. Terms whose
//! precision diverges are pruned, which yields sparse coefficient vectors.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// How the noise precision is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// Start from `beta = 1 / (initial_fraction * var(y))` and re-estimate.
    Estimate { initial_fraction: f64 },
    /// Keep `beta` fixed.
    Fixed { beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Stop once no update changes the log marginal likelihood by more than this.
    pub tolerance: f64,
    /// Precisions at or above this value prune the term.
    pub alpha_ceiling: f64,
    pub noise: NoiseModel,
    /// Lower bound on the noise variance, relative to `var(y)`.
    pub min_noise_fraction: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 300,
            tolerance: 1e-7,
            alpha_ceiling: 1e12,
            noise: NoiseModel::Estimate { initial_fraction: 0.1 },
            min_noise_fraction: 1e-10,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations must be at least 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(invalid("tolerance must be positive"));
        }
        if !(self.alpha_ceiling > 0.0) {
            return Err(invalid("alpha_ceiling must be positive"));
        }
        match self.noise {
            NoiseModel::Estimate { initial_fraction } if !(initial_fraction > 0.0) => {
                Err(invalid("initial noise fraction must be positive"))
            }
            NoiseModel::Fixed { beta } if !(beta > 0.0 && beta.is_finite()) => {
                Err(invalid("fixed beta must be positive and finite"))
            }
            _ => Ok(()),
        }
    }
}

/// Gaussian posterior over the coefficients at optimized hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseFit {
    /// Posterior mean, one entry per basis term; zero for inactive terms.
    pub mean: Vec<f64>,
    /// Indices of active terms, ascending.
    pub active: Vec<usize>,
    /// Prior precisions of the active terms, aligned with `active`.
    pub alpha: Vec<f64>,
    /// Posterior covariance over the active terms.
    pub covariance: DMatrix<f64>,
    /// Noise precision.
    pub beta: f64,
    pub log_marginal_likelihood: f64,
    pub iterations: usize,
    /// Log marginal likelihood after each iteration.
    #[serde(skip)]
    pub history: Vec<f64>,
}

impl SparseFit {
    pub fn n_terms(&self) -> usize {
        self.mean.len()
    }

    /// Predictive mean and variance for a full basis row `Psi(x)`.
    pub fn predict(&self, psi_row: &[f64]) -> Result<(f64, f64)> {
        if psi_row.len() != self.n_terms() {
            return Err(invalid(format!(
                "basis row has {} entries, fit has {}",
                psi_row.len(),
                self.n_terms()
            )));
        }
        let active: Vec<f64> = self.active.iter().map(|&i| psi_row[i]).collect();
        Ok(self.predict_active(&active))
    }

    /// Same as [`predict`](Self::predict) for a row restricted to `active`.
    pub fn predict_active(&self, psi_active: &[f64]) -> (f64, f64) {
        let mean: f64 = self
            .active
            .iter()
            .zip(psi_active)
            .map(|(&i, &v)| self.mean[i] * v)
            .sum();
        let k = self.active.len();
        let mut quad = 0.0;
        for a in 0..k {
            let mut row = 0.0;
            for b in 0..k {
                row += self.covariance[(a, b)] * psi_active[b];
            }
            quad += psi_active[a] * row;
        }
        (mean, 1.0 / self.beta + quad.max(0.0))
    }

    /// Posterior at fixed hyperparameters. Terms with `alpha >= ceiling` are
    /// inactive; `alpha = 0` gives a flat prior.
    pub fn from_hyperparameters(
        design: &DMatrix<f64>,
        y: &[f64],
        alpha: &[f64],
        beta: f64,
        ceiling: f64,
    ) -> Result<Self> {
        check_inputs(design, y)?;
        if alpha.len() != design.ncols() {
            return Err(invalid("one alpha per design column required"));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(invalid("beta must be positive and finite"));
        }
        let prepared = PreparedDesign::new(design);
        let ty = prepared.project(y);
        let active: Vec<usize> = (0..alpha.len()).filter(|&i| alpha[i] < ceiling).collect();
        let act_alpha: Vec<f64> = active.iter().map(|&i| alpha[i]).collect();
        let yy = y.iter().map(|v| v * v).sum::<f64>();
        let post = Posterior::compute(&prepared.gram, &ty, yy, y.len(), &active, &act_alpha, beta)?;
        Ok(post.into_fit(design.ncols(), active, act_alpha, beta, 0, vec![]))
    }
}

/// Design matrix with its Gram matrix, shareable across responses.
#[derive(Debug, Clone)]
pub struct PreparedDesign {
    design: DMatrix<f64>,
    gram: DMatrix<f64>,
}

impl PreparedDesign {
    pub fn new(design: &DMatrix<f64>) -> Self {
        Self { gram: design.tr_mul(design), design: design.clone() }
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    /// Appends rows, updating the Gram matrix in place.
    pub fn push_rows(&mut self, rows: &DMatrix<f64>) -> Result<()> {
        if rows.ncols() != self.design.ncols() {
            return Err(invalid("appended rows have the wrong width"));
        }
        self.gram += rows.tr_mul(rows);
        let n = self.design.nrows();
        let design = std::mem::replace(&mut self.design, DMatrix::zeros(0, 0));
        let mut grown = design.resize_vertically(n + rows.nrows(), 0.0);
        grown.rows_mut(n, rows.nrows()).copy_from(rows);
        self.design = grown;
        Ok(())
    }

    fn project(&self, y: &[f64]) -> DVector<f64> {
        self.design.tr_mul(&DVector::from_column_slice(y))
    }
}

fn check_inputs(design: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    if design.nrows() == 0 || design.ncols() == 0 {
        return Err(invalid("design matrix must be at least 1x1"));
    }
    if design.nrows() != y.len() {
        return Err(invalid(format!(
            "design has {} rows but response has {} entries",
            design.nrows(),
            y.len()
        )));
    }
    if design.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("design and response must be finite"));
    }
    Ok(())
}

/// Posterior moments over the active set plus the log marginal likelihood.
struct Posterior {
    chol: Cholesky<f64, Dyn>,
    mean: DVector<f64>,
    log_ml: f64,
}

impl Posterior {
    fn compute(
        gram: &DMatrix<f64>,
        ty: &DVector<f64>,
        yy: f64,
        n: usize,
        active: &[usize],
        alpha: &[f64],
        beta: f64,
    ) -> Result<Self> {
        let k = active.len();
        let mut prec = DMatrix::from_fn(k, k, |a, b| beta * gram[(active[a], active[b])]);
        for a in 0..k {
            prec[(a, a)] += alpha[a];
        }
        let chol = match prec.clone().cholesky() {
            Some(c) => c,
            None => {
                let jitter = 1e-10 * prec.trace().abs().max(f64::MIN_POSITIVE) / k.max(1) as f64;
                let mut j = prec;
                for a in 0..k {
                    j[(a, a)] += jitter;
                }
                j.cholesky()
                    .ok_or_else(|| Error::RankDeficient("posterior precision is not positive definite".into()))?
            }
        };
        let ty_a = DVector::from_iterator(k, active.iter().map(|&i| ty[i]));
        let mean = chol.solve(&ty_a) * beta;
        let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().take(k).map(|d| d.ln()).sum::<f64>();
        let nf = n as f64;
        let log_ml = -0.5
            * (nf * LN_2PI - nf * beta.ln() - alpha.iter().map(|a| a.ln()).sum::<f64>() + log_det + beta * yy
                - beta * ty_a.dot(&mean));
        Ok(Self { chol, mean, log_ml })
    }

    fn covariance(&self) -> DMatrix<f64> {
        let c = self.chol.inverse();
        (&c + c.transpose()) * 0.5
    }

    fn into_fit(
        self,
        p: usize,
        active: Vec<usize>,
        alpha: Vec<f64>,
        beta: f64,
        iterations: usize,
        history: Vec<f64>,
    ) -> SparseFit {
        // report terms in ascending order
        let mut order: Vec<usize> = (0..active.len()).collect();
        order.sort_by_key(|&a| active[a]);
        let cov = self.covariance();
        let mut mean = vec![0.0; p];
        for (a, &i) in active.iter().enumerate() {
            mean[i] = self.mean[a];
        }
        SparseFit {
            mean,
            covariance: DMatrix::from_fn(order.len(), order.len(), |a, b| cov[(order[a], order[b])]),
            active: order.iter().map(|&a| active[a]).collect(),
            alpha: order.iter().map(|&a| alpha[a]).collect(),
            beta,
            log_marginal_likelihood: self.log_ml,
            iterations,
            history,
        }
    }
}

/// Hyperparameters to start a fit from, typically a previous fit of the
/// same response on a smaller design.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub active: Vec<usize>,
    pub alpha: Vec<f64>,
    pub beta: f64,
}

impl From<&SparseFit> for WarmStart {
    fn from(fit: &SparseFit) -> Self {
        Self { active: fit.active.clone(), alpha: fit.alpha.clone(), beta: fit.beta }
    }
}

/// Type-II maximum-likelihood sparse fit of `y` on `design`.
pub fn fit(design: &DMatrix<f64>, y: &[f64], opts: &FitOptions) -> Result<SparseFit> {
    fit_prepared(&PreparedDesign::new(design), y, opts, None)
}

/// Mutable state of the sequential optimizer. `sigma`, `mu`, `big_s` and
/// `big_q` are kept consistent with `(active, alpha, beta)` by rank-one
/// updates; [`Optimizer::refresh`] rebuilds them from scratch.
struct Optimizer<'a> {
    gram: &'a DMatrix<f64>,
    ty: DVector<f64>,
    yy: f64,
    n: usize,
    diag: Vec<f64>,
    usable: Vec<bool>,
    active: Vec<usize>,
    alpha: Vec<f64>,
    beta: f64,
    sigma: DMatrix<f64>,
    mu: DVector<f64>,
    big_s: Vec<f64>,
    big_q: Vec<f64>,
    log_ml: f64,
    position: Vec<usize>,
}

impl<'a> Optimizer<'a> {
    fn refresh(&mut self) -> Result<()> {
        let post = Posterior::compute(self.gram, &self.ty, self.yy, self.n, &self.active, &self.alpha, self.beta)?;
        self.sigma = post.chol.inverse();
        self.mu = post.mean;
        self.log_ml = post.log_ml;
        let p = self.diag.len();
        let k = self.active.len();
        let beta = self.beta;
        // Sigma * G_{A,:}
        let cross = DMatrix::from_fn(k, p, |a, m| self.gram[(self.active[a], m)]);
        let weighted = &self.sigma * &cross;
        for m in 0..p {
            let quad = cross.column(m).dot(&weighted.column(m));
            let lin = cross.column(m).dot(&self.mu);
            self.big_s[m] = beta * self.diag[m] - beta * beta * quad;
            self.big_q[m] = beta * self.ty[m] - beta * lin;
        }
        self.position = vec![usize::MAX; p];
        for (a, &i) in self.active.iter().enumerate() {
            self.position[i] = a;
        }
        Ok(())
    }

    /// `v' G_{A,:}` for a vector over the active set. The Gram matrix is
    /// symmetric, so columns (contiguous) stand in for rows.
    fn combine_rows(&self, v: &DVector<f64>) -> Vec<f64> {
        let p = self.diag.len();
        let mut out = vec![0.0; p];
        for (a, &i) in self.active.iter().enumerate() {
            let w = v[a];
            if w == 0.0 {
                continue;
            }
            for (o, g) in out.iter_mut().zip(self.gram.column(i).iter()) {
                *o += w * g;
            }
        }
        out
    }

    fn best_action(&self, ceiling: f64) -> Option<Action> {
        let k = self.active.len();
        let mut best: Option<Action> = None;
        for m in 0..self.diag.len() {
            if !self.usable[m] {
                continue;
            }
            let (big_s, big_q) = (self.big_s[m], self.big_q[m]);
            let candidate = if self.position[m] == usize::MAX {
                let (s, q) = (big_s, big_q);
                let theta = q * q - s;
                if theta <= 0.0 || s <= 0.0 {
                    continue;
                }
                let new_alpha = s * s / theta;
                if new_alpha >= ceiling {
                    continue;
                }
                let gain = 0.5 * ((q * q - s) / s + (s / (q * q)).ln());
                Action { kind: ActionKind::Add, term: m, alpha: new_alpha, gain }
            } else {
                let old = self.alpha[self.position[m]];
                let denom = old - big_s;
                if denom <= 0.0 {
                    continue;
                }
                let s = old * big_s / denom;
                let q = old * big_q / denom;
                let theta = q * q - s;
                let contribution = |a: f64| 0.5 * (a.ln() - (a + s).ln() + q * q / (a + s));
                let delete = Action { kind: ActionKind::Delete, term: m, alpha: f64::INFINITY, gain: -contribution(old) };
                if theta > 0.0 && s * s / theta < ceiling {
                    let new_alpha = s * s / theta;
                    let gain = contribution(new_alpha) - contribution(old);
                    Action { kind: ActionKind::Reestimate, term: m, alpha: new_alpha, gain }
                } else if k > 1 {
                    delete
                } else {
                    continue;
                }
            };
            if !candidate.gain.is_finite() {
                continue;
            }
            if best.is_none_or(|b| candidate.gain > b.gain) {
                best = Some(candidate);
            }
        }
        best
    }

    fn apply(&mut self, action: &Action) {
        let beta = self.beta;
        match action.kind {
            ActionKind::Reestimate | ActionKind::Delete => {
                let a = self.position[action.term];
                let col = self.sigma.column(a).clone_owned();
                let sigma_aa = col[a];
                let kappa = match action.kind {
                    ActionKind::Delete => 1.0 / sigma_aa,
                    _ => 1.0 / (sigma_aa + 1.0 / (action.alpha - self.alpha[a])),
                };
                let mu_a = self.mu[a];
                let w: Vec<f64> = self.combine_rows(&col).into_iter().map(|v| beta * v).collect();
                for m in 0..w.len() {
                    self.big_s[m] += kappa * w[m] * w[m];
                    self.big_q[m] += kappa * mu_a * w[m];
                }
                self.sigma -= &col * col.transpose() * kappa;
                self.mu -= &col * (kappa * mu_a);
                if matches!(action.kind, ActionKind::Delete) {
                    let k = self.active.len();
                    self.sigma = self.sigma.clone().remove_row(a).remove_column(a);
                    self.mu = self.mu.clone().remove_row(a);
                    self.active.remove(a);
                    self.alpha.remove(a);
                    self.position[action.term] = usize::MAX;
                    for b in a..k - 1 {
                        self.position[self.active[b]] = b;
                    }
                } else {
                    self.alpha[a] = action.alpha;
                }
            }
            ActionKind::Add => {
                let i = action.term;
                let k = self.active.len();
                let b_i = DVector::from_iterator(k, self.active.iter().map(|&j| self.gram[(j, i)]));
                let c = &self.sigma * &b_i;
                let sigma_ii = 1.0 / (action.alpha + self.big_s[i]);
                let mu_i = sigma_ii * self.big_q[i];
                let cg = self.combine_rows(&c);
                let e: Vec<f64> = self
                    .gram
                    .column(i)
                    .iter()
                    .zip(&cg)
                    .map(|(g, c)| beta * g - beta * beta * c)
                    .collect();
                for m in 0..e.len() {
                    self.big_s[m] -= sigma_ii * e[m] * e[m];
                    self.big_q[m] -= mu_i * e[m];
                }
                let mut sigma = self.sigma.clone().resize(k + 1, k + 1, 0.0);
                for a in 0..k {
                    for b in 0..k {
                        sigma[(a, b)] += beta * beta * sigma_ii * c[a] * c[b];
                    }
                    sigma[(a, k)] = -beta * sigma_ii * c[a];
                    sigma[(k, a)] = -beta * sigma_ii * c[a];
                }
                sigma[(k, k)] = sigma_ii;
                self.sigma = sigma;
                let mut mu = self.mu.clone().resize_vertically(k + 1, 0.0);
                for a in 0..k {
                    mu[a] -= beta * mu_i * c[a];
                }
                mu[k] = mu_i;
                self.mu = mu;
                self.active.push(i);
                self.alpha.push(action.alpha);
                self.position[i] = k;
            }
        }
        self.log_ml += action.gain;
    }

    fn residual_ss(&self) -> f64 {
        // ||y - Phi mu||^2 = y'y - 2 mu' Phi'y + mu' G mu
        let k = self.active.len();
        let mut quad = 0.0;
        let mut lin = 0.0;
        for a in 0..k {
            lin += self.mu[a] * self.ty[self.active[a]];
            for b in 0..k {
                quad += self.mu[a] * self.gram[(self.active[a], self.active[b])] * self.mu[b];
            }
        }
        (self.yy - 2.0 * lin + quad).max(0.0)
    }

    /// Noise-precision fixed point, kept only if it raises the evidence.
    fn update_beta(&mut self, beta_max: f64) -> Result<f64> {
        let gamma: f64 = self.alpha.iter().enumerate().map(|(a, al)| 1.0 - al * self.sigma[(a, a)]).sum();
        let resid = self.residual_ss();
        let dof = self.n as f64 - gamma;
        let candidate = if resid <= 0.0 || dof <= 0.0 { beta_max } else { (dof / resid).min(beta_max) };
        if !(candidate.is_finite() && candidate > 0.0) || candidate == self.beta {
            return Ok(0.0);
        }
        let Ok(next) = Posterior::compute(self.gram, &self.ty, self.yy, self.n, &self.active, &self.alpha, candidate)
        else {
            return Ok(0.0);
        };
        if next.log_ml <= self.log_ml {
            return Ok(0.0);
        }
        let gain = next.log_ml - self.log_ml;
        self.beta = candidate;
        self.refresh()?;
        Ok(gain)
    }
}

/// As [`fit`], reusing a precomputed Gram matrix and optionally starting
/// from earlier hyperparameters.
pub fn fit_prepared(
    prepared: &PreparedDesign,
    y: &[f64],
    opts: &FitOptions,
    warm: Option<&WarmStart>,
) -> Result<SparseFit> {
    let design = &prepared.design;
    check_inputs(design, y)?;
    opts.validate()?;
    let (n, p) = (design.nrows(), design.ncols());
    let nf = n as f64;
    let gram = &prepared.gram;
    let ty = prepared.project(y);
    let yy: f64 = y.iter().map(|v| v * v).sum();
    let ymean = y.iter().sum::<f64>() / nf;
    let var = y.iter().map(|v| (v - ymean).powi(2)).sum::<f64>() / nf;

    if var <= f64::EPSILON * f64::EPSILON * ymean * ymean || var == 0.0 {
        return constant_fit(prepared, y, &ty, yy, ymean);
    }

    let beta_max = 1.0 / (opts.min_noise_fraction * var);
    let estimate_noise = matches!(opts.noise, NoiseModel::Estimate { .. });
    let diag: Vec<f64> = (0..p).map(|i| gram[(i, i)]).collect();
    let max_diag = diag.iter().cloned().fold(0.0, f64::max);
    let usable: Vec<bool> = diag.iter().map(|&g| g > 1e-12 * max_diag).collect();

    let warm = warm.filter(|w| {
        !w.active.is_empty()
            && w.active.len() == w.alpha.len()
            && w.active.iter().all(|&i| i < p && usable[i])
            && w.alpha.iter().all(|&a| a > 0.0 && a < opts.alpha_ceiling)
            && w.beta > 0.0
            && w.beta.is_finite()
    });
    let (active, alpha, beta) = match warm {
        Some(w) => {
            let beta = match opts.noise {
                NoiseModel::Fixed { beta } => beta,
                NoiseModel::Estimate { .. } => w.beta.min(beta_max),
            };
            (w.active.clone(), w.alpha.clone(), beta)
        }
        None => {
            let beta = match opts.noise {
                NoiseModel::Estimate { initial_fraction } => 1.0 / (initial_fraction * var),
                NoiseModel::Fixed { beta } => beta,
            };
            // seed with the term best aligned with the response
            let mut first = None;
            let mut best = f64::NEG_INFINITY;
            for i in 0..p {
                if usable[i] {
                    let score = ty[i] * ty[i] / diag[i];
                    if score > best {
                        best = score;
                        first = Some(i);
                    }
                }
            }
            let first = first.ok_or_else(|| invalid("design matrix has only zero columns"))?;
            let proj = ty[first] * ty[first] / diag[first];
            let excess = (proj - 1.0 / beta).abs().max(1e-12 * proj).max(f64::MIN_POSITIVE);
            (vec![first], vec![(diag[first] / excess).min(opts.alpha_ceiling * 0.5)], beta)
        }
    };

    let mut opt = Optimizer {
        gram,
        ty,
        yy,
        n,
        diag,
        usable,
        active,
        alpha,
        beta,
        sigma: DMatrix::zeros(0, 0),
        mu: DVector::zeros(0),
        big_s: vec![0.0; p],
        big_q: vec![0.0; p],
        log_ml: 0.0,
        position: vec![],
    };
    opt.refresh()?;
    let mut history = vec![opt.log_ml];
    let mut iterations = 0;
    let mut since_refresh = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let action = opt.best_action(opts.alpha_ceiling);
        let gain_alpha = action.as_ref().map_or(0.0, |a| a.gain);
        let due = since_refresh >= BETA_INTERVAL || gain_alpha < opts.tolerance;
        let mut gain_beta = 0.0;
        if estimate_noise && due {
            gain_beta = opt.update_beta(beta_max)?;
            since_refresh = 0;
        }
        if gain_alpha < opts.tolerance {
            if gain_beta < opts.tolerance {
                history.push(opt.log_ml);
                break;
            }
        } else if gain_beta == 0.0 {
            opt.apply(action.as_ref().expect("positive gain implies an action"));
            since_refresh += 1;
        }
        history.push(opt.log_ml);
    }

    let Optimizer { active, alpha, beta, .. } = opt;
    let post = Posterior::compute(gram, &prepared.project(y), yy, n, &active, &alpha, beta)?;
    Ok(post.into_fit(p, active, alpha, beta, iterations, history))
}

/// Iterations between noise re-estimations; each one rebuilds the posterior.
const BETA_INTERVAL: usize = 10;

fn constant_fit(prepared: &PreparedDesign, y: &[f64], ty: &DVector<f64>, yy: f64, ymean: f64) -> Result<SparseFit> {
    let beta = 1.0 / (1e-10 * ymean.abs().max(1.0).powi(2));
    let active = vec![0];
    let alpha = vec![1e-12];
    let post = Posterior::compute(&prepared.gram, ty, yy, y.len(), &active, &alpha, beta)?;
    let history = vec![post.log_ml];
    Ok(post.into_fit(prepared.design.ncols(), active, alpha, beta, 0, history))
}

#[derive(Debug, Clone, Copy)]
enum ActionKind {
    Add,
    Reestimate,
    Delete,
}

#[derive(Debug, Clone, Copy)]
struct Action {
    kind: ActionKind,
    term: usize,
    alpha: f64,
    gain: f64,
}

/// Leave-one-out error from hat-matrix leverages of the active-set design,
/// normalized by the response's sum of squared deviations.
pub fn loo_error(design: &DMatrix<f64>, y: &[f64], fit: &SparseFit) -> Result<f64> {
    check_inputs(design, y)?;
    if fit.n_terms() != design.ncols() {
        return Err(invalid("fit and design have different term counts"));
    }
    let n = design.nrows();
    let k = fit.active.len();
    let sub = DMatrix::from_fn(n, k, |r, a| design[(r, fit.active[a])]);
    let pred = &sub * DVector::from_iterator(k, fit.active.iter().map(|&i| fit.mean[i]));
    let ymean = y.iter().sum::<f64>() / n as f64;
    let denom: f64 = y.iter().map(|v| (v - ymean).powi(2)).sum();
    let resid: Vec<f64> = y.iter().zip(pred.iter()).map(|(a, b)| a - b).collect();
    if denom == 0.0 && resid.iter().all(|r| r.abs() <= 1e-12 * ymean.abs().max(1.0)) {
        return Ok(0.0);
    }
    let leverage = hat_diagonal(&sub)?;
    let mut num = 0.0;
    for (i, (&r, &h)) in resid.iter().zip(&leverage).enumerate() {
        if h >= 1.0 - 1e-10 {
            return Err(Error::DegenerateLeverage { index: i, leverage: h });
        }
        num += (r / (1.0 - h)).powi(2);
    }
    if denom == 0.0 {
        return Err(Error::UndefinedDenominator("response has zero variance".into()));
    }
    Ok(num / denom)
}

/// Diagonal of `X (X'X)^{-1} X'`.
pub fn hat_diagonal(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    let (n, k) = x.shape();
    if k == 0 {
        return Ok(vec![0.0; n]);
    }
    if k > n {
        return Err(Error::DegenerateLeverage { index: 0, leverage: 1.0 });
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..k).any(|i| r[(i, i)].abs() <= 1e-12 * scale) {
        return Err(Error::DegenerateLeverage { index: 0, leverage: 1.0 });
    }
    let q = qr.q();
    Ok((0..n).map(|i| q.row(i).norm_squared()).collect())
}

/// Relative validation error of surrogate predictions against model
/// responses, scaled by `(N_v - 1) / N_v`.
pub fn validation_error(model: &[f64], surrogate: &[f64]) -> Result<f64> {
    let nv = model.len();
    if nv != surrogate.len() {
        return Err(invalid("model and surrogate value counts differ"));
    }
    if nv < 2 {
        return Err(invalid("validation needs at least two points"));
    }
    let mean = model.iter().sum::<f64>() / nv as f64;
    let denom: f64 = model.iter().map(|m| (m - mean).powi(2)).sum();
    if denom == 0.0 {
        return Err(Error::UndefinedDenominator("validation responses have zero variance".into()));
    }
    let num: f64 = model.iter().zip(surrogate).map(|(m, s)| (m - s).powi(2)).sum();
    Ok((nv as f64 - 1.0) / nv as f64 * num / denom)
}

/// [`validation_error`] with the surrogate given as a function of the input.
pub fn validation_error_with<F>(predict: F, points: &[(Vec<f64>, f64)]) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let model: Vec<f64> = points.iter().map(|(_, y)| *y).collect();
    let surrogate = points.iter().map(|(x, _)| predict(x)).collect::<Result<Vec<_>>>()?;
    validation_error(&model, &surrogate)
}

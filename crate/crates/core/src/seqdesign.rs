//! Sequential experimental design: grow the training set one batch at a time
//! at the candidate that maximizes a Bayesian design utility.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adapters::ForwardModel;
use crate::bayesval::{self, log_mean_exp, ObservationSet};
use crate::error::{invalid, Error, Result};
use crate::errormodel::ErrorBudget;
use crate::inputspace::{InputSpace, SampleMatrix, SamplingMethod};
use crate::polybasis::PCEBasis;
use crate::predictor::Prediction;
use crate::rng;
use crate::sparsebayes::FitOptions;
use crate::surrogate::{self, PCESurrogate};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Candidates whose posterior acceptance rate falls below this are scored
/// by evidence instead.
pub const MIN_ACCEPTANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityKind {
    Bme,
    Dkl,
    Entropy,
}

impl UtilityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Bme => "bme",
            Self::Dkl => "dkl",
            Self::Entropy => "entropy",
        }
    }

    fn minimizes(self) -> bool {
        self == Self::Entropy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeqConfig {
    pub n_init: usize,
    pub init_sampling: SamplingMethod,
    /// Fresh Latin-hypercube pool size per iteration.
    pub n_candidates: usize,
    pub batch_size: usize,
    pub max_runs: usize,
    /// Stop once every output's LOO error is at or below this.
    pub loo_threshold: f64,
    pub utility: UtilityKind,
    /// Predictive draws per candidate.
    pub mc_samples: usize,
    pub degree: usize,
    /// Prior samples for the evidence recorded in the trace.
    pub evidence_samples: usize,
    /// Record evidence every this many iterations (and at the last one).
    pub evidence_every: usize,
    pub seed: u64,
    pub fit: FitOptions,
}

impl Default for SeqConfig {
    fn default() -> Self {
        Self {
            n_init: 10,
            init_sampling: SamplingMethod::Lhs,
            n_candidates: 1000,
            batch_size: 1,
            max_runs: 50,
            loo_threshold: 0.0,
            utility: UtilityKind::Bme,
            mc_samples: 1000,
            degree: 2,
            evidence_samples: 10_000,
            evidence_every: 1,
            seed: 0,
            fit: FitOptions::default(),
        }
    }
}

impl SeqConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_init == 0 {
            return Err(invalid("n_init must be at least 1"));
        }
        if self.max_runs < self.n_init {
            return Err(invalid(format!("max_runs {} is below n_init {}", self.max_runs, self.n_init)));
        }
        if self.batch_size == 0 || self.batch_size > self.n_candidates {
            return Err(invalid("batch_size must lie in 1..=n_candidates"));
        }
        if self.mc_samples < 100 {
            return Err(invalid("mc_samples must be at least 100"));
        }
        if self.evidence_samples == 0 || self.evidence_every == 0 {
            return Err(invalid("evidence_samples and evidence_every must be positive"));
        }
        if !(self.loo_threshold >= 0.0) {
            return Err(invalid("loo_threshold must be non-negative"));
        }
        self.fit.validate()
    }
}

/// Monte Carlo quantities at one candidate, all from one set of draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityEstimate {
    pub log_bme: f64,
    /// `None` when no draw was accepted.
    pub dkl: Option<f64>,
    pub entropy: Option<f64>,
    /// `-E_post[ln N(y; mean, std)]`, equal to `entropy + dkl`.
    pub cross_entropy: Option<f64>,
    pub acceptance_rate: f64,
}

impl UtilityEstimate {
    /// Score used for selection; falls back to evidence under starvation.
    pub fn score(&self, kind: UtilityKind) -> (f64, bool) {
        let starved = self.acceptance_rate < MIN_ACCEPTANCE || self.dkl.is_none();
        match kind {
            UtilityKind::Bme => (self.log_bme, false),
            UtilityKind::Dkl if !starved => (self.dkl.unwrap_or(f64::NEG_INFINITY), false),
            UtilityKind::Entropy if !starved => (self.entropy.unwrap_or(f64::INFINITY), false),
            UtilityKind::Dkl => (self.log_bme, true),
            _ => (-self.log_bme, true),
        }
    }
}

/// Draws `y ~ N(mean, std^2)` and compares them to the data through the
/// error budget's measurement and discretization variance.
pub fn estimate_utility(
    prediction: &Prediction,
    data: &ObservationSet,
    budget: &ErrorBudget,
    mc: usize,
    seed: u64,
) -> Result<UtilityEstimate> {
    let k = data.len();
    if prediction.mean.len() != k || prediction.std.len() != k || budget.dim() != k {
        return Err(invalid("prediction, data and error budget sizes differ"));
    }
    if mc == 0 {
        return Err(invalid("at least one predictive draw is needed"));
    }
    let var = budget.assemble(None)?;
    let mut rng = rng::from_seed(seed);
    let mut ll = Vec::with_capacity(mc);
    let mut ln_pred = Vec::with_capacity(mc);
    let ln_std: f64 = prediction.std.iter().map(|s| s.ln()).sum();
    let mut y = vec![0.0; k];
    for _ in 0..mc {
        let mut zz = 0.0;
        for j in 0..k {
            let z: f64 = StandardNormal.sample(&mut rng);
            zz += z * z;
            y[j] = prediction.mean[j] + prediction.std[j] * z;
        }
        ll.push(data.loglik(&y, &var)?);
        ln_pred.push(-0.5 * (k as f64 * LN_2PI + zz) - ln_std);
    }
    let log_bme = log_mean_exp(&ll);
    if log_bme == f64::NEG_INFINITY {
        return Ok(UtilityEstimate { log_bme, dkl: None, entropy: None, cross_entropy: None, acceptance_rate: 0.0 });
    }
    // acceptance uniforms come from a second stream of the same seed
    let max = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut accept_rng = rng::stream(seed, 1);
    let (mut n_acc, mut sum_ll, mut sum_pred) = (0usize, 0.0, 0.0);
    for (l, p) in ll.iter().zip(&ln_pred) {
        let u: f64 = rand::Rng::random(&mut accept_rng);
        if u < (l - max).exp() {
            n_acc += 1;
            sum_ll += l;
            sum_pred += p;
        }
    }
    let acceptance_rate = n_acc as f64 / mc as f64;
    if n_acc == 0 {
        return Ok(UtilityEstimate { log_bme, dkl: None, entropy: None, cross_entropy: None, acceptance_rate });
    }
    let (mean_ll, mean_pred) = (sum_ll / n_acc as f64, sum_pred / n_acc as f64);
    Ok(UtilityEstimate {
        log_bme,
        dkl: Some(mean_ll - log_bme),
        entropy: Some(log_bme - mean_pred - mean_ll),
        cross_entropy: Some(-mean_pred),
        acceptance_rate,
    })
}

/// Log of the expected likelihood under the predictive at one point.
pub fn utility_bme(prediction: &Prediction, data: &ObservationSet, budget: &ErrorBudget, mc: usize, seed: u64) -> Result<f64> {
    Ok(estimate_utility(prediction, data, budget, mc, seed)?.log_bme)
}

fn starvation(est: &UtilityEstimate, mc: usize) -> Error {
    Error::RejectionStarvation {
        accepted: (est.acceptance_rate * mc as f64).round() as usize,
        proposed: mc,
        rate: est.acceptance_rate,
    }
}

/// Information gain from predictive to posterior at one point.
pub fn utility_dkl(prediction: &Prediction, data: &ObservationSet, budget: &ErrorBudget, mc: usize, seed: u64) -> Result<f64> {
    let est = estimate_utility(prediction, data, budget, mc, seed)?;
    est.dkl.ok_or_else(|| starvation(&est, mc))
}

/// Posterior entropy at one point; lower is better.
pub fn utility_entropy(prediction: &Prediction, data: &ObservationSet, budget: &ErrorBudget, mc: usize, seed: u64) -> Result<f64> {
    let est = estimate_utility(prediction, data, budget, mc, seed)?;
    est.entropy.ok_or_else(|| starvation(&est, mc))
}

/// Best candidate; ties go to the lowest index.
pub fn select_next(scores: &[f64], kind: UtilityKind) -> Result<usize> {
    select_batch(scores, kind, 1).map(|v| v[0])
}

/// The `n` best candidates in order of preference.
pub fn select_batch(scores: &[f64], kind: UtilityKind, n: usize) -> Result<Vec<usize>> {
    if scores.is_empty() {
        return Err(invalid("no candidate scores"));
    }
    if n == 0 || n > scores.len() {
        return Err(invalid(format!("cannot select {n} of {} candidates", scores.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(invalid("candidate scores contain NaN"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable sort keeps lower indices first among ties
    if kind.minimizes() {
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    } else {
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    }
    order.truncate(n);
    Ok(order)
}

/// Surrogate quality after one design step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub runs: usize,
    pub chosen: Vec<Vec<f64>>,
    pub best_score: f64,
    pub fallbacks: usize,
    pub loo: Vec<f64>,
    pub log_bme: Option<f64>,
    pub dkl: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub scores: Vec<f64>,
}

impl TraceRecord {
    pub fn max_loo(&self) -> f64 {
        self.loo.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignTrace {
    pub utility: UtilityKind,
    /// State after the initial design, before any enrichment.
    pub initial: Option<TraceRecord>,
    pub records: Vec<TraceRecord>,
    pub stop_reason: Option<String>,
}

impl DesignTrace {
    fn new(utility: UtilityKind) -> Self {
        Self { utility, initial: None, records: vec![], stop_reason: None }
    }

    pub fn all_records(&self) -> impl Iterator<Item = &TraceRecord> {
        self.initial.iter().chain(&self.records)
    }

    /// One row per state: `iteration,runs,log_bme,dkl,max_loo,best_score,fallbacks`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["iteration", "runs", "log_bme", "dkl", "max_loo", "best_score", "fallbacks"]).map_err(io)?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.10e}")).unwrap_or_default();
        for r in self.all_records() {
            w.write_record([
                r.iteration.to_string(),
                r.runs.to_string(),
                opt(r.log_bme),
                opt(r.dkl),
                format!("{:.10e}", r.max_loo()),
                format!("{:.10e}", r.best_score),
                r.fallbacks.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A run that stopped on an error, with everything recorded so far.
#[derive(Debug)]
pub struct SeqFailure {
    pub error: Error,
    pub trace: DesignTrace,
    pub surrogate: Option<PCESurrogate>,
}

impl From<SeqFailure> for Error {
    fn from(f: SeqFailure) -> Self {
        f.error
    }
}

pub type SeqResult = std::result::Result<(PCESurrogate, DesignTrace), SeqFailure>;

/// Evidence and information gain of a surrogate against the data, over a
/// fixed prior sample.
pub fn surrogate_evidence(
    surrogate: &PCESurrogate,
    prior: &SampleMatrix,
    data: &ObservationSet,
    budget: &ErrorBudget,
    seed: u64,
) -> Result<(f64, f64)> {
    let est = bayesval::bme_mc(surrogate, prior, data, budget)?;
    let post = bayesval::rejection_posterior(prior, &est.log_likelihoods, seed)?;
    let dkl = bayesval::dkl_post_prior(est.log_bme, &post)?;
    Ok((est.log_bme, dkl))
}

struct Driver<'a> {
    space: &'a InputSpace,
    data: &'a ObservationSet,
    budget: &'a ErrorBudget,
    cfg: &'a SeqConfig,
    prior: SampleMatrix,
}

impl Driver<'_> {
    fn record(&self, s: &PCESurrogate, iteration: usize, with_evidence: bool) -> Result<TraceRecord> {
        let (log_bme, dkl) = if with_evidence {
            let (b, d) = surrogate_evidence(s, &self.prior, self.data, self.budget, rng::derive(self.cfg.seed, 3_000_000 + iteration as u64))?;
            (Some(b), Some(d))
        } else {
            (None, None)
        };
        Ok(TraceRecord {
            iteration,
            runs: s.design().nrows(),
            chosen: vec![],
            best_score: f64::NAN,
            fallbacks: 0,
            loo: s.loo_errors().to_vec(),
            log_bme,
            dkl,
            scores: vec![],
        })
    }

    /// Scores a fresh pool; returns the pool, scores and fallback count.
    fn score_pool(&self, s: &PCESurrogate, iteration: usize) -> Result<(SampleMatrix, Vec<f64>, usize)> {
        let iter_seed = rng::derive(self.cfg.seed, 1_000_000 + iteration as u64);
        let pool = self.space.sample(self.cfg.n_candidates, SamplingMethod::Lhs, iter_seed)?;
        let preds = s.predict_many(&pool)?;
        let mut scores = Vec::with_capacity(pool.nrows());
        let mut fallbacks = 0;
        for i in 0..pool.nrows() {
            let p = Prediction { mean: preds.mean(i).to_vec(), std: preds.std(i).to_vec() };
            let seed = rng::derive(iter_seed, i as u64);
            let est = estimate_utility(&p, self.data, self.budget, self.cfg.mc_samples, seed)?;
            let (score, fell_back) = est.score(self.cfg.utility);
            fallbacks += fell_back as usize;
            scores.push(score);
        }
        Ok((pool, scores, fallbacks))
    }
}

/// Runs the enrichment loop until `max_runs` is reached or every output's
/// LOO error drops to the threshold.
pub fn run_sequential(
    model: &dyn ForwardModel,
    space: &InputSpace,
    data: &ObservationSet,
    budget: &ErrorBudget,
    cfg: &SeqConfig,
) -> SeqResult {
    let mut trace = DesignTrace::new(cfg.utility);
    let fail = |error: Error, trace: DesignTrace, surrogate: Option<PCESurrogate>| SeqFailure { error, trace, surrogate };
    let setup = || -> Result<Driver<'_>> {
        cfg.validate()?;
        budget.validate()?;
        if model.n_outputs() != data.len() || budget.dim() != data.len() {
            return Err(invalid(format!(
                "model has {} outputs, data {}, error budget {}",
                model.n_outputs(),
                data.len(),
                budget.dim()
            )));
        }
        if model.input_dim().is_some_and(|d| d != space.dim()) {
            return Err(invalid("model and parameter space dimensions differ"));
        }
        let prior = space.sample(cfg.evidence_samples, SamplingMethod::Random, rng::derive(cfg.seed, 2))?;
        Ok(Driver { space, data, budget, cfg, prior })
    };
    let driver = match setup() {
        Ok(d) => d,
        Err(e) => return Err(fail(e, trace, None)),
    };

    let init = (|| -> Result<_> {
        let design = space.sample(cfg.n_init, cfg.init_sampling, rng::derive(cfg.seed, 1))?;
        let y = model.evaluate(&design)?;
        let basis = PCEBasis::for_space(space, cfg.degree)?;
        let prepared = PCESurrogate::prepare(space, &basis, &design)?;
        let s = PCESurrogate::train_prepared(space, basis, &design, &prepared, &y, &cfg.fit, None)?;
        Ok((design, y, prepared, s))
    })();
    let (mut design, mut responses, mut prepared, mut current) = match init {
        Ok(v) => v,
        Err(e) => return Err(fail(e, trace, None)),
    };
    match driver.record(&current, 0, true) {
        Ok(r) => trace.initial = Some(r),
        Err(e) => return Err(fail(e, trace, Some(current))),
    }

    let mut iteration = 0;
    loop {
        let runs = design.nrows();
        if current.max_loo_error() <= cfg.loo_threshold {
            trace.stop_reason = Some("loo threshold reached".into());
            break;
        }
        if runs + cfg.batch_size > cfg.max_runs {
            trace.stop_reason = Some("run budget exhausted".into());
            break;
        }
        iteration += 1;
        let step = (|| -> Result<_> {
            let (pool, scores, fallbacks) = driver.score_pool(&current, iteration)?;
            let picks = select_batch(&scores, cfg.utility, cfg.batch_size)?;
            let chosen = pool.select_rows(&picks);
            let y_new = model.evaluate(&chosen)?;
            if y_new.nrows() != chosen.nrows() || y_new.ncols() != responses.ncols() {
                return Err(Error::Protocol("model returned a response of the wrong shape".into()));
            }
            Ok((chosen, y_new, scores, fallbacks, picks))
        })();
        let (chosen, y_new, scores, fallbacks, picks) = match step {
            Ok(v) => v,
            Err(e) => return Err(fail(e, trace, Some(current))),
        };
        let retrain = (|| -> Result<PCESurrogate> {
            prepared.push_rows(&surrogate::design_matrix(space, current.basis(), &chosen)?)?;
            design.append(&chosen)?;
            let n = responses.nrows();
            let mut grown = std::mem::replace(&mut responses, DMatrix::zeros(0, 0)).resize_vertically(n + y_new.nrows(), 0.0);
            grown.rows_mut(n, y_new.nrows()).copy_from(&y_new);
            responses = grown;
            PCESurrogate::train_prepared(
                space,
                current.basis().clone(),
                &design,
                &prepared,
                &responses,
                &cfg.fit,
                // cold start: warm-started fits keep near-interpolating active sets
                None,
            )
        })();
        current = match retrain {
            Ok(s) => s,
            Err(e) => return Err(fail(e, trace, Some(current))),
        };
        let last = design.nrows() + cfg.batch_size > cfg.max_runs;
        let with_evidence = last || iteration % cfg.evidence_every == 0;
        let mut rec = match driver.record(&current, iteration, with_evidence) {
            Ok(r) => r,
            Err(e) => return Err(fail(e, trace, Some(current))),
        };
        rec.chosen = chosen.rows().map(<[f64]>::to_vec).collect();
        rec.best_score = scores[picks[0]];
        rec.fallbacks = fallbacks;
        rec.scores = scores;
        trace.records.push(rec);
    }
    // the last state always carries evidence
    if let Some(last) = trace.records.last_mut() {
        if last.log_bme.is_none() {
            match surrogate_evidence(&current, &driver.prior, data, budget, rng::derive(cfg.seed, 3_000_000 + iteration as u64)) {
                Ok((b, d)) => {
                    last.log_bme = Some(b);
                    last.dkl = Some(d);
                }
                Err(e) => return Err(fail(e, trace, Some(current))),
            }
        }
    }
    Ok((current, trace))
}

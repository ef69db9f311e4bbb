//! Bayesian validation: Gaussian likelihood, Monte Carlo evidence, rejection
//! posterior, model weights, Bayes factors and the TOM reference.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, Continuous, ContinuousCDF};

use crate::error::{invalid, Error, Result};
use crate::errormodel::ErrorBudget;
use crate::inputspace::SampleMatrix;
use crate::predictor::{Predictions, Predictor};
use crate::rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Measured data with per-point Gaussian error standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ObservationData", into = "ObservationData")]
pub struct ObservationSet {
    values: Vec<f64>,
    sigmas: Vec<f64>,
    labels: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObservationData {
    values: Vec<f64>,
    sigmas: Vec<f64>,
    #[serde(default)]
    labels: Vec<String>,
}

impl TryFrom<ObservationData> for ObservationSet {
    type Error = Error;
    fn try_from(d: ObservationData) -> Result<Self> {
        ObservationSet::with_labels(d.values, d.sigmas, d.labels)
    }
}

impl From<ObservationSet> for ObservationData {
    fn from(o: ObservationSet) -> Self {
        Self { values: o.values, sigmas: o.sigmas, labels: o.labels }
    }
}

impl ObservationSet {
    pub fn new(values: Vec<f64>, sigmas: Vec<f64>) -> Result<Self> {
        Self::with_labels(values, sigmas, vec![])
    }

    /// Empty `labels` get the defaults `y1..yN`.
    pub fn with_labels(values: Vec<f64>, sigmas: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("observation set is empty"));
        }
        if sigmas.len() != values.len() {
            return Err(invalid(format!("{} sigmas for {} observations", sigmas.len(), values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("observations must be finite"));
        }
        if sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(invalid("observation errors must be positive"));
        }
        let labels = if labels.is_empty() {
            (1..=values.len()).map(|i| format!("y{i}")).collect()
        } else if labels.len() == values.len() {
            labels
        } else {
            return Err(invalid(format!("{} labels for {} observations", labels.len(), values.len())));
        };
        Ok(Self { values, sigmas, labels })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Log-likelihood of these data given model output `mean` and error variances.
    pub fn loglik(&self, mean: &[f64], variances: &[f64]) -> Result<f64> {
        if mean.len() != self.len() {
            return Err(invalid(format!("{} predictions for {} observations", mean.len(), self.len())));
        }
        let mut ll = 0.0;
        for ((y, m), v) in self.values.iter().zip(mean).zip(variances) {
            let r = y - m;
            ll -= 0.5 * (LN_2PI + v.ln() + r * r / v);
        }
        Ok(ll)
    }
}

/// Log density of independent Gaussian residuals.
pub fn gaussian_loglik(residual: &[f64], variances: &[f64]) -> Result<f64> {
    if residual.len() != variances.len() {
        return Err(invalid(format!("{} residuals for {} variances", residual.len(), variances.len())));
    }
    if variances.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(invalid("variances must be positive and finite"));
    }
    Ok(residual
        .iter()
        .zip(variances)
        .map(|(r, v)| -0.5 * (LN_2PI + v.ln() + r * r / v))
        .sum())
}

/// `ln(mean(exp(l)))` without overflow. `-inf` if every entry is `-inf`.
pub fn log_mean_exp(logs: &[f64]) -> f64 {
    if logs.is_empty() {
        return f64::NEG_INFINITY;
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    max + sum.ln() - (logs.len() as f64).ln()
}

/// Monte Carlo evidence estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceEstimate {
    pub log_bme: f64,
    /// Delta-method standard error of `log_bme`.
    pub log_std_error: f64,
    #[serde(skip)]
    pub log_likelihoods: Vec<f64>,
}

impl EvidenceEstimate {
    pub fn from_log_likelihoods(log_likelihoods: Vec<f64>) -> Self {
        let n = log_likelihoods.len() as f64;
        let log_bme = log_mean_exp(&log_likelihoods);
        let log_std_error = if log_bme.is_finite() && n > 1.0 {
            let max = log_likelihoods.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = log_likelihoods.iter().map(|l| (l - max).exp()).collect();
            let mean = w.iter().sum::<f64>() / n;
            let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt() / mean
        } else {
            f64::INFINITY
        };
        Self { log_bme, log_std_error, log_likelihoods }
    }
}

/// Log-likelihood of `data` at every prior sample.
pub fn log_likelihoods<P: Predictor + ?Sized>(
    predictor: &P,
    prior_samples: &SampleMatrix,
    data: &ObservationSet,
    budget: &ErrorBudget,
) -> Result<Vec<f64>> {
    if predictor.n_outputs() != data.len() {
        return Err(invalid(format!("predictor has {} outputs, data {}", predictor.n_outputs(), data.len())));
    }
    let preds = predictor.predict_batch(prior_samples)?;
    log_likelihoods_for(&preds, data, budget)
}

/// As [`log_likelihoods`] for predictions already computed.
pub fn log_likelihoods_for(preds: &Predictions, data: &ObservationSet, budget: &ErrorBudget) -> Result<Vec<f64>> {
    if preds.outputs() != data.len() || budget.dim() != data.len() {
        return Err(invalid(format!(
            "predictions have {} outputs, budget {}, data {}",
            preds.outputs(),
            budget.dim(),
            data.len()
        )));
    }
    (0..preds.len())
        .map(|i| {
            let var = budget.assemble(Some(preds.std(i)))?;
            data.loglik(preds.mean(i), &var)
        })
        .collect()
}

/// Brute-force Monte Carlo evidence over prior draws.
pub fn bme_mc<P: Predictor + ?Sized>(
    predictor: &P,
    prior_samples: &SampleMatrix,
    data: &ObservationSet,
    budget: &ErrorBudget,
) -> Result<EvidenceEstimate> {
    if prior_samples.nrows() == 0 {
        return Err(invalid("no prior samples"));
    }
    let ll = log_likelihoods(predictor, prior_samples, data, budget)?;
    Ok(EvidenceEstimate::from_log_likelihoods(ll))
}

/// Accepted prior draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSample {
    pub samples: SampleMatrix,
    pub log_likelihoods: Vec<f64>,
    /// Row indices into the prior sample.
    pub indices: Vec<usize>,
    pub acceptance_rate: f64,
    pub source_size: usize,
}

impl PosteriorSample {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn mean_log_likelihood(&self) -> f64 {
        self.log_likelihoods.iter().sum::<f64>() / self.len() as f64
    }
}

/// Accepts sample `i` iff `u_i < exp(l_i - max l)` with `u_i` drawn in order from `seed`.
pub fn rejection_posterior(
    prior_samples: &SampleMatrix,
    log_likelihoods: &[f64],
    seed: u64,
) -> Result<PosteriorSample> {
    if prior_samples.nrows() != log_likelihoods.len() {
        return Err(invalid(format!(
            "{} log-likelihoods for {} samples",
            log_likelihoods.len(),
            prior_samples.nrows()
        )));
    }
    if log_likelihoods.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(invalid("log-likelihoods must be finite or -inf"));
    }
    let max = log_likelihoods.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::NoPosteriorSupport);
    }
    let mut rng = rng::from_seed(seed);
    let indices: Vec<usize> = log_likelihoods
        .iter()
        .enumerate()
        .filter_map(|(i, l)| {
            let u: f64 = rng.random();
            (u < (l - max).exp()).then_some(i)
        })
        .collect();
    Ok(PosteriorSample {
        samples: prior_samples.select_rows(&indices),
        log_likelihoods: indices.iter().map(|&i| log_likelihoods[i]).collect(),
        acceptance_rate: indices.len() as f64 / log_likelihoods.len() as f64,
        source_size: log_likelihoods.len(),
        indices,
    })
}

/// `-ln BME + mean accepted log-likelihood`.
pub fn dkl_post_prior(log_bme: f64, posterior: &PosteriorSample) -> Result<f64> {
    if posterior.is_empty() {
        return Err(invalid("posterior sample is empty"));
    }
    Ok(posterior.mean_log_likelihood() - log_bme)
}

/// Posterior model probabilities from log-evidences and prior weights.
pub fn model_weights(log_bmes: &[f64], priors: &[f64]) -> Result<Vec<f64>> {
    if log_bmes.len() != priors.len() || log_bmes.is_empty() {
        return Err(invalid("one prior weight per model required"));
    }
    if priors.iter().any(|p| !(*p >= 0.0)) || (priors.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(invalid("prior weights must be non-negative and sum to 1"));
    }
    if log_bmes.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(invalid("log-evidence must be finite or -inf"));
    }
    let logs: Vec<f64> = log_bmes.iter().zip(priors).map(|(l, p)| l + p.ln()).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::UndefinedWeights);
    }
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// Jeffreys' scale applied to `max(BF, 1/BF)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JeffreysGrade {
    Anecdotal,
    Substantial,
    Strong,
    Decisive,
}

impl JeffreysGrade {
    /// Grade for a raw Bayes factor magnitude `m >= 1`.
    pub fn from_magnitude(m: f64) -> Self {
        if m >= 100.0 {
            Self::Decisive
        } else if m >= 10.0 {
            Self::Strong
        } else if m >= 3.0 {
            Self::Substantial
        } else {
            Self::Anecdotal
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Anecdotal => "anecdotal",
            Self::Substantial => "substantial",
            Self::Strong => "strong",
            Self::Decisive => "decisive",
        }
    }
}

/// Which model the evidence favours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Favours {
    First,
    Second,
    Neither,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesFactor {
    pub log10_bf: f64,
    pub grade: JeffreysGrade,
    pub favours: Favours,
}

impl BayesFactor {
    pub fn describe(&self) -> String {
        match self.favours {
            Favours::Neither => "no evidence either way".to_string(),
            Favours::First => format!("{} evidence for the first model", self.grade.as_str()),
            Favours::Second => format!("{} evidence against the first model", self.grade.as_str()),
        }
    }
}

/// `BF = BME_k / BME_l`, graded on the raw ratio.
pub fn bayes_factor(log_bme_k: f64, log_bme_l: f64) -> Result<BayesFactor> {
    if !log_bme_k.is_finite() || !log_bme_l.is_finite() {
        return Err(invalid("Bayes factor needs finite log-evidence"));
    }
    let ln_bf = log_bme_k - log_bme_l;
    let favours = if ln_bf > 0.0 {
        Favours::First
    } else if ln_bf < 0.0 {
        Favours::Second
    } else {
        Favours::Neither
    };
    Ok(BayesFactor {
        log10_bf: ln_bf / std::f64::consts::LN_10,
        grade: JeffreysGrade::from_magnitude(ln_bf.abs().exp()),
        favours,
    })
}

/// Sampled log-evidence of the theoretically optimal model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomDistribution {
    /// Degrees of freedom of the reference chi-square law.
    pub dof: usize,
    pub log_bme: Vec<f64>,
    /// `sum(((y_i - y~_i) / sigma_i)^2)` per draw.
    pub statistic: Vec<f64>,
}

impl TomDistribution {
    pub fn chi_square_pdf(&self, x: f64) -> f64 {
        chi_square_pdf(self.dof, x)
    }

    pub fn chi_square_cdf(&self, x: f64) -> f64 {
        chi_square_cdf(self.dof, x)
    }
}

pub fn chi_square_pdf(dof: usize, x: f64) -> f64 {
    ChiSquared::new(dof as f64).map_or(f64::NAN, |d| d.pdf(x))
}

pub fn chi_square_cdf(dof: usize, x: f64) -> f64 {
    ChiSquared::new(dof as f64).map_or(f64::NAN, |d| d.cdf(x))
}

pub fn tom_logbme_distribution(data: &ObservationSet, n_draws: usize, seed: u64) -> Result<TomDistribution> {
    if n_draws == 0 {
        return Err(invalid("TOM distribution needs at least one draw"));
    }
    let constant = -0.5 * data.len() as f64 * LN_2PI - data.sigmas().iter().map(|s| s.ln()).sum::<f64>();
    let mut statistic = Vec::with_capacity(n_draws);
    for perturbed in perturb_data(data, n_draws, seed) {
        let s: f64 = data
            .values()
            .iter()
            .zip(perturbed.values())
            .zip(data.sigmas())
            .map(|((y, yt), sd)| ((y - yt) / sd).powi(2))
            .sum();
        statistic.push(s);
    }
    Ok(TomDistribution {
        dof: data.len(),
        log_bme: statistic.iter().map(|s| constant - 0.5 * s).collect(),
        statistic,
    })
}

/// `n` copies of `data` with independent Gaussian noise at the stated errors.
pub fn perturb_data(data: &ObservationSet, n: usize, seed: u64) -> Vec<ObservationSet> {
    let mut rng = rng::from_seed(seed);
    (0..n)
        .map(|_| {
            let values = data
                .values()
                .iter()
                .zip(data.sigmas())
                .map(|(y, s)| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    y + s * z
                })
                .collect();
            ObservationSet {
                values,
                sigmas: data.sigmas.clone(),
                labels: data.labels.clone(),
            }
        })
        .collect()
}

/// Pooled predictive draws, indexed `[output][draw]`.
pub fn posterior_predictive<P: Predictor + ?Sized>(
    posterior: &PosteriorSample,
    predictor: &P,
    draws_per_theta: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if posterior.is_empty() {
        return Err(invalid("posterior sample is empty"));
    }
    let preds = predictor.predict_batch(&posterior.samples)?;
    let k = predictor.n_outputs();
    let mut out = vec![Vec::with_capacity(preds.len() * draws_per_theta); k];
    let mut rng = rng::from_seed(seed);
    for i in 0..preds.len() {
        let (m, s) = (preds.mean(i), preds.std(i));
        for _ in 0..draws_per_theta {
            for j in 0..k {
                let z: f64 = StandardNormal.sample(&mut rng);
                out[j].push(m[j] + s[j] * z);
            }
        }
    }
    Ok(out)
}

/// Equal-width histogram as `(bin centre, count)` rows.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, usize)> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() || bins == 0 {
        return vec![];
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return vec![(lo, finite.len())];
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in finite {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts.into_iter().enumerate().map(|(b, c)| (lo + (b as f64 + 0.5) * width, c)).collect()
}

/// Writes a histogram as CSV with `value,count` columns.
pub fn write_histogram_csv<W: std::io::Write>(out: W, rows: &[(f64, usize)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["value", "count"]).map_err(io)?;
    for (v, c) in rows {
        w.write_record([format!("{v:.12e}"), c.to_string()]).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = cdf(*x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Evidence for one model in a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEvidence {
    pub name: String,
    pub log_bme: f64,
    pub log_bme_std_error: f64,
    pub dkl: Option<f64>,
    pub acceptance_rate: f64,
    /// Log-evidence over perturbed copies of the data.
    pub log_bme_perturbed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseFactor {
    pub first: String,
    pub second: String,
    #[serde(flatten)]
    pub factor: BayesFactor,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub models: Vec<ModelEvidence>,
    pub prior_weights: Vec<f64>,
    pub weights: Vec<f64>,
    pub bayes_factors: Vec<PairwiseFactor>,
    pub tom: Option<TomDistribution>,
}

impl ValidationReport {
    /// Weights and all ordered pairwise Bayes factors for the given models.
    pub fn assemble(models: Vec<ModelEvidence>, prior_weights: Vec<f64>, tom: Option<TomDistribution>) -> Result<Self> {
        let logs: Vec<f64> = models.iter().map(|m| m.log_bme).collect();
        let weights = model_weights(&logs, &prior_weights)?;
        let mut bayes_factors = Vec::new();
        for (k, a) in models.iter().enumerate() {
            for b in &models[k + 1..] {
                let factor = bayes_factor(a.log_bme, b.log_bme)?;
                bayes_factors.push(PairwiseFactor {
                    first: a.name.clone(),
                    second: b.name.clone(),
                    description: factor.describe(),
                    factor,
                });
            }
        }
        Ok(Self { models, prior_weights, weights, bayes_factors, tom })
    }
}

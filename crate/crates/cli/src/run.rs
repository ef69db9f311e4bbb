//! Mode dispatch and artifact emission.

use std::fs;
use std::path::{Path, PathBuf};

use bayes_pce::adapters::{ExactPredictor, ForwardModel, ModelAdapter};
use bayes_pce::bayesval::{self, EvidenceEstimate, ModelEvidence, ObservationSet, ValidationReport};
use bayes_pce::errormodel::ErrorBudget;
use bayes_pce::inputspace::{Coordinates, InputSpace, SampleMatrix, SamplingMethod};
use bayes_pce::predictor::{Predictions, Predictor};
use bayes_pce::seqdesign::{self, DesignTrace};
use bayes_pce::sparsebayes;
use bayes_pce::surrogate::PCESurrogate;
use bayes_pce::{rng, Error};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{ConfigError, Mode, ModelEntry, RunConfig};

/// Failure of a run, mapped onto the process exit code.
#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Model(String),
    Other(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Model(_) => 3,
            RunError::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "invalid config: {e}"),
            RunError::Model(m) => write!(f, "model failure: {m}"),
            RunError::Other(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::Domain(_) | Error::Unsupported(_) | Error::IllPosedMoments(_) => {
                RunError::Config(ConfigError { path: String::new(), message: e.to_string() })
            }
            Error::ModelFailure(_) | Error::Protocol(_) => RunError::Model(e.to_string()),
            other => RunError::Other(other.to_string()),
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Other(format!("{}: {e}", path.display()))
}

/// Hash of the effective configuration, embedded in every artifact.
pub fn config_hash(cfg: &RunConfig) -> String {
    let text = serde_json::to_string(cfg).expect("config serializes");
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
struct Provenance {
    config_sha256: String,
    seed: u64,
    tool: String,
}

/// Writes artifacts into the output directory, stamping provenance.
struct Artifacts {
    dir: PathBuf,
    prov: Provenance,
    written: Vec<PathBuf>,
}

impl Artifacts {
    fn new(cfg: &RunConfig) -> Result<Self, RunError> {
        fs::create_dir_all(&cfg.output_dir).map_err(|e| io_err(&cfg.output_dir, e))?;
        Ok(Self {
            dir: cfg.output_dir.clone(),
            prov: Provenance {
                config_sha256: config_hash(cfg),
                seed: cfg.seed,
                tool: format!("bayes-pce {}", env!("CARGO_PKG_VERSION")),
            },
            written: vec![],
        })
    }

    fn json(&mut self, name: &str, key: &str, value: &impl Serialize) -> Result<(), RunError> {
        let path = self.dir.join(name);
        let doc = json!({ "provenance": &self.prov, key: value });
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| io_err(&path, e))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    /// CSV with a leading `#` provenance line.
    fn csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<(), RunError> {
        let path = self.dir.join(name);
        let mut buf = format!("# config_sha256={} seed={}\n", self.prov.config_sha256, self.prov.seed).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header).map_err(|e| io_err(&path, e))?;
            for r in rows {
                w.write_record(r).map_err(|e| io_err(&path, e))?;
            }
            w.flush().map_err(|e| io_err(&path, e))?;
        }
        fs::write(&path, buf).map_err(|e| io_err(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    fn histogram(&mut self, name: &str, values: &[f64], bins: usize) -> Result<(), RunError> {
        let rows: Vec<Vec<String>> = bayesval::histogram(values, bins)
            .into_iter()
            .map(|(v, c)| vec![num(v), c.to_string()])
            .collect();
        self.csv(name, &["value".into(), "count".into()], &rows)
    }
}

fn num(v: f64) -> String {
    format!("{v:.12e}")
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Result of a successful run.
#[derive(Debug)]
pub struct Outcome {
    pub summary: Vec<String>,
    pub artifacts: Vec<PathBuf>,
}

pub fn execute(cfg: &RunConfig) -> Result<Outcome, RunError> {
    cfg.validate()?;
    let mut art = Artifacts::new(cfg)?;
    let summary = match cfg.mode {
        Mode::Train => train(cfg, &mut art)?,
        Mode::Seqdesign => seqdesign_mode(cfg, &mut art)?,
        Mode::Validate | Mode::Compare => compare(cfg, &mut art)?,
        Mode::Tom => tom(cfg, &mut art)?,
    };
    Ok(Outcome { summary, artifacts: art.written })
}

fn space(cfg: &RunConfig) -> &InputSpace {
    cfg.space.as_ref().expect("validated")
}

fn build_model(cfg: &RunConfig, entry: &ModelEntry) -> Result<ModelAdapter, RunError> {
    let cache = cfg.cache_dir.clone().unwrap_or_else(|| cfg.output_dir.join("cache"));
    Ok(entry.adapter.build(Some(&cache))?)
}

fn observations(cfg: &RunConfig, first_model: Option<&ModelAdapter>) -> Result<ObservationSet, RunError> {
    let spec = cfg.observations.as_ref().expect("validated");
    if let Some(obs) = spec.explicit().map_err(|m| ConfigError { path: "observations".into(), message: m })? {
        return Ok(obs);
    }
    let theta = spec.synthetic_at.as_ref().expect("validated");
    let model = first_model.ok_or_else(|| ConfigError {
        path: "observations.synthetic_at".into(),
        message: "needs a model to generate data".into(),
    })?;
    let point = SampleMatrix::from_row_major(1, theta.len(), theta.clone(), Coordinates::Physical)?;
    let values: Vec<f64> = model.evaluate(&point)?.row(0).iter().copied().collect();
    let sig = spec.sigmas_for(values.len()).map_err(|m| ConfigError { path: "observations".into(), message: m })?;
    Ok(ObservationSet::with_labels(values, sig, spec.labels.clone())?)
}

fn budget(cfg: &RunConfig, data: &ObservationSet) -> Result<ErrorBudget, RunError> {
    let studies = &cfg.error.mesh_studies;
    let discretization = if studies.is_empty() {
        cfg.error.discretization_std.clone()
    } else {
        let stds = studies
            .iter()
            .enumerate()
            .map(|(i, m)| {
                m.discretization_std().map_err(|message| ConfigError { path: format!("error.mesh_studies[{i}]"), message })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if stds.len() == 1 {
            vec![stds[0]; data.len()]
        } else {
            stds
        }
    };
    let b = ErrorBudget::new(data.sigmas().to_vec(), discretization, cfg.error.include_surrogate_std)
    .map_err(|e| ConfigError { path: "error".into(), message: e.to_string() })?;
    Ok(b)
}

fn train(cfg: &RunConfig, art: &mut Artifacts) -> Result<Vec<String>, RunError> {
    let space = space(cfg);
    let entry = cfg.entries()[0];
    let model = build_model(cfg, entry)?;
    let t = &cfg.training;
    let design = space.sample(t.n_samples, t.sampling, rng::derive(cfg.seed, 1))?;
    let y = model.evaluate(&design)?;
    let s = PCESurrogate::train(space, cfg.degree, &design, &y, &cfg.fit)?;
    let mut summary = vec![format!("trained {} outputs on {} runs, degree {}", s.n_outputs(), design.nrows(), cfg.degree)];
    let mut validation = None;
    if t.validation_samples >= 2 {
        let pts = space.sample(t.validation_samples, SamplingMethod::Random, rng::derive(cfg.seed, 2))?;
        let truth = model.evaluate(&pts)?;
        let preds = s.predict_many(&pts)?;
        let errs = (0..s.n_outputs())
            .map(|j| {
                let m: Vec<f64> = truth.column(j).iter().copied().collect();
                let p: Vec<f64> = (0..preds.len()).map(|i| preds.mean(i)[j]).collect();
                sparsebayes::validation_error(&m, &p).map(|e| if e.is_finite() { Some(e) } else { None }).or_else(|e| match e {
                    Error::UndefinedDenominator(_) => Ok(None),
                    e => Err(e),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        validation = Some(errs);
    }
    let outputs: Vec<_> = s
        .fits()
        .iter()
        .enumerate()
        .map(|(j, f)| {
            json!({
                "label": s.labels()[j],
                "active_terms": f.active.len(),
                "noise_precision": f.beta,
                "loo_error": finite_or_null(s.loo_errors()[j]),
                "validation_error": validation.as_ref().and_then(|v| v[j]),
            })
        })
        .collect();
    summary.push(format!("max LOO error {:.4e}", s.max_loo_error()));
    art.json("surrogate.json", "surrogate", &s)?;
    art.json("train_summary.json", "summary", &json!({ "runs": design.nrows(), "basis_terms": s.basis().len(), "outputs": outputs }))?;
    Ok(summary)
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        serde_json::Value::Null
    }
}

fn trace_rows(trace: &DesignTrace) -> Result<(Vec<String>, Vec<Vec<String>>), RunError> {
    let mut buf = Vec::new();
    trace.write_csv(&mut buf)?;
    let text = String::from_utf8(buf).map_err(|e| RunError::Other(e.to_string()))?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| RunError::Other(e.to_string()))?.iter().map(String::from).collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(String::from).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()
        .map_err(|e| RunError::Other(e.to_string()))?;
    Ok((header, rows))
}

fn write_trace(art: &mut Artifacts, trace: &DesignTrace) -> Result<(), RunError> {
    let (header, rows) = trace_rows(trace)?;
    art.csv("trace.csv", &header, &rows)?;
    art.json("trace.json", "trace", trace)
}

fn seqdesign_mode(cfg: &RunConfig, art: &mut Artifacts) -> Result<Vec<String>, RunError> {
    let space = space(cfg);
    let model = build_model(cfg, cfg.entries()[0])?;
    let data = observations(cfg, Some(&model))?;
    let budget = budget(cfg, &data)?;
    let seq = cfg.seq_config();
    match seqdesign::run_sequential(&model, space, &data, &budget, &seq) {
        Ok((s, trace)) => {
            write_trace(art, &trace)?;
            art.json("surrogate.json", "surrogate", &s)?;
            let last = trace.all_records().last().expect("initial record");
            Ok(vec![
                format!("{} utility: {} runs, {} iterations ({})", seq.utility.as_str(), last.runs, trace.records.len(), trace.stop_reason.as_deref().unwrap_or("done")),
                format!("log BME {:.4}, DKL {:.4}, max LOO {:.4e}", last.log_bme.unwrap_or(f64::NAN), last.dkl.unwrap_or(f64::NAN), last.max_loo()),
            ])
        }
        Err(failure) => {
            write_trace(art, &failure.trace)?;
            if let Some(s) = &failure.surrogate {
                art.json("surrogate.json", "surrogate", s)?;
            }
            Err(failure.error.into())
        }
    }
}

/// Loads a surrogate written by `train` or `seqdesign`.
fn load_surrogate(path: &Path) -> Result<PCESurrogate, RunError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| io_err(path, e))?;
    let inner = doc.get("surrogate").cloned().unwrap_or(doc);
    serde_json::from_value(inner).map_err(|e| RunError::Config(ConfigError {
        path: "surrogate".into(),
        message: format!("{}: {e}", path.display()),
    }))
}

/// Evidence results for one model over shared prior samples and datasets.
struct ModelRun {
    evidence: ModelEvidence,
    posterior: bayesval::PosteriorSample,
    predictive: Option<Vec<Vec<f64>>>,
    perturbed: Vec<f64>,
}

fn evaluate_model(
    cfg: &RunConfig,
    name: &str,
    predictor: &dyn Predictor,
    prior: &SampleMatrix,
    data: &ObservationSet,
    perturbed: &[ObservationSet],
    budget: &ErrorBudget,
    salt: u64,
) -> Result<ModelRun, RunError> {
    let preds: Predictions = predictor.predict_batch(prior)?;
    let ll = bayesval::log_likelihoods_for(&preds, data, budget)?;
    let est = EvidenceEstimate::from_log_likelihoods(ll);
    let posterior = bayesval::rejection_posterior(prior, &est.log_likelihoods, rng::derive(cfg.seed, 100 + salt))?;
    let dkl = bayesval::dkl_post_prior(est.log_bme, &posterior)?;
    let perturbed_bme = perturbed
        .iter()
        .map(|d| Ok(bayesval::log_mean_exp(&bayesval::log_likelihoods_for(&preds, d, budget)?)))
        .collect::<Result<Vec<f64>, Error>>()?;
    let predictive = if cfg.validation.predictive_draws > 0 {
        Some(bayesval::posterior_predictive(&posterior, predictor, cfg.validation.predictive_draws, rng::derive(cfg.seed, 200 + salt))?)
    } else {
        None
    };
    Ok(ModelRun {
        evidence: ModelEvidence {
            name: name.to_string(),
            log_bme: est.log_bme,
            log_bme_std_error: est.log_std_error,
            dkl: Some(dkl),
            acceptance_rate: posterior.acceptance_rate,
            log_bme_perturbed: perturbed_bme.clone(),
        },
        posterior,
        predictive,
        perturbed: perturbed_bme,
    })
}

fn compare(cfg: &RunConfig, art: &mut Artifacts) -> Result<Vec<String>, RunError> {
    let space = space(cfg);
    let entries = cfg.entries();
    let models = entries.iter().map(|e| build_model(cfg, e)).collect::<Result<Vec<_>, _>>()?;
    let data = observations(cfg, models.first())?;
    let budget = budget(cfg, &data)?;
    let v = &cfg.validation;
    let prior = space.sample(v.prior_samples, v.prior_sampling, rng::derive(cfg.seed, 10))?;
    let perturbed = bayesval::perturb_data(&data, v.perturbations, rng::derive(cfg.seed, 12));
    let mut runs = Vec::new();
    for (k, (entry, model)) in entries.iter().zip(&models).enumerate() {
        let run = match &entry.surrogate {
            Some(path) => {
                let s = load_surrogate(path)?;
                evaluate_model(cfg, &entry.name, &s, &prior, &data, &perturbed, &budget, k as u64)?
            }
            None => evaluate_model(cfg, &entry.name, &ExactPredictor(model), &prior, &data, &perturbed, &budget, k as u64)?,
        };
        runs.push(run);
    }
    let tom = if v.tom_draws > 0 {
        Some(bayesval::tom_logbme_distribution(&data, v.tom_draws, rng::derive(cfg.seed, 13))?)
    } else {
        None
    };
    let priors: Vec<f64> = if entries.iter().all(|e| e.prior_weight.is_some()) {
        entries.iter().map(|e| e.prior_weight.unwrap_or_default()).collect()
    } else {
        vec![1.0 / entries.len() as f64; entries.len()]
    };
    let report = ValidationReport::assemble(runs.iter().map(|r| r.evidence.clone()).collect(), priors, tom.clone())?;

    let bins = v.histogram_bins;
    let names: Vec<String> = param_names(space);
    for (entry, run) in entries.iter().zip(&runs) {
        let stem = file_stem(&entry.name);
        if !run.perturbed.is_empty() {
            art.histogram(&format!("bme_hist_{stem}.csv"), &run.perturbed, bins)?;
        }
        let mut header = names.clone();
        header.push("log_likelihood".into());
        let rows: Vec<Vec<String>> = (0..run.posterior.len())
            .map(|i| {
                let mut r: Vec<String> = run.posterior.samples.row(i).iter().map(|x| num(*x)).collect();
                r.push(num(run.posterior.log_likelihoods[i]));
                r
            })
            .collect();
        art.csv(&format!("posterior_{stem}.csv"), &header, &rows)?;
        if let Some(pred) = &run.predictive {
            let rows: Vec<Vec<String>> = pred
                .iter()
                .zip(data.labels())
                .map(|(draws, label)| {
                    let n = draws.len() as f64;
                    let m = draws.iter().sum::<f64>() / n;
                    let sd = (draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
                    vec![label.clone(), num(m), num(sd), draws.len().to_string()]
                })
                .collect();
            art.csv(&format!("predictive_{stem}.csv"), &["output".into(), "mean".into(), "std".into(), "draws".into()], &rows)?;
        }
    }
    for (a, b) in pairs(runs.len()) {
        if runs[a].perturbed.is_empty() {
            break;
        }
        let log10: Vec<f64> = runs[a]
            .perturbed
            .iter()
            .zip(&runs[b].perturbed)
            .map(|(x, y)| (x - y) / std::f64::consts::LN_10)
            .collect();
        let name = format!("bf_hist_{}_vs_{}.csv", file_stem(&entries[a].name), file_stem(&entries[b].name));
        art.histogram(&name, &log10, bins)?;
    }
    if let Some(t) = &tom {
        art.histogram("tom_hist.csv", &t.log_bme, bins)?;
    }
    art.json("validation_report.json", "report", &report)?;

    let mut summary: Vec<String> = report
        .models
        .iter()
        .zip(&report.weights)
        .map(|(m, w)| format!("{}: log BME {:.4} (se {:.2e}), DKL {:.4}, weight {:.4}", m.name, m.log_bme, m.log_bme_std_error, m.dkl.unwrap_or(f64::NAN), w))
        .collect();
    summary.extend(report.bayes_factors.iter().map(|f| {
        format!("{} vs {}: log10 BF {:.3}, {}", f.first, f.second, f.factor.log10_bf, f.description)
    }));
    Ok(summary)
}

fn pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect()
}

fn param_names(space: &InputSpace) -> Vec<String> {
    space.names()
}

fn tom(cfg: &RunConfig, art: &mut Artifacts) -> Result<Vec<String>, RunError> {
    let data = observations(cfg, None)?;
    let v = &cfg.validation;
    let dist = bayesval::tom_logbme_distribution(&data, v.tom_draws, rng::derive(cfg.seed, 13))?;
    let n = dist.statistic.len() as f64;
    let mean_s = dist.statistic.iter().sum::<f64>() / n;
    let ks = bayesval::ks_distance(&dist.statistic, |x| dist.chi_square_cdf(x));
    art.histogram("tom_hist.csv", &dist.log_bme, v.histogram_bins)?;
    art.histogram("tom_statistic_hist.csv", &dist.statistic, v.histogram_bins)?;
    art.json(
        "tom.json",
        "tom",
        &json!({
            "dof": dist.dof,
            "draws": dist.statistic.len(),
            "statistic_mean": mean_s,
            "ks_distance": ks,
            "distribution": dist,
        }),
    )?;
    Ok(vec![format!(
        "TOM: {} draws, dof {}, mean statistic {:.4}, KS distance to chi-square {:.4}",
        dist.statistic.len(),
        dist.dof,
        mean_s,
        ks
    )])
}

//! Run configuration: one JSON file per study.

use std::path::PathBuf;

use bayes_pce::adapters::AdapterSpec;
use bayes_pce::bayesval::ObservationSet;
use bayes_pce::inputspace::{InputSpace, SamplingMethod};
use bayes_pce::seqdesign::{SeqConfig, UtilityKind};
use bayes_pce::sparsebayes::FitOptions;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Seqdesign,
    Validate,
    Compare,
    Tom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub space: Option<InputSpace>,
    #[serde(default)]
    pub model: Option<ModelEntry>,
    #[serde(default)]
    pub models: Option<Vec<ModelEntry>>,
    #[serde(default)]
    pub observations: Option<ObservationSpec>,
    #[serde(default)]
    pub error: ErrorSettings,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub training: TrainingSettings,
    #[serde(default)]
    pub seqdesign: SeqSettings,
    #[serde(default)]
    pub validation: ValidationSettings,
    /// Cache directory for external models; defaults to `<output_dir>/cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("bayes-pce-out")
}

fn default_degree() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub name: String,
    pub adapter: AdapterSpec,
    #[serde(default)]
    pub prior_weight: Option<f64>,
    /// Saved surrogate bundle to evaluate instead of the model itself.
    #[serde(default)]
    pub surrogate: Option<PathBuf>,
}

/// Either measured values or synthetic data from the configured model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSpec {
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    #[serde(default)]
    pub sigmas: Option<Vec<f64>>,
    /// One error for every point.
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub labels: Vec<String>,
    /// Generate values by evaluating the (first) model at this point.
    #[serde(default)]
    pub synthetic_at: Option<Vec<f64>>,
}

impl ObservationSpec {
    pub fn sigmas_for(&self, n: usize) -> Result<Vec<f64>, String> {
        match (&self.sigmas, self.sigma) {
            (Some(_), Some(_)) => Err("give either 'sigmas' or 'sigma', not both".into()),
            (Some(s), None) => Ok(s.clone()),
            (None, Some(s)) => Ok(vec![s; n]),
            (None, None) => Err("observation errors missing: set 'sigmas' or 'sigma'".into()),
        }
    }

    /// Observation set when values are given explicitly.
    pub fn explicit(&self) -> Result<Option<ObservationSet>, String> {
        match (&self.values, &self.synthetic_at) {
            (Some(_), Some(_)) => Err("give either 'values' or 'synthetic_at', not both".into()),
            (None, None) => Err("observations need 'values' or 'synthetic_at'".into()),
            (None, Some(_)) => Ok(None),
            (Some(v), None) => {
                let sig = self.sigmas_for(v.len())?;
                ObservationSet::with_labels(v.clone(), sig, self.labels.clone())
                    .map(Some)
                    .map_err(|e| e.to_string())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorSettings {
    /// Per-output discretization error; empty means none.
    pub discretization_std: Vec<f64>,
    /// Richardson studies giving the discretization error instead: one
    /// per output, or a single one shared by all outputs.
    pub mesh_studies: Vec<MeshStudy>,
    pub include_surrogate_std: bool,
}

impl Default for ErrorSettings {
    fn default() -> Self {
        Self { discretization_std: vec![], mesh_studies: vec![], include_surrogate_std: true }
    }
}

/// Solutions on several meshes, read from a CSV with `h` and `f` columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshStudy {
    pub csv: PathBuf,
    #[serde(default = "default_order")]
    pub order: f64,
    /// Spacing of the mesh used for production runs; the finest by default.
    #[serde(default)]
    pub production_h: Option<f64>,
}

fn default_order() -> f64 {
    1.0
}

impl MeshStudy {
    /// `|g| h^p` at the production spacing.
    pub fn discretization_std(&self) -> Result<f64, String> {
        let file = std::fs::File::open(&self.csv).map_err(|e| format!("{}: {e}", self.csv.display()))?;
        let (h, f) = bayes_pce::errormodel::read_mesh_study(file).map_err(|e| format!("{}: {e}", self.csv.display()))?;
        let fit = bayes_pce::errormodel::richardson_fit(&h, &f, self.order).map_err(|e| e.to_string())?;
        let at = self.production_h.unwrap_or_else(|| h.iter().copied().fold(f64::INFINITY, f64::min));
        if !(at > 0.0 && at.is_finite()) {
            return Err(format!("production_h must be positive, got {at}"));
        }
        Ok(fit.error_at(at))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSettings {
    pub n_samples: usize,
    pub sampling: SamplingMethod,
    /// Extra random points for a validation error; zero skips it.
    pub validation_samples: usize,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        Self { n_samples: 50, sampling: SamplingMethod::Lhs, validation_samples: 0 }
    }
}

/// Sequential-design settings; seed, degree and fit options come from the
/// top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeqSettings {
    pub n_init: usize,
    pub init_sampling: SamplingMethod,
    pub n_candidates: usize,
    pub batch_size: usize,
    pub max_runs: usize,
    pub loo_threshold: f64,
    pub utility: UtilityKind,
    pub mc_samples: usize,
    pub evidence_samples: usize,
    pub evidence_every: usize,
}

impl Default for SeqSettings {
    fn default() -> Self {
        let d = SeqConfig::default();
        Self {
            n_init: d.n_init,
            init_sampling: d.init_sampling,
            n_candidates: d.n_candidates,
            batch_size: d.batch_size,
            max_runs: d.max_runs,
            loo_threshold: d.loo_threshold,
            utility: d.utility,
            mc_samples: d.mc_samples,
            evidence_samples: d.evidence_samples,
            evidence_every: d.evidence_every,
        }
    }
}

impl RunConfig {
    pub fn seq_config(&self) -> SeqConfig {
        let s = &self.seqdesign;
        SeqConfig {
            n_init: s.n_init,
            init_sampling: s.init_sampling,
            n_candidates: s.n_candidates,
            batch_size: s.batch_size,
            max_runs: s.max_runs,
            loo_threshold: s.loo_threshold,
            utility: s.utility,
            mc_samples: s.mc_samples,
            degree: self.degree,
            evidence_samples: s.evidence_samples,
            evidence_every: s.evidence_every,
            seed: self.seed,
            fit: self.fit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSettings {
    pub prior_samples: usize,
    pub prior_sampling: SamplingMethod,
    /// Perturbed copies of the data for evidence distributions.
    pub perturbations: usize,
    pub tom_draws: usize,
    pub histogram_bins: usize,
    /// Predictive draws per accepted posterior point; zero skips them.
    pub predictive_draws: usize,
}

impl Default for ValidationSettings {
    fn default() -> Self {
        Self {
            prior_samples: 100_000,
            prior_sampling: SamplingMethod::Random,
            perturbations: 100,
            tom_draws: 10_000,
            histogram_bins: 30,
            predictive_draws: 0,
        }
    }
}

/// Config problem tied to a field path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.path.is_empty() || self.path == "." {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

fn cfg_err(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { path: path.into(), message: message.into() }
}

/// Parses with field-level error paths.
pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| ConfigError {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

impl RunConfig {
    /// Checks that everything the mode needs is present and consistent.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let need_space = self.mode != Mode::Tom;
        if need_space && self.space.is_none() {
            return Err(cfg_err("space", "required for this mode"));
        }
        match self.mode {
            Mode::Train | Mode::Seqdesign | Mode::Validate => {
                if self.model.is_none() {
                    return Err(cfg_err("model", "required for this mode"));
                }
                if self.models.is_some() {
                    return Err(cfg_err("models", "only used by compare; use 'model'"));
                }
            }
            Mode::Compare => {
                let Some(models) = &self.models else {
                    return Err(cfg_err("models", "required for compare"));
                };
                if models.len() < 2 {
                    return Err(cfg_err("models", "compare needs at least two models"));
                }
                if self.model.is_some() {
                    return Err(cfg_err("model", "compare uses 'models'"));
                }
                let given = models.iter().filter(|m| m.prior_weight.is_some()).count();
                if given != 0 && given != models.len() {
                    return Err(cfg_err("models", "set prior_weight on every model or on none"));
                }
                if given == models.len() {
                    let total: f64 = models.iter().filter_map(|m| m.prior_weight).sum();
                    if (total - 1.0).abs() > 1e-9 {
                        return Err(cfg_err("models", format!("prior weights sum to {total}, not 1")));
                    }
                }
                for (i, a) in models.iter().enumerate() {
                    if models[..i].iter().any(|b| b.name == a.name) {
                        return Err(cfg_err(&format!("models[{i}].name"), format!("duplicate name '{}'", a.name)));
                    }
                }
            }
            Mode::Tom => {}
        }
        let needs_data = matches!(self.mode, Mode::Seqdesign | Mode::Validate | Mode::Compare | Mode::Tom);
        if needs_data {
            let Some(obs) = &self.observations else {
                return Err(cfg_err("observations", "required for this mode"));
            };
            obs.explicit().map_err(|m| cfg_err("observations", m))?;
            if obs.synthetic_at.is_some() && self.mode == Mode::Tom {
                return Err(cfg_err("observations.synthetic_at", "tom mode needs explicit values"));
            }
            if obs.values.is_none() {
                obs.sigmas_for(1).map_err(|m| cfg_err("observations", m))?;
            }
        }
        if let Some(space) = &self.space {
            for (i, m) in self.entries().iter().enumerate() {
                let spec = &m.adapter;
                let built = match spec {
                    AdapterSpec::External { command, outputs, .. } => {
                        if command.first().is_none_or(|c| c.trim().is_empty()) {
                            Err("external command is empty".to_string())
                        } else if *outputs == 0 {
                            Err("external model must declare at least one output".to_string())
                        } else {
                            Ok(())
                        }
                    }
                    _ => spec.build(None).map(|_| ()).map_err(|e| e.to_string()),
                };
                if let Err(e) = built {
                    return Err(cfg_err(&format!("{}.adapter", self.entry_path(i)), e));
                }
                let dim = match spec {
                    AdapterSpec::Analytic10d { .. } => Some(10),
                    AdapterSpec::CustomAnalytic { coefficients, .. } => coefficients.first().map(Vec::len),
                    AdapterSpec::External { .. } => None,
                };
                if dim.is_some_and(|d| d != space.dim()) {
                    return Err(cfg_err(
                        &format!("{}.adapter", self.entry_path(i)),
                        format!("model takes {} parameters but the space has {}", dim.unwrap_or(0), space.dim()),
                    ));
                }
            }
        }
        if self.mode == Mode::Seqdesign {
            self.seq_config().validate().map_err(|e| cfg_err("seqdesign", e.to_string()))?;
        } else {
            self.fit.validate().map_err(|e| cfg_err("fit", e.to_string()))?;
        }
        if self.mode == Mode::Train && self.training.n_samples == 0 {
            return Err(cfg_err("training.n_samples", "must be at least 1"));
        }
        if self.mode == Mode::Train && self.training.validation_samples == 1 {
            return Err(cfg_err("training.validation_samples", "use 0 or at least 2"));
        }
        let v = &self.validation;
        if matches!(self.mode, Mode::Validate | Mode::Compare) && v.prior_samples == 0 {
            return Err(cfg_err("validation.prior_samples", "must be at least 1"));
        }
        if matches!(self.mode, Mode::Tom) && v.tom_draws == 0 {
            return Err(cfg_err("validation.tom_draws", "must be at least 1"));
        }
        if v.histogram_bins == 0 {
            return Err(cfg_err("validation.histogram_bins", "must be at least 1"));
        }
        if !self.error.mesh_studies.is_empty() && !self.error.discretization_std.is_empty() {
            return Err(cfg_err("error.mesh_studies", "give either mesh_studies or discretization_std, not both"));
        }
        for (i, m) in self.error.mesh_studies.iter().enumerate() {
            if !(m.order >= 1.0 && m.order.is_finite()) {
                return Err(cfg_err(&format!("error.mesh_studies[{i}].order"), "must be at least 1"));
            }
        }
        if let Err(e) = bayes_pce::errormodel::ErrorBudget::new(vec![1.0; self.error.discretization_std.len().max(1)], self.error.discretization_std.clone(), true) {
            return Err(cfg_err("error.discretization_std", e.to_string()));
        }
        Ok(())
    }

    /// Models in configuration order.
    pub fn entries(&self) -> Vec<&ModelEntry> {
        match (&self.model, &self.models) {
            (Some(m), _) => vec![m],
            (None, Some(ms)) => ms.iter().collect(),
            _ => vec![],
        }
    }

    fn entry_path(&self, i: usize) -> String {
        if self.model.is_some() {
            "model".into()
        } else {
            format!("models[{i}]")
        }
    }
}

//! Forward models: the 10-D analytic benchmark, affine test models, and an
//! external process speaking CSV, with an on-disk evaluation cache.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bayesval::ObservationSet;
use crate::error::{invalid, Error, Result};
use crate::inputspace::{InputSpace, SampleMatrix};
use crate::predictor::{Prediction, Predictions, Predictor};

/// Environment variable that overrides the external-model cache directory.
pub const CACHE_DIR_ENV: &str = "BAYES_PCE_CACHE_DIR";

/// Deterministic map from parameter rows to output rows.
pub trait ForwardModel {
    fn n_outputs(&self) -> usize;

    /// Required parameter count, if the model fixes one.
    fn input_dim(&self) -> Option<usize>;

    /// Responses, one row per parameter row.
    fn evaluate(&self, thetas: &SampleMatrix) -> Result<DMatrix<f64>>;
}

/// The ten-parameter benchmark
/// `y(t) = (t1^2 + t2 - 1)^2 + t1^2 + 0.1 t1 e^t2 - 2 t1 sqrt(0.5 t) + 1 + sum_{i>=2} t_i^3 / i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analytic10d {
    pub t_grid: Vec<f64>,
    /// Slope of a linear trend `drift * t` added to the outputs; zero for
    /// the benchmark itself. A constant shift would be absorbed by the cubic
    /// terms, a trend in `t` is not.
    pub drift: f64,
}

impl Default for Analytic10d {
    fn default() -> Self {
        Self { t_grid: (1..=10).map(f64::from).collect(), drift: 0.0 }
    }
}

impl Analytic10d {
    pub const DIM: usize = 10;
    pub const PRIOR_BOUND: f64 = 5.0;
    pub const DEFAULT_SIGMA: f64 = 2.0;

    pub fn new(t_grid: Vec<f64>) -> Result<Self> {
        let m = Self { t_grid, drift: 0.0 };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_grid.is_empty() {
            return Err(invalid("t grid is empty"));
        }
        if self.t_grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(invalid("t grid entries must be finite and non-negative"));
        }
        if !self.drift.is_finite() {
            return Err(invalid("drift must be finite"));
        }
        Ok(())
    }

    /// The `U(-5, 5)^10` prior.
    pub fn prior() -> InputSpace {
        InputSpace::uniform_cube(Self::DIM, -Self::PRIOR_BOUND, Self::PRIOR_BOUND).expect("valid bounds")
    }

    /// Synthetic data: the response at the origin, with error `sigma`.
    pub fn observations(&self, sigma: f64) -> Result<ObservationSet> {
        let y = self.eval_point(&[0.0; Self::DIM])?;
        ObservationSet::new(y, vec![sigma; self.t_grid.len()])
    }

    pub fn eval_point(&self, th: &[f64]) -> Result<Vec<f64>> {
        if th.len() != Self::DIM {
            return Err(invalid(format!("benchmark takes {} parameters, got {}", Self::DIM, th.len())));
        }
        let (a, b) = (th[0], th[1]);
        let tail: f64 = th.iter().enumerate().skip(1).map(|(i, x)| x.powi(3) / (i + 1) as f64).sum();
        let base = (a * a + b - 1.0).powi(2) + a * a + 0.1 * a * b.exp() + 1.0 + tail;
        Ok(self.t_grid.iter().map(|t| base - 2.0 * a * (0.5 * t).sqrt() + self.drift * t).collect())
    }
}

impl ForwardModel for Analytic10d {
    fn n_outputs(&self) -> usize {
        self.t_grid.len()
    }

    fn input_dim(&self) -> Option<usize> {
        Some(Self::DIM)
    }

    fn evaluate(&self, thetas: &SampleMatrix) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(thetas.nrows(), self.t_grid.len());
        for (r, th) in thetas.rows().enumerate() {
            for (c, v) in self.eval_point(th)?.into_iter().enumerate() {
                out[(r, c)] = v;
            }
        }
        Ok(out)
    }
}

/// `y = intercept + C theta`, with `C` given row by row (one row per output).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineModel {
    pub intercept: Vec<f64>,
    pub coefficients: Vec<Vec<f64>>,
}

impl AffineModel {
    pub fn new(intercept: Vec<f64>, coefficients: Vec<Vec<f64>>) -> Result<Self> {
        let m = Self { intercept, coefficients };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.intercept.is_empty() || self.coefficients.len() != self.intercept.len() {
            return Err(invalid("affine model needs one coefficient row per output"));
        }
        let m = self.coefficients[0].len();
        if m == 0 || self.coefficients.iter().any(|r| r.len() != m) {
            return Err(invalid("coefficient rows must share a nonzero length"));
        }
        if self.intercept.iter().chain(self.coefficients.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(invalid("affine model coefficients must be finite"));
        }
        Ok(())
    }
}

impl ForwardModel for AffineModel {
    fn n_outputs(&self) -> usize {
        self.intercept.len()
    }

    fn input_dim(&self) -> Option<usize> {
        Some(self.coefficients[0].len())
    }

    fn evaluate(&self, thetas: &SampleMatrix) -> Result<DMatrix<f64>> {
        let m = self.coefficients[0].len();
        if thetas.ncols() != m {
            return Err(invalid(format!("affine model takes {m} parameters, got {}", thetas.ncols())));
        }
        Ok(DMatrix::from_fn(thetas.nrows(), self.intercept.len(), |r, c| {
            self.intercept[c] + self.coefficients[c].iter().zip(thetas.row(r)).map(|(a, x)| a * x).sum::<f64>()
        }))
    }
}

/// External simulator invoked as `command... <input.csv> <output.csv>`.
#[derive(Debug)]
pub struct ExternalModel {
    command: Vec<String>,
    working_dir: Option<PathBuf>,
    outputs: usize,
    cache_file: Option<PathBuf>,
    command_hash: String,
    cache: Mutex<BTreeMap<String, Vec<f64>>>,
    launches: AtomicUsize,
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    command: Vec<String>,
    entries: BTreeMap<String, Vec<f64>>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Wire format for parameter values; 17 significant digits.
fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

impl ExternalModel {
    /// `cache_dir` is replaced by the environment override when set; with
    /// neither, results are cached in memory only.
    pub fn new(
        command: Vec<String>,
        working_dir: Option<PathBuf>,
        outputs: usize,
        cache_dir: Option<PathBuf>,
    ) -> Result<Self> {
        if command.is_empty() || command[0].trim().is_empty() {
            return Err(invalid("external command is empty"));
        }
        if outputs == 0 {
            return Err(invalid("external model must declare at least one output"));
        }
        let mut h = Sha256::new();
        for part in &command {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
        let command_hash = hex(&h.finalize());
        let dir = std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from).or(cache_dir);
        let cache_file = dir.map(|d| d.join(format!("{command_hash}.json")));
        let mut entries = BTreeMap::new();
        if let Some(path) = &cache_file {
            if path.exists() {
                let text = std::fs::read_to_string(path)?;
                let file: CacheFile = serde_json::from_str(&text)
                    .map_err(|e| Error::Io(format!("corrupt cache {}: {e}", path.display())))?;
                entries = file.entries;
            }
        }
        Ok(Self {
            command,
            working_dir,
            outputs,
            cache_file,
            command_hash,
            cache: Mutex::new(entries),
            launches: AtomicUsize::new(0),
        })
    }

    /// Number of subprocesses started by this instance.
    pub fn launches(&self) -> usize {
        self.launches.load(Ordering::Relaxed)
    }

    pub fn command_hash(&self) -> &str {
        &self.command_hash
    }

    pub fn cache_file(&self) -> Option<&Path> {
        self.cache_file.as_deref()
    }

    fn row_key(row: &[f64]) -> String {
        let text: Vec<String> = row.iter().map(|v| format_value(*v)).collect();
        hex(&Sha256::digest(text.join(",").as_bytes()))
    }

    fn run_batch(&self, thetas: &SampleMatrix) -> Result<DMatrix<f64>> {
        let dir = tempfile::tempdir()?;
        let input = dir.path().join("input.csv");
        let output = dir.path().join("output.csv");
        {
            let mut w = csv::Writer::from_path(&input).map_err(|e| Error::Io(e.to_string()))?;
            let header: Vec<String> = (1..=thetas.ncols()).map(|i| format!("p{i}")).collect();
            w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
            for row in thetas.rows() {
                w.write_record(row.iter().map(|v| format_value(*v))).map_err(|e| Error::Io(e.to_string()))?;
            }
            w.flush()?;
        }
        let mut cmd = Command::new(&self.command[0]);
        cmd.args(&self.command[1..]).arg(&input).arg(&output);
        if let Some(wd) = &self.working_dir {
            cmd.current_dir(wd);
        }
        self.launches.fetch_add(1, Ordering::Relaxed);
        let result = cmd
            .output()
            .map_err(|e| Error::ModelFailure(format!("cannot start '{}': {e}", self.command[0])))?;
        if !result.status.success() {
            return Err(Error::ModelFailure(format!(
                "'{}' exited with {}\nstdout:\n{}\nstderr:\n{}",
                self.command.join(" "),
                result.status,
                String::from_utf8_lossy(&result.stdout),
                String::from_utf8_lossy(&result.stderr)
            )));
        }
        let text = std::fs::read_to_string(&output)
            .map_err(|e| Error::Protocol(format!("model wrote no output file: {e}")))?;
        parse_output(&text, thetas.nrows(), self.outputs)
    }

    fn persist(&self, entries: &BTreeMap<String, Vec<f64>>) -> Result<()> {
        let Some(path) = &self.cache_file else { return Ok(()) };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = CacheFile { command: self.command.clone(), entries: entries.clone() };
        let text = serde_json::to_string(&file).map_err(|e| Error::Io(e.to_string()))?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}

/// Parses simulator output: header row, then one row per input point.
fn parse_output(text: &str, rows: usize, outputs: usize) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::Protocol(format!("bad output header: {e}")))?;
    if header.len() != outputs {
        return Err(Error::Protocol(format!("expected {outputs} output columns, header has {}", header.len())));
    }
    let mut values = Vec::with_capacity(rows * outputs);
    let mut count = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Protocol(format!("output row {}: {e}", count + 1)))?;
        if rec.len() != outputs {
            return Err(Error::Protocol(format!("output row {} has {} cells, expected {outputs}", count + 1, rec.len())));
        }
        for cell in rec.iter() {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::Protocol(format!("output row {}: unparseable cell '{cell}'", count + 1)))?;
            values.push(v);
        }
        count += 1;
    }
    if count != rows {
        return Err(Error::Protocol(format!("expected {rows} output rows, got {count}")));
    }
    Ok(DMatrix::from_row_slice(rows, outputs, &values))
}

impl ForwardModel for ExternalModel {
    fn n_outputs(&self) -> usize {
        self.outputs
    }

    fn input_dim(&self) -> Option<usize> {
        None
    }

    fn evaluate(&self, thetas: &SampleMatrix) -> Result<DMatrix<f64>> {
        if thetas.nrows() == 0 {
            return Err(invalid("no parameter rows to evaluate"));
        }
        let keys: Vec<String> = thetas.rows().map(Self::row_key).collect();
        let mut cache = self.cache.lock().map_err(|_| Error::Io("cache lock poisoned".into()))?;
        let mut missing: Vec<usize> = Vec::new();
        for (i, k) in keys.iter().enumerate() {
            if !cache.contains_key(k) && !missing.iter().any(|&j| keys[j] == *k) {
                missing.push(i);
            }
        }
        if !missing.is_empty() {
            let fresh = self.run_batch(&thetas.select_rows(&missing))?;
            for (r, &i) in missing.iter().enumerate() {
                cache.insert(keys[i].clone(), fresh.row(r).iter().copied().collect());
            }
            self.persist(&cache)?;
        }
        let mut out = DMatrix::zeros(thetas.nrows(), self.outputs);
        for (r, k) in keys.iter().enumerate() {
            let row = &cache[k];
            if row.len() != self.outputs {
                return Err(Error::Protocol("cached row has the wrong width".into()));
            }
            for (c, v) in row.iter().enumerate() {
                out[(r, c)] = *v;
            }
        }
        Ok(out)
    }
}

/// Serializable model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AdapterSpec {
    #[serde(rename = "analytic-10d")]
    Analytic10d {
        #[serde(default)]
        t_grid: Option<Vec<f64>>,
        #[serde(default)]
        drift: f64,
    },
    CustomAnalytic { intercept: Vec<f64>, coefficients: Vec<Vec<f64>> },
    External {
        command: Vec<String>,
        outputs: usize,
        #[serde(default)]
        working_dir: Option<PathBuf>,
        #[serde(default)]
        cache_dir: Option<PathBuf>,
    },
}

impl AdapterSpec {
    /// `default_cache` is used for external models without their own cache dir.
    pub fn build(&self, default_cache: Option<&Path>) -> Result<ModelAdapter> {
        Ok(match self {
            Self::Analytic10d { t_grid, drift } => {
                let mut m = Analytic10d { drift: *drift, ..Analytic10d::default() };
                if let Some(t) = t_grid {
                    m.t_grid = t.clone();
                }
                m.validate()?;
                ModelAdapter::Analytic10d(m)
            }
            Self::CustomAnalytic { intercept, coefficients } => {
                ModelAdapter::Affine(AffineModel::new(intercept.clone(), coefficients.clone())?)
            }
            Self::External { command, outputs, working_dir, cache_dir } => {
                let cache = cache_dir.clone().or_else(|| default_cache.map(Path::to_path_buf));
                ModelAdapter::External(ExternalModel::new(command.clone(), working_dir.clone(), *outputs, cache)?)
            }
        })
    }
}

#[derive(Debug)]
pub enum ModelAdapter {
    Analytic10d(Analytic10d),
    Affine(AffineModel),
    External(ExternalModel),
}

impl ModelAdapter {
    fn inner(&self) -> &dyn ForwardModel {
        match self {
            Self::Analytic10d(m) => m,
            Self::Affine(m) => m,
            Self::External(m) => m,
        }
    }
}

impl ForwardModel for ModelAdapter {
    fn n_outputs(&self) -> usize {
        self.inner().n_outputs()
    }

    fn input_dim(&self) -> Option<usize> {
        self.inner().input_dim()
    }

    fn evaluate(&self, thetas: &SampleMatrix) -> Result<DMatrix<f64>> {
        self.inner().evaluate(thetas)
    }
}

/// Wraps a forward model as an exact (zero-variance) predictor.
pub struct ExactPredictor<'a, M: ForwardModel + ?Sized>(pub &'a M);

impl<M: ForwardModel + ?Sized> Predictor for ExactPredictor<'_, M> {
    fn n_outputs(&self) -> usize {
        self.0.n_outputs()
    }

    fn predict(&self, theta: &[f64]) -> Result<Prediction> {
        let m = SampleMatrix::from_row_major(1, theta.len(), theta.to_vec(), crate::inputspace::Coordinates::Physical)?;
        let y = self.0.evaluate(&m)?;
        let mean: Vec<f64> = y.row(0).iter().copied().collect();
        Ok(Prediction { std: vec![0.0; mean.len()], mean })
    }

    fn predict_batch(&self, thetas: &SampleMatrix) -> Result<Predictions> {
        let y = self.0.evaluate(thetas)?;
        let mut flat = Vec::with_capacity(y.len());
        for r in 0..y.nrows() {
            flat.extend(y.row(r).iter());
        }
        Ok(Predictions::exact(self.0.n_outputs(), flat))
    }
}

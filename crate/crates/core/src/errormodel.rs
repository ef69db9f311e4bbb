//! Total observation-error covariance and Richardson extrapolation of
//! discretization error.

use serde::{Deserialize, Serialize};

use crate::bayesval::ObservationSet;
use crate::error::{invalid, Error, Result};

/// Independent Gaussian error sources per output, combined by adding variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub measurement_std: Vec<f64>,
    /// Empty means no discretization error.
    #[serde(default)]
    pub discretization_std: Vec<f64>,
    /// Add the surrogate's predictive variance at each queried point.
    #[serde(default = "default_true")]
    pub include_surrogate_std: bool,
}

fn default_true() -> bool {
    true
}

impl ErrorBudget {
    pub fn new(measurement_std: Vec<f64>, discretization_std: Vec<f64>, include_surrogate_std: bool) -> Result<Self> {
        let b = Self { measurement_std, discretization_std, include_surrogate_std };
        b.validate()?;
        Ok(b)
    }

    /// Budget holding only the observation errors of `data`.
    pub fn from_observations(data: &ObservationSet) -> Self {
        Self { measurement_std: data.sigmas().to_vec(), discretization_std: vec![], include_surrogate_std: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.measurement_std.is_empty() {
            return Err(invalid("error budget needs at least one output"));
        }
        if !self.discretization_std.is_empty() && self.discretization_std.len() != self.measurement_std.len() {
            return Err(invalid(format!(
                "{} discretization errors for {} outputs",
                self.discretization_std.len(),
                self.measurement_std.len()
            )));
        }
        if self.measurement_std.iter().chain(&self.discretization_std).any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(invalid("error standard deviations must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.measurement_std.len()
    }

    /// Diagonal of the total covariance.
    pub fn assemble(&self, surrogate_std: Option<&[f64]>) -> Result<Vec<f64>> {
        assemble_covariance(self, surrogate_std)
    }
}

/// `Sigma_ii = sigma_meas^2 + sigma_disc^2 + sigma_surr^2`. The surrogate
/// term is used only when given and enabled in the budget.
pub fn assemble_covariance(budget: &ErrorBudget, surrogate_std: Option<&[f64]>) -> Result<Vec<f64>> {
    let n = budget.dim();
    let surrogate = surrogate_std.filter(|_| budget.include_surrogate_std);
    if let Some(s) = surrogate {
        if s.len() != n {
            return Err(invalid(format!("{} surrogate std entries for {n} outputs", s.len())));
        }
    }
    (0..n)
        .map(|i| {
            let disc = budget.discretization_std.get(i).copied().unwrap_or(0.0);
            let surr = surrogate.map_or(0.0, |s| s[i]);
            let v = budget.measurement_std[i].powi(2) + disc * disc + surr * surr;
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::SingularCovariance(i))
            }
        })
        .collect()
}

/// Least-squares fit of `f_k = f_exact + g * h_k^order`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RichardsonFit {
    /// Extrapolated zero-spacing solution.
    pub extrapolated: f64,
    /// Error-term coefficient.
    pub coefficient: f64,
    pub order: f64,
    /// `|g| h_k^order` for each mesh, in input order.
    pub errors: Vec<f64>,
}

impl RichardsonFit {
    /// Error estimate at an arbitrary spacing.
    pub fn error_at(&self, h: f64) -> f64 {
        self.coefficient.abs() * h.powf(self.order)
    }
}

pub fn richardson_fit(spacings: &[f64], solutions: &[f64], order: f64) -> Result<RichardsonFit> {
    if spacings.len() != solutions.len() {
        return Err(invalid("one solution per mesh spacing required"));
    }
    if spacings.len() < 2 {
        return Err(invalid("at least two meshes are needed"));
    }
    if !(order >= 1.0 && order.is_finite()) {
        return Err(invalid(format!("order must be >= 1, got {order}")));
    }
    if spacings.iter().any(|h| !(h.is_finite() && *h > 0.0)) || solutions.iter().any(|f| !f.is_finite()) {
        return Err(invalid("spacings must be positive and solutions finite"));
    }
    let x: Vec<f64> = spacings.iter().map(|h| h.powf(order)).collect();
    let n = x.len() as f64;
    let xm = x.iter().sum::<f64>() / n;
    let fm = solutions.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
    let scale = x.iter().map(|v| v * v).sum::<f64>();
    if sxx <= 1e-24 * scale {
        return Err(Error::RankDeficient("mesh spacings must not all coincide".into()));
    }
    let sxf: f64 = x.iter().zip(solutions).map(|(v, f)| (v - xm) * (f - fm)).sum();
    let g = sxf / sxx;
    let extrapolated = fm - g * xm;
    Ok(RichardsonFit {
        extrapolated,
        coefficient: g,
        order,
        errors: x.iter().map(|v| g.abs() * v).collect(),
    })
}

/// Reads a mesh study with `h` and `f` columns.
pub fn read_mesh_study<R: std::io::Read>(reader: R) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Protocol(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Protocol(format!("mesh study lacks column '{name}'")))
    };
    let (hi, fi) = (col("h")?, col("f")?);
    let mut h = Vec::new();
    let mut f = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Protocol(e.to_string()))?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Protocol(format!("row {}: unparseable cell", line + 1)))
        };
        h.push(parse(hi)?);
        f.push(parse(fi)?);
    }
    Ok((h, f))
}

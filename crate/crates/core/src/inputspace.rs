//! Uncertain-parameter prior: independent marginals, isoprobabilistic
//! standardization and prior samplers.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::rng;

/// Distribution family of a single input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "params", rename_all = "snake_case")]
pub enum Marginal {
    Uniform { lower: f64, upper: f64 },
    Gaussian { mean: f64, std: f64 },
    /// Known only through raw moments `m_0..m_{2p}` with `m_0 = 1`.
    Moments { moments: Vec<f64> },
}

impl Marginal {
    pub fn validate(&self) -> Result<()> {
        match self {
            Marginal::Uniform { lower, upper } => {
                if !(lower.is_finite() && upper.is_finite() && lower < upper) {
                    return Err(invalid(format!("uniform requires lower < upper, got [{lower}, {upper}]")));
                }
            }
            Marginal::Gaussian { mean, std } => {
                if !(mean.is_finite() && std.is_finite() && *std > 0.0) {
                    return Err(invalid(format!("gaussian requires std > 0, got {std}")));
                }
            }
            Marginal::Moments { moments } => {
                if moments.is_empty() || (moments[0] - 1.0).abs() > 1e-12 {
                    return Err(invalid("moments must start with m_0 = 1"));
                }
                if moments.iter().any(|m| !m.is_finite()) {
                    return Err(invalid("moments must be finite"));
                }
            }
        }
        Ok(())
    }

    /// Physical coordinate to standard coordinate.
    pub fn to_standard(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::Domain(format!("non-finite coordinate {x}")));
        }
        match *self {
            Marginal::Uniform { lower, upper } => {
                let slack = 1e-12 * (upper - lower);
                if x < lower - slack || x > upper + slack {
                    return Err(Error::Domain(format!("{x} outside [{lower}, {upper}]")));
                }
                Ok((2.0 * (x - lower) / (upper - lower) - 1.0).clamp(-1.0, 1.0))
            }
            Marginal::Gaussian { mean, std } => Ok((x - mean) / std),
            Marginal::Moments { .. } => Ok(x),
        }
    }

    /// Standard coordinate back to physical units.
    pub fn from_standard(&self, u: f64) -> Result<f64> {
        if !u.is_finite() {
            return Err(Error::Domain(format!("non-finite coordinate {u}")));
        }
        match *self {
            Marginal::Uniform { lower, upper } => {
                if !(-1.0 - 1e-12..=1.0 + 1e-12).contains(&u) {
                    return Err(Error::Domain(format!("{u} outside [-1, 1]")));
                }
                let u = u.clamp(-1.0, 1.0);
                Ok(lower + 0.5 * (u + 1.0) * (upper - lower))
            }
            Marginal::Gaussian { mean, std } => Ok(mean + std * u),
            Marginal::Moments { .. } => Ok(u),
        }
    }

    /// Inverse CDF at probability `q` in (0, 1).
    fn quantile(&self, q: f64) -> Result<f64> {
        match *self {
            Marginal::Uniform { lower, upper } => Ok(lower + q * (upper - lower)),
            Marginal::Gaussian { mean, std } => {
                let n = Normal::new(mean, std).map_err(|e| invalid(e.to_string()))?;
                Ok(n.inverse_cdf(q))
            }
            Marginal::Moments { .. } => Err(Error::Unsupported(
                "sampling from a moment-defined marginal".into(),
            )),
        }
    }

    fn contains(&self, x: f64) -> bool {
        match *self {
            Marginal::Uniform { lower, upper } => x >= lower && x <= upper,
            _ => x.is_finite(),
        }
    }
}

/// A named input parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    #[serde(flatten)]
    pub marginal: Marginal,
}

/// The prior over `M` independent inputs; also the design space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Parameter>", into = "Vec<Parameter>")]
pub struct InputSpace {
    params: Vec<Parameter>,
}

impl TryFrom<Vec<Parameter>> for InputSpace {
    type Error = Error;
    fn try_from(params: Vec<Parameter>) -> Result<Self> {
        InputSpace::new(params)
    }
}

impl From<InputSpace> for Vec<Parameter> {
    fn from(s: InputSpace) -> Self {
        s.params
    }
}

/// Sampling scheme for [`InputSpace::sample`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMethod {
    Random,
    Lhs,
}

/// Which coordinate system the entries of a [`SampleMatrix`] live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coordinates {
    Physical,
    Standard,
}

/// Row-major `N x M` matrix of parameter points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMatrix {
    nrows: usize,
    ncols: usize,
    coordinates: Coordinates,
    data: Vec<f64>,
}

impl SampleMatrix {
    pub fn from_rows(rows: &[Vec<f64>], coordinates: Coordinates) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(invalid("ragged sample rows"));
        }
        Ok(Self {
            nrows: rows.len(),
            ncols,
            coordinates,
            data: rows.concat(),
        })
    }

    pub fn from_row_major(nrows: usize, ncols: usize, data: Vec<f64>, coordinates: Coordinates) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(invalid(format!(
                "expected {} entries for {nrows}x{ncols}, got {}",
                nrows * ncols,
                data.len()
            )));
        }
        Ok(Self { nrows, ncols, coordinates, data })
    }

    pub fn empty(ncols: usize, coordinates: Coordinates) -> Self {
        Self { nrows: 0, ncols, coordinates, data: Vec::new() }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn coordinates(&self) -> Coordinates {
        self.coordinates
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.nrows).map(move |i| self.row(i))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Appends the rows of `other` (same width and coordinates).
    pub fn append(&mut self, other: &SampleMatrix) -> Result<()> {
        if other.ncols != self.ncols || other.coordinates != self.coordinates {
            return Err(invalid("cannot append samples of different shape or coordinates"));
        }
        self.data.extend_from_slice(&other.data);
        self.nrows += other.nrows;
        Ok(())
    }

    /// New matrix holding the selected rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> SampleMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.ncols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        SampleMatrix { nrows: idx.len(), ncols: self.ncols, coordinates: self.coordinates, data }
    }
}

impl InputSpace {
    pub fn new(params: Vec<Parameter>) -> Result<Self> {
        if params.is_empty() {
            return Err(invalid("an input space needs at least one parameter"));
        }
        for p in &params {
            p.marginal
                .validate()
                .map_err(|e| invalid(format!("parameter '{}': {e}", p.name)))?;
        }
        Ok(Self { params })
    }

    /// Space of anonymous marginals named `p1..pM`.
    pub fn from_marginals(marginals: Vec<Marginal>) -> Result<Self> {
        Self::new(
            marginals
                .into_iter()
                .enumerate()
                .map(|(i, marginal)| Parameter { name: format!("p{}", i + 1), marginal })
                .collect(),
        )
    }

    /// `dim` independent copies of `U(lower, upper)`.
    pub fn uniform_cube(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::from_marginals(vec![Marginal::Uniform { lower, upper }; dim])
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.params
    }

    pub fn marginal(&self, i: usize) -> &Marginal {
        &self.params[i].marginal
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    /// Whether `x` (physical units) lies in the support of the prior.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.params.iter().zip(x).all(|(p, &v)| p.marginal.contains(v))
    }

    /// Draws `n` prior points, i.i.d. or Latin-hypercube stratified.
    pub fn sample(&self, n: usize, method: SamplingMethod, seed: u64) -> Result<SampleMatrix> {
        if n == 0 {
            return Err(invalid("sample count must be at least 1"));
        }
        let m = self.dim();
        let mut rng = rng::from_seed(seed);
        let mut data = vec![0.0; n * m];
        match method {
            SamplingMethod::Random => {
                for i in 0..n {
                    for (j, p) in self.params.iter().enumerate() {
                        data[i * m + j] = match p.marginal {
                            Marginal::Uniform { lower, upper } => {
                                lower + rng.random::<f64>() * (upper - lower)
                            }
                            Marginal::Gaussian { mean, std } => {
                                mean + std * rng.sample::<f64, _>(StandardNormal)
                            }
                            Marginal::Moments { .. } => {
                                return Err(Error::Unsupported(format!(
                                    "sampling parameter '{}' defined by moments",
                                    p.name
                                )))
                            }
                        };
                    }
                }
            }
            SamplingMethod::Lhs => {
                let mut perm: Vec<usize> = (0..n).collect();
                for (j, p) in self.params.iter().enumerate() {
                    perm.shuffle(&mut rng);
                    for (i, &stratum) in perm.iter().enumerate() {
                        // open interval keeps gaussian quantiles finite
                        let jitter: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                        let q = (stratum as f64 + jitter) / n as f64;
                        let x = p.marginal.quantile(q.min(1.0 - f64::EPSILON / 2.0))?;
                        data[i * m + j] = x;
                    }
                }
            }
        }
        SampleMatrix::from_row_major(n, m, data, Coordinates::Physical)
    }

    pub fn to_standard(&self, x: &SampleMatrix) -> Result<SampleMatrix> {
        self.map_rows(x, Coordinates::Physical, Coordinates::Standard, Marginal::to_standard)
    }

    pub fn from_standard(&self, u: &SampleMatrix) -> Result<SampleMatrix> {
        self.map_rows(u, Coordinates::Standard, Coordinates::Physical, Marginal::from_standard)
    }

    /// Standardizes a single point.
    pub fn point_to_standard(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(invalid(format!("point has {} coordinates, space has {}", x.len(), self.dim())));
        }
        self.params
            .iter()
            .zip(x)
            .map(|(p, &v)| p.marginal.to_standard(v))
            .collect()
    }

    fn map_rows(
        &self,
        x: &SampleMatrix,
        from: Coordinates,
        to: Coordinates,
        f: fn(&Marginal, f64) -> Result<f64>,
    ) -> Result<SampleMatrix> {
        if x.ncols() != self.dim() {
            return Err(invalid(format!("sample has {} columns, space has {}", x.ncols(), self.dim())));
        }
        if x.coordinates() != from {
            return Err(invalid(format!("expected {from:?} coordinates, got {:?}", x.coordinates())));
        }
        let m = self.dim();
        let data = x
            .as_slice()
            .iter()
            .enumerate()
            .map(|(k, &v)| f(&self.params[k % m].marginal, v))
            .collect::<Result<Vec<_>>>()?;
        SampleMatrix::from_row_major(x.nrows(), m, data, to)
    }
}

//! Multi-output PCE surrogate: one sparse fit per output on a shared design.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::inputspace::{Coordinates, InputSpace, SampleMatrix};
use crate::polybasis::PCEBasis;
use crate::predictor::{Prediction, Predictions, Predictor};
use crate::sparsebayes::{self, FitOptions, PreparedDesign, SparseFit, WarmStart};

/// Rows evaluated together in batched prediction.
const CHUNK: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SurrogateBundle", into = "SurrogateBundle")]
pub struct PCESurrogate {
    space: InputSpace,
    basis: PCEBasis,
    fits: Vec<SparseFit>,
    labels: Vec<String>,
    design: SampleMatrix,
    /// One column per output.
    responses: Vec<Vec<f64>>,
    loo: Vec<f64>,
    // union of active terms, and where each fit's terms sit in it
    union: Vec<usize>,
    slots: Vec<Vec<usize>>,
}

/// On-disk form of a surrogate.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SurrogateBundle {
    space: InputSpace,
    basis: PCEBasis,
    labels: Vec<String>,
    design: SampleMatrix,
    responses: Vec<Vec<f64>>,
    fits: Vec<SparseFit>,
    loo: Vec<f64>,
}

impl From<PCESurrogate> for SurrogateBundle {
    fn from(s: PCESurrogate) -> Self {
        Self {
            space: s.space,
            basis: s.basis,
            labels: s.labels,
            design: s.design,
            responses: s.responses,
            fits: s.fits,
            loo: s.loo,
        }
    }
}

impl TryFrom<SurrogateBundle> for PCESurrogate {
    type Error = Error;
    fn try_from(b: SurrogateBundle) -> Result<Self> {
        let n_out = b.fits.len();
        if n_out == 0 || b.labels.len() != n_out || b.responses.len() != n_out || b.loo.len() != n_out {
            return Err(invalid("surrogate bundle has inconsistent output counts"));
        }
        if b.basis.dim() != b.space.dim() || b.design.ncols() != b.space.dim() {
            return Err(invalid("surrogate bundle dimensions disagree"));
        }
        for (f, r) in b.fits.iter().zip(&b.responses) {
            if f.n_terms() != b.basis.len() || f.active.iter().any(|&i| i >= b.basis.len()) {
                return Err(invalid("fit does not match the basis"));
            }
            if r.len() != b.design.nrows() {
                return Err(invalid("responses do not match the design"));
            }
        }
        Ok(Self::assemble(b.space, b.basis, b.fits, b.labels, b.design, b.responses, b.loo))
    }
}

/// Output labels `y1..yK`.
pub fn default_labels(k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("y{i}")).collect()
}

/// Responses stored as one column per output.
fn columns(responses: &DMatrix<f64>) -> Vec<Vec<f64>> {
    responses.column_iter().map(|c| c.iter().copied().collect()).collect()
}

impl PCESurrogate {
    /// Trains one sparse fit per column of `responses` (`N x N_out`).
    pub fn train(
        space: &InputSpace,
        degree: usize,
        design: &SampleMatrix,
        responses: &DMatrix<f64>,
        opts: &FitOptions,
    ) -> Result<Self> {
        let basis = PCEBasis::for_space(space, degree)?;
        let prepared = Self::prepare(space, &basis, design)?;
        Self::train_prepared(space, basis, design, &prepared, responses, opts, None)
    }

    /// Design matrix of `design` (physical coordinates) in `basis`.
    pub fn prepare(space: &InputSpace, basis: &PCEBasis, design: &SampleMatrix) -> Result<PreparedDesign> {
        Ok(PreparedDesign::new(&design_matrix(space, basis, design)?))
    }

    /// As [`train`](Self::train) with a prepared design and optional warm
    /// starts, one per output.
    pub fn train_prepared(
        space: &InputSpace,
        basis: PCEBasis,
        design: &SampleMatrix,
        prepared: &PreparedDesign,
        responses: &DMatrix<f64>,
        opts: &FitOptions,
        warm: Option<&[SparseFit]>,
    ) -> Result<Self> {
        if responses.nrows() != design.nrows() {
            return Err(invalid(format!(
                "{} response rows for {} design rows",
                responses.nrows(),
                design.nrows()
            )));
        }
        if responses.ncols() == 0 {
            return Err(invalid("at least one output is required"));
        }
        if design.ncols() != space.dim() || basis.dim() != space.dim() {
            return Err(invalid("design, basis and space dimensions differ"));
        }
        if prepared.design().nrows() != design.nrows() || prepared.design().ncols() != basis.len() {
            return Err(invalid("prepared design does not match"));
        }
        if let Some(w) = warm {
            if w.len() != responses.ncols() {
                return Err(invalid("one warm start per output required"));
            }
        }
        let cols = columns(responses);
        let mut fits = Vec::with_capacity(cols.len());
        let mut loo = Vec::with_capacity(cols.len());
        for (j, y) in cols.iter().enumerate() {
            let start = warm.map(|w| WarmStart::from(&w[j]));
            let fit = sparsebayes::fit_prepared(prepared, y, opts, start.as_ref())?;
            loo.push(loo_or_infinite(prepared.design(), y, &fit)?);
            fits.push(fit);
        }
        let labels = default_labels(cols.len());
        Ok(Self::assemble(space.clone(), basis, fits, labels, design.clone(), cols, loo))
    }

    fn assemble(
        space: InputSpace,
        basis: PCEBasis,
        fits: Vec<SparseFit>,
        labels: Vec<String>,
        design: SampleMatrix,
        responses: Vec<Vec<f64>>,
        loo: Vec<f64>,
    ) -> Self {
        let mut union: Vec<usize> = fits.iter().flat_map(|f| f.active.iter().copied()).collect();
        union.sort_unstable();
        union.dedup();
        let slots = fits
            .iter()
            .map(|f| f.active.iter().map(|i| union.binary_search(i).expect("term in union")).collect())
            .collect();
        Self { space, basis, fits, labels, design, responses, loo, union, slots }
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.fits.len() {
            return Err(invalid(format!("{} labels for {} outputs", labels.len(), self.fits.len())));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn space(&self) -> &InputSpace {
        &self.space
    }

    pub fn basis(&self) -> &PCEBasis {
        &self.basis
    }

    pub fn fits(&self) -> &[SparseFit] {
        &self.fits
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn design(&self) -> &SampleMatrix {
        &self.design
    }

    pub fn responses(&self, output: usize) -> &[f64] {
        &self.responses[output]
    }

    /// Leave-one-out error per output; infinite where leverage is degenerate.
    pub fn loo_errors(&self) -> &[f64] {
        &self.loo
    }

    pub fn max_loo_error(&self) -> f64 {
        self.loo.iter().copied().fold(0.0, f64::max)
    }

    pub fn n_outputs(&self) -> usize {
        self.fits.len()
    }

    /// Predictive mean and standard deviation per output at a physical point.
    pub fn predict_all(&self, theta: &[f64]) -> Result<Prediction> {
        if theta.len() != self.space.dim() {
            return Err(invalid(format!("point has {} coordinates, space {}", theta.len(), self.space.dim())));
        }
        if !self.space.contains(theta) {
            return Err(Error::Domain(format!("{theta:?} lies outside the parameter support")));
        }
        let u = self.space.point_to_standard(theta)?;
        let psi = self.basis.eval_terms(&u, &self.union)?;
        let mut mean = Vec::with_capacity(self.fits.len());
        let mut std = Vec::with_capacity(self.fits.len());
        let mut buf = Vec::new();
        for (fit, slots) in self.fits.iter().zip(&self.slots) {
            buf.clear();
            buf.extend(slots.iter().map(|&s| psi[s]));
            let (m, v) = fit.predict_active(&buf);
            mean.push(m);
            std.push(v.sqrt());
        }
        Ok(Prediction { mean, std })
    }

    /// Batched prediction at every row of `thetas` (physical coordinates).
    pub fn predict_many(&self, thetas: &SampleMatrix) -> Result<Predictions> {
        if thetas.ncols() != self.space.dim() {
            return Err(invalid("sample width does not match the space"));
        }
        let k = self.fits.len();
        let mut out = Predictions::with_capacity(k, thetas.nrows());
        let mut start = 0;
        while start < thetas.nrows() {
            let end = (start + CHUNK).min(thetas.nrows());
            let n = end - start;
            let mut psi = DMatrix::zeros(n, self.union.len());
            for r in 0..n {
                let theta = thetas.row(start + r);
                if !self.space.contains(theta) {
                    return Err(Error::Domain(format!("{theta:?} lies outside the parameter support")));
                }
                let u = self.space.point_to_standard(theta)?;
                let row = self.basis.eval_terms(&u, &self.union)?;
                for (c, v) in row.into_iter().enumerate() {
                    psi[(r, c)] = v;
                }
            }
            let mut mean = DMatrix::zeros(n, k);
            let mut var = DMatrix::zeros(n, k);
            for (j, (fit, slots)) in self.fits.iter().zip(&self.slots).enumerate() {
                let phi = psi.select_columns(slots);
                let mu = DVector::from_iterator(slots.len(), fit.active.iter().map(|&i| fit.mean[i]));
                let m = &phi * mu;
                let ps = &phi * &fit.covariance;
                for r in 0..n {
                    mean[(r, j)] = m[r];
                    let quad = ps.row(r).dot(&phi.row(r));
                    var[(r, j)] = 1.0 / fit.beta + quad.max(0.0);
                }
            }
            let mut m_row = vec![0.0; k];
            let mut s_row = vec![0.0; k];
            for r in 0..n {
                for j in 0..k {
                    m_row[j] = mean[(r, j)];
                    s_row[j] = var[(r, j)].sqrt();
                }
                out.push(&m_row, &s_row);
            }
            start = end;
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| invalid(format!("surrogate bundle: {e}")))
    }
}

impl Predictor for PCESurrogate {
    fn n_outputs(&self) -> usize {
        self.fits.len()
    }

    fn predict(&self, theta: &[f64]) -> Result<Prediction> {
        self.predict_all(theta)
    }

    fn predict_batch(&self, thetas: &SampleMatrix) -> Result<Predictions> {
        self.predict_many(thetas)
    }
}

/// Design matrix for physical sample rows.
pub fn design_matrix(space: &InputSpace, basis: &PCEBasis, design: &SampleMatrix) -> Result<DMatrix<f64>> {
    let std = match design.coordinates() {
        Coordinates::Physical => space.to_standard(design)?,
        Coordinates::Standard => design.clone(),
    };
    basis.design_matrix(&std)
}

fn loo_or_infinite(design: &DMatrix<f64>, y: &[f64], fit: &SparseFit) -> Result<f64> {
    match sparsebayes::loo_error(design, y, fit) {
        Ok(e) => Ok(e),
        Err(Error::DegenerateLeverage { .. }) | Err(Error::UndefinedDenominator(_)) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

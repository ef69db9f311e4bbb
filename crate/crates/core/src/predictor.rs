//! Common interface for anything that maps parameters to Gaussian predictions.

use crate::error::Result;
use crate::inputspace::SampleMatrix;

/// Gaussian prediction at one parameter point, one entry per output.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Predictions at many points, row-major (`rows x outputs`).
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    outputs: usize,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Predictions {
    pub fn with_capacity(outputs: usize, rows: usize) -> Self {
        Self { outputs, mean: Vec::with_capacity(rows * outputs), std: Vec::with_capacity(rows * outputs) }
    }

    /// Deterministic predictions: zero standard deviation.
    pub fn exact(outputs: usize, mean: Vec<f64>) -> Self {
        assert!(outputs > 0 && mean.len() % outputs == 0, "ragged prediction matrix");
        let std = vec![0.0; mean.len()];
        Self { outputs, mean, std }
    }

    pub fn push(&mut self, mean: &[f64], std: &[f64]) {
        debug_assert!(mean.len() == self.outputs && std.len() == self.outputs);
        self.mean.extend_from_slice(mean);
        self.std.extend_from_slice(std);
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn len(&self) -> usize {
        self.mean.len() / self.outputs.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn mean(&self, i: usize) -> &[f64] {
        &self.mean[i * self.outputs..(i + 1) * self.outputs]
    }

    pub fn std(&self, i: usize) -> &[f64] {
        &self.std[i * self.outputs..(i + 1) * self.outputs]
    }
}

pub trait Predictor {
    fn n_outputs(&self) -> usize;

    /// Prediction at one physical parameter point.
    fn predict(&self, theta: &[f64]) -> Result<Prediction>;

    /// Predictions at every row of `thetas` (physical coordinates).
    fn predict_batch(&self, thetas: &SampleMatrix) -> Result<Predictions> {
        let mut out = Predictions::with_capacity(self.n_outputs(), thetas.nrows());
        for row in thetas.rows() {
            let p = self.predict(row)?;
            out.push(&p.mean, &p.std);
        }
        Ok(out)
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn n_outputs(&self) -> usize {
        (**self).n_outputs()
    }

    fn predict(&self, theta: &[f64]) -> Result<Prediction> {
        (**self).predict(theta)
    }

    fn predict_batch(&self, thetas: &SampleMatrix) -> Result<Predictions> {
        (**self).predict_batch(thetas)
    }
}

//! wasm-bindgen bindings behind `www/index.html`. Everything returns flat
//! `Vec<f64>` so the page can read it as a `Float64Array`.

use bayes_pce::bayesval::{self, ObservationSet};
use bayes_pce::inputspace::{Coordinates, InputSpace, SampleMatrix};
use bayes_pce::polybasis::UnivariateBasis;
use bayes_pce::sparsebayes::FitOptions;
use bayes_pce::surrogate::PCESurrogate;
use nalgebra::DMatrix;
use wasm_bindgen::prelude::*;

fn msg(e: bayes_pce::Error) -> String {
    e.to_string()
}

fn js(e: String) -> JsValue {
    JsValue::from_str(&e)
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Sparse fit of `ys` at `xs` (in [-1, 1]) with a Legendre basis up to `degree`.
#[wasm_bindgen]
pub struct Fit1d {
    grid: Vec<f64>,
    mean: Vec<f64>,
    std: Vec<f64>,
    active: Vec<u32>,
    loo: f64,
    noise_std: f64,
}

#[wasm_bindgen]
impl Fit1d {
    pub fn grid(&self) -> Vec<f64> {
        self.grid.clone()
    }
    pub fn mean(&self) -> Vec<f64> {
        self.mean.clone()
    }
    pub fn std(&self) -> Vec<f64> {
        self.std.clone()
    }
    /// Degrees of the terms the fit kept.
    pub fn active(&self) -> Vec<u32> {
        self.active.clone()
    }
    pub fn loo(&self) -> f64 {
        self.loo
    }
    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }
}

#[wasm_bindgen]
pub fn fit_1d(xs: Vec<f64>, ys: Vec<f64>, degree: usize, points: usize) -> Result<Fit1d, JsValue> {
    fit_curve(xs, ys, degree, points).map_err(js)
}

#[wasm_bindgen]
pub fn tom_histogram(n_s: usize, draws: usize, bins: usize, seed: u64) -> Result<Vec<f64>, JsValue> {
    tom_bins(n_s, draws, bins, seed).map_err(js)
}

#[wasm_bindgen]
pub fn basis_curves(family: &str, degree: usize, points: usize) -> Result<Vec<f64>, JsValue> {
    curves(family, degree, points).map_err(js)
}

pub fn fit_curve(xs: Vec<f64>, ys: Vec<f64>, degree: usize, points: usize) -> Result<Fit1d, String> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err("need at least two (x, y) pairs".into());
    }
    let space = InputSpace::uniform_cube(1, -1.0, 1.0).map_err(msg)?;
    let design = SampleMatrix::from_row_major(xs.len(), 1, xs, Coordinates::Physical).map_err(msg)?;
    let y = DMatrix::from_column_slice(ys.len(), 1, &ys);
    let s = PCESurrogate::train(&space, degree, &design, &y, &FitOptions::default()).map_err(msg)?;
    let g = grid(-1.0, 1.0, points);
    let (mut mean, mut std) = (vec![], vec![]);
    for &x in &g {
        let p = s.predict_all(&[x]).map_err(msg)?;
        mean.push(p.mean[0]);
        std.push(p.std[0]);
    }
    let fit = &s.fits()[0];
    Ok(Fit1d {
        grid: g,
        mean,
        std,
        active: fit.active.iter().map(|&i| s.basis().indices().get(i)[0]).collect(),
        loo: s.loo_errors()[0],
        noise_std: fit.beta.powf(-0.5),
    })
}

/// TOM statistic for `n_s` unit-error observations: `[centre, density, chi2 pdf]`
/// per bin, flattened.
pub fn tom_bins(n_s: usize, draws: usize, bins: usize, seed: u64) -> Result<Vec<f64>, String> {
    let data = ObservationSet::new(vec![0.0; n_s], vec![1.0; n_s]).map_err(msg)?;
    let tom = bayesval::tom_logbme_distribution(&data, draws, seed).map_err(msg)?;
    let hist = bayesval::histogram(&tom.statistic, bins.max(1));
    let width = if hist.len() > 1 { hist[1].0 - hist[0].0 } else { 1.0 };
    let mut out = Vec::with_capacity(3 * hist.len());
    for (centre, count) in hist {
        out.extend([centre, count as f64 / (draws as f64 * width), tom.chi_square_pdf(centre)]);
    }
    Ok(out)
}

/// Orthonormal polynomials `psi_0..psi_degree` on a grid, flattened row by
/// row after the grid itself. `family` is `legendre`, `hermite`, or
/// `apc-exponential` (aPC from the raw moments of Exp(1)).
pub fn curves(family: &str, degree: usize, points: usize) -> Result<Vec<f64>, String> {
    let (basis, lo, hi) = match family {
        "legendre" => (UnivariateBasis::legendre(degree), -1.0, 1.0),
        "hermite" => (UnivariateBasis::hermite(degree), -3.0, 3.0),
        "apc-exponential" => {
            let moments: Vec<f64> = (0..=2 * degree).map(|k| (1..=k).map(|i| i as f64).product()).collect();
            (UnivariateBasis::from_moments(&moments, degree).map_err(msg)?, 0.0, 6.0)
        }
        other => return Err(format!("unknown family {other:?}")),
    };
    let g = grid(lo, hi, points);
    let mut out = g.clone();
    let mut row = vec![0.0; degree + 1];
    let mut rows = vec![vec![0.0; g.len()]; degree + 1];
    for (i, &u) in g.iter().enumerate() {
        basis.eval_into(u, &mut row);
        for j in 0..=degree {
            rows[j][i] = row[j];
        }
    }
    rows.into_iter().for_each(|r| out.extend(r));
    Ok(out)
}

//! Acceptance run. Prints one PASS/FAIL line per criterion and exits nonzero
//! if any criterion fails.
//!
//! `cargo test -p bayes-pce-cli --test acceptance -- 2 5` runs only criteria 2 and 5.
//! Criterion 1 dominates the runtime (about 40 minutes on one core).

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use bayes_pce::adapters::{Analytic10d, ExactPredictor};
use bayes_pce::bayesval::{self, JeffreysGrade, ObservationSet};
use bayes_pce::errormodel::{richardson_fit, ErrorBudget};
use bayes_pce::inputspace::{InputSpace, Marginal, SamplingMethod};
use bayes_pce::polybasis::{MultiIndexSet, PCEBasis, UnivariateBasis};
use bayes_pce::seqdesign::{run_sequential, SeqConfig, UtilityKind};
use bayes_pce::sparsebayes::{self, FitOptions, SparseFit};
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde_json::{json, Value};

struct Outcome {
    pass: bool,
    summary: String,
}

fn outcome(pass: bool, summary: impl Into<String>) -> Outcome {
    Outcome { pass, summary: summary.into() }
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn() -> Outcome); 8] = [
        (1, "10-D sequential design converges to the brute-force evidence", c1_benchmark),
        (2, "TOM statistic follows chi-square", c2_tom),
        (3, "analytic LOO and sparse recovery", c3_sparse),
        (4, "aPC coefficients and MC orthonormality", c4_basis),
        (5, "weights, Bayes factors, Jeffreys grades", c5_algebra),
        (6, "Richardson extrapolation", c6_richardson),
        (7, "CLI reruns are byte-identical", c7_determinism),
        (8, "compare workflow favours the generating model", c8_compare),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {id} ({name}): {} [{:.1}s]", o.summary, t.elapsed().as_secs_f64());
        failed += !o.pass as usize;
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- criterion 1

const TOL_NATS: f64 = 1.0;
const REPS: u64 = 10;

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn c1_benchmark() -> Outcome {
    let model = Analytic10d::default();
    let space = Analytic10d::prior();
    let data = model.observations(Analytic10d::DEFAULT_SIGMA).unwrap();
    let budget = ErrorBudget::from_observations(&data);

    let prior = space.sample(1_000_000, SamplingMethod::Random, 777).unwrap();
    let est = bayesval::bme_mc(&ExactPredictor(&model), &prior, &data, &budget).unwrap();
    let post = bayesval::rejection_posterior(&prior, &est.log_likelihoods, 778).unwrap();
    let ref_bme = est.log_bme;
    let ref_dkl = bayesval::dkl_post_prior(ref_bme, &post).unwrap();
    println!("  reference (1e6 model runs): log-BME {ref_bme:.3} (se {:.3}), DKL {ref_dkl:.3}", est.log_std_error);

    let mut pass = true;
    let mut parts = vec![];
    // first checkpoint (in runs) with both errors inside the tolerance
    let mut reached: Vec<Vec<usize>> = vec![];
    for utility in [UtilityKind::Bme, UtilityKind::Dkl, UtilityKind::Entropy] {
        let (mut d_bme, mut d_dkl, mut first) = (vec![], vec![], vec![]);
        for rep in 0..REPS {
            let cfg = SeqConfig {
                n_init: 50,
                max_runs: 150,
                degree: 4,
                n_candidates: 20,
                utility,
                seed: rep,
                evidence_samples: 20_000,
                evidence_every: 10,
                ..SeqConfig::default()
            };
            let t = Instant::now();
            let (_, trace) = run_sequential(&model, &space, &data, &budget, &cfg).map_err(|f| f.error).unwrap();
            let last = trace.records.last().unwrap();
            assert_eq!(last.runs, 150);
            let (b, d) = (last.log_bme.unwrap(), last.dkl.unwrap());
            d_bme.push((b - ref_bme).abs());
            d_dkl.push((d - ref_dkl).abs());
            let hit = trace
                .all_records()
                .filter_map(|r| Some((r.runs, r.log_bme?, r.dkl?)))
                .find(|&(_, b, d)| (b - ref_bme).abs() < TOL_NATS && (d - ref_dkl).abs() < TOL_NATS)
                .map_or(usize::MAX, |h| h.0);
            first.push(hit);
            println!(
                "  {:<7} rep {rep}: log-BME {b:8.3}  DKL {d:6.3}  within tolerance from {} runs  [{:.0}s]",
                utility.as_str(),
                if hit == usize::MAX { "never".to_string() } else { hit.to_string() },
                t.elapsed().as_secs_f64()
            );
        }
        let (mb, md) = (median(&mut d_bme), median(&mut d_dkl));
        let ok = mb < TOL_NATS && md < TOL_NATS;
        pass &= ok;
        parts.push(format!("{} median |dlogBME| {mb:.3} |dDKL| {md:.3}{}", utility.as_str(), if ok { "" } else { " (over)" }));
        reached.push(first);
    }
    for (k, name) in [(1, "dkl"), (2, "entropy")] {
        let wins = (0..REPS as usize).filter(|&r| reached[k][r] <= reached[0][r] && reached[k][r] != usize::MAX).count();
        let note = if wins >= 6 { "holds" } else { "violated (logged only)" };
        println!("  ordering: {name} within tolerance no later than bme in {wins}/{REPS} reps, {note}");
    }
    outcome(pass, format!("{}; tolerance {TOL_NATS} nats", parts.join("; ")))
}

// ---------------------------------------------------------------- criterion 2

/// Regularized lower incomplete gamma `P(k/2, x/2)` by the upward recurrence
/// from `P(1/2, .)` or `P(1, .)`.
fn chi2_cdf(k: usize, x: f64) -> f64 {
    let z = x / 2.0;
    let (mut a, mut p) = if k % 2 == 0 { (1.0, 1.0 - (-z).exp()) } else { (0.5, statrs::function::erf::erf(z.sqrt())) };
    while a < k as f64 / 2.0 {
        p -= (a * z.ln() - z - statrs::function::gamma::ln_gamma(a + 1.0)).exp();
        a += 1.0;
    }
    p
}

fn c2_tom() -> Outcome {
    let draws = 10_000;
    let crit = 1.628 / (draws as f64).sqrt();
    let mut pass = true;
    let mut parts = vec![];
    for (j, n_s) in [5usize, 9, 20].into_iter().enumerate() {
        let values: Vec<f64> = (0..n_s).map(|i| (i as f64 * 0.7).sin()).collect();
        let sigmas: Vec<f64> = (0..n_s).map(|i| 0.2 + 0.15 * i as f64).collect();
        let data = ObservationSet::new(values, sigmas).unwrap();
        let tom = bayesval::tom_logbme_distribution(&data, draws, 500 + j as u64).unwrap();
        let ks = bayesval::ks_distance(&tom.statistic, |x| chi2_cdf(n_s, x));
        let mean = tom.statistic.iter().sum::<f64>() / draws as f64;
        let band = 3.0 * (2.0 * n_s as f64 / draws as f64).sqrt();
        let ok = ks < crit && (mean - n_s as f64).abs() < band && tom.dof == n_s;
        pass &= ok;
        parts.push(format!("N_s={n_s} D={ks:.4} mean={mean:.3}"));
    }
    outcome(pass, format!("{}; KS 1% critical {crit:.4}, mean band 3 sqrt(2N_s/1e4)", parts.join(", ")))
}

// ---------------------------------------------------------------- criterion 3

fn lstsq(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    (x.transpose() * x).try_inverse().unwrap() * x.transpose() * y
}

fn brute_force_loo(x: &DMatrix<f64>, y: &[f64]) -> f64 {
    let n = x.nrows();
    let mean = y.iter().sum::<f64>() / n as f64;
    let denom: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let mut num = 0.0;
    for i in 0..n {
        let keep: Vec<usize> = (0..n).filter(|&r| r != i).collect();
        let c = lstsq(&x.select_rows(&keep), &DVector::from_iterator(n - 1, keep.iter().map(|&r| y[r])));
        num += (y[i] - (x.row(i) * &c)[(0, 0)]).powi(2);
    }
    num / denom
}

fn c3_sparse() -> Outcome {
    let mut rng = bayes_pce::rng::from_seed(2024);
    let mut worst = 0.0f64;
    for _ in 0..25 {
        let n = rng.random_range(12..=60);
        let p = rng.random_range(2..=10);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let fit = SparseFit::from_hyperparameters(&x, &y, &vec![0.0; p], 1.0, 1e12).unwrap();
        let analytic = sparsebayes::loo_error(&x, &y, &fit).unwrap();
        let brute = brute_force_loo(&x, &y);
        worst = worst.max((analytic - brute).abs() / brute);
    }

    let space = InputSpace::uniform_cube(10, -1.0, 1.0).unwrap();
    let basis = PCEBasis::for_space(&space, 2).unwrap();
    let x = space.sample(120, SamplingMethod::Lhs, 31).unwrap();
    let psi = basis.design_matrix(&space.to_standard(&x).unwrap()).unwrap();
    let truth = [(0usize, 1.2), (4, -0.7), (37, 0.5)];
    let mut noise = bayes_pce::rng::from_seed(32);
    let y: Vec<f64> = (0..psi.nrows())
        .map(|r| truth.iter().map(|&(i, c)| c * psi[(r, i)]).sum::<f64>() + 1e-2 * noise.sample::<f64, _>(StandardNormal))
        .collect();
    let fit = sparsebayes::fit(&psi, &y, &FitOptions::default()).unwrap();
    let mut coef_err = 0.0f64;
    for m in 0..psi.ncols() {
        let t = truth.iter().find(|t| t.0 == m).map_or(0.0, |t| t.1);
        coef_err = coef_err.max((fit.mean[m] - t).abs());
    }
    let pass = psi.ncols() == 66 && worst <= 1e-10 && fit.active.len() <= 6 && coef_err < 5e-2;
    outcome(
        pass,
        format!(
            "LOO worst relative gap {worst:.2e} over 25 instances (tol 1e-10); {} of 66 terms active (max 6), max coefficient error {coef_err:.2e} (tol 5e-2)",
            fit.active.len()
        ),
    )
}

// ---------------------------------------------------------------- criterion 4

fn legendre_table() -> Vec<Vec<f64>> {
    let raw: [&[f64]; 6] = [
        &[1.0],
        &[0.0, 1.0],
        &[-0.5, 0.0, 1.5],
        &[0.0, -1.5, 0.0, 2.5],
        &[0.375, 0.0, -3.75, 0.0, 4.375],
        &[0.0, 1.875, 0.0, -8.75, 0.0, 7.875],
    ];
    raw.iter().enumerate().map(|(j, c)| c.iter().map(|x| x * (2.0 * j as f64 + 1.0).sqrt()).collect()).collect()
}

fn hermite_table() -> Vec<Vec<f64>> {
    let raw: [&[f64]; 6] = [
        &[1.0],
        &[0.0, 1.0],
        &[-1.0, 0.0, 1.0],
        &[0.0, -3.0, 0.0, 1.0],
        &[3.0, 0.0, -6.0, 0.0, 1.0],
        &[0.0, 15.0, 0.0, -10.0, 0.0, 1.0],
    ];
    let fact = [1.0, 1.0, 2.0, 6.0, 24.0, 120.0f64];
    raw.iter().enumerate().map(|(j, c)| c.iter().map(|x| x / fact[j].sqrt()).collect()).collect()
}

fn max_gap(got: &[Vec<f64>], want: &[Vec<f64>]) -> f64 {
    got.iter()
        .zip(want)
        .flat_map(|(g, w)| {
            assert_eq!(g.len(), w.len());
            g.iter().zip(w).map(|(a, b)| (a - b).abs())
        })
        .fold(0.0, f64::max)
}

fn c4_basis() -> Outcome {
    let mut coef = 0.0f64;
    for p in 0..=5 {
        let uniform: Vec<f64> = (0..=2 * p).map(|k| if k % 2 == 1 { 0.0 } else { 1.0 / (k as f64 + 1.0) }).collect();
        let gauss: Vec<f64> =
            (0..=2 * p).map(|k| if k % 2 == 1 { 0.0 } else { (1..k).step_by(2).map(|i| i as f64).product() }).collect();
        let a = UnivariateBasis::from_moments(&uniform, p).unwrap().monomial_coefficients();
        let b = UnivariateBasis::from_moments(&gauss, p).unwrap().monomial_coefficients();
        coef = coef.max(max_gap(&a, &legendre_table()[..=p])).max(max_gap(&b, &hermite_table()[..=p]));
    }

    // uniform, gaussian, and an aPC basis from uniform moments on a uniform input
    let space = InputSpace::from_marginals(vec![
        Marginal::Uniform { lower: 0.0, upper: 4.0 },
        Marginal::Gaussian { mean: 1.0, std: 3.0 },
        Marginal::Uniform { lower: -2.0, upper: 2.0 },
    ])
    .unwrap();
    let moments: Vec<f64> = (0..=6).map(|k| if k % 2 == 1 { 0.0 } else { 1.0 / (k as f64 + 1.0) }).collect();
    let uni = vec![
        UnivariateBasis::legendre(3),
        UnivariateBasis::hermite(3),
        UnivariateBasis::from_moments(&moments, 3).unwrap(),
    ];
    let basis = PCEBasis::new(uni, MultiIndexSet::total_degree(3, 3).unwrap()).unwrap();
    let n = 100_000;
    let u = space.to_standard(&space.sample(n, SamplingMethod::Random, 4).unwrap()).unwrap();
    let psi = basis.design_matrix(&u).unwrap();
    let gram = psi.transpose() * &psi / n as f64;
    let mut gram_gap = 0.0f64;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            gram_gap = gram_gap.max((gram[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    outcome(
        coef < 1e-8 && gram_gap < 5e-2,
        format!(
            "aPC vs Legendre/Hermite max coefficient gap {coef:.2e} for p<=5 (tol 1e-8); {}-term MC Gram max deviation {gram_gap:.2e} at 1e5 draws (tol 5e-2)",
            basis.len()
        ),
    )
}

// ---------------------------------------------------------------- criterion 5

fn c5_algebra() -> Outcome {
    let w = bayesval::model_weights(&[0.3f64.ln(), 0.1f64.ln()], &[0.5, 0.5]).unwrap();
    let w_ok = (w[0] - 0.75).abs() < 1e-12 && (w[1] - 0.25).abs() < 1e-12;
    let pairs = [(-12.345, -3.21), (0.0, 1e-9), (-700.0, -1.5), (4.0, 4.0)];
    let anti = pairs.iter().all(|&(a, b)| {
        let (f, g) = (bayesval::bayes_factor(a, b).unwrap(), bayesval::bayes_factor(b, a).unwrap());
        f.log10_bf == -g.log10_bf
    });
    let want = [
        (2.0, JeffreysGrade::Anecdotal),
        (5.0, JeffreysGrade::Substantial),
        (50.0, JeffreysGrade::Strong),
        (200.0, JeffreysGrade::Decisive),
    ];
    let grades: Vec<JeffreysGrade> = want.iter().map(|&(bf, _)| bayesval::bayes_factor(f64::ln(bf), 0.0).unwrap().grade).collect();
    let g_ok = grades.iter().zip(&want).all(|(g, w)| *g == w.1);
    let names: Vec<&str> = grades.iter().map(|g| g.as_str()).collect();
    outcome(
        w_ok && anti && g_ok,
        format!("weights ({:.4}, {:.4}); antisymmetry exact: {anti}; grades at 2/5/50/200: {}", w[0], w[1], names.join("/")),
    )
}

// ---------------------------------------------------------------- criterion 6

fn c6_richardson() -> Outcome {
    let mut worst = 0.0f64;
    let studies: [&[f64]; 3] = [&[0.1, 0.05], &[0.4, 0.2, 0.1], &[0.3, 0.17, 0.08, 0.031]];
    for order in [1.0, 2.0] {
        for (k, h) in studies.iter().enumerate() {
            let (fbar, g) = (1.0 + k as f64 * 0.37, -2.5 + 1.3 * order);
            let f: Vec<f64> = h.iter().map(|x| fbar + g * x.powf(order)).collect();
            let fit = richardson_fit(h, &f, order).unwrap();
            worst = worst.max(((fit.extrapolated - fbar) / fbar).abs()).max(((fit.coefficient - g) / g).abs());
        }
    }
    let a = richardson_fit(&[0.1, 0.05], &[1.2, 1.1], 1.0).unwrap();
    let b = richardson_fit(&[0.2, 0.1], &[1.04, 1.01], 2.0).unwrap();
    worst = worst.max((a.extrapolated - 1.0).abs()).max((a.coefficient - 2.0).abs() / 2.0);
    worst = worst.max((b.extrapolated - 1.0).abs()).max((b.coefficient - 1.0).abs());

    let h = [0.2, 0.1, 0.05];
    let noise = [3e-5, -2e-5, 1.5e-5];
    let f: Vec<f64> = h.iter().zip(noise).map(|(h, e)| 3.0 + 5.0 * h + e).collect();
    let noisy = richardson_fit(&h, &f, 1.0).unwrap();
    let (df, dg) = ((noisy.extrapolated - 3.0).abs(), (noisy.coefficient - 5.0).abs());
    outcome(
        worst <= 1e-10 && df < 1e-3 && dg < 1e-2,
        format!("noise-free worst relative error {worst:.2e} (tol 1e-10); noisy 3-mesh |f-3| {df:.2e} (tol 1e-3), |g-5| {dg:.2e} (tol 1e-2)"),
    )
}

// ---------------------------------------------------------------- criteria 7, 8

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bayes-pce"))
}

fn space_json(dim: usize) -> Value {
    Value::Array(
        (1..=dim).map(|i| json!({"name": format!("p{i}"), "type": "uniform", "params": {"lower": -5.0, "upper": 5.0}})).collect(),
    )
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn run_config(dir: &Path, name: &str, cfg: &Value) -> Result<(), String> {
    let p = dir.join(format!("{name}.json"));
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    let o = bin().arg("run").arg(&p).output().unwrap();
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("{name}: exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)))
    }
}

fn c7_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let lin = json!({"name": "lin", "adapter": {"kind": "custom-analytic", "intercept": [1.0, 0.0], "coefficients": [[1.0, 2.0], [0.5, -1.0]]}});
    let obs = json!({"values": [1.5, 0.2], "sigma": 0.5});
    let validation = json!({"prior_samples": 4000, "perturbations": 5, "tom_draws": 300, "predictive_draws": 2});
    let modes = [
        ("train", json!({"mode": "train", "seed": 1, "space": space_json(2), "model": lin, "degree": 2,
            "training": {"n_samples": 15, "validation_samples": 40}})),
        ("seqdesign", json!({"mode": "seqdesign", "seed": 2, "space": space_json(2), "model": lin, "observations": obs, "degree": 2,
            "seqdesign": {"n_init": 6, "max_runs": 10, "n_candidates": 30, "mc_samples": 200, "evidence_samples": 500}})),
        ("validate", json!({"mode": "validate", "seed": 3, "space": space_json(2), "model": lin, "observations": obs,
            "validation": validation})),
        ("compare", json!({"mode": "compare", "seed": 4, "space": space_json(10),
            "models": [{"name": "analytic", "adapter": {"kind": "analytic-10d"}},
                       {"name": "drifted", "adapter": {"kind": "analytic-10d", "drift": 1.0}}],
            "observations": {"values": vec![2.0; 10], "sigma": 2.0}, "validation": validation})),
        ("tom", json!({"mode": "tom", "seed": 5, "observations": obs, "validation": {"tom_draws": 1000}})),
    ];
    let mut files = 0;
    let mut bad = vec![];
    for (name, mut cfg) in modes {
        let out = d.join(name);
        cfg["output_dir"] = out.to_string_lossy().into_owned().into();
        let first = run_config(d, name, &cfg).map(|_| snapshot(&out));
        let _ = fs::remove_dir_all(&out);
        let second = run_config(d, name, &cfg).map(|_| snapshot(&out));
        match (first, second) {
            (Ok(a), Ok(b)) if a == b && !a.is_empty() => files += a.len(),
            (Ok(_), Ok(_)) => bad.push(format!("{name}: artifacts differ")),
            (Err(e), _) | (_, Err(e)) => bad.push(e),
        }
    }
    let pass = bad.is_empty();
    let summary = if pass { format!("train/seqdesign/validate/compare/tom, {files} artifacts identical across reruns") } else { bad.join("; ") };
    outcome(pass, summary)
}

fn c8_compare() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = json!({
        "mode": "compare", "seed": 7, "output_dir": out,
        "space": space_json(10),
        "models": [{"name": "analytic", "adapter": {"kind": "analytic-10d"}},
                   {"name": "drifted", "adapter": {"kind": "analytic-10d", "drift": 2.0}}],
        "observations": {"values": vec![2.0; 10], "sigma": 2.0},
        "validation": {"prior_samples": 100_000, "perturbations": 20, "tom_draws": 1000}
    });
    if let Err(e) = run_config(dir.path(), "compare", &cfg) {
        return outcome(false, e);
    }
    let doc: Value = serde_json::from_str(&fs::read_to_string(out.join("validation_report.json")).unwrap()).unwrap();
    let w: Vec<f64> = doc["report"]["weights"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let logs: Vec<f64> =
        doc["report"]["models"].as_array().unwrap().iter().map(|m| m["log_bme"].as_f64().unwrap()).collect();
    outcome(
        w[0] > 0.9,
        format!(
            "analytic vs drift 2.0 at 1e5 prior samples: log-BME {:.3} vs {:.3}, weight {:.4} (threshold 0.9)",
            logs[0], logs[1], w[0]
        ),
    )
}

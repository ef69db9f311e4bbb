use bayes_pce::inputspace::{Coordinates, SampleMatrix};
use bayes_pce::adapters::*;

#[test]
fn benchmark_examples() {
    let m = Analytic10d::default();
    assert!(m.eval_point(&[0.0; 10]).unwrap().iter().all(|&y| y == 2.0));
    let mut th = [0.0; 10];
    th[0] = 1.0;
    assert!((m.eval_point(&th).unwrap()[1] - 0.1).abs() < 1e-14);
    let mut th = [0.0; 10];
    th[1] = 1.0;
    assert!(m.eval_point(&th).unwrap().iter().all(|&y| (y - 1.5).abs() < 1e-14));
    assert!(m.eval_point(&[0.0; 9]).is_err());
    let obs = m.observations(2.0).unwrap();
    assert_eq!(obs.values(), &[2.0; 10]);
    assert_eq!(obs.sigmas(), &[2.0; 10]);
}

#[test]
fn benchmark_batch_matches_points() {
    let m = Analytic10d::default();
    let th = Analytic10d::prior().sample(7, bayes_pce::inputspace::SamplingMethod::Random, 1).unwrap();
    let y = m.evaluate(&th).unwrap();
    for (r, row) in th.rows().enumerate() {
        let p = m.eval_point(row).unwrap();
        assert_eq!(y.row(r).iter().copied().collect::<Vec<_>>(), p);
    }
    let bad = SampleMatrix::from_rows(&[vec![0.0; 3]], Coordinates::Physical).unwrap();
    assert!(m.evaluate(&bad).is_err());
}

#[test]
fn affine_model() {
    let m = AffineModel::new(vec![1.0, 0.0], vec![vec![2.0, 0.0], vec![0.0, -1.0]]).unwrap();
    let th = SampleMatrix::from_rows(&[vec![1.0, 2.0]], Coordinates::Physical).unwrap();
    let y = m.evaluate(&th).unwrap();
    assert_eq!((y[(0, 0)], y[(0, 1)]), (3.0, -2.0));
    assert!(AffineModel::new(vec![1.0], vec![vec![1.0], vec![2.0]]).is_err());
}

#[test]
fn adapter_config_parsing() {
    let s: AdapterSpec = serde_json::from_str(r#"{"kind":"analytic-10d"}"#).unwrap();
    assert_eq!(s, AdapterSpec::Analytic10d { t_grid: None, drift: 0.0 });
    assert!(serde_json::from_str::<AdapterSpec>(r#"{"kind":"analytic-10d","bogus":1}"#).is_err());
    let e: AdapterSpec =
        serde_json::from_str(r#"{"kind":"external","command":["sh","run.sh"],"outputs":3}"#).unwrap();
    assert!(matches!(e, AdapterSpec::External { outputs: 3, .. }));
    assert!(AdapterSpec::External { command: vec![], outputs: 1, working_dir: None, cache_dir: None }
        .build(None)
        .is_err());
}


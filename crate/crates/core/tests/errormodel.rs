use bayes_pce::Error;
use bayes_pce::errormodel::*;

#[test]
fn variances_add() {
    let b = ErrorBudget::new(vec![3.0], vec![0.0], true).unwrap();
    assert_eq!(assemble_covariance(&b, Some(&[4.0])).unwrap(), vec![25.0]);
    let b = ErrorBudget::new(vec![3.0, 1.0], vec![1.0, 2.0], true).unwrap();
    assert_eq!(assemble_covariance(&b, None).unwrap(), vec![10.0, 5.0]);
    let off = ErrorBudget::new(vec![3.0], vec![], false).unwrap();
    assert_eq!(off.assemble(Some(&[4.0])).unwrap(), vec![9.0]);
}

#[test]
fn zero_row_is_singular() {
    let b = ErrorBudget::new(vec![1.0, 0.0], vec![], true).unwrap();
    assert_eq!(assemble_covariance(&b, None), Err(Error::SingularCovariance(1)));
    assert!(assemble_covariance(&b, Some(&[0.0, 0.5])).is_ok());
}

#[test]
fn budget_validation() {
    assert!(ErrorBudget::new(vec![-1.0], vec![], true).is_err());
    assert!(ErrorBudget::new(vec![1.0], vec![1.0, 2.0], true).is_err());
    let b = ErrorBudget::new(vec![1.0, 2.0], vec![], true).unwrap();
    assert!(b.assemble(Some(&[1.0])).is_err());
}

#[test]
fn permuting_outputs_permutes_covariance() {
    let b = ErrorBudget::new(vec![1.0, 2.0, 3.0], vec![0.5, 0.0, 0.1], true).unwrap();
    let s = [0.3, 0.2, 0.1];
    let full = b.assemble(Some(&s)).unwrap();
    let perm = [2, 0, 1];
    let pb = ErrorBudget::new(
        perm.iter().map(|&i| b.measurement_std[i]).collect(),
        perm.iter().map(|&i| b.discretization_std[i]).collect(),
        true,
    )
    .unwrap();
    let ps: Vec<f64> = perm.iter().map(|&i| s[i]).collect();
    let got = pb.assemble(Some(&ps)).unwrap();
    for (j, &i) in perm.iter().enumerate() {
        assert_eq!(got[j], full[i]);
    }
}

#[test]
fn richardson_exact_cases() {
    let r = richardson_fit(&[0.1, 0.05], &[1.2, 1.1], 1.0).unwrap();
    assert!((r.extrapolated - 1.0).abs() < 1e-12 && (r.coefficient - 2.0).abs() < 1e-12);
    let r = richardson_fit(&[0.2, 0.1], &[1.04, 1.01], 2.0).unwrap();
    assert!((r.extrapolated - 1.0).abs() < 1e-12 && (r.coefficient - 1.0).abs() < 1e-12);
    assert!((r.errors[0] - 0.04).abs() < 1e-14);
    assert!(r.errors[1] < r.errors[0]);
}

#[test]
fn richardson_guards() {
    assert!(matches!(richardson_fit(&[0.1, 0.1], &[1.0, 2.0], 1.0), Err(Error::RankDeficient(_))));
    assert!(richardson_fit(&[0.1], &[1.0], 1.0).is_err());
    assert!(richardson_fit(&[0.1, 0.2], &[1.0, 2.0], 0.5).is_err());
}

#[test]
fn mesh_study_csv() {
    let (h, f) = read_mesh_study("h,f\n0.1,1.2\n0.05, 1.1\n".as_bytes()).unwrap();
    assert_eq!(h, vec![0.1, 0.05]);
    assert_eq!(f, vec![1.2, 1.1]);
    assert!(read_mesh_study("h,g\n0.1,1\n".as_bytes()).is_err());
    assert!(read_mesh_study("h,f\n0.1,x\n".as_bytes()).is_err());
}

mod props {
    use bayes_pce::errormodel::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn noise_free_recovery(
            exact in -100.0f64..100.0,
            g in -50.0f64..50.0,
            order in prop::sample::select(vec![1.0, 2.0]),
            base in 0.01f64..1.0,
            meshes in 2usize..6,
        ) {
            let h: Vec<f64> = (0..meshes).map(|k| base / 2f64.powi(k as i32)).collect();
            let f: Vec<f64> = h.iter().map(|hk| exact + g * hk.powf(order)).collect();
            let r = richardson_fit(&h, &f, order).unwrap();
            prop_assert!((r.extrapolated - exact).abs() <= 1e-10 * exact.abs().max(1.0));
            prop_assert!((r.coefficient - g).abs() <= 1e-10 * g.abs().max(1.0));
            for w in r.errors.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
        }
    }
}

use nalgebra::DVector;

use piflow::problems::{
    build_linf_lp, default_poles, fit_index, simulate_tf, SysIdConfig, SysIdDataset, TransferFunction,
};
use piflow::{Error, Problem};

#[test]
fn reference_plant_is_bibo_stable() {
    let tf = TransferFunction::reference_plant();
    let poles = tf.poles();
    assert_eq!(poles.len(), 3);
    assert!(poles.iter().all(|z| z.norm() < 1.0), "{poles:?}");
    assert!(tf.is_stable());
    let y = simulate_tf(&tf, &vec![1.0; 2000]).unwrap();
    let gain: f64 = tf.numerator().iter().sum::<f64>() / tf.denominator().iter().sum::<f64>();
    assert!(y.iter().all(|v| v.is_finite() && v.abs() <= 100.0));
    assert!((y[1999] - gain).abs() <= 1e-9, "{} vs dc gain {gain}", y[1999]);
}

#[test]
fn unstable_denominator_is_flagged() {
    assert!(!TransferFunction::new(vec![1.0], vec![1.0, -1.1]).unwrap().is_stable());
}

#[test]
fn dataset_csv_round_trips() {
    let cfg = SysIdConfig {
        n_id: 30,
        n_val: 10,
        ..SysIdConfig::default()
    };
    let ds = SysIdDataset::generate(&cfg).unwrap();
    let mut buf = Vec::new();
    ds.write_csv(&mut buf).unwrap();
    let back = SysIdDataset::read_csv(buf.as_slice(), cfg.poles.clone(), cfg.n_id).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn datasets_are_seeded() {
    let cfg = SysIdConfig::default();
    assert_eq!(SysIdDataset::generate(&cfg).unwrap(), SysIdDataset::generate(&cfg).unwrap());
    let other = SysIdDataset::generate(&SysIdConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(other.u, SysIdDataset::generate(&SysIdConfig::default()).unwrap().u);
}

#[test]
fn fit_index_examples() {
    let y = [1.0, 2.0, 3.0];
    assert_eq!(fit_index(&y, &y).unwrap(), 100.0);
    assert_eq!(fit_index(&y, &[2.0, 2.0, 2.0]).unwrap(), 0.0);
    assert!(fit_index(&y, &[3.0, 2.0, 1.0]).unwrap() < 0.0);
    assert!(matches!(fit_index(&[1.0, 1.0], &[1.0, 1.0]), Err(Error::DegenerateData(_))));
}

#[test]
fn split_must_leave_both_parts() {
    let u = vec![0.1, 0.5, 0.9];
    for split in [0, 3] {
        let err = SysIdDataset::from_parts(u.clone(), u.clone(), u.clone(), default_poles(), split);
        assert!(matches!(err, Err(Error::InvalidParameter { .. })), "split {split}");
    }
}

/// Solves `min c^T x` subject to `C x <= d` with every variable in
/// `[lo, hi]`.
fn reference_lp(problem: &Problem, lo: f64, hi: f64) -> Vec<f64> {
    use microlp::{ComparisonOp, OptimizationDirection};
    let cost = problem.linear_cost().unwrap();
    let cs = problem.constraints();
    let mut lp = microlp::Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = cost.iter().map(|&c| lp.add_var(c, (lo, hi))).collect();
    for j in 0..cs.m() {
        let row: Vec<_> = vars.iter().enumerate().map(|(i, &v)| (v, cs.matrix()[(j, i)])).collect();
        lp.add_constraint(row.as_slice(), ComparisonOp::Le, cs.rhs()[j]);
    }
    let sol = lp.solve().unwrap().into_solution().unwrap();
    vars.iter().map(|&v| sol.var_value(v)).collect()
}

#[test]
fn noise_free_data_is_fitted_almost_exactly() {
    let ds = SysIdDataset::generate(&SysIdConfig {
        noise_variance: 0.0,
        ..SysIdConfig::default()
    })
    .unwrap();
    // the filter-bank columns are nearly collinear; the LP is posed over
    // phi = R theta with Z = QR so the simplex sees orthonormal columns
    let qr = ds.identification_regressors().qr();
    let lp = build_linf_lp(&qr.q(), ds.identification_output(), 0.0).unwrap();
    let x = reference_lp(&lp, -1e3, 1e3);
    let p = default_poles().len();
    let delta = x[p];
    let theta = qr.r().solve_upper_triangular(&DVector::from_column_slice(&x[..p])).unwrap();
    let r = (ds.identification_regressors() * &theta - DVector::from_column_slice(ds.identification_output())).amax();
    assert!((r - delta).abs() <= 1e-8, "delta {delta:e}, max residual {r:e}");
    let y_hat = ds.validation_regressors() * &theta;
    let fit = fit_index(ds.validation_output(), y_hat.as_slice()).unwrap();
    // the plant is not in the span of the fixed poles, so the optimum stays positive
    assert!(delta > 0.0, "{delta}");
    assert!(fit > 99.0, "{fit}");
}

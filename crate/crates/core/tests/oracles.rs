use nalgebra::{dmatrix, dvector, DMatrix, DVector};

use piflow::oracle::{active_set_qp, active_set_qp_with, lp_vertex, polish_qp, EnumOptions};
use piflow::problems::{build_linf_lp, default_poles, filter_bank, random_qp};
use piflow::{kkt_residual, run, ConstraintSet, Error, FlowKind, GainConfig, Problem, RunOptions};

fn tight_gains() -> GainConfig {
    GainConfig {
        t_final: 20_000.0,
        rel_tol: 1e-8,
        abs_tol: 1e-10,
        kkt_stop_tol: Some(1e-9),
        ..GainConfig::default()
    }
}

#[test]
fn pi_endpoints_agree_with_enumeration() {
    for s in 0..50u64 {
        let n = 2 + (s as usize % 5);
        let m = 1 + (s as usize % 4).min(n - 1);
        let p = random_qp(n, m, 7000 + s).unwrap();
        let star = active_set_qp(&p, 20).unwrap();
        let r = run(&p, &tight_gains(), FlowKind::Pi, &DVector::zeros(n), &DVector::zeros(m), &RunOptions::default())
            .unwrap();
        let dx = (&r.final_state.x - &star.x_star).norm();
        let dl = (&r.final_state.lambda - &star.lambda_star).norm();
        assert!(dx <= 1e-4 && dl <= 1e-3, "seed {s}: dx {dx:e}, dl {dl:e}");
    }
}

#[test]
fn enumeration_order_does_not_matter() {
    for s in 0..20u64 {
        let p = random_qp(6, 1 + (s as usize % 8), 8000 + s).unwrap();
        let reference = match active_set_qp(&p, 20) {
            Ok(sol) => sol,
            Err(Error::Infeasible(_)) => continue,
            Err(e) => panic!("seed {s}: {e}"),
        };
        for order_seed in 0..3 {
            let shuffled = active_set_qp_with(
                &p,
                &EnumOptions {
                    order_seed: Some(order_seed),
                    ..EnumOptions::default()
                },
            )
            .unwrap();
            assert_eq!(shuffled.active_set, reference.active_set);
            assert_eq!(shuffled.x_star, reference.x_star);
        }
    }
}

#[test]
fn polished_reference_on_full_size_problem() {
    for seed in 0..3 {
        let p = random_qp(50, 45, seed).unwrap();
        let r = run(&p, &GainConfig::default(), FlowKind::Pi, &DVector::zeros(50), &DVector::zeros(45), &RunOptions::default())
            .unwrap();
        let sol = polish_qp(&p, &r.final_state.x, &r.final_state.lambda).unwrap();
        let k = kkt_residual(&p, &sol.x_star, &sol.lambda_star).unwrap();
        assert!(k.total <= 1e-9, "seed {seed}: {}", k.total);
    }
}

#[test]
fn scalar_boundary_optimum() {
    let p = Problem::quadratic(
        piflow::QuadraticForm::new(dmatrix![3.0], dvector![0.0]).unwrap(),
        ConstraintSet::new(dmatrix![1.0], dvector![0.0]).unwrap(),
    )
    .unwrap();
    let sol = active_set_qp(&p, 20).unwrap();
    assert_eq!(sol.x_star[0], 0.0);
    assert_eq!(sol.lambda_star[0], 0.0);
}

fn lp(c: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>) -> Problem {
    Problem::linear(c, ConstraintSet::new(a, b).unwrap()).unwrap()
}

#[test]
fn one_sample_linf_problem() {
    // r - delta <= 0 and -r - delta <= 0 with r = 2
    let sol = lp_vertex(&lp(dvector![1.0], dmatrix![-1.0; -1.0], dvector![-2.0, 2.0])).unwrap();
    assert_eq!(sol.x_star[0], 2.0);
    assert_eq!(sol.objective, 2.0);
}

#[test]
fn nonnegative_variable() {
    let sol = lp_vertex(&lp(dvector![1.0], dmatrix![-1.0], dvector![0.0])).unwrap();
    assert_eq!(sol.x_star[0], 0.0);
}

#[test]
fn unbounded_and_infeasible_are_reported() {
    assert!(matches!(lp_vertex(&lp(dvector![1.0], dmatrix![1.0], dvector![1.0])), Err(Error::Unbounded)));
    assert!(matches!(
        lp_vertex(&lp(dvector![1.0], dmatrix![1.0; -1.0], dvector![-1.0, -1.0])),
        Err(Error::Infeasible(_))
    ));
}

#[test]
fn linf_optimum_equals_largest_residual() {
    let u: Vec<f64> = (0..8).map(|k| ((k * 7 + 3) % 11) as f64 / 10.0).collect();
    let y: Vec<f64> = u.iter().enumerate().map(|(k, v)| v * 0.8 + (k as f64 * 0.9).sin() * 0.3).collect();
    let poles = [default_poles()[10], default_poles()[30]];
    let z = filter_bank(&u, &poles).unwrap();
    let sol = lp_vertex(&build_linf_lp(&z, &y, 0.0).unwrap()).unwrap();
    let theta = sol.x_star.rows(0, 2).into_owned();
    let resid = (&z * theta - DVector::from_vec(y)).amax();
    assert!((sol.x_star[2] - resid).abs() <= 1e-12, "{} vs {resid}", sol.x_star[2]);
    assert!(sol.x_star[2] > 0.0);
}

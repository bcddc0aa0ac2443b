use piflow::bench::{qp_bench, BenchSummary, QpBenchConfig};
use piflow::{FlowKind, GainConfig};

fn assert_violations_below(cfg: &QpBenchConfig, tol: f64) {
    let out = qp_bench(cfg).unwrap();
    assert!(out.skipped.is_empty(), "{:?}", out.skipped);
    for r in &out.summary.records {
        assert!(r.final_violation <= tol, "seed {} {}: violation {:e}", r.seed, r.flow, r.final_violation);
    }
}

/// Both flows at the default horizon of 30 leave violations up to about
/// 1e-1 on 50x45 problems; the residual is still decaying there.
#[test]
#[ignore = "not reached at t_final = 30; see the converged companion below"]
fn default_horizon_reaches_small_violation() {
    let cfg = QpBenchConfig {
        seeds: (0..20).collect(),
        ..QpBenchConfig::default()
    };
    assert_violations_below(&cfg, 1e-4);
}

#[test]
fn longer_horizon_reaches_small_violation() {
    let cfg = QpBenchConfig {
        seeds: (0..5).collect(),
        gains: GainConfig {
            t_final: 300.0,
            rel_tol: 1e-6,
            ..GainConfig::default()
        },
        ..QpBenchConfig::default()
    };
    assert_violations_below(&cfg, 1e-4);
}

#[test]
fn small_bench_has_one_record_per_flow_and_seed() {
    let cfg = QpBenchConfig {
        n: 4,
        m: 3,
        seeds: vec![3],
        ..QpBenchConfig::default()
    };
    let out = qp_bench(&cfg).unwrap();
    assert_eq!(out.runs.len(), 2);
    assert_eq!(out.summary.records.len(), 2);
    assert_eq!(out.summary.records[0].flow, FlowKind::Pdgd);
    assert_eq!(out.summary.records[1].flow, FlowKind::Pi);
    for r in &out.runs {
        let last = r.trace.last().unwrap();
        assert!(last.dist_to_opt.is_some());
        assert!(r.trace.samples.iter().all(|s| s.x.is_none()));
    }
}

#[test]
fn aggregates_recompute_from_records() {
    let cfg = QpBenchConfig {
        n: 6,
        m: 4,
        seeds: (0..6).collect(),
        ..QpBenchConfig::default()
    };
    let out = qp_bench(&cfg).unwrap();
    let again = BenchSummary::aggregate(&out.summary.records);
    for (a, b) in out.summary.aggregates.iter().zip(&again) {
        assert_eq!(a.flow, b.flow);
        assert!((a.n_mean - b.n_mean).abs() <= 1e-12 * a.n_mean.max(1.0));
        assert!((a.n_std - b.n_std).abs() <= 1e-12 * a.n_std.max(1.0));
        assert_eq!(a.n_worst, b.n_worst);
    }
    let pdgd = out.summary.stats(FlowKind::Pdgd).unwrap();
    let steps: Vec<f64> = out
        .summary
        .records
        .iter()
        .filter(|r| r.flow == FlowKind::Pdgd)
        .map(|r| r.accepted_steps as f64)
        .collect();
    let mean = steps.iter().sum::<f64>() / steps.len() as f64;
    assert!((pdgd.n_mean - mean).abs() <= 1e-12 * mean);
    assert_eq!(pdgd.n_worst, steps.iter().cloned().fold(0.0, f64::max));
}

#[test]
fn benches_are_deterministic() {
    let cfg = QpBenchConfig {
        n: 5,
        m: 3,
        seeds: vec![1, 2],
        ..QpBenchConfig::default()
    };
    let a = qp_bench(&cfg).unwrap();
    let b = qp_bench(&cfg).unwrap();
    for (x, y) in a.runs.iter().zip(&b.runs) {
        assert_eq!(x.trace.samples, y.trace.samples);
    }
    for (x, y) in a.summary.records.iter().zip(&b.summary.records) {
        assert_eq!((x.accepted_steps, x.final_kkt), (y.accepted_steps, y.final_kkt));
    }
}

use kernel_hjb::bench::{self, convergence_sweep, rollout, run_benchmark, BenchmarkSpec};
use kernel_hjb::systems;

fn small(system: &str, n: usize) -> BenchmarkSpec {
    let mut spec = BenchmarkSpec::defaults(system).unwrap();
    spec.data.n = n;
    spec
}

#[test]
fn s1_reference_benchmark() {
    let spec = BenchmarkSpec::defaults("s1").unwrap();
    let r = run_benchmark(&spec, 10, 7).unwrap();
    assert_eq!(r.per_rep_rmse.len(), 10);
    assert!(r.rmse_std >= 0.0);
    assert!(r.rmse_mean <= 5e-2, "{}", r.rmse_mean);
}

#[test]
fn s4_reference_benchmark() {
    let spec = BenchmarkSpec::defaults("s4").unwrap();
    let r = run_benchmark(&spec, 10, 7).unwrap();
    assert!(r.rmse_mean <= 5e-2, "{}", r.rmse_mean);
}

#[test]
fn reports_are_reproducible() {
    let spec = small("s1", 150);
    let a = run_benchmark(&spec, 3, 21).unwrap();
    let b = run_benchmark(&spec, 3, 21).unwrap();
    assert!(a.same_results(&b));
    let c = run_benchmark(&spec, 3, 22).unwrap();
    assert!(!a.same_results(&c));
}

#[test]
fn single_rep_has_zero_spread() {
    let r = run_benchmark(&small("s4", 100), 1, 3).unwrap();
    assert_eq!(r.rmse_std, 0.0);
}

#[test]
fn zero_reps_is_a_usage_error() {
    assert!(run_benchmark(&small("s1", 50), 0, 1).unwrap_err().is_usage());
}

#[test]
fn sweep_with_one_size_gives_one_report() {
    let reports = convergence_sweep(&small("s1", 100), &[120], 1, 5).unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0].n, 120);
    assert_eq!(reports[0].rmse_std, 0.0);
}

#[test]
fn vdp_policy_recovers_the_feedback_law() {
    let spec = BenchmarkSpec::defaults("vdp").unwrap();
    let trained = bench::train(&spec, bench::rep_seed(7, 0)).unwrap();
    let rmse = trained.rmse(spec.test_per_axis).unwrap();
    assert!(rmse <= 0.15, "{rmse}");
    let u = trained.interpolator().unwrap().stationary(&[1.0, 2.0]).unwrap()[0];
    assert!((u + 2.0).abs() <= 0.15, "{u}");
}

#[test]
fn vdp_open_loop_reaches_the_limit_cycle() {
    let sys = systems::registry("vdp").unwrap();
    let path = rollout(&sys, |_| Ok(vec![0.0]), &[0.1, 0.1], 20.0, 1e-2, 0.0, 10, 0).unwrap();
    let last = path.last().unwrap();
    let norm = last.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm >= 1.0, "final norm {norm:e}");
}

#[test]
fn vdp_known_law_stabilizes_the_origin() {
    let sys = systems::registry("vdp").unwrap();
    let law = sys.ground_truth_policy.clone().unwrap();
    let path = rollout(&sys, |x| Ok(law(x)), &[0.1, 0.1], 20.0, 1e-2, 0.0, 10, 0).unwrap();
    let last = path.last().unwrap();
    assert!(last.iter().map(|v| v * v).sum::<f64>().sqrt() <= 0.1);
}

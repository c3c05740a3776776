//! Runs the reference benchmark of one system and prints the RMSE summary.
//!
//! ```text
//! cargo run --release --example benchmark -- s1 3 7
//! ```

use kernel_hjb::bench::{run_benchmark, BenchmarkSpec};

fn main() -> kernel_hjb::Result<()> {
    let mut args = std::env::args().skip(1);
    let system = args.next().unwrap_or_else(|| "s1".into());
    let reps = args.next().and_then(|r| r.parse().ok()).unwrap_or(3);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);
    let spec = BenchmarkSpec::defaults(&system)?;
    let report = run_benchmark(&spec, reps, seed)?;
    println!(
        "{}: rmse {:.4e} ± {:.2e} over {} reps ({} flagged), {:.1} s",
        report.system,
        report.rmse_mean,
        report.rmse_std,
        report.reps,
        report.n_flagged(),
        report.wall_time_s
    );
    for (r, v) in report.per_rep_rmse.iter().enumerate() {
        println!("  rep {r}: {v:.4e}  converged_at {:?}", report.converged_at[r]);
    }
    Ok(())
}

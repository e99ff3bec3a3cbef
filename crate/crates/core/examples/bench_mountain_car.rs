//! Paired-seed comparison on MountainCar at reduced scale, with CSV artifacts.
//!
//! cargo run --release --example bench_mountain_car [out-dir]

use rsolab::envs::EnvKind;
use rsolab::error::Result;
use rsolab::harness::{moving_window_average, run_experiment, ExperimentConfig};

fn main() -> Result<()> {
    let mut cfg = ExperimentConfig::reduced(EnvKind::mountain_car());
    cfg.out = std::env::args().nth(1).map(Into::into);
    let exp = run_experiment(&cfg)?;
    for row in exp.summary() {
        println!(
            "{:<18} test {:7.2} ± {:5.2}   train tail {:7.2}   gap {:.4}",
            row.operator, row.test_mean, row.test_std, row.train_tail_mean, row.final_gap_mean
        );
    }
    let curve = moving_window_average(&exp.runs[0].scores(), cfg.window)?;
    println!(
        "bellman curve: {:.1} at episode {} -> {:.1} at episode {}",
        curve.mean[0],
        curve.episodes[0],
        curve.mean[curve.mean.len() - 1],
        cfg.episodes
    );
    if let Some(dir) = &cfg.out {
        println!("artifacts in {}", dir.display());
    }
    Ok(())
}

//! Which `beta` distribution works best: U[0,2), U[0,1) or constant 1.
//!
//! cargo run --release --example ablation [config.toml]

use rsolab::envs::EnvKind;
use rsolab::error::Result;
use rsolab::harness::{ablation_beta, ExperimentConfig};

fn main() -> Result<()> {
    let mut cfg = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::load(path.as_ref())?,
        None => ExperimentConfig::reduced(EnvKind::mountain_car()),
    };
    if cfg
        .operators
        .iter()
        .any(|o| !matches!(o, rsolab::operators::OperatorKind::Rso(_)))
    {
        cfg.operators.clear();
    }
    let ab = ablation_beta(&cfg)?;
    for r in &ab.ranking {
        println!("{:<11} #{} {:<18} {:.4}", r.metric, r.rank, r.operator, r.value);
    }
    Ok(())
}

//! Monte Carlo variance of one RSO backup against `Var[beta] * gap^2`.
//!
//! cargo run --release --example variance_identity

use rsolab::error::Result;
use rsolab::mdp::{exact_q_star, TabularMdp};
use rsolab::order::one_step_variance_identity;

fn main() -> Result<()> {
    let mdp = TabularMdp::two_state_chain();
    let q = exact_q_star(&mdp, 1e-13, 1_000_000)?;
    for spec in ["uniform:0:2", "uniform:0:1", "uniform:0.5:1.5", "constant:1"] {
        let (mc, analytic) = one_step_variance_identity(&mdp, &q, (0, 1), &spec.parse()?, 100_000, 1)?;
        println!("beta {spec:<16} monte carlo {mc:.5}  closed form {analytic:.5}");
    }
    Ok(())
}

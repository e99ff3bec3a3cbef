//! Exact Q* for the two-state chain and for a random MDP, plus a file round trip.
//!
//! cargo run --example solve_mdp

use rsolab::error::Result;
use rsolab::mdp::{exact_q_star, random_mdp, TabularMdp};

fn main() -> Result<()> {
    let chain = TabularMdp::two_state_chain();
    let q = exact_q_star(&chain, 1e-12, 100_000)?;
    println!("two-state chain, gamma {}", chain.gamma());
    for x in 0..q.n_states() {
        let best = q.greedy_value(x)?;
        println!("  x={x} Q={:?} V*={} a*={}", q.row(x), best.value, best.action);
    }

    let mdp = random_mdp(17, 6, 3, 0.9)?;
    let q = exact_q_star(&mdp, 1e-12, 100_000)?;
    println!(
        "random MDP (6 states, 3 actions), Bellman residual {:.1e}",
        mdp.bellman_residual(&q)
    );
    println!("  V* = {:?}", q.state_values());

    let dir = std::env::temp_dir().join("rsolab-solve-example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let path = dir.join("mdp.toml");
    mdp.save(&path)?;
    let back = TabularMdp::load(&path)?;
    assert_eq!(back, mdp);
    println!("saved and reloaded {}", path.display());
    Ok(())
}

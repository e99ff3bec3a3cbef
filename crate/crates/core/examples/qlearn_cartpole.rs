//! Tabular Q-learning on CartPole with Bellman and RSO targets.
//!
//! cargo run --release --example qlearn_cartpole [episodes]

use rsolab::discretize::default_grid;
use rsolab::envs::EnvKind;
use rsolab::error::Result;
use rsolab::qlearn::{train, Schedules};

fn main() -> Result<()> {
    let episodes = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let env = EnvKind::cart_pole();
    let grid = default_grid(&env);
    for op in ["bellman", "rso:uniform:0:2"] {
        let r = train(&env, &grid, &op.parse()?, episodes, 100, &Schedules::default(), 0)?;
        let tail = &r.scores[episodes - episodes / 10..];
        println!(
            "{op:<16} last-10% training score {:.1}, greedy test {:.1}, final gap {:.3}",
            tail.iter().sum::<f64>() / tail.len() as f64,
            r.mean_test_score().unwrap_or(0.0),
            r.final_gap()
        );
    }
    Ok(())
}

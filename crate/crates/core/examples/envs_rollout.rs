//! Random-policy rollouts of the three environments.
//!
//! cargo run --example envs_rollout

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsolab::envs::EnvKind;
use rsolab::error::Result;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for env in [EnvKind::cart_pole(), EnvKind::mountain_car(), EnvKind::acrobot()] {
        let mut lengths = Vec::new();
        for _ in 0..20 {
            let mut s = env.reset(&mut rng);
            while !s.done {
                let a = rng.gen_range(0..env.n_actions());
                s = env.step(&s, a, &mut rng)?.state;
            }
            lengths.push(s.steps);
        }
        let mean = lengths.iter().sum::<usize>() as f64 / lengths.len() as f64;
        println!(
            "{env:<12} {} actions, cap {:>3}, random policy mean length {mean:.1}",
            env.n_actions(),
            env.cap()
        );
    }
    println!();
    print!("{}", EnvKind::mountain_car().dump_constants());
    Ok(())
}

//! Mapping continuous observations to table rows.
//!
//! cargo run --example discretize_grid

use rsolab::discretize::{default_grid, state_index, GridSpec};
use rsolab::envs::EnvKind;
use rsolab::error::Result;

fn main() -> Result<()> {
    for env in [EnvKind::cart_pole(), EnvKind::mountain_car(), EnvKind::acrobot()] {
        let g = default_grid(&env);
        println!("{env:<12} {} cells: {g}", g.n_states());
    }
    let grid: GridSpec = "-1.2:0.6:4, -0.07:0.07:3".parse()?;
    for obs in [[-1.2, -0.07], [-0.5, 0.0], [0.6, 0.07], [5.0, -9.0]] {
        let i = grid.index_of(&obs)?;
        println!(
            "{obs:?} -> cell {i} bins {:?} center {:?}",
            grid.decode(i)?,
            grid.centers(i)?
        );
    }
    let env = EnvKind::mountain_car();
    let s = env.state_from_physics(&[-0.52, 0.001])?;
    println!("state {:?} -> {}", s.values(), state_index(&default_grid(&env), &s)?);
    Ok(())
}

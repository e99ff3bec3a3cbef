//! Tail-min gap distributions on the two-state chain: U[0,2) dominates
//! U[0,1) stochastically and constant 1 in convex order.
//!
//! cargo run --release --example order_check

use rsolab::error::Result;
use rsolab::mdp::TabularMdp;
use rsolab::order::{
    check_convex_order, check_stochastic_order, convex_order_tolerance, default_threshold_grid, gap_distribution,
    stochastic_order_tolerance, DEFAULT_GRID_POINTS,
};

fn main() -> Result<()> {
    let mdp = TabularMdp::two_state_chain();
    let n = 1000;
    let wide = gap_distribution(&mdp, &"rso:uniform:0:2".parse()?, (0, 1), n, 200, 0)?;
    let narrow = gap_distribution(&mdp, &"rso:uniform:0:1".parse()?, (0, 1), n, 200, n as u64)?;
    println!(
        "{}: mean {:.3}  |  {}: mean {:.3}",
        wide.label,
        wide.mean(),
        narrow.label,
        narrow.mean()
    );
    println!(
        "stochastic order: {}",
        check_stochastic_order(&wide, &narrow, stochastic_order_tolerance(n))
    );

    let wide = gap_distribution(&mdp, &"rso:uniform:0:2".parse()?, (0, 1), n, 10, 0)?;
    let fixed = gap_distribution(&mdp, &"rso:constant:1".parse()?, (0, 1), n, 10, 0)?;
    let grid = default_threshold_grid(&wide, &fixed, DEFAULT_GRID_POINTS);
    println!("var {:.3} vs {:.3}", wide.variance(), fixed.variance());
    println!(
        "convex order: {}",
        check_convex_order(&wide, &fixed, &grid, convex_order_tolerance(&wide, &fixed))
    );
    Ok(())
}

//! Single-pair backups of the three operators, and RSO reproducing the
//! consistent operator with `beta = gamma * P(x|x,a)`.
//!
//! cargo run --example operator_backups

use rsolab::error::Result;
use rsolab::mdp::{random_mdp, QTable};
use rsolab::operators::{bellman_backup, consistent_backup, family_bounds_check, rso_backup};

fn main() -> Result<()> {
    let mdp = random_mdp(5, 4, 3, 0.9)?;
    let q = QTable::from_rows(vec![
        vec![1.0, 0.5, 0.0],
        vec![0.2, 0.9, 0.4],
        vec![0.0, 0.0, 3.0],
        vec![1.5, 1.4, 1.3],
    ])?;
    let (x, a) = (1, 0);
    let b = bellman_backup(&mdp, &q, x, a)?;
    let c = consistent_backup(&mdp, &q, x, a)?;
    let self_loop = mdp.transition_row(x, a)[x];
    let beta = mdp.gamma() * self_loop;
    let r = rso_backup(&mdp, &q, x, a, beta)?;
    println!("pair ({x},{a}), gap {}", q.action_gap(x, a)?);
    println!("  bellman    {b:.6}");
    println!("  consistent {c:.6}");
    println!("  rso beta={beta:.4} {r:.6}  (difference {:.1e})", (c - r).abs());
    for beta in [0.0, 0.5, 1.0, 1.5] {
        let v = rso_backup(&mdp, &q, x, a, beta)?;
        println!(
            "  rso beta={beta:<4} {v:.6}  within family bounds: {}",
            family_bounds_check(&mdp, &q, x, a, v, beta)
        );
    }
    Ok(())
}

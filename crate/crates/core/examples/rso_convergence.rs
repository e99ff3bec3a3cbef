//! Sample-path iteration of each operator on a random MDP: value error,
//! tail-min gaps against V* - Q*, and the geometric-tail bound.
//!
//! cargo run --release --example rso_convergence

use rsolab::error::Result;
use rsolab::mdp::{exact_q_star, random_mdp, QTable};
use rsolab::operators::OperatorKind;
use rsolab::viter::{auxiliary_monotone_check, convergence_report, geometric_tail_check, iterate_operator};

fn main() -> Result<()> {
    let mdp = random_mdp(3, 5, 3, 0.9)?;
    let q_star = exact_q_star(&mdp, 1e-13, 1_000_000)?;
    let q0 = QTable::for_mdp(&mdp);
    for spec in [
        "bellman",
        "consistent",
        "rso:uniform:0:2",
        "rso:uniform:0:1",
        "rso:constant:1",
    ] {
        let kind: OperatorKind = spec.parse()?;
        let (_, trace) = iterate_operator(&mdp, &kind, &q0, 2000, 11, 10)?;
        let report = convergence_report(&trace, &q_star)?;
        println!(
            "{spec:<18} |V-V*| {:.1e}  min gap excess {:+.2e}  largest increase {:.4}  tail bound {}  monotone {}",
            report.max_value_error(),
            report.min_gap_excess(),
            report.max_strict_increase(1e-9).unwrap_or(0.0),
            geometric_tail_check(&trace, mdp.gamma()),
            auxiliary_monotone_check(&trace, mdp.gamma()),
        );
    }
    Ok(())
}

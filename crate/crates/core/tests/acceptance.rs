//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use rsolab::envs::EnvKind;
use rsolab::harness::{ablation_beta, final_gap_report, run_experiment, ExperimentConfig};
use rsolab::mdp::{exact_q_star, random_mdp, QTable, TabularMdp};
use rsolab::operators::{consistent_backup, rso_backup, BetaSpec, OperatorKind};
use rsolab::order::{
    check_convex_order, check_stochastic_order, convex_order_tolerance, default_threshold_grid, gap_distribution,
    one_step_variance_identity, stochastic_order_tolerance, DEFAULT_GRID_POINTS,
};
use rsolab::viter::{convergence_report, first_tail_violation, iterate_operator, ConvergenceReport};

const CORPUS_MDPS: u64 = 50;
const CORPUS_SEEDS: u64 = 3;
const CORPUS_K_MAX: usize = 5000;
const VALUE_TOL: f64 = 1e-3;
const GAP_SLACK: f64 = 1e-6;
const STRICT_INCREASE: f64 = 0.01;
const OPTIMAL_TOL: f64 = 1e-9;
const IDENTITY_TUPLES: usize = 10_000;
const IDENTITY_TOL: f64 = 1e-12;
const ORDER_TRIALS: usize = 1000;
const STOCHASTIC_K_MAX: usize = 200;
const CONVEX_K_MAX: usize = 10;
const VARIANCE_SAMPLES: usize = 100_000;
const VARIANCE_REL_TOL: f64 = 0.05;
const GAP_RATIO: f64 = 2.0;

fn u02() -> OperatorKind {
    OperatorKind::Rso(BetaSpec::UniformHalfOpen { lo: 0.0, hi: 2.0 })
}

fn u01() -> OperatorKind {
    OperatorKind::Rso(BetaSpec::UniformHalfOpen { lo: 0.0, hi: 1.0 })
}

fn const1() -> OperatorKind {
    OperatorKind::Rso(BetaSpec::Constant(1.0))
}

struct CorpusRun {
    mdp_index: u64,
    report: ConvergenceReport,
    tail_violation: Option<(usize, usize)>,
}

fn corpus_mdp(i: u64) -> TabularMdp {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + i);
    let n = rng.gen_range(2..=10);
    let m = rng.gen_range(2..=4);
    let gamma = rng.gen_range(0.5..=0.95);
    random_mdp(i, n, m, gamma).expect("valid corpus parameters")
}

fn corpus() -> Vec<CorpusRun> {
    let jobs: Vec<(u64, u64)> = (0..CORPUS_MDPS)
        .flat_map(|i| (0..CORPUS_SEEDS).map(move |s| (i, s)))
        .collect();
    jobs.par_iter()
        .map(|&(i, seed)| {
            let mdp = corpus_mdp(i);
            let q_star = exact_q_star(&mdp, 1e-13, 1_000_000).expect("exact solve");
            let (_, trace) =
                iterate_operator(&mdp, &u02(), &QTable::for_mdp(&mdp), CORPUS_K_MAX, seed, 10).expect("iteration");
            CorpusRun {
                mdp_index: i,
                report: convergence_report(&trace, &q_star).expect("report"),
                tail_violation: first_tail_violation(&trace, mdp.gamma()),
            }
        })
        .collect()
}

fn criterion_1(runs: &[CorpusRun]) -> (bool, String) {
    let worst = runs.iter().map(|r| r.report.max_value_error()).fold(0.0, f64::max);
    (
        worst < VALUE_TOL,
        format!("{} runs, worst |V_k - V*| = {worst:.2e} (< {VALUE_TOL:e})", runs.len()),
    )
}

fn criterion_2(runs: &[CorpusRun]) -> (bool, String) {
    let min_excess = runs
        .iter()
        .map(|r| r.report.min_gap_excess())
        .fold(f64::INFINITY, f64::min);
    let increase = |r: &CorpusRun| r.report.max_strict_increase(OPTIMAL_TOL).unwrap_or(0.0);
    let lacking = |all_seeds: bool| {
        (0..CORPUS_MDPS)
            .filter(|&i| {
                let mut hits = runs
                    .iter()
                    .filter(|r| r.mdp_index == i)
                    .map(|r| increase(r) >= STRICT_INCREASE);
                if all_seeds {
                    !hits.all(|h| h)
                } else {
                    !hits.any(|h| h)
                }
            })
            .count()
    };
    let mut incs: Vec<f64> = runs.iter().map(increase).collect();
    incs.sort_by(f64::total_cmp);
    let every_run = lacking(true);
    (
        min_excess >= -GAP_SLACK && every_run == 0,
        format!(
            "min tail-min excess {min_excess:.2e} (>= -{GAP_SLACK:e}); MDPs lacking a {STRICT_INCREASE} increase in some run: {every_run}, in every run: {}; median largest increase {:.4}",
            lacking(false),
            incs[incs.len() / 2]
        ),
    )
}

fn criterion_3() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mdps: Vec<TabularMdp> = (0..100)
        .map(|i| {
            let n = rng.gen_range(1..=10);
            let m = rng.gen_range(1..=4);
            random_mdp(300 + i, n, m, rng.gen_range(0.0..0.99)).expect("valid")
        })
        .collect();
    let mut worst: f64 = 0.0;
    for _ in 0..IDENTITY_TUPLES {
        let mdp = &mdps[rng.gen_range(0..mdps.len())];
        let rows = (0..mdp.n_states())
            .map(|_| (0..mdp.n_actions()).map(|_| rng.gen_range(-10.0..10.0)).collect())
            .collect();
        let q = QTable::from_rows(rows).expect("rectangular");
        let x = rng.gen_range(0..mdp.n_states());
        let a = rng.gen_range(0..mdp.n_actions());
        let beta = mdp.gamma() * mdp.transition_row(x, a)[x];
        let c = consistent_backup(mdp, &q, x, a).expect("in range");
        let r = rso_backup(mdp, &q, x, a, beta).expect("in range");
        worst = worst.max((c - r).abs());
    }
    (
        worst <= IDENTITY_TOL,
        format!("{IDENTITY_TUPLES} tuples, worst difference {worst:.2e} (<= {IDENTITY_TOL:e})"),
    )
}

fn criterion_4(runs: &[CorpusRun]) -> (bool, String) {
    let bad: Vec<String> = runs
        .iter()
        .filter_map(|r| {
            r.tail_violation
                .map(|(k, x)| format!("mdp {} k {k} x {x}", r.mdp_index))
        })
        .collect();
    (
        bad.is_empty(),
        format!(
            "{} runs checked at every sweep with slack 1e-9; violations: {:?}",
            runs.len(),
            bad
        ),
    )
}

fn criterion_5() -> (bool, String) {
    let mdp = TabularMdp::two_state_chain();
    let hat = gap_distribution(&mdp, &u02(), (0, 1), ORDER_TRIALS, STOCHASTIC_K_MAX, 0).expect("hat");
    let tilde = gap_distribution(
        &mdp,
        &u01(),
        (0, 1),
        ORDER_TRIALS,
        STOCHASTIC_K_MAX,
        ORDER_TRIALS as u64,
    )
    .expect("tilde");
    let v = check_stochastic_order(&hat, &tilde, stochastic_order_tolerance(ORDER_TRIALS));
    (
        v.pass,
        format!("U[0,2) vs U[0,1), {ORDER_TRIALS} trials, k_max {STOCHASTIC_K_MAX}: {v}"),
    )
}

fn criterion_6() -> (bool, String) {
    let mdp = TabularMdp::two_state_chain();
    let hat = gap_distribution(&mdp, &u02(), (0, 1), ORDER_TRIALS, CONVEX_K_MAX, 0).expect("hat");
    let tilde = gap_distribution(&mdp, &const1(), (0, 1), ORDER_TRIALS, CONVEX_K_MAX, 0).expect("tilde");
    let grid = default_threshold_grid(&hat, &tilde, DEFAULT_GRID_POINTS);
    let v = check_convex_order(&hat, &tilde, &grid, convex_order_tolerance(&hat, &tilde));
    (
        v.pass,
        format!("U[0,2) vs constant 1, {ORDER_TRIALS} trials, k_max {CONVEX_K_MAX}: {v}"),
    )
}

fn criterion_7() -> (bool, String) {
    let mdp = TabularMdp::two_state_chain();
    let q = exact_q_star(&mdp, 1e-13, 1_000_000).expect("solve");
    let (mc, analytic) = one_step_variance_identity(
        &mdp,
        &q,
        (0, 1),
        &BetaSpec::UniformHalfOpen { lo: 0.0, hi: 2.0 },
        VARIANCE_SAMPLES,
        7,
    )
    .expect("uniform");
    let rel = (mc - analytic).abs() / analytic;
    let (mc1, an1) =
        one_step_variance_identity(&mdp, &q, (0, 1), &BetaSpec::Constant(1.0), VARIANCE_SAMPLES, 7).expect("constant");
    (
        rel <= VARIANCE_REL_TOL && (analytic - 4.0 / 3.0).abs() < 1e-12 && mc1 == 0.0 && an1 == 0.0,
        format!("U[0,2): MC {mc:.4} vs analytic {analytic:.4} (rel {rel:.3}); constant 1: MC {mc1} analytic {an1}"),
    )
}

fn mountain_car_config() -> ExperimentConfig {
    ExperimentConfig::reduced(EnvKind::mountain_car())
}

fn criterion_8() -> (bool, String) {
    let mut cfg = mountain_car_config();
    cfg.operators = vec![u02(), OperatorKind::Consistent, OperatorKind::Bellman];
    let exp = run_experiment(&cfg).expect("experiment");
    let tests: Vec<Vec<f64>> = exp.runs.iter().map(|r| r.test_means()).collect();
    let ordered = (0..cfg.trials)
        .filter(|&t| tests[0][t] <= tests[1][t] && tests[1][t] <= tests[2][t])
        .count();
    let pooled: Vec<f64> = tests.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    let rso_best = pooled[0] < pooled[1] && pooled[0] < pooled[2];
    (
        ordered >= 3 && rso_best,
        format!(
            "ordered in {ordered}/{} seeds (need 3); pooled test steps rso {:.2}, consistent {:.2}, bellman {:.2}",
            cfg.trials, pooled[0], pooled[1], pooled[2]
        ),
    )
}

fn criterion_9() -> (bool, String) {
    let mut cfg = ExperimentConfig::reduced(EnvKind::acrobot());
    cfg.operators = vec![OperatorKind::Bellman, u02()];
    cfg.test_episodes = 0;
    let exp = run_experiment(&cfg).expect("experiment");
    let bellman = final_gap_report(&exp.runs[0].records, 1).mean;
    let rso = final_gap_report(&exp.runs[1].records, 1).mean;
    (
        rso >= GAP_RATIO * bellman,
        format!(
            "final mean gap rso {rso:.4} vs bellman {bellman:.4}, ratio {:.2} (need {GAP_RATIO})",
            rso / bellman
        ),
    )
}

fn criterion_10() -> (bool, String) {
    let mut cfg = mountain_car_config();
    cfg.operators.clear();
    let ab = ablation_beta(&cfg).expect("ablation");
    let best = ab.best("test_score").unwrap_or("none").to_string();
    let table: Vec<String> = ab
        .ranking
        .iter()
        .filter(|r| r.metric == "test_score")
        .map(|r| format!("{} {:.2}", r.operator, r.value))
        .collect();
    (
        best == u02().to_string(),
        format!("ranking by pooled test steps: {}", table.join(", ")),
    )
}

fn run_cli(args: &[&str], out: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_rsolab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).expect("readable").flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                let rel = p.strip_prefix(dir).expect("inside").display().to_string();
                out.push((rel, std::fs::read(&p).expect("readable")));
            }
        }
    }
    out.sort();
    out
}

fn criterion_11() -> (bool, String) {
    let invocations: [&[&str]; 5] = [
        &["viter", "--random-mdp", "4", "--k-max", "300", "--seed", "9"],
        &[
            "qlearn",
            "--env",
            "cartpole",
            "--episodes",
            "200",
            "--trials",
            "2",
            "--seed",
            "5",
        ],
        &["verify-order", "--trials", "200", "--seed", "3"],
        &[
            "bench",
            "--env",
            "mountaincar",
            "--episodes",
            "100",
            "--trials",
            "2",
            "--seed",
            "1",
        ],
        &[
            "ablate-beta",
            "--env",
            "acrobot",
            "--episodes",
            "30",
            "--trials",
            "2",
            "--test-episodes",
            "5",
        ],
    ];
    let mut files = 0;
    let mut mismatched = Vec::new();
    for args in invocations {
        let a = tempfile::tempdir().expect("tempdir");
        let b = tempfile::tempdir().expect("tempdir");
        if !run_cli(args, a.path()) || !run_cli(args, b.path()) {
            mismatched.push(format!("{} exited with failure", args[0]));
            continue;
        }
        let (fa, fb) = (csv_files(a.path()), csv_files(b.path()));
        if fa.is_empty() || fa != fb {
            mismatched.push(args[0].to_string());
        }
        files += fa.len();
    }
    (
        mismatched.is_empty(),
        format!(
            "{} invocations, {files} CSV files compared; differing: {mismatched:?}",
            invocations.len()
        ),
    )
}

fn main() {
    let mut failed = Vec::new();
    let mut report = |n: usize, limit: Duration, f: &mut dyn FnMut() -> (bool, String)| {
        let start = Instant::now();
        let (ok, detail) = f();
        let took = start.elapsed();
        let pass = ok && took <= limit;
        println!(
            "criterion {n:>2}: {} {detail} [{:.1}s, limit {}s]",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            limit.as_secs()
        );
        if !pass {
            failed.push(n);
        }
    };
    let secs = Duration::from_secs;

    let start = Instant::now();
    let runs = corpus();
    let corpus_time = start.elapsed();
    report(1, secs(30), &mut || {
        let (ok, d) = criterion_1(&runs);
        (
            ok && corpus_time <= secs(30),
            format!("{d}, corpus {:.1}s", corpus_time.as_secs_f64()),
        )
    });
    report(2, secs(30), &mut || criterion_2(&runs));
    report(3, secs(5), &mut criterion_3);
    report(4, secs(30), &mut || criterion_4(&runs));
    report(5, secs(60), &mut criterion_5);
    report(6, secs(60), &mut criterion_6);
    report(7, secs(60), &mut criterion_7);
    report(8, secs(600), &mut criterion_8);
    report(9, secs(1200), &mut criterion_9);
    report(10, secs(900), &mut criterion_10);
    report(11, secs(600), &mut criterion_11);

    if failed.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}

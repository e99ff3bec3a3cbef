use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rsolab::discretize::{default_grid, GridSpec};
use rsolab::envs::EnvKind;
use rsolab::error::{LabError, Result};
use rsolab::harness::{ablation_beta, parse_schedules, run_experiment, write_q_csv, write_trial_csv, ExperimentConfig};
use rsolab::mdp::{exact_q_star, random_mdp, QTable, TabularMdp};
use rsolab::operators::OperatorKind;
use rsolab::order::{
    check_convex_order, check_stochastic_order, convex_order_tolerance, default_threshold_grid, gap_distribution,
    stochastic_order_tolerance, write_ecdf_csv, DEFAULT_GRID_POINTS,
};
use rsolab::qlearn::train;
use rsolab::viter::{convergence_report, first_tail_violation, iterate_operator, DEFAULT_K_MAX};

#[derive(Parser)]
#[command(
    name = "rsolab",
    version,
    about = "Tabular lab for Bellman, consistent and robust stochastic operators"
)]
struct Cli {
    /// Base random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory for CSV artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Experiment config (TOML) for `bench`, `ablate-beta` and `qlearn`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the compiled-in environment constants and exit.
    #[arg(long)]
    dump_env_constants: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Exact Q* by value iteration to machine precision.
    Solve {
        #[command(flatten)]
        mdp: MdpSource,
    },
    /// Synchronous iteration of one operator, traced to CSV.
    Viter {
        #[command(flatten)]
        mdp: MdpSource,
        #[arg(long, default_value = "rso:uniform:0:2")]
        operator: OperatorKind,
        #[arg(long, default_value_t = DEFAULT_K_MAX)]
        k_max: usize,
        /// Record gaps every this many sweeps.
        #[arg(long, default_value_t = 10)]
        stride: usize,
    },
    /// Tabular Q-learning on a classic-control task.
    Qlearn {
        #[command(flatten)]
        learn: LearnArgs,
        #[arg(long, default_value = "rso:uniform:0:2")]
        operator: OperatorKind,
    },
    /// Compare tail-min gap distributions of two operators.
    VerifyOrder {
        #[command(flatten)]
        mdp: MdpSource,
        /// Operator expected to dominate.
        #[arg(long, default_value = "rso:uniform:0:2")]
        hat: OperatorKind,
        #[arg(long, default_value = "rso:uniform:0:1")]
        tilde: OperatorKind,
        #[arg(long, value_enum, default_value_t = Order::Stochastic)]
        order: Order,
        /// State-action pair as `x,a`.
        #[arg(long, default_value = "0,1")]
        pair: String,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 200)]
        k_max: usize,
    },
    /// Paired multi-operator experiment with summary statistics.
    Bench {
        #[command(flatten)]
        learn: LearnArgs,
        /// Comma-separated operator list.
        #[arg(long)]
        operators: Option<String>,
    },
    /// Compare U[0,2), U[0,1) and constant 1 as `beta` distributions.
    AblateBeta {
        #[command(flatten)]
        learn: LearnArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Order {
    Stochastic,
    Convex,
}

#[derive(Args)]
struct MdpSource {
    /// MDP file (TOML). Without this or `--random-mdp` the two-state chain is used.
    #[arg(long, conflicts_with = "random_mdp")]
    mdp: Option<PathBuf>,
    /// Seed for a random MDP.
    #[arg(long)]
    random_mdp: Option<u64>,
    #[arg(long, default_value_t = 5)]
    states: usize,
    #[arg(long, default_value_t = 3)]
    actions: usize,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
}

impl MdpSource {
    fn load(&self) -> Result<TabularMdp> {
        match (&self.mdp, self.random_mdp) {
            (Some(path), _) => TabularMdp::load(path),
            (None, Some(seed)) => random_mdp(seed, self.states, self.actions, self.gamma),
            (None, None) => Ok(TabularMdp::two_state_chain()),
        }
    }
}

#[derive(Args)]
struct LearnArgs {
    #[arg(long)]
    env: Option<EnvKind>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    test_episodes: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    /// Learning-rate schedule, e.g. `constant:0.1` or `linear:0.5:0.05:1000`.
    #[arg(long)]
    alpha: Option<String>,
    /// Exploration schedule, e.g. `constant:0.1` or `inverse:1`.
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Grid as `lo:hi:bins` triplets.
    #[arg(long)]
    grid: Option<GridSpec>,
}

impl LearnArgs {
    fn config(&self, cli: &Cli) -> Result<ExperimentConfig> {
        let mut cfg = match (&cli.config, &self.env) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(env)) => ExperimentConfig::reduced(env.clone()),
            (None, None) => ExperimentConfig::reduced(EnvKind::mountain_car()),
        };
        if let Some(env) = &self.env {
            if env.name() != cfg.env.name() {
                cfg.grid = default_grid(env);
                cfg.env = env.clone();
            }
        }
        if let Some(v) = self.episodes {
            cfg.episodes = v;
            cfg.window = cfg.window.min(v);
        }
        if let Some(v) = self.test_episodes {
            cfg.test_episodes = v;
        }
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if let Some(v) = self.window {
            cfg.window = v;
        }
        let alpha = self.alpha.clone().unwrap_or(cfg.schedules.alpha.to_string());
        let epsilon = self.epsilon.clone().unwrap_or(cfg.schedules.epsilon.to_string());
        cfg.schedules = parse_schedules(&alpha, &epsilon, self.gamma.unwrap_or(cfg.schedules.gamma))?;
        if let Some(g) = &self.grid {
            cfg.grid = g.clone();
        }
        if cli.config.is_none() || cli.seed != 0 {
            cfg.base_seed = cli.seed;
        }
        if cli.out.is_some() {
            cfg.out = cli.out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A run finished but an invariant or ordering check did not hold.
struct Failed;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Failed)) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(2)
        }
    }
}

fn out_dir(cli: &Cli) -> Result<Option<&Path>> {
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir).map_err(|e| LabError::Io {
            path: dir.clone(),
            source: e,
        })?;
    }
    Ok(cli.out.as_deref())
}

fn run(cli: &Cli) -> Result<std::result::Result<(), Failed>> {
    if cli.dump_env_constants {
        for env in [EnvKind::cart_pole(), EnvKind::mountain_car(), EnvKind::acrobot()] {
            println!("{}", env.dump_constants());
        }
        return Ok(Ok(()));
    }
    let Some(command) = &cli.command else {
        return Err(LabError::Usage("no subcommand given; see --help".into()));
    };
    match command {
        Command::Solve { mdp } => {
            let mdp = mdp.load()?;
            let q = exact_q_star(&mdp, 1e-12, 10_000_000)?;
            print_table(&q);
            if let Some(dir) = out_dir(cli)? {
                write_q_csv(&dir.join("q_star.csv"), &q)?;
            }
            Ok(Ok(()))
        }
        Command::Viter {
            mdp,
            operator,
            k_max,
            stride,
        } => {
            let mdp = mdp.load()?;
            let q0 = QTable::for_mdp(&mdp);
            let (q, trace) = iterate_operator(&mdp, operator, &q0, *k_max, cli.seed, *stride)?;
            if let Some(dir) = out_dir(cli)? {
                let path = dir.join("viter.csv");
                let file = fs::File::create(&path).map_err(|e| LabError::Io { path, source: e })?;
                trace.write_csv(file)?;
            }
            let q_star = exact_q_star(&mdp, 1e-12, 10_000_000)?;
            let report = convergence_report(&trace, &q_star)?;
            print_table(&q);
            println!("sweeps: {}", trace.k_final());
            println!("sup |V_k - V*|: {:.3e}", report.max_value_error());
            println!("min tail gap excess over V* - Q*: {:.3e}", report.min_gap_excess());
            match first_tail_violation(&trace, mdp.gamma()) {
                None => {
                    println!("geometric tail: PASS");
                    Ok(Ok(()))
                }
                Some((k, x)) => {
                    println!("geometric tail: FAIL at sweep {k}, state {x}");
                    Ok(Err(Failed))
                }
            }
        }
        Command::Qlearn { learn, operator } => {
            let mut cfg = learn.config(cli)?;
            cfg.operators = vec![operator.clone()];
            cfg.validate()?;
            let dir = out_dir(cli)?;
            for seed in cfg.seeds() {
                let r = train(
                    &cfg.env,
                    &cfg.grid,
                    operator,
                    cfg.episodes,
                    cfg.test_episodes,
                    &cfg.schedules,
                    seed,
                )
                .map_err(|e| LabError::Trial {
                    seed,
                    source: Box::new(e),
                })?;
                let tail = &r.scores[r.scores.len() - cfg.window..];
                println!(
                    "seed {seed}: final-window score {:.2}, test score {}, final gap {:.4}",
                    tail.iter().sum::<f64>() / tail.len() as f64,
                    r.mean_test_score().map_or("-".into(), |s| format!("{s:.2}")),
                    r.final_gap()
                );
                if let Some(dir) = dir {
                    write_trial_csv(&dir.join(format!("trial_{seed}.csv")), &r)?;
                    write_q_csv(&dir.join(format!("q_{seed}.csv")), &r.q)?;
                }
            }
            Ok(Ok(()))
        }
        Command::VerifyOrder {
            mdp,
            hat,
            tilde,
            order,
            pair,
            trials,
            k_max,
        } => {
            let mdp = mdp.load()?;
            let pair = parse_pair(pair)?;
            let h = gap_distribution(&mdp, hat, pair, *trials, *k_max, cli.seed)?;
            let t = gap_distribution(&mdp, tilde, pair, *trials, *k_max, cli.seed + *trials as u64)?;
            for w in h.warnings.iter().chain(&t.warnings) {
                eprintln!("warning: {w}");
            }
            let verdict = match order {
                Order::Stochastic => check_stochastic_order(&h, &t, stochastic_order_tolerance(*trials)),
                Order::Convex => {
                    let grid = default_threshold_grid(&h, &t, DEFAULT_GRID_POINTS);
                    check_convex_order(&h, &t, &grid, convex_order_tolerance(&h, &t))
                }
            };
            if let Some(dir) = out_dir(cli)? {
                let path = dir.join("ecdf.csv");
                let file = fs::File::create(&path).map_err(|e| LabError::Io { path, source: e })?;
                write_ecdf_csv(&h, &t, file)?;
            }
            println!("hat:   {} (mean {:.6}, var {:.6})", h.label, h.mean(), h.variance());
            println!("tilde: {} (mean {:.6}, var {:.6})", t.label, t.mean(), t.variance());
            println!("{verdict}");
            Ok(if verdict.pass { Ok(()) } else { Err(Failed) })
        }
        Command::Bench { learn, operators } => {
            let mut cfg = learn.config(cli)?;
            if let Some(list) = operators {
                cfg.operators = list.split(',').map(str::parse).collect::<Result<_>>()?;
            }
            let exp = run_experiment(&cfg)?;
            println!(
                "{:<24} {:>10} {:>10} {:>12} {:>10}",
                "operator", "test", "std", "train tail", "gap"
            );
            for row in exp.summary() {
                println!(
                    "{:<24} {:>10.2} {:>10.2} {:>12.2} {:>10.4}",
                    row.operator, row.test_mean, row.test_std, row.train_tail_mean, row.final_gap_mean
                );
            }
            Ok(Ok(()))
        }
        Command::AblateBeta { learn } => {
            let mut cfg = learn.config(cli)?;
            if cfg.operators == ExperimentConfig::reduced(cfg.env.clone()).operators {
                cfg.operators.clear();
            }
            let ab = ablation_beta(&cfg)?;
            for row in &ab.ranking {
                println!("{:<12} {} {:<24} {:.4}", row.metric, row.rank, row.operator, row.value);
            }
            Ok(Ok(()))
        }
    }
}

fn parse_pair(s: &str) -> Result<(usize, usize)> {
    let bad = || LabError::Parse(format!("pair must look like 'x,a', got '{s}'"));
    let (x, a) = s.split_once(',').ok_or_else(bad)?;
    Ok((
        x.trim().parse().map_err(|_| bad())?,
        a.trim().parse().map_err(|_| bad())?,
    ))
}

fn print_table(q: &QTable) {
    for x in 0..q.n_states() {
        let row: Vec<String> = q.row(x).iter().map(|v| format!("{v:>12.6}")).collect();
        let best = q.greedy_value(x).expect("state in range");
        println!("x={x:<3} {}   V={:.6} a*={}", row.join(" "), best.value, best.action);
    }
}

//! Multi-trial experiments with paired seeds, moving-window curves and
//! the `beta` ablation.
//!
//! Artifacts written by [`Experiment::write_artifacts`]:
//!
//! ```text
//! <out>/metadata.toml
//! <out>/summary.csv
//! <out>/<operator-slug>/trial_<seed>.csv       episode,score,mean_gap
//! <out>/<operator-slug>/test_<seed>.csv        episode,score
//! <out>/<operator-slug>/curve.csv              episode,mean,std
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::{default_grid, GridSpec};
use crate::envs::EnvKind;
use crate::error::{usage, LabError, Result};
use crate::mdp::QTable;
use crate::operators::{BetaSpec, OperatorKind};
use crate::qlearn::{train, Schedule, Schedules, TrialRecord};

/// Everything needed to rerun an experiment bit-for-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    pub grid: GridSpec,
    pub operators: Vec<OperatorKind>,
    pub trials: usize,
    pub episodes: usize,
    pub test_episodes: usize,
    pub base_seed: u64,
    pub window: usize,
    pub schedules: Schedules,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Desk-scale defaults comparing Bellman, Consistent and `rso:uniform:0:2`.
    pub fn reduced(env: EnvKind) -> Self {
        let (episodes, test_episodes, window) = match env {
            EnvKind::MountainCar(_) => (3000, 200, 100),
            EnvKind::Acrobot(_) => (10_000, 100, 1000),
            EnvKind::CartPole(_) => (20_000, 100, 1000),
        };
        ExperimentConfig {
            grid: default_grid(&env),
            env,
            operators: vec![
                OperatorKind::Bellman,
                OperatorKind::Consistent,
                OperatorKind::Rso(BetaSpec::UniformHalfOpen { lo: 0.0, hi: 2.0 }),
            ],
            trials: 5,
            episodes,
            test_episodes,
            base_seed: 0,
            window,
            schedules: Schedules::default(),
            out: None,
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.trials as u64).map(|i| self.base_seed + i).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.schedules.validate()?;
        if self.trials == 0 {
            return usage("trials must be at least 1");
        }
        if self.episodes == 0 {
            return usage("episodes must be at least 1");
        }
        if self.window == 0 || self.window > self.episodes {
            return usage(format!(
                "window must lie in [1, {}], got {}",
                self.episodes, self.window
            ));
        }
        if self.operators.is_empty() {
            return usage("no operators to compare");
        }
        if self.grid.dims() != self.env.obs_dim() {
            return usage(format!(
                "grid has {} axes, {} needs {}",
                self.grid.dims(),
                self.env,
                self.env.obs_dim()
            ));
        }
        for op in &self.operators {
            if let OperatorKind::Rso(spec) = op {
                spec.validate()?;
            }
        }
        let mut slugs: Vec<String> = self.operators.iter().map(OperatorKind::slug).collect();
        slugs.sort();
        slugs.dedup();
        if slugs.len() != self.operators.len() {
            return usage("operator list contains duplicates");
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        text.parse()
    }

    fn to_file(&self) -> ConfigFile {
        ConfigFile {
            env: self.env.name().to_string(),
            operators: self.operators.iter().map(ToString::to_string).collect(),
            trials: Some(self.trials),
            episodes: Some(self.episodes),
            test_episodes: Some(self.test_episodes),
            seed: Some(self.base_seed),
            window: Some(self.window),
            alpha: Some(self.schedules.alpha.to_string()),
            epsilon: Some(self.schedules.epsilon.to_string()),
            gamma: Some(self.schedules.gamma),
            grid: Some(self.grid.to_string()),
            out: self.out.as_ref().map(|p| p.display().to_string()),
        }
    }
}

/// On-disk form: every field except `env` is optional and falls back to
/// [`ExperimentConfig::reduced`].
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    env: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    operators: Vec<String>,
    trials: Option<usize>,
    episodes: Option<usize>,
    test_episodes: Option<usize>,
    seed: Option<u64>,
    window: Option<usize>,
    alpha: Option<String>,
    epsilon: Option<String>,
    gamma: Option<f64>,
    grid: Option<String>,
    out: Option<String>,
}

impl FromStr for ExperimentConfig {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        let f: ConfigFile = toml::from_str(s).map_err(|e| LabError::Parse(e.to_string()))?;
        let mut cfg = ExperimentConfig::reduced(f.env.parse()?);
        if !f.operators.is_empty() {
            cfg.operators = f.operators.iter().map(|o| o.parse()).collect::<Result<_>>()?;
        }
        if let Some(v) = f.trials {
            cfg.trials = v;
        }
        if let Some(v) = f.episodes {
            cfg.episodes = v;
            cfg.window = cfg.window.min(v);
        }
        if let Some(v) = f.test_episodes {
            cfg.test_episodes = v;
        }
        if let Some(v) = f.seed {
            cfg.base_seed = v;
        }
        if let Some(v) = f.window {
            cfg.window = v;
        }
        if let Some(v) = f.alpha {
            cfg.schedules.alpha = v.parse()?;
        }
        if let Some(v) = f.epsilon {
            cfg.schedules.epsilon = v.parse()?;
        }
        if let Some(v) = f.gamma {
            cfg.schedules.gamma = v;
        }
        if let Some(v) = f.grid {
            cfg.grid = v.parse()?;
        }
        cfg.out = f.out.map(PathBuf::from);
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = toml::to_string(&self.to_file()).map_err(|_| fmt::Error)?;
        f.write_str(&text)
    }
}

/// All trials of one operator, in seed order.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorRuns {
    pub kind: OperatorKind,
    pub records: Vec<TrialRecord>,
}

impl OperatorRuns {
    pub fn scores(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.scores.clone()).collect()
    }

    /// Mean greedy test score per trial.
    pub fn test_means(&self) -> Vec<f64> {
        self.records.iter().filter_map(TrialRecord::mean_test_score).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub runs: Vec<OperatorRuns>,
}

/// Trains every operator on the same seeds. Trials run in parallel; the
/// result does not depend on the worker count. Artifacts are written when
/// `cfg.out` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Experiment> {
    cfg.validate()?;
    let seeds = cfg.seeds();
    let jobs: Vec<(usize, u64)> = (0..cfg.operators.len())
        .flat_map(|o| seeds.iter().map(move |&s| (o, s)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(o, seed)| {
            train(
                &cfg.env,
                &cfg.grid,
                &cfg.operators[o],
                cfg.episodes,
                cfg.test_episodes,
                &cfg.schedules,
                seed,
            )
            .map_err(|e| LabError::Trial {
                seed,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut records = records.into_iter();
    let runs = cfg
        .operators
        .iter()
        .map(|kind| OperatorRuns {
            kind: kind.clone(),
            records: records.by_ref().take(seeds.len()).collect(),
        })
        .collect();
    let exp = Experiment {
        config: cfg.clone(),
        runs,
    };
    if let Some(dir) = &cfg.out {
        exp.write_artifacts(dir)?;
    }
    Ok(exp)
}

/// Trailing-window average over episodes and trials.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    /// 1-based episode number of each point; the first is `window`.
    pub episodes: Vec<usize>,
    pub mean: Vec<f64>,
    /// Population standard deviation across trials of the per-trial window means.
    pub std: Vec<f64>,
}

/// `scores[t][e]` is trial `t`'s score in episode `e`.
pub fn moving_window_average(scores: &[Vec<f64>], window: usize) -> Result<Curve> {
    let Some(first) = scores.first() else {
        return usage("no trials to average");
    };
    let n = first.len();
    if scores.iter().any(|s| s.len() != n) {
        return usage("trials have different episode counts");
    }
    if window == 0 || window > n {
        return usage(format!("window {window} does not fit {n} episodes"));
    }
    let prefix: Vec<Vec<f64>> = scores
        .iter()
        .map(|s| {
            std::iter::once(0.0)
                .chain(s.iter().scan(0.0, |acc, v| {
                    *acc += v;
                    Some(*acc)
                }))
                .collect()
        })
        .collect();
    let trials = scores.len() as f64;
    let mut curve = Curve {
        episodes: Vec::with_capacity(n - window + 1),
        mean: Vec::with_capacity(n - window + 1),
        std: Vec::with_capacity(n - window + 1),
    };
    for end in window..=n {
        let means: Vec<f64> = prefix
            .iter()
            .map(|p| (p[end] - p[end - window]) / window as f64)
            .collect();
        let mean = means.iter().sum::<f64>() / trials;
        let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / trials;
        curve.episodes.push(end);
        curve.mean.push(mean);
        curve.std.push(var.sqrt());
    }
    Ok(curve)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GapReport {
    pub mean: f64,
    pub std: f64,
    pub per_trial: Vec<f64>,
}

/// Per trial, the mean action gap averaged over the last `tail` episodes;
/// then mean and population std across trials. `tail = 1` uses the final
/// episode alone.
pub fn final_gap_report(records: &[TrialRecord], tail: usize) -> GapReport {
    let per_trial: Vec<f64> = records
        .iter()
        .map(|r| {
            let k = tail.clamp(1, r.mean_gaps.len().max(1));
            let last = &r.mean_gaps[r.mean_gaps.len().saturating_sub(k)..];
            if last.is_empty() {
                0.0
            } else {
                last.iter().sum::<f64>() / last.len() as f64
            }
        })
        .collect();
    let (mean, std) = mean_std(&per_trial);
    GapReport { mean, std, per_trial }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One line of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub operator: String,
    pub trials: usize,
    pub test_mean: f64,
    pub test_std: f64,
    pub train_tail_mean: f64,
    pub final_gap_mean: f64,
    pub final_gap_std: f64,
}

impl Experiment {
    pub fn runs_for(&self, kind: &OperatorKind) -> Option<&OperatorRuns> {
        self.runs.iter().find(|r| &r.kind == kind)
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let window = self.config.window;
        self.runs
            .iter()
            .map(|run| {
                let (test_mean, test_std) = mean_std(&run.test_means());
                let tails: Vec<f64> = run
                    .records
                    .iter()
                    .map(|r| r.scores[r.scores.len() - window..].iter().sum::<f64>() / window as f64)
                    .collect();
                let gaps = final_gap_report(&run.records, 1);
                SummaryRow {
                    operator: run.kind.to_string(),
                    trials: run.records.len(),
                    test_mean,
                    test_std,
                    train_tail_mean: mean_std(&tails).0,
                    final_gap_mean: gaps.mean,
                    final_gap_std: gaps.std,
                }
            })
            .collect()
    }

    /// Writes CSVs and metadata under `dir`, creating it if needed.
    pub fn write_artifacts(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
        for run in &self.runs {
            let sub = dir.join(run.kind.slug());
            fs::create_dir_all(&sub).map_err(|e| LabError::io(&sub, e))?;
            for r in &run.records {
                write_trial_csv(&sub.join(format!("trial_{}.csv", r.seed)), r)?;
                let path = sub.join(format!("test_{}.csv", r.seed));
                let mut w = csv_writer(&path)?;
                w.write_record(["episode", "score"])?;
                for (i, s) in r.test_scores.iter().enumerate() {
                    w.write_record([(i + 1).to_string(), s.to_string()])?;
                }
                flush(w, &path)?;
            }
            let curve = moving_window_average(&run.scores(), self.config.window)?;
            let path = sub.join("curve.csv");
            let mut w = csv_writer(&path)?;
            w.write_record(["episode", "mean", "std"])?;
            for i in 0..curve.mean.len() {
                w.write_record([
                    curve.episodes[i].to_string(),
                    curve.mean[i].to_string(),
                    curve.std[i].to_string(),
                ])?;
            }
            flush(w, &path)?;
        }
        let path = dir.join("summary.csv");
        let mut w = csv_writer(&path)?;
        for row in self.summary() {
            w.serialize(row)?;
        }
        flush(w, &path)?;
        let path = dir.join("metadata.toml");
        fs::write(&path, self.metadata()).map_err(|e| LabError::io(&path, e))
    }

    /// Config, seeds and crate version as TOML. Contains no timestamps.
    pub fn metadata(&self) -> String {
        #[derive(Serialize)]
        struct Meta<'a> {
            version: &'a str,
            seeds: Vec<u64>,
            score: &'a str,
            config: ConfigFile,
        }
        let meta = Meta {
            version: env!("CARGO_PKG_VERSION"),
            seeds: self.config.seeds(),
            score: if self.config.env.minimizes_score() {
                "steps to goal, lower is better"
            } else {
                "steps balanced, higher is better"
            },
            config: self.config.to_file(),
        };
        toml::to_string(&meta).expect("metadata is serializable")
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| LabError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn flush(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| LabError::io(path, e))
}

/// `episode,score,mean_gap` with 1-based episodes.
pub fn write_trial_csv(path: &Path, r: &TrialRecord) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["episode", "score", "mean_gap"])?;
    for (i, (s, g)) in r.scores.iter().zip(&r.mean_gaps).enumerate() {
        w.write_record([(i + 1).to_string(), s.to_string(), g.to_string()])?;
    }
    flush(w, path)
}

/// `state,a0,a1,...`, one row per state.
pub fn write_q_csv(path: &Path, q: &QTable) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["state".to_string()];
    header.extend((0..q.n_actions()).map(|a| format!("a{a}")));
    w.write_record(&header)?;
    for x in 0..q.n_states() {
        let mut row = vec![x.to_string()];
        row.extend(q.row(x).iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    flush(w, path)
}

/// The three `beta` distributions compared by default.
pub fn ablation_specs() -> Vec<OperatorKind> {
    vec![
        OperatorKind::Rso(BetaSpec::UniformHalfOpen { lo: 0.0, hi: 2.0 }),
        OperatorKind::Rso(BetaSpec::UniformHalfOpen { lo: 0.0, hi: 1.0 }),
        OperatorKind::Rso(BetaSpec::Constant(1.0)),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankRow {
    pub metric: String,
    pub rank: usize,
    pub operator: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ablation {
    pub experiment: Experiment,
    pub ranking: Vec<RankRow>,
}

impl Ablation {
    /// The operator ranked first on `metric`.
    pub fn best(&self, metric: &str) -> Option<&str> {
        self.ranking
            .iter()
            .find(|r| r.metric == metric && r.rank == 1)
            .map(|r| r.operator.as_str())
    }
}

/// Runs the `beta` ablation. An empty operator list means
/// [`ablation_specs`]; any non-RSO entry is rejected. Ranks by pooled test
/// score (in the environment's direction), final-window training score and
/// final action gap (larger first), and writes `ablation.csv` next to the
/// usual artifacts.
pub fn ablation_beta(cfg: &ExperimentConfig) -> Result<Ablation> {
    if let Some(bad) = cfg.operators.iter().find(|o| !matches!(o, OperatorKind::Rso(_))) {
        return usage(format!("ablation compares RSO operators only, got '{bad}'"));
    }
    let mut cfg = cfg.clone();
    if cfg.operators.is_empty() {
        cfg.operators = ablation_specs();
    }
    let experiment = run_experiment(&cfg)?;
    let summary = experiment.summary();
    let lower_better = cfg.env.minimizes_score();
    let mut ranking = Vec::new();
    type Metric = (&'static str, fn(&SummaryRow) -> f64, bool);
    let metrics: [Metric; 3] = [
        ("test_score", |r| r.test_mean, lower_better),
        ("train_tail", |r| r.train_tail_mean, lower_better),
        ("final_gap", |r| r.final_gap_mean, false),
    ];
    for (name, get, ascending) in metrics {
        let mut rows: Vec<&SummaryRow> = summary.iter().collect();
        rows.sort_by(|a, b| {
            let ord = get(a).total_cmp(&get(b));
            if ascending {
                ord
            } else {
                ord.reverse()
            }
        });
        ranking.extend(rows.iter().enumerate().map(|(i, r)| RankRow {
            metric: name.to_string(),
            rank: i + 1,
            operator: r.operator.clone(),
            value: get(r),
        }));
    }
    if let Some(dir) = &cfg.out {
        let path = dir.join("ablation.csv");
        let mut w = csv_writer(&path)?;
        for row in &ranking {
            w.serialize(row)?;
        }
        flush(w, &path)?;
    }
    Ok(Ablation { experiment, ranking })
}

/// Parses a schedule pair from text, used by the CLI.
pub fn parse_schedules(alpha: &str, epsilon: &str, gamma: f64) -> Result<Schedules> {
    let s = Schedules {
        alpha: alpha.parse::<Schedule>()?,
        epsilon: epsilon.parse::<Schedule>()?,
        gamma,
    };
    s.validate()?;
    Ok(s)
}

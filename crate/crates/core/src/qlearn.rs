//! Epsilon-greedy tabular Q-learning over a discretized environment, with
//! the backup target chosen by [`OperatorKind`].

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::discretize::GridSpec;
use crate::envs::EnvKind;
use crate::error::{usage, LabError, Result};
use crate::mdp::QTable;
use crate::operators::{sample_beta, target_unchecked, OperatorKind, Sample};

/// Step-size or exploration schedule.
#[derive(Clone, Debug, PartialEq)]
pub enum Schedule {
    Constant(f64),
    /// Linear interpolation from `start` to `end` over `steps` episodes, then flat.
    LinearDecay {
        start: f64,
        end: f64,
        steps: usize,
    },
    /// `min(1, c / n)` where `n` is the visit count of the entry being updated
    /// (for alpha) or of the current state (for epsilon).
    InverseVisit(f64),
}

impl Schedule {
    /// Value at `episode` given a visit count `visits >= 1`.
    pub fn value(&self, episode: usize, visits: u32) -> f64 {
        match self {
            Schedule::Constant(v) => *v,
            Schedule::LinearDecay { start, end, steps } => {
                if episode >= *steps {
                    *end
                } else {
                    start + (end - start) * (episode as f64 / *steps as f64)
                }
            }
            Schedule::InverseVisit(c) => (c / f64::from(visits.max(1))).min(1.0),
        }
    }

    fn check_range(&self, lo_open: bool, what: &str) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v <= 1.0 && if lo_open { v > 0.0 } else { v >= 0.0 };
        let valid = match self {
            Schedule::Constant(v) => ok(*v),
            Schedule::LinearDecay { start, end, steps } => *steps >= 1 && ok(*start) && ok(*end),
            Schedule::InverseVisit(c) => c.is_finite() && if lo_open { *c > 0.0 } else { *c >= 0.0 },
        };
        if valid {
            Ok(())
        } else {
            let range = if lo_open { "(0,1]" } else { "[0,1]" };
            usage(format!("{what} schedule {self} leaves {range}"))
        }
    }

    pub fn validate_alpha(&self) -> Result<()> {
        self.check_range(true, "alpha")
    }

    pub fn validate_epsilon(&self) -> Result<()> {
        self.check_range(false, "epsilon")
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::Constant(v) => write!(f, "constant:{v}"),
            Schedule::LinearDecay { start, end, steps } => write!(f, "linear:{start}:{end}:{steps}"),
            Schedule::InverseVisit(c) => write!(f, "inverse:{c}"),
        }
    }
}

/// `constant:v`, `linear:start:end:steps` or `inverse:c`.
impl FromStr for Schedule {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| LabError::Parse(format!("bad number '{v}' in schedule '{s}'")))
        };
        match parts.as_slice() {
            ["constant", v] => Ok(Schedule::Constant(num(v)?)),
            ["linear", a, b, n] => Ok(Schedule::LinearDecay {
                start: num(a)?,
                end: num(b)?,
                steps: n
                    .parse()
                    .map_err(|_| LabError::Parse(format!("bad step count '{n}' in schedule '{s}'")))?,
            }),
            ["inverse", c] => Ok(Schedule::InverseVisit(num(c)?)),
            _ => Err(LabError::Parse(format!("unrecognised schedule '{s}'"))),
        }
    }
}

/// Learning hyper-parameters shared by every trial of an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedules {
    pub alpha: Schedule,
    pub epsilon: Schedule,
    pub gamma: f64,
}

impl Default for Schedules {
    fn default() -> Self {
        Schedules {
            alpha: Schedule::Constant(0.1),
            epsilon: Schedule::Constant(0.1),
            gamma: 0.99,
        }
    }
}

impl Schedules {
    pub fn validate(&self) -> Result<()> {
        self.alpha.validate_alpha()?;
        self.epsilon.validate_epsilon()?;
        if !(0.0..=1.0).contains(&self.gamma) {
            return usage(format!("gamma must lie in [0,1], got {}", self.gamma));
        }
        Ok(())
    }
}

/// Independent random streams for one trial, all derived from its seed:
/// start states, exploration, `beta` draws and evaluation start states.
/// Operators that draw no `beta` leave the other streams untouched, so
/// paired trials see identical start states.
#[derive(Clone, Debug)]
pub struct TrialRngs {
    pub env: ChaCha8Rng,
    pub explore: ChaCha8Rng,
    pub beta: ChaCha8Rng,
    pub eval: ChaCha8Rng,
}

impl TrialRngs {
    pub fn new(seed: u64) -> Self {
        let stream = |id| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(id);
            r
        };
        TrialRngs {
            env: stream(0),
            explore: stream(1),
            beta: stream(2),
            eval: stream(3),
        }
    }
}

/// Uniform random action with probability `eps`, otherwise the greedy one.
pub fn epsilon_greedy<R: Rng + ?Sized>(q: &QTable, x: usize, eps: f64, rng: &mut R) -> Result<usize> {
    if !(0.0..=1.0).contains(&eps) {
        return usage(format!("epsilon must lie in [0,1], got {eps}"));
    }
    q.greedy_value(x).map(|_| explore(q, x, eps, rng))
}

fn explore<R: Rng + ?Sized>(q: &QTable, x: usize, eps: f64, rng: &mut R) -> usize {
    if eps > 0.0 && rng.gen::<f64>() < eps {
        rng.gen_range(0..q.n_actions())
    } else {
        q.greedy(x).action
    }
}

/// `q[x,a] <- (1 - alpha) q[x,a] + alpha * target`; returns the new entry.
pub fn td_update(q: &mut QTable, x: usize, a: usize, target: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return usage(format!("alpha must lie in (0,1], got {alpha}"));
    }
    if x >= q.n_states() || a >= q.n_actions() {
        return usage(format!("entry ({x},{a}) out of range"));
    }
    Ok(apply_update(q, x, a, target, alpha))
}

fn apply_update(q: &mut QTable, x: usize, a: usize, target: f64, alpha: f64) -> f64 {
    let old = q.get(x, a);
    let new = if alpha == 1.0 {
        target
    } else {
        old + alpha * (target - old)
    };
    q.set(x, a, new);
    new
}

/// `V(x)` minus the best value among the other actions; 0 for one action.
pub fn state_action_gap(q: &QTable, x: usize) -> f64 {
    let row = q.row(x);
    let best = q.greedy(x);
    let second = row
        .iter()
        .enumerate()
        .filter(|(a, _)| *a != best.action)
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if second.is_finite() {
        best.value - second
    } else {
        0.0
    }
}

/// Mutable learning state for one trial.
#[derive(Clone, Debug)]
pub struct Learner {
    pub env: EnvKind,
    pub grid: GridSpec,
    pub kind: OperatorKind,
    pub schedules: Schedules,
    pub q: QTable,
    pub rngs: TrialRngs,
    pair_visits: Vec<u32>,
    state_visits: Vec<u32>,
    /// Episode stamp per state, for deduplicating visited states.
    seen: Vec<u32>,
    visited: Vec<usize>,
    updates: usize,
    episode: usize,
}

/// Result of one episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeOutcome {
    pub score: f64,
    pub steps: usize,
    /// Mean of [`state_action_gap`] over distinct states visited this episode.
    pub mean_gap: f64,
}

impl Learner {
    pub fn new(env: EnvKind, grid: GridSpec, kind: OperatorKind, schedules: Schedules, seed: u64) -> Result<Self> {
        env.validate()?;
        schedules.validate()?;
        if let OperatorKind::Rso(spec) = &kind {
            spec.validate()?;
        }
        if grid.dims() != env.obs_dim() {
            return usage(format!(
                "grid has {} axes but {} observations have {} components",
                grid.dims(),
                env.name(),
                env.obs_dim()
            ));
        }
        let n = grid.n_states();
        let m = env.n_actions();
        Ok(Learner {
            q: QTable::zeros(n, m),
            env,
            grid,
            kind,
            schedules,
            rngs: TrialRngs::new(seed),
            pair_visits: vec![0; n * m],
            state_visits: vec![0; n],
            seen: vec![u32::MAX; n],
            visited: Vec::new(),
            updates: 0,
            episode: 0,
        })
    }

    /// Replaces the table, e.g. with a pre-trained one.
    pub fn with_table(mut self, q: QTable) -> Result<Self> {
        if q.n_states() != self.grid.n_states() || q.n_actions() != self.env.n_actions() {
            return usage("table does not match grid and action count");
        }
        self.q = q;
        Ok(self)
    }

    pub fn episodes_run(&self) -> usize {
        self.episode
    }

    /// One learning episode: act epsilon-greedily, update after every step.
    pub fn run_episode(&mut self) -> Result<EpisodeOutcome> {
        let env = &self.env;
        let grid = &self.grid;
        let gamma = self.schedules.gamma;
        let n_actions = env.n_actions();
        let stamp = self.episode as u32;
        self.visited.clear();

        let mut s = env.reset(&mut self.rngs.env);
        let mut x = grid.index_unchecked(s.values());
        loop {
            if self.seen[x] != stamp {
                self.seen[x] = stamp;
                self.visited.push(x);
            }
            self.state_visits[x] = self.state_visits[x].saturating_add(1);
            let eps = self.schedules.epsilon.value(self.episode, self.state_visits[x]);
            let a = explore(&self.q, x, eps, &mut self.rngs.explore);

            let out = env.step(&s, a, &mut self.rngs.env)?;
            let next_x = grid.index_unchecked(out.state.values());
            let beta = match &self.kind {
                OperatorKind::Rso(spec) => sample_beta(spec, self.updates, &mut self.rngs.beta),
                _ => 0.0,
            };
            let sample = Sample {
                state: x,
                action: a,
                reward: out.reward,
                next: (!out.done()).then_some(next_x),
            };
            let target = target_unchecked(&self.kind, gamma, &self.q, sample, beta);
            let pv = &mut self.pair_visits[x * n_actions + a];
            *pv = pv.saturating_add(1);
            let alpha = self.schedules.alpha.value(self.episode, *pv);
            apply_update(&mut self.q, x, a, target, alpha);
            self.updates += 1;

            s = out.state;
            x = next_x;
            if out.done() {
                break;
            }
        }

        let mean_gap = if self.visited.is_empty() {
            0.0
        } else {
            self.visited.iter().map(|&v| state_action_gap(&self.q, v)).sum::<f64>() / self.visited.len() as f64
        };
        self.episode += 1;
        Ok(EpisodeOutcome {
            score: s.steps as f64,
            steps: s.steps,
            mean_gap,
        })
    }

    /// Greedy rollout without learning, start states from the evaluation stream.
    pub fn evaluate_episode(&mut self) -> Result<f64> {
        let mut s = self.env.reset(&mut self.rngs.eval);
        while !s.done {
            let x = self.grid.index_unchecked(s.values());
            let a = self.q.greedy(x).action;
            s = self.env.step(&s, a, &mut self.rngs.eval)?.state;
        }
        Ok(s.steps as f64)
    }
}

/// Runs a single learning episode on `q` with a fixed exploration rate.
pub fn run_episode(
    env: &EnvKind,
    grid: &GridSpec,
    q: &mut QTable,
    kind: &OperatorKind,
    alpha: &Schedule,
    eps: f64,
    seed: u64,
) -> Result<EpisodeOutcome> {
    let schedules = Schedules {
        alpha: alpha.clone(),
        epsilon: Schedule::Constant(eps),
        ..Schedules::default()
    };
    let mut learner = Learner::new(env.clone(), grid.clone(), kind.clone(), schedules, seed)?
        .with_table(std::mem::replace(q, QTable::zeros(1, 1)))?;
    let out = learner.run_episode();
    *q = learner.q;
    out
}

/// Everything recorded for one training trial.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub seed: u64,
    pub scores: Vec<f64>,
    pub mean_gaps: Vec<f64>,
    /// Greedy evaluation scores after training (empty when not requested).
    pub test_scores: Vec<f64>,
    pub q: QTable,
}

impl TrialRecord {
    pub fn final_gap(&self) -> f64 {
        self.mean_gaps.last().copied().unwrap_or(0.0)
    }

    pub fn mean_test_score(&self) -> Option<f64> {
        (!self.test_scores.is_empty()).then(|| self.test_scores.iter().sum::<f64>() / self.test_scores.len() as f64)
    }
}

/// Trains a zero-initialized table for `episodes` episodes, then runs
/// `test_episodes` greedy evaluation episodes.
pub fn train(
    env: &EnvKind,
    grid: &GridSpec,
    kind: &OperatorKind,
    episodes: usize,
    test_episodes: usize,
    schedules: &Schedules,
    seed: u64,
) -> Result<TrialRecord> {
    if episodes == 0 {
        return usage("need at least one training episode");
    }
    let mut learner = Learner::new(env.clone(), grid.clone(), kind.clone(), schedules.clone(), seed)?;
    let mut scores = Vec::with_capacity(episodes);
    let mut mean_gaps = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let out = learner.run_episode()?;
        scores.push(out.score);
        mean_gaps.push(out.mean_gap);
    }
    let test_scores = (0..test_episodes)
        .map(|_| learner.evaluate_episode())
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialRecord {
        seed,
        scores,
        mean_gaps,
        test_scores,
        q: learner.q,
    })
}

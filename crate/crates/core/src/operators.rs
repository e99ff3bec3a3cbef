//! Backup operators: Bellman, consistent Bellman and the robust stochastic
//! operator (RSO), plus the distributions that drive the RSO penalty.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{usage, LabError, Result};
use crate::mdp::{QTable, TabularMdp};

const FAMILY_TOL: f64 = 1e-12;

/// Distribution of the penalty coefficient `beta_k`.
///
/// Every variant has bounded, nonnegative support and a mean in `[0, 1]`.
/// Use the checked constructors or [`BetaSpec::validate`] before sampling.
#[derive(Clone, Debug, PartialEq)]
pub enum BetaSpec {
    Constant(f64),
    /// Uniform on `[lo, hi)`.
    UniformHalfOpen {
        lo: f64,
        hi: f64,
    },
    /// `(first iteration, spec)` pieces; the first piece starts at 0.
    PiecewiseSchedule(Vec<(usize, BetaSpec)>),
}

impl BetaSpec {
    pub fn constant(c: f64) -> Result<Self> {
        let spec = BetaSpec::Constant(c);
        spec.validate()?;
        Ok(spec)
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        let spec = BetaSpec::UniformHalfOpen { lo, hi };
        spec.validate()?;
        Ok(spec)
    }

    pub fn schedule(pieces: Vec<(usize, BetaSpec)>) -> Result<Self> {
        let spec = BetaSpec::PiecewiseSchedule(pieces);
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BetaSpec::Constant(c) => {
                if !c.is_finite() || !(0.0..=1.0).contains(c) {
                    return usage(format!("constant beta must lie in [0,1], mean is {c}"));
                }
            }
            BetaSpec::UniformHalfOpen { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() {
                    return usage("uniform beta needs finite bounds");
                }
                if *lo < 0.0 {
                    return usage(format!("uniform beta support must be nonnegative, lo = {lo}"));
                }
                if hi <= lo {
                    return usage(format!("uniform beta needs lo < hi, got [{lo}, {hi})"));
                }
                let mean = 0.5 * (lo + hi);
                if mean > 1.0 {
                    return usage(format!(
                        "beta mean must lie in [0,1], uniform:{lo}:{hi} has mean {mean}"
                    ));
                }
            }
            BetaSpec::PiecewiseSchedule(pieces) => {
                let Some((first, _)) = pieces.first() else {
                    return usage("schedule needs at least one piece");
                };
                if *first != 0 {
                    return usage(format!("schedule must start at iteration 0, starts at {first}"));
                }
                for w in pieces.windows(2) {
                    if w[1].0 <= w[0].0 {
                        return usage(format!(
                            "schedule switch points must be strictly increasing ({} then {})",
                            w[0].0, w[1].0
                        ));
                    }
                }
                for (_, spec) in pieces {
                    spec.validate()?;
                }
            }
        }
        Ok(())
    }

    /// The distribution in force at iteration `k`.
    pub fn at(&self, k: usize) -> &BetaSpec {
        match self {
            BetaSpec::PiecewiseSchedule(pieces) => {
                let idx = pieces.partition_point(|(start, _)| *start <= k);
                pieces[idx.saturating_sub(1)].1.at(k)
            }
            other => other,
        }
    }

    /// `E[beta_k]`.
    pub fn mean(&self, k: usize) -> f64 {
        match self.at(k) {
            BetaSpec::Constant(c) => *c,
            BetaSpec::UniformHalfOpen { lo, hi } => 0.5 * (lo + hi),
            BetaSpec::PiecewiseSchedule(_) => unreachable!("at() resolves schedules"),
        }
    }

    /// `Var[beta_k]`.
    pub fn variance(&self, k: usize) -> f64 {
        match self.at(k) {
            BetaSpec::Constant(_) => 0.0,
            BetaSpec::UniformHalfOpen { lo, hi } => (hi - lo) * (hi - lo) / 12.0,
            BetaSpec::PiecewiseSchedule(_) => unreachable!("at() resolves schedules"),
        }
    }

    /// Closed support bounds `[min, max]` (the uniform's right end is open).
    pub fn support(&self, k: usize) -> (f64, f64) {
        match self.at(k) {
            BetaSpec::Constant(c) => (*c, *c),
            BetaSpec::UniformHalfOpen { lo, hi } => (*lo, *hi),
            BetaSpec::PiecewiseSchedule(_) => unreachable!("at() resolves schedules"),
        }
    }
}

/// Draws `beta_k`. Degenerate distributions consume no randomness, so a
/// constant spec leaves the caller's stream untouched.
pub fn sample_beta<R: Rng + ?Sized>(spec: &BetaSpec, k: usize, rng: &mut R) -> f64 {
    match spec.at(k) {
        BetaSpec::Constant(c) => *c,
        BetaSpec::UniformHalfOpen { lo, hi } => {
            let u: f64 = rng.gen();
            // lo + (hi - lo) * u can round up to hi for u close to 1.
            let v = lo + (hi - lo) * u;
            if v < *hi {
                v
            } else {
                *lo
            }
        }
        BetaSpec::PiecewiseSchedule(_) => unreachable!("at() resolves schedules"),
    }
}

impl fmt::Display for BetaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BetaSpec::Constant(c) => write!(f, "constant:{c}"),
            BetaSpec::UniformHalfOpen { lo, hi } => write!(f, "uniform:{lo}:{hi}"),
            BetaSpec::PiecewiseSchedule(pieces) => {
                f.write_str("schedule:[")?;
                for (i, (k, spec)) in pieces.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{k}={spec}")?;
                }
                f.write_str("]")
            }
        }
    }
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| LabError::Parse(format!("invalid {what} '{s}'")))
}

/// Splits on commas that are not nested inside brackets.
fn split_top_level(s: &str) -> Result<Vec<&str>> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, ch) in s.char_indices() {
        match ch {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
        if depth < 0 {
            return Err(LabError::Parse(format!("unbalanced brackets in '{s}'")));
        }
    }
    if depth != 0 {
        return Err(LabError::Parse(format!("unbalanced brackets in '{s}'")));
    }
    parts.push(&s[start..]);
    Ok(parts)
}

fn invalid(e: LabError) -> LabError {
    match e {
        LabError::Usage(msg) => LabError::Parse(msg),
        other => other,
    }
}

impl FromStr for BetaSpec {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, rest) = s
            .split_once(':')
            .ok_or_else(|| LabError::Parse(format!("beta spec '{s}' has no ':'")))?;
        let spec = match head {
            "constant" => BetaSpec::Constant(parse_f64(rest, "constant")?),
            "uniform" => {
                let (lo, hi) = rest
                    .split_once(':')
                    .ok_or_else(|| LabError::Parse(format!("uniform spec '{s}' needs lo:hi")))?;
                BetaSpec::UniformHalfOpen {
                    lo: parse_f64(lo, "lower bound")?,
                    hi: parse_f64(hi, "upper bound")?,
                }
            }
            "schedule" => {
                let inner = rest
                    .strip_prefix('[')
                    .and_then(|r| r.strip_suffix(']'))
                    .ok_or_else(|| LabError::Parse(format!("schedule '{s}' must be bracketed")))?;
                let mut pieces = Vec::new();
                for part in split_top_level(inner)? {
                    let (k, spec) = part
                        .split_once('=')
                        .ok_or_else(|| LabError::Parse(format!("schedule piece '{part}' needs k=spec")))?;
                    let k = k
                        .trim()
                        .parse::<usize>()
                        .map_err(|_| LabError::Parse(format!("invalid switch iteration '{k}'")))?;
                    pieces.push((k, spec.parse()?));
                }
                BetaSpec::PiecewiseSchedule(pieces)
            }
            other => return Err(LabError::Parse(format!("unknown beta family '{other}'"))),
        };
        spec.validate().map_err(invalid)?;
        Ok(spec)
    }
}

/// Which backup drives an update.
#[derive(Clone, Debug, PartialEq)]
pub enum OperatorKind {
    Bellman,
    Consistent,
    Rso(BetaSpec),
}

impl OperatorKind {
    pub fn rso(spec: BetaSpec) -> Result<Self> {
        spec.validate()?;
        Ok(OperatorKind::Rso(spec))
    }

    /// Short label used in file names.
    pub fn slug(&self) -> String {
        self.to_string()
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                    c
                } else {
                    '_'
                }
            })
            .collect()
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OperatorKind::Bellman => f.write_str("bellman"),
            OperatorKind::Consistent => f.write_str("consistent"),
            OperatorKind::Rso(spec) => write!(f, "rso:{spec}"),
        }
    }
}

impl FromStr for OperatorKind {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "bellman" => Ok(OperatorKind::Bellman),
            "consistent" => Ok(OperatorKind::Consistent),
            other => match other.strip_prefix("rso:") {
                Some(spec) => Ok(OperatorKind::Rso(spec.parse()?)),
                None => Err(LabError::Parse(format!(
                    "unknown operator '{other}' (expected bellman, consistent or rso:<beta>)"
                ))),
            },
        }
    }
}

/// `R(x,a) + gamma * E_P max_b q(x',b)`.
pub fn bellman_backup(mdp: &TabularMdp, q: &QTable, x: usize, a: usize) -> Result<f64> {
    mdp.check_table(q)?;
    mdp.check_pair(x, a)?;
    Ok(mdp.lookahead(q, x, a))
}

/// Bellman backup that keeps `q(x,a)` as the continuation on self-transitions.
pub fn consistent_backup(mdp: &TabularMdp, q: &QTable, x: usize, a: usize) -> Result<f64> {
    mdp.check_table(q)?;
    mdp.check_pair(x, a)?;
    Ok(consistent_unchecked(mdp, q, x, a))
}

pub(crate) fn consistent_unchecked(mdp: &TabularMdp, q: &QTable, x: usize, a: usize) -> f64 {
    let cont: f64 = mdp
        .transition_row(x, a)
        .iter()
        .enumerate()
        .filter(|(_, p)| **p != 0.0)
        .map(|(y, p)| {
            let v = if y == x { q.get(x, a) } else { q.max_value(y) };
            p * v
        })
        .sum();
    mdp.reward(x, a) + mdp.gamma() * cont
}

/// Bellman backup minus `beta * (V(x) - q(x,a))`.
pub fn rso_backup(mdp: &TabularMdp, q: &QTable, x: usize, a: usize, beta: f64) -> Result<f64> {
    if beta.is_nan() || beta < 0.0 {
        return usage(format!("beta must be nonnegative, got {beta}"));
    }
    mdp.check_table(q)?;
    mdp.check_pair(x, a)?;
    Ok(rso_unchecked(mdp, q, x, a, beta))
}

pub(crate) fn rso_unchecked(mdp: &TabularMdp, q: &QTable, x: usize, a: usize, beta: f64) -> f64 {
    let lookahead = mdp.lookahead(q, x, a);
    if beta == 0.0 {
        lookahead
    } else {
        lookahead - beta * q.gap(x, a)
    }
}

/// Whether `candidate` lies between the RSO lower bound and the Bellman
/// upper bound for this `(x, a, beta)`, with 1e-12 absolute slack.
pub fn family_bounds_check(mdp: &TabularMdp, q: &QTable, x: usize, a: usize, candidate: f64, beta: f64) -> bool {
    if mdp.check_table(q).is_err() || mdp.check_pair(x, a).is_err() || (beta.is_nan() || beta < 0.0) {
        return false;
    }
    let upper = mdp.lookahead(q, x, a);
    let lower = upper - beta * q.gap(x, a);
    lower - FAMILY_TOL <= candidate && candidate <= upper + FAMILY_TOL
}

/// One observed transition for a model-free update. `next` is `None` when
/// the episode terminated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next: Option<usize>,
}

/// Single-sample analogue of the three backups. `beta` is ignored unless
/// `kind` is `Rso`; terminal transitions bootstrap from zero.
pub fn sampled_target(kind: &OperatorKind, gamma: f64, q: &QTable, t: Sample, beta: f64) -> Result<f64> {
    let Sample {
        state, action, next, ..
    } = t;
    if state >= q.n_states() || action >= q.n_actions() || next.is_some_and(|n| n >= q.n_states()) {
        return usage(format!(
            "transition ({state},{action}) -> {next:?} out of range for a {}x{} table",
            q.n_states(),
            q.n_actions()
        ));
    }
    if matches!(kind, OperatorKind::Rso(_)) && (beta.is_nan() || beta < 0.0) {
        return usage(format!("beta must be nonnegative, got {beta}"));
    }
    Ok(target_unchecked(kind, gamma, q, t, beta))
}

pub(crate) fn target_unchecked(kind: &OperatorKind, gamma: f64, q: &QTable, t: Sample, beta: f64) -> f64 {
    let Sample {
        state,
        action,
        reward,
        next,
    } = t;
    match kind {
        OperatorKind::Bellman => reward + next.map_or(0.0, |n| gamma * q.max_value(n)),
        OperatorKind::Consistent => {
            let cont = match next {
                None => 0.0,
                Some(n) if n == state => q.get(state, action),
                Some(n) => q.max_value(n),
            };
            reward + gamma * cont
        }
        OperatorKind::Rso(_) => {
            let cont = next.map_or(0.0, |n| gamma * q.max_value(n));
            reward + cont - beta * q.gap(state, action)
        }
    }
}

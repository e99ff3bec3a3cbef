//! Finite discounted MDPs, action-value tables and the exact value-iteration
//! solver that serves as ground truth for every other module.

use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{usage, LabError, Result};

const ROW_SUM_TOL: f64 = 1e-9;

/// A finite MDP `(X, A, P, R, gamma)` with dense transition rows.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    /// `reward[x * n_actions + a]`
    reward: Vec<f64>,
    /// `transition[(x * n_actions + a) * n_states + y]`
    transition: Vec<f64>,
}

impl TabularMdp {
    /// Builds an MDP from nested tables: `reward[x][a]` and
    /// `transition[x][a][x']`.
    pub fn new(gamma: f64, reward: Vec<Vec<f64>>, transition: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let n_states = reward.len();
        if n_states == 0 {
            return usage("an MDP needs at least one state");
        }
        let n_actions = reward[0].len();
        if n_actions == 0 {
            return usage("an MDP needs at least one action");
        }
        if transition.len() != n_states {
            return usage(format!(
                "transition table has {} states, reward table has {n_states}",
                transition.len()
            ));
        }
        let mut flat_r = Vec::with_capacity(n_states * n_actions);
        let mut flat_p = Vec::with_capacity(n_states * n_actions * n_states);
        for (x, (r_row, p_rows)) in reward.iter().zip(&transition).enumerate() {
            if r_row.len() != n_actions || p_rows.len() != n_actions {
                return usage(format!("state {x} does not have {n_actions} actions"));
            }
            flat_r.extend_from_slice(r_row);
            for (a, p) in p_rows.iter().enumerate() {
                if p.len() != n_states {
                    return usage(format!(
                        "transition row ({x},{a}) has length {}, expected {n_states}",
                        p.len()
                    ));
                }
                flat_p.extend_from_slice(p);
            }
        }
        let mdp = TabularMdp {
            n_states,
            n_actions,
            gamma,
            reward: flat_r,
            transition: flat_p,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Two states, two actions, deterministic transitions:
    /// `(0,a0) -> 0` with reward 1, `(0,a1) -> 1`, state 1 absorbing with
    /// reward 0, `gamma = 0.5`. Its optimal values are `Q*(0,a0) = 2` and
    /// zero elsewhere.
    pub fn two_state_chain() -> Self {
        TabularMdp::new(
            0.5,
            vec![vec![1.0, 0.0], vec![0.0, 0.0]],
            vec![
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            ],
        )
        .expect("two-state chain is well formed")
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return usage(format!("gamma must lie in [0,1), got {}", self.gamma));
        }
        if let Some(r) = self.reward.iter().find(|r| !r.is_finite()) {
            return usage(format!("reward {r} is not finite"));
        }
        for x in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = self.transition_row(x, a);
                if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                    return usage(format!("transition row ({x},{a}) has a negative or non-finite entry"));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return usage(format!("transition row ({x},{a}) sums to {sum}"));
                }
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn reward(&self, x: usize, a: usize) -> f64 {
        self.reward[x * self.n_actions + a]
    }

    /// `P(. | x, a)` as a slice over next states.
    pub fn transition_row(&self, x: usize, a: usize) -> &[f64] {
        let start = (x * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn max_abs_reward(&self) -> f64 {
        self.reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub(crate) fn check_pair(&self, x: usize, a: usize) -> Result<()> {
        if x >= self.n_states {
            return usage(format!("state {x} out of range (n_states = {})", self.n_states));
        }
        if a >= self.n_actions {
            return usage(format!("action {a} out of range (n_actions = {})", self.n_actions));
        }
        Ok(())
    }

    pub(crate) fn check_table(&self, q: &QTable) -> Result<()> {
        if q.n_states() != self.n_states || q.n_actions() != self.n_actions {
            return usage(format!(
                "Q-table is {}x{}, MDP is {}x{}",
                q.n_states(),
                q.n_actions(),
                self.n_states,
                self.n_actions
            ));
        }
        Ok(())
    }

    /// `R(x,a) + gamma * sum_x' P(x'|x,a) V(x')` with `V` the greedy value of `q`.
    /// Indices are assumed valid.
    pub(crate) fn lookahead(&self, q: &QTable, x: usize, a: usize) -> f64 {
        let cont: f64 = self
            .transition_row(x, a)
            .iter()
            .enumerate()
            .filter(|(_, p)| **p != 0.0)
            .map(|(y, p)| p * q.max_value(y))
            .sum();
        self.reward(x, a) + self.gamma * cont
    }

    /// One synchronous Bellman sweep.
    pub fn bellman_sweep(&self, q: &QTable) -> QTable {
        let mut next = QTable::zeros(self.n_states, self.n_actions);
        for x in 0..self.n_states {
            for a in 0..self.n_actions {
                next.values[x * self.n_actions + a] = self.lookahead(q, x, a);
            }
        }
        next
    }

    /// `||T_B q - q||_inf`.
    pub fn bellman_residual(&self, q: &QTable) -> f64 {
        self.bellman_sweep(q).sup_distance(q)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        text.parse()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_string()).map_err(|e| LabError::io(path, e))
    }
}

/// On-disk layout of an MDP file.
#[derive(Serialize, Deserialize)]
struct MdpFile {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    /// `reward[x][a]`
    reward: Vec<Vec<f64>>,
    /// `transition[x][a][x']`
    transition: Vec<Vec<Vec<f64>>>,
}

impl std::str::FromStr for TabularMdp {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        let file: MdpFile = toml::from_str(s).map_err(|e| LabError::Parse(e.to_string()))?;
        let mdp = TabularMdp::new(file.gamma, file.reward, file.transition)?;
        if mdp.n_states != file.n_states || mdp.n_actions != file.n_actions {
            return Err(LabError::Parse(format!(
                "declared size {}x{} does not match tables {}x{}",
                file.n_states, file.n_actions, mdp.n_states, mdp.n_actions
            )));
        }
        Ok(mdp)
    }
}

impl fmt::Display for TabularMdp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let file = MdpFile {
            n_states: self.n_states,
            n_actions: self.n_actions,
            gamma: self.gamma,
            reward: self.reward.chunks(self.n_actions).map(<[f64]>::to_vec).collect(),
            transition: (0..self.n_states)
                .map(|x| {
                    (0..self.n_actions)
                        .map(|a| self.transition_row(x, a).to_vec())
                        .collect()
                })
                .collect(),
        };
        let text = toml::to_string(&file).map_err(|_| fmt::Error)?;
        f.write_str(&text)
    }
}

/// Greedy value `V(x) = max_a Q(x,a)` and the lowest action attaining it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Greedy {
    pub value: f64,
    pub action: usize,
}

/// Dense state-action value table.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        QTable {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn for_mdp(mdp: &TabularMdp) -> Self {
        QTable::zeros(mdp.n_states(), mdp.n_actions())
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, Vec::len);
        if n_states == 0 || n_actions == 0 {
            return usage("Q-table must be non-empty");
        }
        let mut values = Vec::with_capacity(n_states * n_actions);
        for row in &rows {
            if row.len() != n_actions {
                return usage("Q-table rows must have equal length");
            }
            if row.iter().any(|v| !v.is_finite()) {
                return usage("Q-table entries must be finite");
            }
            values.extend_from_slice(row);
        }
        Ok(QTable {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, x: usize, a: usize) -> f64 {
        self.values[x * self.n_actions + a]
    }

    pub fn set(&mut self, x: usize, a: usize, v: f64) {
        self.values[x * self.n_actions + a] = v;
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.values[x * self.n_actions..(x + 1) * self.n_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn check_state(&self, x: usize) -> Result<()> {
        if x >= self.n_states {
            return usage(format!("state {x} out of range (n_states = {})", self.n_states));
        }
        Ok(())
    }

    /// Max over the row with lowest-index tie-break. Panics on a bad index.
    pub(crate) fn greedy(&self, x: usize) -> Greedy {
        argmax_first(self.row(x))
    }

    pub(crate) fn max_value(&self, x: usize) -> f64 {
        self.greedy(x).value
    }

    pub fn greedy_value(&self, x: usize) -> Result<Greedy> {
        self.check_state(x)?;
        Ok(self.greedy(x))
    }

    /// `V(x) - Q(x,a)`, never negative.
    pub fn action_gap(&self, x: usize, a: usize) -> Result<f64> {
        self.check_state(x)?;
        if a >= self.n_actions {
            return usage(format!("action {a} out of range (n_actions = {})", self.n_actions));
        }
        Ok(self.gap(x, a))
    }

    pub(crate) fn gap(&self, x: usize, a: usize) -> f64 {
        self.max_value(x) - self.get(x, a)
    }

    /// Greedy value for every state.
    pub fn state_values(&self) -> Vec<f64> {
        (0..self.n_states).map(|x| self.max_value(x)).collect()
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Maximum of a non-empty slice and the first index attaining it.
pub fn argmax_first(row: &[f64]) -> Greedy {
    let mut best = Greedy {
        value: row[0],
        action: 0,
    };
    for (a, &v) in row.iter().enumerate().skip(1) {
        if v > best.value {
            best = Greedy { value: v, action: a };
        }
    }
    best
}

/// Value iteration with the Bellman operator until `||T_B Q - Q||_inf <= tol`.
pub fn exact_q_star(mdp: &TabularMdp, tol: f64, max_iters: usize) -> Result<QTable> {
    if tol.is_nan() || tol <= 0.0 {
        return usage(format!("tolerance must be positive, got {tol}"));
    }
    let mut q = QTable::for_mdp(mdp);
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let next = mdp.bellman_sweep(&q);
        let delta = next.sup_distance(&q);
        q = next;
        // ||T q' - q'|| <= gamma * ||q' - q|| <= delta
        residual = mdp.gamma() * delta;
        if residual <= tol {
            return Ok(q);
        }
    }
    Err(LabError::Convergence {
        iterations: max_iters,
        residual,
    })
}

/// Random MDP with Dirichlet(1,...,1) transition rows and `U[0,1]` rewards.
pub fn random_mdp(seed: u64, n_states: usize, n_actions: usize, gamma: f64) -> Result<TabularMdp> {
    if n_states == 0 || n_actions == 0 {
        return usage("random MDP needs at least one state and one action");
    }
    if !(0.0..1.0).contains(&gamma) {
        return usage(format!("gamma must lie in [0,1), got {gamma}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reward = vec![vec![0.0; n_actions]; n_states];
    let mut transition = vec![vec![vec![0.0; n_states]; n_actions]; n_states];
    for x in 0..n_states {
        for a in 0..n_actions {
            reward[x][a] = rng.gen::<f64>();
            let row = &mut transition[x][a];
            for p in row.iter_mut() {
                // Exp(1) via inversion; normalising gives a uniform point on the simplex.
                *p = -(1.0 - rng.gen::<f64>()).ln();
            }
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter_mut().for_each(|p| *p /= total);
            } else {
                row.fill(1.0 / n_states as f64);
            }
        }
    }
    TabularMdp::new(gamma, reward, transition)
}

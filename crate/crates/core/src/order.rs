//! Statistical checks of how the choice of `beta` distribution orders the
//! resulting action gaps: stochastic order, convex order and the one-step
//! variance decomposition.
//!
//! Tolerances come from the sample sizes:
//!
//! * stochastic order: `3 * 1.96 * sqrt(0.25 / n)`, three times the widest
//!   95% binomial confidence half-width of an ECDF value built from `n`
//!   trials ([`stochastic_order_tolerance`]);
//! * convex order: `3 * sqrt(s_hat^2 / n_hat + s_tilde^2 / n_tilde)`, three
//!   standard errors of the difference of sample means. Stop-loss values
//!   `E[(X - c)+]` are 1-Lipschitz transforms of `X`, so their standard
//!   errors are bounded by the same quantity ([`convex_order_tolerance`]).

use std::io::Write;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{usage, LabError, Result};
use crate::mdp::{exact_q_star, QTable, TabularMdp};
use crate::operators::{rso_backup, sample_beta, BetaSpec, OperatorKind};
use crate::viter::{iterate_operator, tail_start};

/// Gap below which a pair counts as optimal under `Q*`.
const OPTIMAL_TOL: f64 = 1e-9;

/// Empirical sample of a gap random variable.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub values: Vec<f64>,
    pub label: String,
    pub seeds: Range<u64>,
    pub warnings: Vec<String>,
}

impl SampleSet {
    pub fn new(values: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return usage("sample set must be non-empty");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return usage("sample set entries must be finite");
        }
        Ok(SampleSet {
            values,
            label: label.into(),
            seeds: 0..0,
            warnings: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Unbiased sample variance (0 for a single value).
    pub fn variance(&self) -> f64 {
        welford(self.values.iter().copied()).1
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn sorted(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        v
    }

    /// `E[(X - c)+]` under the empirical distribution.
    pub fn stop_loss(&self, c: f64) -> f64 {
        self.values.iter().map(|v| (v - c).max(0.0)).sum::<f64>() / self.values.len() as f64
    }
}

/// Running mean and unbiased variance. Identical inputs give exactly zero
/// variance.
fn welford(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut n = 0usize;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for v in values {
        n += 1;
        if n == 1 {
            mean = v;
            continue;
        }
        let d = v - mean;
        mean += d / n as f64;
        m2 += d * (v - mean);
    }
    let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
    (mean, var)
}

/// Tail-minimum gap at `pair` over `n_trials` independent sample paths with
/// seeds `base_seed..base_seed + n_trials`, each started from `Q_0 = 0`.
pub fn gap_distribution(
    mdp: &TabularMdp,
    kind: &OperatorKind,
    pair: (usize, usize),
    n_trials: usize,
    k_max: usize,
    base_seed: u64,
) -> Result<SampleSet> {
    let (x, a) = pair;
    mdp.check_pair(x, a)?;
    if n_trials == 0 {
        return usage("need at least one trial");
    }
    let seeds = base_seed..base_seed + n_trials as u64;
    let label = format!("{kind} gap at ({x},{a})");

    let q_star = exact_q_star(mdp, 1e-12, 1_000_000)?;
    if q_star.gap(x, a) <= OPTIMAL_TOL {
        return Ok(SampleSet {
            values: vec![0.0; n_trials],
            label,
            seeds,
            warnings: vec![format!(
                "pair ({x},{a}) is optimal under Q*; its gap is identically zero"
            )],
        });
    }

    let q0 = QTable::for_mdp(mdp);
    let idx = x * mdp.n_actions() + a;
    let start = tail_start(k_max);
    let values = seeds
        .clone()
        .into_par_iter()
        .map(|seed| {
            let (_, trace) = iterate_operator(mdp, kind, &q0, k_max, seed, 1)?;
            let tail_min = trace
                .snapshots()
                .filter(|(k, _)| *k >= start)
                .map(|(_, g)| g[idx])
                .fold(f64::INFINITY, f64::min);
            if tail_min.is_finite() {
                Ok(tail_min)
            } else {
                Err(LabError::Invariant(format!("gap at seed {seed} is not finite")))
            }
        })
        .collect::<Result<Vec<f64>>>()?;

    Ok(SampleSet {
        values,
        label,
        seeds,
        warnings: Vec::new(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub pass: bool,
    /// Largest amount by which the ordering is violated (0 if never).
    pub max_violation: f64,
    /// Where the largest violation occurs (sample point or threshold).
    pub at: Option<f64>,
    pub tol: f64,
    pub mean_difference: Option<f64>,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} (max violation {:.6} vs tol {:.6}",
            if self.pass { "PASS" } else { "FAIL" },
            self.max_violation,
            self.tol
        )?;
        if let Some(at) = self.at {
            write!(f, " at {at:.6}")?;
        }
        if let Some(d) = self.mean_difference {
            write!(f, ", mean difference {d:.6}")?;
        }
        f.write_str(")")
    }
}

/// `3 * 1.96 * sqrt(0.25 / n)`.
pub fn stochastic_order_tolerance(n: usize) -> f64 {
    3.0 * 1.96 * (0.25 / n as f64).sqrt()
}

/// `3 * sqrt(s_hat^2 / n_hat + s_tilde^2 / n_tilde)`.
pub fn convex_order_tolerance(hat: &SampleSet, tilde: &SampleSet) -> f64 {
    3.0 * (hat.variance() / hat.len() as f64 + tilde.variance() / tilde.len() as f64).sqrt()
}

/// Empirical CDFs of both sets evaluated at every pooled sample point.
pub fn ecdf_pairs(hat: &SampleSet, tilde: &SampleSet) -> Vec<(f64, f64, f64)> {
    let h = hat.sorted();
    let t = tilde.sorted();
    let mut pooled: Vec<f64> = h.iter().chain(&t).copied().collect();
    pooled.sort_by(f64::total_cmp);
    pooled.dedup();
    let (nh, nt) = (h.len() as f64, t.len() as f64);
    let (mut i, mut j) = (0, 0);
    pooled
        .into_iter()
        .map(|p| {
            while i < h.len() && h[i] <= p {
                i += 1;
            }
            while j < t.len() && t[j] <= p {
                j += 1;
            }
            (p, i as f64 / nh, j as f64 / nt)
        })
        .collect()
}

/// `hat >=_st tilde` up to `tol`: `F_hat(t) <= F_tilde(t) + tol` at every
/// pooled sample point.
pub fn check_stochastic_order(hat: &SampleSet, tilde: &SampleSet, tol: f64) -> Verdict {
    let mut worst = 0.0;
    let mut at = None;
    for (p, fh, ft) in ecdf_pairs(hat, tilde) {
        let v = fh - ft;
        if v > worst {
            worst = v;
            at = Some(p);
        }
    }
    Verdict {
        pass: worst <= tol,
        max_violation: worst,
        at,
        tol,
        mean_difference: None,
    }
}

/// `n` evenly spaced points spanning the pooled sample range.
pub fn default_threshold_grid(hat: &SampleSet, tilde: &SampleSet, n: usize) -> Vec<f64> {
    let lo = hat.min().min(tilde.min());
    let hi = hat.max().max(tilde.max());
    if n <= 1 || hi <= lo {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

pub const DEFAULT_GRID_POINTS: usize = 41;

/// `hat >=_cx tilde` up to `tol`: equal means and
/// `E[(hat - c)+] >= E[(tilde - c)+] - tol` on the grid.
pub fn check_convex_order(hat: &SampleSet, tilde: &SampleSet, grid: &[f64], tol: f64) -> Verdict {
    let mean_diff = hat.mean() - tilde.mean();
    let mut worst = 0.0;
    let mut at = None;
    for &c in grid {
        let shortfall = tilde.stop_loss(c) - hat.stop_loss(c);
        if shortfall > worst {
            worst = shortfall;
            at = Some(c);
        }
    }
    Verdict {
        pass: mean_diff.abs() <= tol && worst <= tol,
        max_violation: worst,
        at,
        tol,
        mean_difference: Some(mean_diff),
    }
}

/// Monte Carlo variance of the RSO backup at a fixed `q` against the
/// closed form `Var[beta] * (V(x) - q(x,a))^2`.
pub fn one_step_variance_identity(
    mdp: &TabularMdp,
    q: &QTable,
    pair: (usize, usize),
    spec: &BetaSpec,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let (x, a) = pair;
    spec.validate()?;
    mdp.check_table(q)?;
    mdp.check_pair(x, a)?;
    if n_samples < 2 {
        return usage("need at least two samples for a variance");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let beta = sample_beta(spec, 0, &mut rng);
        draws.push(rso_backup(mdp, q, x, a, beta)?);
    }
    let (_, mc) = welford(draws.into_iter());
    let gap = q.gap(x, a);
    Ok((mc, spec.variance(0) * gap * gap))
}

/// Writes `t,cdf_hat,cdf_tilde` rows at every pooled sample point.
pub fn write_ecdf_csv<W: Write>(hat: &SampleSet, tilde: &SampleSet, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "cdf_hat", "cdf_tilde"])?;
    for (t, fh, ft) in ecdf_pairs(hat, tilde) {
        w.write_record([t.to_string(), fh.to_string(), ft.to_string()])?;
    }
    w.flush().map_err(|e| LabError::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn set(v: &[f64]) -> SampleSet {
        SampleSet::new(v.to_vec(), "t").unwrap()
    }

    #[test]
    fn stochastic_order_examples() {
        let a = set(&[0.3, 1.2, 5.0, 2.2]);
        let v = check_stochastic_order(&a, &a, 0.0);
        assert!(v.pass);
        assert_eq!(v.max_violation, 0.0);

        assert!(check_stochastic_order(&set(&[2.0, 3.0]), &set(&[1.0, 2.0]), 0.0).pass);
        let v = check_stochastic_order(&set(&[0.0]), &set(&[1.0]), 0.0);
        assert!(!v.pass);
        assert_eq!(v.max_violation, 1.0);
        assert_eq!(v.at, Some(0.0));
        // reversed order but within tolerance
        assert!(check_stochastic_order(&set(&[1.0, 2.0]), &set(&[1.0, 2.5]), 0.5).pass);
    }

    #[test]
    fn convex_order_examples() {
        let a = set(&[1.0, 4.0, -2.0]);
        let grid = default_threshold_grid(&a, &a, DEFAULT_GRID_POINTS);
        assert!(check_convex_order(&a, &a, &grid, 0.0).pass);

        let spread = set(&[-1.0, 1.0]);
        let point = set(&[0.0, 0.0]);
        let grid = default_threshold_grid(&spread, &point, DEFAULT_GRID_POINTS);
        assert_eq!(grid.len(), 41);
        assert_eq!((grid[0], grid[40]), (-1.0, 1.0));
        assert!(check_convex_order(&spread, &point, &grid, 0.0).pass);
        let v = check_convex_order(&point, &spread, &grid, 0.0);
        assert!(!v.pass);
        assert_relative_eq!(v.max_violation, 0.5);

        // ordered spread but different means
        assert!(!check_convex_order(&set(&[-1.0, 3.0]), &point, &grid, 0.1).pass);
    }

    #[test]
    fn tolerances() {
        assert_relative_eq!(stochastic_order_tolerance(1000), 3.0 * 1.96 * (0.25f64 / 1000.0).sqrt());
        let a = set(&[1.0, 1.0, 1.0]);
        assert_eq!(convex_order_tolerance(&a, &a), 0.0);
        let b = set(&[0.0, 2.0]);
        assert_relative_eq!(convex_order_tolerance(&a, &b), 3.0 * (2.0f64 / 2.0).sqrt());
    }

    #[test]
    fn sample_set_rejects_bad_input() {
        assert!(SampleSet::new(vec![], "e").is_err());
        assert!(SampleSet::new(vec![f64::NAN], "e").is_err());
        assert_eq!(set(&[3.0; 5]).variance(), 0.0);
    }

    #[test]
    fn ecdf_on_ties() {
        let rows = ecdf_pairs(&set(&[1.0, 1.0, 2.0]), &set(&[2.0]));
        assert_eq!(rows, vec![(1.0, 2.0 / 3.0, 0.0), (2.0, 1.0, 1.0)]);
        let mut buf = Vec::new();
        write_ecdf_csv(&set(&[1.0]), &set(&[2.0]), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,cdf_hat,cdf_tilde\n1,1,0\n2,1,1\n");
    }

    #[test]
    fn gap_distribution_degenerate_cases() {
        let mdp = TabularMdp::two_state_chain();
        let bell = gap_distribution(&mdp, &OperatorKind::Bellman, (0, 1), 20, 200, 0).unwrap();
        assert!(bell.values.iter().all(|g| (g - 2.0).abs() < 1e-6));

        let c1 = OperatorKind::Rso(BetaSpec::Constant(1.0));
        let s = gap_distribution(&mdp, &c1, (0, 1), 20, 100, 0).unwrap();
        assert!(s.values.iter().all(|g| *g == s.values[0]));
        assert_eq!(s.seeds, 0..20);

        let opt = gap_distribution(&mdp, &c1, (0, 0), 5, 100, 0).unwrap();
        assert_eq!(opt.values, vec![0.0; 5]);
        assert_eq!(opt.warnings.len(), 1);

        assert!(gap_distribution(&mdp, &c1, (2, 0), 5, 100, 0).is_err());
    }

    #[test]
    fn uniform_gap_mean_exceeds_true_gap() {
        let mdp = TabularMdp::two_state_chain();
        let u = OperatorKind::Rso(BetaSpec::uniform(0.0, 2.0).unwrap());
        let s = gap_distribution(&mdp, &u, (0, 1), 1000, 500, 0).unwrap();
        assert!(s.mean() >= 2.0);
        assert!(s.min() >= 2.0 - 1e-6);
    }

    #[test]
    fn variance_identity_examples() {
        let mdp = TabularMdp::two_state_chain();
        let q_star = exact_q_star(&mdp, 1e-12, 10_000).unwrap();
        let c1 = BetaSpec::Constant(1.0);
        assert_eq!(
            one_step_variance_identity(&mdp, &q_star, (0, 1), &c1, 10_000, 1).unwrap(),
            (0.0, 0.0)
        );
        let u = BetaSpec::uniform(0.0, 2.0).unwrap();
        assert_eq!(
            one_step_variance_identity(&mdp, &q_star, (0, 0), &u, 10_000, 1).unwrap(),
            (0.0, 0.0)
        );
        let (mc, an) = one_step_variance_identity(&mdp, &q_star, (0, 1), &u, 100_000, 1).unwrap();
        assert_relative_eq!(an, 4.0 / 3.0, max_relative = 1e-9);
        assert!(((mc - an) / an).abs() < 0.05);
    }

    #[test]
    fn analytic_variance_grows_with_beta_variance() {
        let mdp = TabularMdp::two_state_chain();
        let q_star = exact_q_star(&mdp, 1e-12, 10_000).unwrap();
        let mut last = -1.0;
        for h in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let spec = if h == 0.0 {
                BetaSpec::Constant(1.0)
            } else {
                BetaSpec::uniform(1.0 - h, 1.0 + h).unwrap()
            };
            let (_, an) = one_step_variance_identity(&mdp, &q_star, (0, 1), &spec, 100, 0).unwrap();
            assert!(an > last);
            last = an;
        }
    }
}

//! Synchronous sample-path iteration `Q_{k+1} = T_k Q_k` and the checks run
//! against its trace.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{usage, LabError, Result};
use crate::mdp::{QTable, TabularMdp};
use crate::operators::{consistent_unchecked, rso_unchecked, sample_beta, OperatorKind};

pub const DEFAULT_SNAPSHOT_STRIDE: usize = 10;
pub const DEFAULT_K_MAX: usize = 5000;

const TAIL_SLACK: f64 = 1e-9;

/// State of the iteration at one `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    /// `V_k(x)` for every state.
    pub values: Vec<f64>,
    /// `||V_{k+1} - V_k||_inf`; `None` on the last record.
    pub delta: Option<f64>,
    /// The `beta_k` used to produce `Q_{k+1}`; `None` for deterministic
    /// operators and on the last record.
    pub beta: Option<f64>,
    /// `V_k(x) - Q_k(x,a)` flattened row-major, present every `stride`
    /// iterations and on the last record.
    pub gaps: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationTrace {
    pub n_states: usize,
    pub n_actions: usize,
    pub stride: usize,
    pub records: Vec<IterationRecord>,
}

impl IterationTrace {
    pub fn final_record(&self) -> &IterationRecord {
        self.records.last().expect("trace is never empty")
    }

    pub fn k_final(&self) -> usize {
        self.final_record().k
    }

    pub fn snapshots(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.records.iter().filter_map(|r| r.gaps.as_deref().map(|g| (r.k, g)))
    }

    /// Writes `k,delta,beta,gap_x_a...`; gap cells are empty between snapshots.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["k".to_string(), "sup_delta".to_string(), "beta".to_string()];
        for x in 0..self.n_states {
            for a in 0..self.n_actions {
                header.push(format!("gap_{x}_{a}"));
            }
        }
        w.write_record(&header)?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.records {
            let mut row = vec![r.k.to_string(), opt(r.delta), opt(r.beta)];
            match &r.gaps {
                Some(g) => row.extend(g.iter().map(f64::to_string)),
                None => row.extend(std::iter::repeat_n(String::new(), self.n_states * self.n_actions)),
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| LabError::io("<csv>", e))?;
        Ok(())
    }
}

fn gap_snapshot(q: &QTable) -> Vec<f64> {
    (0..q.n_states())
        .flat_map(|x| (0..q.n_actions()).map(move |a| q.gap(x, a)))
        .collect()
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Applies the chosen operator to every `(x,a)` at once, `k_max` times.
/// RSO draws one `beta_k` per sweep from a stream seeded by `seed`.
pub fn iterate_operator(
    mdp: &TabularMdp,
    kind: &OperatorKind,
    q0: &QTable,
    k_max: usize,
    seed: u64,
    snapshot_stride: usize,
) -> Result<(QTable, IterationTrace)> {
    if k_max == 0 {
        return usage("k_max must be at least 1");
    }
    if snapshot_stride == 0 {
        return usage("snapshot stride must be at least 1");
    }
    mdp.check_table(q0)?;
    if let OperatorKind::Rso(spec) = kind {
        spec.validate()?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    let mut q = q0.clone();
    let mut next = QTable::for_mdp(mdp);
    let mut records = Vec::with_capacity(k_max + 1);
    let mut values = q.state_values();

    for k in 0..=k_max {
        let gaps = (k % snapshot_stride == 0 || k == k_max).then(|| gap_snapshot(&q));
        if k == k_max {
            records.push(IterationRecord {
                k,
                values,
                delta: None,
                beta: None,
                gaps,
            });
            break;
        }

        let beta = match kind {
            OperatorKind::Rso(spec) => Some(sample_beta(spec, k, &mut rng)),
            _ => None,
        };
        for x in 0..n {
            for a in 0..m {
                let v = match kind {
                    OperatorKind::Bellman => mdp.lookahead(&q, x, a),
                    OperatorKind::Consistent => consistent_unchecked(mdp, &q, x, a),
                    OperatorKind::Rso(_) => rso_unchecked(mdp, &q, x, a, beta.unwrap_or(0.0)),
                };
                next.set(x, a, v);
            }
        }
        std::mem::swap(&mut q, &mut next);

        let next_values = q.state_values();
        let delta = sup_diff(&next_values, &values);
        records.push(IterationRecord {
            k,
            values,
            delta: Some(delta),
            beta,
            gaps,
        });
        values = next_values;
    }

    Ok((
        q,
        IterationTrace {
            n_states: n,
            n_actions: m,
            stride: snapshot_stride,
            records,
        },
    ))
}

/// Final-iterate accuracy and finite-horizon gap estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub k_final: usize,
    /// First iteration included in the tail window.
    pub tail_start: usize,
    /// `|V_k(x) - V*(x)|` at the last iteration.
    pub value_errors: Vec<f64>,
    /// Minimum of `V_k(x) - Q_k(x,a)` over tail snapshots, row-major.
    pub tail_min_gaps: Vec<f64>,
    /// `V*(x) - Q*(x,a)`, row-major.
    pub baseline_gaps: Vec<f64>,
    /// Gaps at the last iteration, row-major.
    pub final_gaps: Vec<f64>,
    pub n_actions: usize,
}

impl ConvergenceReport {
    pub fn max_value_error(&self) -> f64 {
        self.value_errors.iter().fold(0.0, |m, v| m.max(*v))
    }

    /// `min over pairs of tail_min - baseline`; nonnegative for a gap-increasing run.
    pub fn min_gap_excess(&self) -> f64 {
        self.tail_min_gaps
            .iter()
            .zip(&self.baseline_gaps)
            .map(|(t, b)| t - b)
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest `tail_min - baseline` among pairs that are suboptimal under `Q*`.
    pub fn max_strict_increase(&self, optimal_tol: f64) -> Option<f64> {
        self.tail_min_gaps
            .iter()
            .zip(&self.baseline_gaps)
            .filter(|(_, b)| **b > optimal_tol)
            .map(|(t, b)| t - b)
            .reduce(f64::max)
    }

    /// Every pair that is suboptimal under `Q*` ends at least `margin` below
    /// the greedy value.
    pub fn suboptimal_pairs_stay_below(&self, optimal_tol: f64, margin: f64) -> bool {
        self.baseline_gaps
            .iter()
            .zip(&self.final_gaps)
            .filter(|(b, _)| **b > optimal_tol)
            .all(|(_, g)| *g > margin)
    }

    pub fn gap_at(&self, x: usize, a: usize) -> f64 {
        self.tail_min_gaps[x * self.n_actions + a]
    }
}

/// First iteration of the tail window used to estimate `liminf` gaps: the
/// last tenth of the run, at least one iteration.
pub fn tail_start(k_final: usize) -> usize {
    let len = (k_final / 10).max(1);
    (k_final + 1).saturating_sub(len)
}

pub fn convergence_report(trace: &IterationTrace, q_star: &QTable) -> Result<ConvergenceReport> {
    if trace.records.is_empty() {
        return usage("empty trace");
    }
    if q_star.n_states() != trace.n_states || q_star.n_actions() != trace.n_actions {
        return usage(format!(
            "Q* is {}x{}, trace is {}x{}",
            q_star.n_states(),
            q_star.n_actions(),
            trace.n_states,
            trace.n_actions
        ));
    }
    let last = trace.final_record();
    let k_final = last.k;
    let v_star = q_star.state_values();
    let value_errors = last.values.iter().zip(&v_star).map(|(v, s)| (v - s).abs()).collect();

    let start = tail_start(k_final);
    let mut tail_min = vec![f64::INFINITY; trace.n_states * trace.n_actions];
    for (_, gaps) in trace.snapshots().filter(|(k, _)| *k >= start) {
        for (m, g) in tail_min.iter_mut().zip(gaps) {
            *m = m.min(*g);
        }
    }
    let final_gaps = last
        .gaps
        .clone()
        .ok_or_else(|| LabError::Usage("trace has no final gap snapshot".into()))?;

    Ok(ConvergenceReport {
        k_final,
        tail_start: start,
        value_errors,
        tail_min_gaps: tail_min,
        baseline_gaps: gap_snapshot(q_star),
        final_gaps,
        n_actions: trace.n_actions,
    })
}

/// Checks `V_{k+1}(x) - V_k(x) >= -gamma^k ||V_1 - V_0||_inf` at every `k`
/// and `x`, with absolute slack 1e-9.
pub fn geometric_tail_check(trace: &IterationTrace, gamma: f64) -> bool {
    first_tail_violation(trace, gamma).is_none()
}

/// The first `(k, x)` breaking the geometric lower bound, if any.
pub fn first_tail_violation(trace: &IterationTrace, gamma: f64) -> Option<(usize, usize)> {
    let recs = &trace.records;
    if recs.len() < 2 {
        return None;
    }
    let scale = sup_diff(&recs[1].values, &recs[0].values);
    let mut decay = 1.0;
    for w in recs.windows(2) {
        let bound = -decay * scale - TAIL_SLACK;
        for (x, (next, cur)) in w[1].values.iter().zip(&w[0].values).enumerate() {
            if next - cur < bound {
                return Some((w[0].k, x));
            }
        }
        decay *= gamma;
    }
    None
}

/// Checks that `V_k(x) + f_k` never decreases, where
/// `f_k = ||V_1 - V_0||_inf * sum_{l<k} gamma^l`.
pub fn auxiliary_monotone_check(trace: &IterationTrace, gamma: f64) -> bool {
    let recs = &trace.records;
    if recs.len() < 2 {
        return true;
    }
    let scale = sup_diff(&recs[1].values, &recs[0].values);
    let mut f = 0.0;
    let mut pow = 1.0;
    for w in recs.windows(2) {
        let f_next = f + scale * pow;
        let ok = w[0]
            .values
            .iter()
            .zip(&w[1].values)
            .all(|(cur, next)| next + f_next >= cur + f - TAIL_SLACK);
        if !ok {
            return false;
        }
        f = f_next;
        pow *= gamma;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{exact_q_star, random_mdp};
    use crate::operators::BetaSpec;

    fn u02() -> OperatorKind {
        OperatorKind::Rso(BetaSpec::uniform(0.0, 2.0).unwrap())
    }

    #[test]
    fn bellman_obeys_contraction_bound() {
        let mdp = random_mdp(11, 6, 3, 0.9).unwrap();
        let q_star = exact_q_star(&mdp, 1e-13, 100_000).unwrap();
        let q0 = QTable::for_mdp(&mdp);
        let init = q0.sup_distance(&q_star);
        for k_max in [1, 10, 100, 300] {
            let (q, _) = iterate_operator(&mdp, &OperatorKind::Bellman, &q0, k_max, 0, 10).unwrap();
            let bound = 0.9f64.powi(k_max as i32) * init;
            assert!(q.sup_distance(&q_star) <= bound + 1e-10, "k={k_max}");
        }
    }

    #[test]
    fn rso_on_two_state_chain_converges() {
        let mdp = TabularMdp::two_state_chain();
        let q0 = QTable::for_mdp(&mdp);
        for seed in 0..5 {
            let (q, trace) = iterate_operator(&mdp, &u02(), &q0, 500, seed, 10).unwrap();
            assert!((q.greedy_value(0).unwrap().value - 2.0).abs() < 1e-3);
            assert!(geometric_tail_check(&trace, mdp.gamma()));
            assert!(auxiliary_monotone_check(&trace, mdp.gamma()));
        }
    }

    #[test]
    fn traces_are_deterministic() {
        let mdp = random_mdp(2, 5, 3, 0.9).unwrap();
        let q0 = QTable::for_mdp(&mdp);
        let a = iterate_operator(&mdp, &u02(), &q0, 300, 9, 7).unwrap();
        let b = iterate_operator(&mdp, &u02(), &q0, 300, 9, 7).unwrap();
        assert_eq!(a, b);
        let c = iterate_operator(&mdp, &u02(), &q0, 300, 10, 7).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn trace_layout() {
        let mdp = TabularMdp::two_state_chain();
        let (_, trace) = iterate_operator(&mdp, &u02(), &QTable::for_mdp(&mdp), 25, 1, 10).unwrap();
        let ks: Vec<usize> = trace.records.iter().map(|r| r.k).collect();
        assert_eq!(ks, (0..=25).collect::<Vec<_>>());
        let snaps: Vec<usize> = trace.snapshots().map(|(k, _)| k).collect();
        assert_eq!(snaps, vec![0, 10, 20, 25]);
        assert!(trace.records[..25]
            .iter()
            .all(|r| r.beta.is_some() && r.delta.is_some()));
        assert!(trace.final_record().beta.is_none());

        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,sup_delta,beta,gap_0_0,gap_0_1,gap_1_0,gap_1_1\n"));
        assert_eq!(text.lines().count(), 27);
    }

    #[test]
    fn usage_errors() {
        let mdp = TabularMdp::two_state_chain();
        let q0 = QTable::for_mdp(&mdp);
        assert!(iterate_operator(&mdp, &OperatorKind::Bellman, &q0, 0, 0, 1).is_err());
        assert!(iterate_operator(&mdp, &OperatorKind::Bellman, &q0, 5, 0, 0).is_err());
        let bad = QTable::zeros(3, 2);
        assert!(matches!(
            iterate_operator(&mdp, &OperatorKind::Bellman, &bad, 5, 0, 1),
            Err(LabError::Usage(_))
        ));
        assert!(iterate_operator(&mdp, &OperatorKind::Rso(BetaSpec::Constant(2.0)), &q0, 5, 0, 1).is_err());
    }

    #[test]
    fn report_examples() {
        let mdp = random_mdp(5, 4, 3, 0.8).unwrap();
        let q_star = exact_q_star(&mdp, 1e-13, 100_000).unwrap();
        let q0 = QTable::for_mdp(&mdp);
        let (_, trace) = iterate_operator(&mdp, &OperatorKind::Bellman, &q0, 2000, 0, 10).unwrap();
        let rep = convergence_report(&trace, &q_star).unwrap();
        for (t, b) in rep.tail_min_gaps.iter().zip(&rep.baseline_gaps) {
            assert!((t - b).abs() < 1e-6);
        }
        assert!(rep.max_value_error() < 1e-9);

        let m2 = TabularMdp::two_state_chain();
        let m2_star = exact_q_star(&m2, 1e-13, 10_000).unwrap();
        let (_, trace) = iterate_operator(&m2, &u02(), &QTable::for_mdp(&m2), 2000, 3, 10).unwrap();
        let rep = convergence_report(&trace, &m2_star).unwrap();
        assert!(rep.gap_at(0, 1) >= 2.0 - 1e-6);
        assert!(rep.suboptimal_pairs_stay_below(1e-9, 0.0));

        let (_, short) = iterate_operator(&m2, &u02(), &QTable::for_mdp(&m2), 1, 3, 10).unwrap();
        let single = IterationTrace {
            records: short.records[..1].to_vec(),
            ..short
        };
        let rep = convergence_report(&single, &m2_star).unwrap();
        assert_eq!(rep.tail_min_gaps, single.records[0].gaps.clone().unwrap());
        assert_eq!(rep.final_gaps, rep.tail_min_gaps);

        assert!(convergence_report(&trace, &QTable::zeros(3, 2)).is_err());
    }

    #[test]
    fn tail_window() {
        assert_eq!(tail_start(0), 0);
        assert_eq!(tail_start(10), 10);
        assert_eq!(tail_start(19), 19);
        assert_eq!(tail_start(5000), 4501);
    }

    #[test]
    fn geometric_tail_detects_violation() {
        let mdp = random_mdp(1, 5, 2, 0.9).unwrap();
        let (_, trace) = iterate_operator(&mdp, &OperatorKind::Bellman, &QTable::for_mdp(&mdp), 200, 0, 10).unwrap();
        assert!(geometric_tail_check(&trace, 0.9));
        let (_, trace) = iterate_operator(&mdp, &OperatorKind::Consistent, &QTable::for_mdp(&mdp), 200, 0, 10).unwrap();
        assert!(geometric_tail_check(&trace, 0.9));

        let mut broken = trace.clone();
        for v in broken.records[150].values.iter_mut() {
            *v -= 1.0;
        }
        assert!(!geometric_tail_check(&broken, 0.9));
        assert_eq!(first_tail_violation(&broken, 0.9).map(|(k, _)| k), Some(149));
        assert!(!auxiliary_monotone_check(&broken, 0.9));
    }
}

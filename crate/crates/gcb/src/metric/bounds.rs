//! Value-difference bound verification.
//!
//! The computed metric upper-bounds |V(s_i,g_i) - V(s_j,g_j)| for the same
//! policy, and alpha-weighted sums of per-goal metrics bound value
//! differences under any nonnegative linear combination of goal rewards.
//! Both checks run exhaustively over the full paired product when it is
//! small enough, else over a seeded sample of pair-pairs.

use super::{FormMode, PairedMetric, WOrder};
use crate::error::{Error, Result};
use crate::gcmdp::{policy_evaluation, policy_evaluation_reward, Gcmdp, GoalPolicy, ValueTable};
use crate::rng;
use rand::Rng;
use serde::Serialize;

/// Full pair-pair product sizes above this are sampled instead of
/// enumerated.
pub const EXHAUSTIVE_AXIS_CAP: usize = 3600;
const SAMPLED_PAIRS: usize = 2_000_000;

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub checked: u64,
    pub exhaustive: bool,
    pub max_violation: f64,
    /// ((s_i, g_i), (s_j, g_j)) attaining the max violation, if any > 0.
    pub worst_pair: Option<((usize, usize), (usize, usize))>,
    /// Smallest slack d - |dV| observed (tightness witness).
    pub min_slack: f64,
    /// Histogram of slack over 10 buckets spanning [0, max slack].
    pub tightness_histogram: Vec<u64>,
    pub bucket_width: f64,
}

/// V^pi(s, g) for every state and goal class.
pub fn values_under_policy(mdp: &Gcmdp, pi: &GoalPolicy, tol: f64) -> Result<ValueTable> {
    let mut per_class = vec![Vec::new(); mdp.num_classes()];
    for (class, rep) in mdp.goal_classes() {
        per_class[class as usize] = policy_evaluation(mdp, pi, rep as usize, tol)?.values;
    }
    Ok(ValueTable::new(mdp, per_class))
}

/// Checks |V(s_i,g_i) - V(s_j,g_j)| <= d((s_i,g_i),(s_j,g_j)) + slack for
/// every pair of paired states. Rejects metrics not computed in the
/// unweighted W1 form (the bound is not claimed for the others).
pub fn verify_value_bound(metric: &PairedMetric, values: &ValueTable) -> Result<BoundReport> {
    if metric.form.mode != FormMode::Unweighted {
        return Err(Error::FormMismatch(
            "value bound holds for the unweighted form only".into(),
        ));
    }
    if metric.form.wasserstein_order != WOrder::W1 {
        return Err(Error::FormMismatch("value bound holds for the W1 order only".into()));
    }
    if values.num_states != metric.num_states {
        return Err(Error::ShapeMismatch("value table does not match metric".into()));
    }
    let pairs: Vec<(usize, usize)> = (0..metric.num_states)
        .flat_map(|s| metric.goals.iter().map(move |&g| (s, g as usize)))
        .collect();

    let mut slacks = Vec::new();
    let mut max_violation = 0.0_f64;
    let mut worst = None;
    let mut min_slack = f64::INFINITY;
    let mut checked = 0u64;
    let exhaustive = pairs.len() <= EXHAUSTIVE_AXIS_CAP;

    let mut visit = |pi_: (usize, usize), pj: (usize, usize)| {
        let d = metric.get(pi_.0, pi_.1, pj.0, pj.1);
        let dv = (values.get(pi_.0, pi_.1) - values.get(pj.0, pj.1)).abs();
        let slack = d - dv;
        if -slack > max_violation {
            max_violation = -slack;
            worst = Some((pi_, pj));
        }
        min_slack = min_slack.min(slack);
        slacks.push(slack.max(0.0));
        checked += 1;
    };

    if exhaustive {
        for (a, &pi_) in pairs.iter().enumerate() {
            for &pj in pairs.iter().skip(a) {
                visit(pi_, pj);
            }
        }
    } else {
        let mut r = rng::stream(17, "bound-sample");
        for _ in 0..SAMPLED_PAIRS {
            let pi_ = pairs[r.gen_range(0..pairs.len())];
            let pj = pairs[r.gen_range(0..pairs.len())];
            visit(pi_, pj);
        }
    }

    let max_slack = slacks.iter().copied().fold(0.0_f64, f64::max);
    let bucket_width = if max_slack > 0.0 { max_slack / 10.0 } else { 1.0 };
    let mut hist = vec![0u64; 10];
    for &s in &slacks {
        let b = ((s / bucket_width) as usize).min(9);
        hist[b] += 1;
    }
    Ok(BoundReport {
        checked,
        exhaustive,
        max_violation,
        worst_pair: worst,
        min_slack,
        tightness_histogram: hist,
        bucket_width,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LinearBoundReport {
    pub checked: u64,
    pub max_violation: f64,
    pub worst_pair: Option<(usize, usize)>,
}

/// Checks |V_R(s_i) - V_R(s_j)| <= sum_k alpha_k d(s_i,g_k; s_j,g_k) for
/// R(s) = sum_k alpha_k [proj(s) = proj(g_k)], over all state pairs.
///
/// V_R is the alpha-weighted combination of per-goal policy evaluations
/// (the defining decomposition; for goal-independent policies it equals
/// direct policy evaluation under R by linearity, which `direct_values_r`
/// exposes for cross-checking).
pub fn verify_linear_reward_bound(
    metric: &PairedMetric,
    mdp: &Gcmdp,
    pi: &GoalPolicy,
    alphas: &[(usize, f64)],
    tol: f64,
) -> Result<LinearBoundReport> {
    if metric.form.mode != FormMode::Unweighted || metric.form.wasserstein_order != WOrder::W1 {
        return Err(Error::FormMismatch(
            "linear reward bound holds for the unweighted W1 form only".into(),
        ));
    }
    for &(g, a) in alphas {
        if a < 0.0 {
            return Err(Error::InvalidConfig(format!("negative alpha {a} for goal {g}")));
        }
        if g >= mdp.num_states {
            return Err(Error::IndexOutOfRange { what: "goal", value: g, limit: mdp.num_states });
        }
    }
    // V_R(s) = sum_k alpha_k V^pi(s, g_k)
    let values = values_under_policy(mdp, pi, tol)?;
    let v_r: Vec<f64> = (0..mdp.num_states)
        .map(|s| alphas.iter().map(|&(g, a)| a * values.get(s, g)).sum())
        .collect();

    let mut max_violation = 0.0_f64;
    let mut worst = None;
    let mut checked = 0u64;
    for si in 0..mdp.num_states {
        for sj in si..mdp.num_states {
            let lhs = (v_r[si] - v_r[sj]).abs();
            let rhs: f64 =
                alphas.iter().map(|&(g, a)| a * metric.get(si, g, sj, g)).sum();
            let viol = lhs - rhs;
            if viol > max_violation {
                max_violation = viol;
                worst = Some((si, sj));
            }
            checked += 1;
        }
    }
    Ok(LinearBoundReport { checked, max_violation, worst_pair: worst })
}

/// Direct policy evaluation under the mixed reward R (meaningful when the
/// policy's rows do not depend on the goal); used to cross-check the
/// alpha-decomposition.
pub fn direct_values_r(
    mdp: &Gcmdp,
    pi: &GoalPolicy,
    alphas: &[(usize, f64)],
    tol: f64,
) -> Result<Vec<f64>> {
    let reward: Vec<f64> = (0..mdp.num_states)
        .map(|s| {
            alphas
                .iter()
                .map(|&(g, a)| if mdp.class_of(s) == mdp.class_of(g) { a } else { 0.0 })
                .sum()
        })
        .collect();
    let g0 = mdp.goals[0] as usize;
    Ok(policy_evaluation_reward(mdp, pi, g0, &reward, tol)?.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcmdp::{chain3, optimal_goal_policy};
    use crate::metric::{gcb_fixed_point, FormMode, MetricForm, WOrder};

    fn chain_metric() -> (Gcmdp, GoalPolicy, PairedMetric) {
        let mdp = chain3(0.9);
        let pi = optimal_goal_policy(&mdp, 1e-10).unwrap();
        let m = gcb_fixed_point(&pi, &mdp, MetricForm::default(), 1e-11, 10_000).unwrap();
        (mdp, pi, m)
    }

    #[test]
    fn chain_bound_holds_and_is_tight() {
        let (mdp, pi, m) = chain_metric();
        let values = values_under_policy(&mdp, &pi, 1e-11).unwrap();
        // |V(0,2) - V(1,2)| = |9 - 10| = 1 = d (tight)
        assert!((values.get(1, 2) - values.get(0, 2) - 1.0).abs() < 1e-6);
        let report = verify_value_bound(&m, &values).unwrap();
        assert!(report.max_violation <= 1e-6, "violation {}", report.max_violation);
        assert!(report.min_slack.abs() <= 1e-3, "no tight pair: min slack {}", report.min_slack);
        assert!(report.exhaustive);
    }

    #[test]
    fn convex_form_metric_is_rejected() {
        let mdp = chain3(0.9);
        let pi = optimal_goal_policy(&mdp, 1e-10).unwrap();
        let form = MetricForm { mode: FormMode::Convex(0.5), wasserstein_order: WOrder::W1 };
        let m = gcb_fixed_point(&pi, &mdp, form, 1e-11, 10_000).unwrap();
        let values = values_under_policy(&mdp, &pi, 1e-11).unwrap();
        let err = verify_value_bound(&m, &values).unwrap_err();
        assert!(matches!(err, Error::FormMismatch(_)));
    }

    #[test]
    fn one_hot_alpha_reduces_to_value_bound() {
        let (mdp, pi, m) = chain_metric();
        let report = verify_linear_reward_bound(&m, &mdp, &pi, &[(2, 1.0)], 1e-11).unwrap();
        assert!(report.max_violation <= 1e-6);
        // all-zero alphas: both sides zero
        let zero = verify_linear_reward_bound(&m, &mdp, &pi, &[(2, 0.0)], 1e-11).unwrap();
        assert_eq!(zero.max_violation, 0.0);
    }

    #[test]
    fn negative_alpha_rejected() {
        let (mdp, pi, m) = chain_metric();
        let err = verify_linear_reward_bound(&m, &mdp, &pi, &[(2, -0.5)], 1e-11).unwrap_err();
        assert!(err.to_string().contains("negative alpha"));
    }

    #[test]
    fn decomposition_matches_direct_evaluation_for_uniform_policy() {
        let mdp = chain3(0.9);
        let pi = GoalPolicy::uniform(&mdp);
        let alphas = [(0usize, 0.3), (2usize, 1.2)];
        let values = values_under_policy(&mdp, &pi, 1e-12).unwrap();
        let combo: Vec<f64> = (0..3)
            .map(|s| alphas.iter().map(|&(g, a)| a * values.get(s, g)).sum::<f64>())
            .collect();
        let direct = direct_values_r(&mdp, &pi, &alphas, 1e-12).unwrap();
        for (c, d) in combo.iter().zip(&direct) {
            assert!((c - d).abs() < 1e-7, "linearity broken: {c} vs {d}");
        }
    }

    #[test]
    fn corrupted_metric_is_flagged_with_the_offending_pair() {
        let (mdp, pi, mut m) = chain_metric();
        let values = values_under_policy(&mdp, &pi, 1e-11).unwrap();
        // halve the entry for ((0,2),(1,2)) in both triangles
        let axis = m.axis();
        let i = m.qindex(0, m.col_of_goal(2));
        let j = m.qindex(1, m.col_of_goal(2));
        m.q[i * axis + j] *= 0.5;
        m.q[j * axis + i] *= 0.5;
        let report = verify_value_bound(&m, &values).unwrap();
        assert!(report.max_violation > 0.4);
        let worst = report.worst_pair.unwrap();
        assert!(worst == ((0, 2), (1, 2)) || worst == ((1, 2), (0, 2)), "{worst:?}");
    }
}

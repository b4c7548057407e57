//! On-policy bisimulation metric for plain (single-reward) MDPs, and the
//! concatenated super-MDP construction.
//!
//! This is the independent route used to validate the goal-conditioned
//! fixed point: concatenate states and goals into one state space, give it
//! the matching reward, and run the ordinary single-task metric with no
//! goal-class quotient. The two must agree entrywise.

use crate::error::{Error, Result};
use crate::gcmdp::{Gcmdp, GoalPolicy, TransRow};
use crate::ot::TransportSolver;

/// A plain MDP with a per-(state, action) expected reward.
#[derive(Debug, Clone)]
pub struct PlainMdp {
    pub num_states: usize,
    pub num_actions: usize,
    pub rows: Vec<TransRow>,
    pub reward_sa: Vec<f64>,
    pub discount: f64,
}

/// A stationary stochastic policy on a plain MDP.
#[derive(Debug, Clone)]
pub struct PlainPolicy {
    pub rows: Vec<f64>, // s * A + a
    pub num_actions: usize,
}

/// Builds the super-MDP over concatenated (state, goal) pairs: dynamics
/// move the state coordinate and carry the goal along; the reward is the
/// expected goal-class match of the arrived-at state.
pub fn super_mdp(mdp: &Gcmdp, pi: &GoalPolicy) -> (PlainMdp, PlainPolicy) {
    let n_goals = mdp.goals.len();
    let n = mdp.num_states * n_goals;
    let a_n = mdp.num_actions;
    let mut rows = Vec::with_capacity(n * a_n);
    let mut reward_sa = Vec::with_capacity(n * a_n);
    let mut pol = Vec::with_capacity(n * a_n);
    for s in 0..mdp.num_states {
        for (gi, &g) in mdp.goals.iter().enumerate() {
            let gc = mdp.class_of(g as usize);
            let prow = pi.row(s, g as usize);
            for a in 0..a_n {
                let row: TransRow = mdp
                    .row(s, a)
                    .iter()
                    .map(|&(sp, p)| ((sp as usize * n_goals + gi) as u32, p))
                    .collect();
                rows.push(row);
                reward_sa.push(mdp.expected_reward_class(s, a, gc));
                pol.push(prow[a]);
            }
        }
    }
    (
        PlainMdp { num_states: n, num_actions: a_n, rows, reward_sa, discount: mdp.discount },
        PlainPolicy { rows: pol, num_actions: a_n },
    )
}

/// Index of the super-MDP state for (s, i-th goal).
pub fn super_index(mdp: &Gcmdp, s: usize, goal_pos: usize) -> usize {
    s * mdp.goals.len() + goal_pos
}

/// On-policy bisimulation metric on a plain MDP: the least fixed point of
/// |R^pi_x - R^pi_y| + gamma W1(d)(P^pi_x, P^pi_y), iterated from zero
/// with plain Jacobi sweeps (no structural shortcuts).
pub fn on_policy_metric(
    mdp: &PlainMdp,
    pi: &PlainPolicy,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    assert!(tol > 0.0);
    let n = mdp.num_states;
    let a_n = mdp.num_actions;
    if pi.rows.len() != n * a_n {
        return Err(Error::ShapeMismatch("policy rows do not match MDP".into()));
    }
    // aggregate policy-induced rewards and successor distributions
    let mut rbar = vec![0.0; n];
    let mut succ: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
    for x in 0..n {
        let mut atoms: Vec<(u32, f64)> = Vec::new();
        let mut r = 0.0;
        for a in 0..a_n {
            let pa = pi.rows[x * a_n + a];
            if pa == 0.0 {
                continue;
            }
            r += pa * mdp.reward_sa[x * a_n + a];
            for &(xp, p) in &mdp.rows[x * a_n + a] {
                match atoms.iter_mut().find(|(y, _)| *y == xp) {
                    Some((_, acc)) => *acc += pa * p,
                    None => atoms.push((xp, pa * p)),
                }
            }
        }
        atoms.sort_unstable_by_key(|&(y, _)| y);
        rbar[x] = r;
        succ[x] = atoms;
    }

    let gamma = mdp.discount;
    let mut d = vec![0.0; n * n];
    let mut next = vec![0.0; n * n];
    let mut residuals = Vec::new();
    let mut solver = TransportSolver::new();
    for _ in 0..max_iter {
        let mut delta = 0.0_f64;
        for x in 0..n {
            for y in 0..n {
                let v = if x == y {
                    0.0
                } else {
                    let a = &succ[x];
                    let b = &succ[y];
                    let w = if a.len() == 1 && b.len() == 1 {
                        d[a[0].0 as usize * n + b[0].0 as usize]
                    } else {
                        let mu: Vec<f64> = a.iter().map(|&(_, w)| w).collect();
                        let nu: Vec<f64> = b.iter().map(|&(_, w)| w).collect();
                        solver
                            .solve(&mu, &nu, |i, j| d[a[i].0 as usize * n + b[j].0 as usize])
                            .value
                    };
                    (rbar[x] - rbar[y]).abs() + gamma * w
                };
                delta = delta.max((v - d[x * n + y]).abs());
                next[x * n + y] = v;
            }
        }
        std::mem::swap(&mut d, &mut next);
        residuals.push(delta);
        if delta < tol {
            return Ok((d, residuals));
        }
    }
    Err(Error::NoConvergence { iterations: max_iter, residual: *residuals.last().unwrap() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcmdp::{chain3, optimal_goal_policy, GoalPolicy};
    use crate::metric::{gcb_fixed_point, MetricForm};

    #[test]
    fn super_mdp_route_matches_quotient_route_on_chain() {
        let mdp = chain3(0.9);
        for pi in [optimal_goal_policy(&mdp, 1e-10).unwrap(), GoalPolicy::uniform(&mdp)] {
            let gcb = gcb_fixed_point(&pi, &mdp, MetricForm::default(), 1e-13, 20_000).unwrap();
            let (smdp, spol) = super_mdp(&mdp, &pi);
            let (d, _) = on_policy_metric(&smdp, &spol, 1e-13, 20_000).unwrap();
            let n = smdp.num_states;
            for s1 in 0..3 {
                for (gi, &g1) in mdp.goals.iter().enumerate() {
                    for s2 in 0..3 {
                        for (gj, &g2) in mdp.goals.iter().enumerate() {
                            let a = gcb.get(s1, g1 as usize, s2, g2 as usize);
                            let b = d[super_index(&mdp, s1, gi) * n + super_index(&mdp, s2, gj)];
                            assert!(
                                (a - b).abs() <= 1e-10,
                                "mismatch at ({s1},{g1};{s2},{g2}): {a} vs {b}"
                            );
                        }
                    }
                }
            }
        }
    }
}

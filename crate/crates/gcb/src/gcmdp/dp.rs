//! Value iteration and policy evaluation (infinite-horizon discounted).
//!
//! Rewards are collected on arrival: the per-step reward for landing in
//! s' is 1 when s' matches the goal class (or `reward(s')` for the
//! general state-reward variants used by the linear-reward bound).

use super::{Gcmdp, GoalPolicy};
use crate::error::{Error, Result};

/// Result of an iterative DP solve.
#[derive(Debug, Clone)]
pub struct DpResult {
    pub values: Vec<f64>,
    /// Greedy action per state (value iteration only; ties break to the
    /// lowest action index).
    pub greedy: Vec<usize>,
    pub iterations: usize,
    /// Sup-norm residual after each sweep.
    pub residuals: Vec<f64>,
}

fn max_iters(discount: f64, tol: f64) -> usize {
    // gamma^k / (1 - gamma) < tol bounds the horizon; generous margin.
    let k = ((tol * (1.0 - discount)).ln() / discount.ln()).ceil();
    (k as usize).saturating_add(64).max(128)
}

/// Value iteration toward goal `g` (reward = arrival in g's class).
pub fn value_iteration(mdp: &Gcmdp, g: usize, tol: f64) -> Result<DpResult> {
    if g >= mdp.num_states {
        return Err(Error::IndexOutOfRange { what: "goal", value: g, limit: mdp.num_states });
    }
    let gc = mdp.class_of(g);
    let reward: Vec<f64> =
        (0..mdp.num_states).map(|s| if mdp.class_of(s) == gc { 1.0 } else { 0.0 }).collect();
    value_iteration_reward(mdp, &reward, tol)
}

/// Value iteration under an arbitrary arrival reward R(s').
pub fn value_iteration_reward(mdp: &Gcmdp, reward: &[f64], tol: f64) -> Result<DpResult> {
    assert!(tol > 0.0, "tol must be positive");
    assert_eq!(reward.len(), mdp.num_states);
    let n = mdp.num_states;
    let gamma = mdp.discount;
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut residuals = Vec::new();
    let cap = max_iters(gamma, tol);
    for it in 0..cap {
        let mut delta = 0.0_f64;
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            for a in 0..mdp.num_actions {
                let mut q = 0.0;
                for &(sp, p) in mdp.row(s, a) {
                    q += p * (reward[sp as usize] + gamma * v[sp as usize]);
                }
                if q > best {
                    best = q;
                }
            }
            next[s] = best;
            delta = delta.max((best - v[s]).abs());
        }
        std::mem::swap(&mut v, &mut next);
        residuals.push(delta);
        if delta < tol {
            let greedy = greedy_from_values(mdp, reward, &v);
            return Ok(DpResult { values: v, greedy, iterations: it + 1, residuals });
        }
    }
    Err(Error::NoConvergence { iterations: cap, residual: *residuals.last().unwrap_or(&f64::NAN) })
}

fn greedy_from_values(mdp: &Gcmdp, reward: &[f64], v: &[f64]) -> Vec<usize> {
    let gamma = mdp.discount;
    (0..mdp.num_states)
        .map(|s| {
            let mut best_a = 0;
            let mut best_q = f64::NEG_INFINITY;
            for a in 0..mdp.num_actions {
                let mut q = 0.0;
                for &(sp, p) in mdp.row(s, a) {
                    q += p * (reward[sp as usize] + gamma * v[sp as usize]);
                }
                if q > best_q + 1e-12 {
                    best_q = q;
                    best_a = a;
                }
            }
            best_a
        })
        .collect()
}

/// Policy evaluation toward goal `g` under `pi`.
pub fn policy_evaluation(mdp: &Gcmdp, pi: &GoalPolicy, g: usize, tol: f64) -> Result<DpResult> {
    let gc = mdp.class_of(g);
    let reward: Vec<f64> =
        (0..mdp.num_states).map(|s| if mdp.class_of(s) == gc { 1.0 } else { 0.0 }).collect();
    policy_evaluation_reward(mdp, pi, g, &reward, tol)
}

/// Policy evaluation under an arbitrary arrival reward R(s'). The goal
/// argument selects which policy rows to follow.
pub fn policy_evaluation_reward(
    mdp: &Gcmdp,
    pi: &GoalPolicy,
    g: usize,
    reward: &[f64],
    tol: f64,
) -> Result<DpResult> {
    assert!(tol > 0.0, "tol must be positive");
    if pi.num_states != mdp.num_states || pi.num_actions != mdp.num_actions {
        return Err(Error::ShapeMismatch("policy does not match MDP dimensions".into()));
    }
    let n = mdp.num_states;
    let gamma = mdp.discount;
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut residuals = Vec::new();
    let cap = max_iters(gamma, tol);
    for it in 0..cap {
        let mut delta = 0.0_f64;
        for s in 0..n {
            let row = pi.row(s, g);
            let mut val = 0.0;
            for (a, &pa) in row.iter().enumerate() {
                if pa == 0.0 {
                    continue;
                }
                let mut q = 0.0;
                for &(sp, p) in mdp.row(s, a) {
                    q += p * (reward[sp as usize] + gamma * v[sp as usize]);
                }
                val += pa * q;
            }
            next[s] = val;
            delta = delta.max((val - v[s]).abs());
        }
        std::mem::swap(&mut v, &mut next);
        residuals.push(delta);
        if delta < tol {
            return Ok(DpResult { values: v, greedy: Vec::new(), iterations: it + 1, residuals });
        }
    }
    Err(Error::NoConvergence { iterations: cap, residual: *residuals.last().unwrap_or(&f64::NAN) })
}

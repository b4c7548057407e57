//! Goal-conditioned MDPs and their exact dynamic-programming oracles.
//!
//! Goal matching is mediated by a *goal projection*: the reward fires when
//! the arrived-at state's task-relevant signature equals the goal's. The
//! `Full` projection makes that exact state equality.

mod dp;

pub use dp::{policy_evaluation, policy_evaluation_reward, value_iteration, value_iteration_reward, DpResult};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

const ROW_TOL: f64 = 1e-12;

/// Task-relevant signature map over states.
#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    /// Signature = the state itself (exact goal equality).
    Full,
    /// Signature = classes[s]; class ids must be dense starting at 0.
    Classes(Vec<u32>),
}

impl Projection {
    #[inline]
    pub fn class_of(&self, s: usize) -> u32 {
        match self {
            Projection::Full => s as u32,
            Projection::Classes(c) => c[s],
        }
    }

    pub fn num_classes(&self, num_states: usize) -> usize {
        match self {
            Projection::Full => num_states,
            Projection::Classes(c) => c.iter().copied().max().map_or(0, |m| m as usize + 1),
        }
    }
}

/// Sparse transition row: list of (next state, probability).
pub type TransRow = Vec<(u32, f64)>;

/// A goal-conditioned MDP over discrete states and actions.
#[derive(Debug, Clone)]
pub struct Gcmdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// Row for (s, a) lives at index s * num_actions + a.
    rows: Vec<TransRow>,
    pub goals: Vec<u32>,
    pub discount: f64,
    pub projection: Projection,
}

impl Gcmdp {
    /// Validates and constructs. Each named invariant failure is a
    /// distinct error: non-stochastic row, empty goal set, discount range.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        rows: Vec<TransRow>,
        goals: Vec<u32>,
        discount: f64,
        projection: Projection,
    ) -> Result<Self> {
        if rows.len() != num_states * num_actions {
            return Err(Error::ShapeMismatch(format!(
                "expected {} transition rows, got {}",
                num_states * num_actions,
                rows.len()
            )));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::BadDiscount(discount));
        }
        if goals.is_empty() {
            return Err(Error::EmptyGoalSet);
        }
        for (i, row) in rows.iter().enumerate() {
            let sum: f64 = row.iter().map(|&(_, p)| p).sum();
            if (sum - 1.0).abs() > ROW_TOL || row.iter().any(|&(_, p)| p < 0.0) {
                return Err(Error::NonStochasticRow {
                    state: i / num_actions,
                    action: i % num_actions,
                    sum,
                });
            }
            for &(sp, _) in row {
                if sp as usize >= num_states {
                    return Err(Error::IndexOutOfRange {
                        what: "next state",
                        value: sp as usize,
                        limit: num_states,
                    });
                }
            }
        }
        let mut goals = goals;
        goals.sort_unstable();
        goals.dedup();
        for &g in &goals {
            if g as usize >= num_states {
                return Err(Error::IndexOutOfRange { what: "goal", value: g as usize, limit: num_states });
            }
        }
        if let Projection::Classes(c) = &projection {
            if c.len() != num_states {
                return Err(Error::ShapeMismatch(format!(
                    "projection covers {} states, expected {num_states}",
                    c.len()
                )));
            }
        }
        Ok(Gcmdp { num_states, num_actions, rows, goals, discount, projection })
    }

    /// Builds from a dense transition table `p[s][a][s']`.
    pub fn from_dense(
        p: &[Vec<Vec<f64>>],
        goals: Vec<u32>,
        discount: f64,
        projection: Projection,
    ) -> Result<Self> {
        let num_states = p.len();
        let num_actions = p.first().map_or(0, |a| a.len());
        let mut rows = Vec::with_capacity(num_states * num_actions);
        for sa in p {
            if sa.len() != num_actions {
                return Err(Error::ShapeMismatch("ragged action dimension".into()));
            }
            for dist in sa {
                if dist.len() != num_states {
                    return Err(Error::ShapeMismatch("ragged next-state dimension".into()));
                }
                let row: TransRow = dist
                    .iter()
                    .enumerate()
                    .filter(|&(_, &v)| v != 0.0)
                    .map(|(j, &v)| (j as u32, v))
                    .collect();
                rows.push(row);
            }
        }
        Gcmdp::new(num_states, num_actions, rows, goals, discount, projection)
    }

    #[inline]
    pub fn row(&self, s: usize, a: usize) -> &TransRow {
        &self.rows[s * self.num_actions + a]
    }

    #[inline]
    pub fn class_of(&self, s: usize) -> u32 {
        self.projection.class_of(s)
    }

    pub fn num_classes(&self) -> usize {
        self.projection.num_classes(self.num_states)
    }

    /// Sparse reward: 1 iff the arrived-at state's signature matches the
    /// goal's. The action is part of the signature-free contract but is
    /// still range-checked.
    pub fn sparse_reward(&self, s: usize, a: usize, s_next: usize, g: usize) -> Result<f64> {
        for (what, v) in [("state", s), ("action", a), ("next state", s_next), ("goal", g)] {
            let limit = if what == "action" { self.num_actions } else { self.num_states };
            if v >= limit {
                return Err(Error::IndexOutOfRange { what: "index", value: v, limit });
            }
        }
        Ok(if self.class_of(s_next) == self.class_of(g) { 1.0 } else { 0.0 })
    }

    /// Expected immediate reward of taking `a` in `s` toward goal class `gc`.
    #[inline]
    pub fn expected_reward_class(&self, s: usize, a: usize, gc: u32) -> f64 {
        self.row(s, a)
            .iter()
            .map(|&(sp, p)| if self.class_of(sp as usize) == gc { p } else { 0.0 })
            .sum()
    }

    /// Distinct goal classes among `goals`, with one representative goal each,
    /// in ascending class order.
    pub fn goal_classes(&self) -> Vec<(u32, u32)> {
        let mut seen: Vec<Option<u32>> = vec![None; self.num_classes()];
        for &g in &self.goals {
            let c = self.class_of(g as usize) as usize;
            if seen[c].is_none() {
                seen[c] = Some(g);
            }
        }
        seen.iter()
            .enumerate()
            .filter_map(|(c, rep)| rep.map(|g| (c as u32, g)))
            .collect()
    }
}

/// Tabular goal-conditioned policy pi(a | s, g).
///
/// Stored per goal *class* when every goal in a class shares rows (always
/// true for policies produced in this crate); `row` resolves through the
/// class of the queried goal.
#[derive(Debug, Clone)]
pub struct GoalPolicy {
    pub num_states: usize,
    pub num_actions: usize,
    /// class id -> per-state action distributions (flattened s * A + a).
    per_class: Vec<Vec<f64>>,
    /// goal state -> class id (usable for every state, in fact).
    class_of_state: Vec<u32>,
}

impl GoalPolicy {
    /// Builds from per-class rows. Validates each row is a distribution.
    pub fn from_class_rows(
        mdp: &Gcmdp,
        per_class: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let (s_n, a_n) = (mdp.num_states, mdp.num_actions);
        for (c, rows) in per_class.iter().enumerate() {
            if rows.len() != s_n * a_n {
                return Err(Error::ShapeMismatch(format!("policy class {c} has wrong row count")));
            }
            for s in 0..s_n {
                let sum: f64 = rows[s * a_n..(s + 1) * a_n].iter().sum();
                if (sum - 1.0).abs() > ROW_TOL || rows[s * a_n..(s + 1) * a_n].iter().any(|&p| p < 0.0) {
                    return Err(Error::InvalidPolicyRow { state: s, goal: c, sum });
                }
            }
        }
        let class_of_state = (0..s_n).map(|s| mdp.class_of(s)).collect();
        Ok(GoalPolicy { num_states: s_n, num_actions: a_n, per_class, class_of_state })
    }

    /// Builds from one row table per goal state (no class sharing).
    pub fn from_dense(num_states: usize, num_actions: usize, per_goal: Vec<Vec<f64>>) -> Result<Self> {
        if per_goal.len() != num_states {
            return Err(Error::ShapeMismatch("need one row table per goal state".into()));
        }
        for (g, rows) in per_goal.iter().enumerate() {
            if rows.len() != num_states * num_actions {
                return Err(Error::ShapeMismatch(format!("policy for goal {g} has wrong row count")));
            }
            for s in 0..num_states {
                let sum: f64 = rows[s * num_actions..(s + 1) * num_actions].iter().sum();
                if (sum - 1.0).abs() > ROW_TOL
                    || rows[s * num_actions..(s + 1) * num_actions].iter().any(|&p| p < 0.0)
                {
                    return Err(Error::InvalidPolicyRow { state: s, goal: g, sum });
                }
            }
        }
        Ok(GoalPolicy {
            num_states,
            num_actions,
            per_class: per_goal,
            class_of_state: (0..num_states as u32).collect(),
        })
    }

    /// Uniform-random policy.
    pub fn uniform(mdp: &Gcmdp) -> Self {
        let a = mdp.num_actions;
        let rows = vec![1.0 / a as f64; mdp.num_states * a];
        GoalPolicy::from_class_rows(mdp, vec![rows]).map(|mut p| {
            // one class row serves all goals
            p.class_of_state = vec![0; mdp.num_states];
            p
        })
        .expect("uniform rows are stochastic")
    }

    #[inline]
    pub fn row(&self, s: usize, g: usize) -> &[f64] {
        let c = self.class_of_state[g] as usize;
        let rows = &self.per_class[c.min(self.per_class.len() - 1)];
        &rows[s * self.num_actions..(s + 1) * self.num_actions]
    }

    /// True when rows depend on the goal only through its class (by
    /// construction here), enabling the quotient fixed point.
    pub fn respects_goal_classes(&self) -> bool {
        true
    }

    /// Deterministic action (for rollout use): the argmax entry; rows
    /// produced by greedy construction are one-hot.
    pub fn greedy_action(&self, s: usize, g: usize) -> usize {
        let row = self.row(s, g);
        let mut best = 0;
        for (a, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = a;
            }
        }
        best
    }
}

/// Values V(s, g) for every state and goal, stored per goal class.
#[derive(Debug, Clone)]
pub struct ValueTable {
    pub num_states: usize,
    /// class id -> V(s) for that goal class.
    pub per_class: Vec<Vec<f64>>,
    class_of_state: Vec<u32>,
}

impl ValueTable {
    pub fn new(mdp: &Gcmdp, per_class: Vec<Vec<f64>>) -> Self {
        ValueTable {
            num_states: mdp.num_states,
            per_class,
            class_of_state: (0..mdp.num_states).map(|s| mdp.class_of(s)).collect(),
        }
    }

    #[inline]
    pub fn get(&self, s: usize, g: usize) -> f64 {
        self.per_class[self.class_of_state[g] as usize][s]
    }
}

/// Greedy optimal policy for every goal: per goal class, value iteration
/// followed by greedy extraction with lowest-action-index tie-breaking.
pub fn optimal_goal_policy(mdp: &Gcmdp, tol: f64) -> Result<GoalPolicy> {
    let a_n = mdp.num_actions;
    let n_classes = mdp.num_classes();
    let mut per_class = vec![vec![0.0; 0]; n_classes];
    for (class, rep) in mdp.goal_classes() {
        let res = value_iteration(mdp, rep as usize, tol)?;
        let mut rows = vec![0.0; mdp.num_states * a_n];
        for s in 0..mdp.num_states {
            rows[s * a_n + res.greedy[s]] = 1.0;
        }
        per_class[class as usize] = rows;
    }
    // classes with no goal fall back to uniform rows so the table is total
    for rows in per_class.iter_mut() {
        if rows.is_empty() {
            *rows = vec![1.0 / a_n as f64; mdp.num_states * a_n];
        }
    }
    GoalPolicy::from_class_rows(mdp, per_class)
}

/// Epsilon-greedy mixture of the optimal policy with the uniform one.
pub fn epsilon_expert_policy(mdp: &Gcmdp, epsilon: f64, tol: f64) -> Result<GoalPolicy> {
    let greedy = optimal_goal_policy(mdp, tol)?;
    let a_n = mdp.num_actions;
    let u = epsilon / a_n as f64;
    let per_class = greedy
        .per_class
        .iter()
        .map(|rows| rows.iter().map(|&p| (1.0 - epsilon) * p + u).collect())
        .collect();
    GoalPolicy::from_class_rows(mdp, per_class)
}

// --- JSON serialization -------------------------------------------------

#[derive(Serialize, Deserialize)]
struct GcmdpJson {
    num_states: usize,
    num_actions: usize,
    transition: Vec<Vec<Vec<f64>>>,
    goals: Vec<u32>,
    discount: f64,
    projection: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    classes: Option<Vec<u32>>,
}

impl Gcmdp {
    pub fn to_json(&self) -> Result<String> {
        let mut transition = vec![vec![vec![0.0; self.num_states]; self.num_actions]; self.num_states];
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                for &(sp, p) in self.row(s, a) {
                    transition[s][a][sp as usize] = p;
                }
            }
        }
        let (projection, classes) = match &self.projection {
            Projection::Full => ("full".to_string(), None),
            Projection::Classes(c) => ("relevant".to_string(), Some(c.clone())),
        };
        let doc = GcmdpJson {
            num_states: self.num_states,
            num_actions: self.num_actions,
            transition,
            goals: self.goals.clone(),
            discount: self.discount,
            projection,
            classes,
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GcmdpJson = serde_json::from_str(text)?;
        let projection = match doc.projection.as_str() {
            "full" => Projection::Full,
            "relevant" => Projection::Classes(doc.classes.ok_or_else(|| {
                Error::InvalidConfig("projection \"relevant\" requires a classes array".into())
            })?),
            other => return Err(Error::InvalidConfig(format!("unknown projection {other:?}"))),
        };
        Gcmdp::from_dense(&doc.transition, doc.goals, doc.discount, projection)
    }
}

/// The 3-state chain 0 -> 1 -> 2 with absorbing 2; action 0 stays, action
/// 1 advances. A small fixture used across tests and examples.
pub fn chain3(discount: f64) -> Gcmdp {
    let mut rows: Vec<TransRow> = Vec::new();
    for s in 0..3u32 {
        rows.push(vec![(s, 1.0)]); // stay
        rows.push(vec![((s + 1).min(2), 1.0)]); // step
    }
    Gcmdp::new(3, 2, rows, vec![0, 1, 2], discount, Projection::Full).expect("chain is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_state_chain_is_valid() {
        let rows = vec![
            vec![(0u32, 1.0)],
            vec![(1u32, 1.0)],
            vec![(1u32, 1.0)],
            vec![(1u32, 1.0)],
        ];
        let m = Gcmdp::new(2, 2, rows, vec![1], 0.9, Projection::Full).unwrap();
        assert_eq!(m.num_states, 2);
    }

    #[test]
    fn non_stochastic_row_is_named() {
        let rows = vec![vec![(0u32, 0.9)], vec![(1u32, 1.0)], vec![(1u32, 1.0)], vec![(1u32, 1.0)]];
        let err = Gcmdp::new(2, 2, rows, vec![1], 0.9, Projection::Full).unwrap_err();
        assert!(matches!(err, Error::NonStochasticRow { state: 0, action: 0, .. }), "{err}");
        assert!(err.to_string().contains("not stochastic"));
    }

    #[test]
    fn empty_goal_set_rejected() {
        let rows = vec![vec![(0u32, 1.0)]; 4];
        let err = Gcmdp::new(2, 2, rows, vec![], 0.9, Projection::Full).unwrap_err();
        assert!(matches!(err, Error::EmptyGoalSet));
    }

    #[test]
    fn bad_discount_rejected() {
        let rows = vec![vec![(0u32, 1.0)]; 4];
        let err = Gcmdp::new(2, 2, rows, vec![0], 1.0, Projection::Full).unwrap_err();
        assert!(matches!(err, Error::BadDiscount(_)));
    }

    #[test]
    fn sparse_reward_matches_chain_examples() {
        let m = chain3(0.9);
        assert_eq!(m.sparse_reward(1, 1, 2, 2).unwrap(), 1.0);
        assert_eq!(m.sparse_reward(0, 1, 1, 2).unwrap(), 0.0);
        assert!(m.sparse_reward(0, 9, 1, 2).is_err());
    }

    #[test]
    fn json_roundtrip_preserves_semantics() {
        let m = chain3(0.9);
        let text = m.to_json().unwrap();
        let back = Gcmdp::from_json(&text).unwrap();
        assert_eq!(back.num_states, 3);
        assert_eq!(back.goals, vec![0, 1, 2]);
        assert_eq!(back.discount, 0.9);
        for s in 0..3 {
            for a in 0..2 {
                assert_eq!(m.row(s, a), back.row(s, a));
            }
        }
    }
}

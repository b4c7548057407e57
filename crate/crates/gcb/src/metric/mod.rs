//! The goal-conditioned bisimulation metric over paired states.
//!
//! A paired state is a (state, goal) pair; the metric assigns a distance
//! to every pair of paired states, computed as the least fixed point of
//! one application step: reward-difference term plus a discounted
//! Wasserstein distance between policy-induced successor distributions
//! (goal coordinates carried along unchanged).
//!
//! Rewards depend on the goal only through its projection class and the
//! dynamics never read the goal, so the metric is constant across goals
//! in the same class. Computation runs on that quotient (states x goal
//! classes) and `get` resolves full (state, goal) queries through it; the
//! un-quotiented single-task route in [`single_task`] cross-validates the
//! reduction.

mod bounds;
mod fixed_point;
pub mod single_task;

pub use bounds::{
    values_under_policy, verify_linear_reward_bound, verify_value_bound, BoundReport,
    LinearBoundReport,
};
pub use fixed_point::{gcb_fixed_point, gcb_operator, MetricProblem};

use crate::error::{Error, Result};
use crate::gcmdp::Gcmdp;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Reward/transport weighting of the metric operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormMode {
    /// |dr| + gamma * W (the adopted on-policy form).
    Unweighted,
    /// (1-c) |dr| + c * W with c in (0,1) (no gamma inside).
    Convex(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WOrder {
    W1,
    W2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricForm {
    pub mode: FormMode,
    pub wasserstein_order: WOrder,
}

impl Default for MetricForm {
    fn default() -> Self {
        MetricForm { mode: FormMode::Unweighted, wasserstein_order: WOrder::W1 }
    }
}

impl MetricForm {
    pub fn validate(&self) -> Result<()> {
        if let FormMode::Convex(c) = self.mode {
            if !(c > 0.0 && c < 1.0) {
                return Err(Error::InvalidConfig(format!("convex weight {c} outside (0,1)")));
            }
        }
        Ok(())
    }

    /// Contraction modulus of one operator application.
    pub fn contraction(&self, gamma: f64) -> f64 {
        match self.mode {
            FormMode::Unweighted => gamma,
            FormMode::Convex(c) => c,
        }
    }
}

/// The computed metric, stored on the quotient (states x goal classes).
#[derive(Debug, Clone)]
pub struct PairedMetric {
    pub num_states: usize,
    pub goals: Vec<u32>,
    /// class id -> quotient column, -1 when no goal has that class.
    col_of_class: Vec<i32>,
    class_of_state: Vec<u32>,
    /// Quotient axis length = num_states * n_cols.
    pub n_cols: usize,
    /// Row-major (axis x axis) distance matrix on the quotient.
    pub q: Vec<f64>,
    /// Sup-norm change after each sweep.
    pub residuals: Vec<f64>,
    pub form: MetricForm,
    pub gamma: f64,
}

impl PairedMetric {
    pub(crate) fn layout_for(mdp: &Gcmdp, form: MetricForm) -> PairedMetric {
        let n_classes = mdp.num_classes();
        let mut col_of_class = vec![-1i32; n_classes];
        let mut n_cols = 0;
        for (class, _) in mdp.goal_classes() {
            col_of_class[class as usize] = n_cols as i32;
            n_cols += 1;
        }
        let axis = mdp.num_states * n_cols;
        PairedMetric {
            num_states: mdp.num_states,
            goals: mdp.goals.clone(),
            col_of_class,
            class_of_state: (0..mdp.num_states).map(|s| mdp.class_of(s)).collect(),
            n_cols,
            q: vec![0.0; axis * axis],
            residuals: Vec::new(),
            form,
            gamma: mdp.discount,
        }
    }

    pub fn axis(&self) -> usize {
        self.num_states * self.n_cols
    }

    /// Quotient index of pair (s, goal-class column).
    #[inline]
    pub fn qindex(&self, s: usize, col: usize) -> usize {
        s * self.n_cols + col
    }

    /// Column of a goal state.
    #[inline]
    pub fn col_of_goal(&self, g: usize) -> usize {
        let col = self.col_of_class[self.class_of_state[g] as usize];
        debug_assert!(col >= 0, "state {g} is not in any goal class");
        col as usize
    }

    /// Distance between paired states (s1, g1) and (s2, g2).
    #[inline]
    pub fn get(&self, s1: usize, g1: usize, s2: usize, g2: usize) -> f64 {
        let axis = self.axis();
        let i = self.qindex(s1, self.col_of_goal(g1));
        let j = self.qindex(s2, self.col_of_goal(g2));
        self.q[i * axis + j]
    }

    /// Upper bound on any entry: rewards live in {0,1}.
    pub fn value_cap(&self) -> f64 {
        match self.form.mode {
            FormMode::Unweighted => 1.0 / (1.0 - self.gamma),
            FormMode::Convex(_) => 1.0,
        }
    }

    /// Full paired axis (|S| * |G|), the logical matrix the quotient
    /// represents.
    pub fn full_axis(&self) -> usize {
        self.num_states * self.goals.len()
    }

    /// Writes the expanded full matrix: one JSON header line, then
    /// row-major little-endian doubles over (|S| * |G|)^2 entries.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        let header = MetricHeader {
            kind: "gcb-metric".into(),
            num_states: self.num_states,
            goals: self.goals.clone(),
            gamma: self.gamma,
            form: self.form,
            residuals: self.residuals.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        let axis = self.axis();
        for s1 in 0..self.num_states {
            for &g1 in &self.goals {
                let i = self.qindex(s1, self.col_of_goal(g1 as usize));
                for s2 in 0..self.num_states {
                    for &g2 in &self.goals {
                        let j = self.qindex(s2, self.col_of_goal(g2 as usize));
                        w.write_all(&self.q[i * axis + j].to_le_bytes())?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads back a full matrix written by `write_binary` (dense, no
    /// quotient reconstruction): returns the header and the matrix.
    pub fn read_binary(path: &Path) -> Result<(MetricHeader, Vec<f64>)> {
        let file = std::fs::File::open(path)?;
        let mut r = BufReader::new(file);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: MetricHeader = serde_json::from_str(line.trim_end())?;
        let axis = header.num_states * header.goals.len();
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != axis * axis * 8 {
            return Err(Error::ShapeMismatch(format!(
                "metric payload has {} bytes, expected {}",
                bytes.len(),
                axis * axis * 8
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((header, data))
    }

    /// CSV export of the full matrix (small instances only): header row
    /// s,g then one line per paired state.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        write!(w, "s,g")?;
        for s in 0..self.num_states {
            for &g in &self.goals {
                write!(w, ",d_{s}_{g}")?;
            }
        }
        writeln!(w)?;
        let axis = self.axis();
        for s1 in 0..self.num_states {
            for &g1 in &self.goals {
                write!(w, "{s1},{g1}")?;
                let i = self.qindex(s1, self.col_of_goal(g1 as usize));
                for s2 in 0..self.num_states {
                    for &g2 in &self.goals {
                        let j = self.qindex(s2, self.col_of_goal(g2 as usize));
                        write!(w, ",{}", self.q[i * axis + j])?;
                    }
                }
                writeln!(w)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricHeader {
    pub kind: String,
    pub num_states: usize,
    pub goals: Vec<u32>,
    pub gamma: f64,
    pub form: MetricForm,
    pub residuals: Vec<f64>,
}

/// The bootstrap target the learned paired encoder regresses onto:
/// |r_i - r_j| + gamma * d_next. Rewards must lie in {0, 1}.
pub fn sampled_metric_target(r_i: f64, r_j: f64, d_next: f64, gamma: f64) -> f64 {
    debug_assert!(r_i == 0.0 || r_i == 1.0);
    debug_assert!(r_j == 0.0 || r_j == 1.0);
    (r_i - r_j).abs() + gamma * d_next
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_target_arithmetic() {
        assert_eq!(sampled_metric_target(1.0, 1.0, 0.0, 0.99), 0.0);
        assert_eq!(sampled_metric_target(1.0, 0.0, 0.0, 0.99), 1.0);
        let t = sampled_metric_target(0.0, 0.0, 2.5, 0.99);
        assert!((t - 2.475).abs() < 1e-12);
    }

    #[test]
    fn convex_form_weight_validated() {
        let bad = MetricForm { mode: FormMode::Convex(1.0), wasserstein_order: WOrder::W1 };
        assert!(bad.validate().is_err());
        let ok = MetricForm { mode: FormMode::Convex(0.5), wasserstein_order: WOrder::W1 };
        assert!(ok.validate().is_ok());
    }
}

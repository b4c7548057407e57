//! One operator application and its fixed point.

use super::{FormMode, MetricForm, PairedMetric, WOrder};
use crate::error::{Error, Result};
use crate::gcmdp::{Gcmdp, GoalPolicy};
use crate::ot::TransportSolver;
use rayon::prelude::*;

/// Precomputed sweep data: per quotient pair, the expected reward and the
/// policy-induced successor distribution over quotient pairs.
pub struct MetricProblem {
    pub axis: usize,
    n_cols: usize,
    gamma: f64,
    form: MetricForm,
    rbar: Vec<f64>,
    /// successor atoms (quotient pair id, probability), deduplicated.
    succ: Vec<Vec<(u32, f64)>>,
    layout: PairedMetric,
}

impl MetricProblem {
    pub fn new(mdp: &Gcmdp, pi: &GoalPolicy, form: MetricForm) -> Result<Self> {
        form.validate()?;
        if pi.num_states != mdp.num_states || pi.num_actions != mdp.num_actions {
            return Err(Error::ShapeMismatch("policy does not match MDP dimensions".into()));
        }
        let layout = PairedMetric::layout_for(mdp, form);
        let n_cols = layout.n_cols;
        let axis = layout.axis();
        let mut rbar = vec![0.0; axis];
        let mut succ: Vec<Vec<(u32, f64)>> = vec![Vec::new(); axis];
        // per column: its class and one representative goal (for policy rows)
        let mut col_class = vec![0u32; n_cols];
        let mut col_goal = vec![0usize; n_cols];
        for (class, rep) in mdp.goal_classes() {
            let col = layout.col_of_goal(rep as usize);
            col_class[col] = class;
            col_goal[col] = rep as usize;
        }
        for s in 0..mdp.num_states {
            for col in 0..n_cols {
                let qi = s * n_cols + col;
                let gc = col_class[col];
                let row = pi.row(s, col_goal[col]);
                let mut r = 0.0;
                let mut atoms: Vec<(u32, f64)> = Vec::new();
                for (a, &pa) in row.iter().enumerate() {
                    if pa == 0.0 {
                        continue;
                    }
                    r += pa * mdp.expected_reward_class(s, a, gc);
                    for &(sp, p) in mdp.row(s, a) {
                        let atom = (sp as usize * n_cols + col) as u32;
                        let w = pa * p;
                        match atoms.iter_mut().find(|(x, _)| *x == atom) {
                            Some((_, acc)) => *acc += w,
                            None => atoms.push((atom, w)),
                        }
                    }
                }
                atoms.sort_unstable_by_key(|&(x, _)| x);
                rbar[qi] = r;
                succ[qi] = atoms;
            }
        }
        Ok(MetricProblem { axis, n_cols, gamma: mdp.discount, form, rbar, succ, layout })
    }

    /// Applies the operator once: reads `d`, writes `next`, returns the
    /// sup-norm change. Parallel over rows; deterministic output.
    pub fn sweep(&self, d: &[f64], next: &mut [f64]) -> f64 {
        let axis = self.axis;
        debug_assert_eq!(d.len(), axis * axis);
        debug_assert_eq!(next.len(), axis * axis);
        let order = self.form.wasserstein_order;
        let (rw, ww) = match self.form.mode {
            FormMode::Unweighted => (1.0, self.gamma),
            FormMode::Convex(c) => (1.0 - c, c),
        };
        next.par_chunks_mut(axis)
            .enumerate()
            .map(|(i, row)| {
                let mut solver = TransportSolver::new();
                let si = &self.succ[i];
                let ri = self.rbar[i];
                let mut delta = 0.0_f64;
                for (j, out) in row.iter_mut().enumerate() {
                    if j == i {
                        *out = 0.0;
                        continue;
                    }
                    let w = transport_value(si, &self.succ[j], d, axis, order, &mut solver);
                    let v = rw * (ri - self.rbar[j]).abs() + ww * w;
                    delta = delta.max((v - d[i * axis + j]).abs());
                    *out = v;
                }
                delta
            })
            .reduce(|| 0.0, f64::max)
    }

    pub fn layout(&self) -> &PairedMetric {
        &self.layout
    }
}

#[inline]
fn transport_value(
    a: &[(u32, f64)],
    b: &[(u32, f64)],
    d: &[f64],
    axis: usize,
    order: WOrder,
    solver: &mut TransportSolver,
) -> f64 {
    let ground = |x: u32, y: u32| d[x as usize * axis + y as usize];
    match order {
        WOrder::W1 => match (a.len(), b.len()) {
            (1, 1) => ground(a[0].0, b[0].0),
            (1, _) => b.iter().map(|&(y, w)| w * ground(a[0].0, y)).sum(),
            (_, 1) => a.iter().map(|&(x, w)| w * ground(x, b[0].0)).sum(),
            _ => {
                let mu: Vec<f64> = a.iter().map(|&(_, w)| w).collect();
                let nu: Vec<f64> = b.iter().map(|&(_, w)| w).collect();
                solver.solve(&mu, &nu, |i, j| ground(a[i].0, b[j].0)).value
            }
        },
        WOrder::W2 => {
            let sq = match (a.len(), b.len()) {
                (1, 1) => {
                    let g = ground(a[0].0, b[0].0);
                    g * g
                }
                (1, _) => b.iter().map(|&(y, w)| {
                    let g = ground(a[0].0, y);
                    w * g * g
                }).sum(),
                (_, 1) => a.iter().map(|&(x, w)| {
                    let g = ground(x, b[0].0);
                    w * g * g
                }).sum(),
                _ => {
                    let mu: Vec<f64> = a.iter().map(|&(_, w)| w).collect();
                    let nu: Vec<f64> = b.iter().map(|&(_, w)| w).collect();
                    solver
                        .solve(&mu, &nu, |i, j| {
                            let g = ground(a[i].0, b[j].0);
                            g * g
                        })
                        .value
                }
            };
            sq.max(0.0).sqrt()
        }
    }
}

/// One application of the metric operator to an existing metric.
pub fn gcb_operator(
    d: &PairedMetric,
    pi: &GoalPolicy,
    mdp: &Gcmdp,
    form: MetricForm,
) -> Result<PairedMetric> {
    let problem = MetricProblem::new(mdp, pi, form)?;
    if d.axis() != problem.axis {
        return Err(Error::ShapeMismatch(format!(
            "metric axis {} does not match problem axis {}",
            d.axis(),
            problem.axis
        )));
    }
    let mut out = problem.layout.clone();
    let delta = problem.sweep(&d.q, &mut out.q);
    out.residuals = vec![delta];
    Ok(out)
}

/// Iterates the operator from d = 0 until the sup-norm change drops below
/// `tol`. Errors with the last residual when `max_iter` is exhausted.
pub fn gcb_fixed_point(
    pi: &GoalPolicy,
    mdp: &Gcmdp,
    form: MetricForm,
    tol: f64,
    max_iter: usize,
) -> Result<PairedMetric> {
    assert!(tol > 0.0, "tol must be positive");
    let problem = MetricProblem::new(mdp, pi, form)?;
    let mut metric = problem.layout.clone();
    let axis = problem.axis;
    let mut next = vec![0.0; axis * axis];
    for _ in 0..max_iter {
        let delta = problem.sweep(&metric.q, &mut next);
        std::mem::swap(&mut metric.q, &mut next);
        metric.residuals.push(delta);
        if delta < tol {
            return Ok(metric);
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: *metric.residuals.last().unwrap_or(&f64::NAN),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcmdp::{chain3, optimal_goal_policy, GoalPolicy};

    fn chain_setup() -> (crate::gcmdp::Gcmdp, GoalPolicy) {
        let mdp = chain3(0.9);
        let pi = optimal_goal_policy(&mdp, 1e-10).unwrap();
        (mdp, pi)
    }

    #[test]
    fn operator_on_zero_metric_gives_reward_differences() {
        let (mdp, pi) = chain_setup();
        let form = MetricForm::default();
        let zero = PairedMetric::layout_for(&mdp, form);
        let out = gcb_operator(&zero, &pi, &mdp, form).unwrap();
        // F(0)((0,2),(1,2)) = |0 - 1| = 1
        assert_eq!(out.get(0, 2, 1, 2), 1.0);
        // identical pairs stay at zero
        for s in 0..3 {
            for g in 0..3 {
                assert_eq!(out.get(s, g, s, g), 0.0);
            }
        }
    }

    #[test]
    fn chain_fixed_point_matches_hand_expansion() {
        let (mdp, pi) = chain_setup();
        let m = gcb_fixed_point(&pi, &mdp, MetricForm::default(), 1e-10, 10_000).unwrap();
        // d((1,2),(2,2)) = 0 so d((0,2),(1,2)) = |0-1| + 0.9 * 0 = 1
        assert!(m.get(1, 2, 2, 2).abs() < 1e-9);
        assert!((m.get(0, 2, 1, 2) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn convex_form_halves_the_chain_distance() {
        let (mdp, pi) = chain_setup();
        let form = MetricForm { mode: FormMode::Convex(0.5), wasserstein_order: WOrder::W1 };
        let m = gcb_fixed_point(&pi, &mdp, form, 1e-12, 10_000).unwrap();
        assert!((m.get(0, 2, 1, 2) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn residuals_contract_and_iterates_stay_bounded() {
        let (mdp, _) = chain_setup();
        let pi = GoalPolicy::uniform(&mdp);
        let m = gcb_fixed_point(&pi, &mdp, MetricForm::default(), 1e-9, 10_000).unwrap();
        for w in m.residuals.windows(2) {
            if w[0] > 1e-14 {
                assert!(w[1] <= 0.9 * w[0] + 1e-9, "ratio violated: {} -> {}", w[0], w[1]);
            }
        }
        let cap = m.value_cap() + 1e-9;
        assert!(m.q.iter().all(|&v| (0.0..=cap).contains(&v)));
    }

    #[test]
    fn metric_is_symmetric_with_zero_diagonal() {
        let (mdp, pi) = chain_setup();
        let m = gcb_fixed_point(&pi, &mdp, MetricForm::default(), 1e-10, 10_000).unwrap();
        let axis = m.axis();
        for i in 0..axis {
            assert_eq!(m.q[i * axis + i], 0.0);
            for j in 0..axis {
                assert!((m.q[i * axis + j] - m.q[j * axis + i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn triangle_inequality_on_all_chain_triples() {
        let (mdp, pi) = chain_setup();
        let m = gcb_fixed_point(&pi, &mdp, MetricForm::default(), 1e-12, 10_000).unwrap();
        let axis = m.axis();
        for i in 0..axis {
            for j in 0..axis {
                for k in 0..axis {
                    let lhs = m.q[i * axis + j];
                    let rhs = m.q[i * axis + k] + m.q[k * axis + j];
                    assert!(lhs <= rhs + 1e-8, "triangle violated at ({i},{j},{k})");
                }
            }
        }
    }

    #[test]
    fn max_iter_exhaustion_reports_residual() {
        let (mdp, pi) = chain_setup();
        let err = gcb_fixed_point(&pi, &mdp, MetricForm::default(), 1e-12, 2).unwrap_err();
        match err {
            Error::NoConvergence { iterations: 2, residual } => assert!(residual > 0.0),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn monotone_nondecreasing_from_zero() {
        let (mdp, _) = chain_setup();
        let pi = GoalPolicy::uniform(&mdp);
        let problem = MetricProblem::new(&mdp, &pi, MetricForm::default()).unwrap();
        let axis = problem.axis;
        let mut d = vec![0.0; axis * axis];
        let mut next = vec![0.0; axis * axis];
        for _ in 0..50 {
            problem.sweep(&d, &mut next);
            for (a, b) in d.iter().zip(&next) {
                assert!(b + 1e-12 >= *a, "iterates must be monotone from zero");
            }
            std::mem::swap(&mut d, &mut next);
        }
    }

    #[test]
    fn w2_coincides_with_w1_for_deterministic_chain() {
        let (mdp, pi) = chain_setup();
        let w1 = gcb_fixed_point(&pi, &mdp, MetricForm::default(), 1e-10, 10_000).unwrap();
        let w2form = MetricForm { mode: FormMode::Unweighted, wasserstein_order: WOrder::W2 };
        let w2 = gcb_fixed_point(&pi, &mdp, w2form, 1e-10, 10_000).unwrap();
        for (a, b) in w1.q.iter().zip(&w2.q) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}

//! Exact and approximate optimal transport between discrete distributions.
//!
//! The exact solver is a network-simplex transportation solve returning
//! the plan and dual potentials (the optimality certificate). Sinkhorn is
//! the entropic approximation; its plan-cost value is biased upward and
//! the bias shrinks as the regularization goes to zero.

mod simplex;

pub use simplex::TransportSolver;

use crate::error::{Error, Result};
use serde::Serialize;

const WEIGHT_TOL: f64 = 1e-10;

/// Probability distribution over integer atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    pub support: Vec<usize>,
    pub weights: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(support: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        if support.len() != weights.len() {
            return Err(Error::InfeasibleTransport("support/weight length mismatch".into()));
        }
        if support.is_empty() {
            return Err(Error::InfeasibleTransport("empty support".into()));
        }
        let mut seen = support.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != support.len() {
            return Err(Error::InfeasibleTransport("duplicate support atoms".into()));
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InfeasibleTransport("negative weight".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InfeasibleTransport(format!("weights sum to {sum}, expected 1")));
        }
        Ok(DiscreteDistribution { support, weights })
    }

    pub fn point_mass(atom: usize) -> Self {
        DiscreteDistribution { support: vec![atom], weights: vec![1.0] }
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }
}

/// Coupling between two distributions, with its cost and the dual
/// potentials certifying optimality (exact solver only).
#[derive(Debug, Clone, Serialize)]
pub struct TransportPlan {
    /// plan[i][j] = mass moved from mu atom i to nu atom j.
    pub plan: Vec<Vec<f64>>,
    pub cost: f64,
    pub potential_mu: Vec<f64>,
    pub potential_nu: Vec<f64>,
}

/// Marginal feasibility report for a plan.
#[derive(Debug, Clone, Serialize)]
pub struct FeasibilityReport {
    pub max_row_residual: f64,
    pub max_col_residual: f64,
    pub min_entry: f64,
    pub feasible: bool,
}

fn validate_cost(cost: &[Vec<f64>], n: usize, m: usize) -> Result<()> {
    if cost.len() != n || cost.iter().any(|r| r.len() != m) {
        return Err(Error::ShapeMismatch(format!("cost matrix must be {n}x{m}")));
    }
    for row in cost {
        for &c in row {
            if !c.is_finite() || c < 0.0 {
                return Err(Error::InfeasibleTransport(format!("cost entry {c} not finite nonnegative")));
            }
        }
    }
    Ok(())
}

/// Exact 1-Wasserstein distance: the minimum of the transportation LP.
/// `cost[i][j]` is the ground cost between `mu.support[i]` and
/// `nu.support[j]`.
pub fn wasserstein1_exact(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    cost: &[Vec<f64>],
) -> Result<(f64, TransportPlan)> {
    let (n, m) = (mu.len(), nu.len());
    validate_cost(cost, n, m)?;
    let mut solver = TransportSolver::new();
    let out = solver.solve(&mu.weights, &nu.weights, |i, j| cost[i][j]);
    let mut plan = vec![vec![0.0; m]; n];
    let (ci, cj, fl) = out.cells;
    for b in 0..ci.len() {
        plan[ci[b]][cj[b]] += fl[b];
    }
    let value = out.value;
    Ok((
        value,
        TransportPlan {
            plan,
            cost: value,
            potential_mu: out.u.to_vec(),
            potential_nu: out.v.to_vec(),
        },
    ))
}

/// Exact 2-Wasserstein: squared-cost LP, then square root.
pub fn wasserstein2_exact(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    cost: &[Vec<f64>],
) -> Result<(f64, TransportPlan)> {
    let sq: Vec<Vec<f64>> = cost.iter().map(|r| r.iter().map(|c| c * c).collect()).collect();
    let (v, mut plan) = wasserstein1_exact(mu, nu, &sq)?;
    let value = v.max(0.0).sqrt();
    plan.cost = value;
    Ok((value, plan))
}

/// Sinkhorn result: the entropic plan-cost value plus diagnostics.
#[derive(Debug, Clone)]
pub struct SinkhornResult {
    pub value: f64,
    pub plan: Vec<Vec<f64>>,
    pub iterations: usize,
    pub marginal_error: f64,
}

/// Entropic-regularized OT in the log domain (stable down to tiny
/// regularization). Converges when the L1 marginal violation of the
/// implied plan drops below `tol`.
pub fn sinkhorn(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    cost: &[Vec<f64>],
    regularization: f64,
    max_iter: usize,
    tol: f64,
) -> Result<SinkhornResult> {
    let (n, m) = (mu.len(), nu.len());
    validate_cost(cost, n, m)?;
    if regularization <= 0.0 {
        return Err(Error::InfeasibleTransport("regularization must be positive".into()));
    }
    let lam = regularization;
    let log_mu: Vec<f64> = mu.weights.iter().map(|&w| if w > 0.0 { w.ln() } else { f64::NEG_INFINITY }).collect();
    let log_nu: Vec<f64> = nu.weights.iter().map(|&w| if w > 0.0 { w.ln() } else { f64::NEG_INFINITY }).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut buf = vec![0.0; n.max(m)];
    let mut residual = f64::INFINITY;
    for it in 0..max_iter {
        for i in 0..n {
            for (j, b) in buf[..m].iter_mut().enumerate() {
                *b = (g[j] - cost[i][j]) / lam;
            }
            f[i] = if log_mu[i].is_finite() { lam * log_mu[i] - lam * lse(&buf[..m]) } else { f64::NEG_INFINITY };
        }
        for j in 0..m {
            for (i, b) in buf[..n].iter_mut().enumerate() {
                *b = (f[i] - cost[i][j]) / lam;
            }
            g[j] = if log_nu[j].is_finite() { lam * log_nu[j] - lam * lse(&buf[..n]) } else { f64::NEG_INFINITY };
        }
        // plan marginals: column sums should equal nu exactly after the g
        // update; rows carry the remaining violation
        residual = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..m {
                row += plan_entry(f[i], g[j], cost[i][j], lam);
            }
            residual += (row - mu.weights[i]).abs();
        }
        if residual < tol {
            let mut plan: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..m).map(|j| plan_entry(f[i], g[j], cost[i][j], lam)).collect())
                .collect();
            round_to_feasible(&mut plan, &mu.weights, &nu.weights);
            let value = plan
                .iter()
                .enumerate()
                .map(|(i, row)| row.iter().enumerate().map(|(j, p)| p * cost[i][j]).sum::<f64>())
                .sum();
            return Ok(SinkhornResult { value, plan, iterations: it + 1, marginal_error: residual });
        }
    }
    Err(Error::NoConvergence { iterations: max_iter, residual })
}

/// Projects an approximately-feasible plan onto exact marginals (scale
/// rows down, scale columns down, then spread the leftover mass as a rank-
/// one correction). Keeps the plan nonnegative, so its cost is a genuine
/// upper bound on the LP value.
fn round_to_feasible(plan: &mut [Vec<f64>], mu: &[f64], nu: &[f64]) {
    let (n, m) = (mu.len(), nu.len());
    for i in 0..n {
        let row: f64 = plan[i].iter().sum();
        if row > mu[i] && row > 0.0 {
            let r = mu[i] / row;
            plan[i].iter_mut().for_each(|p| *p *= r);
        }
    }
    for j in 0..m {
        let col: f64 = plan.iter().map(|r| r[j]).sum();
        if col > nu[j] && col > 0.0 {
            let c = nu[j] / col;
            plan.iter_mut().for_each(|r| r[j] *= c);
        }
    }
    let err_r: Vec<f64> = (0..n).map(|i| mu[i] - plan[i].iter().sum::<f64>()).collect();
    let err_c: Vec<f64> = (0..m).map(|j| nu[j] - plan.iter().map(|r| r[j]).sum::<f64>()).collect();
    let total: f64 = err_r.iter().sum();
    if total > 1e-300 {
        for i in 0..n {
            for j in 0..m {
                plan[i][j] += err_r[i] * err_c[j] / total;
            }
        }
    }
}

#[inline]
fn plan_entry(f: f64, g: f64, c: f64, lam: f64) -> f64 {
    let e = (f + g - c) / lam;
    if e.is_finite() {
        e.exp()
    } else {
        0.0
    }
}

fn lse(xs: &[f64]) -> f64 {
    let mx = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    mx + xs.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// Checks marginals and nonnegativity of an arbitrary plan.
pub fn check_plan(plan: &[Vec<f64>], mu: &DiscreteDistribution, nu: &DiscreteDistribution) -> FeasibilityReport {
    let (n, m) = (mu.len(), nu.len());
    let mut max_row = 0.0_f64;
    let mut max_col = 0.0_f64;
    let mut min_entry = f64::INFINITY;
    for (i, &w) in mu.weights.iter().enumerate() {
        let row: f64 = plan.get(i).map_or(0.0, |r| r.iter().sum());
        max_row = max_row.max((row - w).abs());
    }
    for (j, &w) in nu.weights.iter().enumerate() {
        let col: f64 = plan.iter().map(|r| r.get(j).copied().unwrap_or(0.0)).sum();
        max_col = max_col.max((col - w).abs());
    }
    for row in plan.iter().take(n) {
        for &p in row.iter().take(m) {
            min_entry = min_entry.min(p);
        }
    }
    FeasibilityReport {
        max_row_residual: max_row,
        max_col_residual: max_col,
        min_entry,
        feasible: max_row < 1e-9 && max_col < 1e-9 && min_entry > -1e-12,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist(weights: Vec<f64>) -> DiscreteDistribution {
        let support = (0..weights.len()).collect();
        DiscreteDistribution::new(support, weights).unwrap()
    }

    /// Brute-force LP oracle: every vertex of the transportation polytope
    /// is a basic solution on n+m-1 cells; enumerate all cell subsets,
    /// solve the marginal equations by elimination, keep feasible ones.
    fn brute_force_min(mu: &[f64], nu: &[f64], cost: &[Vec<f64>]) -> f64 {
        let (n, m) = (mu.len(), nu.len());
        let cells: Vec<(usize, usize)> =
            (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
        let k = n + m - 1;
        let mut best = f64::INFINITY;
        let mut chosen = vec![false; cells.len()];
        fn rec(
            cells: &[(usize, usize)],
            chosen: &mut Vec<bool>,
            start: usize,
            left: usize,
            mu: &[f64],
            nu: &[f64],
            cost: &[Vec<f64>],
            best: &mut f64,
        ) {
            if left == 0 {
                if let Some(v) = eval_basis(cells, chosen, mu, nu, cost) {
                    if v < *best {
                        *best = v;
                    }
                }
                return;
            }
            if start + left > cells.len() {
                return;
            }
            chosen[start] = true;
            rec(cells, chosen, start + 1, left - 1, mu, nu, cost, best);
            chosen[start] = false;
            rec(cells, chosen, start + 1, left, mu, nu, cost, best);
        }
        fn eval_basis(
            cells: &[(usize, usize)],
            chosen: &[bool],
            mu: &[f64],
            nu: &[f64],
            cost: &[Vec<f64>],
        ) -> Option<f64> {
            let (n, m) = (mu.len(), nu.len());
            let idx: Vec<usize> =
                (0..cells.len()).filter(|&c| chosen[c]).collect();
            let mut flow = vec![f64::NAN; idx.len()];
            let mut row_rem = mu.to_vec();
            let mut col_rem = nu.to_vec();
            let mut remaining: Vec<usize> = (0..idx.len()).collect();
            // peel rows/cols with a single undetermined cell
            while !remaining.is_empty() {
                let mut progressed = false;
                for pos in 0..remaining.len() {
                    let c = remaining[pos];
                    let (i, j) = cells[idx[c]];
                    let row_count = remaining.iter().filter(|&&o| cells[idx[o]].0 == i).count();
                    let col_count = remaining.iter().filter(|&&o| cells[idx[o]].1 == j).count();
                    if row_count == 1 {
                        flow[c] = row_rem[i];
                        row_rem[i] = 0.0;
                        col_rem[j] -= flow[c];
                        remaining.swap_remove(pos);
                        progressed = true;
                        break;
                    }
                    if col_count == 1 {
                        flow[c] = col_rem[j];
                        col_rem[j] = 0.0;
                        row_rem[i] -= flow[c];
                        remaining.swap_remove(pos);
                        progressed = true;
                        break;
                    }
                }
                if !progressed {
                    return None; // contains a cycle, not a basis
                }
            }
            if row_rem.iter().chain(col_rem.iter()).any(|&r| r.abs() > 1e-9) {
                return None;
            }
            if flow.iter().any(|&f| f < -1e-12) {
                return None;
            }
            let _ = (n, m);
            Some(
                flow.iter()
                    .enumerate()
                    .map(|(c, &f)| f * cost[cells[idx[c]].0][cells[idx[c]].1])
                    .sum(),
            )
        }
        rec(&cells, &mut chosen, 0, k, mu, nu, cost, &mut best);
        best
    }

    #[test]
    fn identical_distributions_have_zero_cost() {
        let mu = dist(vec![0.25, 0.75]);
        let cost = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let (v, plan) = wasserstein1_exact(&mu, &mu, &cost).unwrap();
        assert!(v.abs() < 1e-12);
        assert!(plan.plan[0][1].abs() < 1e-12 && plan.plan[1][0].abs() < 1e-12);
    }

    #[test]
    fn point_masses_move_at_ground_cost() {
        let mu = DiscreteDistribution::point_mass(3);
        let nu = DiscreteDistribution::point_mass(9);
        let (v, _) = wasserstein1_exact(&mu, &nu, &[vec![2.25]]).unwrap();
        assert_eq!(v, 2.25);
    }

    #[test]
    fn half_mass_split_example() {
        let mu = dist(vec![0.5, 0.5]);
        let nu = dist(vec![1.0, 0.0]);
        let cost = vec![vec![0.0, 2.0], vec![2.0, 0.0]];
        let (v, plan) = wasserstein1_exact(&mu, &nu, &cost).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let report = check_plan(&plan.plan, &mu, &nu);
        assert!(report.feasible, "{report:?}");
    }

    #[test]
    fn invalid_weights_rejected_before_solving() {
        let err = DiscreteDistribution::new(vec![0, 1], vec![0.5, 0.4]).unwrap_err();
        assert!(err.to_string().contains("sum"));
    }

    #[test]
    fn matches_brute_force_on_small_supports() {
        let mut rng = crate::rng::stream(99, "ot-brute");
        use rand::Rng;
        for trial in 0..200 {
            let n = rng.gen_range(1..=3usize);
            let m = rng.gen_range(1..=3usize);
            let mut mu: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
            let mut nu: Vec<f64> = (0..m).map(|_| rng.gen_range(0.05..1.0)).collect();
            let (su, sv) = (mu.iter().sum::<f64>(), nu.iter().sum::<f64>());
            mu.iter_mut().for_each(|w| *w /= su);
            nu.iter_mut().for_each(|w| *w /= sv);
            let cost: Vec<Vec<f64>> =
                (0..n).map(|_| (0..m).map(|_| rng.gen_range(0.0..5.0)).collect()).collect();
            let exact = wasserstein1_exact(&dist(mu.clone()), &dist(nu.clone()), &cost).unwrap().0;
            let brute = brute_force_min(&mu, &nu, &cost);
            assert!(
                (exact - brute).abs() <= 1e-10,
                "trial {trial}: simplex {exact} vs brute {brute}"
            );
        }
    }

    #[test]
    fn cost_scaling_scales_value() {
        let mu = dist(vec![0.3, 0.7]);
        let nu = dist(vec![0.6, 0.4]);
        let cost = vec![vec![1.0, 2.0], vec![0.5, 3.0]];
        let (v1, _) = wasserstein1_exact(&mu, &nu, &cost).unwrap();
        let scaled: Vec<Vec<f64>> = cost.iter().map(|r| r.iter().map(|c| 4.0 * c).collect()).collect();
        let (v4, _) = wasserstein1_exact(&mu, &nu, &scaled).unwrap();
        assert!((v4 - 4.0 * v1).abs() < 1e-12);
    }

    #[test]
    fn sinkhorn_self_distance_bounded_by_entropy() {
        // W(mu, mu) = 0; the entropic value stays below lam * log(support)
        let mu = dist(vec![0.5, 0.5]);
        let cost = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        for lam in [1.0, 0.1, 0.01] {
            let r = sinkhorn(&mu, &mu, &cost, lam, 20_000, 1e-10).unwrap();
            assert!(r.value >= -1e-12);
            assert!(r.value <= lam * (2.0_f64).ln() + 1e-9, "lam={lam} value={}", r.value);
        }
    }

    #[test]
    fn sinkhorn_close_to_exact_at_small_regularization() {
        let mu = dist(vec![0.1, 0.4, 0.2, 0.3]);
        let nu = dist(vec![0.25, 0.25, 0.25, 0.25]);
        let cost: Vec<Vec<f64>> =
            (0..4).map(|i| (0..4).map(|j| ((i as f64) - (j as f64)).abs()).collect()).collect();
        let (exact, _) = wasserstein1_exact(&mu, &nu, &cost).unwrap();
        let approx = sinkhorn(&mu, &nu, &cost, 1e-3, 200_000, 1e-9).unwrap();
        assert!(approx.value + 1e-12 >= exact, "entropic value must not undercut the LP");
        assert!((approx.value - exact).abs() < 1e-2, "{} vs {exact}", approx.value);
    }

    #[test]
    fn sinkhorn_upward_bias_shrinks_with_regularization() {
        let mu = dist(vec![0.2, 0.5, 0.3]);
        let nu = dist(vec![0.4, 0.1, 0.5]);
        let cost: Vec<Vec<f64>> =
            (0..3).map(|i| (0..3).map(|j| 0.5 + ((2 * i + j) % 3) as f64).collect()).collect();
        let (exact, _) = wasserstein1_exact(&mu, &nu, &cost).unwrap();
        let b1 = sinkhorn(&mu, &nu, &cost, 1.0, 100_000, 1e-10).unwrap().value - exact;
        let b2 = sinkhorn(&mu, &nu, &cost, 0.1, 100_000, 1e-10).unwrap().value - exact;
        let b3 = sinkhorn(&mu, &nu, &cost, 1e-3, 200_000, 1e-10).unwrap().value - exact;
        assert!(b1 >= -1e-10 && b2 >= -1e-10 && b3 >= -1e-10);
        assert!(b1 >= b2 && b2 >= b3, "bias not shrinking: {b1} {b2} {b3}");
    }

    #[test]
    fn sinkhorn_large_regularization_gives_product_coupling() {
        let mu = dist(vec![0.3, 0.7]);
        let nu = dist(vec![0.6, 0.4]);
        let cost = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let r = sinkhorn(&mu, &nu, &cost, 1e7, 10_000, 1e-12).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let prod = mu.weights[i] * nu.weights[j];
                assert!((r.plan[i][j] - prod).abs() < 1e-6, "plan not product coupling");
            }
        }
    }

    #[test]
    fn sinkhorn_nonconvergence_reports_residual() {
        let mu = dist(vec![0.5, 0.5]);
        let nu = dist(vec![0.9, 0.1]);
        let cost = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let err = sinkhorn(&mu, &nu, &cost, 1e-3, 1, 1e-16).unwrap_err();
        match err {
            Error::NoConvergence { iterations, residual } => {
                assert_eq!(iterations, 1);
                assert!(residual.is_finite());
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn hand_built_plan_with_wrong_marginal_is_flagged() {
        let mu = dist(vec![0.5, 0.5]);
        let nu = dist(vec![0.5, 0.5]);
        let bad = vec![vec![0.5, 0.1], vec![0.0, 0.5]];
        let report = check_plan(&bad, &mu, &nu);
        assert!(!report.feasible);
        assert!(report.max_row_residual > 0.09);
        // product coupling is always feasible
        let prod = vec![vec![0.25, 0.25], vec![0.25, 0.25]];
        assert!(check_plan(&prod, &mu, &nu).feasible);
    }

    proptest! {
        #[test]
        fn exact_plan_is_always_feasible_and_certified(
            raw_mu in proptest::collection::vec(0.05f64..1.0, 1..5),
            raw_nu in proptest::collection::vec(0.05f64..1.0, 1..5),
            seed in 0u64..1000,
        ) {
            let su: f64 = raw_mu.iter().sum();
            let sv: f64 = raw_nu.iter().sum();
            let mu = dist(raw_mu.iter().map(|w| w / su).collect());
            let nu = dist(raw_nu.iter().map(|w| w / sv).collect());
            let mut rng = crate::rng::stream(seed, "ot-prop");
            use rand::Rng;
            let cost: Vec<Vec<f64>> = (0..mu.len())
                .map(|_| (0..nu.len()).map(|_| rng.gen_range(0.0..3.0)).collect())
                .collect();
            let (v, plan) = wasserstein1_exact(&mu, &nu, &cost).unwrap();
            let report = check_plan(&plan.plan, &mu, &nu);
            prop_assert!(report.feasible);
            // strong duality
            let dual: f64 = plan.potential_mu.iter().zip(&mu.weights).map(|(p, w)| p * w).sum::<f64>()
                + plan.potential_nu.iter().zip(&nu.weights).map(|(p, w)| p * w).sum::<f64>();
            prop_assert!((dual - v).abs() < 1e-8);
        }
    }
}

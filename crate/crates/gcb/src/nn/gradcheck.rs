//! Central finite-difference gradient verification.

use super::Mlp;
use crate::rng;
use rand::Rng;

/// Compares `analytic` (flattened parameter gradient of `loss` at `params`)
/// against central finite differences on `probe_count` randomly chosen
/// coordinates. Returns the maximum relative error, where the denominator
/// is `max(|analytic|, |numeric|, 1e-6)`: central differences carry
/// cancellation noise of roughly eps * |loss| / h, so gradients below 1e-6
/// cannot be resolved more finely and only agreement at that scale is
/// claimed.
pub fn grad_check<F>(
    params: &Mlp,
    analytic: &[f64],
    loss: F,
    probe_count: usize,
    h: f64,
    seed: u64,
) -> f64
where
    F: Fn(&Mlp) -> f64,
{
    assert!(h > 0.0);
    let flat = params.flatten();
    assert_eq!(flat.len(), analytic.len(), "gradient length mismatch");
    let mut rng = rng::stream(seed, "gradcheck");
    let mut worst = 0.0_f64;
    let mut probe = params.clone();
    for _ in 0..probe_count {
        let i = rng.gen_range(0..flat.len());
        let mut plus = flat.clone();
        plus[i] += h;
        probe.unflatten(&plus);
        let lp = loss(&probe);
        let mut minus = flat.clone();
        minus[i] -= h;
        probe.unflatten(&minus);
        let lm = loss(&probe);
        let numeric = (lp - lm) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_loss_is_exact_up_to_float_noise() {
        let mlp = Mlp::init(&[3, 2], 11, "t");
        // loss = 0.5 * sum p_i^2 -> gradient = p
        let loss = |m: &Mlp| m.flatten().iter().map(|p| 0.5 * p * p).sum();
        let analytic = mlp.flatten();
        let err = grad_check(&mlp, &analytic, loss, 32, 1e-5, 7);
        assert!(err <= 1e-8, "quadratic check should be near-exact: {err}");
    }
}

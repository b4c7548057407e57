//! Adaptive-moment optimizer with decoupled weight decay.

use super::{Mlp, MlpGrads};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay: p <- p * (1 - lr * wd) before the moment step.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay }
    }
}

/// First/second moment accumulators mirroring an [`Mlp`]'s parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(mlp: &Mlp, cfg: AdamConfig) -> Self {
        let n = mlp.num_params();
        AdamState { cfg, step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    /// One bias-corrected update. Weight decay applies to weights and
    /// biases alike (the nets are small; biases start at zero anyway).
    pub fn step(&mut self, params: &mut Mlp, grads: &MlpGrads) -> Result<()> {
        for (li, (gw, gb)) in grads.weight.iter().zip(&grads.bias).enumerate() {
            let finite = gw.data.iter().chain(gb.iter()).all(|v| v.is_finite());
            if !finite {
                return Err(Error::NonFinite(format!("gradient of layer {li}")));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powf(t);
        let bc2 = 1.0 - c.beta2.powf(t);
        let decay = 1.0 - c.lr * c.weight_decay;

        let mut i = 0;
        for (li, layer) in params.layers.iter_mut().enumerate() {
            let gw = &grads.weight[li];
            for (p, &g) in layer.weight.data.iter_mut().zip(&gw.data) {
                *p *= decay;
                let m = &mut self.m[i];
                let v = &mut self.v[i];
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= c.lr * mhat / (vhat.sqrt() + c.eps);
                i += 1;
            }
            let gb = &grads.bias[li];
            for (p, &g) in layer.bias.iter_mut().zip(gb) {
                *p *= decay;
                let m = &mut self.m[i];
                let v = &mut self.v[i];
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= c.lr * mhat / (vhat.sqrt() + c.eps);
                i += 1;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Matrix;

    #[test]
    fn zero_gradients_leave_params_unchanged_without_decay() {
        let mut mlp = Mlp::init(&[2, 3], 5, "t");
        let before = mlp.flatten();
        let mut opt = AdamState::new(&mlp, AdamConfig::new(1e-3, 0.0));
        let grads = MlpGrads::zeros_like(&mlp);
        for _ in 0..3 {
            opt.step(&mut mlp, &grads).unwrap();
        }
        assert_eq!(before, mlp.flatten());
        // moments stay at zero but the step counter advances
        assert_eq!(opt.step, 3);
    }

    #[test]
    fn single_scalar_step_matches_hand_computation() {
        // One parameter w, gradient g: after one step from zero moments
        // update = -lr * g / (|g| + eps) exactly.
        let mut mlp = Mlp::init(&[1, 1], 5, "t");
        mlp.unflatten(&[0.25, 0.0]);
        let cfg = AdamConfig::new(0.01, 0.0);
        let mut opt = AdamState::new(&mlp, cfg);
        let g = 2.0;
        let mut grads = MlpGrads::zeros_like(&mlp);
        grads.weight[0] = Matrix::from_rows(vec![vec![g]]);
        opt.step(&mut mlp, &grads).unwrap();
        let expected = 0.25 - cfg.lr * g / (g.abs() + cfg.eps);
        let got = mlp.flatten()[0];
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
    }

    #[test]
    fn decoupled_decay_shrinks_untouched_param() {
        let mut mlp = Mlp::init(&[1, 1], 5, "t");
        mlp.unflatten(&[1.0, 0.0]);
        let cfg = AdamConfig::new(5e-4, 1e-4);
        let mut opt = AdamState::new(&mlp, cfg);
        let grads = MlpGrads::zeros_like(&mlp);
        let factor = 1.0 - cfg.lr * cfg.weight_decay;
        for k in 1..=4 {
            opt.step(&mut mlp, &grads).unwrap();
            let expected = factor.powi(k);
            assert!((mlp.flatten()[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_names_the_layer() {
        let mut mlp = Mlp::init(&[2, 2, 1], 5, "t");
        let mut opt = AdamState::new(&mlp, AdamConfig::new(1e-3, 0.0));
        let mut grads = MlpGrads::zeros_like(&mlp);
        grads.bias[1][0] = f64::NAN;
        let err = opt.step(&mut mlp, &grads).unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");
    }
}

//! Offline goal-conditioned RL: expectile-regression Q-learning over the
//! learned representations, with standard and analogy-conditioned
//! evaluation.
//!
//! The critic learns Q(x, a) and V(x) where x is the policy input built
//! from the configured mode; the discrete policy is extracted from
//! advantages by a softmax (or argmax) rather than a separate actor net.

mod eval;
mod train;

pub use eval::{evaluate_analogy, evaluate_goal_conditioned, EvalConfig, EvalReport, SuccessRule};
pub use train::{train_offline, OfflineTrainLog, RlConfig, Schedule};

use crate::envs::Codec;
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, Matrix, Mlp, MlpGrads};
use crate::repr::{FeatureCache, PhiEncoder, PsiEncoder};
use crate::rng;
use serde::{Deserialize, Serialize};

/// How the policy/critic input is assembled from a (state, goal) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyInputMode {
    /// concat(psi(s), psi(g))
    PsiPsi,
    /// concat(psi(s), phi(s, g))
    PsiPhi,
    /// concat(features(s), features(g))
    Raw,
}

/// Input assembler shared by training and evaluation.
pub struct InputBuilder<'a> {
    pub mode: PolicyInputMode,
    pub cache: &'a FeatureCache,
    pub phi: &'a PhiEncoder,
    pub psi: &'a PsiEncoder,
}

impl<'a> InputBuilder<'a> {
    pub fn dim(&self) -> usize {
        match self.mode {
            PolicyInputMode::PsiPsi => 2 * self.psi.mlp.output_dim(),
            PolicyInputMode::PsiPhi => self.psi.mlp.output_dim() + self.phi.mlp.output_dim(),
            PolicyInputMode::Raw => 2 * self.cache.feature_len,
        }
    }

    /// Input for acting toward an explicit goal state.
    pub fn build(&self, s: usize, g: usize) -> Vec<f64> {
        match self.mode {
            PolicyInputMode::PsiPsi => {
                let mut v = self.psi.embed(self.cache, s);
                v.extend(self.psi.embed(self.cache, g));
                v
            }
            PolicyInputMode::PsiPhi => {
                let mut v = self.psi.embed(self.cache, s);
                v.extend(self.phi.embed(self.cache, s, g));
                v
            }
            PolicyInputMode::Raw => {
                let mut v = self.cache.state(s).to_vec();
                v.extend_from_slice(self.cache.state(g));
                v
            }
        }
    }

    /// Input for acting under a fixed task latent (analogy conditioning).
    /// Only meaningful for the psi-phi mode.
    pub fn build_with_task_latent(&self, s: usize, task_latent: &[f64]) -> Result<Vec<f64>> {
        if self.mode != PolicyInputMode::PsiPhi {
            return Err(Error::InputModeMismatch(format!(
                "analogy conditioning requires the psi-phi input mode, got {:?}",
                self.mode
            )));
        }
        let mut v = self.psi.embed(self.cache, s);
        v.extend_from_slice(task_latent);
        Ok(v)
    }
}

/// Q-net, V-net and the slowly-tracking target Q copy.
pub struct CriticParams {
    pub q: Mlp,
    pub v: Mlp,
    pub q_target: Mlp,
    pub tau: f64,
    pub num_actions: usize,
    opt_q: AdamState,
    opt_v: AdamState,
}

impl CriticParams {
    pub fn new(input_dim: usize, num_actions: usize, hidden: &[usize], tau: f64, lr: f64, seed: u64) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::InvalidConfig(format!("critic tau {tau} outside (0,1]")));
        }
        let mut q_sizes = vec![input_dim + num_actions];
        q_sizes.extend_from_slice(hidden);
        q_sizes.push(1);
        let mut v_sizes = vec![input_dim];
        v_sizes.extend_from_slice(hidden);
        v_sizes.push(1);
        let q = Mlp::init(&q_sizes, seed, "q-net");
        let v = Mlp::init(&v_sizes, seed, "v-net");
        let q_target = q.clone();
        let opt_q = AdamState::new(&q, AdamConfig::new(lr, 0.0));
        let opt_v = AdamState::new(&v, AdamConfig::new(lr, 0.0));
        Ok(CriticParams { q, v, q_target, tau, num_actions, opt_q, opt_v })
    }

    /// Q(x, a) for all actions of a single input.
    pub fn q_values(&self, x: &[f64], target: bool) -> Vec<f64> {
        let net = if target { &self.q_target } else { &self.q };
        let a_n = self.num_actions;
        let mut batch = Matrix::zeros(a_n, x.len() + a_n);
        for a in 0..a_n {
            let row = batch.row_mut(a);
            row[..x.len()].copy_from_slice(x);
            row[x.len() + a] = 1.0;
        }
        net.forward_nograd(&batch).data
    }

    fn soft_update_target(&mut self) {
        let tau = self.tau;
        let online = self.q.flatten();
        let mut tgt = self.q_target.flatten();
        for (t, o) in tgt.iter_mut().zip(&online) {
            *t = (1.0 - tau) * *t + tau * o;
        }
        self.q_target.unflatten(&tgt);
    }
}

/// One IQL batch: inputs for (s,g), the action, reward, next input, and
/// the terminal flag (episode ended by goal-match).
pub struct IqlBatch {
    pub x: Matrix,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub x_next: Matrix,
    pub terminal: Vec<bool>,
}

pub struct IqlLosses {
    pub v_loss: f64,
    pub q_loss: f64,
    /// Gradient w.r.t. the critic inputs (for optional encoder updates):
    /// d(total critic loss)/dx rows aligned with the batch.
    pub dx: Matrix,
    pub dx_next: Matrix,
}

/// One IQL update: expectile V-step toward target-Q, then a squared-error
/// Q-step toward r + gamma (1 - terminal) V(x'), then the target soft
/// update. Returns per-input gradients so callers may backpropagate into
/// encoders when that ablation is on.
pub fn iql_update(
    critic: &mut CriticParams,
    batch: &IqlBatch,
    gamma: f64,
    quantile: f64,
) -> Result<IqlLosses> {
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::InvalidConfig(format!("quantile {quantile} outside (0,1)")));
    }
    let b = batch.actions.len();
    let a_n = critic.num_actions;
    let in_dim = batch.x.cols;

    // --- V step: expectile regression of V(x) toward target Q(x, a)
    let mut xa = Matrix::zeros(b, in_dim + a_n);
    for r in 0..b {
        xa.row_mut(r)[..in_dim].copy_from_slice(batch.x.row(r));
        xa.row_mut(r)[in_dim + batch.actions[r]] = 1.0;
    }
    let tq = critic.q_target.forward_nograd(&xa);
    let (vx, v_fwd) = critic.v.forward_batch(&batch.x);
    let mut dv = Matrix::zeros(b, 1);
    let mut v_loss = 0.0;
    for r in 0..b {
        let u = tq.row(r)[0] - vx.row(r)[0];
        let w = if u < 0.0 { 1.0 - quantile } else { quantile };
        v_loss += w * u * u / b as f64;
        dv.row_mut(r)[0] = -2.0 * w * u / b as f64;
    }
    if !v_loss.is_finite() {
        return Err(Error::NonFinite("expectile targets".into()));
    }
    let (v_grads, dx_v) = critic.v.backward_batch(&v_fwd, &dv);
    critic.opt_v.step(&mut critic.v, &v_grads)?;

    // --- Q step: fit Q(x, a) to r + gamma (1 - done) V(x') with the
    // freshly updated V
    let v_next = critic.v.forward_nograd(&batch.x_next);
    let (qx, q_fwd) = critic.q.forward_batch(&xa);
    let mut dq = Matrix::zeros(b, 1);
    let mut q_loss = 0.0;
    for r in 0..b {
        let cont = if batch.terminal[r] { 0.0 } else { 1.0 };
        let y = batch.rewards[r] + gamma * cont * v_next.row(r)[0];
        if !y.is_finite() {
            return Err(Error::NonFinite("Q targets".into()));
        }
        let err = qx.row(r)[0] - y;
        q_loss += err * err / b as f64;
        dq.row_mut(r)[0] = 2.0 * err / b as f64;
    }
    let (q_grads, dxa) = critic.q.backward_batch(&q_fwd, &dq);
    critic.opt_q.step(&mut critic.q, &q_grads)?;
    critic.soft_update_target();

    // combine input gradients (x gets V-step and Q-step contributions)
    let mut dx = Matrix::zeros(b, in_dim);
    for r in 0..b {
        for c in 0..in_dim {
            dx.row_mut(r)[c] = dx_v.row(r)[c] + dxa.row(r)[c];
        }
    }
    // gradient w.r.t. x' is zero by construction (V(x') is a target);
    // kept in the interface for symmetry
    let dx_next = Matrix::zeros(b, in_dim);
    Ok(IqlLosses { v_loss, q_loss, dx, dx_next })
}

/// Discrete policy from advantages: pi(a|x) proportional to
/// exp(beta (Q(x,a) - V(x))). `beta = infinity` acts greedily with
/// lowest-index tie-breaking; `beta = 0` is uniform.
pub struct ExtractedPolicy<'a> {
    pub critic: &'a CriticParams,
    pub inputs: InputBuilder<'a>,
    pub beta: f64,
}

impl<'a> ExtractedPolicy<'a> {
    pub fn action_distribution(&self, x: &[f64]) -> Vec<f64> {
        let q = self.critic.q_values(x, false);
        advantage_softmax(&q, self.beta)
    }

    pub fn greedy_action_for(&self, x: &[f64]) -> usize {
        let q = self.critic.q_values(x, false);
        argmax_low(&q)
    }
}

pub fn advantage_softmax(q: &[f64], beta: f64) -> Vec<f64> {
    if beta.is_infinite() {
        let mut p = vec![0.0; q.len()];
        p[argmax_low(q)] = 1.0;
        return p;
    }
    // V(x) cancels inside the softmax; subtract the max for stability
    let mx = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = q.iter().map(|&v| (beta * (v - mx)).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

fn argmax_low(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Materializes the full tabular policy (small instances; used by tests
/// and the oracle-comparison paths).
pub fn extract_goal_policy(
    critic: &CriticParams,
    inputs: &InputBuilder,
    codec: &Codec,
    beta: f64,
) -> Result<crate::gcmdp::GoalPolicy> {
    let n = codec.num_states();
    let a_n = critic.num_actions;
    let mut per_goal = Vec::with_capacity(n);
    for g in 0..n {
        let mut rows = vec![0.0; n * a_n];
        for s in 0..n {
            let x = inputs.build(s, g);
            let dist = advantage_softmax(&critic.q_values(&x, false), beta);
            rows[s * a_n..(s + 1) * a_n].copy_from_slice(&dist);
        }
        per_goal.push(rows);
    }
    crate::gcmdp::GoalPolicy::from_dense(n, a_n, per_goal)
}

//! The offline training loop: representation updates interleaved with
//! critic updates on the same sampled batch.

use super::{iql_update, CriticParams, InputBuilder, IqlBatch, PolicyInputMode};
use crate::envs::Dataset;
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::repr::{permute_pair_batch, FeatureCache, ReprConfig, ReprTrainer};
use crate::rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// Representation and critic step on every batch (the default).
    Concurrent,
    /// All representation epochs first, then all critic epochs.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlConfig {
    pub gamma: f64,
    pub quantile: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub critic_lr: f64,
    pub critic_hidden: Vec<usize>,
    pub beta_adv: f64,
    pub input_mode: PolicyInputMode,
    pub critic_grads_to_encoders: bool,
    pub schedule: Schedule,
    pub seed: u64,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            gamma: 0.99,
            quantile: 0.7,
            tau: 0.005,
            batch_size: 256,
            epochs: 30,
            critic_lr: 1e-4,
            critic_hidden: vec![64, 64],
            beta_adv: 3.0,
            input_mode: PolicyInputMode::PsiPhi,
            critic_grads_to_encoders: false,
            schedule: Schedule::Concurrent,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OfflineTrainLog {
    pub epochs: Vec<OfflineEpochLog>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OfflineEpochLog {
    pub epoch: usize,
    pub v_loss: f64,
    pub q_loss: f64,
    pub phi_loss: f64,
    pub psi_loss: f64,
}

/// Trains the critic (and, concurrently, the encoders) on an offline
/// dataset. Returns the critic; the encoders live in the trainer that the
/// caller supplied and are updated in place.
pub fn train_offline(
    dataset: &Dataset,
    repr_trainer: &mut ReprTrainer,
    cfg: &RlConfig,
) -> Result<(CriticParams, OfflineTrainLog)> {
    if dataset.transitions.is_empty() {
        return Err(Error::InvalidConfig("dataset is empty".into()));
    }
    let input_dim = {
        let b = InputBuilder {
            mode: cfg.input_mode,
            cache: &repr_trainer.cache,
            phi: &repr_trainer.phi,
            psi: &repr_trainer.psi,
        };
        b.dim()
    };
    let mut critic = CriticParams::new(
        input_dim,
        6,
        &cfg.critic_hidden,
        cfg.tau,
        cfg.critic_lr,
        rng::derive(cfg.seed, "critic-init"),
    )?;
    let mut order: Vec<usize> = (0..dataset.transitions.len()).collect();
    let mut shuffle_rng = rng::stream(cfg.seed, "offline-shuffle");
    let mut epochs_log = Vec::new();

    // sequential schedule: finish representation training first
    if cfg.schedule == Schedule::Sequential {
        use rand::seq::SliceRandom;
        for _ in 0..repr_trainer.cfg.epochs {
            order.shuffle(&mut shuffle_rng);
            for chunk in order.chunks(repr_trainer.cfg.batch_size) {
                if chunk.len() < 2 {
                    continue;
                }
                let batch: Vec<_> = chunk.iter().map(|&i| dataset.transitions[i]).collect();
                let pb = permute_pair_batch(batch, &mut shuffle_rng);
                repr_trainer.step(&pb)?;
            }
        }
    }

    for epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut shuffle_rng);
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<_> = chunk.iter().map(|&i| dataset.transitions[i]).collect();
            let (phi_l, psi_l) = if cfg.schedule == Schedule::Concurrent {
                let pb = permute_pair_batch(batch.clone(), &mut shuffle_rng);
                let l = repr_trainer.step(&pb)?;
                (l.phi, l.psi)
            } else {
                (0.0, 0.0)
            };
            // assemble critic inputs with the (possibly just-updated)
            // encoders; terminal flags need dataset indices
            let iql_batch = build_iql_batch(dataset, chunk, repr_trainer, cfg.input_mode);
            let losses = iql_update(&mut critic, &iql_batch, cfg.gamma, cfg.quantile)?;
            if cfg.critic_grads_to_encoders {
                backprop_into_encoders(repr_trainer, cfg.input_mode, chunk, dataset, &losses.dx)?;
            }
            sums.0 += losses.v_loss;
            sums.1 += losses.q_loss;
            sums.2 += phi_l;
            sums.3 += psi_l;
            batches += 1;
        }
        let n = batches.max(1) as f64;
        epochs_log.push(OfflineEpochLog {
            epoch,
            v_loss: sums.0 / n,
            q_loss: sums.1 / n,
            phi_loss: sums.2 / n,
            psi_loss: sums.3 / n,
        });
    }
    Ok((critic, OfflineTrainLog { epochs: epochs_log }))
}

fn build_iql_batch(
    dataset: &Dataset,
    idxs: &[usize],
    trainer: &ReprTrainer,
    mode: PolicyInputMode,
) -> IqlBatch {
    let builder = InputBuilder { mode, cache: &trainer.cache, phi: &trainer.phi, psi: &trainer.psi };
    let dim = builder.dim();
    let b = idxs.len();
    let mut x = Matrix::zeros(b, dim);
    let mut x_next = Matrix::zeros(b, dim);
    let mut actions = Vec::with_capacity(b);
    let mut rewards = Vec::with_capacity(b);
    let mut terminal = Vec::with_capacity(b);
    for (r, &i) in idxs.iter().enumerate() {
        let t = dataset.transitions[i];
        x.row_mut(r).copy_from_slice(&builder.build(t.s as usize, t.g as usize));
        x_next.row_mut(r).copy_from_slice(&builder.build(t.sp as usize, t.g as usize));
        actions.push(t.a as usize);
        rewards.push(t.r as f64);
        terminal.push(dataset.is_terminal(i));
    }
    IqlBatch { x, actions, rewards, x_next, terminal }
}

/// Routes d(loss)/d(input) through the encoder forward passes and applies
/// one Adam step to each encoder (the critic-gradients ablation).
fn backprop_into_encoders(
    trainer: &mut ReprTrainer,
    mode: PolicyInputMode,
    idxs: &[usize],
    dataset: &Dataset,
    dx: &Matrix,
) -> Result<()> {
    if mode == PolicyInputMode::Raw {
        return Ok(()); // nothing upstream of raw features
    }
    let b = idxs.len();
    let cache = &trainer.cache;
    let psi_dim = trainer.psi.mlp.output_dim();
    // psi(s) occupies the first psi_dim columns in both modes
    let xs = cache.gather(idxs.iter().map(|&i| dataset.transitions[i].s as usize));
    let (_, psi_fwd) = trainer.psi.mlp.forward_batch(&xs);
    let mut dpsi = Matrix::zeros(b, psi_dim);
    for r in 0..b {
        dpsi.row_mut(r).copy_from_slice(&dx.row(r)[..psi_dim]);
    }
    let (psi_grads, _) = trainer.psi.mlp.backward_batch(&psi_fwd, &dpsi);

    match mode {
        PolicyInputMode::PsiPsi => {
            let xg = cache.gather(idxs.iter().map(|&i| dataset.transitions[i].g as usize));
            let (_, g_fwd) = trainer.psi.mlp.forward_batch(&xg);
            let mut dg = Matrix::zeros(b, psi_dim);
            for r in 0..b {
                dg.row_mut(r).copy_from_slice(&dx.row(r)[psi_dim..]);
            }
            let (mut g_grads, _) = trainer.psi.mlp.backward_batch(&g_fwd, &dg);
            g_grads.add(&psi_grads);
            trainer.apply_psi_grads(&g_grads)?;
        }
        PolicyInputMode::PsiPhi => {
            trainer.apply_psi_grads(&psi_grads)?;
            let phi_dim = trainer.phi.mlp.output_dim();
            let xp = cache.gather_pairs(
                idxs.iter().map(|&i| {
                    let t = dataset.transitions[i];
                    (t.s as usize, t.g as usize)
                }),
            );
            let (_, phi_fwd) = trainer.phi.mlp.forward_batch(&xp);
            let mut dphi = Matrix::zeros(b, phi_dim);
            for r in 0..b {
                dphi.row_mut(r).copy_from_slice(&dx.row(r)[psi_dim..]);
            }
            let (phi_grads, _) = trainer.phi.mlp.backward_batch(&phi_fwd, &dphi);
            trainer.apply_phi_grads(&phi_grads)?;
        }
        PolicyInputMode::Raw => unreachable!(),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_drawer_grid, generate_dataset, EnvConfig};

    fn tiny_setup() -> (crate::envs::DrawerGrid, Dataset) {
        let env = build_drawer_grid(&EnvConfig::default()).unwrap();
        let data = generate_dataset(&env, 512, 0.3, 75, 7).unwrap();
        (env, data)
    }

    #[test]
    fn zero_epochs_returns_fresh_critic() {
        let (env, data) = tiny_setup();
        let rcfg = ReprConfig { epochs: 0, ..Default::default() };
        let mut trainer = ReprTrainer::new(&env.codec, 6, 0.9, &rcfg);
        let cfg = RlConfig { epochs: 0, ..Default::default() };
        let (critic, log) = train_offline(&data, &mut trainer, &cfg).unwrap();
        assert!(log.epochs.is_empty());
        // untouched critic: online equals target
        assert_eq!(critic.q.flatten(), critic.q_target.flatten());
    }

    #[test]
    fn critic_grads_flag_controls_encoder_updates() {
        let (env, data) = tiny_setup();
        let rcfg = ReprConfig { epochs: 0, batch_size: 64, ..Default::default() };
        let base_psi = ReprTrainer::new(&env.codec, 6, 0.9, &rcfg).psi.mlp.flatten();

        // concurrent repr updates off (sequential with 0 repr epochs), so
        // only the critic-grads path can move the encoders
        for (flag, expect_change) in [(false, false), (true, true)] {
            let mut trainer = ReprTrainer::new(&env.codec, 6, 0.9, &rcfg);
            let cfg = RlConfig {
                epochs: 1,
                batch_size: 64,
                critic_grads_to_encoders: flag,
                schedule: Schedule::Sequential,
                ..Default::default()
            };
            train_offline(&data, &mut trainer, &cfg).unwrap();
            let changed = trainer.psi.mlp.flatten() != base_psi;
            assert_eq!(changed, expect_change, "flag {flag}");
        }
    }

    #[test]
    fn training_is_deterministic_in_the_seed() {
        let (env, data) = tiny_setup();
        let rcfg = ReprConfig { epochs: 1, batch_size: 64, ..Default::default() };
        let run = || {
            let mut trainer = ReprTrainer::new(&env.codec, 6, 0.9, &rcfg);
            let cfg = RlConfig { epochs: 1, batch_size: 64, ..Default::default() };
            let (critic, _) = train_offline(&data, &mut trainer, &cfg).unwrap();
            (critic.q.flatten(), trainer.phi.mlp.flatten())
        };
        let (q1, p1) = run();
        let (q2, p2) = run();
        assert_eq!(q1, q2);
        assert_eq!(p1, p2);
    }
}

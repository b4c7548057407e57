//! The representation training loop: sample a batch, permute it, step the
//! paired encoder, then step the state encoder.

use super::{
    dynamics_variant_losses, permute_pair_batch, phi_loss, psi_loss, reward_decoder_loss,
    FeatureCache, NormMode, PairBatch, PhiEncoder, PsiEncoder,
};
use crate::envs::{Codec, Dataset};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, Mlp};
use crate::rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReprConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub phi_lr: f64,
    pub phi_weight_decay: f64,
    pub psi_lr: f64,
    pub psi_weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub grounding: bool,
    pub first_term_norm: NormMode,
    pub reward_decoder: bool,
    pub dynamics_model: bool,
    /// Discount in the bootstrap target; defaults to the env discount at
    /// the call site when left at None.
    pub gamma: Option<f64>,
}

impl Default for ReprConfig {
    fn default() -> Self {
        ReprConfig {
            latent_dim: 32,
            hidden: vec![64, 64],
            phi_lr: 1e-4,
            phi_weight_decay: 1e-3,
            psi_lr: 5e-4,
            psi_weight_decay: 1e-4,
            batch_size: 256,
            epochs: 30,
            seed: 0,
            grounding: true,
            first_term_norm: NormMode::L1,
            reward_decoder: true,
            dynamics_model: false,
            gamma: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub phi_loss: f64,
    pub psi_loss: f64,
    pub decoder_loss: Option<f64>,
    pub model_loss: Option<f64>,
}

pub struct TrainedReprs {
    pub phi: PhiEncoder,
    pub psi: PsiEncoder,
    pub decoder: Option<Mlp>,
    pub dynamics: Option<Mlp>,
    pub log: Vec<EpochLog>,
    pub gamma: f64,
}

/// Mutable training state, stepped one batch at a time so offline RL can
/// interleave its own updates.
pub struct ReprTrainer {
    pub cfg: ReprConfig,
    pub cache: FeatureCache,
    pub phi: PhiEncoder,
    pub psi: PsiEncoder,
    pub decoder: Option<Mlp>,
    pub dynamics: Option<Mlp>,
    opt_phi: AdamState,
    opt_psi: AdamState,
    opt_decoder: Option<AdamState>,
    opt_dynamics: Option<AdamState>,
    pub gamma: f64,
    num_actions: usize,
}

pub struct StepLosses {
    pub phi: f64,
    pub psi: f64,
    pub decoder: Option<f64>,
    pub model: Option<f64>,
}

impl ReprTrainer {
    pub fn new(codec: &Codec, num_actions: usize, env_gamma: f64, cfg: &ReprConfig) -> Self {
        let cache = FeatureCache::new(codec);
        let f = cache.feature_len;
        let phi = PhiEncoder::init(f, &cfg.hidden, cfg.latent_dim, rng::derive(cfg.seed, "phi-init"));
        let psi = PsiEncoder::init(f, &cfg.hidden, cfg.latent_dim, rng::derive(cfg.seed, "psi-init"));
        let opt_phi = AdamState::new(&phi.mlp, AdamConfig::new(cfg.phi_lr, cfg.phi_weight_decay));
        let opt_psi = AdamState::new(&psi.mlp, AdamConfig::new(cfg.psi_lr, cfg.psi_weight_decay));
        let decoder = cfg.reward_decoder.then(|| {
            Mlp::init(
                &[2 * cfg.latent_dim, cfg.hidden[0], 1],
                rng::derive(cfg.seed, "decoder-init"),
                "decoder",
            )
        });
        let opt_decoder =
            decoder.as_ref().map(|d| AdamState::new(d, AdamConfig::new(cfg.phi_lr, 0.0)));
        let dynamics = cfg.dynamics_model.then(|| {
            Mlp::init(
                &[cfg.latent_dim + num_actions, cfg.hidden[0], cfg.latent_dim],
                rng::derive(cfg.seed, "dyn-init"),
                "dyn",
            )
        });
        let opt_dynamics =
            dynamics.as_ref().map(|d| AdamState::new(d, AdamConfig::new(cfg.phi_lr, 0.0)));
        ReprTrainer {
            cfg: cfg.clone(),
            cache,
            phi,
            psi,
            decoder,
            dynamics,
            opt_phi,
            opt_psi,
            opt_decoder,
            opt_dynamics,
            gamma: cfg.gamma.unwrap_or(env_gamma),
            num_actions,
        }
    }

    /// Applies externally computed gradients to psi (the critic-gradients
    /// ablation routes RL gradients here).
    pub fn apply_psi_grads(&mut self, grads: &crate::nn::MlpGrads) -> Result<()> {
        self.opt_psi.step(&mut self.psi.mlp, grads)
    }

    /// Applies externally computed gradients to phi.
    pub fn apply_phi_grads(&mut self, grads: &crate::nn::MlpGrads) -> Result<()> {
        self.opt_phi.step(&mut self.phi.mlp, grads)
    }

    /// One training iteration on a prepared pair batch: phi step (with the
    /// decoder term when enabled), then psi step against the updated phi.
    pub fn step(&mut self, batch: &PairBatch) -> Result<StepLosses> {
        let gamma = self.gamma;
        let norm = self.cfg.first_term_norm;
        let (phi_l, mut phi_g, model_l) = if let Some(model) = &self.dynamics {
            let out = dynamics_variant_losses(
                model,
                &self.phi.mlp,
                &self.phi.mlp,
                batch,
                &self.cache,
                self.num_actions,
                gamma,
                norm,
            )?;
            // model step on its own loss
            self.opt_dynamics
                .as_mut()
                .unwrap()
                .step(self.dynamics.as_mut().unwrap(), &out.model_grads)?;
            (out.phi_loss, out.phi_grads, Some(out.model_loss))
        } else {
            let (l, g) = phi_loss(&self.phi.mlp, &self.phi.mlp, batch, &self.cache, gamma, norm)?;
            (l, g, None)
        };
        let decoder_l = if let Some(dec) = &self.decoder {
            let (l, dec_g, phi_extra) =
                reward_decoder_loss(dec, &self.phi.mlp, &batch.transitions, &self.cache)?;
            phi_g.add(&phi_extra);
            self.opt_decoder.as_mut().unwrap().step(self.decoder.as_mut().unwrap(), &dec_g)?;
            Some(l)
        } else {
            None
        };
        self.opt_phi.step(&mut self.phi.mlp, &phi_g)?;
        let (psi_l, psi_g) = psi_loss(
            &self.psi.mlp,
            &self.phi.mlp,
            &batch.transitions,
            &self.cache,
            self.cfg.grounding,
        )?;
        self.opt_psi.step(&mut self.psi.mlp, &psi_g)?;
        if !(self.phi.mlp.is_finite() && self.psi.mlp.is_finite()) {
            return Err(Error::NonFinite("encoder parameters".into()));
        }
        Ok(StepLosses { phi: phi_l, psi: psi_l, decoder: decoder_l, model: model_l })
    }
}

/// Runs the full representation training schedule over a dataset.
/// Deterministic in the config seed; zero epochs returns the untouched
/// initializations.
pub fn train_representations(
    dataset: &Dataset,
    codec: &Codec,
    num_actions: usize,
    env_gamma: f64,
    cfg: &ReprConfig,
) -> Result<TrainedReprs> {
    if dataset.transitions.is_empty() {
        return Err(Error::InvalidConfig("dataset is empty".into()));
    }
    if codec.feature_len() == 0 {
        return Err(Error::ShapeMismatch("zero-length features".into()));
    }
    let mut trainer = ReprTrainer::new(codec, num_actions, env_gamma, cfg);
    let mut order: Vec<usize> = (0..dataset.transitions.len()).collect();
    let mut shuffle_rng = rng::stream(cfg.seed, "repr-shuffle");
    let mut log = Vec::with_capacity(cfg.epochs);
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
            let pb = permute_pair_batch(batch, &mut shuffle_rng);
            let losses = trainer.step(&pb)?;
            sums.0 += losses.phi;
            sums.1 += losses.psi;
            sums.2 += losses.decoder.unwrap_or(0.0);
            sums.3 += losses.model.unwrap_or(0.0);
            batches += 1;
        }
        let n = batches.max(1) as f64;
        log.push(EpochLog {
            epoch,
            phi_loss: sums.0 / n,
            psi_loss: sums.1 / n,
            decoder_loss: cfg.reward_decoder.then_some(sums.2 / n),
            model_loss: cfg.dynamics_model.then_some(sums.3 / n),
        });
    }
    Ok(TrainedReprs {
        phi: trainer.phi,
        psi: trainer.psi,
        decoder: trainer.decoder,
        dynamics: trainer.dynamics,
        log,
        gamma: trainer.gamma,
    })
}

//! Representation learning: the paired encoder phi, the state encoder psi,
//! their losses with every ablation variant, latent analogy arithmetic and
//! nearest-neighbor probes.
//!
//! phi(s, g) embeds a task so that l1 distances between embeddings track
//! the paired-state metric; psi(s) embeds single states so that
//! psi(g) - psi(s) matches the (grounded) task embedding. Stop-gradient
//! terms take an explicit frozen parameter set, which during training is
//! simply the current parameters; gradients never flow through them.

mod probes;
mod train;

pub use probes::{analogy_probe, phi_nn_probe, spearman, ProbeReport};
pub use train::{train_representations, EpochLog, ReprConfig, ReprTrainer, StepLosses, TrainedReprs};

use crate::envs::Codec;
use crate::envs::Transition;
use crate::error::{Error, Result};
use crate::nn::{Matrix, Mlp, MlpGrads};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufWriter, Write};
use std::path::Path;

/// First-term norm of the paired-encoder loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    L1,
    L2,
}

/// Paired state/goal encoder: concat(features(s), features(g)) -> R^k.
#[derive(Debug, Clone)]
pub struct PhiEncoder {
    pub mlp: Mlp,
}

/// Single-state encoder (Siamese: the same weights embed states and goals).
#[derive(Debug, Clone)]
pub struct PsiEncoder {
    pub mlp: Mlp,
}

/// Per-state one-hot features, cached for batch assembly.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    pub feature_len: usize,
    rows: Matrix,
}

impl FeatureCache {
    pub fn new(codec: &Codec) -> Self {
        let f = codec.feature_len();
        let n = codec.num_states();
        let mut rows = Matrix::zeros(n, f);
        for s in 0..n {
            codec.write_features(s, rows.row_mut(s));
        }
        FeatureCache { feature_len: f, rows }
    }

    #[inline]
    pub fn state(&self, s: usize) -> &[f64] {
        self.rows.row(s)
    }

    /// Batch of single-state features.
    pub fn gather(&self, states: impl Iterator<Item = usize>) -> Matrix {
        let states: Vec<usize> = states.collect();
        let mut m = Matrix::zeros(states.len(), self.feature_len);
        for (r, &s) in states.iter().enumerate() {
            m.row_mut(r).copy_from_slice(self.state(s));
        }
        m
    }

    /// Batch of concat(features(a), features(b)) rows.
    pub fn gather_pairs(&self, pairs: impl Iterator<Item = (usize, usize)>) -> Matrix {
        let pairs: Vec<(usize, usize)> = pairs.collect();
        let f = self.feature_len;
        let mut m = Matrix::zeros(pairs.len(), 2 * f);
        for (r, &(a, b)) in pairs.iter().enumerate() {
            let row = m.row_mut(r);
            row[..f].copy_from_slice(self.state(a));
            row[f..].copy_from_slice(self.state(b));
        }
        m
    }
}

impl PhiEncoder {
    pub fn init(feature_len: usize, hidden: &[usize], latent: usize, seed: u64) -> Self {
        let mut sizes = vec![2 * feature_len];
        sizes.extend_from_slice(hidden);
        sizes.push(latent);
        PhiEncoder { mlp: Mlp::init(&sizes, seed, "phi") }
    }

    pub fn latent_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    /// Embeds one (state, goal) task.
    pub fn embed(&self, cache: &FeatureCache, s: usize, g: usize) -> Vec<f64> {
        let x = cache.gather_pairs(std::iter::once((s, g)));
        self.mlp.forward_nograd(&x).data
    }
}

impl PsiEncoder {
    pub fn init(feature_len: usize, hidden: &[usize], latent: usize, seed: u64) -> Self {
        let mut sizes = vec![feature_len];
        sizes.extend_from_slice(hidden);
        sizes.push(latent);
        PsiEncoder { mlp: Mlp::init(&sizes, seed, "psi") }
    }

    pub fn embed(&self, cache: &FeatureCache, s: usize) -> Vec<f64> {
        let x = cache.gather(std::iter::once(s));
        self.mlp.forward_nograd(&x).data
    }
}

/// Two aligned transition lists: the j-side is a permutation of the i-side.
#[derive(Debug, Clone)]
pub struct PairBatch {
    pub transitions: Vec<Transition>,
    pub perm: Vec<usize>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn second(&self, k: usize) -> &Transition {
        &self.transitions[self.perm[k]]
    }
}

/// Pairs a batch with a uniform random permutation of itself.
pub fn permute_pair_batch<R: Rng>(batch: Vec<Transition>, rng: &mut R) -> PairBatch {
    assert!(!batch.is_empty(), "batch must be nonempty");
    let mut perm: Vec<usize> = (0..batch.len()).collect();
    perm.shuffle(rng);
    PairBatch { transitions: batch, perm }
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Paired-encoder loss: mean over pairs of
/// (||phi(s_i,g_i) - phi(s_j,g_j)||_1 - |r_i - r_j|
///   - gamma ||phi_bar(s'_i,g_i) - phi_bar(s'_j,g_j)||_2)^2.
/// `norm_mode` switches only the first term's norm. Gradients flow into
/// `phi` through the first term only; `phi_frozen` is the stop-gradient
/// copy (pass the same parameters during training).
pub fn phi_loss(
    phi: &Mlp,
    phi_frozen: &Mlp,
    batch: &PairBatch,
    cache: &FeatureCache,
    gamma: f64,
    norm_mode: NormMode,
) -> Result<(f64, MlpGrads)> {
    let b = batch.len();
    let x_cur = cache.gather_pairs(batch.transitions.iter().map(|t| (t.s as usize, t.g as usize)));
    let x_next = cache.gather_pairs(batch.transitions.iter().map(|t| (t.sp as usize, t.g as usize)));
    let (e_cur, fwd) = phi.forward_batch(&x_cur);
    let e_next = phi_frozen.forward_nograd(&x_next);
    if !e_cur.is_finite() || !e_next.is_finite() {
        return Err(Error::NonFinite("phi embedding".into()));
    }
    let k = e_cur.cols;
    let mut dy = Matrix::zeros(b, k);
    let mut loss = 0.0;
    for i in 0..b {
        let j = batch.perm[i];
        let u = diff(e_cur.row(i), e_cur.row(j));
        let t1 = match norm_mode {
            NormMode::L1 => l1(&u),
            NormMode::L2 => l2(&u),
        };
        let t2 = (batch.transitions[i].r as f64 - batch.transitions[j].r as f64).abs();
        let t3 = gamma * l2(&diff(e_next.row(i), e_next.row(j)));
        let rho = t1 - t2 - t3;
        loss += rho * rho / b as f64;
        let coeff = 2.0 * rho / b as f64;
        match norm_mode {
            NormMode::L1 => {
                for (c, &uv) in u.iter().enumerate() {
                    let s = if uv > 0.0 {
                        1.0
                    } else if uv < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    dy.row_mut(i)[c] += coeff * s;
                    dy.row_mut(j)[c] -= coeff * s;
                }
            }
            NormMode::L2 => {
                let n = l2(&u);
                if n > 0.0 {
                    for (c, &uv) in u.iter().enumerate() {
                        let s = uv / n;
                        dy.row_mut(i)[c] += coeff * s;
                        dy.row_mut(j)[c] -= coeff * s;
                    }
                }
            }
        }
    }
    let (grads, _) = phi.backward_batch(&fwd, &dy);
    Ok((loss, grads))
}

/// State-encoder loss: mean over the batch of
/// ||(phi_bar(s,g) - phi_bar(g,g)) - (psi(g) - psi(s))||_2^2, with the
/// grounding term phi_bar(g,g) dropped when `grounding` is false.
/// Gradients flow only into psi.
pub fn psi_loss(
    psi: &Mlp,
    phi_frozen: &Mlp,
    batch: &[Transition],
    cache: &FeatureCache,
    grounding: bool,
) -> Result<(f64, MlpGrads)> {
    let b = batch.len();
    assert!(b > 0, "batch must be nonempty");
    // stack s rows then g rows for a single Siamese pass
    let x = {
        let mut m = Matrix::zeros(2 * b, cache.feature_len);
        for (r, t) in batch.iter().enumerate() {
            m.row_mut(r).copy_from_slice(cache.state(t.s as usize));
            m.row_mut(b + r).copy_from_slice(cache.state(t.g as usize));
        }
        m
    };
    let (e, fwd) = psi.forward_batch(&x);
    let phi_sg =
        phi_frozen.forward_nograd(&cache.gather_pairs(batch.iter().map(|t| (t.s as usize, t.g as usize))));
    let phi_gg = if grounding {
        Some(phi_frozen.forward_nograd(
            &cache.gather_pairs(batch.iter().map(|t| (t.g as usize, t.g as usize))),
        ))
    } else {
        None
    };
    if !e.is_finite() || !phi_sg.is_finite() {
        return Err(Error::NonFinite("psi embedding".into()));
    }
    let k = e.cols;
    let mut dy = Matrix::zeros(2 * b, k);
    let mut loss = 0.0;
    for i in 0..b {
        let psi_s = e.row(i);
        let psi_g = e.row(b + i);
        for c in 0..k {
            let target = phi_sg.row(i)[c] - phi_gg.as_ref().map_or(0.0, |m| m.row(i)[c]);
            let v = target - (psi_g[c] - psi_s[c]);
            loss += v * v / b as f64;
            dy.row_mut(i)[c] += 2.0 * v / b as f64; // d/d psi(s) = +v
            dy.row_mut(b + i)[c] -= 2.0 * v / b as f64; // d/d psi(g) = -v
        }
    }
    let (grads, _) = psi.backward_batch(&fwd, &dy);
    Ok((loss, grads))
}

/// Reward decoder loss: mean squared error of decoder(phi(s,g), phi(s',g))
/// against the sparse reward. Gradients flow into both the decoder and phi.
pub fn reward_decoder_loss(
    decoder: &Mlp,
    phi: &Mlp,
    batch: &[Transition],
    cache: &FeatureCache,
) -> Result<(f64, MlpGrads, MlpGrads)> {
    let b = batch.len();
    assert!(b > 0);
    let x_sg = cache.gather_pairs(batch.iter().map(|t| (t.s as usize, t.g as usize)));
    let x_spg = cache.gather_pairs(batch.iter().map(|t| (t.sp as usize, t.g as usize)));
    let (e1, fwd1) = phi.forward_batch(&x_sg);
    let (e2, fwd2) = phi.forward_batch(&x_spg);
    let k = e1.cols;
    let mut z = Matrix::zeros(b, 2 * k);
    for r in 0..b {
        z.row_mut(r)[..k].copy_from_slice(e1.row(r));
        z.row_mut(r)[k..].copy_from_slice(e2.row(r));
    }
    let (zhat, fwd_dec) = decoder.forward_batch(&z);
    let mut dz_out = Matrix::zeros(b, 1);
    let mut loss = 0.0;
    for r in 0..b {
        let err = zhat.row(r)[0] - batch[r].r as f64;
        loss += err * err / b as f64;
        dz_out.row_mut(r)[0] = 2.0 * err / b as f64;
    }
    let (dec_grads, dz) = decoder.backward_batch(&fwd_dec, &dz_out);
    let mut de1 = Matrix::zeros(b, k);
    let mut de2 = Matrix::zeros(b, k);
    for r in 0..b {
        de1.row_mut(r).copy_from_slice(&dz.row(r)[..k]);
        de2.row_mut(r).copy_from_slice(&dz.row(r)[k..]);
    }
    let (mut phi_grads, _) = phi.backward_batch(&fwd1, &de1);
    let (phi_grads2, _) = phi.backward_batch(&fwd2, &de2);
    phi_grads.add(&phi_grads2);
    Ok((loss, dec_grads, phi_grads))
}

/// Dynamics-variant losses. The phi loss replaces the stop-gradient next
/// embeddings with model predictions f(phi_bar(s,g), a) + phi_bar(s,g)
/// (everything inside the gamma term stays stop-gradient); the model loss
/// regresses f onto the latent forward delta phi_bar(s',g) - phi_bar(s,g).
pub struct DynLosses {
    pub phi_loss: f64,
    pub model_loss: f64,
    pub phi_grads: MlpGrads,
    pub model_grads: MlpGrads,
}

pub fn dynamics_variant_losses(
    model: &Mlp,
    phi: &Mlp,
    phi_frozen: &Mlp,
    batch: &PairBatch,
    cache: &FeatureCache,
    num_actions: usize,
    gamma: f64,
    norm_mode: NormMode,
) -> Result<DynLosses> {
    let b = batch.len();
    let x_cur = cache.gather_pairs(batch.transitions.iter().map(|t| (t.s as usize, t.g as usize)));
    let x_next = cache.gather_pairs(batch.transitions.iter().map(|t| (t.sp as usize, t.g as usize)));
    let (e_cur, fwd) = phi.forward_batch(&x_cur);
    let e_bar = phi_frozen.forward_nograd(&x_cur);
    let e_next_bar = phi_frozen.forward_nograd(&x_next);
    let k = e_cur.cols;
    // model input: concat(phi_bar(s,g), one-hot action)
    let mut fin = Matrix::zeros(b, k + num_actions);
    for r in 0..b {
        fin.row_mut(r)[..k].copy_from_slice(e_bar.row(r));
        fin.row_mut(r)[k + batch.transitions[r].a as usize] = 1.0;
    }
    let (pred, fwd_model) = model.forward_batch(&fin);

    // model loss: || f(phi_bar, a) - (phi_bar(s',g) - phi_bar(s,g)) ||^2
    let mut dmodel_out = Matrix::zeros(b, k);
    let mut model_loss = 0.0;
    for r in 0..b {
        for c in 0..k {
            let target = e_next_bar.row(r)[c] - e_bar.row(r)[c];
            let err = pred.row(r)[c] - target;
            model_loss += err * err / b as f64;
            dmodel_out.row_mut(r)[c] = 2.0 * err / b as f64;
        }
    }
    let (model_grads, _) = model.backward_batch(&fwd_model, &dmodel_out);

    // phi loss with predicted next embeddings inside the gamma term
    let mut dy = Matrix::zeros(b, k);
    let mut phi_loss_val = 0.0;
    for i in 0..b {
        let j = batch.perm[i];
        let u = diff(e_cur.row(i), e_cur.row(j));
        let t1 = match norm_mode {
            NormMode::L1 => l1(&u),
            NormMode::L2 => l2(&u),
        };
        let t2 = (batch.transitions[i].r as f64 - batch.transitions[j].r as f64).abs();
        let pred_next_i: Vec<f64> =
            (0..k).map(|c| pred.row(i)[c] + e_bar.row(i)[c]).collect();
        let pred_next_j: Vec<f64> =
            (0..k).map(|c| pred.row(j)[c] + e_bar.row(j)[c]).collect();
        let t3 = gamma * l2(&diff(&pred_next_i, &pred_next_j));
        let rho = t1 - t2 - t3;
        phi_loss_val += rho * rho / b as f64;
        let coeff = 2.0 * rho / b as f64;
        for (c, &uv) in u.iter().enumerate() {
            let s = match norm_mode {
                NormMode::L1 => {
                    if uv > 0.0 {
                        1.0
                    } else if uv < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }
                NormMode::L2 => {
                    let n = l2(&u);
                    if n > 0.0 {
                        uv / n
                    } else {
                        0.0
                    }
                }
            };
            dy.row_mut(i)[c] += coeff * s;
            dy.row_mut(j)[c] -= coeff * s;
        }
    }
    let (phi_grads, _) = phi.backward_batch(&fwd, &dy);
    Ok(DynLosses { phi_loss: phi_loss_val, model_loss, phi_grads, model_grads })
}

/// Latent goal composition: psi(s) + phi(s_a, g_a) [- phi(g_a, g_a) when
/// grounded].
pub fn compose_goal(
    psi: &PsiEncoder,
    phi: &PhiEncoder,
    cache: &FeatureCache,
    s: usize,
    s_a: usize,
    g_a: usize,
    grounding: bool,
) -> Vec<f64> {
    let mut v = psi.embed(cache, s);
    let task = phi.embed(cache, s_a, g_a);
    for (x, t) in v.iter_mut().zip(&task) {
        *x += t;
    }
    if grounding {
        let anchor = phi.embed(cache, g_a, g_a);
        for (x, a) in v.iter_mut().zip(&anchor) {
            *x -= a;
        }
    }
    v
}

/// Candidate minimizing Euclidean distance to the query; ties break to the
/// lowest state index.
pub fn nearest_neighbor(query: &[f64], candidates: &[(usize, Vec<f64>)]) -> usize {
    assert!(!candidates.is_empty(), "candidates must be nonempty");
    let mut best_state = usize::MAX;
    let mut best_d = f64::INFINITY;
    for (state, emb) in candidates {
        let d: f64 = query.iter().zip(emb).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d || (d == best_d && *state < best_state) {
            best_d = d;
            best_state = *state;
        }
    }
    best_state
}

/// Dumps embeddings as CSV: state_index, goal_index (-1 for psi rows),
/// then the latent coordinates.
pub fn write_embedding_dump(
    path: &Path,
    psi_rows: &[(usize, Vec<f64>)],
    phi_rows: &[(usize, usize, Vec<f64>)],
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let k = psi_rows
        .first()
        .map(|(_, v)| v.len())
        .or_else(|| phi_rows.first().map(|(_, _, v)| v.len()))
        .unwrap_or(0);
    write!(w, "state_index,goal_index")?;
    for c in 0..k {
        write!(w, ",z{c}")?;
    }
    writeln!(w)?;
    for (s, v) in psi_rows {
        write!(w, "{s},-1")?;
        for x in v {
            write!(w, ",{x}")?;
        }
        writeln!(w)?;
    }
    for (s, g, v) in phi_rows {
        write!(w, "{s},{g}")?;
        for x in v {
            write!(w, ",{x}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

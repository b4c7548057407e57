//! Quantitative probes of the learned spaces: paired-encoder nearest
//! neighbors, compose-and-lookup analogy retrieval, and rank correlation
//! against the exact metric.

use super::{compose_goal, nearest_neighbor, FeatureCache, PhiEncoder, PsiEncoder};
use crate::envs::{sample_analogy, sample_task, DrawerGrid, TaskDelta};
use crate::error::Result;
use crate::rng;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub probes: usize,
    pub matches: usize,
    pub match_rate: f64,
}

/// Samples a candidate pool of tasks and `num_probes` query tasks; counts
/// how often the nearest pool task in phi space shares the query's
/// task-relevant delta.
pub fn phi_nn_probe(
    phi: &PhiEncoder,
    env: &DrawerGrid,
    seed: u64,
    num_probes: usize,
    pool_size: usize,
    horizon: usize,
) -> ProbeReport {
    let cache = FeatureCache::new(&env.codec);
    let mut r = rng::stream(seed, "phi-nn-pool");
    let mut pool: Vec<(usize, usize)> = Vec::with_capacity(pool_size);
    while pool.len() < pool_size {
        let task = sample_task(env, &mut r, horizon);
        if !pool.contains(&task) {
            pool.push(task);
        }
    }
    let pool_emb: Vec<Vec<f64>> =
        pool.iter().map(|&(s, g)| phi.embed(&cache, s, g)).collect();
    let pool_delta: Vec<TaskDelta> =
        pool.iter().map(|&(s, g)| TaskDelta::between(env, s, g)).collect();

    let mut rq = rng::stream(seed, "phi-nn-query");
    let mut matches = 0usize;
    for _ in 0..num_probes {
        let (s, g) = sample_task(env, &mut rq, horizon);
        let q = phi.embed(&cache, s, g);
        let delta = TaskDelta::between(env, s, g);
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for (i, emb) in pool_emb.iter().enumerate() {
            if pool[i] == (s, g) {
                continue; // the query itself is not a neighbor
            }
            let d: f64 = q.iter().zip(emb).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        if best != usize::MAX && pool_delta[best] == delta {
            matches += 1;
        }
    }
    ProbeReport { probes: num_probes, matches, match_rate: matches as f64 / num_probes as f64 }
}

/// Composes psi(s) with analogous task embeddings and checks whether the
/// nearest state in psi space lands in g_true's task-relevant class.
pub fn analogy_probe(
    phi: &PhiEncoder,
    psi: &PsiEncoder,
    env: &DrawerGrid,
    seed: u64,
    num_cases: usize,
    horizon: usize,
    grounding: bool,
) -> Result<ProbeReport> {
    let cache = FeatureCache::new(&env.codec);
    let candidates: Vec<(usize, Vec<f64>)> =
        (0..env.num_states()).map(|s| (s, psi.embed(&cache, s))).collect();
    let mut r = rng::stream(seed, "analogy-probe");
    let mut matches = 0usize;
    let mut done = 0usize;
    while done < num_cases {
        let s = rand::Rng::gen_range(&mut r, 0..env.num_states());
        let Ok(case) = sample_analogy(env, &mut r, s, horizon) else {
            continue;
        };
        let composed = compose_goal(psi, phi, &cache, case.s, case.start_a, case.goal_a, grounding);
        let nn = nearest_neighbor(&composed, &candidates);
        if env.class_of(nn) == env.class_of(case.g_true) {
            matches += 1;
        }
        done += 1;
    }
    Ok(ProbeReport { probes: num_cases, matches, match_rate: matches as f64 / num_cases as f64 })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    pearson(&rx, &ry)
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

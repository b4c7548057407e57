use gcb::envs::*;
use gcb::repr::*;

fn run(name: &str, cfg_env: EnvConfig, epochs: usize) {
    let env = build_drawer_grid(&cfg_env).unwrap();
    let data = generate_dataset(&env, 50_000, 0.3, 75, 1).unwrap();
    let rcfg = ReprConfig { epochs, ..Default::default() };
    let out = train_representations(&data, &env.codec, 6, env.cfg.discount, &rcfg).unwrap();
    let cache = FeatureCache::new(&env.codec);
    // psi class structure: nearest other state shares class?
    let embs: Vec<(usize, Vec<f64>)> = (0..env.num_states()).map(|s| (s, out.psi.embed(&cache, s))).collect();
    let mut same = 0;
    for s in 0..env.num_states() {
        let cands: Vec<(usize, Vec<f64>)> = embs.iter().filter(|(x, _)| *x != s).cloned().collect();
        let nn = nearest_neighbor(&embs[s].1, &cands);
        if env.class_of(nn) == env.class_of(s) { same += 1; }
    }
    let a = analogy_probe(&out.phi, &out.psi, &env, 8, 200, 75, true).unwrap();
    let p = phi_nn_probe(&out.phi, &env, 7, 200, 512, 75);
    println!("{name}: |S|={} classes={} psi-sameclass-NN={:.3} phiNN={:.3} analogy={:.3} (last psi loss {:.4})",
        env.num_states(), env.mdp().num_classes(), same as f64 / env.num_states() as f64,
        p.match_rate, a.match_rate, out.log.last().unwrap().psi_loss);
}

fn main() {
    run("default-54 e120", EnvConfig::default(), 120);
    let mut button = EnvConfig::default();
    button.factors.grid_size = 2;
    button.factors.has_button = true;
    button.factors.num_distractor_layouts = 2;
    run("button-2x2 e120", button, 120);
}

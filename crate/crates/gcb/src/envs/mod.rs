//! The discrete factored "drawer-grid" environment family.
//!
//! States factor into an agent cell on an N x N grid, a drawer openness
//! level, optional button/latch bits, and two nuisance factors (color tag,
//! distractor layout) that no action can ever change. The drawer sits at
//! cell 0 (top-left), the button at the last cell (bottom-right).
//!
//! Actions: 0 up, 1 down, 2 left, 3 right, 4 open-step, 5 close-step.
//! Open/close-step move the drawer one level when standing at the drawer
//! cell; at the button cell either one presses the button (sets it and
//! toggles the latch); anywhere else they are no-ops.

mod analogy;
mod dataset;

pub use analogy::{sample_analogy, sample_task, AnalogyCase, NoisyExpert, TaskDelta};
pub use dataset::{generate_dataset, Dataset, DatasetMeta, Transition};

use crate::error::{Error, Result};
use crate::gcmdp::{Gcmdp, Projection, TransRow};
use serde::{Deserialize, Serialize};

pub const NUM_ACTIONS: usize = 6;
pub const ACTION_UP: usize = 0;
pub const ACTION_DOWN: usize = 1;
pub const ACTION_LEFT: usize = 2;
pub const ACTION_RIGHT: usize = 3;
pub const ACTION_OPEN: usize = 4;
pub const ACTION_CLOSE: usize = 5;

/// Structural parameters of the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub grid_size: usize,
    /// Number of openness values; levels run 0..drawer_levels-1.
    pub drawer_levels: usize,
    pub has_button: bool,
    pub num_colors: usize,
    pub num_distractor_layouts: usize,
}

impl FactorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 2 || self.drawer_levels < 2 || self.num_colors < 1 || self.num_distractor_layouts < 1 {
            return Err(Error::InvalidConfig(format!(
                "factor spec out of range: N={}, levels={}, C={}, D={}",
                self.grid_size, self.drawer_levels, self.num_colors, self.num_distractor_layouts
            )));
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        let b = if self.has_button { 4 } else { 1 };
        self.grid_size * self.grid_size * self.drawer_levels * b * self.num_colors * self.num_distractor_layouts
    }
}

/// Which factors count for goal matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMode {
    /// (drawer, button, latch) only.
    Relevant,
    /// Exact state equality.
    Full,
}

/// Full environment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub factors: FactorSpec,
    pub discount: f64,
    pub projection: ProjectionMode,
    /// Reject specs whose state count exceeds this.
    pub state_cap: usize,
    /// Probability an action fails (state unchanged); 0 = deterministic.
    pub slip_prob: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            factors: FactorSpec {
                grid_size: 3,
                drawer_levels: 3,
                has_button: false,
                num_colors: 2,
                num_distractor_layouts: 1,
            },
            discount: 0.9,
            projection: ProjectionMode::Relevant,
            state_cap: 5000,
            slip_prob: 0.0,
        }
    }
}

/// A state as named factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FactoredState {
    pub agent_cell: usize,
    pub drawer_open: usize,
    pub button: usize,
    pub latch: usize,
    pub color: usize,
    pub distractor_layout: usize,
}

/// Bijection between factored states and flat indices, plus the one-hot
/// feature embedding.
#[derive(Debug, Clone)]
pub struct Codec {
    pub spec: FactorSpec,
}

impl Codec {
    fn button_radix(&self) -> usize {
        if self.spec.has_button {
            2
        } else {
            1
        }
    }

    pub fn num_states(&self) -> usize {
        self.spec.num_states()
    }

    pub fn encode(&self, s: &FactoredState) -> usize {
        let n2 = self.spec.grid_size * self.spec.grid_size;
        let b = self.button_radix();
        debug_assert!(s.agent_cell < n2);
        debug_assert!(s.drawer_open < self.spec.drawer_levels);
        debug_assert!(s.button < b && s.latch < b);
        debug_assert!(s.color < self.spec.num_colors);
        debug_assert!(s.distractor_layout < self.spec.num_distractor_layouts);
        let mut idx = s.agent_cell;
        idx = idx * self.spec.drawer_levels + s.drawer_open;
        idx = idx * b + s.button;
        idx = idx * b + s.latch;
        idx = idx * self.spec.num_colors + s.color;
        idx * self.spec.num_distractor_layouts + s.distractor_layout
    }

    pub fn decode(&self, mut idx: usize) -> FactoredState {
        let b = self.button_radix();
        let distractor_layout = idx % self.spec.num_distractor_layouts;
        idx /= self.spec.num_distractor_layouts;
        let color = idx % self.spec.num_colors;
        idx /= self.spec.num_colors;
        let latch = idx % b;
        idx /= b;
        let button = idx % b;
        idx /= b;
        let drawer_open = idx % self.spec.drawer_levels;
        idx /= self.spec.drawer_levels;
        FactoredState { agent_cell: idx, drawer_open, button, latch, color, distractor_layout }
    }

    /// One-hot feature length: N^2 + levels + 2 + 2 + C + D. Button and
    /// latch blocks are always present (degenerate one-hots without a
    /// button) so the input layout does not depend on `has_button`.
    pub fn feature_len(&self) -> usize {
        let s = &self.spec;
        s.grid_size * s.grid_size + s.drawer_levels + 2 + 2 + s.num_colors + s.num_distractor_layouts
    }

    pub fn write_features(&self, state: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.feature_len());
        out.fill(0.0);
        let f = self.decode(state);
        let s = &self.spec;
        let mut off = 0;
        out[off + f.agent_cell] = 1.0;
        off += s.grid_size * s.grid_size;
        out[off + f.drawer_open] = 1.0;
        off += s.drawer_levels;
        out[off + f.button] = 1.0;
        off += 2;
        out[off + f.latch] = 1.0;
        off += 2;
        out[off + f.color] = 1.0;
        off += s.num_colors;
        out[off + f.distractor_layout] = 1.0;
    }

    pub fn features(&self, state: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.feature_len()];
        self.write_features(state, &mut v);
        v
    }

    /// Task-relevant class id: (drawer, button, latch) flattened.
    pub fn relevant_class(&self, state: usize) -> u32 {
        let f = self.decode(state);
        let b = self.button_radix();
        ((f.drawer_open * b + f.button) * b + f.latch) as u32
    }

    pub fn num_relevant_classes(&self) -> usize {
        let b = self.button_radix();
        self.spec.drawer_levels * b * b
    }

    pub fn drawer_cell(&self) -> usize {
        0
    }

    pub fn button_cell(&self) -> usize {
        self.spec.grid_size * self.spec.grid_size - 1
    }
}

/// The built environment: codec, deterministic step function, and the
/// induced goal-conditioned MDP (goal set = all states).
#[derive(Debug, Clone)]
pub struct DrawerGrid {
    pub cfg: EnvConfig,
    pub codec: Codec,
    mdp: Gcmdp,
}

/// Builds the drawer-grid GCMDP. Errors when the factored state space
/// exceeds the configured cap.
pub fn build_drawer_grid(cfg: &EnvConfig) -> Result<DrawerGrid> {
    cfg.factors.validate()?;
    if !(0.0..1.0).contains(&cfg.slip_prob) {
        return Err(Error::InvalidConfig(format!("slip_prob {} outside [0,1)", cfg.slip_prob)));
    }
    let n = cfg.factors.num_states();
    if n > cfg.state_cap {
        return Err(Error::SpecTooLarge { size: n, cap: cfg.state_cap });
    }
    let codec = Codec { spec: cfg.factors.clone() };
    let mut rows: Vec<TransRow> = Vec::with_capacity(n * NUM_ACTIONS);
    for s in 0..n {
        for a in 0..NUM_ACTIONS {
            let sp = step_deterministic(&codec, s, a);
            let row: TransRow = if cfg.slip_prob > 0.0 && sp != s {
                vec![(sp.min(s) as u32, if sp < s { 1.0 - cfg.slip_prob } else { cfg.slip_prob }),
                     (sp.max(s) as u32, if sp < s { cfg.slip_prob } else { 1.0 - cfg.slip_prob })]
            } else {
                vec![(sp as u32, 1.0)]
            };
            rows.push(row);
        }
    }
    let projection = match cfg.projection {
        ProjectionMode::Full => Projection::Full,
        ProjectionMode::Relevant => {
            Projection::Classes((0..n).map(|s| codec.relevant_class(s)).collect())
        }
    };
    let goals: Vec<u32> = (0..n as u32).collect();
    let mdp = Gcmdp::new(n, NUM_ACTIONS, rows, goals, cfg.discount, projection)?;
    Ok(DrawerGrid { cfg: cfg.clone(), codec, mdp })
}

/// Deterministic action effect (ignores slip).
pub fn step_deterministic(codec: &Codec, state: usize, action: usize) -> usize {
    let mut f = codec.decode(state);
    let n = codec.spec.grid_size;
    let (row, col) = (f.agent_cell / n, f.agent_cell % n);
    match action {
        ACTION_UP => f.agent_cell = row.saturating_sub(1) * n + col,
        ACTION_DOWN => f.agent_cell = (row + 1).min(n - 1) * n + col,
        ACTION_LEFT => f.agent_cell = row * n + col.saturating_sub(1),
        ACTION_RIGHT => f.agent_cell = row * n + (col + 1).min(n - 1),
        ACTION_OPEN | ACTION_CLOSE => {
            if f.agent_cell == codec.drawer_cell() {
                if action == ACTION_OPEN {
                    f.drawer_open = (f.drawer_open + 1).min(codec.spec.drawer_levels - 1);
                } else {
                    f.drawer_open = f.drawer_open.saturating_sub(1);
                }
            } else if codec.spec.has_button && f.agent_cell == codec.button_cell() {
                f.button = 1;
                f.latch = 1 - f.latch;
            }
        }
        _ => panic!("action {action} out of range"),
    }
    codec.encode(&f)
}

impl DrawerGrid {
    pub fn mdp(&self) -> &Gcmdp {
        &self.mdp
    }

    pub fn num_states(&self) -> usize {
        self.codec.num_states()
    }

    /// Deterministic step (intended effect).
    pub fn step(&self, s: usize, a: usize) -> usize {
        step_deterministic(&self.codec, s, a)
    }

    /// Samples the next state from the true dynamics (honors slip).
    pub fn sample_next<R: rand::Rng>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        let row = self.mdp.row(s, a);
        if row.len() == 1 {
            return row[0].0 as usize;
        }
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for &(sp, p) in row {
            acc += p;
            if u < acc {
                return sp as usize;
            }
        }
        row.last().unwrap().0 as usize
    }

    /// Goal-class id under the configured projection.
    pub fn class_of(&self, s: usize) -> u32 {
        self.mdp.class_of(s)
    }

    /// BFS distances over the deterministic transition support from `s0`.
    pub fn bfs_distances(&self, s0: usize) -> Vec<u32> {
        let n = self.num_states();
        let mut dist = vec![u32::MAX; n];
        let mut queue = std::collections::VecDeque::new();
        dist[s0] = 0;
        queue.push_back(s0);
        while let Some(s) = queue.pop_front() {
            for a in 0..NUM_ACTIONS {
                let sp = self.step(s, a);
                if dist[sp] == u32::MAX {
                    dist[sp] = dist[s] + 1;
                    queue.push_back(sp);
                }
            }
        }
        dist
    }

    /// Minimum steps from `s0` to any state in `class`, or None.
    pub fn steps_to_class(&self, s0: usize, class: u32) -> Option<u32> {
        let dist = self.bfs_distances(s0);
        (0..self.num_states())
            .filter(|&s| self.class_of(s) == class)
            .map(|s| dist[s])
            .filter(|&d| d != u32::MAX)
            .min()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn default_env() -> DrawerGrid {
        build_drawer_grid(&EnvConfig::default()).unwrap()
    }

    #[test]
    fn default_spec_has_54_states() {
        // N=3, levels=3 (K=2), no button, C=2, D=1 -> 9*3*2 = 54
        assert_eq!(default_env().num_states(), 54);
    }

    #[test]
    fn oversized_spec_rejected() {
        let mut cfg = EnvConfig::default();
        cfg.factors.grid_size = 40;
        cfg.factors.num_colors = 10;
        let err = build_drawer_grid(&cfg).unwrap_err();
        assert!(matches!(err, Error::SpecTooLarge { .. }), "{err}");
    }

    #[test]
    fn encode_decode_roundtrips_exhaustively() {
        let env = default_env();
        for s in 0..env.num_states() {
            assert_eq!(env.codec.encode(&env.codec.decode(s)), s);
        }
        let mut cfg = EnvConfig::default();
        cfg.factors.has_button = true;
        cfg.factors.num_distractor_layouts = 2;
        let env = build_drawer_grid(&cfg).unwrap();
        for s in 0..env.num_states() {
            assert_eq!(env.codec.encode(&env.codec.decode(s)), s);
        }
    }

    #[test]
    fn moves_clamp_at_walls() {
        let env = default_env();
        let corner = env.codec.encode(&FactoredState {
            agent_cell: 0,
            drawer_open: 1,
            button: 0,
            latch: 0,
            color: 1,
            distractor_layout: 0,
        });
        assert_eq!(env.step(corner, ACTION_UP), corner);
        assert_eq!(env.step(corner, ACTION_LEFT), corner);
        assert_ne!(env.step(corner, ACTION_DOWN), corner);
    }

    #[test]
    fn interact_away_from_special_cells_is_noop() {
        let env = default_env();
        let mid = env.codec.encode(&FactoredState {
            agent_cell: 4,
            drawer_open: 1,
            button: 0,
            latch: 0,
            color: 0,
            distractor_layout: 0,
        });
        assert_eq!(env.step(mid, ACTION_OPEN), mid);
        assert_eq!(env.step(mid, ACTION_CLOSE), mid);
    }

    #[test]
    fn drawer_steps_move_one_level_and_clamp() {
        let env = default_env();
        let at_drawer = |d: usize| {
            env.codec.encode(&FactoredState {
                agent_cell: env.codec.drawer_cell(),
                drawer_open: d,
                button: 0,
                latch: 0,
                color: 0,
                distractor_layout: 0,
            })
        };
        assert_eq!(env.codec.decode(env.step(at_drawer(0), ACTION_OPEN)).drawer_open, 1);
        assert_eq!(env.codec.decode(env.step(at_drawer(2), ACTION_OPEN)).drawer_open, 2);
        assert_eq!(env.codec.decode(env.step(at_drawer(1), ACTION_CLOSE)).drawer_open, 0);
        assert_eq!(env.codec.decode(env.step(at_drawer(0), ACTION_CLOSE)).drawer_open, 0);
    }

    #[test]
    fn button_press_sets_and_toggles() {
        let mut cfg = EnvConfig::default();
        cfg.factors.has_button = true;
        let env = build_drawer_grid(&cfg).unwrap();
        let s = env.codec.encode(&FactoredState {
            agent_cell: env.codec.button_cell(),
            drawer_open: 0,
            button: 0,
            latch: 0,
            color: 0,
            distractor_layout: 0,
        });
        let once = env.codec.decode(env.step(s, ACTION_OPEN));
        assert_eq!((once.button, once.latch), (1, 1));
        let twice = env.codec.decode(env.step(env.step(s, ACTION_OPEN), ACTION_CLOSE));
        assert_eq!((twice.button, twice.latch), (1, 0));
    }

    #[test]
    fn nuisance_factors_never_change() {
        for button in [false, true] {
            let mut cfg = EnvConfig::default();
            cfg.factors.has_button = button;
            cfg.factors.num_distractor_layouts = 2;
            let env = build_drawer_grid(&cfg).unwrap();
            for s in 0..env.num_states() {
                let f = env.codec.decode(s);
                for a in 0..NUM_ACTIONS {
                    let fp = env.codec.decode(env.step(s, a));
                    assert_eq!(f.color, fp.color);
                    assert_eq!(f.distractor_layout, fp.distractor_layout);
                }
            }
        }
    }

    #[test]
    fn slip_makes_rows_stochastic_but_valid() {
        let mut cfg = EnvConfig::default();
        cfg.slip_prob = 0.2;
        let env = build_drawer_grid(&cfg).unwrap();
        let moving = env.mdp().row(0, ACTION_DOWN);
        assert_eq!(moving.len(), 2);
        let sum: f64 = moving.iter().map(|&(_, p)| p).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn codec_bijection_on_random_specs(
            n in 2usize..4,
            levels in 2usize..4,
            button in proptest::bool::ANY,
            colors in 1usize..3,
            layouts in 1usize..3,
        ) {
            let spec = FactorSpec {
                grid_size: n,
                drawer_levels: levels,
                has_button: button,
                num_colors: colors,
                num_distractor_layouts: layouts,
            };
            let codec = Codec { spec };
            for s in 0..codec.num_states() {
                prop_assert_eq!(codec.encode(&codec.decode(s)), s);
            }
        }
    }
}

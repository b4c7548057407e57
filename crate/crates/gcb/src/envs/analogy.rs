//! Task sampling, analogy construction and the noisy expert.

use super::DrawerGrid;
use crate::error::{Error, Result};
use crate::gcmdp::GoalPolicy;
use rand::Rng;

const ANALOGY_RETRIES: usize = 64;

/// Signed change of the task-relevant factors from a start state to a goal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskDelta {
    pub drawer: i32,
    pub button: i32,
    pub latch: i32,
}

impl TaskDelta {
    pub fn between(env: &DrawerGrid, s: usize, g: usize) -> TaskDelta {
        let fs = env.codec.decode(s);
        let fg = env.codec.decode(g);
        TaskDelta {
            drawer: fg.drawer_open as i32 - fs.drawer_open as i32,
            button: fg.button as i32 - fs.button as i32,
            latch: fg.latch as i32 - fs.latch as i32,
        }
    }

    /// Applies the delta to `s`, keeping s's agent cell and nuisance
    /// factors. None when the shifted factors leave their ranges or the
    /// shifted (button, latch) pair is unreachable from s's (a button can
    /// be pressed but never unpressed, and the latch moves only with a
    /// press).
    pub fn apply(&self, env: &DrawerGrid, s: usize) -> Option<usize> {
        let f = env.codec.decode(s);
        let drawer = f.drawer_open as i32 + self.drawer;
        let button = f.button as i32 + self.button;
        let latch = f.latch as i32 + self.latch;
        if drawer < 0 || drawer >= env.codec.spec.drawer_levels as i32 {
            return None;
        }
        if !(0..2).contains(&button) || !(0..2).contains(&latch) {
            return None;
        }
        let reachable = (button as usize, latch as usize) == (f.button, f.latch) || button == 1;
        if !reachable {
            return None;
        }
        let mut g = f;
        g.drawer_open = drawer as usize;
        g.button = button as usize;
        g.latch = latch as usize;
        Some(env.codec.encode(&g))
    }

    pub fn is_zero(&self) -> bool {
        self.drawer == 0 && self.button == 0 && self.latch == 0
    }
}

/// Samples a start state uniformly and a goal that shares its nuisance
/// factors, has task-relevant factors drawn from the reachable set, and is
/// class-reachable within `horizon` steps.
pub fn sample_task<R: Rng>(env: &DrawerGrid, rng: &mut R, horizon: usize) -> (usize, usize) {
    let s0 = rng.gen_range(0..env.num_states());
    let g = sample_goal_for(env, rng, s0, horizon);
    (s0, g)
}

fn sample_goal_for<R: Rng>(env: &DrawerGrid, rng: &mut R, s0: usize, horizon: usize) -> usize {
    let spec = &env.codec.spec;
    let f0 = env.codec.decode(s0);
    loop {
        let mut g = f0;
        g.agent_cell = rng.gen_range(0..spec.grid_size * spec.grid_size);
        g.drawer_open = rng.gen_range(0..spec.drawer_levels);
        if spec.has_button {
            // reachable (button, latch) pairs from (b0, l0): itself, plus
            // both latch values with the button pressed
            let options: Vec<(usize, usize)> = if f0.button == 1 {
                vec![(1, 0), (1, 1)]
            } else {
                vec![(f0.button, f0.latch), (1, 0), (1, 1)]
            };
            let (b, l) = options[rng.gen_range(0..options.len())];
            g.button = b;
            g.latch = l;
        }
        let g_idx = env.codec.encode(&g);
        if let Some(d) = env.steps_to_class(s0, env.class_of(g_idx)) {
            if (d as usize) <= horizon {
                return g_idx;
            }
        }
    }
}

/// An analogy evaluation case: act from `s`, told only that the intended
/// outcome relates to `s` the way `goal_a` relates to `start_a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnalogyCase {
    pub s: usize,
    pub start_a: usize,
    pub goal_a: usize,
    /// Ground-truth goal: the analogous delta applied to `s`.
    pub g_true: usize,
}

/// Samples an analogous task for `s`: fresh nuisance factors (different
/// from s's in at least one factor when the spec allows it), a valid task
/// (start_a, goal_a) whose delta applies to `s`, and the implied g_true.
pub fn sample_analogy<R: Rng>(
    env: &DrawerGrid,
    rng: &mut R,
    s: usize,
    horizon: usize,
) -> Result<AnalogyCase> {
    let spec = &env.codec.spec;
    let nuisance_variants = spec.num_colors * spec.num_distractor_layouts;
    let fs = env.codec.decode(s);
    for _ in 0..ANALOGY_RETRIES {
        let start_a = rng.gen_range(0..env.num_states());
        let fa = env.codec.decode(start_a);
        if nuisance_variants > 1
            && fa.color == fs.color
            && fa.distractor_layout == fs.distractor_layout
        {
            continue;
        }
        let goal_a = sample_goal_for(env, rng, start_a, horizon);
        let delta = TaskDelta::between(env, start_a, goal_a);
        let Some(g_true) = delta.apply(env, s) else {
            continue;
        };
        match env.steps_to_class(s, env.class_of(g_true)) {
            Some(d) if (d as usize) <= horizon => {}
            _ => continue,
        }
        return Ok(AnalogyCase { s, start_a, goal_a, g_true });
    }
    Err(Error::DeltaInapplicable { retries: ANALOGY_RETRIES })
}

/// Optimal goal-conditioned policy perturbed by epsilon-uniform noise.
#[derive(Debug, Clone)]
pub struct NoisyExpert {
    pub policy: GoalPolicy,
    pub num_actions: usize,
}

impl NoisyExpert {
    pub fn new(env: &DrawerGrid, tol: f64) -> Result<Self> {
        let policy = crate::gcmdp::optimal_goal_policy(env.mdp(), tol)?;
        Ok(NoisyExpert { policy, num_actions: env.mdp().num_actions })
    }

    /// With probability 1-epsilon the optimal action, else uniform.
    pub fn action<R: Rng>(&self, s: usize, g: usize, epsilon: f64, rng: &mut R) -> usize {
        debug_assert!((0.0..=1.0).contains(&epsilon));
        if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
            rng.gen_range(0..self.num_actions)
        } else {
            self.policy.greedy_action(s, g)
        }
    }
}

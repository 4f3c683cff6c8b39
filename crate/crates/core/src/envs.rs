//! Sparse-reward goal-reaching environments.
//!
//! Every environment exposes the goal it achieved and the goal it was asked
//! to reach, and rewards are a pure function of those two vectors (see
//! [`compute_reward`]), which is what makes hindsight relabeling sound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GoalObservation {
    pub observation: Vec<f64>,
    pub achieved_goal: Vec<f64>,
    pub desired_goal: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub obs_dim: usize,
    pub goal_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub horizon: usize,
    pub success_tol: f64,
}

impl EnvSpec {
    pub fn clip_action(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(a, (lo, hi))| a.clamp(*lo, *hi))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: GoalObservation,
    pub reward: f64,
    pub done: bool,
    pub is_success: bool,
}

/// `0` when `‖achieved − desired‖₂ < tol`, else `−1`.
pub fn compute_reward(achieved: &[f64], desired: &[f64], tol: f64) -> Result<f64> {
    if achieved.len() != desired.len() {
        return Err(Error::shape(format!(
            "goal dims differ: {} vs {}",
            achieved.len(),
            desired.len()
        )));
    }
    let d2: f64 = achieved.iter().zip(desired).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(if d2.sqrt() < tol { 0.0 } else { -1.0 })
}

pub trait GoalEnv: Send {
    fn name(&self) -> &'static str;
    fn spec(&self) -> &EnvSpec;
    fn reset(&mut self, seed: u64) -> GoalObservation;
    /// Applies `action` (clipped to the spec bounds) to the current state.
    fn transition(&mut self, action: &[f64]);
    fn observe(&self) -> GoalObservation;
    fn steps_taken(&self) -> usize;
    fn set_steps_taken(&mut self, n: usize);
    fn boxed_clone(&self) -> Box<dyn GoalEnv>;

    fn compute_reward(&self, achieved: &[f64], desired: &[f64]) -> Result<f64> {
        compute_reward(achieved, desired, self.spec().success_tol)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        let spec = self.spec();
        if action.len() != spec.action_dim {
            return Err(Error::shape(format!(
                "action has {} entries, env expects {}",
                action.len(),
                spec.action_dim
            )));
        }
        let horizon = spec.horizon;
        let t = self.steps_taken();
        if t >= horizon {
            return Err(Error::State("step called after the episode ended".into()));
        }
        let clipped = spec.clip_action(action);
        self.transition(&clipped);
        self.set_steps_taken(t + 1);
        let obs = self.observe();
        let reward = self.compute_reward(&obs.achieved_goal, &obs.desired_goal)?;
        Ok(StepOutcome { obs, reward, done: t + 1 == horizon, is_success: reward == 0.0 })
    }
}

impl Clone for Box<dyn GoalEnv> {
    fn clone(&self) -> Self {
        self.boxed_clone()
    }
}

fn uniform_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// An `n`-dimensional point mass: `x ← clip(x + 0.1·a, −1, 1)`.
#[derive(Debug, Clone)]
pub struct PointReach {
    spec: EnvSpec,
    pos: Vec<f64>,
    goal: Vec<f64>,
    t: usize,
}

impl PointReach {
    pub const STEP: f64 = 0.1;
    pub const START_RANGE: f64 = 0.3;
    pub const GOAL_RANGE: f64 = 0.5;

    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("point_reach needs n ≥ 1".into()));
        }
        Ok(Self {
            spec: EnvSpec {
                obs_dim: n,
                goal_dim: n,
                action_dim: n,
                action_low: vec![-1.0; n],
                action_high: vec![1.0; n],
                horizon: 50,
                success_tol: 0.05,
            },
            pos: vec![0.0; n],
            goal: vec![0.0; n],
            t: 0,
        })
    }
}

impl GoalEnv for PointReach {
    fn name(&self) -> &'static str {
        "point_reach"
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> GoalObservation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.spec.obs_dim;
        self.pos = uniform_vec(&mut rng, n, -Self::START_RANGE, Self::START_RANGE);
        loop {
            self.goal = uniform_vec(&mut rng, n, -Self::GOAL_RANGE, Self::GOAL_RANGE);
            if dist(&self.goal, &self.pos) >= 2.0 * self.spec.success_tol {
                break;
            }
        }
        self.t = 0;
        self.observe()
    }

    fn transition(&mut self, action: &[f64]) {
        for (x, a) in self.pos.iter_mut().zip(action) {
            *x = (*x + Self::STEP * a).clamp(-1.0, 1.0);
        }
    }

    fn observe(&self) -> GoalObservation {
        GoalObservation {
            observation: self.pos.clone(),
            achieved_goal: self.pos.clone(),
            desired_goal: self.goal.clone(),
        }
    }

    fn steps_taken(&self) -> usize {
        self.t
    }

    fn set_steps_taken(&mut self, n: usize) {
        self.t = n;
    }

    fn boxed_clone(&self) -> Box<dyn GoalEnv> {
        Box::new(self.clone())
    }
}

/// A 2-D pusher: the agent moves freely and shoves a box it comes within
/// `CONTACT` of; the goal constrains the box position only.
///
/// Observation: `[agent, box, box − agent]`.
#[derive(Debug, Clone)]
pub struct PushBox {
    spec: EnvSpec,
    agent: [f64; 2],
    boxp: [f64; 2],
    goal: [f64; 2],
    t: usize,
}

impl PushBox {
    pub const STEP: f64 = 0.1;
    pub const CONTACT: f64 = 0.1;
    /// Range of the initial agent-to-box distance.
    pub const START_GAP: (f64, f64) = (0.12, 0.2);

    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                obs_dim: 6,
                goal_dim: 2,
                action_dim: 2,
                action_low: vec![-1.0; 2],
                action_high: vec![1.0; 2],
                horizon: 60,
                success_tol: 0.05,
            },
            agent: [0.0; 2],
            boxp: [0.0; 2],
            goal: [0.0; 2],
            t: 0,
        }
    }
}

impl Default for PushBox {
    fn default() -> Self {
        Self::new()
    }
}

impl GoalEnv for PushBox {
    fn name(&self) -> &'static str {
        "push_box"
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> GoalObservation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.boxp = [rng.random_range(-0.25..0.25), rng.random_range(-0.25..0.25)];
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let r = rng.random_range(Self::START_GAP.0..Self::START_GAP.1);
        self.agent = [self.boxp[0] + r * angle.cos(), self.boxp[1] + r * angle.sin()];
        loop {
            let off = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
            if dist(&off, &[0.0, 0.0]) >= 0.1 {
                self.goal = [self.boxp[0] + off[0], self.boxp[1] + off[1]];
                break;
            }
        }
        self.t = 0;
        self.observe()
    }

    fn transition(&mut self, action: &[f64]) {
        for i in 0..2 {
            self.agent[i] = (self.agent[i] + Self::STEP * action[i]).clamp(-1.0, 1.0);
        }
        let d = dist(&self.agent, &self.boxp);
        if d < Self::CONTACT {
            // push the box out along the contact normal
            let dir = if d > 1e-12 {
                [(self.boxp[0] - self.agent[0]) / d, (self.boxp[1] - self.agent[1]) / d]
            } else {
                let n = dist(action, &[0.0, 0.0]).max(1e-12);
                [action[0] / n, action[1] / n]
            };
            for i in 0..2 {
                self.boxp[i] = (self.agent[i] + Self::CONTACT * dir[i]).clamp(-1.0, 1.0);
            }
        }
    }

    fn observe(&self) -> GoalObservation {
        let a = self.agent;
        let b = self.boxp;
        GoalObservation {
            observation: vec![a[0], a[1], b[0], b[1], b[0] - a[0], b[1] - a[1]],
            achieved_goal: b.to_vec(),
            desired_goal: self.goal.to_vec(),
        }
    }

    fn steps_taken(&self) -> usize {
        self.t
    }

    fn set_steps_taken(&mut self, n: usize) {
        self.t = n;
    }

    fn boxed_clone(&self) -> Box<dyn GoalEnv> {
        Box::new(self.clone())
    }
}

/// `n` bits; the action's argmax selects the bit to flip.
#[derive(Debug, Clone)]
pub struct BitFlip {
    spec: EnvSpec,
    bits: Vec<f64>,
    goal: Vec<f64>,
    t: usize,
}

impl BitFlip {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("bit_flip needs n ≥ 1".into()));
        }
        Ok(Self {
            spec: EnvSpec {
                obs_dim: n,
                goal_dim: n,
                action_dim: n,
                action_low: vec![-1.0; n],
                action_high: vec![1.0; n],
                horizon: n,
                // bit vectors differ by at least 1 in distance
                success_tol: 0.5,
            },
            bits: vec![0.0; n],
            goal: vec![0.0; n],
            t: 0,
        })
    }
}

impl GoalEnv for BitFlip {
    fn name(&self) -> &'static str {
        "bit_flip"
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> GoalObservation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.spec.obs_dim;
        let bit = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        self.bits = (0..n).map(|_| bit(&mut rng)).collect();
        loop {
            self.goal = (0..n).map(|_| bit(&mut rng)).collect();
            if self.goal != self.bits {
                break;
            }
        }
        self.t = 0;
        self.observe()
    }

    fn transition(&mut self, action: &[f64]) {
        let idx = action
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &a)| if a > best.1 { (i, a) } else { best })
            .0;
        self.bits[idx] = 1.0 - self.bits[idx];
    }

    fn observe(&self) -> GoalObservation {
        GoalObservation {
            observation: self.bits.clone(),
            achieved_goal: self.bits.clone(),
            desired_goal: self.goal.clone(),
        }
    }

    fn steps_taken(&self) -> usize {
        self.t
    }

    fn set_steps_taken(&mut self, n: usize) {
        self.t = n;
    }

    fn boxed_clone(&self) -> Box<dyn GoalEnv> {
        Box::new(self.clone())
    }
}

/// Builds an environment by name. `n` is the dimension for `point_reach`
/// (default 3) and the bit count for `bit_flip` (default 10); `push_box`
/// ignores it.
pub fn make_env(name: &str, n: Option<usize>) -> Result<Box<dyn GoalEnv>> {
    match name {
        "point_reach" => Ok(Box::new(PointReach::new(n.unwrap_or(3))?)),
        "push_box" => Ok(Box::new(PushBox::new())),
        "bit_flip" => Ok(Box::new(BitFlip::new(n.unwrap_or(10))?)),
        other => Err(Error::Config(format!("unknown environment '{other}'"))),
    }
}

//! Episodic replay with hindsight goal relabeling.
//!
//! Two relabeling modes are supported. In `Insert` mode relabeled copies of
//! an episode are written to the buffer when the episode is stored (the
//! `Final` strategy adds one copy whose goal is the terminal achieved goal).
//! In `Sample` mode episodes are stored as-is and each sampled transition is
//! relabeled with probability `1 − 1/(1 + k)`.

use std::collections::VecDeque;
use std::str::FromStr;

use rand::Rng;

use crate::envs::compute_reward;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub goal: Vec<f64>,
    pub achieved_goal: Vec<f64>,
    pub next_achieved_goal: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Episode {
    pub transitions: Vec<Transition>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Checks chaining, reward consistency and shapes.
    pub fn validate(&self, success_tol: f64) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.transitions.is_empty() {
            return bad("empty episode".into());
        }
        let first = &self.transitions[0];
        for (k, t) in self.transitions.iter().enumerate() {
            if t.state.len() != first.state.len()
                || t.next_state.len() != first.state.len()
                || t.action.len() != first.action.len()
                || t.goal.len() != first.goal.len()
                || t.achieved_goal.len() != t.goal.len()
                || t.next_achieved_goal.len() != t.goal.len()
            {
                return bad(format!("transition {k} has inconsistent dimensions"));
            }
            if t.reward != compute_reward(&t.next_achieved_goal, &t.goal, success_tol)? {
                return bad(format!("transition {k} reward disagrees with its goals"));
            }
        }
        for (k, w) in self.transitions.windows(2).enumerate() {
            if w[0].next_state != w[1].state || w[0].next_achieved_goal != w[1].achieved_goal {
                return bad(format!("transitions {k} and {} do not chain", k + 1));
            }
        }
        Ok(())
    }

    /// Copy with every goal replaced by `goal_of(k)` and rewards recomputed.
    fn relabeled(&self, success_tol: f64, mut goal_of: impl FnMut(usize) -> Vec<f64>) -> Result<Episode> {
        let transitions = self
            .transitions
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let goal = goal_of(k);
                let reward = compute_reward(&t.next_achieved_goal, &goal, success_tol)?;
                Ok(Transition { goal, reward, ..t.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Episode { transitions })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Final,
    Future,
    Episode,
    Random,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final" => Ok(Strategy::Final),
            "future" => Ok(Strategy::Future),
            "episode" => Ok(Strategy::Episode),
            "random" => Ok(Strategy::Random),
            _ => Err(Error::Config(format!("unknown relabel strategy '{s}'"))),
        }
    }
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Final => "final",
            Strategy::Future => "future",
            Strategy::Episode => "episode",
            Strategy::Random => "random",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelabelMode {
    Insert,
    Sample,
}

impl FromStr for RelabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "insert" => Ok(RelabelMode::Insert),
            "sample" => Ok(RelabelMode::Sample),
            _ => Err(Error::Config(format!("unknown relabel mode '{s}'"))),
        }
    }
}

impl RelabelMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RelabelMode::Insert => "insert",
            RelabelMode::Sample => "sample",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub strategy: Strategy,
    pub relabel_mode: RelabelMode,
    pub future_k: usize,
    /// When false the buffer never relabels: plain experience replay.
    pub her: bool,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: 10_000,
            strategy: Strategy::Future,
            relabel_mode: RelabelMode::Sample,
            future_k: 4,
            her: true,
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::Config("replay.capacity must be at least 1".into()));
        }
        if self.future_k == 0 {
            return Err(Error::Config("replay.future_k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn relabel_probability(&self) -> f64 {
        1.0 - 1.0 / (1.0 + self.future_k as f64)
    }
}

/// Where a sampled transition came from, and where its goal came from when
/// it was relabeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleInfo {
    pub episode: usize,
    pub timestep: usize,
    /// `(episode, timestep)` whose `next_achieved_goal` became the goal.
    pub goal_source: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct HerBuffer {
    config: ReplayConfig,
    success_tol: f64,
    episodes: VecDeque<Episode>,
}

impl HerBuffer {
    pub fn new(config: ReplayConfig, success_tol: f64) -> Result<Self> {
        config.validate()?;
        Ok(Self { episodes: VecDeque::with_capacity(config.capacity.min(4096)), config, success_tol })
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn episode(&self, i: usize) -> Option<&Episode> {
        self.episodes.get(i)
    }

    fn push(&mut self, ep: Episode) {
        if self.episodes.len() == self.config.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(ep);
    }

    /// Stores `ep`, plus relabeled copies in insert mode. `rng` is only
    /// consumed by insert-mode strategies other than `Final`.
    pub fn store_episode(&mut self, ep: Episode, rng: &mut impl Rng) -> Result<()> {
        ep.validate(self.success_tol)?;
        let synthetic = if self.config.her && self.config.relabel_mode == RelabelMode::Insert {
            let n = ep.len();
            let tol = self.success_tol;
            let copies = match self.config.strategy {
                Strategy::Final => {
                    let terminal = ep.transitions[n - 1].next_achieved_goal.clone();
                    vec![ep.relabeled(tol, |_| terminal.clone())?]
                }
                Strategy::Future => (0..self.config.future_k)
                    .map(|_| ep.relabeled(tol, |k| ep.transitions[rng.random_range(k..n)].next_achieved_goal.clone()))
                    .collect::<Result<_>>()?,
                Strategy::Episode => (0..self.config.future_k)
                    .map(|_| ep.relabeled(tol, |_| ep.transitions[rng.random_range(0..n)].next_achieved_goal.clone()))
                    .collect::<Result<_>>()?,
                Strategy::Random => (0..self.config.future_k)
                    .map(|_| {
                        ep.relabeled(tol, |_| {
                            // the incoming episode counts as stored
                            let e = rng.random_range(0..=self.episodes.len());
                            let src = self.episodes.get(e).unwrap_or(&ep);
                            src.transitions[rng.random_range(0..src.len())].next_achieved_goal.clone()
                        })
                    })
                    .collect::<Result<_>>()?,
            };
            copies
        } else {
            Vec::new()
        };
        self.push(ep);
        for s in synthetic {
            self.push(s);
        }
        Ok(())
    }

    pub fn sample(&self, batch_size: usize, rng: &mut impl Rng) -> Result<Vec<Transition>> {
        Ok(self.sample_with_info(batch_size, rng)?.into_iter().map(|(t, _)| t).collect())
    }

    /// Uniform episode, then uniform timestep; relabels in sample mode.
    pub fn sample_with_info(&self, batch_size: usize, rng: &mut impl Rng) -> Result<Vec<(Transition, SampleInfo)>> {
        if self.episodes.is_empty() {
            return Err(Error::State("cannot sample from an empty replay buffer".into()));
        }
        let relabel = self.config.her && self.config.relabel_mode == RelabelMode::Sample;
        let p = self.config.relabel_probability();
        let mut out = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let e = rng.random_range(0..self.episodes.len());
            let ep = &self.episodes[e];
            let n = ep.len();
            let t = rng.random_range(0..n);
            let mut tr = ep.transitions[t].clone();
            let mut info = SampleInfo { episode: e, timestep: t, goal_source: None };
            if relabel && rng.random_bool(p) {
                let (se, st) = match self.config.strategy {
                    Strategy::Future => (e, rng.random_range(t..n)),
                    Strategy::Final => (e, n - 1),
                    Strategy::Episode => (e, rng.random_range(0..n)),
                    Strategy::Random => {
                        let se = rng.random_range(0..self.episodes.len());
                        (se, rng.random_range(0..self.episodes[se].len()))
                    }
                };
                tr.goal = self.episodes[se].transitions[st].next_achieved_goal.clone();
                tr.reward = compute_reward(&tr.next_achieved_goal, &tr.goal, self.success_tol)?;
                info.goal_source = Some((se, st));
            }
            out.push((tr, info));
        }
        Ok(out)
    }
}

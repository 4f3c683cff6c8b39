//! Goal-conditioned DDPG and TD3.
//!
//! The actor sees `observation ‖ goal` and emits a tanh-squashed action that
//! is mapped affinely onto the environment's action box. Critics see
//! `observation ‖ goal ‖ action`. TD3 keeps two critics, regresses both to
//! `r + γ·(1 − done)·min(Q1′, Q2′)` evaluated at a smoothed target action,
//! and updates the actor and all targets every `policy_delay` critic steps.

use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::envs::{EnvSpec, GoalObservation};
use crate::error::{Error, Result};
use crate::kfac::{adam_step, sample_fisher_stats_from_cache, AdamState, KfacConfig, KfacOptimizer};
use crate::linalg::Matrix;
use crate::nn::{init_mlp, mlp_spec, polyak_update, Activation, ForwardCache, LayerStats, Mlp};
use crate::replay::{HerBuffer, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Ddpg,
    Td3,
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddpg" => Ok(Algorithm::Ddpg),
            "td3" => Ok(Algorithm::Td3),
            _ => Err(Error::Config(format!("unknown algorithm '{s}'"))),
        }
    }
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Ddpg => "ddpg",
            Algorithm::Td3 => "td3",
        }
    }

    pub fn num_critics(self) -> usize {
        match self {
            Algorithm::Ddpg => 1,
            Algorithm::Td3 => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Kfac,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kfac" => Ok(OptimizerKind::Kfac),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::Config(format!("unknown optimizer '{s}'"))),
        }
    }
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Kfac => "kfac",
            OptimizerKind::Adam => "adam",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    pub optimizer: OptimizerKind,
    pub gamma: f64,
    pub tau: f64,
    pub explore_noise_std: f64,
    pub target_noise_std: f64,
    pub target_noise_clip: f64,
    pub policy_delay: usize,
    pub batch_size: usize,
    /// Probability of a uniformly random action during exploration.
    pub random_eps: f64,
    /// Clip Bellman targets to `[−1/(1−γ), 0]`.
    pub clip_target: bool,
    pub hidden: Vec<usize>,
    pub adam_lr: f64,
    /// Weight of the `mean(tanh_out²)` penalty added to the actor loss.
    pub action_l2: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Td3,
            optimizer: OptimizerKind::Kfac,
            gamma: 0.98,
            tau: 0.05,
            explore_noise_std: 0.1,
            target_noise_std: 0.2,
            target_noise_clip: 0.5,
            policy_delay: 2,
            batch_size: 128,
            random_eps: 0.2,
            clip_target: true,
            hidden: vec![64, 64, 64],
            adam_lr: 1e-3,
            action_l2: 1.0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("agent: {m}")));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.explore_noise_std > 0.0) {
            return bad("explore_noise_std must be positive");
        }
        if !(self.target_noise_std > 0.0) {
            return bad("target_noise_std must be positive");
        }
        if !(self.target_noise_clip > 0.0) {
            return bad("target_noise_clip must be positive");
        }
        if self.policy_delay == 0 {
            return bad("policy_delay must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.random_eps) {
            return bad("random_eps must lie in [0, 1]");
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden widths must be positive");
        }
        if !(self.adam_lr > 0.0) {
            return bad("adam_lr must be positive");
        }
        if !(self.action_l2 >= 0.0) {
            return bad("action_l2 must be non-negative");
        }
        Ok(())
    }
}

/// Sizes and action bounds an agent is built for.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentDims {
    pub obs_dim: usize,
    pub goal_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
}

impl From<&EnvSpec> for AgentDims {
    fn from(s: &EnvSpec) -> Self {
        Self {
            obs_dim: s.obs_dim,
            goal_dim: s.goal_dim,
            action_dim: s.action_dim,
            action_low: s.action_low.clone(),
            action_high: s.action_high.clone(),
        }
    }
}

impl AgentDims {
    fn center(&self, i: usize) -> f64 {
        0.5 * (self.action_high[i] + self.action_low[i])
    }

    fn half(&self, i: usize) -> f64 {
        0.5 * (self.action_high[i] - self.action_low[i])
    }

    fn clip(&self, i: usize, v: f64) -> f64 {
        v.clamp(self.action_low[i], self.action_high[i])
    }
}

#[derive(Debug, Clone)]
pub enum NetOptimizer {
    Kfac(KfacOptimizer),
    Adam(AdamState),
}

impl NetOptimizer {
    fn new(net: &Mlp, kind: OptimizerKind, kfac: &KfacConfig) -> Result<Self> {
        Ok(match kind {
            OptimizerKind::Kfac => NetOptimizer::Kfac(KfacOptimizer::new(net, kfac.clone())?),
            OptimizerKind::Adam => NetOptimizer::Adam(AdamState::new(net)),
        })
    }

    fn step(
        &mut self,
        net: &mut Mlp,
        cache: &ForwardCache,
        grads: &[Matrix],
        adam_lr: f64,
        rng: &mut impl Rng,
    ) -> Result<()> {
        match self {
            NetOptimizer::Kfac(opt) => {
                let stats: Vec<LayerStats> =
                    sample_fisher_stats_from_cache(net, cache, rng.random(), opt.config.fisher_noise_std)?;
                opt.step(net, grads, &stats)
            }
            NetOptimizer::Adam(state) => adam_step(net, state, grads, adam_lr),
        }
    }
}

/// A minibatch laid out as matrices.
#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Matrix,
    pub goals: Matrix,
    pub actions: Matrix,
    pub next_states: Matrix,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(ts: &[Transition]) -> Result<Self> {
        if ts.is_empty() {
            return Err(Error::shape("empty batch"));
        }
        let rows = |f: &dyn Fn(&Transition) -> &Vec<f64>| Matrix::from_rows(&ts.iter().map(f).collect::<Vec<_>>());
        Ok(Self {
            states: rows(&|t| &t.state)?,
            goals: rows(&|t| &t.goal)?,
            actions: rows(&|t| &t.action)?,
            next_states: rows(&|t| &t.next_state)?,
            rewards: ts.iter().map(|t| t.reward).collect(),
            dones: ts.iter().map(|t| t.done).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Intermediate values of a TD3 target computation.
#[derive(Debug, Clone)]
pub struct Td3Target {
    pub y: Vec<f64>,
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
    /// Clipped smoothing noise per sample and action dimension.
    pub noise: Matrix,
    /// Smoothed, bound-clipped target actions.
    pub actions: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub critic_loss: f64,
    pub actor_loss: Option<f64>,
    pub q_mean: f64,
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub config: AgentConfig,
    pub kfac: KfacConfig,
    pub dims: AgentDims,
    pub actor: Mlp,
    pub target_actor: Mlp,
    pub critics: Vec<Mlp>,
    pub target_critics: Vec<Mlp>,
    actor_opt: NetOptimizer,
    critic_opts: Vec<NetOptimizer>,
    critic_updates: u64,
    actor_updates: u64,
}

impl Agent {
    /// Networks are seeded from `seed`, `seed + 1`, ... (actor first, then
    /// each critic), so twin critics start from different parameters.
    pub fn new(dims: AgentDims, config: AgentConfig, kfac: KfacConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        kfac.validate()?;
        if dims.action_low.len() != dims.action_dim
            || dims.action_high.len() != dims.action_dim
            || dims.action_low.iter().zip(&dims.action_high).any(|(l, h)| !(l < h))
        {
            return Err(Error::Config("invalid action bounds".into()));
        }
        let actor_in = dims.obs_dim + dims.goal_dim;
        let actor = init_mlp(&mlp_spec(actor_in, &config.hidden, dims.action_dim, Activation::Tanh), seed)?;
        let critics = (0..config.algorithm.num_critics())
            .map(|i| {
                init_mlp(
                    &mlp_spec(actor_in + dims.action_dim, &config.hidden, 1, Activation::Identity),
                    seed.wrapping_add(1 + i as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_networks(dims, config, kfac, actor.clone(), actor, critics.clone(), critics)
    }

    /// Assembles an agent from existing networks with fresh optimizer state.
    pub fn from_networks(
        dims: AgentDims,
        config: AgentConfig,
        kfac: KfacConfig,
        actor: Mlp,
        target_actor: Mlp,
        critics: Vec<Mlp>,
        target_critics: Vec<Mlp>,
    ) -> Result<Self> {
        config.validate()?;
        kfac.validate()?;
        let actor_in = dims.obs_dim + dims.goal_dim;
        if actor.in_dim() != actor_in || actor.out_dim() != dims.action_dim || target_actor.spec() != actor.spec() {
            return Err(Error::shape("actor networks do not match agent dimensions"));
        }
        if critics.len() != config.algorithm.num_critics() || target_critics.len() != critics.len() {
            return Err(Error::shape("wrong number of critics for the algorithm"));
        }
        for (c, t) in critics.iter().zip(&target_critics) {
            if c.in_dim() != actor_in + dims.action_dim || c.out_dim() != 1 || t.spec() != c.spec() {
                return Err(Error::shape("critic networks do not match agent dimensions"));
            }
        }
        let actor_opt = NetOptimizer::new(&actor, config.optimizer, &kfac)?;
        let critic_opts = critics
            .iter()
            .map(|c| NetOptimizer::new(c, config.optimizer, &kfac))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            kfac,
            dims,
            actor,
            target_actor,
            critics,
            target_critics,
            actor_opt,
            critic_opts,
            critic_updates: 0,
            actor_updates: 0,
        })
    }

    pub fn critic_updates(&self) -> u64 {
        self.critic_updates
    }

    pub fn actor_updates(&self) -> u64 {
        self.actor_updates
    }

    pub fn optimizers(&self) -> (&NetOptimizer, &[NetOptimizer]) {
        (&self.actor_opt, &self.critic_opts)
    }

    fn actor_input(&self, obs: &GoalObservation) -> Result<Matrix> {
        if obs.observation.len() != self.dims.obs_dim || obs.desired_goal.len() != self.dims.goal_dim {
            return Err(Error::shape("observation does not match agent dimensions"));
        }
        let mut row = obs.observation.clone();
        row.extend_from_slice(&obs.desired_goal);
        Matrix::new(1, row.len(), row)
    }

    /// Maps tanh outputs onto the action box.
    fn scale_actions(&self, raw: &Matrix) -> Matrix {
        Matrix::from_fn(raw.rows(), raw.cols(), |r, c| self.dims.center(c) + self.dims.half(c) * raw.get(r, c))
    }

    /// Deterministic action, in bounds.
    pub fn act(&self, obs: &GoalObservation) -> Result<Vec<f64>> {
        let raw = self.actor.predict(&self.actor_input(obs)?)?;
        let a = self.scale_actions(&raw);
        Ok((0..self.dims.action_dim).map(|i| self.dims.clip(i, a.get(0, i))).collect())
    }

    /// Policy action; with `explore` a random action with probability
    /// `random_eps`, otherwise Gaussian noise of `explore_noise_std`
    /// half-ranges. Always clipped to bounds.
    pub fn select_action(&self, obs: &GoalObservation, explore: bool, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let mut a = self.act(obs)?;
        if explore {
            if self.config.random_eps > 0.0 && rng.random_bool(self.config.random_eps) {
                for (i, v) in a.iter_mut().enumerate() {
                    *v = rng.random_range(self.dims.action_low[i]..=self.dims.action_high[i]);
                }
            } else {
                let normal = Normal::new(0.0, self.config.explore_noise_std).expect("positive std");
                for (i, v) in a.iter_mut().enumerate() {
                    *v = self.dims.clip(i, *v + self.dims.half(i) * normal.sample(rng));
                }
            }
        }
        Ok(a)
    }

    fn clip_target(&self, y: f64) -> f64 {
        if self.config.clip_target {
            let lo = if self.config.gamma < 1.0 { -1.0 / (1.0 - self.config.gamma) } else { f64::NEG_INFINITY };
            y.clamp(lo, 0.0)
        } else {
            y
        }
    }

    fn bellman(&self, batch: &Batch, next_q: &[f64]) -> Vec<f64> {
        (0..batch.len())
            .map(|i| {
                if batch.dones[i] {
                    batch.rewards[i]
                } else {
                    self.clip_target(batch.rewards[i] + self.config.gamma * next_q[i])
                }
            })
            .collect()
    }

    /// `r + γ·(1 − done)·Q′(s′‖g, P′(s′‖g))` using the first target critic.
    pub fn td_target_ddpg(&self, batch: &Batch) -> Result<Vec<f64>> {
        let sg = Matrix::hcat(&[&batch.next_states, &batch.goals])?;
        let a = self.scale_actions(&self.target_actor.predict(&sg)?);
        let q = self.target_critics[0].predict(&Matrix::hcat(&[&sg, &a])?)?;
        Ok(self.bellman(batch, q.data()))
    }

    /// Clipped double-Q target at a smoothed target action.
    pub fn td_target_td3(&self, batch: &Batch, rng: &mut impl Rng) -> Result<Td3Target> {
        if self.target_critics.len() < 2 {
            return Err(Error::State("TD3 targets need twin critics".into()));
        }
        let sg = Matrix::hcat(&[&batch.next_states, &batch.goals])?;
        let base = self.scale_actions(&self.target_actor.predict(&sg)?);
        let normal = Normal::new(0.0, self.config.target_noise_std).expect("positive std");
        let c = self.config.target_noise_clip;
        let noise = Matrix::from_fn(base.rows(), base.cols(), |_, _| normal.sample(rng).clamp(-c, c));
        let actions = Matrix::from_fn(base.rows(), base.cols(), |r, j| self.dims.clip(j, base.get(r, j) + noise.get(r, j)));
        let input = Matrix::hcat(&[&sg, &actions])?;
        let q1 = self.target_critics[0].predict(&input)?.into_data();
        let q2 = self.target_critics[1].predict(&input)?.into_data();
        let min: Vec<f64> = q1.iter().zip(&q2).map(|(a, b)| a.min(*b)).collect();
        Ok(Td3Target { y: self.bellman(batch, &min), q1, q2, noise, actions })
    }

    fn targets(&self, batch: &Batch, rng: &mut impl Rng) -> Result<Vec<f64>> {
        match self.config.algorithm {
            Algorithm::Ddpg => self.td_target_ddpg(batch),
            Algorithm::Td3 => Ok(self.td_target_td3(batch, rng)?.y),
        }
    }

    /// Regresses every critic onto the Bellman targets; returns the summed
    /// per-critic MSE before the update. Critics are untouched on error.
    pub fn critic_update(&mut self, batch: &Batch, rng: &mut impl Rng) -> Result<f64> {
        Ok(self.critic_update_with_q(batch, rng)?.0)
    }

    fn critic_update_with_q(&mut self, batch: &Batch, rng: &mut impl Rng) -> Result<(f64, f64)> {
        if batch.is_empty() {
            return Err(Error::shape("empty batch"));
        }
        let y = self.targets(batch, rng)?;
        let input = Matrix::hcat(&[&batch.states, &batch.goals, &batch.actions])?;
        let n = batch.len() as f64;
        let mut passes = Vec::with_capacity(self.critics.len());
        let mut total = 0.0;
        let mut q_mean = 0.0;
        for (ci, critic) in self.critics.iter().enumerate() {
            let (q, cache) = critic.forward(&input)?;
            let diff: Vec<f64> = q.data().iter().zip(&y).map(|(q, y)| q - y).collect();
            let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
            if ci == 0 {
                q_mean = q.data().iter().sum::<f64>() / n;
            }
            total += loss;
            let og = Matrix::new(diff.len(), 1, diff.iter().map(|d| 2.0 * d).collect())?;
            let (grads, _) = critic.backward(&cache, &og)?;
            passes.push((cache, grads));
        }
        if !total.is_finite() {
            return Err(Error::Numeric(format!("critic loss is {total}")));
        }
        let mut critics = self.critics.clone();
        let mut opts = self.critic_opts.clone();
        for ((critic, opt), (cache, grads)) in critics.iter_mut().zip(opts.iter_mut()).zip(&passes) {
            opt.step(critic, cache, grads, self.config.adam_lr, rng)?;
        }
        self.critics = critics;
        self.critic_opts = opts;
        self.critic_updates += 1;
        Ok((total, q_mean))
    }

    /// Gradient of `−mean Q1(s‖g, P(s‖g))` (plus the optional action
    /// penalty) with respect to the actor parameters, with the forward cache
    /// and the loss value.
    pub fn actor_gradient(&self, batch: &Batch) -> Result<(f64, Vec<Matrix>, ForwardCache)> {
        let sg = Matrix::hcat(&[&batch.states, &batch.goals])?;
        let (raw, actor_cache) = self.actor.forward(&sg)?;
        let actions = self.scale_actions(&raw);
        let critic_in = Matrix::hcat(&[&sg, &actions])?;
        let (q, critic_cache) = self.critics[0].forward(&critic_in)?;
        let n = batch.len() as f64;
        let l2 = self.config.action_l2;
        let loss = -q.data().iter().sum::<f64>() / n + l2 * raw.data().iter().map(|v| v * v).sum::<f64>() / n;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("actor loss is {loss}")));
        }
        let dq = Matrix::from_fn(batch.len(), 1, |_, _| -1.0);
        let input_grad = self.critics[0].grad_through_input(&critic_cache, &dq)?;
        let offset = sg.cols();
        let og = Matrix::from_fn(raw.rows(), raw.cols(), |r, c| {
            input_grad.get(r, offset + c) * self.dims.half(c) + 2.0 * l2 * raw.get(r, c)
        });
        let (grads, _) = self.actor.backward(&actor_cache, &og)?;
        Ok((loss, grads, actor_cache))
    }

    /// One optimizer step on the actor through the frozen first critic.
    pub fn actor_update(&mut self, batch: &Batch, rng: &mut impl Rng) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::shape("empty batch"));
        }
        let (loss, grads, cache) = self.actor_gradient(batch)?;
        let mut actor = self.actor.clone();
        let mut opt = self.actor_opt.clone();
        opt.step(&mut actor, &cache, &grads, self.config.adam_lr, rng)?;
        self.actor = actor;
        self.actor_opt = opt;
        self.actor_updates += 1;
        Ok(loss)
    }

    pub fn update_targets(&mut self) -> Result<()> {
        let tau = self.config.tau;
        polyak_update(&mut self.target_actor, &self.actor, tau)?;
        for (t, c) in self.target_critics.iter_mut().zip(&self.critics) {
            polyak_update(t, c, tau)?;
        }
        Ok(())
    }

    /// Samples a batch, updates the critics, and on the delay schedule the
    /// actor and all target networks.
    pub fn train_step(&mut self, buf: &HerBuffer, rng: &mut impl Rng) -> Result<StepMetrics> {
        let ts = buf.sample(self.config.batch_size, rng)?;
        let batch = Batch::from_transitions(&ts)?;
        self.train_on_batch(&batch, rng)
    }

    pub fn train_on_batch(&mut self, batch: &Batch, rng: &mut impl Rng) -> Result<StepMetrics> {
        let (critic_loss, q_mean) = self.critic_update_with_q(batch, rng)?;
        let delay = match self.config.algorithm {
            Algorithm::Ddpg => 1,
            Algorithm::Td3 => self.config.policy_delay as u64,
        };
        let actor_loss = if self.critic_updates % delay == 0 {
            let loss = self.actor_update(batch, rng)?;
            self.update_targets()?;
            Some(loss)
        } else {
            None
        };
        Ok(StepMetrics { critic_loss, actor_loss, q_mean })
    }
}

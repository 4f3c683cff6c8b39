//! Training loop, evaluation protocol and the metrics CSV.
//!
//! All randomness comes from one ChaCha8 stream seeded with `train.seed`.
//! Draw order: one `u64` seeds the networks; then for every cycle, each
//! rollout episode draws its reset seed followed by the exploration draws of
//! its steps, after which every optimizer step draws its minibatch indices,
//! relabel decisions, target smoothing noise and Fisher sampling seeds.
//! Evaluation uses fixed reset seeds and no randomness.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::save_checkpoint;
use super::config::TrainConfig;
use crate::agents::{Agent, AgentDims};
use crate::envs::{make_env, GoalEnv};
use crate::error::{Error, Result};
use crate::replay::{Episode, HerBuffer, Transition};

pub const METRICS_HEADER: &str =
    "epoch,env_steps,train_success_rate,eval_success_rate,actor_loss,critic_loss,q_mean,wall_time_s";

/// Evaluation reset seeds start here, offset by the run seed.
pub const EVAL_SEED_OFFSET: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub env_steps: u64,
    pub train_success_rate: f64,
    pub eval_success_rate: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub q_mean: f64,
    pub wall_time_s: f64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.env_steps,
            self.train_success_rate,
            self.eval_success_rate,
            self.actor_loss,
            self.critic_loss,
            self.q_mean,
            self.wall_time_s
        )
    }

    pub fn parse_csv(line: &str) -> std::result::Result<Self, String> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 8 {
            return Err(format!("expected 8 fields, found {}", f.len()));
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| format!("bad number '{}'", f[i]));
        Ok(Self {
            epoch: f[0].parse().map_err(|_| format!("bad epoch '{}'", f[0]))?,
            env_steps: f[1].parse().map_err(|_| format!("bad env_steps '{}'", f[1]))?,
            train_success_rate: num(2)?,
            eval_success_rate: num(3)?,
            actor_loss: num(4)?,
            critic_loss: num(5)?,
            q_mean: num(6)?,
            wall_time_s: num(7)?,
        })
    }
}

/// Reads a metrics CSV written by [`train`].
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path)?;
    let fmt = |message: String| Error::Format { path: path.to_path_buf(), message };
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == METRICS_HEADER => {}
        _ => return Err(fmt("missing or unexpected header".into())),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| MetricsRow::parse_csv(l).map_err(|m| fmt(format!("row {}: {m}", i + 1))))
        .collect()
}

pub struct TrainOutcome {
    pub agent: Agent,
    pub metrics: Vec<MetricsRow>,
}

pub fn metrics_path(out_dir: &Path) -> PathBuf {
    out_dir.join("metrics.csv")
}

pub fn checkpoint_path(out_dir: &Path) -> PathBuf {
    out_dir.join("checkpoint.tdhk")
}

/// Greedy rollouts from reset seeds `seed..seed + n`; the fraction whose
/// final step succeeded.
pub fn evaluate(agent: &Agent, env: &mut dyn GoalEnv, n: usize, seed: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let mut successes = 0usize;
    for i in 0..n {
        let mut obs = env.reset(seed.wrapping_add(i as u64));
        let mut success = false;
        for _ in 0..env.spec().horizon {
            let a = agent.act(&obs)?;
            let out = env.step(&a)?;
            success = out.is_success;
            obs = out.obs;
        }
        if success {
            successes += 1;
        }
    }
    Ok(successes as f64 / n as f64)
}

/// Evaluates an arbitrary policy the same way as [`evaluate`].
pub fn evaluate_policy(
    env: &mut dyn GoalEnv,
    n: usize,
    seed: u64,
    mut policy: impl FnMut(&crate::envs::GoalObservation) -> Vec<f64>,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let mut successes = 0usize;
    for i in 0..n {
        let mut obs = env.reset(seed.wrapping_add(i as u64));
        let mut success = false;
        for _ in 0..env.spec().horizon {
            let out = env.step(&policy(&obs))?;
            success = out.is_success;
            obs = out.obs;
        }
        successes += usize::from(success);
    }
    Ok(successes as f64 / n as f64)
}

/// One exploratory episode; returns it with its final-step success flag.
pub fn rollout(agent: &Agent, env: &mut dyn GoalEnv, rng: &mut impl Rng) -> Result<(Episode, bool)> {
    let mut obs = env.reset(rng.random());
    let mut transitions = Vec::with_capacity(env.spec().horizon);
    let mut success = false;
    for _ in 0..env.spec().horizon {
        let action = agent.select_action(&obs, true, rng)?;
        let out = env.step(&action)?;
        success = out.is_success;
        transitions.push(Transition {
            state: obs.observation,
            action,
            next_state: out.obs.observation.clone(),
            goal: obs.desired_goal,
            achieved_goal: obs.achieved_goal,
            next_achieved_goal: out.obs.achieved_goal.clone(),
            reward: out.reward,
            done: out.done,
        });
        obs = out.obs;
    }
    Ok((Episode { transitions }, success))
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn write_checkpoint_atomically(agent: &Agent, out_dir: &Path) -> Result<()> {
    let tmp = out_dir.join("checkpoint.tdhk.tmp");
    save_checkpoint(agent, &tmp)?;
    fs::rename(&tmp, checkpoint_path(out_dir))?;
    Ok(())
}

/// Runs the full epoch/cycle loop, writing `metrics.csv`, `config.txt` and
/// `checkpoint.tdhk` under `cfg.out_dir`.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(cfg, |_| {})
}

pub fn train_with_progress(cfg: &TrainConfig, mut progress: impl FnMut(&MetricsRow)) -> Result<TrainOutcome> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config.txt"), cfg.to_config_string())?;

    let mut env = make_env(&cfg.env_name, cfg.env_n)?;
    let mut eval_env = env.clone();
    let spec = env.spec().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut agent = Agent::new(AgentDims::from(&spec), cfg.agent.clone(), cfg.kfac.clone(), rng.random())?;
    let mut buffer = HerBuffer::new(cfg.replay.clone(), spec.success_tol)?;

    let mut csv = BufWriter::new(File::create(metrics_path(&cfg.out_dir))?);
    writeln!(csv, "{METRICS_HEADER}")?;
    csv.flush()?;

    let start = Instant::now();
    let eval_seed = cfg.seed.wrapping_add(EVAL_SEED_OFFSET);
    let mut env_steps = 0u64;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut successes = 0usize;
        let mut episodes = 0usize;
        let (mut actor_losses, mut critic_losses, mut q_means) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..cfg.cycles_per_epoch {
            for _ in 0..cfg.episodes_per_cycle {
                let (ep, success) = rollout(&agent, env.as_mut(), &mut rng)?;
                env_steps += ep.len() as u64;
                successes += usize::from(success);
                episodes += 1;
                buffer.store_episode(ep, &mut rng)?;
            }
            for _ in 0..cfg.optimizer_steps_per_cycle {
                let m = agent.train_step(&buffer, &mut rng)?;
                critic_losses.push(m.critic_loss);
                q_means.push(m.q_mean);
                if let Some(a) = m.actor_loss {
                    actor_losses.push(a);
                }
            }
        }
        let eval = evaluate(&agent, eval_env.as_mut(), cfg.eval_episodes, eval_seed)?;
        let row = MetricsRow {
            epoch,
            env_steps,
            train_success_rate: successes as f64 / episodes as f64,
            eval_success_rate: eval,
            actor_loss: mean(&actor_losses),
            critic_loss: mean(&critic_losses),
            q_mean: mean(&q_means),
            wall_time_s: if cfg.log_wall_time { start.elapsed().as_secs_f64() } else { 0.0 },
        };
        writeln!(csv, "{}", row.to_csv())?;
        csv.flush()?;
        progress(&row);
        metrics.push(row);

        let last = epoch + 1 == cfg.epochs;
        let stop = cfg.stop_success.is_some_and(|s| eval >= s);
        if last || stop || (epoch + 1) % cfg.checkpoint_every == 0 {
            write_checkpoint_atomically(&agent, &cfg.out_dir)?;
        }
        if stop {
            break;
        }
    }
    Ok(TrainOutcome { agent, metrics })
}

//! Flat `dotted.key = value` configuration files.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored
//! and unknown keys are errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::agents::{AgentConfig, Algorithm, OptimizerKind};
use crate::error::{Error, Result};
use crate::kfac::KfacConfig;
use crate::replay::{RelabelMode, ReplayConfig, Strategy};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub cycles_per_epoch: usize,
    pub episodes_per_cycle: usize,
    pub optimizer_steps_per_cycle: usize,
    pub eval_episodes: usize,
    pub seed: u64,
    pub env_name: String,
    pub env_n: Option<usize>,
    pub agent: AgentConfig,
    pub kfac: KfacConfig,
    pub replay: ReplayConfig,
    pub out_dir: PathBuf,
    pub checkpoint_every: usize,
    /// Write measured seconds into `wall_time_s`; otherwise the column is 0
    /// and the CSV is a pure function of the config.
    pub log_wall_time: bool,
    /// Stop after the first epoch whose eval success reaches this rate.
    pub stop_success: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            cycles_per_epoch: 10,
            episodes_per_cycle: 16,
            optimizer_steps_per_cycle: 40,
            eval_episodes: 50,
            seed: 0,
            env_name: "point_reach".into(),
            env_n: None,
            agent: AgentConfig::default(),
            kfac: KfacConfig::default(),
            replay: ReplayConfig::default(),
            out_dir: PathBuf::from("runs/default"),
            checkpoint_every: 10,
            log_wall_time: false,
            stop_success: None,
        }
    }
}

/// Every key [`TrainConfig::set`] accepts.
pub const KEYS: &[&str] = &[
    "train.epochs",
    "train.cycles_per_epoch",
    "train.episodes_per_cycle",
    "train.optimizer_steps_per_cycle",
    "train.eval_episodes",
    "train.seed",
    "train.out_dir",
    "train.checkpoint_every",
    "train.log_wall_time",
    "train.stop_success",
    "env.name",
    "env.n",
    "agent.algorithm",
    "agent.optimizer",
    "agent.gamma",
    "agent.tau",
    "agent.explore_noise_std",
    "agent.target_noise_std",
    "agent.target_noise_clip",
    "agent.policy_delay",
    "agent.batch_size",
    "agent.random_eps",
    "agent.clip_target",
    "agent.hidden",
    "agent.adam_lr",
    "agent.action_l2",
    "kfac.damping",
    "kfac.momentum",
    "kfac.stat_decay",
    "kfac.learning_rate",
    "kfac.inversion_interval",
    "kfac.fisher_noise_std",
    "kfac.max_update_norm",
    "replay.capacity",
    "replay.strategy",
    "replay.relabel_mode",
    "replay.future_k",
    "replay.her",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got '{value}'"))),
    }
}

fn parse_optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

/// Hidden widths as `64x64x64`; `none` for no hidden layers.
fn parse_hidden(key: &str, value: &str) -> Result<Vec<usize>> {
    if value == "none" {
        return Ok(Vec::new());
    }
    value.split('x').map(|w| parse(key, w.trim())).collect()
}

fn format_hidden(h: &[usize]) -> String {
    if h.is_empty() {
        "none".into()
    } else {
        h.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
    }
}

fn format_optional<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".into(), T::to_string)
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "train.epochs" => self.epochs = parse(key, v)?,
            "train.cycles_per_epoch" => self.cycles_per_epoch = parse(key, v)?,
            "train.episodes_per_cycle" => self.episodes_per_cycle = parse(key, v)?,
            "train.optimizer_steps_per_cycle" => self.optimizer_steps_per_cycle = parse(key, v)?,
            "train.eval_episodes" => self.eval_episodes = parse(key, v)?,
            "train.seed" => self.seed = parse(key, v)?,
            "train.out_dir" => self.out_dir = PathBuf::from(v),
            "train.checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "train.log_wall_time" => self.log_wall_time = parse_bool(key, v)?,
            "train.stop_success" => self.stop_success = parse_optional(key, v)?,
            "env.name" => self.env_name = v.to_string(),
            "env.n" => self.env_n = parse_optional(key, v)?,
            "agent.algorithm" => self.agent.algorithm = Algorithm::from_str(v)?,
            "agent.optimizer" => self.agent.optimizer = OptimizerKind::from_str(v)?,
            "agent.gamma" => self.agent.gamma = parse(key, v)?,
            "agent.tau" => self.agent.tau = parse(key, v)?,
            "agent.explore_noise_std" => self.agent.explore_noise_std = parse(key, v)?,
            "agent.target_noise_std" => self.agent.target_noise_std = parse(key, v)?,
            "agent.target_noise_clip" => self.agent.target_noise_clip = parse(key, v)?,
            "agent.policy_delay" => self.agent.policy_delay = parse(key, v)?,
            "agent.batch_size" => self.agent.batch_size = parse(key, v)?,
            "agent.random_eps" => self.agent.random_eps = parse(key, v)?,
            "agent.clip_target" => self.agent.clip_target = parse_bool(key, v)?,
            "agent.hidden" => self.agent.hidden = parse_hidden(key, v)?,
            "agent.adam_lr" => self.agent.adam_lr = parse(key, v)?,
            "agent.action_l2" => self.agent.action_l2 = parse(key, v)?,
            "kfac.damping" => self.kfac.damping = parse(key, v)?,
            "kfac.momentum" => self.kfac.momentum = parse(key, v)?,
            "kfac.stat_decay" => self.kfac.stat_decay = parse(key, v)?,
            "kfac.learning_rate" => self.kfac.learning_rate = parse(key, v)?,
            "kfac.inversion_interval" => self.kfac.inversion_interval = parse(key, v)?,
            "kfac.fisher_noise_std" => self.kfac.fisher_noise_std = parse(key, v)?,
            "kfac.max_update_norm" => self.kfac.max_update_norm = parse_optional(key, v)?,
            "replay.capacity" => self.replay.capacity = parse(key, v)?,
            "replay.strategy" => self.replay.strategy = Strategy::from_str(v)?,
            "replay.relabel_mode" => self.replay.relabel_mode = RelabelMode::from_str(v)?,
            "replay.future_k" => self.replay.future_k = parse(key, v)?,
            "replay.her" => self.replay.her = parse_bool(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "train.epochs" => self.epochs.to_string(),
            "train.cycles_per_epoch" => self.cycles_per_epoch.to_string(),
            "train.episodes_per_cycle" => self.episodes_per_cycle.to_string(),
            "train.optimizer_steps_per_cycle" => self.optimizer_steps_per_cycle.to_string(),
            "train.eval_episodes" => self.eval_episodes.to_string(),
            "train.seed" => self.seed.to_string(),
            "train.out_dir" => self.out_dir.display().to_string(),
            "train.checkpoint_every" => self.checkpoint_every.to_string(),
            "train.log_wall_time" => self.log_wall_time.to_string(),
            "train.stop_success" => format_optional(&self.stop_success),
            "env.name" => self.env_name.clone(),
            "env.n" => format_optional(&self.env_n),
            "agent.algorithm" => self.agent.algorithm.as_str().into(),
            "agent.optimizer" => self.agent.optimizer.as_str().into(),
            "agent.gamma" => self.agent.gamma.to_string(),
            "agent.tau" => self.agent.tau.to_string(),
            "agent.explore_noise_std" => self.agent.explore_noise_std.to_string(),
            "agent.target_noise_std" => self.agent.target_noise_std.to_string(),
            "agent.target_noise_clip" => self.agent.target_noise_clip.to_string(),
            "agent.policy_delay" => self.agent.policy_delay.to_string(),
            "agent.batch_size" => self.agent.batch_size.to_string(),
            "agent.random_eps" => self.agent.random_eps.to_string(),
            "agent.clip_target" => self.agent.clip_target.to_string(),
            "agent.hidden" => format_hidden(&self.agent.hidden),
            "agent.adam_lr" => self.agent.adam_lr.to_string(),
            "agent.action_l2" => self.agent.action_l2.to_string(),
            "kfac.damping" => self.kfac.damping.to_string(),
            "kfac.momentum" => self.kfac.momentum.to_string(),
            "kfac.stat_decay" => self.kfac.stat_decay.to_string(),
            "kfac.learning_rate" => self.kfac.learning_rate.to_string(),
            "kfac.inversion_interval" => self.kfac.inversion_interval.to_string(),
            "kfac.fisher_noise_std" => self.kfac.fisher_noise_std.to_string(),
            "kfac.max_update_norm" => format_optional(&self.kfac.max_update_norm),
            "replay.capacity" => self.replay.capacity.to_string(),
            "replay.strategy" => self.replay.strategy.as_str().into(),
            "replay.relabel_mode" => self.replay.relabel_mode.as_str().into(),
            "replay.future_k" => self.replay.future_k.to_string(),
            "replay.her" => self.replay.her.to_string(),
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        })
    }

    /// Applies the assignments in `text` on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected 'key = value'", n + 1)));
            };
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, e.to_string().trim_start_matches("config error: "))))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    /// Serializes the keys with the given prefixes, one per line.
    pub fn to_config_string_with(&self, prefixes: &[&str]) -> String {
        let mut s = String::new();
        for key in KEYS.iter().filter(|k| prefixes.iter().any(|p| k.starts_with(p))) {
            let _ = writeln!(s, "{key} = {}", self.get(key).expect("listed key"));
        }
        s
    }

    pub fn to_config_string(&self) -> String {
        self.to_config_string_with(&[""])
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("train.epochs", self.epochs),
            ("train.cycles_per_epoch", self.cycles_per_epoch),
            ("train.episodes_per_cycle", self.episodes_per_cycle),
            ("train.optimizer_steps_per_cycle", self.optimizer_steps_per_cycle),
            ("train.eval_episodes", self.eval_episodes),
            ("train.checkpoint_every", self.checkpoint_every),
        ];
        for (k, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be at least 1")));
            }
        }
        if let Some(s) = self.stop_success {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Config("train.stop_success must lie in [0, 1]".into()));
            }
        }
        self.agent.validate()?;
        self.kfac.validate()?;
        self.replay.validate()?;
        crate::envs::make_env(&self.env_name, self.env_n)?;
        Ok(())
    }
}

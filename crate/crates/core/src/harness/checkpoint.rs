//! Binary agent checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "TDHK"                      magic
//! u16                         format version
//! u8                          algorithm (0 ddpg, 1 td3)
//! u32 ×3                      obs_dim, goal_dim, action_dim
//! f64 ×action_dim ×2          action_low, action_high
//! u32 + utf8                  agent.* and kfac.* settings as config text
//! u16                         network count
//!   per network: u16 + utf8 name, u16 layer count,
//!                per layer u32 in_dim, u32 out_dim, u8 activation id
//! f64 ...                     parameters per network in manifest order,
//!                             per layer weights (row-major) then biases
//! ```
//!
//! Optimizer state is not stored; a loaded agent starts with fresh K-FAC
//! factors and Adam moments.

use std::fs;
use std::path::Path;

use super::config::TrainConfig;
use crate::agents::{Agent, AgentDims, Algorithm};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{Activation, Layer, LayerSpec, Mlp};

pub const MAGIC: &[u8; 4] = b"TDHK";
pub const VERSION: u16 = 1;

fn network_names(alg: Algorithm) -> &'static [&'static str] {
    match alg {
        Algorithm::Ddpg => &["actor", "critic", "target_actor", "target_critic"],
        Algorithm::Td3 => &["actor", "critic1", "critic2", "target_actor", "target_critic1", "target_critic2"],
    }
}

fn networks(agent: &Agent) -> Vec<&Mlp> {
    let mut v = vec![&agent.actor];
    v.extend(agent.critics.iter());
    v.push(&agent.target_actor);
    v.extend(agent.target_critics.iter());
    v
}

fn settings_text(agent: &Agent) -> String {
    let cfg = TrainConfig { agent: agent.config.clone(), kfac: agent.kfac.clone(), ..Default::default() };
    cfg.to_config_string_with(&["agent.", "kfac."])
}

pub fn encode_checkpoint(agent: &Agent) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match agent.config.algorithm {
        Algorithm::Ddpg => 0,
        Algorithm::Td3 => 1,
    });
    let d = &agent.dims;
    for v in [d.obs_dim, d.goal_dim, d.action_dim] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in d.action_low.iter().chain(&d.action_high) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let settings = settings_text(agent);
    out.extend_from_slice(&(settings.len() as u32).to_le_bytes());
    out.extend_from_slice(settings.as_bytes());

    let nets = networks(agent);
    let names = network_names(agent.config.algorithm);
    out.extend_from_slice(&(nets.len() as u16).to_le_bytes());
    for (name, net) in names.iter().zip(&nets) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(net.layers().len() as u16).to_le_bytes());
        for l in net.layers() {
            out.extend_from_slice(&(l.spec.in_dim as u32).to_le_bytes());
            out.extend_from_slice(&(l.spec.out_dim as u32).to_le_bytes());
            out.push(l.spec.activation.id());
        }
    }
    for net in &nets {
        for l in net.layers() {
            let (out_dim, in_dim) = (l.spec.out_dim, l.spec.in_dim);
            for o in 0..out_dim {
                for i in 0..in_dim {
                    out.extend_from_slice(&l.weight(o, i).to_le_bytes());
                }
            }
            for o in 0..out_dim {
                out.extend_from_slice(&l.bias(o).to_le_bytes());
            }
        }
    }
    out
}

pub fn save_checkpoint(agent: &Agent, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(agent))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Checkpoint { position: self.pos, message: message.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, len: usize, what: &str) -> Result<String> {
        let start = self.pos;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Checkpoint {
            position: start,
            message: format!("{what} is not valid UTF-8"),
        })
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Agent> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint { position: 0, message: "bad magic".into() });
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint { position: 4, message: format!("unsupported version {version}") });
    }
    let algorithm = match r.u8("algorithm")? {
        0 => Algorithm::Ddpg,
        1 => Algorithm::Td3,
        other => return Err(Error::Checkpoint { position: r.pos - 1, message: format!("unknown algorithm id {other}") }),
    };
    let obs_dim = r.u32("obs_dim")? as usize;
    let goal_dim = r.u32("goal_dim")? as usize;
    let action_dim = r.u32("action_dim")? as usize;
    let mut bounds = Vec::with_capacity(2 * action_dim);
    for _ in 0..2 * action_dim {
        bounds.push(r.f64("action bounds")?);
    }
    let action_high = bounds.split_off(action_dim);
    let dims = AgentDims { obs_dim, goal_dim, action_dim, action_low: bounds, action_high };

    let settings_len = r.u32("settings length")? as usize;
    let settings_pos = r.pos;
    let settings = r.string(settings_len, "settings")?;
    let mut cfg = TrainConfig::default();
    cfg.apply_str(&settings).map_err(|e| Error::Checkpoint { position: settings_pos, message: e.to_string() })?;
    if cfg.agent.algorithm != algorithm {
        return Err(Error::Checkpoint { position: settings_pos, message: "settings disagree with algorithm id".into() });
    }

    let names = network_names(algorithm);
    let count = r.u16("network count")? as usize;
    if count != names.len() {
        return Err(r.err(format!("expected {} networks, found {count}", names.len())));
    }
    let mut specs: Vec<Vec<LayerSpec>> = Vec::with_capacity(count);
    for expected in names {
        let len = r.u16("network name length")? as usize;
        let name = r.string(len, "network name")?;
        if name != *expected {
            return Err(r.err(format!("expected network '{expected}', found '{name}'")));
        }
        let layers = r.u16("layer count")? as usize;
        let mut spec = Vec::with_capacity(layers);
        for _ in 0..layers {
            let in_dim = r.u32("layer in_dim")? as usize;
            let out_dim = r.u32("layer out_dim")? as usize;
            let act = r.u8("activation")?;
            let activation = Activation::from_id(act).ok_or_else(|| r.err(format!("unknown activation id {act}")))?;
            spec.push(LayerSpec { in_dim, out_dim, activation });
        }
        specs.push(spec);
    }
    let mut nets = Vec::with_capacity(count);
    for spec in specs {
        let start = r.pos;
        let mut layers = Vec::with_capacity(spec.len());
        for s in spec {
            let mut params = Matrix::zeros(s.out_dim, s.in_dim + 1);
            for o in 0..s.out_dim {
                for i in 0..s.in_dim {
                    params.set(o, i, r.f64("weights")?);
                }
            }
            for o in 0..s.out_dim {
                params.set(o, s.in_dim, r.f64("biases")?);
            }
            layers.push(Layer { spec: s, params });
        }
        nets.push(Mlp::from_layers(layers).map_err(|e| Error::Checkpoint { position: start, message: e.to_string() })?);
    }
    if r.pos != buf.len() {
        return Err(r.err(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    let critics_n = algorithm.num_critics();
    let mut it = nets.into_iter();
    let actor = it.next().expect("counted");
    let critics: Vec<Mlp> = it.by_ref().take(critics_n).collect();
    let target_actor = it.next().expect("counted");
    let target_critics: Vec<Mlp> = it.collect();
    Agent::from_networks(dims, cfg.agent, cfg.kfac, actor, target_actor, critics, target_critics)
        .map_err(|e| Error::Checkpoint { position: buf.len(), message: e.to_string() })
}

pub fn load_checkpoint(path: &Path) -> Result<Agent> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::AgentConfig;
    use crate::kfac::KfacConfig;

    fn agent(alg: Algorithm) -> Agent {
        let dims = AgentDims { obs_dim: 3, goal_dim: 2, action_dim: 2, action_low: vec![-1.0; 2], action_high: vec![1.0, 2.0] };
        let cfg = AgentConfig { algorithm: alg, hidden: vec![8, 8], ..Default::default() };
        Agent::new(dims, cfg, KfacConfig { damping: 0.4, ..Default::default() }, 3).unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        for alg in [Algorithm::Ddpg, Algorithm::Td3] {
            let a = agent(alg);
            let bytes = encode_checkpoint(&a);
            let b = decode_checkpoint(&bytes).unwrap();
            assert_eq!(b.actor, a.actor);
            assert_eq!(b.critics, a.critics);
            assert_eq!(b.target_critics, a.target_critics);
            assert_eq!(b.config, a.config);
            assert_eq!(b.kfac, a.kfac);
            assert_eq!(b.dims, a.dims);
            assert_eq!(encode_checkpoint(&b), bytes);
        }
    }

    #[test]
    fn corrupted_files_are_rejected_with_position() {
        let bytes = encode_checkpoint(&agent(Algorithm::Td3));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Checkpoint { position: 0, .. })));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Checkpoint { position: 4, .. })));

        let cut = bytes.len() - 5;
        match decode_checkpoint(&bytes[..cut]) {
            Err(Error::Checkpoint { position, message }) => {
                assert!(message.contains("truncated"));
                assert!(position <= cut);
            }
            _ => panic!("truncation must fail"),
        }

        let mut long = bytes.clone();
        long.push(0);
        assert!(decode_checkpoint(&long).is_err());
    }
}

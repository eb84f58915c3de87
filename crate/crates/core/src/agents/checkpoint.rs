//! Checkpoint directories: `manifest.json`, `params.bin`, `optimizer.bin`
//! and an optional `replay.bin`. Binary files hold little-endian `f64`s
//! concatenated in manifest order; offsets count elements, not bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{make_agent, Agent, AgentConfig, AgentError, AgentState};
use crate::autodiff::{AdamConfig, OptimizerState};
use crate::envs::EnvSpec;
use crate::{ParamStore, Tensor};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";
pub const OPTIMIZER_FILE: &str = "optimizer.bin";
pub const REPLAY_FILE: &str = "replay.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    /// `network/parameter`
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerEntry {
    pub name: String,
    pub step: u64,
    pub config: AdamConfig,
    pub first_moment: Vec<TensorEntry>,
    pub second_moment: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub algo: String,
    pub config: AgentConfig,
    pub env_spec: EnvSpec,
    pub counters: BTreeMap<String, u64>,
    pub tensors: Vec<TensorEntry>,
    pub optimizers: Vec<OptimizerEntry>,
    pub has_replay: bool,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self, AgentError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| AgentError::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.format_version != FORMAT_VERSION {
            return Err(AgentError::Checkpoint(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                m.format_version
            )));
        }
        Ok(m)
    }
}

fn push_tensor(buf: &mut Vec<u8>, entries: &mut Vec<TensorEntry>, name: String, t: &Tensor, offset: &mut usize) {
    entries.push(TensorEntry {
        name,
        shape: t.shape().to_vec(),
        offset: *offset,
    });
    for x in t.data() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    *offset += t.len();
}

fn read_floats(path: &Path) -> Result<Vec<f64>, AgentError> {
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(AgentError::Checkpoint(format!("{} is not a whole number of f64s", path.display())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

fn tensor_at(data: &[f64], e: &TensorEntry) -> Result<Tensor, AgentError> {
    let n: usize = e.shape.iter().product();
    let slice = data
        .get(e.offset..e.offset + n)
        .ok_or_else(|| AgentError::Checkpoint(format!("tensor {}: shape {:?} at offset {} runs past the data", e.name, e.shape, e.offset)))?;
    Ok(Tensor::from_vec(&e.shape, slice.to_vec()))
}

/// Writes `agent` to `dir`, creating it if needed.
pub fn save_agent(agent: &dyn Agent, dir: &Path, include_replay: bool) -> Result<(), AgentError> {
    fs::create_dir_all(dir)?;
    let state = agent.state(include_replay);
    let mut params = Vec::new();
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (net, store) in &state.networks {
        for (pname, t) in store.names().iter().zip(store.tensors()) {
            push_tensor(&mut params, &mut tensors, format!("{net}/{pname}"), t, &mut offset);
        }
    }
    let mut moments = Vec::new();
    let mut optimizers = Vec::new();
    let mut offset = 0;
    for (name, opt) in &state.optimizers {
        let mut first = Vec::new();
        let mut second = Vec::new();
        for (i, t) in opt.first_moment.iter().enumerate() {
            push_tensor(&mut moments, &mut first, format!("{name}/m{i}"), t, &mut offset);
        }
        for (i, t) in opt.second_moment.iter().enumerate() {
            push_tensor(&mut moments, &mut second, format!("{name}/v{i}"), t, &mut offset);
        }
        optimizers.push(OptimizerEntry {
            name: name.clone(),
            step: opt.step,
            config: opt.config,
            first_moment: first,
            second_moment: second,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        algo: agent.config().algo().to_string(),
        config: agent.config(),
        env_spec: agent.env_spec().clone(),
        counters: state.counters.clone(),
        tensors,
        optimizers,
        has_replay: state.replay.is_some(),
    };
    fs::write(dir.join(PARAMS_FILE), params)?;
    fs::write(dir.join(OPTIMIZER_FILE), moments)?;
    match &state.replay {
        Some(bytes) => fs::write(dir.join(REPLAY_FILE), bytes)?,
        None => {
            let stale = dir.join(REPLAY_FILE);
            if stale.exists() {
                fs::remove_file(stale)?;
            }
        }
    }
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn read_state(dir: &Path, manifest: &Manifest, with_replay: bool) -> Result<AgentState, AgentError> {
    let params = read_floats(&dir.join(PARAMS_FILE))?;
    let mut networks: Vec<(String, ParamStore)> = Vec::new();
    for e in &manifest.tensors {
        let (net, pname) = e
            .name
            .split_once('/')
            .ok_or_else(|| AgentError::Checkpoint(format!("tensor name {:?} lacks a network prefix", e.name)))?;
        let t = tensor_at(&params, e)?;
        match networks.last_mut() {
            Some((n, store)) if n == net => {
                store.add(pname, t);
            }
            _ => {
                let mut store = ParamStore::new();
                store.add(pname, t);
                networks.push((net.to_string(), store));
            }
        }
    }
    let moments = read_floats(&dir.join(OPTIMIZER_FILE))?;
    let mut optimizers = Vec::new();
    for o in &manifest.optimizers {
        let first = o.first_moment.iter().map(|e| tensor_at(&moments, e)).collect::<Result<_, _>>()?;
        let second = o.second_moment.iter().map(|e| tensor_at(&moments, e)).collect::<Result<_, _>>()?;
        optimizers.push((
            o.name.clone(),
            OptimizerState {
                config: o.config,
                step: o.step,
                first_moment: first,
                second_moment: second,
            },
        ));
    }
    let replay = if with_replay && manifest.has_replay {
        Some(fs::read(dir.join(REPLAY_FILE))?)
    } else {
        None
    };
    Ok(AgentState {
        counters: manifest.counters.clone(),
        networks,
        optimizers,
        replay,
    })
}

fn load(dir: &Path, with_replay: bool) -> Result<Box<dyn Agent>, AgentError> {
    let manifest = Manifest::read(dir)?;
    let mut agent = make_agent(&manifest.config, &manifest.env_spec, 0)?;
    agent.load_state(read_state(dir, &manifest, with_replay)?)?;
    Ok(agent)
}

/// Restores parameters, optimizer moments, counters and any stored replay.
/// Random number streams start afresh.
pub fn load_agent(dir: &Path) -> Result<Box<dyn Agent>, AgentError> {
    load(dir, true)
}

/// Like [`load_agent`] but never reads the replay payload.
pub fn load_agent_for_eval(dir: &Path) -> Result<Box<dyn Agent>, AgentError> {
    load(dir, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{DdpgConfig, DqnConfig, PpoConfig, ReinforceConfig, SacConfig, Td3Config};
    use crate::envs::make_env;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trained(config: AgentConfig, env: &str, steps: usize) -> Box<dyn Agent> {
        let mut e = make_env(env).unwrap();
        let mut agent = make_agent(&config, e.spec(), 7).unwrap();
        let mut obs = e.reset(Some(7));
        let mut reward = 0.0;
        for _ in 0..steps {
            let a = agent.act_and_train(&obs, reward);
            let r = e.step(&a).unwrap();
            if r.done {
                agent.stop_episode_and_train(&r.obs, r.reward, r.is_terminal());
                obs = e.reset(None);
                reward = 0.0;
            } else {
                obs = r.obs;
                reward = r.reward;
            }
        }
        if agent.has_pending() {
            agent.stop_episode_and_train(&obs, reward, false);
        }
        agent
    }

    fn configs() -> Vec<(AgentConfig, &'static str)> {
        let dqn = DqnConfig {
            hidden: vec![16],
            replay_start: 32,
            ..DqnConfig::default()
        };
        let ddpg = DdpgConfig {
            hidden: vec![16],
            replay_start: 32,
            random_steps: 32,
            batch_size: 16,
            ..DdpgConfig::default()
        };
        vec![
            (AgentConfig::Dqn(dqn.clone()), "cartpole"),
            (AgentConfig::Dqn(crate::agents::make_rainbow(dqn)), "cartpole"),
            (
                AgentConfig::Reinforce(ReinforceConfig {
                    hidden: vec![16],
                    batch_episodes: 1,
                    ..ReinforceConfig::default()
                }),
                "cartpole",
            ),
            (
                AgentConfig::Ppo(PpoConfig {
                    hidden: vec![16],
                    rollout_steps: 64,
                    minibatch_size: 32,
                    epochs: 2,
                    ..PpoConfig::default()
                }),
                "cartpole",
            ),
            (AgentConfig::Ddpg(ddpg.clone()), "pendulum"),
            (
                AgentConfig::Td3(Td3Config {
                    base: ddpg.clone(),
                    ..Td3Config::default()
                }),
                "pendulum",
            ),
            (
                AgentConfig::Sac(SacConfig {
                    hidden: vec![16],
                    replay_start: 32,
                    random_steps: 32,
                    batch_size: 16,
                    ..SacConfig::default()
                }),
                "pendulum",
            ),
        ]
    }

    #[test]
    fn round_trip_preserves_actions_and_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (config, env) in configs() {
            let agent = trained(config, env, 150);
            let dir = tempfile::tempdir().unwrap();
            save_agent(agent.as_ref(), dir.path(), true).unwrap();
            let loaded = load_agent(dir.path()).unwrap();
            assert_eq!(loaded.counters(), agent.counters());
            let a = agent.state(true);
            let b = loaded.state(true);
            assert_eq!(a, b, "{}", agent.config().algo());
            let dim = agent.env_spec().obs_dim;
            for _ in 0..200 {
                let o: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
                assert_eq!(agent.act(&o), loaded.act(&o));
            }
        }
    }

    #[test]
    fn tampered_shape_names_the_tensor() {
        let agent = trained(AgentConfig::Dqn(DqnConfig::default()), "gridworld5", 10);
        let dir = tempfile::tempdir().unwrap();
        save_agent(agent.as_ref(), dir.path(), false).unwrap();
        let mut m = Manifest::read(dir.path()).unwrap();
        let e = m.tensors.iter_mut().find(|e| e.name == "online/l0.w").unwrap();
        e.shape = vec![e.shape[1], e.shape[0]];
        fs::write(dir.path().join(MANIFEST_FILE), serde_json::to_string(&m).unwrap()).unwrap();
        let err = load_agent(dir.path()).err().unwrap().to_string();
        assert!(err.contains("online/l0.w"), "{err}");
    }

    #[test]
    fn eval_load_skips_replay() {
        let agent = trained(
            AgentConfig::Dqn(DqnConfig {
                replay_start: 10_000,
                ..DqnConfig::default()
            }),
            "gridworld5",
            50,
        );
        let dir = tempfile::tempdir().unwrap();
        save_agent(agent.as_ref(), dir.path(), true).unwrap();
        assert!(dir.path().join(REPLAY_FILE).exists());
        let full = load_agent(dir.path()).unwrap();
        assert_eq!(full.state(true).replay, agent.state(true).replay);
        fs::write(dir.path().join(REPLAY_FILE), b"garbage").unwrap();
        let eval = load_agent_for_eval(dir.path()).unwrap();
        assert_ne!(eval.state(true).replay, agent.state(true).replay);
        assert!(load_agent(dir.path()).is_err());
    }
}

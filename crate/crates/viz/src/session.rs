use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rlforge::agents::{Agent, AgentOutputs};
use rlforge::envs::{ActionSpace, Env, EnvError, EnvSpec};
use rlforge::Action;
use serde::Serialize;
use serde_json::{json, Value};

use crate::VizError;

/// Static description of a session, as served by `/api/meta`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Meta {
    pub env_id: String,
    pub agent_kind: String,
    pub action_labels: Vec<String>,
    /// `{"discrete": n}` or `{"box": {"low": [..], "high": [..]}}`.
    pub action_space: Value,
    pub obs_shape: Vec<usize>,
    pub output_kind: String,
}

/// One entry of the episode log. The reset record has step 0 and no action.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub obs: Vec<f64>,
    pub action_taken: Option<Action>,
    pub reward: f64,
    pub done: bool,
    #[serde(rename = "return")]
    pub ret: f64,
    pub render: Value,
    pub outputs: AgentOutputs,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Saliency {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepMode {
    /// The agent's evaluation action.
    Agent,
    Manual(Action),
}

/// Display names of the actions of `spec`.
pub fn action_labels(spec: &EnvSpec) -> Vec<String> {
    let named: &[&str] = match spec.id.as_str() {
        "gridworld5" => &["up", "down", "left", "right"],
        "cartpole" => &["left", "right"],
        "pendulum" => &["torque"],
        _ => &[],
    };
    if named.len() == spec.action_space.size() {
        return named.iter().map(|s| s.to_string()).collect();
    }
    let prefix = if spec.action_space.is_discrete() { "a" } else { "u" };
    (0..spec.action_space.size()).map(|i| format!("{prefix}{i}")).collect()
}

fn space_json(space: &ActionSpace) -> Value {
    match space {
        ActionSpace::Discrete { n } => json!({ "discrete": n }),
        ActionSpace::Box { low, high } => json!({ "box": { "low": low, "high": high } }),
    }
}

/// One environment and one agent under inspection. The agent is only read.
///
/// The episode log holds the records of the steps taken since the last
/// reset, so its length is the current step index.
pub struct Session {
    env: Box<dyn Env>,
    agent: Box<dyn Agent>,
    meta: Meta,
    obs: Vec<f64>,
    ret: f64,
    done: bool,
    log: Vec<StepRecord>,
    rng: ChaCha8Rng,
}

impl Session {
    /// Starts a session and resets the environment with `seed`.
    pub fn new(env: Box<dyn Env>, agent: Box<dyn Agent>, seed: u64) -> Result<Self, VizError> {
        let (es, asp) = (env.spec(), agent.env_spec());
        if es.obs_dim != asp.obs_dim || es.action_space != asp.action_space {
            return Err(VizError::Mismatch(format!(
                "agent was built for {:?}, environment is {:?}",
                asp.id, es.id
            )));
        }
        let obs = vec![0.0; es.obs_dim];
        let meta = Meta {
            env_id: es.id.clone(),
            agent_kind: agent.config().algo().to_string(),
            action_labels: action_labels(es),
            action_space: space_json(&es.action_space),
            obs_shape: vec![es.obs_dim],
            output_kind: agent.outputs(&obs).kind().to_string(),
        };
        let mut s = Self {
            env,
            agent,
            meta,
            obs,
            ret: 0.0,
            done: false,
            log: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.reset(Some(seed))?;
        Ok(s)
    }

    pub fn meta(&self) -> &Meta {
        &self.meta
    }

    pub fn agent(&self) -> &dyn Agent {
        self.agent.as_ref()
    }

    pub fn log(&self) -> &[StepRecord] {
        &self.log
    }

    pub fn step_index(&self) -> usize {
        self.log.len()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Starts a new episode, dropping the log. Without a seed one is drawn
    /// from the session's generator.
    pub fn reset(&mut self, seed: Option<u64>) -> Result<StepRecord, VizError> {
        let seed = seed.unwrap_or_else(|| self.rng.random());
        self.obs = self.env.reset(Some(seed));
        self.ret = 0.0;
        self.done = false;
        self.log.clear();
        self.record(None, 0.0)
    }

    pub fn step(&mut self, mode: StepMode) -> Result<StepRecord, VizError> {
        if self.done {
            return Err(VizError::EpisodeOver);
        }
        let action = match mode {
            StepMode::Agent => self.agent.act(&self.obs),
            StepMode::Manual(a) => {
                self.env.spec().action_space.check(&a).map_err(|e| VizError::BadRequest(e.to_string()))?;
                a
            }
        };
        let r = self.env.step(&action).map_err(|e| match e {
            EnvError::EpisodeOver => VizError::EpisodeOver,
            e => VizError::BadRequest(e.to_string()),
        })?;
        self.obs = r.obs;
        self.ret += r.reward;
        self.done = r.done;
        let rec = self.record(Some(action), r.reward)?;
        self.log.push(rec.clone());
        Ok(rec)
    }

    /// Up to `n` agent steps, stopping at the end of the episode.
    pub fn rollout(&mut self, n: i64) -> Result<Vec<StepRecord>, VizError> {
        if n <= 0 {
            return Err(VizError::BadRequest(format!("rollout length must be positive, got {n}")));
        }
        if self.done {
            return Err(VizError::EpisodeOver);
        }
        let mut out = Vec::new();
        for _ in 0..n {
            out.push(self.step(StepMode::Agent)?);
            if self.done {
                break;
            }
        }
        Ok(out)
    }

    /// Observation gradient magnitudes of the agent's saliency target,
    /// scaled to a maximum of 1; all zeros when the gradient vanishes.
    pub fn saliency(&self) -> Result<Saliency, VizError> {
        let g = self.agent.saliency(&self.obs);
        check_all("saliency", &g)?;
        let max = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let values = if max > 0.0 { g.iter().map(|x| x.abs() / max).collect() } else { vec![0.0; g.len()] };
        Ok(Saliency {
            shape: self.meta.obs_shape.clone(),
            values,
        })
    }

    /// Record of the current state; fails if anything is non-finite.
    fn record(&self, action: Option<Action>, reward: f64) -> Result<StepRecord, VizError> {
        let rec = StepRecord {
            step: self.log.len() + usize::from(action.is_some()),
            obs: self.obs.clone(),
            action_taken: action,
            reward,
            done: self.done,
            ret: self.ret,
            render: self.env.render(),
            outputs: self.agent.outputs(&self.obs),
        };
        check_record(&rec)?;
        Ok(rec)
    }
}

fn check_all(what: &str, xs: &[f64]) -> Result<(), VizError> {
    match xs.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(VizError::NonFinite(format!("{what}[{i}] = {}", xs[i]))),
        None => Ok(()),
    }
}

/// serde_json writes NaN and infinities as `null`, so renders are checked
/// for nulls after conversion.
fn check_render(path: &str, v: &Value) -> Result<(), VizError> {
    match v {
        Value::Null => Err(VizError::NonFinite(format!("{path} is not a finite number"))),
        Value::Array(xs) => xs.iter().enumerate().try_for_each(|(i, x)| check_render(&format!("{path}[{i}]"), x)),
        Value::Object(m) => m.iter().try_for_each(|(k, x)| check_render(&format!("{path}.{k}"), x)),
        _ => Ok(()),
    }
}

fn check_outputs(o: &AgentOutputs) -> Result<(), VizError> {
    match o {
        AgentOutputs::QValues { q, value, .. } => {
            check_all("outputs.q", q)?;
            check_all("outputs.value", &[*value])
        }
        AgentOutputs::Categorical {
            support, probs, q, value, ..
        } => {
            check_all("outputs.support", support)?;
            probs.iter().try_for_each(|p| check_all("outputs.probs", p))?;
            check_all("outputs.q", q)?;
            check_all("outputs.value", &[*value])
        }
        AgentOutputs::Quantile {
            taus,
            quantiles,
            q,
            value,
            ..
        } => {
            check_all("outputs.taus", taus)?;
            quantiles.iter().try_for_each(|p| check_all("outputs.quantiles", p))?;
            check_all("outputs.q", q)?;
            check_all("outputs.value", &[*value])
        }
        AgentOutputs::Policy {
            probs,
            mean,
            std,
            action,
            value,
        } => {
            check_all("outputs.probs", probs.as_deref().unwrap_or_default())?;
            check_all("outputs.mean", mean.as_deref().unwrap_or_default())?;
            check_all("outputs.std", std.as_deref().unwrap_or_default())?;
            check_all("outputs.value", value.as_slice())?;
            check_all("outputs.action", action.as_continuous().unwrap_or_default())
        }
    }
}

fn check_record(r: &StepRecord) -> Result<(), VizError> {
    check_all("obs", &r.obs)?;
    check_all("reward", &[r.reward, r.ret])?;
    if let Some(Action::Continuous(a)) = &r.action_taken {
        check_all("action_taken", a)?;
    }
    check_render("render", &r.render)?;
    check_outputs(&r.outputs)
}

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Behavior, Policy, ToyEnv};
use crate::error::{Error, Result};
use crate::nn::RngStream;

/// One offline tuple. Real transitions carry zero variances and a predictive
/// mean equal to the observed next state; synthetic ones keep the variances
/// of the model member that generated them.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Predictive mean of the next state.
    pub next_mean: Vec<f64>,
    /// Per-dimension variance of the next state.
    pub next_var: Vec<f64>,
    pub reward_var: f64,
    pub done: bool,
}

impl Transition {
    pub fn real(state: Vec<f64>, action: Vec<f64>, reward: f64, next_state: Vec<f64>, done: bool) -> Self {
        let dim = next_state.len();
        Self {
            state,
            action,
            reward,
            next_mean: next_state.clone(),
            next_state,
            next_var: vec![0.0; dim],
            reward_var: 0.0,
            done,
        }
    }

    /// True when every variance is exactly zero.
    pub fn is_certain(&self) -> bool {
        self.reward_var == 0.0 && self.next_var.iter().all(|&v| v == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.next_state.len();
        if self.state.len() != n || self.next_mean.len() != n || self.next_var.len() != n {
            return Err(Error::dim("transition state fields differ in length"));
        }
        let finite = self
            .state
            .iter()
            .chain(&self.action)
            .chain(&self.next_state)
            .chain(&self.next_mean)
            .chain(&self.next_var)
            .chain([&self.reward, &self.reward_var])
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("transition has non-finite entries".into()));
        }
        if self.reward_var < 0.0 || self.next_var.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument("transition has negative variance".into()));
        }
        Ok(())
    }
}

/// Episodes are drawn from `demo` with frequency `ratio` and from the random
/// policy otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorMix {
    pub demo: Behavior,
    pub ratio: f64,
}

impl BehaviorMix {
    pub fn pure(behavior: Behavior) -> Self {
        Self {
            demo: behavior,
            ratio: if behavior == Behavior::Random { 0.0 } else { 1.0 },
        }
    }

    pub fn label(&self) -> String {
        if self.ratio == 0.0 || self.demo == Behavior::Random {
            "random".into()
        } else if self.ratio == 1.0 {
            self.demo.label().into()
        } else {
            format!("mixed-{}-{}", self.ratio, self.demo.label())
        }
    }

    /// Behavior of episode `i`. Demonstration episodes are spread evenly so
    /// that every prefix matches the ratio to within one episode.
    pub fn episode_behavior(&self, i: usize) -> Behavior {
        let before = (i as f64 * self.ratio).floor();
        let after = ((i + 1) as f64 * self.ratio).floor();
        if after > before {
            self.demo
        } else {
            Behavior::Random
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub env: String,
    pub mix: String,
    pub ratio: f64,
    pub seed: u64,
    pub size: usize,
    pub policies: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub meta: DatasetMeta,
    pub transitions: Vec<Transition>,
}

impl OfflineDataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Undiscounted returns of the complete episodes in the dataset. A new
    /// episode starts wherever a state does not continue the previous tuple.
    pub fn episode_returns(&self, horizon: usize) -> Vec<f64> {
        let mut returns = Vec::new();
        let mut current = 0.0;
        let mut steps = 0;
        for (i, t) in self.transitions.iter().enumerate() {
            current += t.reward;
            steps += 1;
            let boundary = t.done
                || steps == horizon
                || self.transitions.get(i + 1).is_some_and(|n| n.state != t.next_state);
            if boundary {
                returns.push(current);
                current = 0.0;
                steps = 0;
            }
        }
        returns
    }
}

/// Rolls out behavior episodes until `size` transitions are collected.
pub fn generate_dataset(env: &ToyEnv, mix: BehaviorMix, size: usize, seed: u64) -> Result<OfflineDataset> {
    if size == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&mix.ratio) {
        return Err(Error::InvalidArgument(format!("ratio must lie in [0, 1], got {}", mix.ratio)));
    }
    let mut transitions = Vec::with_capacity(size);
    let mut episode = 0;
    while transitions.len() < size {
        let policy = mix.episode_behavior(episode).policy(env);
        let mut rng = RngStream::new(seed, episode as u64).rng();
        let mut s = env.reset(&mut rng);
        for _ in 0..env.horizon {
            let a = policy.act(&s, &mut rng);
            let step = env.step(&s, &a);
            transitions.push(Transition::real(s.to_vec(), a, step.reward, step.next.to_vec(), step.done));
            s = step.next;
            if step.done || transitions.len() == size {
                break;
            }
        }
        episode += 1;
    }
    let mut policies = vec![Behavior::Random.label().to_string()];
    if mix.ratio > 0.0 && mix.demo != Behavior::Random {
        policies.push(mix.demo.label().to_string());
        if mix.ratio == 1.0 {
            policies.remove(0);
        }
    }
    Ok(OfflineDataset {
        meta: DatasetMeta {
            env: env.name().to_string(),
            mix: mix.label(),
            ratio: mix.ratio,
            seed,
            size,
            policies,
        },
        transitions,
    })
}

fn push_number(out: &mut String, x: f64) {
    write!(out, "{x:.16e}").expect("writing to a String");
}

fn push_array(out: &mut String, xs: &[f64]) {
    out.push('[');
    for (i, &x) in xs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        push_number(out, x);
    }
    out.push(']');
}

impl OfflineDataset {
    /// JSON-lines encoding: a metadata line, then one object per transition.
    /// Numbers carry 17 significant digits, so values round-trip exactly.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        out.push_str(&serde_json::to_string(&serde_json::json!({ "meta": self.meta }))?);
        out.push('\n');
        for t in &self.transitions {
            t.validate()?;
            out.push_str("{\"s\":");
            push_array(&mut out, &t.state);
            out.push_str(",\"a\":");
            push_array(&mut out, &t.action);
            out.push_str(",\"r\":");
            push_number(&mut out, t.reward);
            out.push_str(",\"s_next\":");
            push_array(&mut out, &t.next_state);
            out.push_str(",\"done\":");
            out.push_str(if t.done { "true" } else { "false" });
            out.push_str(",\"var_s_next\":");
            if t.next_var.iter().all(|&v| v == 0.0) {
                out.push('0');
            } else {
                push_array(&mut out, &t.next_var);
            }
            out.push_str(",\"var_r\":");
            push_number(&mut out, t.reward_var);
            if t.next_mean != t.next_state {
                out.push_str(",\"s_next_mean\":");
                push_array(&mut out, &t.next_mean);
            }
            out.push_str("}\n");
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::Format("dataset file is empty".into()))?;
        let header: MetaLine =
            serde_json::from_str(first).map_err(|e| Error::Format(format!("line 1: metadata: {e}")))?;
        let mut transitions = Vec::new();
        for (i, line) in lines {
            let raw: RawTransition =
                serde_json::from_str(line).map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
            let t = raw.into_transition().map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
            transitions.push(t);
        }
        Ok(Self {
            meta: header.meta,
            transitions,
        })
    }
}

pub fn write_dataset(path: &Path, dataset: &OfflineDataset) -> Result<()> {
    std::fs::write(path, dataset.to_jsonl()?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<OfflineDataset> {
    OfflineDataset::from_jsonl(&std::fs::read_to_string(path)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaLine {
    meta: DatasetMeta,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Variance {
    Scalar(f64),
    PerDim(Vec<f64>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTransition {
    s: Vec<f64>,
    a: Vec<f64>,
    r: f64,
    s_next: Vec<f64>,
    done: bool,
    var_s_next: Variance,
    var_r: f64,
    #[serde(default)]
    s_next_mean: Option<Vec<f64>>,
}

impl RawTransition {
    fn into_transition(self) -> Result<Transition> {
        let dim = self.s_next.len();
        let next_var = match self.var_s_next {
            Variance::Scalar(v) => vec![v; dim],
            Variance::PerDim(v) => v,
        };
        let t = Transition {
            state: self.s,
            action: self.a,
            reward: self.r,
            next_mean: self.s_next_mean.unwrap_or_else(|| self.s_next.clone()),
            next_state: self.s_next,
            next_var,
            reward_var: self.var_r,
            done: self.done,
        };
        t.validate()?;
        Ok(t)
    }
}

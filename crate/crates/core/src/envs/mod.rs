//! Toy continuous-control tasks with simulable reference controllers, the
//! behavior policies that generate offline data, and the dataset format.

mod dataset;

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub use dataset::{
    generate_dataset, read_dataset, write_dataset, BehaviorMix, DatasetMeta, OfflineDataset, Transition,
};

pub const ENV_NAMES: [&str; 2] = ["linereach", "pendulite"];

/// Returns actions for states. Implementations may be stochastic.
pub trait Policy {
    fn act(&self, state: &[f64], rng: &mut dyn RngCore) -> Vec<f64>;

    /// One action row per state row.
    fn act_batch(&self, states: ArrayView2<f64>, rng: &mut dyn RngCore) -> Array2<f64> {
        let rows: Vec<Vec<f64>> = states
            .rows()
            .into_iter()
            .map(|s| self.act(&s.to_vec(), rng))
            .collect();
        let width = rows.first().map_or(0, Vec::len);
        Array2::from_shape_vec((rows.len(), width), rows.concat()).expect("rows share a width")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Task {
    LineReach,
    Pendulite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub next: [f64; 2],
    pub reward: f64,
    pub done: bool,
}

/// A deterministic two-dimensional control task with horizon `H`, actions in
/// `[−1, 1]` and rewards in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEnv {
    task: Task,
    pub horizon: usize,
    pub rmax: f64,
    /// Mean return of uniformly random actions.
    pub random_return: f64,
    /// Mean return of the noise-free reference controller.
    pub expert_return: f64,
}

pub fn make_env(name: &str) -> Result<ToyEnv> {
    let (task, random_return, expert_return) = match name {
        "linereach" => (Task::LineReach, LINEREACH_RANDOM, LINEREACH_EXPERT),
        "pendulite" => (Task::Pendulite, PENDULITE_RANDOM, PENDULITE_EXPERT),
        _ => {
            return Err(Error::UnknownEnv {
                name: name.to_string(),
                valid: ENV_NAMES.join(", "),
            })
        }
    };
    Ok(ToyEnv {
        task,
        horizon: 100,
        rmax: 1.0,
        random_return,
        expert_return,
    })
}

// Reference returns, from `reference_returns(env, 2000, 0)`.
const LINEREACH_RANDOM: f64 = 23.745_473_383_647_873_1;
const LINEREACH_EXPERT: f64 = 92.406_453_638_538_153;
const PENDULITE_RANDOM: f64 = 5.138_962_961_223_918_5;
const PENDULITE_EXPERT: f64 = 87.307_696_479_147_367;

impl ToyEnv {
    pub fn name(&self) -> &'static str {
        match self.task {
            Task::LineReach => "linereach",
            Task::Pendulite => "pendulite",
        }
    }

    pub fn state_dim(&self) -> usize {
        2
    }

    pub fn action_dim(&self) -> usize {
        1
    }

    pub fn reset(&self, rng: &mut dyn RngCore) -> [f64; 2] {
        match self.task {
            Task::LineReach => [rng.random_range(0.0..0.4), 0.0],
            Task::Pendulite => [wrap_angle(PI + rng.random_range(-0.2..0.2)), 0.0],
        }
    }

    /// Applies `action` (clipped to `[−1, 1]`) and scores the resulting state.
    pub fn step(&self, state: &[f64], action: &[f64]) -> Step {
        let a = action[0].clamp(-1.0, 1.0);
        let next = match self.task {
            Task::LineReach => {
                let (pos, vel) = (state[0], state[1]);
                [pos + 0.1 * vel, vel + 0.1 * a - 0.01 * vel]
            }
            Task::Pendulite => {
                let (theta, omega) = (state[0], state[1]);
                let omega = 0.98 * omega + 0.1 * (theta.sin() + 2.0 * a);
                [wrap_angle(theta + 0.1 * omega), omega]
            }
        };
        Step {
            next,
            reward: self.reward(&next),
            done: self.is_terminal(&next),
        }
    }

    pub fn reward(&self, state: &[f64]) -> f64 {
        match self.task {
            Task::LineReach => 1.0 - (state[0] - 1.0).abs().min(1.0),
            Task::Pendulite => 0.5 * (1.0 + state[0].cos()),
        }
    }

    pub fn is_terminal(&self, state: &[f64]) -> bool {
        match self.task {
            Task::LineReach => state[0].abs() > 3.0,
            Task::Pendulite => false,
        }
    }

    /// Noise-free proportional-derivative controller toward the goal.
    pub fn reference_action(&self, state: &[f64]) -> f64 {
        let raw = match self.task {
            Task::LineReach => 20.0 * (1.0 - state[0]) - 10.0 * state[1],
            Task::Pendulite => -4.0 * state[0] - 2.0 * state[1],
        };
        raw.clamp(-1.0, 1.0)
    }

    /// `100 · (raw − R_rand) / (R_exp − R_rand)`.
    pub fn normalized_return(&self, raw: f64) -> Result<f64> {
        normalized(raw, self.random_return, self.expert_return)
    }

    /// Runs one episode from a fresh reset and returns its undiscounted return.
    pub fn episode_return(&self, policy: &dyn Policy, rng: &mut dyn RngCore) -> f64 {
        let mut s = self.reset(rng);
        let mut total = 0.0;
        for _ in 0..self.horizon {
            let a = policy.act(&s, rng);
            let step = self.step(&s, &a);
            total += step.reward;
            s = step.next;
            if step.done {
                break;
            }
        }
        total
    }
}

pub(crate) fn normalized(raw: f64, random: f64, expert: f64) -> Result<f64> {
    let span = expert - random;
    if !(span.abs() > f64::EPSILON) {
        return Err(Error::InvalidArgument(format!(
            "degenerate reference returns: random {random}, expert {expert}"
        )));
    }
    Ok(100.0 * (raw - random) / span)
}

fn wrap_angle(theta: f64) -> f64 {
    let wrapped = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped == -PI {
        PI
    } else {
        wrapped
    }
}

/// Behavior policies used to generate offline data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Behavior {
    /// Uniform actions on `[−1, 1]`.
    Random,
    /// Reference controller plus Gaussian action noise with std 0.3.
    Medium,
    /// Reference controller plus Gaussian action noise with std 0.05.
    Expert,
}

impl Behavior {
    pub fn label(&self) -> &'static str {
        match self {
            Behavior::Random => "random",
            Behavior::Medium => "medium",
            Behavior::Expert => "expert",
        }
    }

    pub fn parse(label: &str) -> Result<Self> {
        match label {
            "random" => Ok(Behavior::Random),
            "medium" => Ok(Behavior::Medium),
            "expert" => Ok(Behavior::Expert),
            other => Err(Error::InvalidArgument(format!(
                "unknown behavior `{other}` (valid: random, medium, expert)"
            ))),
        }
    }

    pub fn noise_std(&self) -> Option<f64> {
        match self {
            Behavior::Random => None,
            Behavior::Medium => Some(0.3),
            Behavior::Expert => Some(0.05),
        }
    }

    pub fn policy<'a>(&self, env: &'a ToyEnv) -> BehaviorPolicy<'a> {
        BehaviorPolicy { env, behavior: *self }
    }
}

pub struct BehaviorPolicy<'a> {
    env: &'a ToyEnv,
    behavior: Behavior,
}

impl Policy for BehaviorPolicy<'_> {
    fn act(&self, state: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let a = match self.behavior.noise_std() {
            None => rng.random_range(-1.0..=1.0),
            Some(std) => {
                let z: f64 = rng.sample(StandardNormal);
                (self.env.reference_action(state) + std * z).clamp(-1.0, 1.0)
            }
        };
        vec![a]
    }
}

/// The noise-free reference controller as a policy.
pub struct ReferencePolicy<'a>(pub &'a ToyEnv);

impl Policy for ReferencePolicy<'_> {
    fn act(&self, state: &[f64], _rng: &mut dyn RngCore) -> Vec<f64> {
        vec![self.0.reference_action(state)]
    }
}

/// Mean returns of the random policy and of the reference controller over
/// `episodes` episodes each.
pub fn reference_returns(env: &ToyEnv, episodes: usize, seed: u64) -> (f64, f64) {
    let mean_return = |policy: &dyn Policy, stream: u64| {
        let mut rng = crate::nn::RngStream::new(seed, stream).rng();
        (0..episodes).map(|_| env.episode_return(policy, &mut rng)).sum::<f64>() / episodes as f64
    };
    (
        mean_return(&Behavior::Random.policy(env), 0),
        mean_return(&ReferencePolicy(env), 1),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::RngStream;

    #[test]
    fn unknown_env_lists_valid_names() {
        let err = make_env("cartpole").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("linereach") && msg.contains("pendulite"), "{msg}");
    }

    #[test]
    fn linereach_goal_reward() {
        let env = make_env("linereach").unwrap();
        let step = env.step(&[1.0, 0.0], &[0.0]);
        assert_eq!(step.next, [1.0, 0.0]);
        assert_eq!(step.reward, 1.0);
        assert!(!step.done);
    }

    #[test]
    fn linereach_one_step_from_rest() {
        let env = make_env("linereach").unwrap();
        let step = env.step(&[0.0, 0.0], &[1.0]);
        assert_eq!(step.next[0], 0.0);
        assert!((step.next[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn actions_are_clipped() {
        let env = make_env("linereach").unwrap();
        assert_eq!(env.step(&[0.0, 0.0], &[5.0]), env.step(&[0.0, 0.0], &[1.0]));
    }

    #[test]
    fn linereach_leaves_track() {
        let env = make_env("linereach").unwrap();
        assert!(env.step(&[3.05, 1.0], &[0.0]).done);
        assert!(!env.step(&[2.5, 1.0], &[0.0]).done);
    }

    #[test]
    fn steps_are_pure() {
        for name in ENV_NAMES {
            let env = make_env(name).unwrap();
            let s = [0.3, -0.7];
            assert_eq!(env.step(&s, &[0.4]), env.step(&s, &[0.4]));
        }
    }

    #[test]
    fn rewards_stay_in_unit_interval() {
        let mut rng = RngStream::new(4, 4).rng();
        for name in ENV_NAMES {
            let env = make_env(name).unwrap();
            for _ in 0..10_000 {
                let s = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
                let r = env.step(&s, &[rng.random_range(-2.0..2.0)]).reward;
                assert!((0.0..=env.rmax).contains(&r));
            }
        }
    }

    #[test]
    fn pendulite_angle_wraps() {
        let env = make_env("pendulite").unwrap();
        let step = env.step(&[PI - 0.01, 1.0], &[1.0]);
        assert!(step.next[0] > -PI && step.next[0] <= PI);
        assert!(step.next[0] < 0.0);
    }

    #[test]
    fn normalization_anchors() {
        let env = make_env("linereach").unwrap();
        assert!(env.normalized_return(env.random_return).unwrap().abs() < 1e-12);
        assert!((env.normalized_return(env.expert_return).unwrap() - 100.0).abs() < 1e-12);
        let mid = 0.5 * (env.random_return + env.expert_return);
        assert!((env.normalized_return(mid).unwrap() - 50.0).abs() < 1e-12);
        assert!(normalized(3.0, 2.0, 2.0).is_err());
    }

    #[test]
    fn reference_controller_is_strong_on_linereach() {
        let env = make_env("linereach").unwrap();
        let mut rng = RngStream::new(12, 0).rng();
        let mean = (0..50)
            .map(|_| env.episode_return(&ReferencePolicy(&env), &mut rng))
            .sum::<f64>()
            / 50.0;
        assert!(mean >= 90.0, "{mean}");
    }

    #[test]
    fn expert_beats_random() {
        for name in ENV_NAMES {
            let env = make_env(name).unwrap();
            assert!(env.expert_return > env.random_return);
        }
    }
}

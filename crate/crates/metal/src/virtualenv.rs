//! Rollouts against interchangeable dynamics (the real integrator or the
//! learned model) with one shared code path, so seed-synchronized runs on
//! both back ends consume randomness identically and can be compared
//! trajectory for trajectory. Rewards always come from the analytic reward
//! function evaluated on whatever states the dynamics produced.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dynmodel::{DynamicsModel, TransitionDataset};
use crate::envs::{clip_action, reward, MdpSpec, Task, TaskFamily, Transition};
use crate::error::{Error, Result};

/// One-step state transition backend.
pub trait Dynamics {
    fn next_state(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>>;
}

/// The true environment integrator.
pub struct RealDynamics<'a>(pub &'a MdpSpec);

impl Dynamics for RealDynamics<'_> {
    fn next_state(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        self.0.step(state, action)
    }
}

/// The learned model used as a stand-in for the environment.
pub struct ModelDynamics<'a>(pub &'a DynamicsModel);

impl Dynamics for ModelDynamics<'_> {
    fn next_state(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        self.0.predict(state, action)
    }
}

/// Action source. Implementations return the unclipped draw; the rollout
/// clips to the body's bounds before stepping and recording.
pub trait Agent {
    fn raw_action<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Vec<f64>;
}

/// Collection-time wrapper adding independent Gaussian noise to the inner
/// agent's raw actions. Data gathered for model fitting needs action
/// diversity: a converged policy is near-deterministic, and transitions
/// taken at a single action level cannot identify how the dynamics respond
/// to the actuators (a dead actuator looks the same as a bias shift).
/// Policy-gradient batches must never use this wrapper; their log-probs
/// belong to the bare policy.
pub struct ExploringAgent<'a, A: Agent> {
    pub inner: &'a A,
    pub noise_std: f64,
}

impl<A: Agent> Agent for ExploringAgent<'_, A> {
    fn raw_action<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Vec<f64> {
        let mut raw = self.inner.raw_action(state, rng);
        for a in &mut raw {
            let eps: f64 = StandardNormal.sample(rng);
            *a += self.noise_std * eps;
        }
        raw
    }
}

/// Where rollouts start.
#[derive(Clone, Copy)]
pub enum InitStateSource<'a> {
    /// Fresh draw from the MDP's initial-state distribution.
    P0,
    /// A pinned state, for closed-form tests.
    Fixed(&'a [f64]),
    /// A state stored in the dataset, drawn uniformly.
    Dataset(&'a TransitionDataset),
}

impl InitStateSource<'_> {
    fn draw<R: Rng + ?Sized>(&self, spec: &MdpSpec, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            InitStateSource::P0 => Ok(spec.reset(rng)),
            InitStateSource::Fixed(s) => Ok(s.to_vec()),
            InitStateSource::Dataset(data) => {
                if data.is_empty() {
                    return Err(Error::EmptyDataset);
                }
                let idx = rng.random_range(0..data.len());
                Ok(data
                    .iter_transitions()
                    .nth(idx)
                    .expect("index < len")
                    .state
                    .clone())
            }
        }
    }
}

/// Sampling plan for one optimization pass.
pub struct VirtualRolloutConfig<'a> {
    pub horizon: usize,
    pub n_samples: usize,
    pub init: InitStateSource<'a>,
}

impl<'a> VirtualRolloutConfig<'a> {
    pub fn new(horizon: usize, n_samples: usize, init: InitStateSource<'a>) -> Result<Self> {
        if horizon == 0 || n_samples < horizon {
            return Err(Error::InvalidConfig(format!(
                "need n_samples >= horizon >= 1, got horizon {horizon}, n_samples {n_samples}"
            )));
        }
        Ok(Self {
            horizon,
            n_samples,
            init,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    /// Unclipped policy outputs, index-aligned with `transitions`. Policy
    /// gradients evaluate log-probabilities on these.
    pub raw_actions: Vec<Vec<f64>>,
    /// True when the rollout hit the state guard or a non-finite prediction
    /// and stopped early.
    pub diverged: bool,
}

impl Trajectory {
    pub fn undiscounted_return(&self) -> f64 {
        self.transitions.iter().map(|tr| tr.reward).sum()
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// State guard for immature models: rollouts stop once any coordinate
/// leaves this range.
const STATE_CLIP: f64 = 100.0;

/// Plays one episode of at most `horizon` steps. Rewards are the analytic
/// reward of (current state, applied action); divergence truncates the
/// episode and sets the flag rather than erroring.
#[allow(clippy::too_many_arguments)]
pub fn rollout<D, A, R>(
    dynamics: &D,
    spec: &MdpSpec,
    agent: &A,
    family: &TaskFamily,
    task: &Task,
    horizon: usize,
    init: &InitStateSource,
    rng: &mut R,
) -> Result<Trajectory>
where
    D: Dynamics,
    A: Agent,
    R: Rng + ?Sized,
{
    let mut state = init.draw(spec, rng)?;
    let mut transitions = Vec::with_capacity(horizon);
    let mut raw_actions = Vec::with_capacity(horizon);
    let mut diverged = false;
    for t in 0..horizon {
        let raw = agent.raw_action(&state, rng);
        let action = clip_action(spec.body, &raw);
        let next = match dynamics.next_state(&state, &action) {
            Ok(s) => s,
            Err(Error::NonFinite { .. }) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let r = reward(family, &task.psi, &state, &action);
        let mut clipped = next;
        let mut hit_guard = false;
        for v in &mut clipped {
            if v.abs() > STATE_CLIP {
                *v = v.clamp(-STATE_CLIP, STATE_CLIP);
                hit_guard = true;
            }
        }
        transitions.push(Transition {
            state: state.clone(),
            action,
            next_state: clipped.clone(),
            reward: r,
            t,
        });
        raw_actions.push(raw);
        if hit_guard {
            diverged = true;
            break;
        }
        state = clipped;
    }
    Ok(Trajectory {
        transitions,
        raw_actions,
        diverged,
    })
}

/// Rolls episodes until at least `config.n_samples` transitions are
/// gathered. Episodes are whole; the last one is never cut short.
pub fn collect_samples<D, A, R>(
    dynamics: &D,
    spec: &MdpSpec,
    agent: &A,
    family: &TaskFamily,
    task: &Task,
    config: &VirtualRolloutConfig,
    rng: &mut R,
) -> Result<Vec<Trajectory>>
where
    D: Dynamics,
    A: Agent,
    R: Rng + ?Sized,
{
    let mut out = Vec::new();
    let mut total = 0usize;
    let mut consecutive_empty = 0usize;
    while total < config.n_samples {
        let traj = rollout(
            dynamics,
            spec,
            agent,
            family,
            task,
            config.horizon,
            &config.init,
            rng,
        )?;
        if traj.is_empty() {
            consecutive_empty += 1;
            if consecutive_empty > 1000 {
                return Err(Error::NonFinite {
                    context: "collect_samples: dynamics diverge immediately",
                });
            }
            continue;
        }
        consecutive_empty = 0;
        total += traj.len();
        out.push(traj);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub returns: Vec<f64>,
}

/// Monte-Carlo estimate of the undiscounted return over `n_rollouts`
/// episodes (the evaluation convention throughout).
#[allow(clippy::too_many_arguments)]
pub fn estimate_return<D, A, R>(
    dynamics: &D,
    spec: &MdpSpec,
    agent: &A,
    family: &TaskFamily,
    task: &Task,
    horizon: usize,
    n_rollouts: usize,
    init: &InitStateSource,
    rng: &mut R,
) -> Result<ReturnEstimate>
where
    D: Dynamics,
    A: Agent,
    R: Rng + ?Sized,
{
    if n_rollouts == 0 {
        return Err(Error::InvalidConfig("n_rollouts must be at least 1".into()));
    }
    let mut returns = Vec::with_capacity(n_rollouts);
    for _ in 0..n_rollouts {
        let traj = rollout(dynamics, spec, agent, family, task, horizon, init, rng)?;
        returns.push(traj.undiscounted_return());
    }
    Ok(summarize(returns))
}

pub fn summarize(returns: Vec<f64>) -> ReturnEstimate {
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let stderr = if returns.len() < 2 {
        0.0
    } else {
        let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    };
    ReturnEstimate {
        mean,
        stderr,
        returns,
    }
}

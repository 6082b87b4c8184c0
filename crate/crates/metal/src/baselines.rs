//! Comparison policies: a first-order MAML variant (one shared policy
//! initialization, adapted per task by likelihood-ratio gradient steps on
//! real rollouts) and an oracle that receives the task parameter as an
//! extra network input and trains across the whole task distribution.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::adapt::{evaluate_policy, AdaptationCurve, CurvePoint, TestBench};
use crate::envs::{Task, Transition};
use crate::error::{Error, Result};
use crate::ndmath::DenseArray;
use crate::seeding::stream;
use crate::trainer::{record, MetricRecord, SampleCounter};
use crate::trpo::{
    assemble_batch, fit_baseline, trpo_step, weighted_score_gradient, GaussianPolicy,
    TrustRegionConfig, ValueBaseline,
};
use crate::virtualenv::{rollout, Agent, InitStateSource, RealDynamics, Trajectory};

/// Meta-training settings. The inner step is larger on the first gradient
/// step than on subsequent ones.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MamlConfig {
    pub alpha_first: f64,
    pub alpha_rest: f64,
    pub beta: f64,
    pub meta_iters: usize,
    pub meta_batch: usize,
    pub rollouts_per_task: usize,
    pub policy_hidden: Vec<usize>,
    pub n_eval: usize,
    pub seed: u64,
}

impl MamlConfig {
    pub fn desk(seed: u64) -> Self {
        Self {
            alpha_first: 0.1,
            alpha_rest: 0.05,
            beta: 0.01,
            meta_iters: 200,
            meta_batch: 10,
            rollouts_per_task: 20,
            policy_hidden: vec![32, 32],
            n_eval: 10,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_first > 0.0 && self.alpha_rest > 0.0 && self.beta > 0.0) {
            return Err(Error::InvalidConfig(
                "MAML step sizes must be positive".into(),
            ));
        }
        // meta_iters may be zero: that degenerates to returning the
        // initialization untouched.
        for (name, v) in [
            ("meta_batch", self.meta_batch),
            ("rollouts_per_task", self.rollouts_per_task),
            ("n_eval", self.n_eval),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

fn discounted_returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Likelihood-ratio policy gradient: per-step advantage is the discounted
/// return-to-go minus the per-timestep mean over rollouts, normalized to
/// zero mean and unit variance across the batch, then averaged over samples.
/// The normalization makes the step sizes scale-free; the direction is the
/// plain score-function gradient.
pub fn policy_gradient(
    policy: &GaussianPolicy,
    trajectories: &[Trajectory],
    gamma: f64,
) -> Result<Vec<f64>> {
    if trajectories.is_empty() || trajectories.iter().all(Trajectory::is_empty) {
        return Err(Error::EmptyDataset);
    }
    let rtgs: Vec<Vec<f64>> = trajectories
        .iter()
        .map(|traj| {
            let rewards: Vec<f64> = traj.transitions.iter().map(|tr| tr.reward).collect();
            discounted_returns_to_go(&rewards, gamma)
        })
        .collect();
    let max_len = rtgs.iter().map(Vec::len).max().unwrap();
    let mut sums = vec![0.0; max_len];
    let mut counts = vec![0usize; max_len];
    for rtg in &rtgs {
        for (t, g) in rtg.iter().enumerate() {
            sums[t] += g;
            counts[t] += 1;
        }
    }

    let total: usize = rtgs.iter().map(Vec::len).sum();
    let sd = policy.state_dim();
    let ad = policy.action_dim();
    let mut states = DenseArray::zeros(&[total, sd]);
    let mut actions = DenseArray::zeros(&[total, ad]);
    let mut advantages = Vec::with_capacity(total);
    let mut row = 0;
    for (traj, rtg) in trajectories.iter().zip(&rtgs) {
        for (t, tr) in traj.transitions.iter().enumerate() {
            for i in 0..sd {
                states.set(row, i, tr.state[i]);
            }
            for i in 0..ad {
                actions.set(row, i, traj.raw_actions[t][i]);
            }
            advantages.push(rtg[t] - sums[t] / counts[t] as f64);
            row += 1;
        }
    }
    let mean = advantages.iter().sum::<f64>() / total as f64;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / total as f64;
    let std = var.sqrt() + 1e-8;
    let weights: Vec<f64> = advantages
        .iter()
        .map(|a| (a - mean) / (std * total as f64))
        .collect();
    weighted_score_gradient(policy, &states, &actions, &weights)
}

fn ascend(policy: &GaussianPolicy, gradient: &[f64], step: f64) -> Result<GaussianPolicy> {
    let theta: Vec<f64> = policy
        .flat_params()
        .iter()
        .zip(gradient)
        .map(|(p, g)| p + step * g)
        .collect();
    policy.with_flat_params(&theta)
}

fn collect_real_rollouts(
    bench: &TestBench,
    agent: &impl Agent,
    task: &Task,
    n_rollouts: usize,
    counter: &mut SampleCounter,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Trajectory>> {
    let mut trajs = Vec::with_capacity(n_rollouts);
    for _ in 0..n_rollouts {
        let traj = rollout(
            &RealDynamics(&bench.spec),
            &bench.spec,
            agent,
            &bench.family,
            task,
            bench.spec.horizon,
            &InitStateSource::P0,
            rng,
        )?;
        counter.add(traj.len());
        trajs.push(traj);
    }
    Ok(trajs)
}

/// Per-task adaptation from a (meta-trained) initialization: `n_grad_steps`
/// likelihood-ratio ascent steps, each on `rollouts_per_task` fresh real
/// rollouts, with the first/subsequent step sizes given explicitly. The
/// curve starts with the unadapted policy at zero samples.
#[allow(clippy::too_many_arguments)]
pub fn maml_adapt(
    theta0: &GaussianPolicy,
    bench: &TestBench,
    task: &Task,
    alphas: (f64, f64),
    n_grad_steps: usize,
    cfg: &MamlConfig,
    task_key: u64,
    counter: &mut SampleCounter,
) -> Result<(GaussianPolicy, AdaptationCurve)> {
    if !(alphas.0.is_finite() && alphas.1.is_finite() && alphas.0 >= 0.0 && alphas.1 >= 0.0) {
        return Err(Error::InvalidConfig(
            "adaptation step sizes must be finite and non-negative".into(),
        ));
    }
    let mut policy = theta0.clone();
    let mut rng = stream(cfg.seed, "maml-adapt", &[task_key]);
    let mut eval_rng = stream(cfg.seed, "maml-adapt-eval", &[task_key]);

    let mut points = Vec::with_capacity(n_grad_steps + 1);
    let zero_shot =
        evaluate_policy(&policy, &bench.spec, &bench.family, task, cfg.n_eval, &mut eval_rng)?;
    points.push(CurvePoint {
        samples: 0,
        mean: zero_shot.mean,
        ci_lo: zero_shot.ci_lo,
        ci_hi: zero_shot.ci_hi,
    });
    let mut consumed = 0u64;
    for step in 0..n_grad_steps {
        let trajs = collect_real_rollouts(
            bench,
            &policy,
            task,
            cfg.rollouts_per_task,
            counter,
            &mut rng,
        )?;
        consumed += trajs.iter().map(|t| t.len() as u64).sum::<u64>();
        let g = policy_gradient(&policy, &trajs, bench.spec.discount)?;
        let alpha = if step == 0 { alphas.0 } else { alphas.1 };
        policy = ascend(&policy, &g, alpha)?;
        let eval =
            evaluate_policy(&policy, &bench.spec, &bench.family, task, cfg.n_eval, &mut eval_rng)?;
        points.push(CurvePoint {
            samples: consumed,
            mean: eval.mean,
            ci_lo: eval.ci_lo,
            ci_hi: eval.ci_hi,
        });
    }
    let curve = AdaptationCurve {
        task: task.clone(),
        points,
    };
    curve.validate()?;
    Ok((policy, curve))
}

/// First-order meta-training: per meta-iteration, each task in the
/// meta-batch is inner-adapted one step from the shared initialization, and
/// the initialization ascends the average of the post-adaptation gradients
/// (evaluated at the adapted parameters). With a zero inner step this
/// reduces to plain policy-gradient training on the task distribution.
pub fn maml_metatrain(
    bench: &TestBench,
    cfg: &MamlConfig,
    counter: &mut SampleCounter,
    metrics: &mut Vec<MetricRecord>,
) -> Result<GaussianPolicy> {
    cfg.validate()?;
    let body = bench.family.body;
    let mut theta = GaussianPolicy::new(
        body.state_dim(),
        body.action_dim(),
        &cfg.policy_hidden,
        &mut stream(cfg.seed, "maml-init", &[]),
    )?;
    let mut rng = stream(cfg.seed, "maml-meta", &[]);
    for iter in 0..cfg.meta_iters {
        let mut meta_grad = vec![0.0; theta.param_count()];
        let mut post_return = 0.0;
        for _ in 0..cfg.meta_batch {
            let task = bench.family.sample_task(&mut rng);
            let pre = collect_real_rollouts(
                bench,
                &theta,
                &task,
                cfg.rollouts_per_task,
                counter,
                &mut rng,
            )?;
            let g = policy_gradient(&theta, &pre, bench.spec.discount)?;
            let adapted = ascend(&theta, &g, cfg.alpha_first)?;
            let post = collect_real_rollouts(
                bench,
                &adapted,
                &task,
                cfg.rollouts_per_task,
                counter,
                &mut rng,
            )?;
            post_return += post.iter().map(Trajectory::undiscounted_return).sum::<f64>()
                / post.len() as f64;
            let g_post = policy_gradient(&adapted, &post, bench.spec.discount)?;
            for (m, gi) in meta_grad.iter_mut().zip(&g_post) {
                *m += gi / cfg.meta_batch as f64;
            }
        }
        theta = ascend(&theta, &meta_grad, cfg.beta)?;
        record(
            metrics,
            counter.count(),
            iter as i64,
            "maml-meta",
            "post_adaptation_return",
            post_return / cfg.meta_batch as f64,
        );
    }
    Ok(theta)
}

/// Policy that conditions on the task parameter by taking it as extra input
/// coordinates after the state.
#[derive(Debug, Clone)]
pub struct OraclePolicy {
    pub policy: GaussianPolicy,
    pub psi_dim: usize,
}

impl OraclePolicy {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        psi_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let policy = GaussianPolicy::new(state_dim + psi_dim, action_dim, hidden, rng)?;
        Ok(Self { policy, psi_dim })
    }

    pub fn action_mean(&self, state: &[f64], psi: &[f64]) -> Result<Vec<f64>> {
        self.policy.mean(&augment_state(state, psi))
    }

    /// Agent view with the task parameter pinned.
    pub fn conditioned<'a>(&'a self, psi: &'a [f64]) -> ConditionedOracle<'a> {
        ConditionedOracle { oracle: self, psi }
    }
}

pub struct ConditionedOracle<'a> {
    oracle: &'a OraclePolicy,
    psi: &'a [f64],
}

impl Agent for ConditionedOracle<'_> {
    fn raw_action<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Vec<f64> {
        self.oracle.policy.raw_action(&augment_state(state, self.psi), rng)
    }
}

fn augment_state(state: &[f64], psi: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(state.len() + psi.len());
    x.extend_from_slice(state);
    x.extend_from_slice(psi);
    x
}

/// Rewrites a trajectory so its states carry the task parameter, which lets
/// the plain trust-region machinery train the conditioned policy.
fn augment_trajectory(traj: Trajectory, psi: &[f64]) -> Trajectory {
    let transitions = traj
        .transitions
        .into_iter()
        .map(|tr| Transition {
            state: augment_state(&tr.state, psi),
            next_state: augment_state(&tr.next_state, psi),
            ..tr
        })
        .collect();
    Trajectory {
        transitions,
        raw_actions: traj.raw_actions,
        diverged: traj.diverged,
    }
}

/// Oracle training settings: trust-region updates on real rollouts with the
/// task parameter resampled every episode.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OracleConfig {
    pub samples_per_round: usize,
    pub policy_hidden: Vec<usize>,
    pub baseline_hidden: Vec<usize>,
    pub baseline_lr: f64,
    pub baseline_epochs: usize,
    pub trust_region: TrustRegionConfig,
    pub seed: u64,
}

impl OracleConfig {
    pub fn desk(seed: u64) -> Self {
        Self {
            samples_per_round: 1000,
            policy_hidden: vec![32, 32],
            baseline_hidden: vec![32, 32],
            baseline_lr: 1e-2,
            baseline_epochs: 5,
            trust_region: TrustRegionConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples_per_round == 0 {
            return Err(Error::InvalidConfig(
                "samples_per_round must be at least 1".into(),
            ));
        }
        self.trust_region.validate()
    }
}

/// Trains the oracle until `budget` real samples are consumed (rounded down
/// to whole episodes). A zero budget returns the untrained initialization.
pub fn oracle_train(
    bench: &TestBench,
    cfg: &OracleConfig,
    budget: u64,
    counter: &mut SampleCounter,
    metrics: &mut Vec<MetricRecord>,
) -> Result<OraclePolicy> {
    cfg.validate()?;
    let body = bench.family.body;
    let psi_dim = bench.family.kind.psi_dim();
    let mut oracle = OraclePolicy::new(
        body.state_dim(),
        body.action_dim(),
        psi_dim,
        &cfg.policy_hidden,
        &mut stream(cfg.seed, "oracle-init", &[]),
    )?;
    let mut baseline = ValueBaseline::new(
        body.state_dim() + psi_dim,
        &cfg.baseline_hidden,
        cfg.baseline_lr,
        &mut stream(cfg.seed, "oracle-baseline-init", &[]),
    )?;
    let mut rng = stream(cfg.seed, "oracle-train", &[]);

    let horizon = bench.spec.horizon;
    let episodes_total = budget as usize / horizon;
    let per_round = (cfg.samples_per_round / horizon).max(1);
    let mut done = 0usize;
    let mut round = 0i64;
    while done < episodes_total {
        let n_eps = per_round.min(episodes_total - done);
        let mut trajs = Vec::with_capacity(n_eps);
        let mut mean_return = 0.0;
        for _ in 0..n_eps {
            let task = bench.family.sample_task(&mut rng);
            let traj = rollout(
                &RealDynamics(&bench.spec),
                &bench.spec,
                &oracle.conditioned(&task.psi),
                &bench.family,
                &task,
                horizon,
                &InitStateSource::P0,
                &mut rng,
            )?;
            counter.add(traj.len());
            mean_return += traj.undiscounted_return() / n_eps as f64;
            trajs.push(augment_trajectory(traj, &task.psi));
        }
        let batch = assemble_batch(
            &trajs,
            &baseline,
            cfg.trust_region.discount,
            cfg.trust_region.lambda_gae,
        )?;
        trpo_step(&mut oracle.policy, &batch, &cfg.trust_region)?;
        fit_baseline(&mut baseline, &batch.states, &batch.value_targets, cfg.baseline_epochs)?;
        record(
            metrics,
            counter.count(),
            round,
            "oracle",
            "mean_return",
            mean_return,
        );
        done += n_eps;
        round += 1;
    }
    Ok(oracle)
}

//! Test-time adaptation. A trained model plus its dataset adapt a fresh
//! policy to an unseen reward: first entirely inside the model (zero real
//! samples), then optionally through further rounds of real collection and
//! virtual training. Adaptation always works on copies, so the shared
//! artifacts stay byte-identical across test tasks.

use rand::Rng;

use crate::dynmodel::{DynamicsModel, TransitionDataset};
use crate::envs::{MdpSpec, Task, TaskFamily, VariantKind};
use crate::error::{Error, Result};
use crate::seeding::stream;
use crate::trainer::{
    record, virtual_training, HyperConfig, MetricRecord, SampleCounter, TaskContext,
};
use crate::trpo::GaussianPolicy;
use crate::virtualenv::{
    collect_samples, rollout, Agent, ExploringAgent, InitStateSource, RealDynamics,
    VirtualRolloutConfig,
};

pub const N_BOOTSTRAP: usize = 1000;

/// The environment adaptation is judged against. May differ from the
/// training setup in reward family, parameter interval, or dynamics variant
/// (the distribution-shift experiments are exactly such mismatches).
#[derive(Debug, Clone)]
pub struct TestBench {
    pub family: TaskFamily,
    pub spec: MdpSpec,
    pub variant: VariantKind,
}

impl TestBench {
    pub fn new(
        family: TaskFamily,
        variant: VariantKind,
        horizon: usize,
        discount: f64,
    ) -> Result<Self> {
        let spec = MdpSpec::new(family.body, variant.build(family.body), horizon, discount)?;
        Ok(Self {
            family,
            spec,
            variant,
        })
    }
}

/// One return measurement on the adaptation curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    /// Real samples consumed by adaptation when this point was measured.
    pub samples: u64,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Return-versus-samples curve for one test task. Point 0 is the post-warm-up
/// zero-shot policy at samples = 0; sample coordinates increase strictly.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationCurve {
    pub task: Task,
    pub points: Vec<CurvePoint>,
}

impl AdaptationCurve {
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() || self.points[0].samples != 0 {
            return Err(Error::InvalidConfig(
                "adaptation curve must start with a zero-sample point".into(),
            ));
        }
        if self.points.windows(2).any(|w| w[1].samples <= w[0].samples) {
            return Err(Error::InvalidConfig(
                "adaptation curve sample coordinates must increase strictly".into(),
            ));
        }
        Ok(())
    }
}

/// Percentile-method bootstrap confidence interval of the mean: resample the
/// values with replacement `N_BOOTSTRAP` times and take the 2.5% / 97.5%
/// order statistics of the resampled means. No interpolation, so the
/// endpoints are always realizable resample means.
pub fn bootstrap_ci<R: Rng + ?Sized>(values: &[f64], rng: &mut R) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut stats = Vec::with_capacity(N_BOOTSTRAP);
    for _ in 0..N_BOOTSTRAP {
        let mut sum = 0.0;
        for _ in 0..n {
            sum += values[rng.random_range(0..n)];
        }
        stats.push(sum / n as f64);
    }
    stats.sort_by(|a, b| a.total_cmp(b));
    let lo = stats[((N_BOOTSTRAP - 1) as f64 * 0.025).floor() as usize];
    let hi = stats[((N_BOOTSTRAP - 1) as f64 * 0.975).floor() as usize];
    (lo, hi)
}

/// Real-environment evaluation summary.
#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub returns: Vec<f64>,
}

/// Evaluates an agent on the real environment with `n_eval` undiscounted
/// rollouts. Evaluation never touches the sample counter.
pub fn evaluate_policy<A: Agent, R: Rng + ?Sized>(
    agent: &A,
    spec: &MdpSpec,
    family: &TaskFamily,
    task: &Task,
    n_eval: usize,
    rng: &mut R,
) -> Result<EvalSummary> {
    if n_eval < 2 {
        return Err(Error::InvalidConfig("n_eval must be at least 2".into()));
    }
    let mut returns = Vec::with_capacity(n_eval);
    for _ in 0..n_eval {
        let traj = rollout(
            &RealDynamics(spec),
            spec,
            agent,
            family,
            task,
            spec.horizon,
            &InitStateSource::P0,
            rng,
        )?;
        returns.push(traj.undiscounted_return());
    }
    let mean = returns.iter().sum::<f64>() / n_eval as f64;
    let (ci_lo, ci_hi) = bootstrap_ci(&returns, rng);
    Ok(EvalSummary {
        mean,
        ci_lo,
        ci_hi,
        returns,
    })
}

/// Adaptation result: the adapted policy and its return curve.
pub struct AdaptOutcome {
    pub policy: GaussianPolicy,
    pub curve: AdaptationCurve,
}

/// Adapts to one test task from shared artifacts: a fresh policy is warmed
/// up against a copy of the model using only stored data (curve point 0,
/// zero real samples), then `n_slbo` rounds of real collection plus virtual
/// training follow, each adding one curve point at k * n_collect samples.
///
/// Collection rounds refit the model copy on the new task's own transitions
/// only. Mixing them into the stored corpus would let the old tasks outvote
/// the new one whenever the test dynamics disagree with training (a crippled
/// actuator, say), and the model would never track the change.
#[allow(clippy::too_many_arguments)]
pub fn adapt_ours(
    model0: &DynamicsModel,
    data0: &TransitionDataset,
    bench: &TestBench,
    task: &Task,
    cfg: &HyperConfig,
    n_warmup: usize,
    n_slbo: usize,
    task_key: u64,
    counter: &mut SampleCounter,
    metrics: &mut Vec<MetricRecord>,
) -> Result<AdaptOutcome> {
    if data0.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.validate()?;
    let (family, spec) = (&bench.family, &bench.spec);
    let mut model = model0.clone();
    let data = data0.clone();
    let mut local = TransitionDataset::new(spec.body.state_dim(), spec.body.action_dim());
    let mut policy = GaussianPolicy::new(
        spec.body.state_dim(),
        spec.body.action_dim(),
        &cfg.policy_hidden,
        &mut stream(cfg.seed, "adapt-policy-init", &[task_key]),
    )?;
    let mut baseline = crate::trpo::ValueBaseline::new(
        spec.body.state_dim(),
        &cfg.baseline_hidden,
        cfg.baseline_lr,
        &mut stream(cfg.seed, "adapt-baseline-init", &[task_key]),
    )?;
    let mut rng = stream(cfg.seed, "adapt-work", &[task_key]);
    let ctx = TaskContext { family, spec, task };
    let label = task_key as i64;

    if n_warmup > 0 {
        virtual_training(
            &mut policy,
            &mut baseline,
            &mut model,
            &data,
            n_warmup,
            cfg,
            &ctx,
            metrics,
            "adapt-warmup",
            label,
            counter.count(),
            &mut rng,
        )?;
    }

    let mut eval_rng = stream(cfg.seed, "adapt-eval", &[task_key]);
    let mut points = Vec::with_capacity(n_slbo + 1);
    let mut consumed = 0u64;
    let zero_shot = evaluate_policy(&policy, spec, family, task, cfg.n_eval, &mut eval_rng)?;
    record(metrics, counter.count(), label, "adapt", "real_return", zero_shot.mean);
    points.push(CurvePoint {
        samples: 0,
        mean: zero_shot.mean,
        ci_lo: zero_shot.ci_lo,
        ci_hi: zero_shot.ci_hi,
    });

    for _ in 0..n_slbo {
        let rollout_cfg =
            VirtualRolloutConfig::new(cfg.horizon, cfg.n_collect, InitStateSource::P0)?;
        let explorer = ExploringAgent {
            inner: &policy,
            noise_std: cfg.explore_noise,
        };
        let trajs = collect_samples(
            &RealDynamics(spec),
            spec,
            &explorer,
            family,
            task,
            &rollout_cfg,
            &mut rng,
        )?;
        let collected: usize = trajs.iter().map(|t| t.len()).sum();
        counter.add(collected);
        consumed += collected as u64;
        for traj in &trajs {
            local.append_segment(traj.transitions.clone(), task_key, bench.variant.id())?;
        }
        virtual_training(
            &mut policy,
            &mut baseline,
            &mut model,
            &local,
            cfg.n_inner,
            cfg,
            &ctx,
            metrics,
            "adapt-slbo",
            label,
            counter.count(),
            &mut rng,
        )?;
        let eval = evaluate_policy(&policy, spec, family, task, cfg.n_eval, &mut eval_rng)?;
        record(metrics, counter.count(), label, "adapt", "real_return", eval.mean);
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
    Ok(AdaptOutcome { policy, curve })
}

/// Pointwise aggregate of per-task curves. The across-task CI comes from a
/// bootstrap over tasks; per-task means are sorted first so the interval
/// depends only on the multiset of curves, not their order. A single curve
/// aggregates to itself.
pub fn aggregate_curves(curves: &[AdaptationCurve], seed: u64) -> Result<Vec<CurvePoint>> {
    if curves.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let coords: Vec<u64> = curves[0].points.iter().map(|p| p.samples).collect();
    for c in curves {
        let got: Vec<u64> = c.points.iter().map(|p| p.samples).collect();
        if got != coords {
            return Err(Error::InvalidConfig(
                "curves must share sample coordinates to aggregate".into(),
            ));
        }
    }
    if curves.len() == 1 {
        return Ok(curves[0].points.clone());
    }
    let mut out = Vec::with_capacity(coords.len());
    for (i, &samples) in coords.iter().enumerate() {
        let mut means: Vec<f64> = curves.iter().map(|c| c.points[i].mean).collect();
        means.sort_by(|a, b| a.total_cmp(b));
        let mean = means.iter().sum::<f64>() / means.len() as f64;
        let mut rng = stream(seed, "aggregate-bootstrap", &[i as u64]);
        let (ci_lo, ci_hi) = bootstrap_ci(&means, &mut rng);
        out.push(CurvePoint {
            samples,
            mean,
            ci_lo,
            ci_hi,
        });
    }
    Ok(out)
}

/// Full test-suite result: one curve per sampled test task plus the
/// pointwise aggregate.
pub struct SuiteResult {
    pub curves: Vec<AdaptationCurve>,
    pub aggregate: Vec<CurvePoint>,
}

/// Samples `n_test` tasks from the bench's family, adapts to each
/// independently from the same immutable artifacts, and aggregates the
/// curves.
#[allow(clippy::too_many_arguments)]
pub fn run_test_suite(
    model0: &DynamicsModel,
    data0: &TransitionDataset,
    bench: &TestBench,
    n_test: usize,
    n_warmup: usize,
    n_slbo: usize,
    cfg: &HyperConfig,
    counter: &mut SampleCounter,
    metrics: &mut Vec<MetricRecord>,
) -> Result<SuiteResult> {
    if n_test == 0 {
        return Err(Error::InvalidConfig("n_test must be at least 1".into()));
    }
    let mut curves = Vec::with_capacity(n_test);
    for i in 0..n_test {
        let task = bench
            .family
            .sample_task(&mut stream(cfg.seed, "test-task", &[i as u64]));
        let outcome = adapt_ours(
            model0, data0, bench, &task, cfg, n_warmup, n_slbo, i as u64, counter, metrics,
        )?;
        curves.push(outcome.curve);
    }
    let aggregate = aggregate_curves(&curves, cfg.seed)?;
    Ok(SuiteResult { curves, aggregate })
}

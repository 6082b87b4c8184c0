//! The sequential multi-task training loop. One dynamics model and one
//! growing dataset persist across tasks; each task gets a fresh policy that
//! is warmed up entirely inside the model (no real samples), then refined by
//! alternating real collection, model refitting, and virtual policy
//! optimization. Every real environment step passes through one counter.

use rand_chacha::ChaCha8Rng;

use crate::dynmodel::{train_model, DynamicsModel, TransitionDataset};
use crate::envs::{Body, MdpSpec, Task, TaskFamily, VariantKind};
use crate::error::{Error, Result};
use crate::ndmath::AdamConfig;
use crate::seeding::stream;
use crate::trpo::{
    assemble_batch, fit_baseline, trpo_step, GaussianPolicy, TrustRegionConfig, ValueBaseline,
};
use crate::virtualenv::{
    collect_samples, estimate_return, ExploringAgent, InitStateSource, ModelDynamics, RealDynamics,
    VirtualRolloutConfig,
};

/// All run hyperparameters. `desk` is the default small-scale profile;
/// `paper` mirrors the large-scale settings.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HyperConfig {
    pub n_tasks: usize,
    pub n_warmup: usize,
    pub n_slbo: usize,
    pub n_collect: usize,
    pub n_inner: usize,
    pub n_model: usize,
    pub n_policy: usize,
    pub n_trpo: usize,
    pub horizon: usize,
    pub k: usize,
    pub model_batch: usize,
    pub model_hidden: Vec<usize>,
    pub policy_hidden: Vec<usize>,
    pub baseline_hidden: Vec<usize>,
    pub model_lr: f64,
    pub baseline_lr: f64,
    pub baseline_epochs: usize,
    pub n_eval: usize,
    /// Std of the Gaussian noise added to raw actions when collecting real
    /// transitions for the dataset. Keeps the collected actions diverse even
    /// after the policy has converged to a near-deterministic optimum, so
    /// the model refit can still identify actuator effects.
    pub explore_noise: f64,
    pub trust_region: TrustRegionConfig,
    pub seed: u64,
}

impl HyperConfig {
    pub fn desk(seed: u64) -> Self {
        Self {
            n_tasks: 30,
            n_warmup: 40,
            n_slbo: 1,
            n_collect: 1000,
            n_inner: 4,
            n_model: 100,
            n_policy: 20,
            n_trpo: 1000,
            horizon: 50,
            k: 2,
            model_batch: 128,
            model_hidden: vec![64, 64],
            policy_hidden: vec![32, 32],
            baseline_hidden: vec![32, 32],
            model_lr: 1e-3,
            baseline_lr: 1e-2,
            baseline_epochs: 5,
            n_eval: 10,
            explore_noise: 0.3,
            trust_region: TrustRegionConfig::default(),
            seed,
        }
    }

    pub fn paper(seed: u64) -> Self {
        Self {
            n_tasks: 100,
            n_collect: 4000,
            n_trpo: 4000,
            horizon: 200,
            n_policy: 40,
            model_hidden: vec![500, 500],
            ..Self::desk(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_tasks", self.n_tasks),
            ("n_warmup", self.n_warmup),
            ("n_collect", self.n_collect),
            ("n_inner", self.n_inner),
            ("n_model", self.n_model),
            ("n_policy", self.n_policy),
            ("n_trpo", self.n_trpo),
            ("horizon", self.horizon),
            ("k", self.k),
            ("model_batch", self.model_batch),
            ("n_eval", self.n_eval),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if self.n_trpo < self.horizon {
            return Err(Error::InvalidConfig(
                "n_trpo must be at least one horizon of samples".into(),
            ));
        }
        if !self.n_collect.is_multiple_of(self.horizon) {
            return Err(Error::InvalidConfig(
                "n_collect must be a whole number of episodes (divisible by horizon), \
                 so the sample budget is exact"
                    .into(),
            ));
        }
        if self.k >= self.horizon {
            return Err(Error::InvalidConfig("k must be smaller than the horizon".into()));
        }
        if !self.explore_noise.is_finite() || self.explore_noise < 0.0 {
            return Err(Error::InvalidConfig(
                "explore_noise must be finite and non-negative".into(),
            ));
        }
        self.trust_region.validate()
    }

    pub fn model_adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.model_lr,
            ..AdamConfig::default()
        }
    }
}

/// Counts real environment transitions. Incremented only where real steps
/// are taken; evaluation helpers never see it, so they cannot count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SampleCounter(u64);

impl SampleCounter {
    pub fn add(&mut self, n: usize) {
        self.0 += n as u64;
    }

    pub fn count(&self) -> u64 {
        self.0
    }

    /// Rebuilds a persisted counter. Only run-state restoration calls this;
    /// everything else goes through `add` at a real collection site.
    pub fn restored(count: u64) -> Self {
        Self(count)
    }
}

/// One named scalar observation, tagged with the sample count and task it
/// was recorded under.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub samples: u64,
    pub task: i64,
    pub phase: String,
    pub name: String,
    pub value: f64,
}

pub fn record(
    metrics: &mut Vec<MetricRecord>,
    samples: u64,
    task: i64,
    phase: &str,
    name: &str,
    value: f64,
) {
    metrics.push(MetricRecord {
        samples,
        task,
        phase: phase.to_string(),
        name: name.to_string(),
        value,
    });
}

/// Environment plus task bundle threaded through training calls.
pub struct TaskContext<'a> {
    pub family: &'a TaskFamily,
    pub spec: &'a MdpSpec,
    pub task: &'a Task,
}

/// Alternates model fitting and virtual policy optimization for `n_inner`
/// rounds: each round refits the model on the (fixed) dataset, then runs
/// `n_policy` trust-region updates on freshly collected virtual samples.
/// Touches no real environment. Returns the model snapshot taken at the end
/// of every round (used for disagreement-based task rating).
#[allow(clippy::too_many_arguments)]
pub fn virtual_training(
    policy: &mut GaussianPolicy,
    baseline: &mut ValueBaseline,
    model: &mut DynamicsModel,
    data: &TransitionDataset,
    n_inner: usize,
    cfg: &HyperConfig,
    ctx: &TaskContext,
    metrics: &mut Vec<MetricRecord>,
    phase: &str,
    task_label: i64,
    samples_now: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<DynamicsModel>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut snapshots = Vec::with_capacity(n_inner);
    for inner in 0..n_inner {
        let trace = train_model(model, data, cfg.n_model, cfg.k, cfg.model_batch, rng)?;
        let mean_loss = trace.iter().sum::<f64>() / trace.len().max(1) as f64;

        let rollout_cfg =
            VirtualRolloutConfig::new(cfg.horizon, cfg.n_trpo, InitStateSource::P0)?;
        let mut kl_sum = 0.0;
        let mut surr_sum = 0.0;
        let mut accepted = 0usize;
        for _ in 0..cfg.n_policy {
            let trajs = collect_samples(
                &ModelDynamics(model),
                ctx.spec,
                policy,
                ctx.family,
                ctx.task,
                &rollout_cfg,
                rng,
            )?;
            let batch = assemble_batch(
                &trajs,
                baseline,
                cfg.trust_region.discount,
                cfg.trust_region.lambda_gae,
            )?;
            let diag = trpo_step(policy, &batch, &cfg.trust_region)?;
            fit_baseline(baseline, &batch.states, &batch.value_targets, cfg.baseline_epochs)?;
            kl_sum += diag.kl;
            surr_sum += diag.surrogate_change;
            accepted += diag.accepted as usize;
        }

        let est = estimate_return(
            &ModelDynamics(model),
            ctx.spec,
            policy,
            ctx.family,
            ctx.task,
            cfg.horizon,
            cfg.n_eval,
            &InitStateSource::P0,
            rng,
        )?;
        let npol = cfg.n_policy as f64;
        record(metrics, samples_now, task_label, phase, "model_loss", mean_loss);
        record(metrics, samples_now, task_label, phase, "virtual_return", est.mean);
        record(metrics, samples_now, task_label, phase, "virtual_return_stderr", est.stderr);
        record(metrics, samples_now, task_label, phase, "trpo_kl", kl_sum / npol);
        record(metrics, samples_now, task_label, phase, "trpo_surrogate_change", surr_sum / npol);
        record(
            metrics,
            samples_now,
            task_label,
            phase,
            "trpo_accept_rate",
            accepted as f64 / npol,
        );
        record(metrics, samples_now, task_label, phase, "inner_iteration", inner as f64);
        snapshots.push(model.clone());
    }
    Ok(snapshots)
}

/// Mutable run state shared by plain sequential training and active task
/// selection, which both drive `run_task`.
pub struct TrainState {
    pub cfg: HyperConfig,
    pub family: TaskFamily,
    pub spec: MdpSpec,
    pub variant_kind: VariantKind,
    pub model: DynamicsModel,
    pub data: TransitionDataset,
    pub counter: SampleCounter,
    pub metrics: Vec<MetricRecord>,
    /// Model snapshots from the most recent virtual-training call.
    pub snapshots: Vec<DynamicsModel>,
    pub completed_tasks: usize,
    pub aborted_tasks: Vec<usize>,
}

/// Per-task outcome summary.
#[derive(Debug, Clone)]
pub struct TaskReport {
    pub task: Task,
    pub aborted: bool,
    pub samples_after: u64,
}

impl TrainState {
    pub fn new(cfg: HyperConfig, family: TaskFamily, variant_kind: VariantKind) -> Result<Self> {
        cfg.validate()?;
        let body: Body = family.body;
        let spec = MdpSpec::new(
            body,
            variant_kind.build(body),
            cfg.horizon,
            cfg.trust_region.discount,
        )?;
        let mut init_rng = stream(cfg.seed, "model-init", &[]);
        let model = DynamicsModel::new(
            body.state_dim(),
            body.action_dim(),
            &cfg.model_hidden,
            cfg.model_adam(),
            &mut init_rng,
        )?;
        let data = TransitionDataset::new(body.state_dim(), body.action_dim());
        Ok(Self {
            cfg,
            family,
            spec,
            variant_kind,
            model,
            data,
            counter: SampleCounter::default(),
            metrics: Vec::new(),
            snapshots: Vec::new(),
            completed_tasks: 0,
            aborted_tasks: Vec::new(),
        })
    }

    /// Fresh policy/baseline pair for a task, keyed by the candidate index
    /// so initialization is reproducible even when candidates are skipped.
    pub fn fresh_policy(&self, task_key: u64) -> Result<(GaussianPolicy, ValueBaseline)> {
        let body = self.family.body;
        let policy = GaussianPolicy::new(
            body.state_dim(),
            body.action_dim(),
            &self.cfg.policy_hidden,
            &mut stream(self.cfg.seed, "policy-init", &[task_key]),
        )?;
        let baseline = ValueBaseline::new(
            body.state_dim(),
            &self.cfg.baseline_hidden,
            self.cfg.baseline_lr,
            &mut stream(self.cfg.seed, "baseline-init", &[task_key]),
        )?;
        Ok((policy, baseline))
    }

    /// Executes one task: warm-up inside the model (skipped while the
    /// dataset is empty, i.e. on the first task), then `n_slbo` rounds of
    /// real collection plus virtual training. The task's policy is dropped
    /// at the end; only the model, dataset, and counter persist.
    pub fn run_task(
        &mut self,
        task: &Task,
        task_key: u64,
        out_dir: Option<&std::path::Path>,
    ) -> Result<TaskReport> {
        let label = self.completed_tasks as i64;
        let (mut policy, mut baseline) = self.fresh_policy(task_key)?;
        let mut rng = stream(self.cfg.seed, "task-work", &[task_key]);
        let outcome = self
            .warm_up_policy(task, &mut policy, &mut baseline, label, &mut rng)
            .and_then(|_| self.slbo_rounds(task, &mut policy, &mut baseline, label, &mut rng));
        self.finish_task(task, outcome, out_dir)
    }

    /// Books a finished (or aborted) task: a non-finite failure is logged
    /// and absorbed, anything else propagates. Checkpoints the model and
    /// dataset at the boundary.
    pub fn finish_task(
        &mut self,
        task: &Task,
        outcome: Result<()>,
        out_dir: Option<&std::path::Path>,
    ) -> Result<TaskReport> {
        let label = self.completed_tasks as i64;
        let aborted = match outcome {
            Ok(()) => false,
            Err(Error::NonFinite { context }) => {
                record(
                    &mut self.metrics,
                    self.counter.count(),
                    label,
                    "task",
                    "aborted",
                    1.0,
                );
                eprintln!("task {label} aborted ({context}); continuing");
                self.aborted_tasks.push(self.completed_tasks);
                true
            }
            Err(e) => return Err(e),
        };
        self.completed_tasks += 1;
        if let Some(dir) = out_dir {
            let idx = self.completed_tasks - 1;
            self.model.save(&dir.join(format!("model-task{idx:03}.bin")))?;
            if !self.data.is_empty() {
                self.data.save(&dir.join(format!("dataset-task{idx:03}.bin")))?;
            }
        }
        Ok(TaskReport {
            task: task.clone(),
            aborted,
            samples_after: self.counter.count(),
        })
    }

    /// Warm-up: virtual only, no counter movement. The dataset is empty
    /// exactly on the first task, which therefore skips warm-up.
    pub fn warm_up_policy(
        &mut self,
        task: &Task,
        policy: &mut GaussianPolicy,
        baseline: &mut ValueBaseline,
        label: i64,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        if self.data.is_empty() || self.cfg.n_warmup == 0 {
            return Ok(());
        }
        let ctx = TaskContext {
            family: &self.family,
            spec: &self.spec,
            task,
        };
        let snaps = virtual_training(
            policy,
            baseline,
            &mut self.model,
            &self.data,
            self.cfg.n_warmup,
            &self.cfg,
            &ctx,
            &mut self.metrics,
            "warmup",
            label,
            self.counter.count(),
            rng,
        )?;
        self.snapshots = snaps;
        Ok(())
    }

    /// The real-data part of one task: `n_slbo` rounds of collecting
    /// `n_collect` real transitions with the current policy, each followed
    /// by virtual training on the grown dataset.
    pub fn slbo_rounds(
        &mut self,
        task: &Task,
        policy: &mut GaussianPolicy,
        baseline: &mut ValueBaseline,
        label: i64,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let ctx = TaskContext {
            family: &self.family,
            spec: &self.spec,
            task,
        };
        for _ in 0..self.cfg.n_slbo {
            let rollout_cfg = VirtualRolloutConfig::new(
                self.cfg.horizon,
                self.cfg.n_collect,
                InitStateSource::P0,
            )?;
            let explorer = ExploringAgent {
                inner: policy,
                noise_std: self.cfg.explore_noise,
            };
            let trajs = collect_samples(
                &RealDynamics(&self.spec),
                &self.spec,
                &explorer,
                &self.family,
                task,
                &rollout_cfg,
                rng,
            )?;
            let collected: usize = trajs.iter().map(|t| t.len()).sum();
            self.counter.add(collected);
            for traj in &trajs {
                self.data.append_segment(
                    traj.transitions.clone(),
                    label as u64,
                    self.variant_kind.id(),
                )?;
            }
            record(
                &mut self.metrics,
                self.counter.count(),
                label,
                "collect",
                "real_samples",
                collected as f64,
            );
            let snaps = virtual_training(
                policy,
                baseline,
                &mut self.model,
                &self.data,
                self.cfg.n_inner,
                &self.cfg,
                &ctx,
                &mut self.metrics,
                "slbo",
                label,
                self.counter.count(),
                rng,
            )?;
            self.snapshots = snaps;
        }
        Ok(())
    }
}

/// Final artifacts of a training run.
pub struct TrainingArtifacts {
    pub model: DynamicsModel,
    pub dataset: TransitionDataset,
    pub metrics: Vec<MetricRecord>,
    pub samples: u64,
    pub tasks: Vec<TaskReport>,
}

/// Observer invoked after every task boundary (checkpoint already written);
/// callers use it to flush metrics and persist run state incrementally.
pub type BoundaryHook<'a> = &'a mut dyn FnMut(&mut TrainState) -> Result<()>;

/// Runs tasks `state.completed_tasks .. cfg.n_tasks`, sampling each task
/// from the substream keyed by its index, so a restored state continues
/// exactly where a straight run would be.
pub fn run_remaining_tasks(
    state: &mut TrainState,
    out_dir: Option<&std::path::Path>,
    mut hook: Option<BoundaryHook>,
) -> Result<Vec<TaskReport>> {
    let seed = state.cfg.seed;
    let mut reports = Vec::new();
    while state.completed_tasks < state.cfg.n_tasks {
        let idx = state.completed_tasks as u64;
        let task = state
            .family
            .sample_task(&mut stream(seed, "task-sample", &[idx]));
        record(
            &mut state.metrics,
            state.counter.count(),
            idx as i64,
            "task",
            "psi_0",
            task.psi[0],
        );
        let report = state.run_task(&task, idx, out_dir)?;
        reports.push(report);
        if let Some(h) = hook.as_mut() {
            h(state)?;
        }
    }
    Ok(reports)
}

/// Plain sequential training over `cfg.n_tasks` tasks sampled from the
/// family. Checkpoints land in `out_dir` at every task boundary when given.
pub fn train_sequential(
    cfg: HyperConfig,
    family: TaskFamily,
    variant_kind: VariantKind,
    out_dir: Option<&std::path::Path>,
) -> Result<TrainingArtifacts> {
    let mut state = TrainState::new(cfg, family, variant_kind)?;
    let reports = run_remaining_tasks(&mut state, out_dir, None)?;
    Ok(TrainingArtifacts {
        model: state.model,
        dataset: state.data,
        metrics: state.metrics,
        samples: state.counter.count(),
        tasks: reports,
    })
}

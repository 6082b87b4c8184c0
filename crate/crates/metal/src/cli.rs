//! Experiment runner: TOML config resolution against named presets, the
//! four run modes (train, adapt, baseline, active), resumable training,
//! and on-disk artifacts (checkpoints, metrics CSV, curve CSVs, a frozen
//! copy of the resolved config).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::active::{train_active_with, ActiveConfig, RatingMethod, RatingWindow};
use crate::adapt::{
    aggregate_curves, evaluate_policy, run_test_suite, AdaptationCurve, CurvePoint, TestBench,
};
use crate::baselines::{maml_adapt, maml_metatrain, oracle_train, MamlConfig, OracleConfig};
use crate::dynmodel::{DynamicsModel, TransitionDataset};
use crate::envs::{Body, FamilyKind, TaskFamily, VariantKind};
use crate::error::{Error, Result};
use crate::fsutil::atomic_write;
use crate::seeding::stream;
use crate::trainer::{
    run_remaining_tasks, HyperConfig, MetricRecord, SampleCounter, TrainState,
};

pub const RUN_STATE_MAGIC: &[u8; 8] = b"METALRS1";
const METRICS_HEADER: &str = "wall_clock_s,samples,task,phase,name,value\n";
const CURVE_HEADER: &str = "task_id,psi,samples,mean_return,ci_lo,ci_hi,method\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Train,
    Adapt,
    Baseline,
    Active,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Small-scale profile: minutes on one core.
    Desk,
    /// Large-scale profile matching the published hyperparameters.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMethod {
    Maml,
    Oracle,
}

#[derive(clap::Parser)]
#[command(name = "metal", version, about = "Sequential multi-task model-based RL")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(clap::Subcommand)]
pub enum Command {
    /// Train the shared dynamics model across a task sequence
    Train(RunArgs),
    /// Adapt to held-out tasks from a train run's artifacts
    Adapt(RunArgs),
    /// Run a comparison baseline (maml or oracle, per config)
    Baseline(RunArgs),
    /// Train with difficulty-rated task skipping
    Active(RunArgs),
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// TOML experiment config
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for all artifacts
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config preset
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Train-run directory supplying the model and dataset (adapt mode)
    #[arg(long)]
    pub from: Option<PathBuf>,
    /// Continue a train run from its last task boundary
    #[arg(long)]
    pub resume: bool,
}

/// Task-family settings as they appear in configs.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FamilyConfig {
    pub body: Body,
    pub kind: FamilyKind,
    pub psi_lo: Vec<f64>,
    pub psi_hi: Vec<f64>,
}

impl FamilyConfig {
    pub fn build(&self) -> Result<TaskFamily> {
        TaskFamily::new(self.body, self.kind, self.psi_lo.clone(), self.psi_hi.clone())
    }
}

// ---- raw (on-disk) config: every field optional, unknown keys rejected ----

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub n_test: Option<usize>,
    pub from: Option<PathBuf>,
    pub rollout_threads: Option<usize>,
    pub baseline: Option<BaselineMethod>,
    pub family: Option<RawFamily>,
    pub variant: Option<RawVariant>,
    pub hyper: Option<RawHyper>,
    pub maml: Option<RawMaml>,
    pub oracle: Option<RawOracle>,
    pub active: Option<RawActive>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawFamily {
    pub body: Option<Body>,
    pub kind: Option<FamilyKind>,
    pub psi_lo: Option<Vec<f64>>,
    pub psi_hi: Option<Vec<f64>>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawVariant {
    pub kind: Option<VariantKind>,
}

// Deliberately no `seed` key in any sub-table: every stream derives from
// the single top-level seed.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawHyper {
    pub n_tasks: Option<usize>,
    pub n_warmup: Option<usize>,
    pub n_slbo: Option<usize>,
    pub n_collect: Option<usize>,
    pub n_inner: Option<usize>,
    pub n_model: Option<usize>,
    pub n_policy: Option<usize>,
    pub n_trpo: Option<usize>,
    pub horizon: Option<usize>,
    pub k: Option<usize>,
    pub model_batch: Option<usize>,
    pub model_hidden: Option<Vec<usize>>,
    pub policy_hidden: Option<Vec<usize>>,
    pub baseline_hidden: Option<Vec<usize>>,
    pub model_lr: Option<f64>,
    pub baseline_lr: Option<f64>,
    pub baseline_epochs: Option<usize>,
    pub n_eval: Option<usize>,
    pub explore_noise: Option<f64>,
    pub trust_region: Option<RawTrust>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTrust {
    pub max_kl: Option<f64>,
    pub cg_iters: Option<usize>,
    pub cg_damping: Option<f64>,
    pub backtrack_coef: Option<f64>,
    pub backtrack_steps: Option<usize>,
    pub lambda_gae: Option<f64>,
    pub discount: Option<f64>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMaml {
    pub alpha_first: Option<f64>,
    pub alpha_rest: Option<f64>,
    pub beta: Option<f64>,
    pub meta_iters: Option<usize>,
    pub meta_batch: Option<usize>,
    pub rollouts_per_task: Option<usize>,
    pub policy_hidden: Option<Vec<usize>>,
    pub n_eval: Option<usize>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawOracle {
    pub samples_per_round: Option<usize>,
    pub policy_hidden: Option<Vec<usize>>,
    pub baseline_hidden: Option<Vec<usize>>,
    pub baseline_lr: Option<f64>,
    pub baseline_epochs: Option<usize>,
    pub budget: Option<u64>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawActive {
    pub method: Option<RatingMethod>,
    pub q: Option<f64>,
    pub warm_start: Option<usize>,
    pub window: Option<RatingWindow>,
    pub n_rating_rollouts: Option<usize>,
    pub max_candidates: Option<u64>,
}

/// Fully resolved run description; a frozen copy is written beside the
/// outputs so every artifact directory is self-describing.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub preset: Preset,
    pub seed: u64,
    pub n_test: usize,
    pub rollout_threads: usize,
    pub oracle_budget: u64,
    pub baseline: BaselineMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub from: Option<PathBuf>,
    pub out: PathBuf,
    pub variant: VariantKind,
    pub family: FamilyConfig,
    pub hyper: HyperConfig,
    pub maml: MamlConfig,
    pub oracle: OracleConfig,
    pub active: ActiveConfig,
}

pub fn load_config(path: &Path) -> Result<RawConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

macro_rules! overlay {
    ($dst:expr, $src:expr, { $($f:ident),* $(,)? }) => {
        $( if let Some(v) = $src.$f { $dst.$f = v; } )*
    };
}

/// Resolves a raw config against its preset; command-line seed and preset
/// win over the file. Validates everything before any work happens.
pub fn resolve(mode: Mode, raw: RawConfig, args: &RunArgs) -> Result<ExperimentConfig> {
    let preset = args.preset.or(raw.preset).unwrap_or(Preset::Desk);
    let seed = args.seed.or(raw.seed).unwrap_or(0);

    let mut hyper = match preset {
        Preset::Desk => HyperConfig::desk(seed),
        Preset::Paper => HyperConfig::paper(seed),
    };
    if let Some(rh) = raw.hyper {
        if let Some(rt) = rh.trust_region {
            overlay!(hyper.trust_region, rt, {
                max_kl, cg_iters, cg_damping, backtrack_coef, backtrack_steps, lambda_gae,
                discount,
            });
        }
        overlay!(hyper, rh, {
            n_tasks, n_warmup, n_slbo, n_collect, n_inner, n_model, n_policy, n_trpo, horizon,
            k, model_batch, model_hidden, policy_hidden, baseline_hidden, model_lr, baseline_lr,
            baseline_epochs, n_eval,
        });
    }

    let mut maml = MamlConfig::desk(seed);
    if let Some(rm) = raw.maml {
        overlay!(maml, rm, {
            alpha_first, alpha_rest, beta, meta_iters, meta_batch, rollouts_per_task,
            policy_hidden, n_eval,
        });
    }

    let mut oracle = OracleConfig::desk(seed);
    // One trust-region configuration per run.
    oracle.trust_region = hyper.trust_region;
    let mut oracle_budget = (hyper.n_tasks * hyper.n_slbo * hyper.n_collect) as u64;
    if let Some(ro) = raw.oracle {
        if let Some(b) = ro.budget {
            oracle_budget = b;
        }
        overlay!(oracle, ro, {
            samples_per_round, policy_hidden, baseline_hidden, baseline_lr, baseline_epochs,
        });
    }

    let mut active = ActiveConfig::desk(RatingMethod::EstimatedGap, hyper.n_tasks);
    if let Some(ra) = raw.active {
        overlay!(active, ra, { method, q, warm_start, window, n_rating_rollouts, max_candidates });
    }

    let mut family = FamilyConfig {
        body: Body::PointMass,
        kind: FamilyKind::GoalVelocity1d,
        psi_lo: vec![0.0],
        psi_hi: vec![2.0],
    };
    if let Some(rf) = raw.family {
        overlay!(family, rf, { body, kind, psi_lo, psi_hi });
    }

    let cfg = ExperimentConfig {
        mode,
        preset,
        seed,
        n_test: raw.n_test.unwrap_or(10),
        rollout_threads: raw.rollout_threads.unwrap_or(1),
        oracle_budget,
        baseline: raw.baseline.unwrap_or(BaselineMethod::Maml),
        from: args.from.clone().or(raw.from),
        out: args.out.clone(),
        variant: raw.variant.and_then(|v| v.kind).unwrap_or(VariantKind::Nominal),
        family,
        hyper,
        maml,
        oracle,
        active,
    };
    validate_experiment(&cfg)?;
    Ok(cfg)
}

fn validate_experiment(cfg: &ExperimentConfig) -> Result<()> {
    cfg.family.build()?;
    cfg.hyper.validate()?;
    cfg.maml.validate()?;
    cfg.oracle.validate()?;
    cfg.active.validate()?;
    if cfg.n_test == 0 {
        return Err(Error::InvalidConfig("n_test must be at least 1".into()));
    }
    if cfg.rollout_threads != 1 {
        return Err(Error::InvalidConfig(
            "rollout_threads must be 1: rollouts are generated sequentially so runs replay \
             exactly"
                .into(),
        ));
    }
    match cfg.mode {
        Mode::Adapt => {
            if cfg.from.is_none() {
                return Err(Error::InvalidConfig(
                    "adapt needs a train run to start from: pass --from or set `from` in the \
                     config"
                        .into(),
                ));
            }
        }
        Mode::Baseline => {
            if cfg.baseline == BaselineMethod::Maml
                && cfg.maml.rollouts_per_task * cfg.hyper.horizon != cfg.hyper.n_collect
            {
                return Err(Error::InvalidConfig(format!(
                    "one adaptation step must collect exactly n_collect samples so methods share \
                     the sample axis: rollouts_per_task * horizon = {} but n_collect = {}",
                    cfg.maml.rollouts_per_task * cfg.hyper.horizon,
                    cfg.hyper.n_collect
                )));
            }
        }
        Mode::Train | Mode::Active => {}
    }
    Ok(())
}

fn freeze_config(cfg: &ExperimentConfig) -> Result<()> {
    let text = toml::to_string_pretty(cfg)
        .map_err(|e| Error::Format(format!("cannot serialize resolved config: {e}")))?;
    atomic_write(&cfg.out.join("config.toml"), text.as_bytes())
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Fingerprint of everything a resumed run must share with the stored one.
/// `n_tasks` is deliberately excluded: raising it is the supported way to
/// extend a finished run.
pub fn training_digest(cfg: &ExperimentConfig) -> u64 {
    #[derive(serde::Serialize)]
    struct View<'a> {
        seed: u64,
        variant: VariantKind,
        family: &'a FamilyConfig,
        hyper: HyperConfig,
    }
    let mut hyper = cfg.hyper.clone();
    hyper.n_tasks = 0;
    let text = toml::to_string(&View {
        seed: cfg.seed,
        variant: cfg.variant,
        family: &cfg.family,
        hyper,
    })
    .expect("digest view serializes");
    fnv1a(text.as_bytes())
}

/// Where a training run stands, persisted at every task boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub config_digest: u64,
    pub completed: u64,
    pub samples: u64,
    pub aborted: Vec<u64>,
}

impl RunState {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(40 + 8 * self.aborted.len());
        buf.extend_from_slice(RUN_STATE_MAGIC);
        for v in [
            self.config_digest,
            self.completed,
            self.samples,
            self.aborted.len() as u64,
        ] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for a in &self.aborted {
            buf.extend_from_slice(&a.to_le_bytes());
        }
        atomic_write(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        if bytes.len() < 40 {
            return Err(Error::Format("run-state file truncated".into()));
        }
        if &bytes[..8] != RUN_STATE_MAGIC {
            return Err(Error::Format(format!(
                "bad run-state magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..8]),
                String::from_utf8_lossy(RUN_STATE_MAGIC)
            )));
        }
        let u = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap());
        let (config_digest, completed, samples, n_aborted) = (u(0), u(1), u(2), u(3));
        if bytes.len() != 40 + 8 * n_aborted as usize {
            return Err(Error::Format("run-state length mismatch".into()));
        }
        let aborted = (0..n_aborted as usize).map(|i| u(4 + i)).collect();
        Ok(Self {
            config_digest,
            completed,
            samples,
            aborted,
        })
    }
}

/// Append-only metrics CSV. `drain` writes rows not yet written and
/// flushes, so a crash leaves a consistent prefix; the wall-clock column
/// records when a row hit disk.
pub struct MetricsWriter {
    out: std::io::BufWriter<fs::File>,
    t0: Instant,
    written: usize,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let f = fs::File::create(path)?;
        let mut w = Self {
            out: std::io::BufWriter::new(f),
            t0: Instant::now(),
            written: 0,
        };
        w.out.write_all(METRICS_HEADER.as_bytes())?;
        w.out.flush()?;
        Ok(w)
    }

    pub fn append(path: &Path) -> Result<Self> {
        let f = fs::OpenOptions::new().create(true).append(true).open(path)?;
        let fresh = f.metadata()?.len() == 0;
        let mut w = Self {
            out: std::io::BufWriter::new(f),
            t0: Instant::now(),
            written: 0,
        };
        if fresh {
            w.out.write_all(METRICS_HEADER.as_bytes())?;
        }
        w.out.flush()?;
        Ok(w)
    }

    pub fn drain(&mut self, rows: &[MetricRecord]) -> Result<()> {
        let t = self.t0.elapsed().as_secs_f64();
        for r in rows.get(self.written..).unwrap_or(&[]) {
            writeln!(
                self.out,
                "{t:.3},{},{},{},{},{}",
                r.samples, r.task, r.phase, r.name, r.value
            )?;
        }
        self.written = self.written.max(rows.len());
        self.out.flush()?;
        Ok(())
    }
}

fn psi_column(psi: &[f64]) -> String {
    psi.iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(";")
}

fn write_curve_files(
    out: &Path,
    method: &str,
    curves: &[AdaptationCurve],
    aggregate: &[CurvePoint],
) -> Result<()> {
    let mut per_task = String::from(CURVE_HEADER);
    for (i, curve) in curves.iter().enumerate() {
        let psi = psi_column(&curve.task.psi);
        for p in &curve.points {
            per_task += &format!(
                "{i},{psi},{},{},{},{},{method}\n",
                p.samples, p.mean, p.ci_lo, p.ci_hi
            );
        }
    }
    atomic_write(&out.join(format!("curves-{method}.csv")), per_task.as_bytes())?;

    let mut agg = String::from("samples,mean_return,ci_lo,ci_hi,method\n");
    for p in aggregate {
        agg += &format!("{},{},{},{},{method}\n", p.samples, p.mean, p.ci_lo, p.ci_hi);
    }
    atomic_write(&out.join(format!("aggregate-{method}.csv")), agg.as_bytes())
}

fn check_model_dims(model: &DynamicsModel, body: Body) -> Result<()> {
    if model.state_dim != body.state_dim() || model.action_dim != body.action_dim() {
        return Err(Error::ShapeMismatch {
            context: "loaded model vs configured body",
            expected: format!("{}x{}", body.state_dim(), body.action_dim()),
            got: format!("{}x{}", model.state_dim, model.action_dim),
        });
    }
    Ok(())
}

/// Finds the highest-index `model-taskNNN.bin` in `dir` and loads it with
/// its sibling dataset.
pub fn load_latest_checkpoint(
    dir: &Path,
    hyper: &HyperConfig,
) -> Result<(DynamicsModel, TransitionDataset)> {
    let mut latest: Option<(u64, PathBuf)> = None;
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(idx) = name
            .strip_prefix("model-task")
            .and_then(|s| s.strip_suffix(".bin"))
            .and_then(|s| s.parse::<u64>().ok())
        else {
            continue;
        };
        if latest.as_ref().is_none_or(|(best, _)| idx > *best) {
            latest = Some((idx, entry.path()));
        }
    }
    let Some((idx, model_path)) = latest else {
        return Err(Error::InvalidConfig(format!(
            "no model checkpoints found in {}",
            dir.display()
        )));
    };
    let model = DynamicsModel::load(&model_path, hyper.model_adam())?;
    let ds_path = dir.join(format!("dataset-task{idx:03}.bin"));
    if !ds_path.exists() {
        return Err(Error::InvalidConfig(format!(
            "{} has no dataset beside {}",
            dir.display(),
            model_path.display()
        )));
    }
    let data = TransitionDataset::load(&ds_path)?;
    Ok((model, data))
}

/// Removes checkpoints and run state left by a previous run in `out`, so a
/// fresh run cannot be confused with stale artifacts.
fn clear_stale_artifacts(out: &Path) -> Result<()> {
    let Ok(entries) = fs::read_dir(out) else {
        return Ok(());
    };
    for entry in entries.flatten() {
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let checkpoint = (name.starts_with("model-task") || name.starts_with("dataset-task"))
            && name.ends_with(".bin");
        if checkpoint || name == "run-state.bin" {
            fs::remove_file(entry.path())?;
        }
    }
    Ok(())
}

pub fn run_train(cfg: &ExperimentConfig, resume: bool) -> Result<()> {
    let family = cfg.family.build()?;
    let digest = training_digest(cfg);
    let rs_path = cfg.out.join("run-state.bin");
    let metrics_path = cfg.out.join("metrics.csv");

    let mut state = TrainState::new(cfg.hyper.clone(), family, cfg.variant)?;
    let mut writer = if resume {
        let rs = RunState::load(&rs_path)?;
        if rs.config_digest != digest {
            return Err(Error::InvalidConfig(
                "run state was produced by a different configuration; refusing to resume".into(),
            ));
        }
        if rs.completed > 0 {
            let idx = rs.completed - 1;
            let model_path = cfg.out.join(format!("model-task{idx:03}.bin"));
            state.model = DynamicsModel::load(&model_path, cfg.hyper.model_adam())?;
            check_model_dims(&state.model, state.family.body)?;
            let ds_path = cfg.out.join(format!("dataset-task{idx:03}.bin"));
            if ds_path.exists() {
                state.data = TransitionDataset::load(&ds_path)?;
            } else if rs.samples > 0 {
                return Err(Error::Format(format!(
                    "run state records {} samples but {} is missing",
                    rs.samples,
                    ds_path.display()
                )));
            }
        }
        state.counter = SampleCounter::restored(rs.samples);
        state.completed_tasks = rs.completed as usize;
        state.aborted_tasks = rs.aborted.iter().map(|&i| i as usize).collect();
        if state.completed_tasks >= cfg.hyper.n_tasks {
            println!(
                "training already complete at {} tasks; nothing to resume",
                state.completed_tasks
            );
            return Ok(());
        }
        MetricsWriter::append(&metrics_path)?
    } else {
        clear_stale_artifacts(&cfg.out)?;
        MetricsWriter::create(&metrics_path)?
    };

    {
        let mut hook = |st: &mut TrainState| -> Result<()> {
            writer.drain(&st.metrics)?;
            RunState {
                config_digest: digest,
                completed: st.completed_tasks as u64,
                samples: st.counter.count(),
                aborted: st.aborted_tasks.iter().map(|&i| i as u64).collect(),
            }
            .save(&rs_path)
        };
        run_remaining_tasks(&mut state, Some(&cfg.out), Some(&mut hook))?;
    }
    println!(
        "trained {} tasks ({} aborted); {} real samples -> {}",
        state.completed_tasks,
        state.aborted_tasks.len(),
        state.counter.count(),
        cfg.out.display()
    );
    Ok(())
}

pub fn run_adapt(cfg: &ExperimentConfig) -> Result<()> {
    let from = cfg.from.as_ref().expect("validated: adapt has a source run");
    let family = cfg.family.build()?;
    let (model, data) = load_latest_checkpoint(from, &cfg.hyper)?;
    check_model_dims(&model, family.body)?;
    let bench = TestBench::new(
        family,
        cfg.variant,
        cfg.hyper.horizon,
        cfg.hyper.trust_region.discount,
    )?;
    let mut counter = SampleCounter::default();
    let mut metrics = Vec::new();
    let suite = run_test_suite(
        &model,
        &data,
        &bench,
        cfg.n_test,
        cfg.hyper.n_warmup,
        cfg.hyper.n_slbo,
        &cfg.hyper,
        &mut counter,
        &mut metrics,
    )?;
    MetricsWriter::create(&cfg.out.join("metrics.csv"))?.drain(&metrics)?;
    write_curve_files(&cfg.out, "ours", &suite.curves, &suite.aggregate)?;
    println!(
        "adapted to {} held-out tasks; {} real samples -> {}",
        cfg.n_test,
        counter.count(),
        cfg.out.display()
    );
    Ok(())
}

pub fn run_baseline(cfg: &ExperimentConfig) -> Result<()> {
    let family = cfg.family.build()?;
    let bench = TestBench::new(
        family,
        cfg.variant,
        cfg.hyper.horizon,
        cfg.hyper.trust_region.discount,
    )?;
    let mut counter = SampleCounter::default();
    let mut metrics = Vec::new();

    let method = match cfg.baseline {
        BaselineMethod::Maml => {
            let theta0 = maml_metatrain(&bench, &cfg.maml, &mut counter, &mut metrics)?;
            let mut curves = Vec::with_capacity(cfg.n_test);
            for i in 0..cfg.n_test {
                let task = bench
                    .family
                    .sample_task(&mut stream(cfg.seed, "test-task", &[i as u64]));
                let (_, curve) = maml_adapt(
                    &theta0,
                    &bench,
                    &task,
                    (cfg.maml.alpha_first, cfg.maml.alpha_rest),
                    cfg.hyper.n_slbo,
                    &cfg.maml,
                    i as u64,
                    &mut counter,
                )?;
                curves.push(curve);
            }
            let aggregate = aggregate_curves(&curves, cfg.seed)?;
            write_curve_files(&cfg.out, "maml", &curves, &aggregate)?;
            "maml"
        }
        BaselineMethod::Oracle => {
            let oracle = oracle_train(&bench, &cfg.oracle, cfg.oracle_budget, &mut counter, &mut metrics)?;
            let mut curves = Vec::with_capacity(cfg.n_test);
            for i in 0..cfg.n_test {
                let task = bench
                    .family
                    .sample_task(&mut stream(cfg.seed, "test-task", &[i as u64]));
                let agent = oracle.conditioned(&task.psi);
                let eval = evaluate_policy(
                    &agent,
                    &bench.spec,
                    &bench.family,
                    &task,
                    cfg.hyper.n_eval,
                    &mut stream(cfg.seed, "oracle-eval", &[i as u64]),
                )?;
                // The oracle adapts by conditioning, not by collecting, so
                // its curve is the zero-shot value repeated along the
                // shared sample axis.
                let points = (0..=cfg.hyper.n_slbo)
                    .map(|k| CurvePoint {
                        samples: (k * cfg.hyper.n_collect) as u64,
                        mean: eval.mean,
                        ci_lo: eval.ci_lo,
                        ci_hi: eval.ci_hi,
                    })
                    .collect();
                curves.push(AdaptationCurve { task, points });
            }
            let aggregate = aggregate_curves(&curves, cfg.seed)?;
            write_curve_files(&cfg.out, "oracle", &curves, &aggregate)?;
            "oracle"
        }
    };
    MetricsWriter::create(&cfg.out.join("metrics.csv"))?.drain(&metrics)?;
    println!(
        "{method} baseline over {} test tasks; {} real samples -> {}",
        cfg.n_test,
        counter.count(),
        cfg.out.display()
    );
    Ok(())
}

pub fn run_active(cfg: &ExperimentConfig) -> Result<()> {
    let family = cfg.family.build()?;
    clear_stale_artifacts(&cfg.out)?;
    let mut writer = MetricsWriter::create(&cfg.out.join("metrics.csv"))?;
    let arts = {
        let mut hook = |st: &mut TrainState| writer.drain(&st.metrics);
        train_active_with(
            cfg.hyper.clone(),
            cfg.active.clone(),
            family,
            cfg.variant,
            Some(&cfg.out),
            Some(&mut hook),
        )?
    };
    writer.drain(&arts.metrics)?;

    let mut ratings = String::from("candidate,method,mu,skipped\n");
    for ev in &arts.events {
        ratings += &format!(
            "{},{},{},{}\n",
            ev.candidate,
            ev.rating.method_name(),
            ev.rating.mu,
            ev.skipped as u8
        );
    }
    atomic_write(&cfg.out.join("ratings.csv"), ratings.as_bytes())?;

    let skipped = arts.events.iter().filter(|e| e.skipped).count();
    println!(
        "trained {} tasks out of {} candidates ({} skipped); {} real samples -> {}",
        arts.tasks.len(),
        arts.candidates,
        skipped,
        arts.samples,
        cfg.out.display()
    );
    Ok(())
}

/// Full run: config resolution, artifact directory setup, dispatch.
/// Returns the process exit code; 2 flags a config problem, 1 a run
/// failure (which also leaves a FAILED marker beside the partial
/// artifacts).
pub fn execute(mode: Mode, args: &RunArgs) -> i32 {
    let cfg = match configure(mode, args) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    if let Err(e) = fs::create_dir_all(&cfg.out) {
        eprintln!("error: cannot create {}: {e}", cfg.out.display());
        return 2;
    }
    let marker = cfg.out.join("FAILED");
    let _ = fs::remove_file(&marker);
    let result = freeze_config(&cfg).and_then(|_| match mode {
        Mode::Train => run_train(&cfg, args.resume),
        Mode::Adapt => run_adapt(&cfg),
        Mode::Baseline => run_baseline(&cfg),
        Mode::Active => run_active(&cfg),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let _ = fs::write(&marker, format!("{e}\n"));
            1
        }
    }
}

fn configure(mode: Mode, args: &RunArgs) -> Result<ExperimentConfig> {
    if args.resume && mode != Mode::Train {
        return Err(Error::InvalidConfig(
            "--resume is only supported for train".into(),
        ));
    }
    let raw = load_config(&args.config)?;
    resolve(mode, raw, args)
}

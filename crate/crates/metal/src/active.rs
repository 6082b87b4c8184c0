//! Active task selection: rate how much a candidate task would teach the
//! model, either by the gap between virtual and real return of its warmed-up
//! policy (costs real rollouts) or by the disagreement between recent model
//! snapshots (costs none), then skip candidates rated below a running
//! quantile of recent ratings.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dynmodel::DynamicsModel;
use crate::envs::{Task, TaskFamily, VariantKind};
use crate::error::{Error, Result};
use crate::seeding::stream;
use crate::trainer::{
    record, BoundaryHook, HyperConfig, MetricRecord, SampleCounter, TaskReport, TrainState,
};
use crate::trpo::GaussianPolicy;
use crate::virtualenv::{
    rollout, summarize, Dynamics, InitStateSource, ModelDynamics, RealDynamics,
};

/// How a task was rated.
#[derive(Debug, Clone, PartialEq)]
pub enum RatingDetail {
    /// Virtual return minus real return of the warmed-up policy.
    TrueGap {
        virtual_return: f64,
        real_return: f64,
    },
    /// Mean absolute pairwise difference of virtual returns across model
    /// snapshots; needs no real samples.
    EstimatedGap { snapshot_returns: Vec<f64> },
}

/// Difficulty rating of one candidate task under one method. Ratings are
/// comparable only within a method.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRating {
    pub task: Task,
    pub mu: f64,
    pub detail: RatingDetail,
    /// FNV-1a fingerprint of the rated (post-warm-up) policy parameters.
    pub policy_fingerprint: u64,
}

impl TaskRating {
    pub fn method_name(&self) -> &'static str {
        match self.detail {
            RatingDetail::TrueGap { .. } => "true-gap",
            RatingDetail::EstimatedGap { .. } => "estimated-gap",
        }
    }
}

fn fingerprint(params: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for v in params {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

/// Monte-Carlo return of `agent` under `dynamics`, plus the total number of
/// steps actually taken.
fn mc_return<D: Dynamics, A: crate::virtualenv::Agent, R: Rng + ?Sized>(
    dynamics: &D,
    ctx: (&crate::envs::MdpSpec, &TaskFamily, &Task),
    agent: &A,
    n_rollouts: usize,
    rng: &mut R,
) -> Result<(f64, usize)> {
    let (spec, family, task) = ctx;
    let mut returns = Vec::with_capacity(n_rollouts);
    let mut steps = 0;
    for _ in 0..n_rollouts {
        let traj = rollout(
            dynamics,
            spec,
            agent,
            family,
            task,
            spec.horizon,
            &InitStateSource::P0,
            rng,
        )?;
        steps += traj.len();
        returns.push(traj.undiscounted_return());
    }
    Ok((summarize(returns).mean, steps))
}

/// True difficulty: virtual return minus real return of the warmed-up
/// policy, both Monte-Carlo estimates from `n_rollouts` rollouts driven by
/// identically seeded streams. `model` is anything that steps like the
/// learned model; substituting the real dynamics therefore rates exactly 0.
/// The real rollouts are charged to the sample counter.
#[allow(clippy::too_many_arguments)]
pub fn rate_true<D: Dynamics>(
    policy: &GaussianPolicy,
    model: &D,
    spec: &crate::envs::MdpSpec,
    family: &TaskFamily,
    task: &Task,
    n_rollouts: usize,
    counter: &mut SampleCounter,
    rng: &mut ChaCha8Rng,
) -> Result<TaskRating> {
    let ctx = (spec, family, task);
    let (virtual_return, _) = mc_return(model, ctx, policy, n_rollouts, &mut rng.clone())?;
    let (real_return, real_steps) =
        mc_return(&RealDynamics(spec), ctx, policy, n_rollouts, rng)?;
    counter.add(real_steps);
    Ok(TaskRating {
        task: task.clone(),
        mu: virtual_return - real_return,
        detail: RatingDetail::TrueGap {
            virtual_return,
            real_return,
        },
        policy_fingerprint: fingerprint(&policy.flat_params()),
    })
}

/// Mean absolute pairwise difference over virtual return estimates.
pub fn pairwise_disagreement(returns: &[f64]) -> Result<f64> {
    if returns.len() < 2 {
        return Err(Error::TooFewSnapshots {
            needed: 2,
            got: returns.len(),
        });
    }
    let n = returns.len();
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            sum += (returns[i] - returns[j]).abs();
        }
    }
    Ok(sum / (n * (n - 1) / 2) as f64)
}

/// Estimated difficulty: disagreement between the virtual returns of the
/// warmed-up policy under distinct model snapshots, using identically
/// seeded rollout streams per snapshot. Consumes zero real samples (it
/// takes no counter), so rating is free in the sample budget.
pub fn rate_estimated(
    policy: &GaussianPolicy,
    snapshots: &[DynamicsModel],
    spec: &crate::envs::MdpSpec,
    family: &TaskFamily,
    task: &Task,
    n_rollouts: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TaskRating> {
    if snapshots.len() < 2 {
        return Err(Error::TooFewSnapshots {
            needed: 2,
            got: snapshots.len(),
        });
    }
    let ctx = (spec, family, task);
    let mut returns = Vec::with_capacity(snapshots.len());
    for snap in snapshots {
        let (est, _) = mc_return(&ModelDynamics(snap), ctx, policy, n_rollouts, &mut rng.clone())?;
        returns.push(est);
    }
    let mu = pairwise_disagreement(&returns)?;
    Ok(TaskRating {
        task: task.clone(),
        mu,
        detail: RatingDetail::EstimatedGap {
            snapshot_returns: returns,
        },
        policy_fingerprint: fingerprint(&policy.flat_params()),
    })
}

/// Linear-interpolation quantile of a sorted slice.
fn interp_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Which `warm_start`-sized slice of the rating history feeds the quantile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatingWindow {
    /// Sliding window over the most recent ratings; the threshold tracks
    /// the model as it improves.
    Recent,
    /// The first ratings ever observed; the threshold stays frozen.
    First,
}

/// Skip decision state: a candidate is skipped when its rating falls
/// strictly below the q-quantile of a `warm_start`-sized window of recorded
/// ratings. Nothing is ever skipped until that many ratings have
/// accumulated; every rating is recorded regardless of the decision.
#[derive(Debug, Clone)]
pub struct SkipRule {
    pub q: f64,
    pub warm_start: usize,
    pub window: RatingWindow,
    history: Vec<f64>,
}

impl SkipRule {
    pub fn new(q: f64, warm_start: usize) -> Result<Self> {
        Self::with_window(q, warm_start, RatingWindow::Recent)
    }

    pub fn with_window(q: f64, warm_start: usize, window: RatingWindow) -> Result<Self> {
        if !(0.0 < q && q < 1.0) {
            return Err(Error::InvalidConfig(
                "skip quantile must lie strictly between 0 and 1".into(),
            ));
        }
        if warm_start == 0 {
            return Err(Error::InvalidConfig(
                "skip warm-start count must be at least 1".into(),
            ));
        }
        Ok(Self {
            q,
            warm_start,
            window,
            history: Vec::new(),
        })
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// Decides on a new rating and records it.
    pub fn should_skip(&mut self, mu_new: f64) -> bool {
        let skip = if self.history.len() >= self.warm_start {
            let mut window: Vec<f64> = match self.window {
                RatingWindow::Recent => {
                    self.history[self.history.len() - self.warm_start..].to_vec()
                }
                RatingWindow::First => self.history[..self.warm_start].to_vec(),
            };
            window.sort_by(|a, b| a.total_cmp(b));
            mu_new < interp_quantile(&window, self.q)
        } else {
            false
        };
        self.history.push(mu_new);
        skip
    }
}

/// Which rating method drives skipping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatingMethod {
    TrueGap,
    EstimatedGap,
}

/// Active-selection settings on top of a training HyperConfig.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ActiveConfig {
    pub method: RatingMethod,
    pub q: f64,
    pub warm_start: usize,
    pub window: RatingWindow,
    pub n_rating_rollouts: usize,
    /// Hard cap on candidates considered, so pathological rating sequences
    /// cannot loop forever.
    pub max_candidates: u64,
}

impl ActiveConfig {
    pub fn desk(method: RatingMethod, n_tasks: usize) -> Self {
        Self {
            method,
            q: 0.5,
            warm_start: 5,
            window: RatingWindow::Recent,
            n_rating_rollouts: 10,
            max_candidates: 10 * n_tasks as u64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rating_rollouts == 0 {
            return Err(Error::InvalidConfig(
                "n_rating_rollouts must be at least 1".into(),
            ));
        }
        if self.max_candidates == 0 {
            return Err(Error::InvalidConfig(
                "max_candidates must be at least 1".into(),
            ));
        }
        SkipRule::with_window(self.q, self.warm_start, self.window).map(|_| ())
    }
}

/// One rated candidate and the decision taken.
#[derive(Debug, Clone)]
pub struct RatingEvent {
    pub candidate: u64,
    pub rating: TaskRating,
    pub skipped: bool,
}

/// Training-run artifacts plus the selection trace.
pub struct ActiveTrainingArtifacts {
    pub model: DynamicsModel,
    pub dataset: crate::dynmodel::TransitionDataset,
    pub metrics: Vec<MetricRecord>,
    pub samples: u64,
    pub tasks: Vec<TaskReport>,
    pub events: Vec<RatingEvent>,
    pub candidates: u64,
}

/// Sequential training with task skipping. Candidates are sampled and
/// warmed up as usual; once warm-up has run (i.e. from the second candidate
/// on) the warmed-up policy rates the task, and low-rated candidates are
/// dropped before consuming their real-collection budget. Skipped
/// candidates do not count toward `n_tasks`, so the run finishes with the
/// same number of trained tasks as a plain run.
pub fn train_active(
    cfg: HyperConfig,
    active: ActiveConfig,
    family: TaskFamily,
    variant_kind: VariantKind,
    out_dir: Option<&std::path::Path>,
) -> Result<ActiveTrainingArtifacts> {
    train_active_with(cfg, active, family, variant_kind, out_dir, None)
}

/// `train_active` with a boundary observer, called after every trained (or
/// aborted) candidate; skipped candidates hit no boundary.
pub fn train_active_with(
    cfg: HyperConfig,
    active: ActiveConfig,
    family: TaskFamily,
    variant_kind: VariantKind,
    out_dir: Option<&std::path::Path>,
    mut hook: Option<BoundaryHook>,
) -> Result<ActiveTrainingArtifacts> {
    active.validate()?;
    let n_tasks = cfg.n_tasks;
    let seed = cfg.seed;
    let mut state = TrainState::new(cfg, family, variant_kind)?;
    let mut rule = SkipRule::with_window(active.q, active.warm_start, active.window)?;
    let mut events = Vec::new();
    let mut reports = Vec::with_capacity(n_tasks);
    let mut candidate: u64 = 0;

    while state.completed_tasks < n_tasks {
        if candidate >= active.max_candidates {
            return Err(Error::InvalidConfig(format!(
                "active selection exhausted {} candidates with only {}/{} tasks trained",
                active.max_candidates, state.completed_tasks, n_tasks
            )));
        }
        let task = state
            .family
            .sample_task(&mut stream(seed, "task-sample", &[candidate]));
        let label = state.completed_tasks as i64;
        let (mut policy, mut baseline) = state.fresh_policy(candidate)?;
        let mut rng = stream(seed, "task-work", &[candidate]);

        let warmed = state.warm_up_policy(&task, &mut policy, &mut baseline, label, &mut rng);
        if let Err(e) = warmed {
            // Warm-up failures abort the candidate like any task abort.
            reports.push(state.finish_task(&task, Err(e), out_dir)?);
            if let Some(h) = hook.as_mut() {
                h(&mut state)?;
            }
            candidate += 1;
            continue;
        }

        // Rating needs a warmed-up policy; before any data exists (first
        // candidate) the task trains unconditionally.
        let mut skipped = false;
        if !state.data.is_empty() {
            let mut rating_rng = stream(seed, "rating", &[candidate]);
            let rating = match active.method {
                RatingMethod::TrueGap => rate_true(
                    &policy,
                    &ModelDynamics(&state.model),
                    &state.spec,
                    &state.family,
                    &task,
                    active.n_rating_rollouts,
                    &mut state.counter,
                    &mut rating_rng,
                )?,
                RatingMethod::EstimatedGap => rate_estimated(
                    &policy,
                    &state.snapshots,
                    &state.spec,
                    &state.family,
                    &task,
                    active.n_rating_rollouts,
                    &mut rating_rng,
                )?,
            };
            skipped = rule.should_skip(rating.mu);
            record(
                &mut state.metrics,
                state.counter.count(),
                candidate as i64,
                "active",
                "mu",
                rating.mu,
            );
            record(
                &mut state.metrics,
                state.counter.count(),
                candidate as i64,
                "active",
                "skipped",
                skipped as u8 as f64,
            );
            events.push(RatingEvent {
                candidate,
                rating,
                skipped,
            });
        }

        if !skipped {
            let outcome = state.slbo_rounds(&task, &mut policy, &mut baseline, label, &mut rng);
            reports.push(state.finish_task(&task, outcome, out_dir)?);
            if let Some(h) = hook.as_mut() {
                h(&mut state)?;
            }
        }
        candidate += 1;
    }

    Ok(ActiveTrainingArtifacts {
        model: state.model,
        dataset: state.data,
        metrics: state.metrics,
        samples: state.counter.count(),
        tasks: reports,
        events,
        candidates: candidate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::envs::{Body, DynamicsVariant, FamilyKind, MdpSpec};
    use crate::ndmath::AdamConfig;

    fn gv_family() -> TaskFamily {
        TaskFamily::new(Body::PointMass, FamilyKind::GoalVelocity1d, vec![0.0], vec![2.0])
            .unwrap()
    }

    fn nominal_spec(horizon: usize) -> MdpSpec {
        MdpSpec::new(
            Body::PointMass,
            DynamicsVariant::nominal(Body::PointMass),
            horizon,
            0.99,
        )
        .unwrap()
    }

    #[test]
    fn quantile_interpolates_on_the_sorted_window() {
        assert_eq!(interp_quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.5), 3.0);
        assert_eq!(interp_quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
        assert_eq!(interp_quantile(&[1.0, 5.0], 0.25), 2.0);
        assert_eq!(interp_quantile(&[7.0], 0.9), 7.0);
    }

    #[test]
    fn no_skipping_before_the_warm_start_count() {
        let mut rule = SkipRule::new(0.5, 5).unwrap();
        for mu in [5.0, 4.0, 3.0, 2.0] {
            assert!(!rule.should_skip(mu), "skipped with short history");
        }
        assert_eq!(rule.history().len(), 4);
    }

    #[test]
    fn median_rule_skips_below_and_keeps_at_the_quantile() {
        let mut rule = SkipRule::new(0.5, 5).unwrap();
        for mu in [1.0, 2.0, 3.0, 4.0, 5.0] {
            assert!(!rule.should_skip(mu));
        }
        // Median of (1..5) is 3; a new rating of 2 falls strictly below.
        assert!(rule.should_skip(2.0));

        let mut rule = SkipRule::new(0.5, 5).unwrap();
        for mu in [1.0, 2.0, 3.0, 4.0, 5.0] {
            rule.should_skip(mu);
        }
        // Equality with the quantile is not "strictly below".
        assert!(!rule.should_skip(3.0));
    }

    #[test]
    fn the_window_slides_over_recent_ratings() {
        let mut rule = SkipRule::new(0.5, 5).unwrap();
        for mu in [1.0, 2.0, 3.0, 4.0, 5.0, 10.0, 10.0, 10.0, 10.0, 10.0] {
            rule.should_skip(mu);
        }
        // Window is now all 10s; 9 would have passed the first five ratings
        // (median 3) but falls below the sliding median of 10.
        assert!(rule.should_skip(9.0));
    }

    #[test]
    fn the_frozen_window_keeps_the_first_threshold() {
        let mut rule = SkipRule::with_window(0.5, 5, RatingWindow::First).unwrap();
        for mu in [1.0, 2.0, 3.0, 4.0, 5.0, 10.0, 10.0, 10.0, 10.0, 10.0] {
            rule.should_skip(mu);
        }
        // The threshold stays the median of the first five ratings.
        assert!(!rule.should_skip(9.0));
        assert!(rule.should_skip(2.0));
    }

    proptest::proptest! {
        /// Raising the quantile never decreases the number of skips on a
        /// fixed rating sequence.
        #[test]
        fn skip_count_is_monotone_in_q(
            mus in proptest::collection::vec(-100.0f64..100.0, 6..40),
            q_lo in 0.05f64..0.9,
            dq in 0.01f64..0.09,
        ) {
            let q_hi = q_lo + dq;
            let mut rule_lo = SkipRule::new(q_lo, 5).unwrap();
            let mut rule_hi = SkipRule::new(q_hi, 5).unwrap();
            let skips = |rule: &mut SkipRule| -> usize {
                mus.iter().filter(|&&mu| rule.should_skip(mu)).count()
            };
            prop_assert!(skips(&mut rule_lo) <= skips(&mut rule_hi));
        }
    }

    #[test]
    fn pairwise_disagreement_matches_enumeration() {
        assert!(matches!(
            pairwise_disagreement(&[1.0]),
            Err(Error::TooFewSnapshots { needed: 2, got: 1 })
        ));
        assert_eq!(pairwise_disagreement(&[4.0, 4.0]).unwrap(), 0.0);
        assert_eq!(pairwise_disagreement(&[1.0, 2.0]).unwrap(), 1.0);
        // Pairs of (1, 2, 4): |1-2| + |1-4| + |2-4| over 3 pairs.
        assert_eq!(pairwise_disagreement(&[1.0, 2.0, 4.0]).unwrap(), 2.0);
    }

    #[test]
    fn identical_snapshots_rate_exactly_zero() {
        let spec = nominal_spec(20);
        let family = gv_family();
        let task = Task { psi: vec![1.0] };
        let mut rng = stream(40, "rate", &[]);
        let policy = GaussianPolicy::new(4, 2, &[8], &mut rng).unwrap();
        let model = DynamicsModel::new(4, 2, &[16], AdamConfig::default(), &mut rng).unwrap();
        let snapshots = vec![model.clone(), model.clone(), model];
        let rating =
            rate_estimated(&policy, &snapshots, &spec, &family, &task, 3, &mut rng).unwrap();
        assert_eq!(rating.mu, 0.0);
        assert_eq!(rating.method_name(), "estimated-gap");
        match &rating.detail {
            RatingDetail::EstimatedGap { snapshot_returns } => {
                assert_eq!(snapshot_returns.len(), 3);
                assert_eq!(snapshot_returns[0], snapshot_returns[2]);
            }
            _ => panic!("wrong detail"),
        }
    }

    #[test]
    fn too_few_snapshots_cannot_rate() {
        let spec = nominal_spec(20);
        let family = gv_family();
        let task = Task { psi: vec![1.0] };
        let mut rng = stream(41, "rate", &[]);
        let policy = GaussianPolicy::new(4, 2, &[8], &mut rng).unwrap();
        let model = DynamicsModel::new(4, 2, &[16], AdamConfig::default(), &mut rng).unwrap();
        assert!(matches!(
            rate_estimated(&policy, &[model], &spec, &family, &task, 3, &mut rng),
            Err(Error::TooFewSnapshots { needed: 2, got: 1 })
        ));
    }

    /// A perfect model and synchronized streams make the true gap exactly
    /// zero; the real rollouts still hit the sample counter.
    #[test]
    fn perfect_model_true_gap_is_exactly_zero() {
        let spec = nominal_spec(25);
        let family = gv_family();
        let task = Task { psi: vec![1.0] };
        let mut rng = stream(42, "rate", &[]);
        let policy = GaussianPolicy::new(4, 2, &[8], &mut rng).unwrap();

        // Stand-in for a perfectly learned model: the real dynamics behind
        // the model interface.
        let mut counter = SampleCounter::default();
        let rating = rate_true(
            &policy, &RealDynamics(&spec), &spec, &family, &task, 5, &mut counter, &mut rng,
        )
        .unwrap();
        assert_eq!(rating.mu, 0.0);
        match rating.detail {
            RatingDetail::TrueGap {
                virtual_return,
                real_return,
            } => assert_eq!(virtual_return, real_return),
            _ => panic!("wrong detail"),
        }
        assert_eq!(counter.count(), 5 * 25);
    }

    #[test]
    fn stored_estimates_recompute_the_rating() {
        let spec = nominal_spec(20);
        let family = gv_family();
        let task = Task { psi: vec![0.5] };
        let mut rng = stream(43, "rate", &[]);
        let policy = GaussianPolicy::new(4, 2, &[8], &mut rng).unwrap();
        let model = DynamicsModel::new(4, 2, &[16], AdamConfig::default(), &mut rng).unwrap();
        let mut counter = SampleCounter::default();
        let rating = rate_true(
            &policy, &ModelDynamics(&model), &spec, &family, &task, 4, &mut counter, &mut rng,
        )
        .unwrap();
        assert_eq!(counter.count(), 4 * 20);
        match rating.detail {
            RatingDetail::TrueGap {
                virtual_return,
                real_return,
            } => assert_eq!(rating.mu, virtual_return - real_return),
            _ => panic!("wrong detail"),
        }
    }

    /// A model that freezes every state underestimates what a
    /// forward-pushing policy earns for a positive goal velocity, so the
    /// virtual-minus-real gap is negative.
    #[test]
    fn frozen_state_model_rates_negative_for_forward_tasks() {
        let spec = nominal_spec(50);
        let family = gv_family();
        let task = Task { psi: vec![1.0] };
        // Zeroed network + identity normalizer predict a zero state
        // difference: states never move.
        let frozen = DynamicsModel::zeroed(4, 2, &[16]).unwrap();
        // Forward-pushing near-deterministic policy: zero weights, bias
        // (1, 0), log-std at the clamp floor.
        let template = GaussianPolicy::new(4, 2, &[], &mut stream(44, "p", &[])).unwrap();
        let mut flat = vec![0.0; template.param_count()];
        flat[8] = 1.0; // bias of the first action coordinate
        flat[10] = -5.0;
        flat[11] = -5.0;
        let policy = template.with_flat_params(&flat).unwrap();

        let mut counter = SampleCounter::default();
        let mut rng = stream(44, "rate", &[]);
        let rating = rate_true(
            &policy, &ModelDynamics(&frozen), &spec, &family, &task, 5, &mut counter, &mut rng,
        )
        .unwrap();
        assert!(
            rating.mu < -5.0,
            "frozen model should gap negative, got {}",
            rating.mu
        );
    }

    #[test]
    fn active_run_trains_the_requested_task_count_with_free_rating() {
        let cfg = HyperConfig {
            n_tasks: 3,
            n_warmup: 2,
            n_slbo: 1,
            n_collect: 100,
            n_inner: 2,
            n_model: 5,
            n_policy: 1,
            n_trpo: 50,
            horizon: 50,
            n_eval: 2,
            ..HyperConfig::desk(45)
        };
        let active = ActiveConfig {
            method: RatingMethod::EstimatedGap,
            q: 0.5,
            warm_start: 1,
            window: RatingWindow::Recent,
            n_rating_rollouts: 2,
            max_candidates: 50,
        };
        let arts =
            train_active(cfg.clone(), active, gv_family(), VariantKind::Nominal, None).unwrap();
        assert_eq!(arts.tasks.len(), 3);
        let skips = arts.events.iter().filter(|e| e.skipped).count() as u64;
        assert_eq!(arts.candidates, 3 + skips);
        // Estimated rating is sample-free: the counter holds exactly the
        // trained tasks' collection budget.
        assert_eq!(arts.samples, 3 * 100);
        assert_eq!(arts.dataset.len(), 300);
        // Every candidate after the first was rated.
        assert_eq!(arts.events.len() as u64, arts.candidates - 1);
    }

    #[test]
    fn true_gap_rating_charges_the_sample_budget() {
        let cfg = HyperConfig {
            n_tasks: 2,
            n_warmup: 2,
            n_slbo: 1,
            n_collect: 100,
            n_inner: 1,
            n_model: 5,
            n_policy: 1,
            n_trpo: 50,
            horizon: 50,
            n_eval: 2,
            ..HyperConfig::desk(46)
        };
        let active = ActiveConfig {
            method: RatingMethod::TrueGap,
            q: 0.5,
            warm_start: 5,
            window: RatingWindow::Recent,
            n_rating_rollouts: 3,
            max_candidates: 50,
        };
        let arts =
            train_active(cfg, active, gv_family(), VariantKind::Nominal, None).unwrap();
        // Warm start of 5 means nothing is skipped here: two tasks, one
        // rated (the second), each rating costing 3 * 50 real steps.
        assert_eq!(arts.tasks.len(), 2);
        assert_eq!(arts.events.len(), 1);
        assert!(!arts.events[0].skipped);
        assert_eq!(arts.samples, 2 * 100 + 3 * 50);
        assert_eq!(arts.dataset.len(), 200);
    }
}

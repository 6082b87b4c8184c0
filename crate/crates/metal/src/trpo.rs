//! Trust-region policy optimization: diagonal-Gaussian policies, advantage
//! estimation, a natural-gradient step computed by conjugate gradient on an
//! analytic Fisher-vector product, and backtracking line search that only
//! accepts steps inside the KL trust region that do not hurt the surrogate.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::ndmath::{
    conjugate_gradient, dot, flatten_arrays, read_array_block, unflatten_like, write_array_block,
    AdamConfig, AdamState, DenseArray, Mlp, PARAM_MAGIC,
};
use crate::virtualenv::{Agent, Trajectory};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const INIT_LOG_STD: f64 = -0.5;
const LOG_2PI: f64 = 1.8378770664093453;

/// Diagonal Gaussian policy: a network producing the action mean plus a
/// state-independent log-std vector, clamped to `[-5, 2]`.
#[derive(Debug, Clone)]
pub struct GaussianPolicy {
    mean_net: Mlp,
    log_std: Vec<f64>,
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let mut widths = vec![state_dim];
        widths.extend_from_slice(hidden);
        widths.push(action_dim);
        Ok(Self {
            mean_net: Mlp::init(&widths, rng)?,
            log_std: vec![INIT_LOG_STD; action_dim],
        })
    }

    pub fn state_dim(&self) -> usize {
        self.mean_net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.mean_net.output_dim()
    }

    pub fn mean_net(&self) -> &Mlp {
        &self.mean_net
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn mean(&self, state: &[f64]) -> Result<Vec<f64>> {
        let x = DenseArray::from_vec(&[state.len()], state.to_vec())?;
        Ok(self.mean_net.forward(&x)?.data().to_vec())
    }

    /// Flat parameter vector: mean-network parameters then log-std entries.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = self.mean_net.flat_params();
        v.extend_from_slice(&self.log_std);
        v
    }

    pub fn param_count(&self) -> usize {
        self.mean_net.param_count() + self.log_std.len()
    }

    /// Same architecture with replaced parameters; log-std entries are
    /// clamped into their legal range, so every constructed policy honors
    /// the invariant (and KL checks see the policy actually used).
    pub fn with_flat_params(&self, flat: &[f64]) -> Result<Self> {
        let n_net = self.mean_net.param_count();
        if flat.len() != n_net + self.log_std.len() {
            return Err(Error::ShapeMismatch {
                context: "GaussianPolicy::with_flat_params",
                expected: format!("{} values", n_net + self.log_std.len()),
                got: format!("{}", flat.len()),
            });
        }
        let mut net = self.mean_net.clone();
        net.set_flat_params(&flat[..n_net])?;
        let log_std = flat[n_net..]
            .iter()
            .map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect();
        Ok(Self {
            mean_net: net,
            log_std,
        })
    }

    /// Log-density of a raw (unclipped) action.
    pub fn log_prob(&self, state: &[f64], raw_action: &[f64]) -> Result<f64> {
        let mean = self.mean(state)?;
        Ok(log_prob_given_mean(&mean, &self.log_std, raw_action))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut arrays: Vec<&DenseArray> = self.mean_net.params().iter().collect();
        let ls = DenseArray::from_vec(&[self.log_std.len()], self.log_std.clone()).unwrap();
        arrays.push(&ls);
        let mut buf = Vec::new();
        write_array_block(&mut buf, PARAM_MAGIC, &arrays);
        crate::fsutil::atomic_write(path, &buf)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let arrays = read_array_block(&bytes, PARAM_MAGIC)?;
        if arrays.len() < 3 || arrays.len() % 2 == 0 {
            return Err(Error::Format(
                "policy checkpoint needs 2L net arrays plus log-std".into(),
            ));
        }
        let net_params = &arrays[..arrays.len() - 1];
        let log_std_arr = &arrays[arrays.len() - 1];
        let mut widths = vec![net_params[0].shape()[1]];
        for i in 0..net_params.len() / 2 {
            widths.push(net_params[2 * i].shape()[0]);
        }
        let mut net = Mlp::zeros(&widths)?;
        net.set_params(net_params)?;
        if log_std_arr.len() != *widths.last().unwrap() {
            return Err(Error::Format("log-std length disagrees with network".into()));
        }
        Ok(Self {
            mean_net: net,
            log_std: log_std_arr
                .data()
                .iter()
                .map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX))
                .collect(),
        })
    }
}

fn log_prob_given_mean(mean: &[f64], log_std: &[f64], raw_action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(raw_action)
        .map(|((m, ls), a)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * LOG_2PI
        })
        .sum()
}

impl Agent for GaussianPolicy {
    fn raw_action<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Vec<f64> {
        let mean = self.mean(state).expect("finite policy mean");
        mean.iter()
            .zip(&self.log_std)
            .map(|(m, ls)| {
                let eps: f64 = StandardNormal.sample(rng);
                m + ls.exp() * eps
            })
            .collect()
    }
}

/// State-value regressor fit to discounted returns-to-go.
#[derive(Debug, Clone)]
pub struct ValueBaseline {
    net: Mlp,
    adam: AdamState,
}

impl ValueBaseline {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, hidden: &[usize], lr: f64, rng: &mut R) -> Result<Self> {
        let mut widths = vec![state_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let net = Mlp::init(&widths, rng)?;
        let adam = AdamState::new(net.params(), AdamConfig { lr, ..AdamConfig::default() });
        Ok(Self { net, adam })
    }

    pub fn zeroed(state_dim: usize, hidden: &[usize], lr: f64) -> Result<Self> {
        let mut widths = vec![state_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let net = Mlp::zeros(&widths)?;
        let adam = AdamState::new(net.params(), AdamConfig { lr, ..AdamConfig::default() });
        Ok(Self { net, adam })
    }

    pub fn value(&self, state: &[f64]) -> Result<f64> {
        let x = DenseArray::from_vec(&[state.len()], state.to_vec())?;
        Ok(self.net.forward(&x)?.data()[0])
    }

    pub fn values(&self, states: &DenseArray) -> Result<Vec<f64>> {
        Ok(self.net.forward(states)?.data().to_vec())
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }
}

/// Full-batch mean-squared-error regression with Adam; returns the loss
/// after the last epoch (current loss when `epochs` is zero).
pub fn fit_baseline(
    baseline: &mut ValueBaseline,
    states: &DenseArray,
    targets: &[f64],
    epochs: usize,
) -> Result<f64> {
    let n = states.rows();
    if n != targets.len() {
        return Err(Error::ShapeMismatch {
            context: "fit_baseline",
            expected: format!("{n} targets"),
            got: format!("{}", targets.len()),
        });
    }
    let mse = |out: &DenseArray| -> (f64, DenseArray) {
        let mut loss = 0.0;
        let mut cot = DenseArray::zeros(out.shape());
        for (i, (o, t)) in out.data().iter().zip(targets).enumerate() {
            let e = o - t;
            loss += e * e;
            cot.data_mut()[i] = 2.0 * e / n as f64;
        }
        (loss / n as f64, cot)
    };
    let mut last = {
        let out = baseline.net.forward(states)?;
        mse(&out).0
    };
    for _ in 0..epochs {
        let (loss, grads) = baseline.net.gradients(states, mse)?;
        baseline.adam.step(baseline.net.params_mut(), &grads)?;
        last = loss;
    }
    Ok(last)
}

/// Sum over samples of w_t * d log pi(a_t | s_t) / d theta in the flat
/// parameter layout. Any averaging is folded into the weights by the caller.
pub fn weighted_score_gradient(
    policy: &GaussianPolicy,
    states: &DenseArray,
    raw_actions: &DenseArray,
    weights: &[f64],
) -> Result<Vec<f64>> {
    let n = states.rows();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if raw_actions.rows() != n || weights.len() != n {
        return Err(Error::ShapeMismatch {
            context: "weighted_score_gradient",
            expected: format!("{n} actions and weights"),
            got: format!("{} actions, {} weights", raw_actions.rows(), weights.len()),
        });
    }
    let ad = policy.action_dim();
    let (means, cache) = policy.mean_net.forward_cached(states)?;
    let std: Vec<f64> = policy.log_std.iter().map(|v| v.exp()).collect();
    let mut mean_cot = DenseArray::zeros(&[n, ad]);
    let mut g_log_std = vec![0.0; ad];
    for t in 0..n {
        let w = weights[t];
        for i in 0..ad {
            let z = (raw_actions.at(t, i) - means.at(t, i)) / std[i];
            mean_cot.set(t, i, w * z / std[i]);
            g_log_std[i] += w * (z * z - 1.0);
        }
    }
    let (grads, _) = policy.mean_net.backward(&cache, &mean_cot)?;
    let mut g = flatten_arrays(&grads);
    g.extend_from_slice(&g_log_std);
    if !g.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: "weighted_score_gradient",
        });
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrustRegionConfig {
    pub max_kl: f64,
    pub cg_iters: usize,
    pub cg_damping: f64,
    pub backtrack_coef: f64,
    pub backtrack_steps: usize,
    pub lambda_gae: f64,
    pub discount: f64,
}

impl Default for TrustRegionConfig {
    fn default() -> Self {
        Self {
            max_kl: 0.01,
            cg_iters: 10,
            cg_damping: 0.1,
            backtrack_coef: 0.8,
            backtrack_steps: 10,
            lambda_gae: 0.95,
            discount: 0.99,
        }
    }
}

impl TrustRegionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_kl <= 0.0
            || !(0.0..=1.0).contains(&self.lambda_gae)
            || !(0.0..1.0).contains(&self.discount)
            || !(0.0..1.0).contains(&self.backtrack_coef)
            || self.cg_iters == 0
            || self.cg_damping < 0.0
        {
            return Err(Error::InvalidConfig(
                "trust region needs max_kl > 0, lambda in [0,1], discount/backtrack in [0,1)".into(),
            ));
        }
        Ok(())
    }
}

/// Generalized advantage estimation on one episode that terminates after
/// its last step (terminal value 0). Returns raw (unnormalized) advantages
/// and discounted return-to-go targets.
pub fn gae_from_values(
    rewards: &[f64],
    values: &[f64],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    debug_assert_eq!(n, values.len());
    let mut advantages = vec![0.0; n];
    let mut targets = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_ret = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next_value - values[t];
        next_adv = delta + gamma * lambda * next_adv;
        next_ret = rewards[t] + gamma * next_ret;
        advantages[t] = next_adv;
        targets[t] = next_ret;
    }
    (advantages, targets)
}

/// Optimization batch assembled from whole trajectories: flattened states,
/// raw actions, batch-normalized advantages, and value-fitting targets.
pub struct TrpoBatch {
    pub states: DenseArray,
    pub raw_actions: DenseArray,
    pub advantages: Vec<f64>,
    pub value_targets: Vec<f64>,
}

pub fn assemble_batch(
    trajectories: &[Trajectory],
    baseline: &ValueBaseline,
    gamma: f64,
    lambda: f64,
) -> Result<TrpoBatch> {
    let total: usize = trajectories.iter().map(Trajectory::len).sum();
    if total == 0 {
        return Err(Error::EmptyDataset);
    }
    let sd = trajectories[0].transitions[0].state.len();
    let ad = trajectories[0].raw_actions[0].len();
    let mut states = DenseArray::zeros(&[total, sd]);
    let mut actions = DenseArray::zeros(&[total, ad]);
    let mut advantages = Vec::with_capacity(total);
    let mut targets = Vec::with_capacity(total);
    let mut row = 0;
    for traj in trajectories {
        let rewards: Vec<f64> = traj.transitions.iter().map(|tr| tr.reward).collect();
        let mut values = Vec::with_capacity(rewards.len());
        for tr in &traj.transitions {
            values.push(baseline.value(&tr.state)?);
        }
        let (adv, tgt) = gae_from_values(&rewards, &values, gamma, lambda);
        advantages.extend(adv);
        targets.extend(tgt);
        for (tr, raw) in traj.transitions.iter().zip(&traj.raw_actions) {
            for (c, v) in tr.state.iter().enumerate() {
                states.set(row, c, *v);
            }
            for (c, v) in raw.iter().enumerate() {
                actions.set(row, c, *v);
            }
            row += 1;
        }
    }
    normalize_in_place(&mut advantages);
    Ok(TrpoBatch {
        states,
        raw_actions: actions,
        advantages,
        value_targets: targets,
    })
}

/// Zero-mean, unit-std normalization used on advantage batches.
fn normalize_in_place(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    let denom = std + 1e-8;
    for x in v.iter_mut() {
        *x = (*x - mean) / denom;
    }
}

#[derive(Debug, Clone)]
pub struct TrpoDiagnostics {
    pub accepted: bool,
    pub surrogate_change: f64,
    pub kl: f64,
    /// Backtracking exponent of the accepted step (0 = full step).
    pub line_search_depth: usize,
    /// Candidates discarded because their surrogate or KL was non-finite.
    pub nonfinite_candidates: usize,
}

/// One trust-region update. The natural-gradient direction solves
/// `(F + damping I) x = g` by conjugate gradient, where `F` is the Fisher
/// matrix of the policy at the current parameters; the step is scaled to the
/// trust-region boundary and backed off geometrically until both the KL
/// bound and surrogate non-decrease hold. If no candidate passes, the policy
/// is left untouched.
pub fn trpo_step(
    policy: &mut GaussianPolicy,
    batch: &TrpoBatch,
    config: &TrustRegionConfig,
) -> Result<TrpoDiagnostics> {
    config.validate()?;
    let n = batch.states.rows();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let ad = policy.action_dim();
    let (old_means, cache) = policy.mean_net.forward_cached(&batch.states)?;
    let old_log_std = policy.log_std.clone();
    let old_std: Vec<f64> = old_log_std.iter().map(|v| v.exp()).collect();
    let old_log_probs: Vec<f64> = (0..n)
        .map(|t| {
            let mean: Vec<f64> = (0..ad).map(|i| old_means.at(t, i)).collect();
            let act: Vec<f64> = (0..ad).map(|i| batch.raw_actions.at(t, i)).collect();
            log_prob_given_mean(&mean, &old_log_std, &act)
        })
        .collect();

    // Surrogate gradient at the current parameters:
    // d/d mu = A (a - mu) / sigma^2, d/d log-std = A (z^2 - 1), averaged.
    let mut mean_cot = DenseArray::zeros(&[n, ad]);
    let mut g_log_std = vec![0.0; ad];
    for t in 0..n {
        let w = batch.advantages[t] / n as f64;
        for i in 0..ad {
            let z = (batch.raw_actions.at(t, i) - old_means.at(t, i)) / old_std[i];
            mean_cot.set(t, i, w * z / old_std[i]);
            g_log_std[i] += w * (z * z - 1.0);
        }
    }
    let (mean_grads, _) = policy.mean_net.backward(&cache, &mean_cot)?;
    let mut g = flatten_arrays(&mean_grads);
    g.extend_from_slice(&g_log_std);
    if !g.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: "trpo_step gradient",
        });
    }
    let unchanged = TrpoDiagnostics {
        accepted: false,
        surrogate_change: 0.0,
        kl: 0.0,
        line_search_depth: 0,
        nonfinite_candidates: 0,
    };
    if dot(&g, &g).sqrt() < 1e-12 {
        return Ok(unchanged);
    }

    // Damped Fisher-vector product; the Fisher for a diagonal Gaussian with
    // state-independent log-std splits into a Gauss-Newton mean block
    // (J^T diag(1/sigma^2) J averaged over states) and a constant 2 per
    // log-std coordinate.
    let template: Vec<DenseArray> = policy.mean_net.params().to_vec();
    let n_net = policy.mean_net.param_count();
    let fisher = |v: &[f64]| -> Vec<f64> {
        let tangent = unflatten_like(&template, &v[..n_net]).expect("layout fixed");
        let ju = policy.mean_net.jvp(&cache, &tangent).expect("shapes fixed");
        let mut scaled = DenseArray::zeros(&[n, ad]);
        for t in 0..n {
            for i in 0..ad {
                scaled.set(t, i, ju.at(t, i) / (old_std[i] * old_std[i] * n as f64));
            }
        }
        let (grads, _) = policy.mean_net.backward(&cache, &scaled).expect("shapes fixed");
        let mut out = flatten_arrays(&grads);
        out.extend(v[n_net..].iter().map(|lv| 2.0 * lv));
        for (o, vi) in out.iter_mut().zip(v) {
            *o += config.cg_damping * vi;
        }
        out
    };
    let cg = conjugate_gradient(&fisher, &g, config.cg_iters, 1e-10)?;
    let x = cg.x;
    let xfx = dot(&x, &fisher(&x));
    if !(xfx.is_finite() && xfx > 0.0) {
        return Ok(unchanged);
    }
    let full_scale = (2.0 * config.max_kl / xfx).sqrt();

    let theta_old = policy.flat_params();
    let surrogate = |candidate: &GaussianPolicy| -> Result<(f64, f64)> {
        let means = candidate.mean_net.forward(&batch.states)?;
        let new_log_std = &candidate.log_std;
        let mut surr = 0.0;
        let mut kl = 0.0;
        for t in 0..n {
            let mean: Vec<f64> = (0..ad).map(|i| means.at(t, i)).collect();
            let act: Vec<f64> = (0..ad).map(|i| batch.raw_actions.at(t, i)).collect();
            let lp = log_prob_given_mean(&mean, new_log_std, &act);
            surr += (lp - old_log_probs[t]).exp() * batch.advantages[t];
            for i in 0..ad {
                let so2 = old_std[i] * old_std[i];
                let sn = new_log_std[i].exp();
                let dm = old_means.at(t, i) - mean[i];
                kl += new_log_std[i] - old_log_std[i] + (so2 + dm * dm) / (2.0 * sn * sn) - 0.5;
            }
        }
        Ok((surr / n as f64, kl / n as f64))
    };
    // Ratios are 1 at the old parameters, so the reference surrogate is the
    // advantage mean.
    let surr_old = batch.advantages.iter().sum::<f64>() / n as f64;

    let mut nonfinite = 0usize;
    for depth in 0..=config.backtrack_steps {
        let scale = full_scale * config.backtrack_coef.powi(depth as i32);
        let theta: Vec<f64> = theta_old.iter().zip(&x).map(|(t, d)| t + scale * d).collect();
        let candidate = policy.with_flat_params(&theta)?;
        let (surr, kl) = surrogate(&candidate)?;
        if !surr.is_finite() || !kl.is_finite() {
            nonfinite += 1;
            continue;
        }
        let improvement = surr - surr_old;
        if kl <= config.max_kl && improvement >= 0.0 {
            *policy = candidate;
            return Ok(TrpoDiagnostics {
                accepted: true,
                surrogate_change: improvement,
                kl,
                line_search_depth: depth,
                nonfinite_candidates: nonfinite,
            });
        }
    }
    Ok(TrpoDiagnostics {
        nonfinite_candidates: nonfinite,
        ..unchanged
    })
}

/// Mean KL(old || new) over a state batch between two policies of the same
/// architecture. Exposed for diagnostics and tests.
pub fn empirical_kl(
    old: &GaussianPolicy,
    new: &GaussianPolicy,
    states: &DenseArray,
) -> Result<f64> {
    let n = states.rows();
    let ad = old.action_dim();
    let mo = old.mean_net.forward(states)?;
    let mn = new.mean_net.forward(states)?;
    let mut kl = 0.0;
    for t in 0..n {
        for i in 0..ad {
            let so = old.log_std[i].exp();
            let sn = new.log_std[i].exp();
            let dm = mo.at(t, i) - mn.at(t, i);
            kl += new.log_std[i] - old.log_std[i] + (so * so + dm * dm) / (2.0 * sn * sn) - 0.5;
        }
    }
    Ok(kl / n as f64)
}

//! Learned dynamics model: input/output normalization, next-state
//! prediction as a state difference, the multi-step prediction loss with
//! backpropagation through the rolled-out predictions, and Adam fitting on
//! windows sampled from the transition dataset.

use rand::Rng;

use crate::envs::Transition;
use crate::error::{Error, Result};
use crate::ndmath::{
    read_array_block, write_array_block, AdamConfig, AdamState, DenseArray, Mlp, PARAM_MAGIC,
};

pub const DATASET_MAGIC: &[u8; 8] = b"METALDS1";

/// Per-coordinate mean/std for states, actions, and one-step state
/// differences, recomputed from real transitions only. Stds are floored at
/// 1e-6 so normalization never divides by zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub action_mean: Vec<f64>,
    pub action_std: Vec<f64>,
    pub diff_mean: Vec<f64>,
    pub diff_std: Vec<f64>,
    pub count: u64,
}

const STD_FLOOR: f64 = 1e-6;

impl Normalizer {
    /// Mean 0, std 1: normalization and denormalization are identities.
    pub fn identity(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state_mean: vec![0.0; state_dim],
            state_std: vec![1.0; state_dim],
            action_mean: vec![0.0; action_dim],
            action_std: vec![1.0; action_dim],
            diff_mean: vec![0.0; state_dim],
            diff_std: vec![1.0; state_dim],
            count: 0,
        }
    }

    /// Full recomputation over the dataset (population std). Deterministic
    /// and independent of insertion order given the same contents.
    pub fn recompute(&mut self, data: &TransitionDataset) {
        let n = data.len();
        if n == 0 {
            return;
        }
        let (sd, ad) = (data.state_dim, data.action_dim);
        let mut acc = Stats::new(sd, ad);
        for tr in data.iter_transitions() {
            acc.add(tr);
        }
        let nf = n as f64;
        let finish = |sum: Vec<f64>, sq: Vec<f64>| -> (Vec<f64>, Vec<f64>) {
            let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
            let std = sq
                .iter()
                .zip(&mean)
                .map(|(q, m)| ((q / nf - m * m).max(0.0)).sqrt().max(STD_FLOOR))
                .collect();
            (mean, std)
        };
        (self.state_mean, self.state_std) = finish(acc.s_sum, acc.s_sq);
        (self.action_mean, self.action_std) = finish(acc.a_sum, acc.a_sq);
        (self.diff_mean, self.diff_std) = finish(acc.d_sum, acc.d_sq);
        self.count = n as u64;
    }

    pub fn normalize_input(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(state.len() + action.len());
        for ((v, m), s) in state.iter().zip(&self.state_mean).zip(&self.state_std) {
            x.push((v - m) / s);
        }
        for ((v, m), s) in action.iter().zip(&self.action_mean).zip(&self.action_std) {
            x.push((v - m) / s);
        }
        x
    }

    pub fn denormalize_diff(&self, out: &[f64]) -> Vec<f64> {
        out.iter()
            .zip(&self.diff_std)
            .zip(&self.diff_mean)
            .map(|((o, s), m)| o * s + m)
            .collect()
    }

    fn arrays(&self) -> [DenseArray; 6] {
        let v = |d: &[f64]| DenseArray::from_vec(&[d.len()], d.to_vec()).unwrap();
        [
            v(&self.state_mean),
            v(&self.state_std),
            v(&self.action_mean),
            v(&self.action_std),
            v(&self.diff_mean),
            v(&self.diff_std),
        ]
    }

    fn from_arrays(arrays: &[DenseArray], count: u64) -> Result<Self> {
        if arrays.len() != 6 {
            return Err(Error::Format(format!(
                "normalizer needs 6 arrays, got {}",
                arrays.len()
            )));
        }
        let sd = arrays[0].len();
        let ad = arrays[2].len();
        for (i, dim) in [(0, sd), (1, sd), (2, ad), (3, ad), (4, sd), (5, sd)] {
            if arrays[i].len() != dim {
                return Err(Error::Format("inconsistent normalizer array sizes".into()));
            }
        }
        Ok(Self {
            state_mean: arrays[0].data().to_vec(),
            state_std: arrays[1].data().to_vec(),
            action_mean: arrays[2].data().to_vec(),
            action_std: arrays[3].data().to_vec(),
            diff_mean: arrays[4].data().to_vec(),
            diff_std: arrays[5].data().to_vec(),
            count,
        })
    }
}

struct Stats {
    s_sum: Vec<f64>,
    s_sq: Vec<f64>,
    a_sum: Vec<f64>,
    a_sq: Vec<f64>,
    d_sum: Vec<f64>,
    d_sq: Vec<f64>,
}

impl Stats {
    fn new(sd: usize, ad: usize) -> Self {
        Self {
            s_sum: vec![0.0; sd],
            s_sq: vec![0.0; sd],
            a_sum: vec![0.0; ad],
            a_sq: vec![0.0; ad],
            d_sum: vec![0.0; sd],
            d_sq: vec![0.0; sd],
        }
    }

    fn add(&mut self, tr: &Transition) {
        for (i, &v) in tr.state.iter().enumerate() {
            self.s_sum[i] += v;
            self.s_sq[i] += v * v;
        }
        for (i, &v) in tr.action.iter().enumerate() {
            self.a_sum[i] += v;
            self.a_sq[i] += v * v;
        }
        for (i, (&nv, &v)) in tr.next_state.iter().zip(&tr.state).enumerate() {
            let d = nv - v;
            self.d_sum[i] += d;
            self.d_sq[i] += d * d;
        }
    }
}

/// The learned model: a network mapping normalized `(s, a)` to a normalized
/// state difference, so prediction is `s + denormalize(net(normalize(s, a)))`
/// and an untrained (zero or small-weight) network stays near the identity.
#[derive(Debug, Clone)]
pub struct DynamicsModel {
    net: Mlp,
    pub normalizer: Normalizer,
    adam: AdamState,
    pub state_dim: usize,
    pub action_dim: usize,
}

impl DynamicsModel {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        adam_cfg: AdamConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut widths = vec![state_dim + action_dim];
        widths.extend_from_slice(hidden);
        widths.push(state_dim);
        let net = Mlp::init(&widths, rng)?;
        let adam = AdamState::new(net.params(), adam_cfg);
        Ok(Self {
            net,
            normalizer: Normalizer::identity(state_dim, action_dim),
            adam,
            state_dim,
            action_dim,
        })
    }

    /// All-zero weights: predicts exactly `s' = s` under the identity
    /// normalizer. Used by tests and as a degenerate baseline.
    pub fn zeroed(state_dim: usize, action_dim: usize, hidden: &[usize]) -> Result<Self> {
        let mut widths = vec![state_dim + action_dim];
        widths.extend_from_slice(hidden);
        widths.push(state_dim);
        let net = Mlp::zeros(&widths)?;
        let adam = AdamState::new(net.params(), AdamConfig::default());
        Ok(Self {
            net,
            normalizer: Normalizer::identity(state_dim, action_dim),
            adam,
            state_dim,
            action_dim,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn predict(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.state_dim || action.len() != self.action_dim {
            return Err(Error::ShapeMismatch {
                context: "DynamicsModel::predict",
                expected: format!("state {} action {}", self.state_dim, self.action_dim),
                got: format!("state {} action {}", state.len(), action.len()),
            });
        }
        let x = DenseArray::from_vec(
            &[self.state_dim + self.action_dim],
            self.normalizer.normalize_input(state, action),
        )?;
        let out = self.net.forward(&x)?;
        let diff = self.normalizer.denormalize_diff(out.data());
        let next: Vec<f64> = state.iter().zip(&diff).map(|(s, d)| s + d).collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "DynamicsModel::predict",
            });
        }
        Ok(next)
    }

    /// Mean multi-step prediction error of this model on one window.
    pub fn k_step_loss(&self, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<f64> {
        let model = self.clone();
        k_step_loss_with(
            move |s, a| model.predict(s, a).unwrap_or_else(|_| vec![f64::NAN; s.len()]),
            states,
            actions,
        )
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut arrays: Vec<&DenseArray> = self.net.params().iter().collect();
        let norm = self.normalizer.arrays();
        arrays.extend(norm.iter());
        let (m, v, t) = self.adam.moments();
        arrays.extend(m.iter());
        arrays.extend(v.iter());
        let meta =
            DenseArray::from_vec(&[2], vec![self.normalizer.count as f64, t as f64]).unwrap();
        arrays.push(&meta);
        let mut buf = Vec::new();
        write_array_block(&mut buf, PARAM_MAGIC, &arrays);
        crate::fsutil::atomic_write(path, &buf)
    }

    pub fn load(path: &std::path::Path, adam_cfg: AdamConfig) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let arrays = read_array_block(&bytes, PARAM_MAGIC)?;
        // Layout: 2L net params, 6 normalizer arrays, 2L + 2L Adam moments,
        // 1 meta array, hence 6L + 7 arrays total.
        if arrays.len() < 13 || (arrays.len() - 7) % 6 != 0 {
            return Err(Error::Format(format!(
                "model checkpoint has {} arrays, expected 6L + 7",
                arrays.len()
            )));
        }
        let l = (arrays.len() - 7) / 6;
        let net_params = &arrays[..2 * l];
        let norm_arrays = &arrays[2 * l..2 * l + 6];
        let m = arrays[2 * l + 6..4 * l + 6].to_vec();
        let v = arrays[4 * l + 6..6 * l + 6].to_vec();
        let meta = &arrays[6 * l + 6];
        if meta.len() != 2 {
            return Err(Error::Format("model checkpoint meta array malformed".into()));
        }
        let mut widths = vec![net_params[0].shape()[1]];
        for i in 0..l {
            let w = &net_params[2 * i];
            if w.rank() != 2 || w.shape()[1] != widths[i] {
                return Err(Error::Format("model checkpoint layer shapes inconsistent".into()));
            }
            widths.push(w.shape()[0]);
        }
        let mut net = Mlp::zeros(&widths)?;
        net.set_params(net_params)?;
        let state_dim = *widths.last().unwrap();
        let action_dim = widths[0] - state_dim;
        if widths[0] <= state_dim {
            return Err(Error::Format(
                "model checkpoint input width not larger than output width".into(),
            ));
        }
        let normalizer = Normalizer::from_arrays(norm_arrays, meta.data()[0] as u64)?;
        if normalizer.state_mean.len() != state_dim || normalizer.action_mean.len() != action_dim {
            return Err(Error::Format("normalizer dims disagree with network".into()));
        }
        let adam = AdamState::from_moments(adam_cfg, m, v, meta.data()[1] as u64)?;
        Ok(Self {
            net,
            normalizer,
            adam,
            state_dim,
            action_dim,
        })
    }
}

/// Multi-step prediction error for any one-step predictor: predictions are
/// rolled forward from the first state through the predictor itself, and the
/// per-step Euclidean errors (unsquared) are averaged:
/// `(1/k) * sum_i |shat_{t+i} - s_{t+i}|_2`.
pub fn k_step_loss_with<F>(predict: F, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<f64>
where
    F: Fn(&[f64], &[f64]) -> Vec<f64>,
{
    let k = actions.len();
    if k == 0 || states.len() != k + 1 {
        return Err(Error::SegmentTooShort {
            needed: k + 1,
            got: states.len(),
        });
    }
    let mut shat = states[0].clone();
    let mut total = 0.0;
    for i in 0..k {
        shat = predict(&shat, &actions[i]);
        let err: f64 = shat
            .iter()
            .zip(&states[i + 1])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        total += err;
    }
    Ok(total / k as f64)
}

/// Append-only store of real transitions, grouped into time-contiguous
/// segments so multi-step windows never straddle an episode boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    pub state_dim: usize,
    pub action_dim: usize,
    segments: Vec<Segment>,
    total: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Segment {
    transitions: Vec<Transition>,
    task_id: u64,
    variant_id: u64,
}

impl TransitionDataset {
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            segments: Vec::new(),
            total: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn n_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn iter_transitions(&self) -> impl Iterator<Item = &Transition> {
        self.segments.iter().flat_map(|s| s.transitions.iter())
    }

    /// Appends one contiguous trajectory segment. Each transition's next
    /// state must be the following transition's state.
    pub fn append_segment(
        &mut self,
        transitions: Vec<Transition>,
        task_id: u64,
        variant_id: u64,
    ) -> Result<()> {
        if transitions.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for tr in &transitions {
            if tr.state.len() != self.state_dim
                || tr.next_state.len() != self.state_dim
                || tr.action.len() != self.action_dim
            {
                return Err(Error::ShapeMismatch {
                    context: "TransitionDataset::append_segment",
                    expected: format!("state {} action {}", self.state_dim, self.action_dim),
                    got: format!("state {} action {}", tr.state.len(), tr.action.len()),
                });
            }
            if !tr.reward.is_finite()
                || tr.state.iter().chain(&tr.next_state).any(|v| !v.is_finite())
            {
                return Err(Error::NonFinite {
                    context: "TransitionDataset::append_segment",
                });
            }
        }
        for pair in transitions.windows(2) {
            if pair[0].next_state != pair[1].state {
                return Err(Error::InvalidConfig(
                    "segment transitions are not time-contiguous".into(),
                ));
            }
        }
        self.total += transitions.len();
        self.segments.push(Segment {
            transitions,
            task_id,
            variant_id,
        });
        Ok(())
    }

    /// Number of distinct k-step windows (k consecutive transitions within
    /// one segment).
    pub fn window_count(&self, k: usize) -> usize {
        self.segments
            .iter()
            .map(|s| s.transitions.len().saturating_sub(k - 1))
            .sum()
    }

    /// Uniformly samples `batch` k-step windows (with replacement) into
    /// batch-major arrays: start states, then per-step actions and target
    /// states.
    pub fn sample_windows<R: Rng + ?Sized>(
        &self,
        k: usize,
        batch: usize,
        rng: &mut R,
    ) -> Result<KStepBatch> {
        let total = self.window_count(k);
        if total == 0 {
            return Err(Error::SegmentTooShort {
                needed: k,
                got: self.segments.iter().map(|s| s.transitions.len()).max().unwrap_or(0),
            });
        }
        let mut start = DenseArray::zeros(&[batch, self.state_dim]);
        let mut actions = vec![DenseArray::zeros(&[batch, self.action_dim]); k];
        let mut targets = vec![DenseArray::zeros(&[batch, self.state_dim]); k];
        for b in 0..batch {
            let mut idx = rng.random_range(0..total);
            let mut picked = None;
            for seg in &self.segments {
                let windows = seg.transitions.len().saturating_sub(k - 1);
                if idx < windows {
                    picked = Some((seg, idx));
                    break;
                }
                idx -= windows;
            }
            let (seg, t0) = picked.expect("index within summed window count");
            for (j, v) in seg.transitions[t0].state.iter().enumerate() {
                start.set(b, j, *v);
            }
            for i in 0..k {
                let tr = &seg.transitions[t0 + i];
                for (j, v) in tr.action.iter().enumerate() {
                    actions[i].set(b, j, *v);
                }
                for (j, v) in tr.next_state.iter().enumerate() {
                    targets[i].set(b, j, *v);
                }
            }
        }
        Ok(KStepBatch {
            start,
            actions,
            targets,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(DATASET_MAGIC);
        for v in [
            self.state_dim as u64,
            self.action_dim as u64,
            self.segments.len() as u64,
        ] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for seg in &self.segments {
            buf.extend_from_slice(&(seg.transitions.len() as u64).to_le_bytes());
            for tr in &seg.transitions {
                for v in tr.state.iter().chain(&tr.action).chain(&tr.next_state) {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                buf.extend_from_slice(&tr.reward.to_le_bytes());
                buf.extend_from_slice(&(tr.t as u64).to_le_bytes());
                buf.extend_from_slice(&seg.task_id.to_le_bytes());
                buf.extend_from_slice(&seg.variant_id.to_le_bytes());
            }
        }
        crate::fsutil::atomic_write(path, &buf)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::Format(format!(
                    "dataset file truncated at offset {pos}",
                    pos = *pos
                )));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let magic = take(&mut pos, 8)?;
        if magic != DATASET_MAGIC {
            return Err(Error::Format(format!(
                "bad dataset magic {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        let u64_at = |pos: &mut usize| -> Result<u64> {
            Ok(u64::from_le_bytes(take(pos, 8)?.try_into().unwrap()))
        };
        let state_dim = u64_at(&mut pos)? as usize;
        let action_dim = u64_at(&mut pos)? as usize;
        let n_segments = u64_at(&mut pos)? as usize;
        if state_dim == 0 || state_dim > 64 || action_dim == 0 || action_dim > 64 {
            return Err(Error::Format("implausible dataset dimensions".into()));
        }
        let mut out = Self::new(state_dim, action_dim);
        for _ in 0..n_segments {
            let len = u64_at(&mut pos)? as usize;
            let mut transitions = Vec::with_capacity(len);
            let mut ids = None;
            for _ in 0..len {
                let f64s = |pos: &mut usize, n: usize| -> Result<Vec<f64>> {
                    let mut v = Vec::with_capacity(n);
                    for _ in 0..n {
                        v.push(f64::from_le_bytes(take(pos, 8)?.try_into().unwrap()));
                    }
                    Ok(v)
                };
                let state = f64s(&mut pos, state_dim)?;
                let action = f64s(&mut pos, action_dim)?;
                let next_state = f64s(&mut pos, state_dim)?;
                let reward = f64s(&mut pos, 1)?[0];
                let t = u64_at(&mut pos)? as usize;
                let task_id = u64_at(&mut pos)?;
                let variant_id = u64_at(&mut pos)?;
                match ids {
                    None => ids = Some((task_id, variant_id)),
                    Some(pair) if pair != (task_id, variant_id) => {
                        return Err(Error::Format(
                            "segment mixes task or variant ids".into(),
                        ));
                    }
                    _ => {}
                }
                transitions.push(Transition {
                    state,
                    action,
                    next_state,
                    reward,
                    t,
                });
            }
            let (task_id, variant_id) = ids.ok_or(Error::EmptyDataset)?;
            out.append_segment(transitions, task_id, variant_id)?;
        }
        if pos != bytes.len() {
            return Err(Error::Format("trailing bytes after last segment".into()));
        }
        Ok(out)
    }
}

/// Batch of k-step windows in array form.
pub struct KStepBatch {
    pub start: DenseArray,
    pub actions: Vec<DenseArray>,
    pub targets: Vec<DenseArray>,
}

/// Batched loss and parameter gradient for one window batch, differentiating
/// through all k prediction steps (the predicted state feeds the next step).
fn k_step_loss_grad(model: &DynamicsModel, batch: &KStepBatch) -> Result<(f64, Vec<DenseArray>)> {
    let k = batch.actions.len();
    let b = batch.start.rows();
    let (sd, ad) = (model.state_dim, model.action_dim);
    let norm = &model.normalizer;

    // Forward: roll predictions, caching activations per step.
    let mut shat = batch.start.clone();
    let mut caches = Vec::with_capacity(k);
    let mut preds = Vec::with_capacity(k);
    for i in 0..k {
        let mut x = DenseArray::zeros(&[b, sd + ad]);
        for r in 0..b {
            for c in 0..sd {
                x.set(r, c, (shat.at(r, c) - norm.state_mean[c]) / norm.state_std[c]);
            }
            for c in 0..ad {
                x.set(
                    r,
                    sd + c,
                    (batch.actions[i].at(r, c) - norm.action_mean[c]) / norm.action_std[c],
                );
            }
        }
        let (out, cache) = model.net.forward_cached(&x)?;
        let mut next = shat.clone();
        for r in 0..b {
            for c in 0..sd {
                let d = out.at(r, c) * norm.diff_std[c] + norm.diff_mean[c];
                next.set(r, c, shat.at(r, c) + d);
            }
        }
        caches.push(cache);
        preds.push(next.clone());
        shat = next;
    }

    // Loss: mean over batch of (1/k) * sum_i |e_i|_2, e_i unsquared.
    let scale = 1.0 / (b as f64 * k as f64);
    let mut loss = 0.0;
    let mut err_norms = vec![vec![0.0; b]; k];
    for i in 0..k {
        for r in 0..b {
            let mut sq = 0.0;
            for c in 0..sd {
                let e = preds[i].at(r, c) - batch.targets[i].at(r, c);
                sq += e * e;
            }
            let nrm = sq.sqrt();
            err_norms[i][r] = nrm;
            loss += nrm * scale;
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "k_step_loss_grad",
        });
    }

    // Backward through the prediction chain.
    let mut grads = model.net.zeros_like_params();
    let mut cot_shat = DenseArray::zeros(&[b, sd]); // d loss / d shat_{i+1}
    for i in (0..k).rev() {
        // Direct term: d|e|/de = e / |e| (zero when |e| = 0).
        for r in 0..b {
            let nrm = err_norms[i][r];
            if nrm > 1e-12 {
                for c in 0..sd {
                    let e = preds[i].at(r, c) - batch.targets[i].at(r, c);
                    let v = cot_shat.at(r, c) + scale * e / nrm;
                    cot_shat.set(r, c, v);
                }
            }
        }
        // Through denormalization into the network output.
        let mut cot_out = DenseArray::zeros(&[b, sd]);
        for r in 0..b {
            for c in 0..sd {
                cot_out.set(r, c, cot_shat.at(r, c) * norm.diff_std[c]);
            }
        }
        let (step_grads, cot_x) = model.net.backward(&caches[i], &cot_out)?;
        for (g, sg) in grads.iter_mut().zip(&step_grads) {
            for (gv, sv) in g.data_mut().iter_mut().zip(sg.data()) {
                *gv += sv;
            }
        }
        // d shat_i = carry through the identity path plus the normalized
        // state slice of the network input.
        let mut prev = DenseArray::zeros(&[b, sd]);
        for r in 0..b {
            for c in 0..sd {
                prev.set(
                    r,
                    c,
                    cot_shat.at(r, c) + cot_x.at(r, c) / norm.state_std[c],
                );
            }
        }
        cot_shat = prev;
    }
    Ok((loss, grads))
}

/// Runs `n_steps` Adam updates on batches of uniformly sampled k-step
/// windows, refreshing the normalizer from the dataset first (it stays
/// frozen within the call). Returns the per-step loss trace.
pub fn train_model<R: Rng + ?Sized>(
    model: &mut DynamicsModel,
    data: &TransitionDataset,
    n_steps: usize,
    k: usize,
    batch: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if k == 0 || batch == 0 {
        return Err(Error::InvalidConfig("k and batch size must be positive".into()));
    }
    model.normalizer.recompute(data);
    let mut trace = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let windows = data.sample_windows(k, batch, rng)?;
        let (loss, grads) = k_step_loss_grad(model, &windows)?;
        let (net, adam) = (&mut model.net, &mut model.adam);
        adam.step(net.params_mut(), &grads)?;
        trace.push(loss);
    }
    Ok(trace)
}

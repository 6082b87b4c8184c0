//! Adam optimizer over lists of parameter arrays.

use super::DenseArray;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators, one pair per parameter array.
#[derive(Debug, Clone)]
pub struct AdamState {
    cfg: AdamConfig,
    step: u64,
    m: Vec<DenseArray>,
    v: Vec<DenseArray>,
}

impl AdamState {
    pub fn new(template: &[DenseArray], cfg: AdamConfig) -> Self {
        let zeros = |t: &[DenseArray]| t.iter().map(|a| DenseArray::zeros(a.shape())).collect();
        Self {
            cfg,
            step: 0,
            m: zeros(template),
            v: zeros(template),
        }
    }

    /// Restores accumulators saved by `moments`, e.g. when resuming from a
    /// checkpoint.
    pub fn from_moments(
        cfg: AdamConfig,
        m: Vec<DenseArray>,
        v: Vec<DenseArray>,
        step: u64,
    ) -> Result<Self> {
        if m.len() != v.len()
            || m.iter().zip(&v).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::ShapeMismatch {
                context: "AdamState::from_moments",
                expected: "matching m/v array shapes".into(),
                got: format!("{} m arrays, {} v arrays", m.len(), v.len()),
            });
        }
        Ok(Self { cfg, step, m, v })
    }

    pub fn moments(&self) -> (&[DenseArray], &[DenseArray], u64) {
        (&self.m, &self.v, self.step)
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    /// One bias-corrected update in place. Gradients must be finite and
    /// shaped like the parameters.
    pub fn step(&mut self, params: &mut [DenseArray], grads: &[DenseArray]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                context: "AdamState::step",
                expected: format!("{} arrays", self.m.len()),
                got: format!("{} params, {} grads", params.len(), grads.len()),
            });
        }
        for g in grads {
            g.check_finite("AdamState::step gradient")?;
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.cfg.beta1.powi(t);
        let c2 = 1.0 - self.cfg.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            debug_assert_eq!(p.shape(), g.shape());
            for ((pv, &gv), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mv = self.cfg.beta1 * *mv + (1.0 - self.cfg.beta1) * gv;
                *vv = self.cfg.beta2 * *vv + (1.0 - self.cfg.beta2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= self.cfg.lr * mhat / (vhat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}

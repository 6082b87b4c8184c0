//! Fully connected network with ReLU hidden layers and a linear output
//! layer, plus reverse-mode (cotangent) and forward-mode (tangent)
//! derivative propagation. All math is plain f64 on row-major batches.

use rand::Rng;

use super::{matmul_nn, matmul_nt, matmul_tn, DenseArray};
use crate::error::{Error, Result};

/// Parameters are stored as `[w0, b0, w1, b1, ...]` where layer `i` maps
/// `widths[i] -> widths[i+1]`, `w` has shape `(out, in)` and `b` shape `(out,)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    params: Vec<DenseArray>,
}

/// Post-activation values of every layer for one forward pass.
/// `activations[0]` is the input batch; `activations[i + 1]` is the output
/// of layer `i` (after ReLU for hidden layers).
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<DenseArray>,
}

impl ForwardCache {
    pub fn output(&self) -> &DenseArray {
        self.activations.last().expect("cache holds >= 2 arrays")
    }

    pub fn batch_len(&self) -> usize {
        self.activations[0].rows()
    }
}

impl Mlp {
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        check_widths(widths)?;
        let mut params = Vec::with_capacity(2 * (widths.len() - 1));
        for pair in widths.windows(2) {
            params.push(DenseArray::zeros(&[pair[1], pair[0]]));
            params.push(DenseArray::zeros(&[pair[1]]));
        }
        Ok(Self {
            widths: widths.to_vec(),
            params,
        })
    }

    /// Uniform init in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(widths)?;
        for (i, pair) in net.widths.to_vec().windows(2).enumerate() {
            let bound = (6.0 / (pair[0] + pair[1]) as f64).sqrt();
            for w in net.params[2 * i].data_mut() {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn params(&self) -> &[DenseArray] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [DenseArray] {
        &mut self.params
    }

    pub fn zeros_like_params(&self) -> Vec<DenseArray> {
        self.params
            .iter()
            .map(|p| DenseArray::zeros(p.shape()))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(DenseArray::len).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        super::flatten_arrays(&self.params)
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        self.params = super::unflatten_like(&self.params, flat)?;
        Ok(())
    }

    /// Replaces parameters with `arrays`; shapes must match exactly.
    pub fn set_params(&mut self, arrays: &[DenseArray]) -> Result<()> {
        if arrays.len() != self.params.len()
            || arrays
                .iter()
                .zip(&self.params)
                .any(|(a, p)| a.shape() != p.shape())
        {
            return Err(Error::ShapeMismatch {
                context: "Mlp::set_params",
                expected: format!("{:?}", self.params.iter().map(|p| p.shape()).collect::<Vec<_>>()),
                got: format!("{:?}", arrays.iter().map(|p| p.shape()).collect::<Vec<_>>()),
            });
        }
        self.params = arrays.to_vec();
        Ok(())
    }

    /// Runs the network on a rank-1 input or a rank-2 batch; the output has
    /// the same rank as the input.
    pub fn forward(&self, input: &DenseArray) -> Result<DenseArray> {
        let rank1 = input.rank() == 1;
        let (out, _) = self.forward_cached(input)?;
        if rank1 {
            out.reshape(&[self.output_dim()])
        } else {
            Ok(out)
        }
    }

    /// Forward pass that keeps per-layer activations for later backward or
    /// tangent passes. Output is always rank 2.
    pub fn forward_cached(&self, input: &DenseArray) -> Result<(DenseArray, ForwardCache)> {
        let batch = as_batch(input, self.input_dim(), "Mlp::forward")?;
        let l = self.n_layers();
        let mut activations = Vec::with_capacity(l + 1);
        activations.push(batch);
        for i in 0..l {
            let w = &self.params[2 * i];
            let b = &self.params[2 * i + 1];
            let mut z = matmul_nt(activations.last().unwrap(), w);
            add_bias_rows(&mut z, b);
            if i + 1 < l {
                for v in z.data_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            activations.push(z);
        }
        let out = activations.last().unwrap().clone();
        Ok((out, ForwardCache { activations }))
    }

    /// Reverse-mode pass: given `d loss / d output` for the cached batch,
    /// returns per-parameter gradients (same layout as `params`) and
    /// `d loss / d input`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        out_cotangent: &DenseArray,
    ) -> Result<(Vec<DenseArray>, DenseArray)> {
        let l = self.n_layers();
        let last = cache.activations.last().unwrap();
        if out_cotangent.shape() != last.shape() {
            return Err(Error::ShapeMismatch {
                context: "Mlp::backward",
                expected: format!("{:?}", last.shape()),
                got: format!("{:?}", out_cotangent.shape()),
            });
        }
        let mut grads_rev = Vec::with_capacity(2 * l);
        let mut cot = out_cotangent.clone();
        for i in (0..l).rev() {
            if i + 1 < l {
                // Hidden layer: gate by ReLU activity (post-activation > 0).
                let mask_src = &cache.activations[i + 1];
                for (c, &a) in cot.data_mut().iter_mut().zip(mask_src.data()) {
                    if a <= 0.0 {
                        *c = 0.0;
                    }
                }
            }
            let act_in = &cache.activations[i];
            let gw = matmul_tn(&cot, act_in);
            let gb = column_sums(&cot);
            let next_cot = matmul_nn(&cot, &self.params[2 * i]);
            grads_rev.push(gb);
            grads_rev.push(gw);
            cot = next_cot;
        }
        grads_rev.reverse();
        Ok((grads_rev, cot))
    }

    /// Forward-mode pass: directional derivative of the output with respect
    /// to parameters, along `tangent` (same layout as `params`), holding the
    /// input fixed. Reuses the activations of a cached forward pass.
    pub fn jvp(&self, cache: &ForwardCache, tangent: &[DenseArray]) -> Result<DenseArray> {
        if tangent.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                context: "Mlp::jvp",
                expected: format!("{} arrays", self.params.len()),
                got: format!("{}", tangent.len()),
            });
        }
        let l = self.n_layers();
        let n = cache.batch_len();
        let mut u: Option<DenseArray> = None;
        for i in 0..l {
            let tw = &tangent[2 * i];
            let tb = &tangent[2 * i + 1];
            let act_in = &cache.activations[i];
            let mut t_z = matmul_nt(act_in, tw);
            add_bias_rows(&mut t_z, tb);
            if let Some(prev) = &u {
                let carry = matmul_nt(prev, &self.params[2 * i]);
                for (z, c) in t_z.data_mut().iter_mut().zip(carry.data()) {
                    *z += c;
                }
            }
            if i + 1 < l {
                let mask_src = &cache.activations[i + 1];
                for (z, &a) in t_z.data_mut().iter_mut().zip(mask_src.data()) {
                    if a <= 0.0 {
                        *z = 0.0;
                    }
                }
            }
            u = Some(t_z);
        }
        debug_assert_eq!(u.as_ref().map(DenseArray::rows), Some(n));
        Ok(u.expect("at least one layer"))
    }

    /// Convenience wrapper: forward, then backward from a caller-supplied
    /// scalar loss with its output cotangent. Rejects non-finite losses.
    pub fn gradients<F>(&self, input: &DenseArray, loss: F) -> Result<(f64, Vec<DenseArray>)>
    where
        F: FnOnce(&DenseArray) -> (f64, DenseArray),
    {
        let (out, cache) = self.forward_cached(input)?;
        let (value, cot) = loss(&out);
        if !value.is_finite() {
            return Err(Error::NonFinite {
                context: "Mlp::gradients loss",
            });
        }
        let (grads, _) = self.backward(&cache, &cot)?;
        Ok((value, grads))
    }
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::InvalidConfig(format!(
            "network widths must list input, hidden..., output with all sizes positive, got {widths:?}"
        )));
    }
    Ok(())
}

fn as_batch(input: &DenseArray, dim: usize, context: &'static str) -> Result<DenseArray> {
    let ok = match input.rank() {
        1 => input.len() == dim,
        2 => input.cols() == dim,
        _ => false,
    };
    if !ok {
        return Err(Error::ShapeMismatch {
            context,
            expected: format!("(*, {dim}) or ({dim},)"),
            got: format!("{:?}", input.shape()),
        });
    }
    if input.rank() == 1 {
        input.clone().reshape(&[1, dim])
    } else {
        Ok(input.clone())
    }
}

fn add_bias_rows(z: &mut DenseArray, b: &DenseArray) {
    let cols = z.cols();
    debug_assert_eq!(cols, b.len());
    for row in z.data_mut().chunks_mut(cols) {
        for (v, &bias) in row.iter_mut().zip(b.data()) {
            *v += bias;
        }
    }
}

fn column_sums(m: &DenseArray) -> DenseArray {
    let cols = m.cols();
    let mut out = vec![0.0; cols];
    for row in m.data().chunks(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    DenseArray::from_vec(&[cols], out).unwrap()
}

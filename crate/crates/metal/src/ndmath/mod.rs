//! Dense numeric core: row-major f64 arrays, feedforward networks with
//! reverse- and forward-mode derivatives, Adam, and conjugate gradient.

mod adam;
mod cg;
mod io;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use cg::{conjugate_gradient, CgResult};
pub use io::{read_array_block, write_array_block, PARAM_MAGIC};
pub use mlp::{ForwardCache, Mlp};

use crate::error::{Error, Result};

/// Row-major dense array of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseArray {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "DenseArray::from_vec",
                expected: format!("{expected} elements for shape {shape:?}"),
                got: format!("{} elements", data.len()),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Number of rows when viewed as a matrix (rank 1 counts as one row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            2 => self.shape[0],
            _ => panic!("rows() on rank-{} array", self.shape.len()),
        }
    }

    /// Length of the last dimension.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("cols() on rank-0 array")
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, context: &'static str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { context })
        }
    }

    /// Reinterprets as `(rows, cols)` without copying. Element count must match.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::ShapeMismatch {
                context: "DenseArray::reshape",
                expected: format!("shape with {} elements", self.data.len()),
                got: format!("{shape:?}"),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }
}

/// `a * b^T` for `a: (n, k)`, `b: (m, k)` -> `(n, m)`.
pub(crate) fn matmul_nt(a: &DenseArray, b: &DenseArray) -> DenseArray {
    let (n, k) = (a.rows(), a.cols());
    let (m, kb) = (b.rows(), b.cols());
    debug_assert_eq!(k, kb, "matmul_nt inner dims");
    let mut out = vec![0.0; n * m];
    let ad = a.data();
    let bd = b.data();
    for i in 0..n {
        let arow = &ad[i * k..(i + 1) * k];
        let orow = &mut out[i * m..(i + 1) * m];
        for j in 0..m {
            let brow = &bd[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            orow[j] = acc;
        }
    }
    DenseArray {
        shape: vec![n, m],
        data: out,
    }
}

/// `a^T * b` for `a: (n, k)`, `b: (n, m)` -> `(k, m)`.
pub(crate) fn matmul_tn(a: &DenseArray, b: &DenseArray) -> DenseArray {
    let (n, k) = (a.rows(), a.cols());
    let (nb, m) = (b.rows(), b.cols());
    debug_assert_eq!(n, nb, "matmul_tn outer dims");
    let mut out = vec![0.0; k * m];
    let ad = a.data();
    let bd = b.data();
    for r in 0..n {
        let arow = &ad[r * k..(r + 1) * k];
        let brow = &bd[r * m..(r + 1) * m];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * m..(i + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    DenseArray {
        shape: vec![k, m],
        data: out,
    }
}

/// `a * b` for `a: (n, k)`, `b: (k, m)` -> `(n, m)`.
pub(crate) fn matmul_nn(a: &DenseArray, b: &DenseArray) -> DenseArray {
    let (n, k) = (a.rows(), a.cols());
    let (kb, m) = (b.rows(), b.cols());
    debug_assert_eq!(k, kb, "matmul_nn inner dims");
    let mut out = vec![0.0; n * m];
    let ad = a.data();
    let bd = b.data();
    for i in 0..n {
        let arow = &ad[i * k..(i + 1) * k];
        let orow = &mut out[i * m..(i + 1) * m];
        for (j, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &bd[j * m..(j + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    DenseArray {
        shape: vec![n, m],
        data: out,
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Flattens a list of arrays into one vector (array order, row-major within).
pub fn flatten_arrays(arrays: &[DenseArray]) -> Vec<f64> {
    let mut out = Vec::with_capacity(arrays.iter().map(DenseArray::len).sum());
    for a in arrays {
        out.extend_from_slice(a.data());
    }
    out
}

/// Splits a flat vector back into arrays with the given template shapes.
pub fn unflatten_like(template: &[DenseArray], flat: &[f64]) -> Result<Vec<DenseArray>> {
    let total: usize = template.iter().map(DenseArray::len).sum();
    if flat.len() != total {
        return Err(Error::ShapeMismatch {
            context: "unflatten_like",
            expected: format!("{total} elements"),
            got: format!("{}", flat.len()),
        });
    }
    let mut out = Vec::with_capacity(template.len());
    let mut offset = 0;
    for t in template {
        let next = offset + t.len();
        out.push(DenseArray {
            shape: t.shape.to_vec(),
            data: flat[offset..next].to_vec(),
        });
        offset = next;
    }
    Ok(out)
}

/// Central finite difference of a scalar function, an independent oracle for
/// gradient checks: `(f(x+h) - f(x-h)) / 2h` per coordinate.
pub fn finite_difference<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let plus = f(&xp);
        xp[i] = orig - h;
        let minus = f(&xp);
        xp[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

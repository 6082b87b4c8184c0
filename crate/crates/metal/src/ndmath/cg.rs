//! Conjugate gradient for symmetric positive definite systems given only a
//! matrix-vector product.

use super::{dot, norm2};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CgResult {
    pub x: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    /// Residual 2-norm before each iteration plus the final one.
    pub residual_history: Vec<f64>,
}

/// Solves `A x = b` from `x = 0`, stopping after `max_iters` iterations or
/// once the residual norm drops below `tol`.
pub fn conjugate_gradient<F>(mut matvec: F, b: &[f64], max_iters: usize, tol: f64) -> Result<CgResult>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let mut history = vec![rs.sqrt()];
    let mut iterations = 0;
    for _ in 0..max_iters {
        if rs.sqrt() <= tol {
            break;
        }
        let ap = matvec(&p);
        if ap.len() != n {
            return Err(Error::ShapeMismatch {
                context: "conjugate_gradient matvec",
                expected: format!("{n} elements"),
                got: format!("{}", ap.len()),
            });
        }
        let pap = dot(&p, &ap);
        if !pap.is_finite() || pap <= 0.0 {
            return Err(Error::NonFinite {
                context: "conjugate_gradient curvature",
            });
        }
        let alpha = rs / pap;
        for ((xv, pv), av) in x.iter_mut().zip(&p).zip(&ap) {
            *xv += alpha * pv;
            let _ = av;
        }
        for (rv, av) in r.iter_mut().zip(&ap) {
            *rv -= alpha * av;
        }
        let rs_new = dot(&r, &r);
        if !rs_new.is_finite() {
            return Err(Error::NonFinite {
                context: "conjugate_gradient residual",
            });
        }
        let beta = rs_new / rs;
        for (pv, rv) in p.iter_mut().zip(&r) {
            *pv = rv + beta * *pv;
        }
        rs = rs_new;
        iterations += 1;
        history.push(rs.sqrt());
    }
    Ok(CgResult {
        x,
        residual_norm: norm2(&r),
        iterations,
        residual_history: history,
    })
}

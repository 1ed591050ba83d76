use nalgebra::{DMatrix, DVector};

use super::fd_gradient;
use crate::autodiff::ParamVector;
use crate::data::GroupBatch;
use crate::error::{Error, Result};
use crate::models::{Activation, ReprNet};

#[derive(Clone, Debug, PartialEq)]
pub struct ExactGradient {
    pub grad: ParamVector,
    /// Ridge added to the normal equations (0 unless they were singular).
    pub damping: f64,
    pub raised_damping: bool,
}

fn act(a: Activation, v: f64) -> f64 {
    match a {
        Activation::Linear => v,
        Activation::Relu => v.max(0.0),
    }
}

/// Straight-line forward pass of the network's layers over one row,
/// reading `w{i}` `[in, out]` row-major then `b{i}` from the flat vector.
pub(super) fn embed_row(arch: &[usize], hidden: Activation, last: Activation, params: &[f64], x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    let mut off = 0;
    let layers = arch.len() - 1;
    for l in 0..layers {
        let (din, dout) = (arch[l], arch[l + 1]);
        let w = &params[off..off + din * dout];
        let b = &params[off + din * dout..off + din * dout + dout];
        off += din * dout + dout;
        let a = if l + 1 == layers { last } else { hidden };
        h = (0..dout)
            .map(|j| act(a, (0..din).map(|i| h[i] * w[i * dout + j]).sum::<f64>() + b[j]))
            .collect();
    }
    h
}

/// `[z 1]` rows of one batch.
fn design(net: &ReprNet, params: &[f64], b: &GroupBatch) -> DMatrix<f64> {
    let e = net.embed_dim();
    let n = b.y.len();
    let mut a = DMatrix::zeros(n, e + 1);
    for i in 0..n {
        let z = embed_row(net.arch(), net.activation(), net.output_activation(), params, b.x.row(i));
        for j in 0..e {
            a[(i, j)] = z[j];
        }
        a[(i, e)] = 1.0;
    }
    a
}

/// Minimizer of `(1/n)‖A h − y‖² + (μ/2)‖h‖²`; `μ` is raised from `damping`
/// until the factorization succeeds and is returned.
fn least_squares(a: &DMatrix<f64>, y: &[f64], damping: f64) -> Result<(DVector<f64>, f64)> {
    let n = a.nrows() as f64;
    let d = a.ncols();
    let gram = a.transpose() * a * (2.0 / n);
    let rhs = a.transpose() * DVector::from_column_slice(y) * (2.0 / n);
    let mut mu = damping;
    for _ in 0..12 {
        let m = &gram + DMatrix::identity(d, d) * mu;
        if let Some(ch) = m.cholesky() {
            let diag = ch.l_dirty().diagonal();
            let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            if lo > 0.0 && (hi / lo).powi(2) < 1e12 {
                return Ok((ch.solve(&rhs), mu));
            }
        }
        mu = if mu == 0.0 { 1e-10 * gram.trace().max(1.0) } else { mu * 100.0 };
    }
    Err(Error::Oracle("normal equations stay ill-conditioned after raising damping".into()))
}

/// Exact inner optima `h_g⋆(λ)` for square loss and the damping used.
pub fn exact_inner_heads(net: &ReprNet, params: &[f64], batches: &[GroupBatch; 2], damping: f64) -> Result<([Vec<f64>; 2], f64)> {
    let a0 = design(net, params, &batches[0]);
    let a1 = design(net, params, &batches[1]);
    let (h0, m0) = least_squares(&a0, &batches[0].y, damping)?;
    let (h1, m1) = least_squares(&a1, &batches[1].y, damping)?;
    Ok(([h0.as_slice().to_vec(), h1.as_slice().to_vec()], m0.max(m1)))
}

/// `L₀(h₀⋆, λ) + L₁(h₁⋆, λ) + (κ/2)‖h₀⋆ − h₁⋆‖²` with the heads solved
/// exactly at this λ.
pub fn exact_outer_objective(net: &ReprNet, params: &[f64], batches: &[GroupBatch; 2], kappa: f64, damping: f64) -> Result<(f64, f64)> {
    let (heads, mu) = exact_inner_heads(net, params, batches, damping)?;
    let mut total = 0.0;
    for (h, b) in heads.iter().zip(batches) {
        let a = design(net, params, b);
        let r = &a * DVector::from_column_slice(h) - DVector::from_column_slice(&b.y);
        total += r.norm_squared() / b.y.len() as f64;
    }
    let gap: f64 = heads[0].iter().zip(&heads[1]).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((total + 0.5 * kappa * gap, mu))
}

/// Ground-truth outer gradient for square loss and linear heads: central
/// differences of [`exact_outer_objective`] in every λ coordinate.
pub fn exact_bilevel_gradient(net: &ReprNet, batches: &[GroupBatch; 2], kappa: f64, step: f64) -> Result<ExactGradient> {
    // fix the damping at the unperturbed point so every evaluation solves
    // the same problem family
    let (_, mu) = exact_inner_heads(net, net.params().values(), batches, 0.0)?;
    let grad = fd_gradient(
        |p| Ok(exact_outer_objective(net, p.values(), batches, kappa, mu)?.0),
        net.params(),
        step,
    )?;
    Ok(ExactGradient {
        grad,
        damping: mu,
        raised_damping: mu > 0.0,
    })
}

//! Bi-level training with implicit outer gradients.
//!
//! The outer problem over λ is the relaxed objective
//! `L₀(h₀, λ) + L₁(h₁, λ) + (κ/2)‖h₀ − h₁‖²` at the per-group inner optima
//! `h_g ≈ argmin_h L_g(h, λ)`. Its λ-gradient is assembled from two
//! damped linear solves (conjugate gradient on Hessian-vector products) and
//! two mixed second-partial products, without unrolling the inner solver.

mod cg;
mod implicit;
mod inner;
mod train;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamVector;
use crate::data::GroupBatch;
use crate::error::{Error, Result};
use crate::models::{group_loss, Head, ReprNet};

pub use cg::{cg_solve, CgOutcome};
pub use implicit::{compute_p, implicit_grad, implicit_grad_with_sign, PSolution};
pub use inner::{solve_inner, InnerProblems};
pub use train::train;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InnerSolver {
    /// Fixed-step gradient descent on each head.
    #[default]
    GradientDescent,
    /// Damped Newton steps; one step is exact for square loss.
    Newton,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BilevelConfig {
    pub kappa: f64,
    pub inner_solver: InnerSolver,
    pub inner_lr: f64,
    pub inner_max_steps: usize,
    /// ε, as a bound on each head's gradient norm.
    pub inner_tol_eps: f64,
    pub cg_max_iters: usize,
    /// δ, as a bound on the CG residual norm.
    pub cg_tol_delta: f64,
    pub outer_lr: f64,
    pub adam_eps: f64,
    pub hessian_damping: f64,
    pub batch_size_per_group: usize,
    pub max_epochs: usize,
    /// Outer steps per epoch; one pass over the larger group when absent.
    pub steps_per_epoch: Option<usize>,
    pub warm_start_heads: bool,
    pub lambda_norm_cap: Option<f64>,
    pub head_norm_cap: Option<f64>,
    /// Thresholds for the regression sufficiency gap.
    pub gap_points: usize,
}

impl Default for BilevelConfig {
    fn default() -> Self {
        Self {
            kappa: 0.01,
            inner_solver: InnerSolver::GradientDescent,
            inner_lr: 0.1,
            inner_max_steps: 20,
            inner_tol_eps: 1e-4,
            cg_max_iters: 10,
            cg_tol_delta: 1e-6,
            outer_lr: 1e-3,
            adam_eps: 1e-3,
            hessian_damping: 1e-5,
            batch_size_per_group: 500,
            max_epochs: 100,
            steps_per_epoch: None,
            warm_start_heads: true,
            lambda_norm_cap: None,
            head_norm_cap: None,
            gap_points: 33,
        }
    }
}

pub(crate) fn check_positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be positive and finite, got {v}")))
    }
}

pub(crate) fn check_non_negative(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be non-negative and finite, got {v}")))
    }
}

pub(crate) fn check_count(field: &str, v: usize) -> Result<()> {
    if v > 0 {
        Ok(())
    } else {
        Err(Error::config(field, "must be at least 1"))
    }
}

impl BilevelConfig {
    pub fn validate(&self) -> Result<()> {
        check_non_negative("bilevel.kappa", self.kappa)?;
        check_positive("bilevel.inner_lr", self.inner_lr)?;
        check_count("bilevel.inner_max_steps", self.inner_max_steps)?;
        check_positive("bilevel.inner_tol_eps", self.inner_tol_eps)?;
        check_count("bilevel.cg_max_iters", self.cg_max_iters)?;
        check_positive("bilevel.cg_tol_delta", self.cg_tol_delta)?;
        check_positive("bilevel.outer_lr", self.outer_lr)?;
        check_positive("bilevel.adam_eps", self.adam_eps)?;
        check_non_negative("bilevel.hessian_damping", self.hessian_damping)?;
        check_count("bilevel.batch_size_per_group", self.batch_size_per_group)?;
        check_count("bilevel.max_epochs", self.max_epochs)?;
        if let Some(s) = self.steps_per_epoch {
            check_count("bilevel.steps_per_epoch", s)?;
        }
        if let Some(c) = self.lambda_norm_cap {
            check_positive("bilevel.lambda_norm_cap", c)?;
        }
        if let Some(c) = self.head_norm_cap {
            check_positive("bilevel.head_norm_cap", c)?;
        }
        if self.gap_points < 2 {
            return Err(Error::config("bilevel.gap_points", "must be at least 2"));
        }
        Ok(())
    }
}

/// Approximate inner optima `h₀^ε`, `h₁^ε`.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerSolution {
    pub head0: Head,
    pub head1: Head,
    pub achieved_grad_norm0: f64,
    pub achieved_grad_norm1: f64,
    /// Larger of the two groups' step counts.
    pub steps_used: usize,
    /// Both gradient norms reached ε.
    pub converged: bool,
}

impl InnerSolution {
    pub fn heads(&self) -> [&Head; 2] {
        [&self.head0, &self.head1]
    }

    /// `h₀ − h₁`.
    pub fn head_gap(&self) -> ParamVector {
        self.head0.params().sub(self.head1.params())
    }
}

/// `grad̃^δ(λ)` with the pieces it was assembled from.
#[derive(Clone, Debug, PartialEq)]
pub struct ImplicitGradient {
    pub grad_lambda: ParamVector,
    pub p0: ParamVector,
    pub p1: ParamVector,
    pub cg_residual0: f64,
    pub cg_residual1: f64,
    pub cg_converged: [bool; 2],
    pub cg_iterations: [usize; 2],
}

/// `L₀(h₀, λ) + L₁(h₁, λ) + (κ/2)‖h₀ − h₁‖²` on one batch per group.
pub fn outer_objective(net: &ReprNet, sol: &InnerSolution, batches: &[GroupBatch], kappa: f64) -> Result<f64> {
    if batches.len() != 2 {
        return Err(Error::config(
            "batches",
            format!("need one batch per group, got {}", batches.len()),
        ));
    }
    let mut total = 0.0;
    for (head, b) in sol.heads().into_iter().zip(batches) {
        total += group_loss(head, net, &b.x, &b.y, head.loss_kind())?;
    }
    let d = sol.head_gap();
    Ok(total + 0.5 * kappa * d.dot(&d))
}

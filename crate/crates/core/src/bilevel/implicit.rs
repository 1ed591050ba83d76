use super::{cg_solve, BilevelConfig, CgOutcome, ImplicitGradient, InnerProblems, InnerSolution};
use crate::autodiff::{hvp, AutodiffError, ParamVector, Tape, Tensor};
use crate::data::GroupBatch;
use crate::error::{Error, Result};
use crate::models::{group_loss_on, label_column, HeadProblem, ReprNet};

/// Both damped solves.
#[derive(Clone, Debug, PartialEq)]
pub struct PSolution {
    pub p0: CgOutcome,
    pub p1: CgOutcome,
}

/// `(∇²_h L_g + μI) v` through the tape, with the embedding held constant.
fn damped_hvp(prob: &HeadProblem, at: &ParamVector, v: &ParamVector, damping: f64) -> Result<ParamVector> {
    let z = prob.z();
    let y = label_column(prob.y());
    let loss = prob.loss();
    let mut out = hvp(at, v, |t: &mut Tape, h| {
        let zv = t.constant(z.clone());
        let yv = t.constant(y.clone());
        group_loss_on(t, h, zv, yv, loss)
    })?;
    out.axpy(damping, v);
    Ok(out)
}

/// Solve `(∇²_{h₀}L₀ + μI) p₀ = ∇_{h₀}L₀ + κ(h₀ − h₁)` and the mirrored
/// system for `p₁` (with `−κ(h₀ − h₁)`), by CG from zero.
pub fn compute_p(net: &ReprNet, sol: &InnerSolution, batches: &[GroupBatch], cfg: &BilevelConfig) -> Result<PSolution> {
    let problems = InnerProblems::new(net, batches, &sol.head0)?;
    compute_p_on(&problems, sol, cfg)
}

pub(crate) fn compute_p_on(problems: &InnerProblems, sol: &InnerSolution, cfg: &BilevelConfig) -> Result<PSolution> {
    let diff = sol.head_gap();
    let solve = |g: usize| -> Result<CgOutcome> {
        let prob = &problems.problems[g];
        let head = sol.heads()[g].params();
        let (_, grad) = prob.loss_and_grad(head.values());
        let mut rhs = head.with_values(grad)?;
        let sign = if g == 0 { 1.0 } else { -1.0 };
        rhs.axpy(sign * cfg.kappa, &diff);
        cg_solve(
            |v| damped_hvp(prob, head, v, cfg.hessian_damping),
            &rhs,
            &rhs.zeros_like(),
            cfg.cg_max_iters,
            cfg.cg_tol_delta,
        )
    };
    Ok(PSolution {
        p0: solve(0)?,
        p1: solve(1)?,
    })
}

fn check_finite(term: &'static str, v: &ParamVector) -> Result<()> {
    match v.first_non_finite() {
        Some(index) => Err(Error::NonFiniteGradient { term, index }),
        None => Ok(()),
    }
}

/// `∇_λ L_g` and `(∇_λ∇_h L_g)ᵀ p` for one group from one tape.
fn group_terms(net: &ReprNet, head: &ParamVector, p: &ParamVector, batch: &GroupBatch, loss: crate::models::LossKind) -> Result<(ParamVector, ParamVector)> {
    let mut tape = Tape::new();
    let nl = tape.leaves(net.params());
    let hl = tape.leaves(head);
    let x = tape.constant(batch.x.clone());
    let y = tape.constant(label_column(&batch.y));
    let z = net.embed_on(&mut tape, &nl, x)?;
    let l = group_loss_on(&mut tape, &hl, z, y, loss)?;
    let gh = tape.gradients(l, &hl)?;
    let pv = tape.constants(p);
    let mut inner = None;
    for (&g, &c) in gh.iter().zip(&pv) {
        let d = tape.dot(g, c)?;
        inner = Some(match inner {
            Some(acc) => tape.add(acc, d)?,
            None => d,
        });
    }
    let inner = match inner {
        Some(v) => v,
        None => tape.constant(Tensor::scalar(0.0)),
    };
    let mixed = tape.gradients(inner, &nl)?;
    let mixed = tape.collect(net.params(), &mixed)?;
    let direct = tape.gradients(l, &nl)?;
    let direct = tape.collect(net.params(), &direct)?;
    Ok((direct, mixed))
}

/// `grad̃(λ) = ∇_λL₀ − (∇_λ∇_{h₀}L₀)ᵀp₀ + ∇_λL₁ − (∇_λ∇_{h₁}L₁)ᵀp₁`.
pub fn implicit_grad(net: &ReprNet, sol: &InnerSolution, ps: &PSolution, batches: &[GroupBatch]) -> Result<ImplicitGradient> {
    implicit_grad_with_sign(net, sol, ps, batches, -1.0)
}

/// As [`implicit_grad`] with the sign of the mixed-partial terms as a
/// parameter. Exists so the verification suite can inject a sign fault.
#[doc(hidden)]
pub fn implicit_grad_with_sign(
    net: &ReprNet,
    sol: &InnerSolution,
    ps: &PSolution,
    batches: &[GroupBatch],
    mixed_sign: f64,
) -> Result<ImplicitGradient> {
    if batches.len() != 2 {
        return Err(Error::config(
            "batches",
            format!("need one batch per group, got {}", batches.len()),
        ));
    }
    const DIRECT: [&str; 2] = ["grad_lambda L0", "grad_lambda L1"];
    const MIXED: [&str; 2] = ["mixed partial (group 0)", "mixed partial (group 1)"];
    let mut grad = net.params().zeros_like();
    for g in 0..2 {
        let head = sol.heads()[g];
        let p = if g == 0 { &ps.p0.x } else { &ps.p1.x };
        let (direct, mixed) = group_terms(net, head.params(), p, &batches[g], head.loss_kind()).map_err(|e| match e {
            Error::Autodiff(AutodiffError::NonFinite { index, .. }) => Error::NonFiniteGradient {
                term: MIXED[g],
                index,
            },
            other => other,
        })?;
        check_finite(DIRECT[g], &direct)?;
        check_finite(MIXED[g], &mixed)?;
        grad.axpy(1.0, &direct);
        grad.axpy(mixed_sign, &mixed);
    }
    Ok(ImplicitGradient {
        grad_lambda: grad,
        p0: ps.p0.x.clone(),
        p1: ps.p1.x.clone(),
        cg_residual0: ps.p0.residual,
        cg_residual1: ps.p1.residual,
        cg_converged: [ps.p0.converged, ps.p1.converged],
        cg_iterations: [ps.p0.iterations, ps.p1.iterations],
    })
}

use nalgebra::{DMatrix, DVector};

use super::{BilevelConfig, InnerSolution, InnerSolver};
use crate::data::GroupBatch;
use crate::error::{Error, Result};
use crate::models::{Head, HeadProblem, ReprNet};

/// Both groups' head problems at a fixed λ snapshot.
#[derive(Clone, Debug)]
pub struct InnerProblems {
    pub problems: [HeadProblem; 2],
}

impl InnerProblems {
    pub fn new(net: &ReprNet, batches: &[GroupBatch], template: &Head) -> Result<Self> {
        if batches.len() != 2 {
            return Err(Error::config(
                "batches",
                format!("need one batch per group, got {}", batches.len()),
            ));
        }
        let mk = |b: &GroupBatch| HeadProblem::new(net.embed(&b.x)?, b.y.clone(), template.loss_kind());
        Ok(Self {
            problems: [mk(&batches[0])?, mk(&batches[1])?],
        })
    }
}

struct GroupResult {
    head: Head,
    grad_norm: f64,
    steps: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn solve_group(prob: &HeadProblem, init: &Head, cfg: &BilevelConfig, group: u8) -> Result<GroupResult> {
    let mut head = init.clone();
    let mut h = head.params().values().to_vec();
    let mut steps = 0;
    let (start, mut g) = prob.loss_and_grad(&h);
    loop {
        let gn = norm(&g);
        if gn <= cfg.inner_tol_eps || steps == cfg.inner_max_steps {
            head.set_params(head.params().with_values(h)?)?;
            return Ok(GroupResult {
                head,
                grad_norm: gn,
                steps,
            });
        }
        match cfg.inner_solver {
            InnerSolver::GradientDescent => {
                for (hi, gi) in h.iter_mut().zip(&g) {
                    *hi -= cfg.inner_lr * gi;
                }
            }
            InnerSolver::Newton => {
                let d = prob.dim();
                let mut hess = DMatrix::from_row_slice(d, d, &prob.hessian(&h));
                for i in 0..d {
                    hess[(i, i)] += cfg.hessian_damping;
                }
                let chol = hess.cholesky().ok_or_else(|| {
                    Error::Divergence(format!(
                        "group {group} head Hessian is not positive definite; raise hessian_damping"
                    ))
                })?;
                let step = chol.solve(&DVector::from_column_slice(&g));
                for (hi, si) in h.iter_mut().zip(step.iter()) {
                    *hi -= si;
                }
            }
        }
        if let Some(cap) = cfg.head_norm_cap {
            let n = norm(&h);
            if n > cap {
                h.iter_mut().for_each(|v| *v *= cap / n);
            }
        }
        steps += 1;
        let (loss, grad) = prob.loss_and_grad(&h);
        if !loss.is_finite() || loss > 10.0 * start.max(f64::MIN_POSITIVE) {
            return Err(Error::InnerDivergence {
                group,
                start,
                now: loss,
                step: steps,
            });
        }
        g = grad;
    }
}

/// Fit each group's head on its batch until `‖∇_h L_g‖ ≤ ε` or the step
/// budget runs out, starting from `init`.
pub fn solve_inner(net: &ReprNet, batches: &[GroupBatch], init: [&Head; 2], cfg: &BilevelConfig) -> Result<InnerSolution> {
    let problems = InnerProblems::new(net, batches, init[0])?;
    solve_inner_on(&problems, init, cfg)
}

pub(crate) fn solve_inner_on(problems: &InnerProblems, init: [&Head; 2], cfg: &BilevelConfig) -> Result<InnerSolution> {
    let r0 = solve_group(&problems.problems[0], init[0], cfg, 0)?;
    let r1 = solve_group(&problems.problems[1], init[1], cfg, 1)?;
    let converged = r0.grad_norm <= cfg.inner_tol_eps && r1.grad_norm <= cfg.inner_tol_eps;
    Ok(InnerSolution {
        achieved_grad_norm0: r0.grad_norm,
        achieved_grad_norm1: r1.grad_norm,
        steps_used: r0.steps.max(r1.steps),
        converged,
        head0: r0.head,
        head1: r1.head,
    })
}

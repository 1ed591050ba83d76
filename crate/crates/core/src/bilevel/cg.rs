use crate::autodiff::ParamVector;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CgOutcome {
    /// Final iterate, or the lowest-residual one when not converged.
    pub x: ParamVector,
    /// `‖b − A x‖` as tracked by the recurrence.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Conjugate gradient for `A x = b` with `A` given as a product `apply(v)`.
///
/// `r₀ = b − A x₀`, `p₀ = r₀`; then `α = rᵀr / pᵀAp`, `x += αp`,
/// `r −= αAp`, `β = r'ᵀr' / rᵀr`, `p = r' + βp` until `‖r‖ ≤ tol` or
/// `max_iters` products have been taken.
pub fn cg_solve<F>(mut apply: F, b: &ParamVector, x0: &ParamVector, max_iters: usize, tol: f64) -> Result<CgOutcome>
where
    F: FnMut(&ParamVector) -> Result<ParamVector>,
{
    b.check_layout(x0)?;
    if let Some(i) = b.first_non_finite() {
        return Err(Error::NonFiniteGradient {
            term: "cg right-hand side",
            index: i,
        });
    }
    let mut x = x0.clone();
    let mut r = if x0.values().iter().all(|&v| v == 0.0) {
        b.clone()
    } else {
        b.sub(&apply(x0)?)
    };
    let mut p = r.clone();
    let mut rs = r.dot(&r);
    let mut best = (rs.sqrt(), x.clone());
    if rs.sqrt() <= tol {
        return Ok(CgOutcome {
            x,
            residual: rs.sqrt(),
            iterations: 0,
            converged: true,
        });
    }
    for k in 1..=max_iters {
        let ap = apply(&p)?;
        let curvature = p.dot(&ap);
        if !curvature.is_finite() || curvature <= 0.0 {
            return Err(Error::CgBreakdown {
                iteration: k,
                curvature,
            });
        }
        let alpha = rs / curvature;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        let rs_new = r.dot(&r);
        if !rs_new.is_finite() {
            return Err(Error::CgBreakdown {
                iteration: k,
                curvature,
            });
        }
        let res = rs_new.sqrt();
        if res <= tol {
            return Ok(CgOutcome {
                x,
                residual: res,
                iterations: k,
                converged: true,
            });
        }
        if res < best.0 {
            best = (res, x.clone());
        }
        let beta = rs_new / rs;
        let mut next = r.clone();
        next.axpy(beta, &p);
        p = next;
        rs = rs_new;
    }
    Ok(CgOutcome {
        x: best.1,
        residual: best.0,
        iterations: max_iters,
        converged: false,
    })
}

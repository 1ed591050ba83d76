//! Parameter-vector level entry points built on [`Tape`].
//!
//! Losses are given as closures that record a scalar onto a tape from one
//! leaf per layout block.

use super::params::ParamVector;
use super::tape::{Tape, Var};
use super::{AutodiffError, Tensor};

/// Value and gradient of `f` at `params`.
pub fn value_and_grad<F>(params: &ParamVector, f: F) -> Result<(f64, ParamVector), AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let leaves = tape.leaves(params);
    let out = f(&mut tape, &leaves)?;
    let grads = tape.gradients_detached(out, &leaves)?;
    Ok((tape.scalar(out), tape.collect(params, &grads)?))
}

/// `(∇²f) v` as the gradient of `⟨∇f, v⟩`.
pub fn hvp<F>(params: &ParamVector, v: &ParamVector, f: F) -> Result<ParamVector, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    params.check_layout(v)?;
    let mut tape = Tape::new();
    let leaves = tape.leaves(params);
    let out = f(&mut tape, &leaves)?;
    let grads = tape.gradients(out, &leaves)?;
    let inner = inner_product(&mut tape, &grads, v)?;
    let hv = tape.gradients_detached(inner, &leaves)?;
    tape.collect(params, &hv)
}

/// `(∇_a ∇_b f)ᵀ v`: differentiate `⟨∇_b f, v⟩` with respect to `a`.
/// Returns a zero vector when `f` does not couple the two groups.
pub fn mixed_partial_vjp<F>(
    a: &ParamVector,
    b: &ParamVector,
    v: &ParamVector,
    f: F,
) -> Result<ParamVector, AutodiffError>
where
    F: Fn(&mut Tape, &[Var], &[Var]) -> Result<Var, AutodiffError>,
{
    b.check_layout(v)?;
    let mut tape = Tape::new();
    let la = tape.leaves(a);
    let lb = tape.leaves(b);
    let out = f(&mut tape, &la, &lb)?;
    let gb = tape.gradients(out, &lb)?;
    let inner = inner_product(&mut tape, &gb, v)?;
    let ga = tape.gradients_detached(inner, &la)?;
    tape.collect(a, &ga)
}

/// `Σ_blocks sum(g_k ⊙ v_k)` with `v` recorded as constants.
fn inner_product(tape: &mut Tape, grads: &[Var], v: &ParamVector) -> Result<Var, AutodiffError> {
    let vs = tape.constants(v);
    let mut acc: Option<Var> = None;
    for (&g, &c) in grads.iter().zip(&vs) {
        let term = tape.dot(g, c)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    match acc {
        Some(a) => Ok(a),
        None => Ok(tape.constant(Tensor::scalar(0.0))),
    }
}

/// A recorded function of parameters and one input tensor, re-runnable on
/// new values of the same shapes.
#[derive(Clone, Debug)]
pub struct Program {
    tape: Tape,
    params: Vec<Var>,
    input: Var,
    output: Var,
    template: ParamVector,
}

impl Program {
    pub fn record<F>(params: &ParamVector, input: &Tensor, f: F) -> Result<Self, AutodiffError>
    where
        F: FnOnce(&mut Tape, &[Var], Var) -> Result<Var, AutodiffError>,
    {
        let mut tape = Tape::new();
        let leaves = tape.leaves(params);
        let x = tape.constant(input.clone());
        let output = f(&mut tape, &leaves, x)?;
        Ok(Self {
            tape,
            params: leaves,
            input: x,
            output,
            template: params.clone(),
        })
    }

    pub fn output(&self) -> &Tensor {
        self.tape.value(self.output)
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    fn rebind(&mut self, params: &ParamVector, input: &Tensor) -> Result<usize, AutodiffError> {
        self.template.check_layout(params)?;
        let mut bindings: Vec<(Var, Tensor)> = self
            .params
            .iter()
            .copied()
            .zip(params.block_tensors())
            .collect();
        bindings.push((self.input, input.clone()));
        let mark = self.tape.len();
        self.tape.replay(&bindings)?;
        Ok(mark)
    }

    /// Re-evaluate at new parameters and input.
    pub fn forward(&mut self, params: &ParamVector, input: &Tensor) -> Result<Tensor, AutodiffError> {
        self.rebind(params, input)?;
        Ok(self.output().clone())
    }

    /// Gradient of the (scalar) output at new parameters and input.
    pub fn grad(&mut self, params: &ParamVector, input: &Tensor) -> Result<ParamVector, AutodiffError> {
        let mark = self.rebind(params, input)?;
        let leaves = self.params.clone();
        let g = self.tape.gradients(self.output, &leaves);
        let result = g.and_then(|g| self.tape.collect(params, &g));
        self.tape.truncate(mark);
        result
    }

    /// Hessian-vector product of the (scalar) output.
    pub fn hvp(
        &mut self,
        params: &ParamVector,
        input: &Tensor,
        v: &ParamVector,
    ) -> Result<ParamVector, AutodiffError> {
        let mark = self.rebind(params, input)?;
        let leaves = self.params.clone();
        let out = self.output;
        let result = (|| {
            let g = self.tape.gradients(out, &leaves)?;
            let inner = inner_product(&mut self.tape, &g, v)?;
            let hv = self.tape.gradients(inner, &leaves)?;
            self.tape.collect(params, &hv)
        })();
        self.tape.truncate(mark);
        result
    }
}

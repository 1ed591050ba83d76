use crate::autodiff::{ParamVector, Tape, Var};
use crate::data::GroupBatch;
use crate::error::Result;
use crate::models::{group_loss_on, label_column, Head, ReprNet};

#[derive(Clone, Debug, PartialEq)]
pub struct UnrolledGradient {
    pub grad: ParamVector,
    pub objective: f64,
    /// Tape size, the memory the unrolled path needed.
    pub nodes: usize,
}

/// λ-gradient of the relaxed outer objective after `steps` gradient-descent
/// updates of each head, differentiated through every update.
///
/// `node_limit` bounds the tape; exceeding it is reported as an autodiff
/// budget error.
pub fn explicit_unrolled_step(
    net: &ReprNet,
    heads: [&Head; 2],
    batches: &[GroupBatch; 2],
    steps: usize,
    inner_lr: f64,
    kappa: f64,
    node_limit: Option<usize>,
) -> Result<UnrolledGradient> {
    let mut tape = match node_limit {
        Some(n) => Tape::with_node_limit(n),
        None => Tape::new(),
    };
    let nl = tape.leaves(net.params());
    let loss = heads[0].loss_kind();
    let mut z = Vec::with_capacity(2);
    let mut y = Vec::with_capacity(2);
    for b in batches {
        let x = tape.constant(b.x.clone());
        z.push(net.embed_on(&mut tape, &nl, x)?);
        y.push(tape.constant(label_column(&b.y)));
    }
    let mut h: Vec<Vec<Var>> = heads.iter().map(|hd| tape.constants(hd.params())).collect();
    for _ in 0..steps {
        for g in 0..2 {
            let l = group_loss_on(&mut tape, &h[g], z[g], y[g], loss)?;
            let grads = tape.gradients(l, &h[g])?;
            let mut next = Vec::with_capacity(grads.len());
            for (&p, &d) in h[g].iter().zip(&grads) {
                let s = tape.scale(d, inner_lr)?;
                next.push(tape.sub(p, s)?);
            }
            h[g] = next;
        }
    }
    let l0 = group_loss_on(&mut tape, &h[0], z[0], y[0], loss)?;
    let l1 = group_loss_on(&mut tape, &h[1], z[1], y[1], loss)?;
    let mut obj = tape.add(l0, l1)?;
    if kappa != 0.0 {
        let mut parts = Vec::new();
        for (&a, &b) in h[0].iter().zip(&h[1]) {
            let d = tape.sub(a, b)?;
            let d2 = tape.square(d)?;
            parts.push(tape.sum(d2)?);
        }
        let mut pen = parts[0];
        for &p in &parts[1..] {
            pen = tape.add(pen, p)?;
        }
        let pen = tape.scale(pen, 0.5 * kappa)?;
        obj = tape.add(obj, pen)?;
    }
    let g = tape.gradients(obj, &nl)?;
    let grad = tape.collect(net.params(), &g)?;
    Ok(UnrolledGradient {
        grad,
        objective: tape.scalar(obj),
        nodes: tape.len(),
    })
}

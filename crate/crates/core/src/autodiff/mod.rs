//! Dense reverse-mode differentiation with second-order support.

mod functional;
mod params;
mod tape;
mod tensor;

pub use functional::{hvp, mixed_partial_vjp, value_and_grad, Program};
pub use params::{Layout, LayoutEntry, ParamVector};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape error in `{op}`{}: {detail}", node_suffix(*.node))]
    Shape {
        node: Option<usize>,
        op: &'static str,
        detail: String,
    },
    #[error("non-finite value at element {index} of node {node} (`{op}`)")]
    NonFinite {
        node: usize,
        op: &'static str,
        index: usize,
    },
    #[error("node {node} has shape {shape:?}; gradients need a scalar output")]
    NotScalar { node: usize, shape: Vec<usize> },
    #[error("node {node} was recorded without history and cannot be differentiated again")]
    NotReentrant { node: usize },
    #[error("node {0} is not on this tape")]
    UnknownNode(usize),
    #[error("{0}")]
    Layout(String),
    #[error("tape grew past its budget of {limit} nodes")]
    Budget { limit: usize },
}

fn node_suffix(node: Option<usize>) -> String {
    node.map(|n| format!(" at node {n}")).unwrap_or_default()
}

//! Shared fixture for the benchmarks in `benches/`.

use fairpath_core::data::{gen_synthetic, split, BatchStream, GroupBatch, Regime, SplitSpec, SyntheticSpec};
use fairpath_core::models::{HeadProblem, LossKind};
use fairpath_core::{Activation, Head, ReprNet, Split, Task};

/// A `[6, 16, 4]` ReLU network, one 500-row batch per group of BIASED
/// synthetic data, and an inner step size safe for gradient descent.
pub struct Fixture {
    pub net: ReprNet,
    pub batches: [GroupBatch; 2],
    pub head: Head,
    pub inner_lr: f64,
}

impl Fixture {
    pub fn new() -> Self {
        let spec = SyntheticSpec::new(Regime::Biased, 2000, 0);
        let mut ds = split(&gen_synthetic(&spec).expect("valid spec"), &SplitSpec::default()).expect("valid split");
        ds.standardize().expect("non-degenerate features");
        let net = ReprNet::new(&[ds.dim(), 16, 4], Activation::Relu, 0).expect("valid arch");
        let batches = BatchStream::new(&ds, Split::Train, 500, 0).expect("both groups present").next_pair();
        // the Hessian trace bounds its largest eigenvalue
        let mut trace = 0.0f64;
        for b in &batches {
            let prob = HeadProblem::new(net.embed(&b.x).expect("shapes match"), b.y.clone(), LossKind::Square)
                .expect("non-empty batch");
            let d = prob.dim();
            let h = prob.hessian(&vec![0.0; d]);
            trace = trace.max((0..d).map(|i| h[i * d + i]).sum());
        }
        Self {
            head: Head::zeros(net.embed_dim(), Task::Regression),
            net,
            batches,
            inner_lr: 1.0 / trace,
        }
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}

pub mod autodiff;
pub mod baselines;
pub mod bilevel;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod oracle;
pub mod record;

pub use autodiff::{ParamVector, Tensor};
pub use data::{GroupedDataset, Split};
pub use error::{Error, Result};
pub use harness::{ExperimentConfig, Method};
pub use models::{Activation, Head, ReprNet, Task};
pub use record::{RunRecord, TrainOutput};

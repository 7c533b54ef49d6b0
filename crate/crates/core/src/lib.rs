//! Covariate drift detection on classifier softmax outputs with the
//! Half-KFN statistic (intra-class k farthest neighbours), its permutation
//! and bootstrap tests, reference baselines and a simulation harness.

pub mod baselines;
pub mod cli;
pub mod error;
pub mod feature_space;
pub mod harness;
pub mod inference;
pub mod kfn;

pub use error::{Error, Result};
pub use feature_space::{argmax_class, load_softmax_csv, save_softmax_csv, Origin, ReducerModel, SampleSet, SoftmaxVector, TrainConfig};
pub use inference::{bootstrap_test, permutation_test, BootstrapConfig, Decision, PermutationConfig, TestReport};
pub use kfn::{half_kfn, PooledSample};

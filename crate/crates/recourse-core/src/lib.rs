//! Training classifiers with equalized recourse across demographic groups.
//!
//! "Recourse" here is the effort a negatively classified individual must spend
//! to flip the decision: the (cost-scaled) distance from their feature vector
//! to the decision boundary. This crate provides two routes to equalizing that
//! burden between two groups:
//!
//! * [`recourse_svm`] — a kernel SVM whose dual carries one extra variable
//!   penalizing the recourse difference between groups, solved by the
//!   generalized SMO solver in [`qp`].
//! * [`reweight`] — a model-agnostic scheme that estimates boundary distances
//!   of any fitted black box through local linear surrogates
//!   ([`local_explainer`]) and refits the model with per-sample weights that
//!   upweight the worst-off negatively classified points.
//!
//! [`harness`] runs the repeated-split evaluation protocol (subsample, split,
//! cross-validate, train, measure recourse gaps before/after) and emits JSON
//! and CSV reports; [`dataset`] holds the grouped data model, CSV loading and
//! the synthetic generators used throughout the test suite.

pub mod blackbox;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod kernels;
mod linalg;
pub mod local_explainer;
pub mod qp;
pub mod recourse_svm;
pub mod reweight;
mod seed;

pub use blackbox::{BlackBoxSpec, FittedBlackBox};
pub use dataset::{GroupedDataset, PreprocessSpec, SyntheticSpec};
pub use error::{Error, Result};
pub use harness::{ExperimentConfig, ExperimentReport, KernelFamily, Method};
pub use kernels::KernelSpec;
pub use local_explainer::ExplainerConfig;
pub use qp::{QpSolution, QuadraticProgram, SolverSettings};
pub use recourse_svm::{RecourseEvaluation, RecourseSvmModel, TrainConfig, TrainOutcome};
pub use reweight::{HoldoutEvaluation, ReweightResult};

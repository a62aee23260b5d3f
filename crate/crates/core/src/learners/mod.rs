//! The four benchmark learners and the protocols that score them.

pub mod bench;
pub mod dpgmm;
pub mod gmm;
pub mod linear;

pub use bench::{run_benchmark, BenchConfig, BenchResult, Condition, Learner, TeachingPool};
pub use dpgmm::{dpgmm_fit, DpgmmConfig, DpgmmState, TransferMode};
pub use gmm::{gmm_em_fit, gmm_em_fit_with, EmConfig, GmmState};
pub use linear::{train_linear, LinearClassifier, LinearHyper, LinearKind};

//! Statistically optimal teaching data for systems of Gaussian phonetic
//! categories, and the learners used to benchmark it.
//!
//! A teacher samples datasets with probability proportional to the
//! posterior a Dirichlet-process mixture learner assigns to the true
//! categories. The pieces:
//!
//! - [`phoneme`]: category models, including the embedded vowel table.
//! - [`bayes`]: Normal–Inverse-Wishart and CRP machinery in log space.
//! - [`exact`]: exact evidence over all partitions and the teaching score.
//! - [`teacher`]: the Metropolis sampler over teaching datasets.
//! - [`learners`]: DPGMM, EM-GMM, logistic regression and linear SVM, plus
//!   the benchmark protocols.
//! - [`eval`]: ARI, KS tests, effect sizes and descriptive reports.

pub mod bayes;
pub mod error;
pub mod eval;
pub mod exact;
pub mod learners;
pub mod linalg;
pub mod phoneme;
pub mod seeding;
pub mod teacher;

pub use error::{Error, Result};

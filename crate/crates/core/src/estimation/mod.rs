//! Parameter estimation: the replicate log-likelihood, local neighbourhood
//! estimates used for starting values, their least-squares merge into basis
//! coefficients, the global maximum-likelihood fit and the likelihood-ratio
//! test between nested fits.

pub mod fit;
pub mod likelihood;
pub mod local;
pub mod lrt;
pub mod merge;
pub mod optimize;

pub use fit::{fit, initialize, mesh_for, n_model_params, AlphaPolicy, FitConfig, FitResult};
pub use likelihood::LikelihoodProblem;
pub use local::{local_estimates, LocalEstimate, LocalEstimates};
pub use lrt::{likelihood_ratio_test, LrtOutcome};
pub use merge::{merge_local, select_alpha, MergeResult};

//! Double machine learning for partially linear mixed-effects models.
//!
//! Grouped repeated measurements follow
//!
//! ```text
//! Y_i = X_i β₀ + g(W_i) + Z_i b_i + ε_i,   b_i ~ N(0, Γ₀),  ε_i ~ N(0, σ₀² I)
//! ```
//!
//! with `g` unknown and possibly nonsmooth. The linear coefficient β₀ is
//! estimated by residualizing X and Y on W with machine-learning regressions
//! fitted on held-out folds ([`learners`]), then fitting a Gaussian linear
//! mixed model to the residuals ([`lmm`]). [`dml`] orchestrates the
//! cross-fitting, the repeated splits and the confidence intervals; [`sim`]
//! and [`study`] provide synthetic data and a coverage harness; [`cli`] is
//! the command-line layer.
//!
//! ```no_run
//! use plmm_dml::{dml_fit, gen_dataset, DmlConfig, ScenarioKind, SimScenario};
//!
//! let data = gen_dataset(&SimScenario::new(ScenarioKind::NonsmoothBalanced, 100), 7).unwrap();
//! let fit = dml_fit(&data, &DmlConfig::default()).unwrap();
//! println!("beta = {:.3} [{:.3}, {:.3}]", fit.beta_hat[0], fit.ci_lower[0], fit.ci_upper[0]);
//! ```

pub mod cli;
pub mod data;
pub mod dml;
pub mod error;
pub mod learners;
pub mod lmm;
pub mod seed;
pub mod sim;
pub mod stats;
pub mod study;

pub use data::{validate_dataset, FoldPartition, Group, GroupedDataset, Theta};
pub use dml::{
    aggregate_splits, confidence_interval, dml_fit, estimate_single_split, estimate_split_with_partition,
    split_folds, DmlConfig, DmlFit, SplitEstimate,
};
pub use error::{Error, ErrorClass, Result};
pub use learners::{fit_learner, fit_nuisance, residualize, LearnerKind, LearnerSpec, NuisanceModel};
pub use lmm::{
    beta_covariance, build_v, estimate_t0, fit_variance_components, log_likelihood, score, solve_beta_gls, LmmFit,
    LmmOptions, ResidualSet,
};
pub use sim::{gen_dataset, oracle_nuisance, ScenarioKind, SimScenario};

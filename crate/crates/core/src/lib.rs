//! Regressed-PCA estimation of semiparametric conditional factor models.
//!
//! Returns are modeled as `y_it = alpha(z_it) + beta(z_it)' f_t + e_it` with
//! latent factors `f_t` and loadings that are unknown functions of observed
//! characteristics. The estimator projects each period's returns on a sieve
//! basis of the characteristics and extracts factors from the projected
//! panel by principal components.
//!
//! ```no_run
//! use regpca::{first_stage, fit, load_csv, ColumnSchema, SieveSpec};
//!
//! let panel = load_csv("panel.csv", &ColumnSchema::default())?;
//! let spec = SieveSpec::bspline(panel.n_chars(), 3, true);
//! let managed = first_stage(&panel, &spec)?;
//! let est = fit(&managed, 2)?;
//! println!("{:?}", est.eigenvalues);
//! # Ok::<(), regpca::Error>(())
//! ```

pub mod cli;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod inference;
pub mod linalg;
pub mod montecarlo;
pub mod panel;
pub mod rng;
pub mod sieve;

pub use error::{Error, ErrorKind, Result};
pub use estimator::{
    default_lambda_nt, first_stage, fit, fix_factor_signs, rotation, select_k_ratio, select_k_ratio_from_eigenvalues,
    select_k_threshold, select_k_threshold_from_eigenvalues, FactorFit, ManagedPanel, RotationMatrix,
};
pub use evaluation::{
    arbitrage_portfolio, expanding_fits, mve_portfolio, oos_factor_fit, oos_predict, r2_insample, ExpandingFits,
    OosFactors, PortfolioSeries, R2Suite, R2Triple,
};
pub use inference::{
    alpha_test, bootstrap_fit, coefficient_test, draw_weights, linearity_statistic, linearity_test, Bootstrap,
    BootstrapDraw, CoefTarget, TestReport,
};
pub use montecarlo::{simulate, DgpParams, SimDraw};
pub use panel::{filter_min_cross_section, load_csv, rank_transform, read_csv, ColumnSchema, Panel};
pub use sieve::{design_matrix, BasisVector, SieveKind, SieveSpec};

//! Two-stage Bayesian logistic regression for cohort data with repeated
//! binary events per subject.
//!
//! The library fits two model families with vague Gaussian coefficient
//! priors:
//!
//! * **Stage 1** — fixed-effects logistic regression on one binary outcome
//!   per patient (`fell`), with the log marginal likelihood obtained from a
//!   Laplace approximation at the MAP estimate.
//! * **Stage 2** — random-intercept logistic regression on per-fall binary
//!   outcomes (`injured`), where the intercept variance `σ²` carries an
//!   Inverse-Gamma prior and is integrated numerically on an adaptive
//!   log-scale grid (a nested Laplace scheme).
//!
//! On top of the fitting kernels sit forward variable selection driven by
//! the log marginal likelihood ([`selection`]), Bayesian model averaging
//! over every model visited during the search ([`bma`]), posterior
//! predictive probabilities including Monte-Carlo integration over the
//! random intercept ([`predict`]), and leave-one-out cross-validated
//! ROC/AUC evaluation ([`evaluate`]).
//!
//! The [`oracle`] module holds independent brute-force references
//! (quadrature, importance sampling, pair counting, finite differences)
//! used by the test suite and exposed through the CLI `verify` command.
//!
//! With the default `parallel` feature, grid points, selection candidates,
//! cross-validation folds, and prediction rows run on a rayon pool. All
//! reductions happen in deterministic order, so results are bit-identical
//! at any thread count, and identical to the sequential fallback built
//! with `--no-default-features`.

// negated comparisons like `!(x > 0.0)` are deliberate: they reject NaN,
// which the suggested `x <= 0.0` lets through. The index-style loops in the
// quadrature kernels mirror the tensor-grid arithmetic.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bma;
pub mod datamodel;
pub mod error;
pub mod evaluate;
pub mod glm;
pub mod laplace;
pub mod oracle;
mod par;
pub mod predict;
pub mod selection;

pub use error::{Error, Result};

// re-exported so downstream callers can build the numeric types without
// pinning their own copy of the linear-algebra crate
pub use nalgebra;

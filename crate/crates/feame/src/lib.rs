//! Fixed-effects dynamic logit panels: conditional maximum likelihood and
//! closed-form average marginal effects.
//!
//! The library estimates binary and multinomial logit models for short choice
//! panels in which every individual carries an unrestricted fixed effect.
//! Slope parameters are estimated by conditional maximum likelihood (grouping
//! histories by a minimal sufficient statistic for the fixed effect), and the
//! average marginal effects of lagged choices are recovered as weighted sums
//! of observed history frequencies — no distributional assumption on the
//! heterogeneity is needed.
//!
//! Modules:
//! - [`panel`]: choice-panel data model, CSV ingestion, sub-history
//!   splitting, history/transition frequencies.
//! - [`model`]: transition probabilities for the four supported variants,
//!   duration bookkeeping, sufficient-statistic signatures and equivalence
//!   classes.
//! - [`likelihood`]: conditional log-likelihood and the Newton-based slope
//!   estimator.
//! - [`weights`]: identification weights that map history frequencies to the
//!   one-period average marginal effect at any window length.
//! - [`ame`]: plug-in estimators for average transition probabilities,
//!   one-period / n-period / covariate / duration marginal effects, treatment
//!   effects, and the persistence decomposition.
//! - [`remle`]: no-heterogeneity and finite-mixture random-effects maximum
//!   likelihood, plus exact population values of the marginal effects for a
//!   specified heterogeneity distribution.
//! - [`inference`]: bootstrap standard errors and Hausman specification
//!   tests.
//! - [`mc`]: data-generating processes and the Monte Carlo experiment
//!   runner.
//!
//! The `feame` binary exposes the full pipeline as subcommands; all
//! subcommand output is deterministic JSON (fixed field order, 17
//! significant digits) so results are byte-for-byte reproducible.

pub mod ame;
pub mod error;
pub mod inference;
pub mod jsonio;
pub mod likelihood;
pub mod mc;
pub mod model;
pub mod numeric;
pub mod panel;
pub mod remle;
pub mod rng;
pub mod weights;

pub use error::{Error, Result};

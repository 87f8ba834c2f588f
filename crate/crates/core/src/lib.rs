//! Simultaneous graphical dynamic linear models (SGDLMs) for multivariate
//! time-series forecasting.
//!
//! The model couples `m` univariate stochastic-volatility DLMs through
//! same-day "simultaneous parent" regressions (Gruber & West 2016,
//! *Bayesian Analysis* 11). Each trading day runs one cycle:
//!
//! 1. sample the decoupled normal-gamma priors and simulate joint forecasts,
//! 2. update every series with the standard Kalman recursions,
//! 3. recouple the per-series posteriors by determinant-weighted importance
//!    sampling,
//! 4. decouple back to a product of normal-gamma factors by mean-field
//!    variational Bayes,
//! 5. evolve each factor with block discounting.
//!
//! The crate also ships the phase-1/2 machinery (parent selection and
//! discount-factor selection by per-series log-likelihood), a forecast
//! evaluation suite (interval coverage, RMSE/MAD, moving-average trends,
//! importance-sample diagnostics), CSV panel ingestion, and a ground-truth
//! synthetic simulator for end-to-end checks.

pub mod cycle;
pub mod dlm;
pub mod error;
pub mod eval;
pub mod ng;
pub mod panel;
pub mod rng;
pub mod selection;
pub mod special;
pub mod structure;
pub mod synth;

pub use cycle::{
    assimilate_day, decouple, forecast_day, naive_update, normalize_weights, recouple,
    regressor_for, step_day, DayDiagnostics, ForecastSummary, JointDraw, MonteCarloSettings,
    WeightedPosterior,
};
pub use dlm::{
    evolve, evolve_block, kalman_update, log_likelihood, one_step_predictive, DiscountSet,
    DlmState, KalmanStep,
};
pub use error::Error;
pub use ng::{sample_normal_gamma, NgSampler, NormalGamma, StateDraw};
pub use panel::{ingest_prices, ingest_prices_with, IngestReport, MissingPolicy, ReturnsPanel};
pub use selection::{
    argmax_discounts, run_phase2, select_discount, select_parents, DiscountFactor, DiscountGrid,
    DiscountSelection, ParentReport,
};
pub use structure::{assemble_gamma, det_and_solve, ParentStructure};
pub use synth::{
    realize_panel, simulate_synthetic, CouplingDesign, SyntheticScenario, SyntheticTruth,
};

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

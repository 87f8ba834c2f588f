//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Errors raised by the filtering, coupling, selection, and data layers.
#[derive(Debug, Error)]
pub enum Error {
    /// Mismatched vector/matrix dimensions.
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },

    /// A scale matrix failed the symmetric-positive-definite check.
    #[error("scale matrix is not positive definite: {0}")]
    Definiteness(String),

    /// An argument was outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The one-step forecast variance factor collapsed to a non-positive value.
    #[error("numerical degeneracy: forecast variance factor q = {q} is not positive")]
    DegenerateForecastVariance { q: f64 },

    /// `I - Gamma` was numerically singular.
    #[error("singular system: |det(I - Gamma)| = {det:e} below threshold")]
    Singular { det: f64 },

    /// The degrees-of-freedom equation had no root on the search bracket.
    #[error("no root for the degrees-of-freedom equation on [{lo:e}, {hi:e}]; the importance sample is degenerate")]
    NoRoot { lo: f64, hi: f64 },

    /// More than the tolerated share of forecast draws were singular.
    #[error("degenerate priors: {singular} of {total} forecast draws had singular I - Gamma")]
    DegeneratePrior { singular: usize, total: usize },

    /// Every importance weight vanished.
    #[error("degenerate recoupling: all {n} importance weights are zero")]
    DegenerateRecoupling { n: usize },

    /// The weighted sample carried no usable spread for the variational fit.
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    /// Effective sample size fell below the configured floor.
    #[error("effective sample size {ess:.1} below floor {floor:.1}; refusing to decouple")]
    EssFloor { ess: f64, floor: f64 },

    /// A series/regressor range did not line up with the panel.
    #[error("alignment error: {0}")]
    Alignment(String),

    /// Not enough data to run the requested operation.
    #[error("range error: {0}")]
    Range(String),

    /// A malformed value in an input file.
    #[error("data error at row {row}, ticker {ticker}: {message}")]
    Data {
        row: usize,
        ticker: String,
        message: String,
    },

    /// Discount selection found no finite log-likelihood anywhere on the grid.
    #[error("selection failure: {0}")]
    SelectionFailure(String),

    /// Synthetic generation hit an unstable coupling matrix.
    #[error("generation error at day {day}: {message}")]
    Generation { day: usize, message: String },

    /// Underlying I/O failure while reading or writing panel files.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// CSV-level parse failure.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

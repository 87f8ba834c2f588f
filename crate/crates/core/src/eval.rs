//! Forecast evaluation: prediction intervals and empirical coverage, error
//! summaries (RMSE and MAD), moving averages for realized-volatility
//! comparisons, and Monte Carlo health diagnostics.

use nalgebra::DMatrix;

use crate::cycle::DayDiagnostics;
use crate::error::Error;
use crate::special::standard_normal_quantile;
use crate::Result;

/// A central prediction-interval specification: nominal coverage `level`
/// (as a fraction in (0, 1)) and the half-width multiplier `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalSpec {
    level: f64,
    z: f64,
}

impl IntervalSpec {
    pub fn new(level: f64, z: f64) -> Result<Self> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Range(format!(
                "interval level must lie in (0, 1), got {level}"
            )));
        }
        if !(z > 0.0) || !z.is_finite() {
            return Err(Error::Range(format!(
                "interval multiplier must be positive, got {z}"
            )));
        }
        Ok(Self { level, z })
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    /// The conventional seven-level ladder with two-decimal multipliers as
    /// commonly tabulated (99% -> 2.58, ..., 10% -> 0.13).
    pub fn standard_set() -> Vec<IntervalSpec> {
        [
            (0.99, 2.58),
            (0.95, 1.96),
            (0.90, 1.64),
            (0.80, 1.28),
            (0.50, 0.67),
            (0.20, 0.25),
            (0.10, 0.13),
        ]
        .into_iter()
        .map(|(level, z)| IntervalSpec { level, z })
        .collect()
    }

    /// A spec whose multiplier is the exact standard-normal quantile for the
    /// requested central coverage.
    pub fn exact(level: f64) -> Result<Self> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Range(format!(
                "interval level must lie in (0, 1), got {level}"
            )));
        }
        let z = standard_normal_quantile(0.5 + level / 2.0)?;
        IntervalSpec::new(level, z)
    }

    /// The seven-level ladder with exact quantile multipliers.
    pub fn exact_set() -> Result<Vec<IntervalSpec>> {
        [0.99, 0.95, 0.90, 0.80, 0.50, 0.20, 0.10]
            .into_iter()
            .map(IntervalSpec::exact)
            .collect()
    }
}

/// Empirical coverage percentages: one row of per-series values per level,
/// plus the unweighted cross-series aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageTable {
    pub levels: Vec<f64>,
    /// `per_series[l][i]` = percent of days series `i`'s observation fell in
    /// its level-`l` interval.
    pub per_series: Vec<Vec<f64>>,
    /// `aggregate[l]` = unweighted mean of `per_series[l]`.
    pub aggregate: Vec<f64>,
}

/// Central prediction interval around a Monte Carlo point forecast. The
/// half-width is `z * sqrt(variance) * sqrt(1 + 1/k_draws)`, inflating the
/// predictive scale for the sampling error of the point forecast itself.
pub fn prediction_interval(
    y_hat: f64,
    variance: f64,
    k_draws: usize,
    z: f64,
) -> Result<(f64, f64)> {
    if !y_hat.is_finite() {
        return Err(Error::Domain(format!("non-finite point forecast {y_hat}")));
    }
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::Domain(format!(
            "forecast variance must be positive, got {variance}"
        )));
    }
    if k_draws == 0 {
        return Err(Error::Range("draw count must be positive".into()));
    }
    if !(z >= 0.0) || !z.is_finite() {
        return Err(Error::Range(format!(
            "interval multiplier must be nonnegative, got {z}"
        )));
    }
    let half = z * variance.sqrt() * (1.0 + 1.0 / k_draws as f64).sqrt();
    Ok((y_hat - half, y_hat + half))
}

/// Empirical coverage of central prediction intervals over a forecast run.
/// All three matrices are days-by-series and must agree in shape.
pub fn coverage(
    observed: &DMatrix<f64>,
    forecast: &DMatrix<f64>,
    variance: &DMatrix<f64>,
    k_draws: usize,
    specs: &[IntervalSpec],
) -> Result<CoverageTable> {
    let (t_len, m) = observed.shape();
    if forecast.shape() != (t_len, m) || variance.shape() != (t_len, m) {
        return Err(Error::Alignment(format!(
            "observed {:?}, forecast {:?}, variance {:?} shapes disagree",
            observed.shape(),
            forecast.shape(),
            variance.shape()
        )));
    }
    if t_len == 0 || m == 0 {
        return Err(Error::Range("coverage needs at least one day and series".into()));
    }
    if specs.is_empty() {
        return Err(Error::Range("no interval specifications supplied".into()));
    }
    let mut per_series = Vec::with_capacity(specs.len());
    let mut aggregate = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut row = Vec::with_capacity(m);
        for i in 0..m {
            let mut hits = 0usize;
            for t in 0..t_len {
                let (lo, hi) =
                    prediction_interval(forecast[(t, i)], variance[(t, i)], k_draws, spec.z)?;
                let y = observed[(t, i)];
                if lo <= y && y <= hi {
                    hits += 1;
                }
            }
            row.push(100.0 * hits as f64 / t_len as f64);
        }
        aggregate.push(row.iter().sum::<f64>() / m as f64);
        per_series.push(row);
    }
    Ok(CoverageTable {
        levels: specs.iter().map(|s| s.level).collect(),
        per_series,
        aggregate,
    })
}

/// Root-mean-square error and mean absolute deviation of forecast errors.
pub fn rmse_mad(observations: &[f64], forecasts: &[f64]) -> Result<(f64, f64)> {
    if observations.len() != forecasts.len() {
        return Err(Error::Alignment(format!(
            "{} observations vs {} forecasts",
            observations.len(),
            forecasts.len()
        )));
    }
    if observations.is_empty() {
        return Err(Error::Range("error summary of an empty series".into()));
    }
    let n = observations.len() as f64;
    let mut sq = 0.0;
    let mut abs = 0.0;
    for (&y, &f) in observations.iter().zip(forecasts) {
        let e = y - f;
        sq += e * e;
        abs += e.abs();
    }
    Ok(((sq / n).sqrt(), abs / n))
}

/// Simple moving average with a trailing window; output index `t` averages
/// `series[t ..= t + window - 1]`, so the result has `len - window + 1`
/// entries.
pub fn sma(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::Range("moving-average window must be positive".into()));
    }
    if series.len() < window {
        return Err(Error::Range(format!(
            "window {window} exceeds series length {}",
            series.len()
        )));
    }
    let inv = 1.0 / window as f64;
    Ok(series
        .windows(window)
        .map(|w| w.iter().sum::<f64>() * inv)
        .collect())
}

/// One day's Monte Carlo health record with its flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRow {
    pub ess: f64,
    pub kl: f64,
    pub kl_bound: f64,
    /// Set when the effective sample size fell below 66% of the draw count.
    pub flagged: bool,
}

/// Convert a run's per-day diagnostics into flagged rows.
pub fn diagnostics_series(diags: &[DayDiagnostics], n_draws: usize) -> Result<Vec<DiagnosticsRow>> {
    if n_draws == 0 {
        return Err(Error::Range("draw count must be positive".into()));
    }
    let threshold = 0.66 * n_draws as f64;
    Ok(diags
        .iter()
        .map(|d| DiagnosticsRow {
            ess: d.ess,
            kl: d.kl,
            kl_bound: d.kl_bound,
            flagged: d.ess < threshold,
        })
        .collect())
}

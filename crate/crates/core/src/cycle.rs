//! One trading day of the coupled engine: simulate the joint one-step
//! forecast, assimilate the day's observations series-by-series, recouple the
//! per-series posteriors into a weighted joint sample, decouple back to
//! conjugate form by moment matching, and evolve into the next day's priors.
//!
//! The recouple/decouple pair is what keeps an m-dimensional coupled model
//! tractable: series are filtered independently (exact, thanks to the
//! triangular-free factorization of the joint density) and the cross-series
//! dependence is restored by importance weights proportional to
//! `|det(I - Gamma)|`, then projected back onto a product of normal-gammas
//! by minimising KL divergence (Gruber & West 2016).

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dlm::{evolve_with, kalman_update, DiscountSet};
use crate::error::Error;
use crate::ng::{NgSampler, NormalGamma, StateDraw};
use crate::rng::{substream, Stream};
use crate::special::solve_mfvb_dof;
use crate::structure::{assemble_gamma, factor_coupling, ParentStructure};
use crate::Result;

/// Monte Carlo sizes for the daily cycle: `forecast_draws` (K) joint draws
/// for the one-step forecast, `posterior_draws` (N) for the importance
/// sample, and the effective-sample-size floor under which decoupling
/// refuses to fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloSettings {
    pub forecast_draws: usize,
    pub posterior_draws: usize,
    pub ess_floor: f64,
}

impl Default for MonteCarloSettings {
    fn default() -> Self {
        Self {
            forecast_draws: 2000,
            posterior_draws: 2000,
            ess_floor: 10.0,
        }
    }
}

/// One joint draw across all series: each series' state, and the coupling
/// matrix those states imply (nonzero only at parent positions, zero
/// diagonal).
#[derive(Debug, Clone, PartialEq)]
pub struct JointDraw {
    pub states: Vec<StateDraw>,
    pub gamma: DMatrix<f64>,
}

/// An importance-weighted joint posterior sample; weights are normalized,
/// nonnegative, and sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPosterior {
    draws: Vec<JointDraw>,
    weights: Vec<f64>,
}

impl WeightedPosterior {
    pub fn new(draws: Vec<JointDraw>, weights: Vec<f64>) -> Result<Self> {
        if draws.is_empty() || draws.len() != weights.len() {
            return Err(Error::Dimension {
                what: "importance weights".into(),
                expected: draws.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Domain("weights must be finite and nonnegative".into()));
        }
        let total = kahan_sum(weights.iter().copied());
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "weights must sum to 1 within 1e-12, got {total}"
            )));
        }
        Ok(Self { draws, weights })
    }

    pub fn draws(&self) -> &[JointDraw] {
        &self.draws
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

/// Health of one day's importance sample: effective sample size and the KL
/// divergence of the weights from uniform, which cannot exceed `ln N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DayDiagnostics {
    pub ess: f64,
    pub kl: f64,
    pub kl_bound: f64,
}

/// One-step-ahead joint forecast: point forecast, forecast covariance, and
/// the simulation sample behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSummary {
    /// Monte Carlo mean of `(I - Gamma)^{-1} phi`.
    pub point: DVector<f64>,
    /// Mean within-draw covariance plus between-draw covariance of the
    /// conditional means (law of total variance).
    pub covariance: DMatrix<f64>,
    /// Parameter draws that survived the singularity screen.
    pub draws: Vec<JointDraw>,
    /// Simulated next-day observation for each kept draw.
    pub outcomes: Vec<DVector<f64>>,
    /// Number of draws discarded as numerically singular.
    pub skipped: usize,
}

fn kahan_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for v in values {
        let y = v - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum
}

fn build_samplers(priors: &[NormalGamma]) -> Result<Vec<NgSampler>> {
    priors.iter().map(NgSampler::new).collect()
}

fn draw_joint(
    samplers: &[NgSampler],
    structure: &ParentStructure,
    rng: &mut ChaCha8Rng,
) -> Result<JointDraw> {
    let states = samplers
        .iter()
        .map(|s| s.draw(rng))
        .collect::<Result<Vec<_>>>()?;
    let gamma = assemble_gamma(&states, structure)?;
    Ok(JointDraw { states, gamma })
}

/// Regressor for series `i` on a day with realized returns `observations`:
/// an intercept followed by the parents' returns in parent-list order.
pub fn regressor_for(
    structure: &ParentStructure,
    i: usize,
    observations: &DVector<f64>,
) -> DVector<f64> {
    let mut f = DVector::zeros(structure.state_dim());
    f[0] = 1.0;
    for (slot, &j) in structure.parents(i).iter().enumerate() {
        f[slot + 1] = observations[j];
    }
    f
}

fn check_panel_shape(priors: &[NormalGamma], structure: &ParentStructure) -> Result<()> {
    if priors.len() != structure.m() {
        return Err(Error::Dimension {
            what: "per-series priors".into(),
            expected: structure.m(),
            got: priors.len(),
        });
    }
    let p = structure.state_dim();
    for (i, prior) in priors.iter().enumerate() {
        if prior.dim() != p {
            return Err(Error::Dimension {
                what: format!("state dimension of series {i}"),
                expected: p,
                got: prior.dim(),
            });
        }
    }
    Ok(())
}

struct ForecastDraw {
    draw: JointDraw,
    conditional_mean: DVector<f64>,
    conditional_cov: DMatrix<f64>,
    outcome: DVector<f64>,
}

/// Simulate the one-step-ahead joint forecast from decoupled priors.
///
/// Each draw samples every series' state, solves the coupling system
/// `(I - Gamma) y = phi + v` with `v ~ N(0, diag(1/lambda))`, and contributes
/// its conditional mean `A phi` and covariance `A diag(1/lambda) A'`
/// (computed by solves against the one LU factorization — the inverse is
/// never formed). Draws whose coupling matrix is numerically singular are
/// dropped; more than 1% of them dropping signals a degenerate prior.
pub fn forecast_day(
    priors: &[NormalGamma],
    structure: &ParentStructure,
    draws: usize,
    seed: u64,
    day: u64,
) -> Result<ForecastSummary> {
    check_panel_shape(priors, structure)?;
    if draws == 0 {
        return Err(Error::Range("forecast needs at least one draw".into()));
    }
    let m = structure.m();
    let samplers = build_samplers(priors)?;

    let results: Vec<Option<ForecastDraw>> = (0..draws)
        .into_par_iter()
        .map(|r| -> Result<Option<ForecastDraw>> {
            let mut rng = substream(seed, Stream::Forecast, day, r as u64);
            let joint = draw_joint(&samplers, structure, &mut rng)?;
            let lu = match factor_coupling(&joint.gamma) {
                Ok((_, lu)) => lu,
                Err(Error::Singular { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            let phi = DVector::from_fn(m, |i, _| joint.states[i].theta[0]);
            let mut half_cov = DMatrix::zeros(m, m);
            let mut noise = DVector::zeros(m);
            for i in 0..m {
                let sd = 1.0 / joint.states[i].lambda.sqrt();
                half_cov[(i, i)] = sd;
                noise[i] = sd * rng.sample::<f64, _>(StandardNormal);
            }
            let (conditional_mean, shock, half) =
                match (lu.solve(&phi), lu.solve(&noise), lu.solve(&half_cov)) {
                    (Some(a), Some(b), Some(c)) => (a, b, c),
                    _ => return Ok(None),
                };
            if conditional_mean.iter().any(|v| !v.is_finite())
                || half.iter().any(|v| !v.is_finite())
            {
                return Ok(None);
            }
            let conditional_cov = &half * half.transpose();
            let outcome = &conditional_mean + shock;
            Ok(Some(ForecastDraw {
                draw: joint,
                conditional_mean,
                conditional_cov,
                outcome,
            }))
        })
        .collect::<Result<_>>()?;

    let kept: Vec<ForecastDraw> = results.into_iter().flatten().collect();
    let skipped = draws - kept.len();
    if skipped * 100 > draws {
        return Err(Error::DegeneratePrior {
            singular: skipped,
            total: draws,
        });
    }

    let n = kept.len() as f64;
    let mut point = DVector::zeros(m);
    for d in &kept {
        point += &d.conditional_mean;
    }
    point /= n;
    let mut covariance = DMatrix::zeros(m, m);
    let mut centered = DVector::zeros(m);
    for d in &kept {
        covariance += &d.conditional_cov;
        centered.copy_from(&d.conditional_mean);
        centered -= &point;
        covariance.ger(1.0, &centered, &centered, 1.0);
    }
    covariance /= n;
    let sym = (&covariance + covariance.transpose()) * 0.5;
    covariance.copy_from(&sym);

    let mut out_draws = Vec::with_capacity(kept.len());
    let mut outcomes = Vec::with_capacity(kept.len());
    for d in kept {
        out_draws.push(d.draw);
        outcomes.push(d.outcome);
    }
    Ok(ForecastSummary {
        point,
        covariance,
        draws: out_draws,
        outcomes,
        skipped,
    })
}

/// Series-by-series conjugate update against the day's realized returns:
/// series `i` regresses on an intercept and its parents' same-day returns.
/// Exact, not an approximation — the joint density factorizes into these
/// univariate updates times the determinant weight handled by [`recouple`].
pub fn naive_update(
    priors: &[NormalGamma],
    observations: &DVector<f64>,
    structure: &ParentStructure,
) -> Result<Vec<NormalGamma>> {
    check_panel_shape(priors, structure)?;
    if observations.len() != structure.m() {
        return Err(Error::Dimension {
            what: "observations".into(),
            expected: structure.m(),
            got: observations.len(),
        });
    }
    (0..structure.m())
        .map(|i| {
            let f = regressor_for(structure, i, observations);
            kalman_update(&priors[i], &f, observations[i]).map(|step| step.posterior)
        })
        .collect()
}

/// Normalize raw determinant weights and compute the day's diagnostics from
/// them. With `S = sum(raw)`, `ess = S^2 / sum(raw^2)` and
/// `kl = ln N - ln S + sum(raw·ln raw)/S`; both reduce exactly to `N` and
/// `0` for uniform raw weights, and to `1` and `ln N` for a one-hot sample.
pub fn normalize_weights(raw: &[f64]) -> Result<(Vec<f64>, DayDiagnostics)> {
    let n = raw.len();
    if raw.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Domain(
            "raw importance weights must be finite and nonnegative".into(),
        ));
    }
    let total = kahan_sum(raw.iter().copied());
    if !(total > 0.0) {
        return Err(Error::DegenerateRecoupling { n });
    }
    let sum_sq = kahan_sum(raw.iter().map(|w| w * w));
    let weighted_log = kahan_sum(raw.iter().filter(|w| **w > 0.0).map(|w| w * w.ln()));
    let kl_bound = (n as f64).ln();
    let ess = (total * total / sum_sq).min(n as f64);
    let kl = (kl_bound - total.ln() + weighted_log / total)
        .max(0.0)
        .min(kl_bound);
    let weights = raw.iter().map(|w| w / total).collect();
    Ok((
        weights,
        DayDiagnostics { ess, kl, kl_bound },
    ))
}

/// Restore cross-series dependence by importance sampling: draw `draws`
/// joint states from the product of the naively updated posteriors and
/// weight each by `|det(I - Gamma)|`. Numerically singular draws get weight
/// zero; a sample with no usable weight at all is an error.
pub fn recouple(
    naive_posteriors: &[NormalGamma],
    structure: &ParentStructure,
    draws: usize,
    seed: u64,
    day: u64,
) -> Result<(WeightedPosterior, DayDiagnostics)> {
    check_panel_shape(naive_posteriors, structure)?;
    if draws < 2 {
        return Err(Error::Range(format!(
            "importance sample needs at least 2 draws, got {draws}"
        )));
    }
    let samplers = build_samplers(naive_posteriors)?;
    let sampled: Vec<(JointDraw, f64)> = (0..draws)
        .into_par_iter()
        .map(|r| -> Result<(JointDraw, f64)> {
            let mut rng = substream(seed, Stream::Posterior, day, r as u64);
            let joint = draw_joint(&samplers, structure, &mut rng)?;
            let raw = match factor_coupling(&joint.gamma) {
                Ok((det, _)) => det.abs(),
                Err(Error::Singular { .. }) => 0.0,
                Err(e) => return Err(e),
            };
            Ok((joint, raw))
        })
        .collect::<Result<_>>()?;

    let raw: Vec<f64> = sampled.iter().map(|(_, w)| *w).collect();
    let (weights, diagnostics) = normalize_weights(&raw)?;
    let joint_draws = sampled.into_iter().map(|(d, _)| d).collect();
    Ok((WeightedPosterior::new(joint_draws, weights)?, diagnostics))
}

struct SeriesMoments {
    e_lambda: f64,
    e_log_lambda: f64,
    location: DVector<f64>,
    scatter: DMatrix<f64>,
    mahalanobis: f64,
}

fn series_moments(wp: &WeightedPosterior, i: usize, p: usize) -> Result<SeriesMoments> {
    let mut e_lambda = 0.0;
    let mut e_log_lambda = 0.0;
    let mut e_lambda_theta = DVector::zeros(p);
    for (draw, &w) in wp.draws().iter().zip(wp.weights()) {
        let st = &draw.states[i];
        if st.theta.len() != p {
            return Err(Error::Dimension {
                what: format!("state vector of series {i}"),
                expected: p,
                got: st.theta.len(),
            });
        }
        if !(st.lambda > 0.0) {
            return Err(Error::DegenerateSample(format!(
                "series {i} has a draw with lambda = {}",
                st.lambda
            )));
        }
        e_lambda += w * st.lambda;
        e_log_lambda += w * st.lambda.ln();
        e_lambda_theta.axpy(w * st.lambda, &st.theta, 1.0);
    }
    if !(e_lambda > 0.0) {
        return Err(Error::DegenerateSample(format!(
            "series {i} has zero weighted precision mass"
        )));
    }
    let location = e_lambda_theta / e_lambda;

    let mut scatter = DMatrix::zeros(p, p);
    let mut centered = DVector::zeros(p);
    for (draw, &w) in wp.draws().iter().zip(wp.weights()) {
        let st = &draw.states[i];
        centered.copy_from(&st.theta);
        centered -= &location;
        scatter.ger(w * st.lambda, &centered, &centered, 1.0);
    }
    let chol = Cholesky::new(scatter.clone()).ok_or_else(|| {
        Error::DegenerateSample(format!(
            "series {i} precision-weighted scatter matrix is singular"
        ))
    })?;
    let mut mahalanobis = 0.0;
    let mut solved = DVector::zeros(p);
    for (draw, &w) in wp.draws().iter().zip(wp.weights()) {
        let st = &draw.states[i];
        centered.copy_from(&st.theta);
        centered -= &location;
        solved.copy_from(&centered);
        chol.solve_mut(&mut solved);
        mahalanobis += w * st.lambda * centered.dot(&solved);
    }
    Ok(SeriesMoments {
        e_lambda,
        e_log_lambda,
        location,
        scatter,
        mahalanobis,
    })
}

/// Project the weighted joint sample back onto independent normal-gamma
/// posteriors, one per series, by matching the precision-weighted moments
/// (the KL-optimal mean-field fit). Refuses to fit from an importance sample
/// whose effective size is below `ess_floor`.
pub fn decouple(
    wp: &WeightedPosterior,
    structure: &ParentStructure,
    ess_floor: f64,
) -> Result<Vec<NormalGamma>> {
    let m = structure.m();
    for draw in wp.draws() {
        if draw.states.len() != m {
            return Err(Error::Dimension {
                what: "joint draw".into(),
                expected: m,
                got: draw.states.len(),
            });
        }
    }
    let sum_sq = kahan_sum(wp.weights().iter().map(|w| w * w));
    let ess = 1.0 / sum_sq;
    if ess < ess_floor {
        return Err(Error::EssFloor {
            ess,
            floor: ess_floor,
        });
    }
    let p = structure.state_dim();
    (0..m)
        .into_par_iter()
        .map(|i| {
            let mom = series_moments(wp, i, p)?;
            let pf = p as f64;
            let p_minus_d = pf - mom.mahalanobis;
            let n = solve_mfvb_dof(mom.e_lambda, mom.e_log_lambda, p_minus_d)?;
            let s = (n + p_minus_d) / (n * mom.e_lambda);
            let c = mom.scatter * s;
            NormalGamma::new(mom.location, c, n, s)
        })
        .collect()
}

/// Assimilate one day's observations without forecasting: naive update,
/// recouple, decouple, and evolve into the next day's priors.
pub fn assimilate_day(
    priors: &[NormalGamma],
    observations: &DVector<f64>,
    structure: &ParentStructure,
    discounts: &DiscountSet,
    settings: &MonteCarloSettings,
    seed: u64,
    day: u64,
) -> Result<(Vec<NormalGamma>, DayDiagnostics)> {
    let naive = naive_update(priors, observations, structure)?;
    let (wp, diagnostics) = recouple(&naive, structure, settings.posterior_draws, seed, day)?;
    let decoupled = decouple(&wp, structure, settings.ess_floor)?;
    let next = decoupled
        .iter()
        .map(|posterior| evolve_with(posterior, discounts))
        .collect::<Result<Vec<_>>>()?;
    Ok((next, diagnostics))
}

/// One full trading day: forecast, then assimilate and evolve. Returns the
/// next day's priors along with the forecast made before seeing the data and
/// the day's importance-sample diagnostics.
pub fn step_day(
    priors: &[NormalGamma],
    observations: &DVector<f64>,
    structure: &ParentStructure,
    discounts: &DiscountSet,
    settings: &MonteCarloSettings,
    seed: u64,
    day: u64,
) -> Result<(Vec<NormalGamma>, ForecastSummary, DayDiagnostics)> {
    let forecast = forecast_day(priors, structure, settings.forecast_draws, seed, day)?;
    let (next, diagnostics) =
        assimilate_day(priors, observations, structure, discounts, settings, seed, day)?;
    Ok((next, forecast, diagnostics))
}

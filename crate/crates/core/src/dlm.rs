//! Univariate dynamic linear model with stochastic observational variance:
//! conjugate Kalman updating, discount-based evolution (plain and
//! block-structured), and the one-step Student-t predictive.
//!
//! This filter runs standalone as the benchmark univariate model and as the
//! per-series kernel inside the coupled engine, where the regressor carries
//! the parent returns. See Prado & West, "Time Series: Modeling, Computation,
//! and Inference" (2010), ch. 4 for the recursions.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::ng::NormalGamma;
use crate::special::student_t_log_density;
use crate::Result;

/// Discount factors controlling how fast the model forgets: `beta` for the
/// observational precision, `delta_phi` for the local level, `delta_gamma`
/// for the coupling coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscountSet {
    pub beta: f64,
    pub delta_phi: f64,
    pub delta_gamma: f64,
}

impl DiscountSet {
    pub fn new(beta: f64, delta_phi: f64, delta_gamma: f64) -> Result<Self> {
        for (name, v) in [
            ("beta", beta),
            ("delta_phi", delta_phi),
            ("delta_gamma", delta_gamma),
        ] {
            check_unit_interval(name, v)?;
        }
        Ok(Self {
            beta,
            delta_phi,
            delta_gamma,
        })
    }
}

fn check_unit_interval(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v <= 1.0) {
        return Err(Error::Range(format!(
            "discount factor {name} must lie in (0, 1], got {v}"
        )));
    }
    Ok(())
}

/// A series' filter position within the day: the time-`t` prior, and the
/// time-`t` posterior once the day's observation has been assimilated.
#[derive(Debug, Clone, PartialEq)]
pub struct DlmState {
    pub prior: NormalGamma,
    pub posterior: Option<NormalGamma>,
    pub t: usize,
}

impl DlmState {
    pub fn new(prior: NormalGamma) -> Self {
        Self {
            prior,
            posterior: None,
            t: 0,
        }
    }

    /// Assimilate the day's observation; returns the one-step forecast error
    /// and variance factor.
    pub fn assimilate(&mut self, regressor: &DVector<f64>, observation: f64) -> Result<(f64, f64)> {
        let step = kalman_update(&self.prior, regressor, observation)?;
        let out = (step.forecast_error, step.forecast_variance_factor);
        self.posterior = Some(step.posterior);
        Ok(out)
    }

    /// Evolve the assimilated posterior into the next day's prior.
    pub fn advance(&mut self, discounts: &DiscountSet) -> Result<()> {
        let posterior = self.posterior.take().ok_or_else(|| {
            Error::Domain("cannot advance: no observation assimilated for this day".into())
        })?;
        self.prior = evolve_with(&posterior, discounts)?;
        self.t += 1;
        Ok(())
    }
}

/// Result of assimilating one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanStep {
    pub posterior: NormalGamma,
    pub forecast_error: f64,
    pub forecast_variance_factor: f64,
}

/// Conjugate update of a normal-gamma prior by one observation
/// `y = F'theta + N(0, 1/lambda)`.
pub fn kalman_update(
    prior: &NormalGamma,
    regressor: &DVector<f64>,
    observation: f64,
) -> Result<KalmanStep> {
    let p = prior.dim();
    if regressor.len() != p {
        return Err(Error::Dimension {
            what: "regressor".into(),
            expected: p,
            got: regressor.len(),
        });
    }
    if !observation.is_finite() {
        return Err(Error::Domain(format!(
            "observation must be finite, got {observation}"
        )));
    }
    let a = prior.location();
    let big_r = prior.scale_matrix();
    let r = prior.dof();
    let c = prior.variance_estimate();

    let forecast = regressor.dot(a);
    let e = observation - forecast;
    let rf = big_r * regressor;
    let q = c + regressor.dot(&rf);
    if !(q > 0.0) || !q.is_finite() {
        return Err(Error::DegenerateForecastVariance { q });
    }
    let gain = &rf / q;
    let z = (r + e * e / q) / (r + 1.0);
    let m = a + &gain * e;
    let mut cov = (big_r - &rf * rf.transpose() / q) * z;
    // Suppress asymmetry drift accumulated over thousands of updates.
    let sym = (&cov + cov.transpose()) * 0.5;
    cov.copy_from(&sym);
    let posterior = NormalGamma::new(m, cov, r + 1.0, z * c)?;
    Ok(KalmanStep {
        posterior,
        forecast_error: e,
        forecast_variance_factor: q,
    })
}

/// Evolve a posterior into the next prior under a single state discount:
/// the location persists, the scale matrix inflates by `1/delta`, and the
/// precision evidence decays by `beta`.
pub fn evolve(posterior: &NormalGamma, beta: f64, delta: f64) -> Result<NormalGamma> {
    check_unit_interval("beta", beta)?;
    check_unit_interval("delta", delta)?;
    NormalGamma::new(
        posterior.location().clone(),
        posterior.scale_matrix() / delta,
        beta * posterior.dof(),
        posterior.variance_estimate(),
    )
}

/// Block-discount evolution: the level (coordinate 0) and the coupling block
/// (coordinates 1..p) inflate under their own discounts, and cross-block
/// covariance is dropped to keep the prior block-diagonal.
pub fn evolve_block(
    posterior: &NormalGamma,
    beta: f64,
    delta_phi: f64,
    delta_gamma: f64,
) -> Result<NormalGamma> {
    check_unit_interval("beta", beta)?;
    check_unit_interval("delta_phi", delta_phi)?;
    check_unit_interval("delta_gamma", delta_gamma)?;
    let p = posterior.dim();
    if p < 2 {
        return Err(Error::Dimension {
            what: "block evolution state".into(),
            expected: 2,
            got: p,
        });
    }
    let c_mat = posterior.scale_matrix();
    let mut r_mat = DMatrix::zeros(p, p);
    r_mat[(0, 0)] = c_mat[(0, 0)] / delta_phi;
    for i in 1..p {
        for j in 1..p {
            r_mat[(i, j)] = c_mat[(i, j)] / delta_gamma;
        }
    }
    NormalGamma::new(
        posterior.location().clone(),
        r_mat,
        beta * posterior.dof(),
        posterior.variance_estimate(),
    )
}

/// Evolve under a [`DiscountSet`], using block structure when the state has a
/// coupling block and the plain level discount otherwise.
pub fn evolve_with(posterior: &NormalGamma, discounts: &DiscountSet) -> Result<NormalGamma> {
    if posterior.dim() == 1 {
        evolve(posterior, discounts.beta, discounts.delta_phi)
    } else {
        evolve_block(
            posterior,
            discounts.beta,
            discounts.delta_phi,
            discounts.delta_gamma,
        )
    }
}

/// One-step-ahead predictive of `y = F'theta + noise` under the prior:
/// Student-t `(dof, mode, scale)` with `scale` the squared-scale factor.
pub fn one_step_predictive(prior: &NormalGamma, regressor: &DVector<f64>) -> Result<(f64, f64, f64)> {
    let p = prior.dim();
    if regressor.len() != p {
        return Err(Error::Dimension {
            what: "regressor".into(),
            expected: p,
            got: regressor.len(),
        });
    }
    let mode = regressor.dot(prior.location());
    let scale = prior.variance_estimate() + (prior.scale_matrix() * regressor).dot(regressor);
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::DegenerateForecastVariance { q: scale });
    }
    Ok((prior.dof(), mode, scale))
}

/// Cumulative one-step predictive log density of `observations[range.0..=range.1]`,
/// with the filter advanced from the start of the slices.
pub fn log_likelihood(
    observations: &[f64],
    regressors: &[DVector<f64>],
    initial_prior: &NormalGamma,
    discounts: &DiscountSet,
    range: (usize, usize),
) -> Result<f64> {
    if observations.len() != regressors.len() {
        return Err(Error::Alignment(format!(
            "{} observations vs {} regressors",
            observations.len(),
            regressors.len()
        )));
    }
    let (start, end) = range;
    if start > end || end >= observations.len() {
        return Err(Error::Alignment(format!(
            "range [{start}, {end}] does not fit a series of length {}",
            observations.len()
        )));
    }
    let mut prior = initial_prior.clone();
    let mut total = 0.0;
    for t in 0..=end {
        let step = kalman_update(&prior, &regressors[t], observations[t])?;
        if t >= start {
            let (dof, mode, scale) = one_step_predictive(&prior, &regressors[t])?;
            total += student_t_log_density(observations[t], dof, mode, scale)?;
        }
        if t < end {
            prior = evolve_with(&step.posterior, discounts)?;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use approx::assert_abs_diff_eq;
    use nalgebra::{dmatrix, dvector};
    use rand_distr::{Distribution, StandardNormal};

    fn scalar_ng(a: f64, r_mat: f64, r: f64, c: f64) -> NormalGamma {
        NormalGamma::new(dvector![a], dmatrix![r_mat], r, c).unwrap()
    }

    #[test]
    fn hand_worked_scalar_update() {
        let prior = scalar_ng(0.0, 1.0, 4.0, 1.0);
        let step = kalman_update(&prior, &dvector![1.0], 1.0).unwrap();
        assert_abs_diff_eq!(step.forecast_error, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(step.forecast_variance_factor, 2.0, epsilon = 1e-15);
        let post = &step.posterior;
        assert_abs_diff_eq!(post.location()[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(post.scale_matrix()[(0, 0)], 0.45, epsilon = 1e-15);
        assert_abs_diff_eq!(post.dof(), 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(post.variance_estimate(), 0.9, epsilon = 1e-15);
    }

    #[test]
    fn zero_forecast_error_shrinks_variance_only() {
        let prior = NormalGamma::new(
            dvector![0.3, -0.7],
            dmatrix![0.5, 0.1; 0.1, 0.4],
            6.0,
            2.0,
        )
        .unwrap();
        let f = dvector![1.0, 2.0];
        let y = f.dot(prior.location());
        let step = kalman_update(&prior, &f, y).unwrap();
        assert_abs_diff_eq!(step.forecast_error, 0.0, epsilon = 1e-15);
        let post = &step.posterior;
        assert_abs_diff_eq!(post.location()[0], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(post.location()[1], -0.7, epsilon = 1e-15);
        // z = r/(r+1)
        assert_abs_diff_eq!(post.variance_estimate(), 2.0 * 6.0 / 7.0, epsilon = 1e-14);
        assert_abs_diff_eq!(post.dof(), 7.0, epsilon = 1e-15);
    }

    #[test]
    fn update_rejects_mismatched_regressor() {
        let prior = scalar_ng(0.0, 1.0, 4.0, 1.0);
        assert!(kalman_update(&prior, &dvector![1.0, 2.0], 0.0).is_err());
        assert!(kalman_update(&prior, &dvector![1.0], f64::NAN).is_err());
    }

    #[test]
    fn evolve_applies_discounts() {
        let post = scalar_ng(0.5, 0.45, 5.0, 0.9);
        let prior = evolve(&post, 0.95, 0.9).unwrap();
        assert_abs_diff_eq!(prior.location()[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(prior.scale_matrix()[(0, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(prior.dof(), 4.75, epsilon = 1e-15);
        assert_abs_diff_eq!(prior.variance_estimate(), 0.9, epsilon = 1e-15);
    }

    #[test]
    fn unit_discounts_leave_parameters_unchanged() {
        let post = scalar_ng(0.5, 0.45, 5.0, 0.9);
        let prior = evolve(&post, 1.0, 1.0).unwrap();
        assert_eq!(&prior, &post);
    }

    #[test]
    fn half_discount_doubles_scale_matrix() {
        let post = NormalGamma::new(
            dvector![0.0, 0.0],
            dmatrix![0.2, 0.05; 0.05, 0.3],
            5.0,
            1.0,
        )
        .unwrap();
        let prior = evolve(&post, 1.0, 0.5).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(
                    prior.scale_matrix()[(i, j)],
                    2.0 * post.scale_matrix()[(i, j)],
                    epsilon = 1e-15
                );
            }
        }
    }

    #[test]
    fn evolve_rejects_out_of_range_discounts() {
        let post = scalar_ng(0.0, 1.0, 5.0, 1.0);
        assert!(evolve(&post, 0.0, 0.9).is_err());
        assert!(evolve(&post, 0.9, 1.1).is_err());
        assert!(DiscountSet::new(0.9, -0.1, 0.9).is_err());
    }

    #[test]
    fn block_evolution_zeroes_cross_terms() {
        let post = NormalGamma::new(
            dvector![0.1, 0.2],
            dmatrix![0.04, 0.01; 0.01, 0.09],
            10.0,
            0.5,
        )
        .unwrap();
        let prior = evolve_block(&post, 0.95, 0.8, 0.9).unwrap();
        let r = prior.scale_matrix();
        assert_abs_diff_eq!(r[(0, 0)], 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(r[(1, 1)], 0.1, epsilon = 1e-15);
        assert_eq!(r[(0, 1)], 0.0);
        assert_eq!(r[(1, 0)], 0.0);
        assert_abs_diff_eq!(prior.dof(), 9.5, epsilon = 1e-15);
        assert_abs_diff_eq!(prior.variance_estimate(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn block_evolution_reduces_to_plain_when_already_block_diagonal() {
        let post = NormalGamma::new(
            dvector![0.1, 0.2, -0.3],
            dmatrix![0.04, 0.0, 0.0; 0.0, 0.09, 0.02; 0.0, 0.02, 0.11],
            10.0,
            0.5,
        )
        .unwrap();
        let via_block = evolve_block(&post, 0.95, 0.9, 0.9).unwrap();
        let via_plain = evolve(&post, 0.95, 0.9).unwrap();
        assert_eq!(&via_block, &via_plain);
        assert!(evolve_block(&scalar_ng(0.0, 1.0, 5.0, 1.0), 0.9, 0.9, 0.9).is_err());
    }

    #[test]
    fn predictive_matches_forecast_factor() {
        let prior = scalar_ng(0.0, 1.0, 4.0, 1.0);
        let (dof, mode, scale) = one_step_predictive(&prior, &dvector![1.0]).unwrap();
        assert_eq!(dof, 4.0);
        assert_eq!(mode, 0.0);
        assert_abs_diff_eq!(scale, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn one_day_likelihood_is_a_single_t_density() {
        let prior = scalar_ng(0.2, 0.8, 6.0, 1.5);
        let discounts = DiscountSet::new(0.95, 0.99, 0.95).unwrap();
        let obs = [0.7];
        let regs = [dvector![1.0]];
        let ll = log_likelihood(&obs, &regs, &prior, &discounts, (0, 0)).unwrap();
        let q = 1.5 + 0.8;
        let want = student_t_log_density(0.7, 6.0, 0.2, q).unwrap();
        assert_abs_diff_eq!(ll, want, epsilon = 1e-14);
    }

    #[test]
    fn likelihood_is_order_dependent() {
        let prior = scalar_ng(0.0, 1.0, 5.0, 1.0);
        let discounts = DiscountSet::new(0.95, 0.97, 0.95).unwrap();
        let obs: Vec<f64> = vec![0.3, -1.2, 0.8, 2.1, -0.4, 0.05, 1.4, -0.9];
        let regs: Vec<_> = obs.iter().map(|_| dvector![1.0]).collect();
        let base = log_likelihood(&obs, &regs, &prior, &discounts, (0, 7)).unwrap();
        let mut shuffled = obs.clone();
        shuffled.swap(3, 6);
        let moved = log_likelihood(&shuffled, &regs, &prior, &discounts, (0, 7)).unwrap();
        assert!((base - moved).abs() > 1e-6);
    }

    #[test]
    fn likelihood_rejects_misaligned_inputs() {
        let prior = scalar_ng(0.0, 1.0, 5.0, 1.0);
        let discounts = DiscountSet::new(1.0, 1.0, 1.0).unwrap();
        let obs = [0.0, 1.0];
        let regs = [dvector![1.0]];
        assert!(matches!(
            log_likelihood(&obs, &regs, &prior, &discounts, (0, 1)),
            Err(Error::Alignment(_))
        ));
        let regs2 = [dvector![1.0], dvector![1.0]];
        assert!(log_likelihood(&obs, &regs2, &prior, &discounts, (1, 0)).is_err());
        assert!(log_likelihood(&obs, &regs2, &prior, &discounts, (0, 2)).is_err());
    }

    #[test]
    fn likelihood_per_day_approaches_gaussian_entropy_bound() {
        // i.i.d. N(0,1) data, no forgetting: the predictive converges to the
        // true density, so per-day log score approaches -0.5 ln(2 pi e).
        let mut rng = substream(21, Stream::Synthetic, 0, 0);
        let obs: Vec<f64> = (0..500)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let regs: Vec<_> = obs.iter().map(|_| dvector![1.0]).collect();
        let prior = scalar_ng(0.0, 1.0, 5.0, 1.0);
        let discounts = DiscountSet::new(1.0, 1.0, 1.0).unwrap();
        let tail = log_likelihood(&obs, &regs, &prior, &discounts, (250, 499)).unwrap();
        let per_day = tail / 250.0;
        assert!(
            (per_day - (-1.418_938_533_204_672_7)).abs() < 0.1,
            "per-day log score {per_day}"
        );
    }

    #[test]
    fn dlm_state_walks_through_days() {
        let prior = scalar_ng(0.0, 1.0, 4.0, 1.0);
        let mut state = DlmState::new(prior);
        let discounts = DiscountSet::new(0.95, 0.9, 0.9).unwrap();
        assert!(state.advance(&discounts).is_err());
        let (e, q) = state.assimilate(&dvector![1.0], 1.0).unwrap();
        assert_abs_diff_eq!(e, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q, 2.0, epsilon = 1e-15);
        assert!(state.posterior.is_some());
        state.advance(&discounts).unwrap();
        assert_eq!(state.t, 1);
        assert!(state.posterior.is_none());
        assert_abs_diff_eq!(state.prior.dof(), 4.75, epsilon = 1e-15);
        assert_abs_diff_eq!(state.prior.scale_matrix()[(0, 0)], 0.5, epsilon = 1e-13);
    }
}

//! The conjugate normal-gamma distribution over a series' state vector and
//! observational precision.
//!
//! Convention: `lambda ~ Gamma(shape = dof/2, rate = dof·variance_estimate/2)`
//! and `theta | lambda ~ N(location, scale_matrix / (variance_estimate·lambda))`.
//! Under this convention `E[lambda] = 1/variance_estimate`, the state marginal
//! is multivariate Student-t with `dof` degrees of freedom and squared-scale
//! matrix `scale_matrix`, and an observation `y = F'theta + N(0, 1/lambda)`
//! has the `T_dof[F'location, variance_estimate + F'·scale_matrix·F]`
//! predictive the filter relies on.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::Error;
use crate::Result;

/// Relative floor under which a scale-matrix eigenvalue counts as degenerate.
const EIGEN_FLOOR: f64 = 1e-12;

/// Parameters of a normal-gamma distribution; construction validates shape,
/// symmetry, and positive definiteness, so a held value is always usable.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalGamma {
    location: DVector<f64>,
    scale_matrix: DMatrix<f64>,
    dof: f64,
    variance_estimate: f64,
}

impl NormalGamma {
    pub fn new(
        location: DVector<f64>,
        scale_matrix: DMatrix<f64>,
        dof: f64,
        variance_estimate: f64,
    ) -> Result<Self> {
        let p = location.len();
        if scale_matrix.nrows() != p || scale_matrix.ncols() != p {
            return Err(Error::Dimension {
                what: "scale matrix".into(),
                expected: p,
                got: scale_matrix.nrows().max(scale_matrix.ncols()),
            });
        }
        if p == 0 {
            return Err(Error::Dimension {
                what: "state vector".into(),
                expected: 1,
                got: 0,
            });
        }
        if !(dof > 0.0) || !dof.is_finite() {
            return Err(Error::Domain(format!("dof must be positive, got {dof}")));
        }
        if !(variance_estimate > 0.0) || !variance_estimate.is_finite() {
            return Err(Error::Domain(format!(
                "variance estimate must be positive, got {variance_estimate}"
            )));
        }
        if location.iter().any(|v| !v.is_finite())
            || scale_matrix.iter().any(|v| !v.is_finite())
        {
            return Err(Error::Domain("non-finite normal-gamma parameter".into()));
        }
        let amax = scale_matrix.amax();
        for i in 0..p {
            for j in (i + 1)..p {
                if (scale_matrix[(i, j)] - scale_matrix[(j, i)]).abs() > EIGEN_FLOOR * amax {
                    return Err(Error::Definiteness(format!(
                        "scale matrix asymmetric at ({i},{j})"
                    )));
                }
            }
        }
        let trace = scale_matrix.trace();
        if !(trace > 0.0) {
            return Err(Error::Definiteness(format!(
                "scale matrix trace must be positive, got {trace}"
            )));
        }
        // eigmin > EIGEN_FLOOR·trace iff the floor-shifted matrix admits a
        // Cholesky factorization; much cheaper than a full eigensolve.
        let mut shifted = scale_matrix.clone();
        for i in 0..p {
            shifted[(i, i)] -= EIGEN_FLOOR * trace;
        }
        if Cholesky::new(shifted).is_none() {
            return Err(Error::Definiteness(
                "scale matrix has an eigenvalue at or below 1e-12 of its trace".into(),
            ));
        }
        Ok(Self {
            location,
            scale_matrix,
            dof,
            variance_estimate,
        })
    }

    pub fn location(&self) -> &DVector<f64> {
        &self.location
    }

    pub fn scale_matrix(&self) -> &DMatrix<f64> {
        &self.scale_matrix
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    pub fn variance_estimate(&self) -> f64 {
        self.variance_estimate
    }

    /// State dimension `p`.
    pub fn dim(&self) -> usize {
        self.location.len()
    }
}

/// One Monte Carlo draw of a series' state: coefficient vector and precision.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDraw {
    /// Level first, then coupling coefficients in parent-list order.
    pub theta: DVector<f64>,
    pub lambda: f64,
}

/// Sampler with the Cholesky factor and gamma distribution prepared once, for
/// use when many draws are taken from the same normal-gamma.
pub struct NgSampler {
    location: DVector<f64>,
    lower: DMatrix<f64>,
    variance_estimate: f64,
    gamma: Gamma<f64>,
}

impl NgSampler {
    pub fn new(ng: &NormalGamma) -> Result<Self> {
        let chol = Cholesky::<f64, Dyn>::new(ng.scale_matrix.clone()).ok_or_else(|| {
            Error::Definiteness("scale matrix lost positive definiteness".into())
        })?;
        let gamma = Gamma::new(0.5 * ng.dof, 2.0 / (ng.dof * ng.variance_estimate))
            .map_err(|e| Error::Domain(format!("gamma parameters: {e}")))?;
        Ok(Self {
            location: ng.location.clone(),
            lower: chol.unpack(),
            variance_estimate: ng.variance_estimate,
            gamma,
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<StateDraw> {
        let lambda: f64 = self.gamma.sample(rng);
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::DegenerateSample(format!(
                "gamma draw produced lambda = {lambda}"
            )));
        }
        let p = self.location.len();
        let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let scale = 1.0 / (self.variance_estimate * lambda).sqrt();
        let theta = &self.location + &self.lower * z * scale;
        Ok(StateDraw { theta, lambda })
    }
}

/// Draw `count` independent states from `ng` using `rng`.
pub fn sample_normal_gamma<R: Rng + ?Sized>(
    ng: &NormalGamma,
    count: usize,
    rng: &mut R,
) -> Result<Vec<StateDraw>> {
    let sampler = NgSampler::new(ng)?;
    (0..count).map(|_| sampler.draw(rng)).collect()
}

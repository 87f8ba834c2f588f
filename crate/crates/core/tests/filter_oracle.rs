//! Cross-checks of the conjugate filter against independent computations:
//! a scalar-loop transcription of the update, and the closed-form batch
//! conjugate regression that sequential filtering must reproduce when
//! nothing is forgotten.

mod common;

use approx::{assert_abs_diff_eq, assert_relative_eq};
use common::{oracle_kalman, random_spd, random_vector};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use sgdlm_core::rng::{substream, Stream};
use sgdlm_core::{evolve, kalman_update, NormalGamma};

#[test]
fn hand_worked_scalar_update() {
    let prior = NormalGamma::new(
        DVector::from_element(1, 0.0),
        DMatrix::from_element(1, 1, 1.0),
        4.0,
        1.0,
    )
    .unwrap();
    let f = DVector::from_element(1, 1.0);
    let step = kalman_update(&prior, &f, 1.0).unwrap();
    assert_abs_diff_eq!(step.forecast_error, 1.0, epsilon = 1e-15);
    assert_abs_diff_eq!(step.forecast_variance_factor, 2.0, epsilon = 1e-15);
    let post = &step.posterior;
    assert_abs_diff_eq!(post.location()[0], 0.5, epsilon = 1e-15);
    assert_abs_diff_eq!(post.scale_matrix()[(0, 0)], 0.45, epsilon = 1e-15);
    assert_abs_diff_eq!(post.dof(), 5.0, epsilon = 1e-15);
    assert_abs_diff_eq!(post.variance_estimate(), 0.9, epsilon = 1e-15);
}

#[test]
fn randomized_updates_match_scalar_transcription() {
    let mut rng = substream(1701, Stream::Posterior, 0, 0);
    for trial in 0..1000 {
        let p = 1 + trial % 5;
        let a = random_vector(p, 1.0, &mut rng);
        let r_mat = random_spd(p, 0.5 + rng.gen::<f64>(), &mut rng);
        let r = 2.0 + 18.0 * rng.gen::<f64>();
        let c = 0.01 + 5.0 * rng.gen::<f64>();
        let f = random_vector(p, 1.0, &mut rng);
        let y: f64 = rng.sample::<f64, _>(StandardNormal) * 2.0;
        let prior = NormalGamma::new(a.clone(), r_mat.clone(), r, c).unwrap();
        let step = kalman_update(&prior, &f, y).unwrap();
        let rows: Vec<Vec<f64>> = (0..p)
            .map(|i| (0..p).map(|j| r_mat[(i, j)]).collect())
            .collect();
        let oracle = oracle_kalman(a.as_slice(), &rows, r, c, f.as_slice(), y);
        assert_relative_eq!(step.forecast_error, oracle.e, max_relative = 1e-12);
        assert_relative_eq!(step.forecast_variance_factor, oracle.q, max_relative = 1e-12);
        let post = &step.posterior;
        assert_relative_eq!(post.dof(), oracle.n, max_relative = 1e-12);
        assert_relative_eq!(post.variance_estimate(), oracle.s, max_relative = 1e-12);
        for i in 0..p {
            assert_relative_eq!(
                post.location()[i],
                oracle.m[i],
                max_relative = 1e-12,
                epsilon = 1e-12
            );
            for j in 0..p {
                assert_relative_eq!(
                    post.scale_matrix()[(i, j)],
                    oracle.c_mat[i][j],
                    max_relative = 1e-12,
                    epsilon = 1e-12
                );
            }
        }
    }
}

/// With unit discounts the sequential filter must agree with the one-shot
/// conjugate Bayesian regression over the whole history.
#[test]
fn no_forgetting_equals_batch_conjugate_regression() {
    let p = 3;
    let t_len = 40;
    let mut rng = substream(88, Stream::Posterior, 1, 0);
    let a0 = random_vector(p, 0.5, &mut rng);
    let r0 = random_spd(p, 0.8, &mut rng);
    let (r_dof, c0) = (5.0, 0.4);
    let mut prior = NormalGamma::new(a0.clone(), r0.clone(), r_dof, c0).unwrap();

    // Unit discounts with the plain (non-block) evolution lose nothing, so
    // sequential filtering must reproduce the one-shot batch posterior.
    let mut regressors = Vec::with_capacity(t_len);
    let mut observations = Vec::with_capacity(t_len);
    let mut post = prior.clone();
    for _ in 0..t_len {
        let f = random_vector(p, 1.0, &mut rng);
        let y: f64 = rng.sample::<f64, _>(StandardNormal) * 1.5 + 0.2;
        post = kalman_update(&prior, &f, y).unwrap().posterior;
        prior = evolve(&post, 1.0, 1.0).unwrap();
        regressors.push(f);
        observations.push(y);
    }

    // Batch form: with prior precision (of theta given lambda) c R^{-1},
    // the posterior precision is c R^{-1} + sum F F', the location solves
    // the usual normal equations, the shape gains one per observation, and
    // the rate gains half the residual sum of squares.
    let prior_precision = c0 * r0.try_inverse().unwrap();
    let mut precision = prior_precision.clone();
    let mut rhs = &prior_precision * &a0;
    let mut yy = 0.0;
    for (f, &y) in regressors.iter().zip(&observations) {
        precision += f * f.transpose();
        rhs += f * y;
        yy += y * y;
    }
    let m_batch = precision.clone().try_inverse().unwrap() * &rhs;
    let n_batch = r_dof + t_len as f64;
    let rate =
        r_dof * c0 + yy + (a0.transpose() * &prior_precision * &a0)[(0, 0)]
            - (m_batch.transpose() * &precision * &m_batch)[(0, 0)];
    let s_batch = rate / n_batch;
    let c_batch = precision.try_inverse().unwrap() * s_batch;

    assert_abs_diff_eq!(post.dof(), n_batch, epsilon = 1e-12);
    assert_relative_eq!(post.variance_estimate(), s_batch, max_relative = 1e-10);
    for i in 0..p {
        assert_relative_eq!(post.location()[i], m_batch[i], max_relative = 1e-10, epsilon = 1e-10);
        for j in 0..p {
            assert_relative_eq!(
                post.scale_matrix()[(i, j)],
                c_batch[(i, j)],
                max_relative = 1e-10,
                epsilon = 1e-10
            );
        }
    }
}

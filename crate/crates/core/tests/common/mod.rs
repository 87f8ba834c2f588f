//! Shared helpers for integration tests: an independently coded Kalman step
//! (plain scalar loops, no shared code with the crate), a Student-t CDF
//! built on the regularized incomplete beta function, and a KS statistic.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Log-gamma via the Lanczos approximation (g = 7, 9 coefficients) —
/// deliberately a different algorithm from the library's implementation.
pub fn lanczos_ln_gamma(x: f64) -> f64 {
    const G: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection for the left half-plane.
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().abs().ln()
            - lanczos_ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut sum = G[0];
    for (i, &c) in G.iter().enumerate().skip(1) {
        sum += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + sum.ln()
}

/// Regularized incomplete beta function I_x(a, b) by Lentz's continued
/// fraction with the usual symmetry switch for convergence.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    assert!((0.0..=1.0).contains(&x), "x = {x} outside [0, 1]");
    if x == 0.0 {
        return 0.0;
    }
    if x == 1.0 {
        return 1.0;
    }
    if x > (a + 1.0) / (a + b + 2.0) {
        return 1.0 - reg_inc_beta(b, a, 1.0 - x);
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() + lanczos_ln_gamma(a + b)
        - lanczos_ln_gamma(a)
        - lanczos_ln_gamma(b);
    // Lentz's algorithm on the standard continued fraction.
    let tiny = 1e-300;
    let mut f = tiny;
    let mut c = f;
    let mut d = 0.0;
    for i in 0..=300 {
        let m = i / 2;
        let numerator = if i == 0 {
            1.0
        } else if i % 2 == 0 {
            (m as f64) * (b - m as f64) * x / ((a + 2.0 * m as f64 - 1.0) * (a + 2.0 * m as f64))
        } else {
            -((a + m as f64) * (a + b + m as f64) * x)
                / ((a + 2.0 * m as f64) * (a + 2.0 * m as f64 + 1.0))
        };
        d = 1.0 + numerator * d;
        if d.abs() < tiny {
            d = tiny;
        }
        d = 1.0 / d;
        c = 1.0 + numerator / c;
        if c.abs() < tiny {
            c = tiny;
        }
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-15 {
            break;
        }
    }
    (ln_front.exp() * f / a).clamp(0.0, 1.0)
}

/// CDF of the standard Student-t distribution with `dof` degrees of freedom.
pub fn student_t_cdf(x: f64, dof: f64) -> f64 {
    let w = dof / (dof + x * x);
    let half_tail = 0.5 * reg_inc_beta(dof / 2.0, 0.5, w);
    if x >= 0.0 {
        1.0 - half_tail
    } else {
        half_tail
    }
}

/// Two-sided Kolmogorov-Smirnov distance between a sample and a CDF.
pub fn ks_statistic(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sample.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sample.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max((f - (i as f64 + 1.0) / n).abs());
    }
    d
}

/// One conjugate update written as bare scalar loops: a transcription of the
/// textbook recursions, independent of the crate's linear-algebra path.
pub struct OracleStep {
    pub m: Vec<f64>,
    pub c_mat: Vec<Vec<f64>>,
    pub n: f64,
    pub s: f64,
    pub e: f64,
    pub q: f64,
}

pub fn oracle_kalman(
    a: &[f64],
    r_mat: &[Vec<f64>],
    r: f64,
    c: f64,
    f: &[f64],
    y: f64,
) -> OracleStep {
    let p = a.len();
    let mut rf = vec![0.0; p];
    for i in 0..p {
        for j in 0..p {
            rf[i] += r_mat[i][j] * f[j];
        }
    }
    let mut q = c;
    for i in 0..p {
        q += f[i] * rf[i];
    }
    let mut e = y;
    for i in 0..p {
        e -= f[i] * a[i];
    }
    let z = (r + e * e / q) / (r + 1.0);
    let mut m = vec![0.0; p];
    for i in 0..p {
        m[i] = a[i] + rf[i] / q * e;
    }
    let mut c_mat = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..p {
            c_mat[i][j] = z * (r_mat[i][j] - rf[i] * rf[j] / q);
        }
    }
    OracleStep {
        m,
        c_mat,
        n: r + 1.0,
        s: z * c,
        e,
        q,
    }
}

/// A random symmetric positive-definite matrix with a safe condition number.
pub fn random_spd<R: Rng>(p: usize, scale: f64, rng: &mut R) -> DMatrix<f64> {
    let b = DMatrix::from_fn(p, p, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        z
    });
    let mut a = &b * b.transpose();
    for i in 0..p {
        a[(i, i)] += 0.5;
    }
    a * scale
}

pub fn random_vector<R: Rng>(p: usize, scale: f64, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(p, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        z * scale
    })
}

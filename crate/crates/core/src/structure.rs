//! The simultaneous-parent graph and the coupling matrix it induces.
//!
//! Each series `i` names `k` contemporaneous parents `sp(i)`; a joint state
//! draw places series `i`'s coupling coefficients in row `i` of the sparse
//! matrix `Gamma`. All joint operations run through `I - Gamma`, factored
//! once per draw by dense LU — at the panel sizes targeted here (tens of
//! series) a dense factorization is microseconds and far more robust than a
//! sparse one.

use nalgebra::{DMatrix, LU};

use crate::error::Error;
use crate::ng::StateDraw;
use crate::Result;

/// Determinant magnitude under which `I - Gamma` counts as singular.
pub(crate) const SINGULAR_DET_FLOOR: f64 = 1e-300;

/// Fixed parent assignment: for each of `m` series, an ordered list of `k`
/// distinct other series whose same-day returns enter its regression.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParentStructure {
    m: usize,
    k: usize,
    sp: Vec<Vec<usize>>,
}

impl ParentStructure {
    pub fn new(m: usize, sp: Vec<Vec<usize>>) -> Result<Self> {
        if m == 0 {
            return Err(Error::Dimension {
                what: "series count".into(),
                expected: 1,
                got: 0,
            });
        }
        if sp.len() != m {
            return Err(Error::Dimension {
                what: "parent lists".into(),
                expected: m,
                got: sp.len(),
            });
        }
        let k = sp[0].len();
        for (i, parents) in sp.iter().enumerate() {
            if parents.len() != k {
                return Err(Error::Dimension {
                    what: format!("parent list of series {i}"),
                    expected: k,
                    got: parents.len(),
                });
            }
            let mut seen = vec![false; m];
            for &j in parents {
                if j >= m {
                    return Err(Error::Range(format!(
                        "series {i} names parent {j}, but only {m} series exist"
                    )));
                }
                if j == i {
                    return Err(Error::Range(format!("series {i} cannot parent itself")));
                }
                if seen[j] {
                    return Err(Error::Range(format!(
                        "series {i} names parent {j} more than once"
                    )));
                }
                seen[j] = true;
            }
        }
        Ok(Self { m, k, sp })
    }

    /// Structure with no parents: every series stands alone.
    pub fn decoupled(m: usize) -> Result<Self> {
        Self::new(m, vec![Vec::new(); m])
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// State dimension per series: level plus one coefficient per parent.
    pub fn state_dim(&self) -> usize {
        self.k + 1
    }

    pub fn parents(&self, i: usize) -> &[usize] {
        &self.sp[i]
    }
}

/// Place each series' coupling coefficients into the m×m matrix `Gamma`:
/// row `i` holds draw `i`'s gamma entries at its parents' columns, zero
/// elsewhere (and always on the diagonal).
pub fn assemble_gamma(draws: &[StateDraw], structure: &ParentStructure) -> Result<DMatrix<f64>> {
    let m = structure.m();
    if draws.len() != m {
        return Err(Error::Dimension {
            what: "state draws".into(),
            expected: m,
            got: draws.len(),
        });
    }
    let p = structure.state_dim();
    let mut gamma = DMatrix::zeros(m, m);
    for (i, draw) in draws.iter().enumerate() {
        if draw.theta.len() != p {
            return Err(Error::Dimension {
                what: format!("state vector of series {i}"),
                expected: p,
                got: draw.theta.len(),
            });
        }
        for (slot, &j) in structure.parents(i).iter().enumerate() {
            gamma[(i, j)] = draw.theta[slot + 1];
        }
    }
    Ok(gamma)
}

/// LU-factor `I - gamma`, rejecting factorizations whose determinant
/// magnitude is below the singularity floor.
pub(crate) fn factor_coupling(gamma: &DMatrix<f64>) -> Result<(f64, LU<f64, nalgebra::Dyn, nalgebra::Dyn>)> {
    let m = gamma.nrows();
    let mut system = -gamma.clone();
    for i in 0..m {
        system[(i, i)] += 1.0;
    }
    let lu = system.lu();
    let det = lu.determinant();
    if !det.is_finite() || det.abs() < SINGULAR_DET_FLOOR {
        return Err(Error::Singular { det });
    }
    Ok((det, lu))
}

/// Determinant of `I - gamma` and the solution of `(I - gamma)·x = rhs`,
/// sharing a single LU factorization. The explicit inverse is never formed.
pub fn det_and_solve(gamma: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    if gamma.nrows() != gamma.ncols() || gamma.nrows() != rhs.nrows() {
        return Err(Error::Dimension {
            what: "coupling system".into(),
            expected: gamma.nrows(),
            got: rhs.nrows(),
        });
    }
    let (det, lu) = factor_coupling(gamma)?;
    let solution = lu
        .solve(rhs)
        .ok_or(Error::Singular { det })?;
    Ok((det, solution))
}

//! Dense symmetric positive-definite factorization with diagonal-shift
//! escalation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Number of times the diagonal shift is multiplied by ten before giving up.
pub const NUGGET_RETRIES: usize = 3;

/// Relative diagonal shift used when none is given: `1e-10 * trace / n`.
pub const DEFAULT_NUGGET_SCALE: f64 = 1e-10;

pub fn default_nugget(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows().max(1) as f64;
    DEFAULT_NUGGET_SCALE * m.trace().abs() / n
}

/// Upper Cholesky factor `A = Uᵀ U`, stored column-major so that the inner
/// products during factorization run over contiguous memory.
#[derive(Debug, Clone)]
pub struct Cholesky {
    u: DMatrix<f64>,
}

impl Cholesky {
    /// Factor a symmetric matrix; only the upper triangle is read. On
    /// failure returns the offending pivot value.
    pub fn new(a: &DMatrix<f64>) -> std::result::Result<Self, f64> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "cholesky of a non-square matrix");
        let mut u = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let (ci, cj) = (u.column(i), u.column(j));
                let mut acc = a[(i, j)];
                for k in 0..i {
                    acc -= ci[k] * cj[k];
                }
                if i == j {
                    if !(acc > 0.0) || !acc.is_finite() {
                        return Err(acc);
                    }
                    u[(j, j)] = acc.sqrt();
                } else {
                    u[(i, j)] = acc / u[(i, i)];
                }
            }
        }
        Ok(Self { u })
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut y = b.clone();
        // Uᵀ y = b
        for i in 0..n {
            let col = self.u.column(i);
            let mut acc = y[i];
            for k in 0..i {
                acc -= col[k] * y[k];
            }
            y[i] = acc / col[i];
        }
        // U x = y
        for i in (0..n).rev() {
            let xi = y[i] / self.u[(i, i)];
            y[i] = xi;
            let col = self.u.column(i);
            for k in 0..i {
                y[k] -= col[k] * xi;
            }
        }
        y
    }

    /// Smallest diagonal entry of `U`, squared; a cheap conditioning probe.
    pub fn min_pivot(&self) -> f64 {
        (0..self.dim())
            .map(|i| self.u[(i, i)] * self.u[(i, i)])
            .fold(f64::INFINITY, f64::min)
    }
}

/// Factor `a + nugget·I`, multiplying the shift by ten up to
/// [`NUGGET_RETRIES`] times. Returns the factor and the shift that worked.
pub fn factor_with_escalation(a: &DMatrix<f64>, nugget: f64) -> Result<(Cholesky, f64)> {
    let floor = 1e-14 * a.trace().abs() / a.nrows().max(1) as f64;
    let mut shift = nugget;
    let mut last_pivot = f64::NAN;
    for attempt in 0..=NUGGET_RETRIES {
        if attempt > 0 {
            shift = (shift * 10.0).max(floor);
        }
        let mut shifted = a.clone();
        for i in 0..a.nrows() {
            shifted[(i, i)] += shift;
        }
        match Cholesky::new(&shifted) {
            Ok(f) => return Ok((f, shift)),
            Err(p) => last_pivot = p,
        }
    }
    Err(Error::Conditioning {
        pivot: last_pivot,
        nugget: shift,
    })
}

/// Solver for `A x = b` with `A` symmetric positive semi-definite. The
/// shifted factorization serves as a preconditioner for iterative
/// refinement against the unshifted matrix.
#[derive(Debug, Clone)]
pub struct SpdSolver {
    matrix: DMatrix<f64>,
    factor: Cholesky,
    nugget: f64,
}

const MAX_REFINEMENT_SWEEPS: usize = 12;

impl SpdSolver {
    pub fn new(matrix: DMatrix<f64>, nugget: f64) -> Result<Self> {
        let (factor, nugget) = factor_with_escalation(&matrix, nugget)?;
        Ok(Self { matrix, factor, nugget })
    }

    pub fn with_default_nugget(matrix: DMatrix<f64>) -> Result<Self> {
        let nugget = default_nugget(&matrix);
        Self::new(matrix, nugget)
    }

    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = self.factor.solve(b);
        if self.nugget == 0.0 {
            return x;
        }
        let mut res = b - &self.matrix * &x;
        let mut res_norm = res.norm();
        for _ in 0..MAX_REFINEMENT_SWEEPS {
            if res_norm <= 1e-15 * b.norm() {
                break;
            }
            let cand = &x + self.factor.solve(&res);
            let cand_res = b - &self.matrix * &cand;
            let cand_norm = cand_res.norm();
            // stop once a sweep no longer halves the residual
            if !(cand_norm < 0.5 * res_norm) {
                if cand_norm < res_norm {
                    x = cand;
                }
                break;
            }
            x = cand;
            res = cand_res;
            res_norm = cand_norm;
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.4);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn cholesky_solves() {
        let a = spd(8);
        let b = DVector::from_fn(8, |i, _| i as f64 - 3.0);
        let x = Cholesky::new(&a).unwrap().solve(&b);
        assert!((&a * x - b).norm() < 1e-12);
    }

    #[test]
    fn indefinite_reports_pivot() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let pivot = Cholesky::new(&a).unwrap_err();
        assert!((pivot + 3.0).abs() < 1e-12);
        match factor_with_escalation(&a, 1e-8) {
            Err(Error::Conditioning { pivot, .. }) => assert!(pivot < 0.0),
            other => panic!("expected conditioning error, got {other:?}"),
        }
    }

    #[test]
    fn refinement_removes_nugget_bias() {
        let a = spd(6);
        let b = DVector::from_fn(6, |i, _| (i as f64).sin());
        let solver = SpdSolver::new(a.clone(), 1e-3).unwrap();
        let x = solver.solve(&b);
        assert!((&a * x - b).norm() < 1e-12);
    }

    #[test]
    fn singular_matrix_escalates() {
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let a = &v * v.transpose();
        let solver = SpdSolver::new(a, 0.0).unwrap();
        assert!(solver.nugget() > 0.0);
    }
}

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::gram::{cross_entries, diff_ops};
use super::{offset, pair_value, KernelSpec, OperatorFunctional, OperatorTag};
use crate::error::{input, Result};

/// `u = Σ λ_i ψ_i` over a basis of operator functionals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RkhsFunction {
    pub basis: Vec<OperatorFunctional>,
    pub coeffs: Vec<f64>,
    pub kernel: KernelSpec,
}

impl RkhsFunction {
    pub fn new(kernel: KernelSpec, basis: Vec<OperatorFunctional>, coeffs: Vec<f64>) -> Result<Self> {
        if basis.len() != coeffs.len() {
            return input(format!(
                "basis has {} functionals but {} coefficients",
                basis.len(),
                coeffs.len()
            ));
        }
        diff_ops(&kernel, &basis)?;
        Ok(Self { basis, coeffs, kernel })
    }

    pub fn zero(kernel: KernelSpec, basis: Vec<OperatorFunctional>) -> Result<Self> {
        let n = basis.len();
        Self::new(kernel, basis, vec![0.0; n])
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| alpha * c).collect(),
            ..self.clone()
        }
    }

    /// `(op u)(x)`.
    pub fn eval(&self, op: &OperatorTag, x: &[f64]) -> Result<f64> {
        rkhs_eval(self, op, x)
    }

    /// `(op u)` at many points.
    pub fn eval_many(&self, op: &OperatorTag, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        let probes: Vec<_> = points
            .iter()
            .map(|p| OperatorFunctional::new(op.clone(), p.clone()))
            .collect();
        let k = cross_entries(&self.kernel, &probes, &self.basis)?;
        Ok((k * DVector::from_column_slice(&self.coeffs)).iter().copied().collect())
    }
}

/// `(probe_op u)(x) = Σ_i λ_i (probe_op)_x (L_i)_y k(x, x_i)`.
pub fn rkhs_eval(u: &RkhsFunction, probe_op: &OperatorTag, x: &[f64]) -> Result<f64> {
    let probe = OperatorFunctional::new(probe_op.clone(), x.to_vec());
    let lhs = diff_ops(&u.kernel, std::slice::from_ref(&probe))?[0];
    let rhs = diff_ops(&u.kernel, &u.basis)?;
    Ok(u.basis
        .iter()
        .zip(&rhs)
        .zip(&u.coeffs)
        .map(|((f, op), c)| c * pair_value(&u.kernel, &lhs, op, &offset(x, &f.point)))
        .sum())
}

/// `sqrt(max(λᵀ K λ, 0))` with the unshifted Gram matrix.
pub fn rkhs_norm(u: &RkhsFunction) -> f64 {
    squared_norm(u).max(0.0).sqrt()
}

pub(crate) fn squared_norm(u: &RkhsFunction) -> f64 {
    if u.basis.is_empty() {
        return 0.0;
    }
    let k = cross_entries(&u.kernel, &u.basis, &u.basis).expect("basis validated at construction");
    let lam = DVector::from_column_slice(&u.coeffs);
    lam.dot(&(k * &lam))
}

/// `‖u − v‖` for functions on possibly different bases of the same kernel.
pub fn rkhs_distance(u: &RkhsFunction, v: &RkhsFunction) -> Result<f64> {
    if u.kernel != v.kernel {
        return input("distance between functions of different kernels");
    }
    let mut basis = u.basis.clone();
    basis.extend(v.basis.iter().cloned());
    let mut coeffs = u.coeffs.clone();
    coeffs.extend(v.coeffs.iter().map(|c| -c));
    Ok(rkhs_norm(&RkhsFunction::new(u.kernel, basis, coeffs)?))
}

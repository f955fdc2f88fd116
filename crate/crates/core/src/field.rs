//! Scalar fields on `Ω ⊂ Rᵈ` with optionally available derivatives.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::OperatorTag;

pub trait ScalarField: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    fn gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// `−Δu(x)`.
    fn neg_laplacian(&self, _x: &[f64]) -> Option<f64> {
        None
    }
}

/// `(op u)(x)` for a field that supplies the needed derivatives.
pub fn apply_operator(field: &dyn ScalarField, op: &OperatorTag, x: &[f64]) -> Result<f64> {
    let missing = |what: &str| Error::Capability(format!("field does not provide {what}"));
    match op {
        OperatorTag::Identity => Ok(field.value(x)),
        OperatorTag::NegLaplacian => field.neg_laplacian(x).ok_or_else(|| missing("a Laplacian")),
        OperatorTag::Gradient { component } => field
            .gradient(x)
            .and_then(|g| g.get(*component).copied())
            .ok_or_else(|| missing("a gradient")),
        OperatorTag::NormalDerivative { normal } => {
            let g = field.gradient(x).ok_or_else(|| missing("a gradient"))?;
            Ok(g.iter().zip(normal).map(|(a, b)| a * b).sum())
        }
    }
}

/// Closed-form fields used as manufactured solutions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticField {
    Zero {
        dim: usize,
    },
    /// `A · Π_i sin(k_i π x_i)`
    SinProduct {
        freqs: Vec<f64>,
        amplitude: f64,
    },
    /// `A · Π_i cos(ω_i (x_i − c_i))`
    CosProduct {
        freqs: Vec<f64>,
        centers: Vec<f64>,
        amplitude: f64,
    },
}

impl AnalyticField {
    pub fn sin_product(freqs: Vec<f64>) -> Self {
        AnalyticField::SinProduct { freqs, amplitude: 1.0 }
    }

    /// Per-axis factor value, first and second derivative.
    fn factor(&self, axis: usize, t: f64) -> (f64, f64, f64) {
        match self {
            AnalyticField::Zero { .. } => (0.0, 0.0, 0.0),
            AnalyticField::SinProduct { freqs, .. } => {
                let w = freqs[axis] * PI;
                let (s, c) = (w * t).sin_cos();
                (s, w * c, -w * w * s)
            }
            AnalyticField::CosProduct { freqs, centers, .. } => {
                let w = freqs[axis];
                let (s, c) = (w * (t - centers[axis])).sin_cos();
                (c, -w * s, -w * w * c)
            }
        }
    }

    fn amplitude(&self) -> f64 {
        match self {
            AnalyticField::Zero { .. } => 0.0,
            AnalyticField::SinProduct { amplitude, .. } | AnalyticField::CosProduct { amplitude, .. } => *amplitude,
        }
    }

    fn factors(&self, x: &[f64]) -> Vec<(f64, f64, f64)> {
        x.iter().enumerate().map(|(i, &t)| self.factor(i, t)).collect()
    }
}

impl ScalarField for AnalyticField {
    fn dim(&self) -> usize {
        match self {
            AnalyticField::Zero { dim } => *dim,
            AnalyticField::SinProduct { freqs, .. } | AnalyticField::CosProduct { freqs, .. } => freqs.len(),
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.amplitude() * self.factors(x).iter().map(|f| f.0).product::<f64>()
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let fs = self.factors(x);
        Some(
            (0..fs.len())
                .map(|i| {
                    self.amplitude()
                        * fs.iter()
                            .enumerate()
                            .map(|(j, f)| if i == j { f.1 } else { f.0 })
                            .product::<f64>()
                })
                .collect(),
        )
    }

    fn neg_laplacian(&self, x: &[f64]) -> Option<f64> {
        let fs = self.factors(x);
        let lap: f64 = (0..fs.len())
            .map(|i| {
                fs.iter()
                    .enumerate()
                    .map(|(j, f)| if i == j { f.2 } else { f.0 })
                    .product::<f64>()
            })
            .sum();
        Some(-self.amplitude() * lap)
    }
}

type PointFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Field backed by closures; derivatives are optional.
#[derive(Clone)]
pub struct FnField {
    dim: usize,
    value: PointFn,
    gradient: Option<VectorFn>,
    neg_laplacian: Option<PointFn>,
}

impl FnField {
    pub fn new(dim: usize, value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            dim,
            value: Arc::new(value),
            gradient: None,
            neg_laplacian: None,
        }
    }

    pub fn with_gradient(mut self, g: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.gradient = Some(Arc::new(g));
        self
    }

    pub fn with_neg_laplacian(mut self, l: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.neg_laplacian = Some(Arc::new(l));
        self
    }
}

impl std::fmt::Debug for FnField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnField")
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

impl ScalarField for FnField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.gradient.as_ref().map(|g| g(x))
    }

    fn neg_laplacian(&self, x: &[f64]) -> Option<f64> {
        self.neg_laplacian.as_ref().map(|l| l(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_neg_laplacian(f: &dyn ScalarField, x: &[f64]) -> f64 {
        let h = 1e-4;
        let mut acc = 0.0;
        for i in 0..x.len() {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[i] += h;
            m[i] -= h;
            acc += (f.value(&p) - 2.0 * f.value(x) + f.value(&m)) / (h * h);
        }
        -acc
    }

    #[test]
    fn analytic_derivatives_match_differences() {
        let fields = [
            AnalyticField::sin_product(vec![1.0, 2.0]),
            AnalyticField::CosProduct {
                freqs: vec![1.3, 0.7],
                centers: vec![0.5, 0.1],
                amplitude: 2.0,
            },
        ];
        for f in &fields {
            let x = [0.31, 0.72];
            let l = f.neg_laplacian(&x).unwrap();
            assert!((l - central_neg_laplacian(f, &x)).abs() < 1e-5 * l.abs().max(1.0));
            let g = f.gradient(&x).unwrap();
            let h = 1e-6;
            let d0 = (f.value(&[x[0] + h, x[1]]) - f.value(&[x[0] - h, x[1]])) / (2.0 * h);
            assert!((g[0] - d0).abs() < 1e-6);
        }
    }

    #[test]
    fn missing_derivative_is_capability_error() {
        let f = FnField::new(1, |x| x[0] * x[0]);
        assert!(matches!(
            apply_operator(&f, &OperatorTag::NegLaplacian, &[0.2]),
            Err(Error::Capability(_))
        ));
        let f = f.with_neg_laplacian(|_| -2.0);
        assert_eq!(apply_operator(&f, &OperatorTag::NegLaplacian, &[0.2]).unwrap(), -2.0);
    }
}

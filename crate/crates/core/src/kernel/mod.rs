//! Radial reproducing kernels with linear differential operators applied to
//! either argument.
//!
//! Every supported operator is of the form `c₀ + b·∇ + c_Δ Δ`. Writing the
//! kernel as a radial profile `φ(s)` with `s = ‖x − y‖²`, the mixed
//! derivatives `L_x M_y k(x, y)` reduce to closed forms in the profile
//! derivatives `φ', …, φ''''` and the offset `d = x − y`:
//!
//! ```text
//! ∂_i φ          = 2 d_i φ'
//! ∂_i ∂_j φ      = 2 δ_ij φ' + 4 d_i d_j φ''
//! Δφ             = 2D φ' + 4 s φ''
//! ∂_i Δφ         = d_i (4(D+2) φ'' + 8 s φ''')
//! ΔΔφ            = 4D(D+2) φ'' + 16(D+2) s φ''' + 16 s² φ''''
//! ```
//!
//! A derivative in the second argument flips sign once per order.

mod function;
mod gram;
pub mod validate;

pub use function::{rkhs_distance, rkhs_eval, rkhs_norm, RkhsFunction};
pub(crate) use gram::cross_entries;
pub use gram::{gram, gram_default, GramMatrix};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in `Ω ⊂ Rᵈ`, `d ∈ {1, 2}`.
pub type Coord = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// `a·exp(−‖x−y‖² / (2ℓ²))`
    Gaussian,
    /// `a·(1 + ‖x−y‖²/ℓ²)^(−1/2)`
    InverseMultiquadric,
}

impl KernelFamily {
    /// Highest total derivative order (both arguments combined) the family
    /// supports; `None` for infinitely differentiable kernels.
    pub fn max_derivative_order(self) -> Option<u32> {
        match self {
            KernelFamily::Gaussian | KernelFamily::InverseMultiquadric => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::InverseMultiquadric => "inverse_multiquadric",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub lengthscale: f64,
    pub amplitude: f64,
    pub dim: usize,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, lengthscale: f64, amplitude: f64, dim: usize) -> Result<Self> {
        let spec = Self {
            family,
            lengthscale,
            amplitude,
            dim,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gaussian(lengthscale: f64, dim: usize) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, lengthscale, 1.0, dim)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale > 0.0) || !self.lengthscale.is_finite() {
            return Err(Error::Input(format!(
                "lengthscale must be positive, got {}",
                self.lengthscale
            )));
        }
        if !(self.amplitude > 0.0) || !self.amplitude.is_finite() {
            return Err(Error::Input(format!(
                "amplitude must be positive, got {}",
                self.amplitude
            )));
        }
        if !(1..=2).contains(&self.dim) {
            return Err(Error::Input(format!("dim must be 1 or 2, got {}", self.dim)));
        }
        Ok(())
    }

    /// Radial profile `φ(s)` and its first four derivatives in `s`.
    pub(crate) fn profile(&self, s: f64) -> [f64; 5] {
        let (a, l2) = (self.amplitude, self.lengthscale * self.lengthscale);
        match self.family {
            KernelFamily::Gaussian => {
                let c = -0.5 / l2;
                let p = a * (c * s).exp();
                [p, c * p, c * c * p, c * c * c * p, c * c * c * c * p]
            }
            KernelFamily::InverseMultiquadric => {
                let t = 1.0 + s / l2;
                let inv_t = 1.0 / t;
                let p0 = a / t.sqrt();
                let p1 = -0.5 / l2 * p0 * inv_t;
                let p2 = -1.5 / l2 * p1 * inv_t;
                let p3 = -2.5 / l2 * p2 * inv_t;
                let p4 = -3.5 / l2 * p3 * inv_t;
                [p0, p1, p2, p3, p4]
            }
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// Linear operator applied to a function before point evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorTag {
    Identity,
    /// `−Δ`
    NegLaplacian,
    /// `n·∇` for a unit vector `n`.
    NormalDerivative {
        normal: Vec<f64>,
    },
    /// `∂/∂x_component`; used for weak-form gradient pairings.
    Gradient {
        component: usize,
    },
}

impl OperatorTag {
    pub fn normal(normal: Vec<f64>) -> Result<Self> {
        let tag = OperatorTag::NormalDerivative { normal };
        tag.validate()?;
        Ok(tag)
    }

    pub fn order(&self) -> u32 {
        match self {
            OperatorTag::Identity => 0,
            OperatorTag::NormalDerivative { .. } | OperatorTag::Gradient { .. } => 1,
            OperatorTag::NegLaplacian => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let OperatorTag::NormalDerivative { normal } = self {
            let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(Error::Input(format!(
                    "normal direction must have unit length, got norm {norm}"
                )));
            }
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match self {
            OperatorTag::Identity => "identity".into(),
            OperatorTag::NegLaplacian => "neg_laplacian".into(),
            OperatorTag::NormalDerivative { normal } => format!("normal{normal:?}"),
            OperatorTag::Gradient { component } => format!("gradient[{component}]"),
        }
    }

    /// Exact-match key used for basis deduplication.
    pub(crate) fn key(&self) -> (u8, u64, u64) {
        match self {
            OperatorTag::Identity => (0, 0, 0),
            OperatorTag::NegLaplacian => (1, 0, 0),
            OperatorTag::NormalDerivative { normal } => (
                2,
                normal.first().map_or(0, |v| v.to_bits()),
                normal.get(1).map_or(0, |v| v.to_bits()),
            ),
            OperatorTag::Gradient { component } => (3, *component as u64, 0),
        }
    }

    pub(crate) fn diff_op(&self, dim: usize) -> Result<DiffOp> {
        self.validate()?;
        let mut op = DiffOp::default();
        match self {
            OperatorTag::Identity => op.c0 = 1.0,
            OperatorTag::NegLaplacian => op.lap = -1.0,
            OperatorTag::NormalDerivative { normal } => {
                if normal.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: normal.len(),
                    });
                }
                op.grad[..dim].copy_from_slice(normal);
            }
            OperatorTag::Gradient { component } => {
                if *component >= dim {
                    return Err(Error::Capability(format!(
                        "gradient component {component} in dimension {dim}"
                    )));
                }
                op.grad[*component] = 1.0;
            }
        }
        Ok(op)
    }
}

/// `c₀ + b·∇ + c_Δ Δ` with `b ∈ R²` (unused trailing entries are zero).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct DiffOp {
    pub c0: f64,
    pub grad: [f64; 2],
    pub lap: f64,
}

/// `L_x M_y k(x, y)` given the offset `d = x − y`.
pub(crate) fn pair_value(spec: &KernelSpec, lhs: &DiffOp, rhs: &DiffOp, d: &[f64; 2]) -> f64 {
    let dim = spec.dim as f64;
    let s = d[0] * d[0] + d[1] * d[1];
    let [p0, p1, p2, p3, p4] = spec.profile(s);
    let bl_d = lhs.grad[0] * d[0] + lhs.grad[1] * d[1];
    let br_d = rhs.grad[0] * d[0] + rhs.grad[1] * d[1];
    let bl_br = lhs.grad[0] * rhs.grad[0] + lhs.grad[1] * rhs.grad[1];

    let lap = 2.0 * dim * p1 + 4.0 * s * p2;
    let grad_lap = 4.0 * (dim + 2.0) * p2 + 8.0 * s * p3;
    let bilap = 4.0 * dim * (dim + 2.0) * p2 + 16.0 * (dim + 2.0) * s * p3 + 16.0 * s * s * p4;

    let mut v = 0.0;
    if lhs.c0 != 0.0 {
        v += lhs.c0 * (rhs.c0 * p0 - 2.0 * br_d * p1 + rhs.lap * lap);
    }
    if lhs.grad != [0.0, 0.0] {
        v += rhs.c0 * 2.0 * bl_d * p1;
        v -= 2.0 * p1 * bl_br + 4.0 * p2 * bl_d * br_d;
        v += rhs.lap * bl_d * grad_lap;
    }
    if lhs.lap != 0.0 {
        v += lhs.lap * (rhs.c0 * lap - br_d * grad_lap + rhs.lap * bilap);
    }
    v
}

pub(crate) fn offset(x: &[f64], y: &[f64]) -> [f64; 2] {
    let mut d = [0.0; 2];
    for (i, (a, b)) in x.iter().zip(y).enumerate() {
        d[i] = a - b;
    }
    d
}

/// `k(x, y)`.
pub fn eval_kernel(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.check_point(x)?;
    spec.check_point(y)?;
    let d = offset(x, y);
    Ok(spec.profile(d[0] * d[0] + d[1] * d[1])[0])
}

/// `(L_opl)_x (L_opr)_y k(x, y)`.
pub fn apply_operators(spec: &KernelSpec, opl: &OperatorTag, opr: &OperatorTag, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.check_point(x)?;
    spec.check_point(y)?;
    check_supported(spec, opl, opr)?;
    let lhs = opl.diff_op(spec.dim)?;
    let rhs = opr.diff_op(spec.dim)?;
    Ok(pair_value(spec, &lhs, &rhs, &offset(x, y)))
}

pub fn check_supported(spec: &KernelSpec, opl: &OperatorTag, opr: &OperatorTag) -> Result<()> {
    if let Some(max) = spec.family.max_derivative_order() {
        if opl.order() + opr.order() > max {
            return Err(Error::Capability(format!(
                "{} kernel cannot support ({}, {})",
                spec.family.name(),
                opl.label(),
                opr.label()
            )));
        }
    }
    opl.diff_op(spec.dim)?;
    opr.diff_op(spec.dim)?;
    Ok(())
}

/// Point evaluation of `op u` at `point`, tagged with the subdomain it
/// belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorFunctional {
    pub op: OperatorTag,
    pub point: Coord,
    #[serde(default)]
    pub domain_tag: usize,
}

impl OperatorFunctional {
    pub fn new(op: OperatorTag, point: Coord) -> Self {
        Self {
            op,
            point,
            domain_tag: 0,
        }
    }

    pub fn tagged(op: OperatorTag, point: Coord, domain_tag: usize) -> Self {
        Self { op, point, domain_tag }
    }

    pub(crate) fn key(&self) -> FunctionalKey {
        let (k, a, b) = self.op.key();
        FunctionalKey {
            op: (k, a, b),
            point: [
                self.point.first().map_or(0, |v| v.to_bits()),
                self.point.get(1).map_or(0, |v| v.to_bits()),
            ],
            domain: self.domain_tag,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) struct FunctionalKey {
    op: (u8, u64, u64),
    point: [u64; 2],
    domain: usize,
}

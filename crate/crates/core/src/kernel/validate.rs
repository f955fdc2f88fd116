//! Finite-difference checks of the closed-form operator pairs.
//!
//! Each operator is replaced by a central-difference stencil applied to
//! kernel increments `φ(s) − φ(s₀)` relative to the stencil centre; four
//! step sizes are combined by Richardson extrapolation, leaving an `O(h⁸)`
//! truncation error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{apply_operators, check_supported, offset, KernelFamily, KernelSpec, OperatorTag};
use crate::error::Result;

pub const DEFAULT_TOLERANCE: f64 = 1e-5;

/// Step as a fraction of the lengthscale.
const STEP_FRACTION: f64 = 0.15;

fn stencil(op: &OperatorTag, dim: usize, h: f64) -> Vec<([f64; 2], f64)> {
    let unit = |i: usize| {
        let mut e = [0.0; 2];
        e[i] = 1.0;
        e
    };
    let scaled = |v: [f64; 2], s: f64| [v[0] * s, v[1] * s];
    match op {
        OperatorTag::Identity => vec![([0.0; 2], 1.0)],
        OperatorTag::Gradient { component } => {
            let e = unit(*component);
            vec![(scaled(e, h), 0.5 / h), (scaled(e, -h), -0.5 / h)]
        }
        OperatorTag::NormalDerivative { normal } => {
            let mut n = [0.0; 2];
            n[..normal.len()].copy_from_slice(normal);
            vec![(scaled(n, h), 0.5 / h), (scaled(n, -h), -0.5 / h)]
        }
        OperatorTag::NegLaplacian => {
            let mut st = vec![([0.0; 2], 2.0 * dim as f64 / (h * h))];
            for i in 0..dim {
                st.push((scaled(unit(i), h), -1.0 / (h * h)));
                st.push((scaled(unit(i), -h), -1.0 / (h * h)));
            }
            st
        }
    }
}

/// `φ(|d + δ|²) − φ(|d|²)` without cancellation.
fn increment(spec: &KernelSpec, d: &[f64; 2], delta: &[f64; 2]) -> f64 {
    let s0 = d[0] * d[0] + d[1] * d[1];
    let ds: f64 = (0..2).map(|i| delta[i] * (2.0 * d[i] + delta[i])).sum();
    let (a, l2) = (spec.amplitude, spec.lengthscale * spec.lengthscale);
    match spec.family {
        KernelFamily::Gaussian => a * (-0.5 * s0 / l2).exp() * (-0.5 * ds / l2).exp_m1(),
        KernelFamily::InverseMultiquadric => {
            let (r0, r) = ((1.0 + s0 / l2).sqrt(), (1.0 + (s0 + ds) / l2).sqrt());
            -a * (ds / l2) / (r * r0 * (r + r0))
        }
    }
}

fn difference_quotient(
    spec: &KernelSpec,
    opl: &OperatorTag,
    opr: &OperatorTag,
    x: &[f64],
    y: &[f64],
    h: f64,
) -> Result<f64> {
    let d = offset(x, y);
    let (sl, sr) = (stencil(opl, spec.dim, h), stencil(opr, spec.dim, h));
    let mut acc = 0.0;
    for (dx, wl) in &sl {
        for (dy, wr) in &sr {
            acc += wl * wr * increment(spec, &d, &[dx[0] - dy[0], dx[1] - dy[1]]);
        }
    }
    // stencil weights sum to one for the identity and to zero otherwise
    if *opl == OperatorTag::Identity && *opr == OperatorTag::Identity {
        acc += spec.profile(d[0] * d[0] + d[1] * d[1])[0];
    }
    Ok(acc)
}

/// Richardson-extrapolated finite-difference value of `L_x M_y k(x, y)`.
pub fn finite_difference_pair(
    spec: &KernelSpec,
    opl: &OperatorTag,
    opr: &OperatorTag,
    x: &[f64],
    y: &[f64],
) -> Result<f64> {
    let h = STEP_FRACTION * spec.lengthscale;
    // Richardson tableau over h, h/2, h/4, h/8; even-power error expansion
    let mut row: Vec<f64> = (0..4)
        .map(|k| difference_quotient(spec, opl, opr, x, y, h / f64::from(1 << k)))
        .collect::<Result<_>>()?;
    let mut factor = 4.0;
    while row.len() > 1 {
        row = row
            .windows(2)
            .map(|w| (factor * w[1] - w[0]) / (factor - 1.0))
            .collect();
        factor *= 4.0;
    }
    Ok(row[0])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStatus {
    Pass,
    Fail,
    Unsupported,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairCheck {
    pub left: String,
    pub right: String,
    pub max_rel_error: f64,
    pub status: PairStatus,
}

/// Operators exercised by default in dimension `dim`.
pub fn default_operators(dim: usize) -> Vec<OperatorTag> {
    let mut ops = vec![OperatorTag::Identity, OperatorTag::NegLaplacian];
    if dim == 1 {
        ops.push(OperatorTag::NormalDerivative { normal: vec![-1.0] });
    } else {
        ops.push(OperatorTag::NormalDerivative { normal: vec![0.6, 0.8] });
    }
    ops.extend((0..dim).map(|component| OperatorTag::Gradient { component }));
    ops
}

/// Relative error scale: values much smaller than `a·ℓ^(−order)` are
/// compared in absolute terms against that floor.
fn error_floor(spec: &KernelSpec, opl: &OperatorTag, opr: &OperatorTag) -> f64 {
    let order = (opl.order() + opr.order()) as i32;
    1e-3 * spec.amplitude * spec.lengthscale.powi(-order)
}

/// Compare every ordered operator pair against the finite-difference
/// oracle on `trials` random point pairs within three lengthscales.
pub fn validate_pairs<F>(
    spec: &KernelSpec,
    ops: &[OperatorTag],
    trials: usize,
    seed: u64,
    tolerance: f64,
    evaluator: F,
) -> Vec<PairCheck>
where
    F: Fn(&KernelSpec, &OperatorTag, &OperatorTag, &[f64], &[f64]) -> Result<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for opl in ops {
        for opr in ops {
            let (left, right) = (opl.label(), opr.label());
            if check_supported(spec, opl, opr).is_err() {
                out.push(PairCheck {
                    left,
                    right,
                    max_rel_error: f64::NAN,
                    status: PairStatus::Unsupported,
                });
                continue;
            }
            let floor = error_floor(spec, opl, opr);
            let mut worst: f64 = 0.0;
            for _ in 0..trials {
                let x: Vec<f64> = (0..spec.dim).map(|_| rng.gen_range(0.0..1.0)).collect();
                let y: Vec<f64> = x
                    .iter()
                    .map(|v| v + rng.gen_range(-1.5..1.5) * spec.lengthscale)
                    .collect();
                let err = match (
                    evaluator(spec, opl, opr, &x, &y),
                    finite_difference_pair(spec, opl, opr, &x, &y),
                ) {
                    (Ok(a), Ok(b)) => (a - b).abs() / a.abs().max(b.abs()).max(floor),
                    _ => f64::INFINITY,
                };
                worst = worst.max(err);
            }
            let status = if worst <= tolerance {
                PairStatus::Pass
            } else {
                PairStatus::Fail
            };
            out.push(PairCheck {
                left,
                right,
                max_rel_error: worst,
                status,
            });
        }
    }
    out
}

/// [`validate_pairs`] against the production closed forms.
pub fn validate_kernel(spec: &KernelSpec, ops: &[OperatorTag], trials: usize, seed: u64) -> Vec<PairCheck> {
    validate_pairs(spec, ops, trials, seed, DEFAULT_TOLERANCE, apply_operators)
}

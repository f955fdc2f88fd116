//! Manufactured-solution cases, error metrics and convergence sweeps.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::field::{apply_operator, AnalyticField, FnField, ScalarField};
use crate::kernel::{rkhs_distance, KernelSpec, OperatorTag, RkhsFunction};
use crate::measurements::{
    approximate_test_function, epsilon_schedule, pair_data, BoxDomain, HatAxis, MeasurementTarget, Quadrature,
    TestFunction,
};
use crate::problem::{
    assemble_multidomain_problem, DecomposedOp, MultiDomainOp, PointwiseOp, RecoveryProblem, Region, RegionOp,
    Subdomain,
};
use crate::solvers::{
    kkt_residual, solve_min_norm_equality, solve_min_norm_inequality, solve_regularized, RecoverySolution, SolverConfig,
};

pub type FieldHandle = Arc<dyn ScalarField>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    Dirichlet0,
    /// `u + ∂u/∂n = g` on `∂Ω`.
    Robin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
pub enum CaseId {
    #[serde(rename = "linear_poisson_1d")]
    LinearPoisson1d,
    #[serde(rename = "cubic_dirichlet_1d")]
    CubicDirichlet1d,
    #[serde(rename = "cubic_dirichlet_2d")]
    CubicDirichlet2d,
    #[serde(rename = "cubic_decomposed_1d")]
    CubicDecomposed1d,
    #[serde(rename = "cubic_robin_1d")]
    CubicRobin1d,
}

impl CaseId {
    pub const ALL: [CaseId; 5] = [
        CaseId::LinearPoisson1d,
        CaseId::CubicDirichlet1d,
        CaseId::CubicDirichlet2d,
        CaseId::CubicDecomposed1d,
        CaseId::CubicRobin1d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CaseId::LinearPoisson1d => "linear_poisson_1d",
            CaseId::CubicDirichlet1d => "cubic_dirichlet_1d",
            CaseId::CubicDirichlet2d => "cubic_dirichlet_2d",
            CaseId::CubicDecomposed1d => "cubic_decomposed_1d",
            CaseId::CubicRobin1d => "cubic_robin_1d",
        }
    }

    pub fn build(self) -> Result<ManufacturedCase> {
        let neg_lap = || PointwiseOp::linear(OperatorTag::NegLaplacian);
        match self {
            CaseId::LinearPoisson1d => ManufacturedCase::new(
                self,
                BoxDomain::unit(1),
                Arc::new(AnalyticField::sin_product(vec![1.0])),
                neg_lap()?,
                DecomposedOp {
                    linear: OperatorTag::NegLaplacian,
                    nonlinear: PointwiseOp::zero(OperatorTag::Identity)?,
                },
                BoundaryKind::Dirichlet0,
            ),
            CaseId::CubicDirichlet1d | CaseId::CubicDecomposed1d => ManufacturedCase::new(
                self,
                BoxDomain::unit(1),
                Arc::new(AnalyticField::sin_product(vec![1.0])),
                PointwiseOp::cubic_reaction(),
                cubic_decomposition(),
                BoundaryKind::Dirichlet0,
            ),
            CaseId::CubicDirichlet2d => ManufacturedCase::new(
                self,
                BoxDomain::unit(2),
                Arc::new(AnalyticField::sin_product(vec![1.0, 1.0])),
                PointwiseOp::cubic_reaction(),
                cubic_decomposition(),
                BoundaryKind::Dirichlet0,
            ),
            CaseId::CubicRobin1d => ManufacturedCase::new(
                self,
                BoxDomain::unit(1),
                Arc::new(AnalyticField::CosProduct {
                    freqs: vec![robin_frequency()],
                    centers: vec![0.5],
                    amplitude: 1.0,
                }),
                PointwiseOp::cubic_reaction(),
                cubic_decomposition(),
                BoundaryKind::Robin,
            ),
        }
    }

    pub fn default_formulation(self) -> Formulation {
        match self {
            CaseId::LinearPoisson1d | CaseId::CubicDirichlet1d | CaseId::CubicDirichlet2d => Formulation::NorPoints,
            CaseId::CubicDecomposed1d => Formulation::Decomposed,
            CaseId::CubicRobin1d => Formulation::MultiDomain,
        }
    }

    pub fn default_kernel(self) -> KernelSpec {
        let dim = if self == CaseId::CubicDirichlet2d { 2 } else { 1 };
        let ell = if dim == 2 { 0.3 } else { 0.2 };
        KernelSpec::gaussian(ell, dim).expect("default kernel is valid")
    }
}

fn cubic_decomposition() -> DecomposedOp {
    DecomposedOp {
        linear: OperatorTag::NegLaplacian,
        nonlinear: PointwiseOp::cube(),
    }
}

/// Root of `ω tan(ω/2) = 1` in `(0, π)`, so that `cos(ω(x − ½))`
/// satisfies `u + ∂u/∂n = 0` at both ends of `[0, 1]`.
fn robin_frequency() -> f64 {
    let mut w: f64 = 1.7;
    for _ in 0..50 {
        let t = (0.5 * w).tan();
        let f = w * t - 1.0;
        let df = t + 0.5 * w * (1.0 + t * t);
        w -= f / df;
    }
    w
}

/// A known solution `u*` with the forcing it induces.
#[derive(Clone)]
pub struct ManufacturedCase {
    pub id: CaseId,
    pub domain: BoxDomain,
    pub u_star: FieldHandle,
    pub operator: PointwiseOp,
    pub decomposition: DecomposedOp,
    pub boundary: BoundaryKind,
    pub f: FieldHandle,
    pub g_boundary: FieldHandle,
}

impl std::fmt::Debug for ManufacturedCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ManufacturedCase")
            .field("id", &self.id)
            .field("domain", &self.domain)
            .field("boundary", &self.boundary)
            .finish_non_exhaustive()
    }
}

impl ManufacturedCase {
    pub fn new(
        id: CaseId,
        domain: BoxDomain,
        u_star: FieldHandle,
        operator: PointwiseOp,
        decomposition: DecomposedOp,
        boundary: BoundaryKind,
    ) -> Result<Self> {
        domain.validate()?;
        let f = manufacture_rhs(u_star.clone(), &operator)?;
        let g_boundary = robin_data(u_star.clone(), &domain);
        let case = Self {
            id,
            domain,
            u_star,
            operator,
            decomposition,
            boundary,
            f,
            g_boundary,
        };
        case.validate()?;
        Ok(case)
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn name(&self) -> &'static str {
        self.id.name()
    }

    /// Homogeneous boundary values for Dirichlet cases, and `f = F(u*)` at
    /// 100 random interior points.
    pub fn validate(&self) -> Result<()> {
        if self.boundary == BoundaryKind::Dirichlet0 {
            for x in boundary_points(&self.domain, 8) {
                let v = self.u_star.value(&x);
                if v.abs() > 1e-12 {
                    return input(format!("{}: u* = {v:e} on the boundary at {x:?}", self.name()));
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x0fab);
        for _ in 0..100 {
            let x: Vec<f64> = (0..self.dim())
                .map(|i| rng.gen_range(self.domain.lo[i]..self.domain.hi[i]))
                .collect();
            let direct = self.operator.apply_to_field(self.u_star.as_ref(), &x)?;
            let f = self.f.value(&x);
            if (f - direct).abs() > 1e-8 * (1.0 + direct.abs()) {
                return input(format!("{}: forcing mismatch {f} vs {direct} at {x:?}", self.name()));
            }
        }
        Ok(())
    }
}

/// `f = F(u*)`, composed analytically from the derivatives `u*` supplies.
pub fn manufacture_rhs(u_star: FieldHandle, op: &PointwiseOp) -> Result<FieldHandle> {
    let dim = u_star.dim();
    op.apply_to_field(u_star.as_ref(), &vec![0.5; dim])?;
    let op = op.clone();
    Ok(Arc::new(FnField::new(dim, move |x| {
        op.apply_to_field(u_star.as_ref(), x).unwrap_or(f64::NAN)
    })))
}

/// `g = u* + ∂u*/∂n` with the outward normal of the box; zero off `∂Ω`.
fn robin_data(u_star: FieldHandle, domain: &BoxDomain) -> FieldHandle {
    let dim = u_star.dim();
    let domain = domain.clone();
    Arc::new(FnField::new(dim, move |x| match domain.outward_normal(x) {
        Some(normal) => {
            let dn = apply_operator(u_star.as_ref(), &OperatorTag::NormalDerivative { normal }, x).unwrap_or(f64::NAN);
            u_star.value(x) + dn
        }
        None => 0.0,
    }))
}

/// `(L2, Linf)` of `u − u*` over the midpoints of a uniform grid with
/// `resolution` cells per axis.
pub fn error_metrics(
    u: &RkhsFunction,
    u_star: &dyn ScalarField,
    domain: &BoxDomain,
    resolution: usize,
) -> Result<(f64, f64)> {
    if resolution == 0 {
        return input("error grid needs at least one cell per axis");
    }
    let pts = midpoint_grid(domain, resolution);
    let cell = domain.measure() / pts.len() as f64;
    let vals = u.eval_many(&OperatorTag::Identity, &pts)?;
    let (mut sq, mut max) = (0.0, 0.0f64);
    for (x, v) in pts.iter().zip(vals) {
        let e = v - u_star.value(x);
        sq += e * e;
        max = max.max(e.abs());
    }
    Ok(((sq * cell).sqrt(), max))
}

fn midpoint_grid(domain: &BoxDomain, resolution: usize) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = (0..domain.dim())
        .map(|i| {
            let h = (domain.hi[i] - domain.lo[i]) / resolution as f64;
            (0..resolution).map(|j| domain.lo[i] + (j as f64 + 0.5) * h).collect()
        })
        .collect();
    product(&axes)
}

fn product(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        out = out
            .iter()
            .flat_map(|p| {
                axis.iter().map(move |&t| {
                    let mut q = p.clone();
                    q.push(t);
                    q
                })
            })
            .collect();
    }
    out
}

/// Nodes `lo + j(hi − lo)/(k + 1)`, `j = 0..=k+1`, on every axis.
fn axis_nodes(domain: &BoxDomain, axis: usize, k: usize) -> Vec<f64> {
    let (lo, hi) = (domain.lo[axis], domain.hi[axis]);
    (0..=k + 1)
        .map(|j| lo + (hi - lo) * j as f64 / (k + 1) as f64)
        .collect()
}

/// Interior nodes per axis for a target count `n`.
fn per_axis(dim: usize, n: usize) -> usize {
    if dim == 1 {
        n
    } else {
        ((n as f64).sqrt().ceil() as usize).max(1)
    }
}

/// Boundary nodes of the `k`-interior-node grid, corners once.
fn boundary_points(domain: &BoxDomain, k: usize) -> Vec<Vec<f64>> {
    if domain.dim() == 1 {
        return vec![vec![domain.lo[0]], vec![domain.hi[0]]];
    }
    let axes: Vec<Vec<f64>> = (0..2).map(|i| axis_nodes(domain, i, k)).collect();
    product(&axes).into_iter().filter(|x| domain.on_boundary(x)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// Strong-form collocation at points, solved exactly.
    NorPoints,
    /// Sine-mode measurements with point-approximated pairings.
    Relaxed,
    /// Hat measurements; weak-form Laplacian, point-approximated
    /// nonlinearity.
    Decomposed,
    /// [`Formulation::Decomposed`] with the boundary as a second subdomain.
    MultiDomain,
    /// Regularized least squares on the point collocation problem.
    Regularized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum PointLayout {
    Uniform,
    /// Seeded uniform-random interior points.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementKind {
    Hat,
    Dirac,
}

/// Controls held fixed during a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct Controls {
    /// Number of interior measurements (rounded up to a square grid in 2D).
    pub n: usize,
    /// Point-approximation nodes per axis.
    pub m: usize,
    pub mu: f64,
    /// Tolerance scale `Ĉ`; by default twice the largest `|f|` on a grid.
    pub c_hat: Option<f64>,
    /// Gauss–Legendre cells between hat breakpoints.
    pub quad_cells: usize,
    /// Approximation nodes of the exact-measurement reference solve.
    pub reference_m: Option<usize>,
    pub layout: PointLayout,
    /// Test functions of the decomposed formulations.
    pub measurement: MeasurementKind,
}

impl Default for Controls {
    fn default() -> Self {
        Self {
            n: 20,
            m: 16,
            mu: 1e6,
            c_hat: None,
            quad_cells: 2,
            reference_m: None,
            layout: PointLayout::Uniform,
            measurement: MeasurementKind::Hat,
        }
    }
}

impl Controls {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return input("n must be at least 1");
        }
        if self.m == 0 {
            return input("m must be at least 1");
        }
        if self.quad_cells == 0 {
            return input("quad_cells must be at least 1");
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return input(format!("mu must be positive and finite, got {}", self.mu));
        }
        if let Some(c) = self.c_hat {
            if !(c > 0.0 && c.is_finite()) {
                return input(format!("c_hat must be positive and finite, got {c}"));
            }
        }
        if self.reference_m == Some(0) {
            return input("reference_m must be at least 1");
        }
        Ok(())
    }
}

/// Assembled problem of one case and formulation.
#[derive(Debug, Clone)]
pub struct CaseProblem {
    pub problem: RecoveryProblem,
    pub formulation: Formulation,
    pub mu: f64,
}

fn default_c_hat(case: &ManufacturedCase) -> f64 {
    let fmax = midpoint_grid(&case.domain, 64)
        .iter()
        .fold(0.0f64, |a, x| a.max(case.f.value(x).abs()));
    2.0 * fmax.max(1e-12)
}

fn interior_points(case: &ManufacturedCase, n: usize, layout: PointLayout, seed: u64) -> Vec<Vec<f64>> {
    let d = &case.domain;
    match layout {
        PointLayout::Uniform => {
            let k = per_axis(case.dim(), n);
            let axes: Vec<Vec<f64>> = (0..case.dim())
                .map(|i| {
                    let nodes = axis_nodes(d, i, k);
                    nodes[1..=k].to_vec()
                })
                .collect();
            product(&axes)
        }
        PointLayout::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let count = per_axis(case.dim(), n).pow(case.dim() as u32);
            (0..count)
                .map(|_| {
                    (0..case.dim())
                        .map(|i| {
                            let (lo, hi) = (d.lo[i], d.hi[i]);
                            lo + (hi - lo) * (0.02 + 0.96 * rng.gen::<f64>())
                        })
                        .collect()
                })
                .collect()
        }
    }
}

fn dirac(case: &ManufacturedCase, x: Vec<f64>, target: f64) -> Result<MeasurementTarget> {
    Ok(MeasurementTarget::exact(
        TestFunction::dirac(case.domain.clone(), x)?,
        target,
    ))
}

/// Sine modes ordered by total degree.
fn sine_modes(dim: usize, n: usize) -> Vec<Vec<u32>> {
    if dim == 1 {
        return (1..=n as u32).map(|k| vec![k]).collect();
    }
    let mut modes = Vec::new();
    let mut total = 2;
    while modes.len() < n {
        for a in 1..total {
            modes.push(vec![a, total - a]);
        }
        total += 1;
    }
    modes.truncate(n);
    modes
}

fn dirichlet_boundary(case: &ManufacturedCase, k: usize) -> Result<Vec<MeasurementTarget>> {
    boundary_points(&case.domain, k)
        .into_iter()
        .map(|x| dirac(case, x, 0.0))
        .collect()
}

fn exact_pairing(case: &ManufacturedCase, phi: &TestFunction) -> Result<f64> {
    let quad = Quadrature::for_test_function(phi, 32)?;
    Ok(pair_data(case.f.as_ref(), phi, &quad))
}

/// Point-approximated measurement with `ε = Ĉ ε̄` (zero when `exact`).
fn approximated(phi: TestFunction, target: f64, m: usize, c_hat: f64, exact: bool) -> Result<MeasurementTarget> {
    let approx = approximate_test_function(&phi, m)?;
    let tolerance = if exact {
        0.0
    } else {
        epsilon_schedule(approx.dual_error_estimate, c_hat)?
    };
    Ok(MeasurementTarget {
        test_fn: phi,
        target,
        tolerance,
        point_approx: Some(approx),
    })
}

/// Assemble `case` under `formulation`. `exact` zeroes all tolerances,
/// giving the aggregated equality problem.
pub fn build_problem(
    case: &ManufacturedCase,
    formulation: Formulation,
    controls: &Controls,
    kernel: &KernelSpec,
    seed: u64,
    exact: bool,
) -> Result<CaseProblem> {
    controls.validate()?;
    kernel.validate()?;
    if kernel.dim != case.dim() {
        return Err(Error::DimensionMismatch {
            expected: case.dim(),
            got: kernel.dim,
        });
    }
    let robin = case.boundary == BoundaryKind::Robin;
    let k = per_axis(case.dim(), controls.n);
    let c_hat = controls.c_hat.unwrap_or_else(|| default_c_hat(case));
    let dirichlet_op = || RegionOp::Pointwise(PointwiseOp::linear(OperatorTag::Identity).expect("identity"));
    let interior = |op: RegionOp| Subdomain {
        tag: 0,
        region: Region::Interior,
        op,
    };
    let boundary = |op: RegionOp| Subdomain {
        tag: 1,
        region: Region::Boundary,
        op,
    };
    let (op, measurements, quad) = match formulation {
        Formulation::NorPoints | Formulation::Regularized => {
            if robin {
                return input(format!(
                    "{} has Robin data; use the multi_domain formulation",
                    case.name()
                ));
            }
            let mut ms = interior_points(case, controls.n, controls.layout, seed)
                .into_iter()
                .map(|x| {
                    let t = case.f.value(&x);
                    dirac(case, x, t)
                })
                .collect::<Result<Vec<_>>>()?;
            ms.extend(dirichlet_boundary(case, k)?);
            let op = MultiDomainOp::new(
                case.domain.clone(),
                vec![
                    interior(RegionOp::Pointwise(case.operator.clone())),
                    boundary(dirichlet_op()),
                ],
            )?;
            (op, ms, Quadrature::default())
        }
        Formulation::Relaxed => {
            if robin {
                return input(format!(
                    "{} has Robin data; use the multi_domain formulation",
                    case.name()
                ));
            }
            let mut ms = Vec::new();
            for modes in sine_modes(case.dim(), controls.n) {
                let phi = TestFunction::fourier_sine(case.domain.clone(), modes)?;
                let target = exact_pairing(case, &phi)?;
                ms.push(approximated(phi, target, controls.m, c_hat, exact)?);
            }
            ms.extend(dirichlet_boundary(case, k)?);
            let op = MultiDomainOp::new(
                case.domain.clone(),
                vec![
                    interior(RegionOp::Pointwise(case.operator.clone())),
                    boundary(dirichlet_op()),
                ],
            )?;
            (op, ms, Quadrature::default())
        }
        Formulation::Decomposed | Formulation::MultiDomain => {
            let decomposed = RegionOp::Decomposed(case.decomposition.clone());
            let nonlinear = !case.decomposition.nonlinear.is_zero();
            let mut ms = Vec::new();
            let axes: Vec<Vec<f64>> = (0..case.dim()).map(|i| axis_nodes(&case.domain, i, k)).collect();
            let quad = Quadrature::gauss_legendre(&axes, controls.quad_cells)?;
            match controls.measurement {
                MeasurementKind::Dirac => {
                    if robin {
                        return input("Robin data needs hat measurements");
                    }
                    for x in interior_points(case, controls.n, controls.layout, seed) {
                        let t = case.f.value(&x);
                        ms.push(dirac(case, x, t)?);
                    }
                }
                MeasurementKind::Hat => {
                    // hats centred on grid nodes; Robin adds half hats on ∂Ω
                    let range = if robin { 0..k + 2 } else { 1..k + 1 };
                    let per_axis_hats: Vec<Vec<HatAxis>> = axes
                        .iter()
                        .map(|nodes| {
                            range
                                .clone()
                                .map(|j| HatAxis {
                                    left: nodes[j.saturating_sub(1)],
                                    center: nodes[j],
                                    right: nodes[(j + 1).min(nodes.len() - 1)],
                                })
                                .collect()
                        })
                        .collect();
                    let mut combos: Vec<Vec<HatAxis>> = vec![Vec::new()];
                    for hats in &per_axis_hats {
                        combos = combos
                            .iter()
                            .flat_map(|c| {
                                hats.iter().map(move |h| {
                                    let mut c = c.clone();
                                    c.push(*h);
                                    c
                                })
                            })
                            .collect();
                    }
                    let bquad = Quadrature::boundary(&case.domain, 16)?;
                    for axes in combos {
                        let phi = TestFunction::hat(case.domain.clone(), axes)?;
                        let mut target = exact_pairing(case, &phi)?;
                        if robin {
                            target += bquad.integrate(|x| case.g_boundary.value(x) * phi.value(x));
                        }
                        ms.push(approximated(phi, target, controls.m, c_hat, exact || !nonlinear)?);
                    }
                }
            }
            let b = if robin {
                boundary(RegionOp::Linear(OperatorTag::Identity))
            } else {
                ms.extend(dirichlet_boundary(case, k)?);
                boundary(dirichlet_op())
            };
            let op = MultiDomainOp::new(case.domain.clone(), vec![interior(decomposed), b])?;
            (op, ms, quad)
        }
    };
    let mut problem = assemble_multidomain_problem(&op, &measurements, &quad, kernel)?;
    if problem.tolerances().iter().all(|t| *t == 0.0) {
        problem = problem.to_equality();
    }
    Ok(CaseProblem {
        problem,
        formulation,
        mu: controls.mu,
    })
}

/// Assemble explicitly listed measurements of `case.operator` (strong
/// form), with homogeneous Dirichlet data on boundary Dirac points. Missing
/// point approximations are filled in with `controls.m` nodes.
pub fn build_custom_problem(
    case: &ManufacturedCase,
    formulation: Formulation,
    measurements: &[MeasurementTarget],
    controls: &Controls,
    kernel: &KernelSpec,
) -> Result<CaseProblem> {
    controls.validate()?;
    kernel.validate()?;
    if !matches!(
        formulation,
        Formulation::NorPoints | Formulation::Relaxed | Formulation::Regularized
    ) {
        return input("explicit measurements support the nor_points, relaxed and regularized formulations");
    }
    let ms = measurements
        .iter()
        .map(|m| {
            let mut m = m.clone();
            if !m.test_fn.is_dirac() && m.point_approx.is_none() {
                m.point_approx = Some(approximate_test_function(&m.test_fn, controls.m)?);
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    let op = MultiDomainOp::new(
        case.domain.clone(),
        vec![
            Subdomain {
                tag: 0,
                region: Region::Interior,
                op: RegionOp::Pointwise(case.operator.clone()),
            },
            Subdomain {
                tag: 1,
                region: Region::Boundary,
                op: RegionOp::Pointwise(PointwiseOp::linear(OperatorTag::Identity)?),
            },
        ],
    )?;
    let mut problem = assemble_multidomain_problem(&op, &ms, &Quadrature::default(), kernel)?;
    if problem.tolerances().iter().all(|t| *t == 0.0) {
        problem = problem.to_equality();
    }
    Ok(CaseProblem {
        problem,
        formulation,
        mu: controls.mu,
    })
}

/// Dispatch to the solver matching the formulation and problem kind.
pub fn solve_problem(cp: &CaseProblem, solver: &SolverConfig) -> Result<RecoverySolution> {
    use crate::problem::ProblemKind;
    match (cp.formulation, cp.problem.kind()) {
        (Formulation::Regularized, _) => {
            let cfg = SolverConfig {
                mu: cp.mu,
                ..solver.clone()
            };
            solve_regularized(&cp.problem, &cfg)
        }
        (_, ProblemKind::Equality) => solve_min_norm_equality(&cp.problem, solver),
        (_, ProblemKind::Relaxed) => solve_min_norm_inequality(&cp.problem, solver),
        (_, ProblemKind::Regularized) => solve_regularized(&cp.problem, solver),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Control {
    N,
    M,
    Mu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySpec {
    pub case: CaseId,
    pub formulation: Formulation,
    pub control: Control,
    pub sweep: Vec<f64>,
    #[serde(default)]
    pub fixed: Controls,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_eval_grid")]
    pub eval_grid: usize,
    /// Wall time in the `seconds` column; off keeps output reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
}

fn default_eval_grid() -> usize {
    200
}

impl StudySpec {
    pub fn new(case: CaseId, control: Control, sweep: Vec<f64>) -> Self {
        let formulation = match control {
            Control::Mu => Formulation::Regularized,
            Control::M => Formulation::Relaxed,
            Control::N => case.default_formulation(),
        };
        Self {
            case,
            formulation,
            control,
            sweep,
            fixed: Controls::default(),
            kernel: case.default_kernel(),
            solver: SolverConfig::default(),
            eval_grid: default_eval_grid(),
            record_wall_time: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.fixed.validate()?;
        self.kernel.validate()?;
        self.solver.validate()?;
        if self.eval_grid == 0 {
            return input("eval_grid must be at least 1");
        }
        if self.sweep.is_empty() {
            return input("sweep is empty");
        }
        if self.sweep.windows(2).any(|w| !(w[1] > w[0])) {
            return input("sweep values must be strictly increasing");
        }
        match self.control {
            Control::N | Control::M => {
                if self.sweep.iter().any(|v| !(*v >= 1.0) || v.fract() != 0.0 || *v > 1e6) {
                    return input("N and M sweep values must be positive integers");
                }
            }
            Control::Mu => {
                if self.sweep.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                    return input("mu sweep values must be positive and finite");
                }
            }
        }
        match (self.control, self.formulation) {
            (Control::M, Formulation::Relaxed | Formulation::Decomposed | Formulation::MultiDomain) => {}
            (Control::M, f) => return input(format!("sweeping M needs a relaxed formulation, got {f:?}")),
            (Control::Mu, Formulation::Regularized) => {}
            (Control::Mu, f) => return input(format!("sweeping mu needs the regularized formulation, got {f:?}")),
            (Control::N, _) => {}
        }
        Ok(())
    }

    fn controls_at(&self, value: f64) -> Controls {
        let mut c = self.fixed.clone();
        match self.control {
            Control::N => c.n = value as usize,
            Control::M => c.m = value as usize,
            Control::Mu => c.mu = value,
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub control: f64,
    pub l2: f64,
    pub linf: f64,
    pub norm: f64,
    pub kkt: f64,
    pub violation: f64,
    pub converged: bool,
    pub seconds: f64,
    /// Largest constraint tolerance of the assembled problem.
    pub max_tolerance: f64,
    /// `‖u − u_ref‖` against the exact-measurement reference, if any.
    pub reference_distance: Option<f64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub spec: StudySpec,
    pub rows: Vec<StudyRow>,
    /// `‖u_ref‖` of the reference solve, if any.
    pub reference_norm: Option<f64>,
}

pub const CSV_HEADER: &str = "control,L2,Linf,norm,kkt,violation,converged,seconds";

impl StudyResult {
    pub fn all_converged(&self) -> bool {
        self.rows.iter().all(|r| r.converged)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> = CSV_HEADER.split(',').collect();
        let mut write = |rec: Vec<String>| w.write_record(&rec).expect("writing to memory");
        write(header.iter().map(|h| h.to_string()).collect());
        for r in &self.rows {
            write(vec![
                r.control.to_string(),
                format!("{:e}", r.l2),
                format!("{:e}", r.linf),
                format!("{:e}", r.norm),
                format!("{:e}", r.kkt),
                format!("{:e}", r.violation),
                r.converged.to_string(),
                r.seconds.to_string(),
            ]);
        }
        String::from_utf8(w.into_inner().expect("flushing to memory")).expect("ascii output")
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Input(format!("serializing study: {e}")))
    }
}

/// One solve with metrics; conditioning failures become a failed row.
fn run_row(
    spec: &StudySpec,
    case: &ManufacturedCase,
    value: f64,
    reference: Option<&RkhsFunction>,
) -> Result<StudyRow> {
    let start = Instant::now();
    let controls = spec.controls_at(value);
    let cp = build_problem(case, spec.formulation, &controls, &spec.kernel, spec.solver.seed, false)?;
    let max_tolerance = cp.problem.tolerances().iter().fold(0.0f64, |a, t| a.max(*t));
    let seconds = |start: Instant| {
        if spec.record_wall_time {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    };
    let sol = match solve_problem(&cp, &spec.solver) {
        Ok(s) => s,
        Err(Error::Conditioning { pivot, nugget }) => {
            return Ok(StudyRow {
                control: value,
                l2: f64::NAN,
                linf: f64::NAN,
                norm: f64::NAN,
                kkt: f64::NAN,
                violation: f64::NAN,
                converged: false,
                seconds: seconds(start),
                max_tolerance,
                reference_distance: None,
                message: format!("factorization failed: pivot {pivot:e} with nugget {nugget:e}"),
            })
        }
        Err(e) => return Err(e),
    };
    let kkt = kkt_residual(&cp.problem, &sol)?;
    let (l2, linf) = error_metrics(&sol.function, case.u_star.as_ref(), &case.domain, spec.eval_grid)?;
    let reference_distance = reference.map(|r| rkhs_distance(&sol.function, r)).transpose()?;
    Ok(StudyRow {
        control: value,
        l2,
        linf,
        norm: sol.report.objective,
        kkt: kkt.stationarity,
        violation: kkt.feasibility,
        converged: sol.report.converged,
        seconds: seconds(start),
        max_tolerance,
        reference_distance,
        message: sol.report.message,
    })
}

fn run_study(spec: &StudySpec, reference: Option<(&RkhsFunction, f64)>) -> Result<StudyResult> {
    let case = spec.case.build()?;
    let rows = spec
        .sweep
        .par_iter()
        .map(|&v| run_row(spec, &case, v, reference.map(|r| r.0)))
        .collect::<Result<Vec<_>>>()?;
    Ok(StudyResult {
        spec: spec.clone(),
        rows,
        reference_norm: reference.map(|r| r.1),
    })
}

#[allow(non_snake_case)]
pub fn study_vary_N(spec: &StudySpec) -> Result<StudyResult> {
    spec.validate()?;
    if spec.control != Control::N {
        return input("study_vary_N needs control n");
    }
    run_study(spec, None)
}

/// Sweeps `M`; with `fixed.reference_m` set, each row also records the
/// distance to the exact-measurement solve at that resolution.
#[allow(non_snake_case)]
pub fn study_vary_M(spec: &StudySpec) -> Result<StudyResult> {
    spec.validate()?;
    if spec.control != Control::M {
        return input("study_vary_M needs control m");
    }
    let reference = match spec.fixed.reference_m {
        Some(m) => {
            let case = spec.case.build()?;
            let controls = Controls {
                m,
                ..spec.fixed.clone()
            };
            let cp = build_problem(&case, spec.formulation, &controls, &spec.kernel, spec.solver.seed, true)?;
            let sol = solve_problem(&cp, &spec.solver)?;
            if !sol.report.converged {
                return Err(Error::NotConverged(format!("reference solve: {}", sol.report.message)));
            }
            Some((sol.function, sol.report.objective))
        }
        None => None,
    };
    run_study(spec, reference.as_ref().map(|(f, n)| (f, *n)))
}

/// Sweeps `μ`; each row also records the distance to the unregularized
/// point collocation solve when the case admits one.
pub fn study_vary_mu(spec: &StudySpec) -> Result<StudyResult> {
    spec.validate()?;
    if spec.control != Control::Mu {
        return input("study_vary_mu needs control mu");
    }
    let case = spec.case.build()?;
    if case.boundary == BoundaryKind::Robin {
        return run_study(spec, None);
    }
    let cp = build_problem(
        &case,
        Formulation::NorPoints,
        &spec.fixed,
        &spec.kernel,
        spec.solver.seed,
        false,
    )?;
    let sol = solve_problem(&cp, &spec.solver)?;
    if !sol.report.converged {
        return Err(Error::NotConverged(format!("reference solve: {}", sol.report.message)));
    }
    run_study(spec, Some((&sol.function, sol.report.objective)))
}

pub fn run(spec: &StudySpec) -> Result<StudyResult> {
    match spec.control {
        Control::N => study_vary_N(spec),
        Control::M => study_vary_M(spec),
        Control::Mu => study_vary_mu(spec),
    }
}

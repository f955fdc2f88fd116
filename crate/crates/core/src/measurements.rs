//! Test functions, quadrature pairings `[f, φ]`, weighted point-evaluation
//! approximations `Σ c_m δ_{x_m} ≈ φ` and their dual-error estimates.

use std::f64::consts::PI;
use std::sync::Arc;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::field::ScalarField;
use crate::kernel::Coord;

const GAUSS5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const GAUSS5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// Cells per smooth piece for reference pairings.
const REFERENCE_CELLS: usize = 32;

/// Axis-aligned box `Π [lo_i, hi_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let d = Self { lo, hi };
        d.validate()?;
        Ok(d)
    }

    pub fn unit(dim: usize) -> Self {
        Self {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.len() != self.hi.len() || !(1..=2).contains(&self.lo.len()) {
            return input("domain bounds must both have length 1 or 2");
        }
        if self.lo.iter().zip(&self.hi).any(|(a, b)| !(a < b)) {
            return input("domain requires lo < hi on every axis");
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn measure(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        const SLACK: f64 = 1e-12;
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (a, b))| *v >= a - SLACK && *v <= b + SLACK)
    }

    pub fn on_boundary(&self, x: &[f64]) -> bool {
        const SLACK: f64 = 1e-12;
        self.contains(x)
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .any(|(v, (a, b))| (v - a).abs() <= SLACK || (v - b).abs() <= SLACK)
    }

    pub fn contains_box(&self, other: &BoxDomain) -> bool {
        self.contains(&other.lo) && self.contains(&other.hi)
    }

    /// Outward unit normal at a boundary point (corners take the first
    /// matching axis).
    pub fn outward_normal(&self, x: &[f64]) -> Option<Vec<f64>> {
        const SLACK: f64 = 1e-12;
        for i in 0..self.dim() {
            let mut n = vec![0.0; self.dim()];
            if (x[i] - self.lo[i]).abs() <= SLACK {
                n[i] = -1.0;
                return Some(n);
            }
            if (x[i] - self.hi[i]).abs() <= SLACK {
                n[i] = 1.0;
                return Some(n);
            }
        }
        None
    }
}

/// Piecewise-linear bump on one axis: zero at `left` and `right`, one at
/// `center`. `left == center` (or `center == right`) gives a half hat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct HatAxis {
    pub left: f64,
    pub center: f64,
    pub right: f64,
}

impl HatAxis {
    fn value_and_slope(&self, t: f64) -> (f64, f64) {
        let HatAxis { left, center, right } = *self;
        if t < left || t > right {
            (0.0, 0.0)
        } else if t <= center {
            if center > left {
                ((t - left) / (center - left), 1.0 / (center - left))
            } else {
                (1.0, 0.0)
            }
        } else if right > center {
            ((right - t) / (right - center), -1.0 / (right - center))
        } else {
            (1.0, 0.0)
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut b = vec![self.left];
        if self.center > self.left && self.center < self.right {
            b.push(self.center);
        }
        b.push(self.right);
        b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TestFamily {
    /// `Π_i sin(k_i π (x_i − lo_i) / (hi_i − lo_i))`
    FourierSine { modes: Vec<u32> },
    /// Tensor product of per-axis hats.
    Hat { axes: Vec<HatAxis> },
    /// `δ_x`
    DiracPoint { point: Coord },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct TestFunction {
    #[serde(flatten)]
    pub family: TestFamily,
    pub domain: BoxDomain,
}

impl TestFunction {
    pub fn fourier_sine(domain: BoxDomain, modes: Vec<u32>) -> Result<Self> {
        Self::checked(TestFamily::FourierSine { modes }, domain)
    }

    pub fn hat(domain: BoxDomain, axes: Vec<HatAxis>) -> Result<Self> {
        Self::checked(TestFamily::Hat { axes }, domain)
    }

    pub fn dirac(domain: BoxDomain, point: Coord) -> Result<Self> {
        Self::checked(TestFamily::DiracPoint { point }, domain)
    }

    fn checked(family: TestFamily, domain: BoxDomain) -> Result<Self> {
        let phi = Self { family, domain };
        phi.validate()?;
        Ok(phi)
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        let dim = self.domain.dim();
        match &self.family {
            TestFamily::FourierSine { modes } => {
                if modes.len() != dim || modes.contains(&0) {
                    return input("Fourier sine modes must be positive, one per axis");
                }
            }
            TestFamily::Hat { axes } => {
                if axes.len() != dim {
                    return input("hat function needs one axis description per dimension");
                }
                for (i, a) in axes.iter().enumerate() {
                    if !(a.left <= a.center && a.center <= a.right && a.left < a.right) {
                        return input("hat axis requires left <= center <= right and left < right");
                    }
                    if a.left < self.domain.lo[i] - 1e-12 || a.right > self.domain.hi[i] + 1e-12 {
                        return input("hat support leaves the domain");
                    }
                }
            }
            TestFamily::DiracPoint { point } => {
                if !self.domain.contains(point) {
                    return input(format!("Dirac point {point:?} lies outside the domain"));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn is_dirac(&self) -> bool {
        matches!(self.family, TestFamily::DiracPoint { .. })
    }

    /// Whether `φ` vanishes on all of `∂Ω`.
    pub fn vanishes_on_boundary(&self) -> bool {
        match &self.family {
            TestFamily::FourierSine { .. } => true,
            TestFamily::Hat { axes } => axes.iter().enumerate().all(|(i, a)| {
                !(a.center == a.left && a.left <= self.domain.lo[i])
                    && !(a.center == a.right && a.right >= self.domain.hi[i])
            }),
            TestFamily::DiracPoint { point } => !self.domain.on_boundary(point),
        }
    }

    /// Per-axis breakpoints of the support; quadrature cells never
    /// straddle a kink.
    pub fn support_breakpoints(&self) -> Vec<Vec<f64>> {
        match &self.family {
            TestFamily::FourierSine { .. } => (0..self.dim())
                .map(|i| vec![self.domain.lo[i], self.domain.hi[i]])
                .collect(),
            TestFamily::Hat { axes } => axes.iter().map(HatAxis::breakpoints).collect(),
            TestFamily::DiracPoint { point } => point.iter().map(|&p| vec![p, p]).collect(),
        }
    }

    fn axis_factor(&self, axis: usize, t: f64) -> (f64, f64) {
        match &self.family {
            TestFamily::FourierSine { modes } => {
                let len = self.domain.hi[axis] - self.domain.lo[axis];
                let w = f64::from(modes[axis]) * PI / len;
                let (s, c) = (w * (t - self.domain.lo[axis])).sin_cos();
                (s, w * c)
            }
            TestFamily::Hat { axes } => axes[axis].value_and_slope(t),
            TestFamily::DiracPoint { .. } => (0.0, 0.0),
        }
    }

    /// `φ(x)`; zero for Dirac functionals, which have no pointwise values.
    pub fn value(&self, x: &[f64]) -> f64 {
        (0..self.dim()).map(|i| self.axis_factor(i, x[i]).0).product()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let fs: Vec<_> = (0..self.dim()).map(|i| self.axis_factor(i, x[i])).collect();
        (0..fs.len())
            .map(|i| {
                fs.iter()
                    .enumerate()
                    .map(|(j, f)| if i == j { f.1 } else { f.0 })
                    .product()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    pub nodes: Vec<Coord>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    /// Tensor-product composite 5-point Gauss–Legendre; every interval
    /// between consecutive breakpoints is split into `cells` uniform cells.
    pub fn gauss_legendre(breakpoints: &[Vec<f64>], cells: usize) -> Result<Self> {
        if cells == 0 {
            return input("quadrature needs at least one cell");
        }
        let axes: Vec<Vec<(f64, f64)>> = breakpoints
            .iter()
            .map(|bp| {
                let mut rule = Vec::new();
                for w in bp.windows(2) {
                    let h = (w[1] - w[0]) / cells as f64;
                    for c in 0..cells {
                        let mid = w[0] + (c as f64 + 0.5) * h;
                        for (x, wt) in GAUSS5_NODES.iter().zip(GAUSS5_WEIGHTS) {
                            rule.push((mid + 0.5 * h * x, 0.5 * h * wt));
                        }
                    }
                }
                rule
            })
            .collect();
        Ok(tensor(&axes))
    }

    pub fn over_domain(domain: &BoxDomain, cells: usize) -> Result<Self> {
        let bp: Vec<_> = (0..domain.dim()).map(|i| vec![domain.lo[i], domain.hi[i]]).collect();
        Self::gauss_legendre(&bp, cells)
    }

    /// Composite Gauss–Legendre aligned with the kinks of `φ`.
    pub fn for_test_function(phi: &TestFunction, cells: usize) -> Result<Self> {
        if let TestFamily::DiracPoint { point } = &phi.family {
            return Ok(Self {
                nodes: vec![point.clone()],
                weights: vec![1.0],
            });
        }
        Self::gauss_legendre(&phi.support_breakpoints(), cells)
    }

    /// Surface measure on `∂Ω`: the two endpoints in 1D, Gauss–Legendre
    /// along each edge in 2D.
    pub fn boundary(domain: &BoxDomain, cells: usize) -> Result<Self> {
        match domain.dim() {
            1 => Ok(Self {
                nodes: vec![vec![domain.lo[0]], vec![domain.hi[0]]],
                weights: vec![1.0, 1.0],
            }),
            _ => {
                let mut q = Self {
                    nodes: Vec::new(),
                    weights: Vec::new(),
                };
                for axis in 0..2 {
                    let other = 1 - axis;
                    let edge = Self::gauss_legendre(&[vec![domain.lo[other], domain.hi[other]]], cells)?;
                    for fixed in [domain.lo[axis], domain.hi[axis]] {
                        for (n, w) in edge.nodes.iter().zip(&edge.weights) {
                            let mut p = vec![0.0; 2];
                            p[axis] = fixed;
                            p[other] = n[0];
                            q.nodes.push(p);
                            q.weights.push(*w);
                        }
                    }
                }
                Ok(q)
            }
        }
    }

    /// Composite trapezoid with `m` nodes per axis over the given intervals
    /// (midpoint rule when `m == 1`).
    pub fn trapezoid(intervals: &[(f64, f64)], m: usize) -> Result<Self> {
        if m == 0 {
            return input("trapezoid rule needs at least one node");
        }
        let axes: Vec<Vec<(f64, f64)>> = intervals
            .iter()
            .map(|&(a, b)| {
                if m == 1 {
                    return vec![(0.5 * (a + b), b - a)];
                }
                let h = (b - a) / (m - 1) as f64;
                (0..m)
                    .map(|j| {
                        let w = if j == 0 || j == m - 1 { 0.5 * h } else { h };
                        (a + j as f64 * h, w)
                    })
                    .collect()
            })
            .collect();
        Ok(tensor(&axes))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(x)).sum()
    }
}

fn tensor(axes: &[Vec<(f64, f64)>]) -> Quadrature {
    let mut nodes = vec![Vec::new()];
    let mut weights = vec![1.0];
    for axis in axes {
        let mut nn = Vec::with_capacity(nodes.len() * axis.len());
        let mut nw = Vec::with_capacity(nodes.len() * axis.len());
        for (p, w) in nodes.iter().zip(&weights) {
            for (x, wx) in axis {
                let mut q = p.clone();
                q.push(*x);
                nn.push(q);
                nw.push(w * wx);
            }
        }
        nodes = nn;
        weights = nw;
    }
    Quadrature { nodes, weights }
}

/// `[f, φ] ≈ Σ_j w_j f(x_j) φ(x_j)`; exact `f(x₀)` for `φ = δ_{x₀}`.
pub fn pair_data(f: &dyn ScalarField, phi: &TestFunction, quad: &Quadrature) -> f64 {
    if let TestFamily::DiracPoint { point } = &phi.family {
        return f.value(point);
    }
    quad.integrate(|x| f.value(x) * phi.value(x))
}

/// `Σ_m c_m δ_{x_m}` approximating a test function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct PointApproximation {
    pub points: Vec<Coord>,
    pub coeffs: Vec<f64>,
    pub dual_error_estimate: f64,
}

impl PointApproximation {
    pub fn apply(&self, g: impl Fn(&[f64]) -> f64) -> f64 {
        self.points.iter().zip(&self.coeffs).map(|(x, c)| c * g(x)).sum()
    }
}

/// `M`-node trapezoid approximation `c_m = w_m φ(x_m)` over the support of
/// `φ` (the whole domain for sine modes), with its dual error estimated
/// against [`default_probes`].
pub fn approximate_test_function(phi: &TestFunction, m: usize) -> Result<PointApproximation> {
    if m == 0 {
        return input("point approximation needs M >= 1");
    }
    if let TestFamily::DiracPoint { point } = &phi.family {
        return Ok(PointApproximation {
            points: vec![point.clone()],
            coeffs: vec![1.0],
            dual_error_estimate: 0.0,
        });
    }
    let intervals: Vec<(f64, f64)> = phi
        .support_breakpoints()
        .iter()
        .map(|bp| (bp[0], *bp.last().unwrap()))
        .collect();
    let rule = Quadrature::trapezoid(&intervals, m)?;
    let coeffs = rule
        .nodes
        .iter()
        .zip(&rule.weights)
        .map(|(x, w)| w * phi.value(x))
        .collect();
    let mut approx = PointApproximation {
        points: rule.nodes,
        coeffs,
        dual_error_estimate: 0.0,
    };
    approx.dual_error_estimate = estimate_dual_error(&approx, phi, &default_probes(&phi.domain))?;
    Ok(approx)
}

/// A smooth field with a precomputed Sobolev-type norm.
#[derive(Clone)]
pub struct Probe {
    pub field: Arc<dyn ScalarField>,
    pub norm: f64,
}

impl std::fmt::Debug for Probe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Probe")
            .field("norm", &self.norm)
            .finish_non_exhaustive()
    }
}

/// `max_g |Σ c_m g(x_m) − [g, φ]| / ‖g‖` over the probe set, with `[g, φ]`
/// from a fine kink-aligned Gauss–Legendre rule.
pub fn estimate_dual_error(approx: &PointApproximation, phi: &TestFunction, probes: &[Probe]) -> Result<f64> {
    if probes.is_empty() {
        return input("dual error estimate needs at least one probe");
    }
    if let Some(p) = probes.iter().find(|p| !(p.norm > 0.0)) {
        return Err(Error::Input(format!("probe norm must be positive, got {}", p.norm)));
    }
    let quad = Quadrature::for_test_function(phi, REFERENCE_CELLS)?;
    Ok(probes
        .iter()
        .map(|p| {
            let approx_pair = approx.apply(|x| p.field.value(x));
            let exact = pair_data(p.field.as_ref(), phi, &quad);
            (approx_pair - exact).abs() / p.norm
        })
        .fold(0.0, f64::max))
}

/// `ε = Ĉ · ε̄`.
pub fn epsilon_schedule(dual_error: f64, c_hat: f64) -> Result<f64> {
    if !(c_hat > 0.0) {
        return input(format!("C_hat must be positive, got {c_hat}"));
    }
    if !(dual_error >= 0.0) {
        return input(format!("dual error must be nonnegative, got {dual_error}"));
    }
    Ok(c_hat * dual_error)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ProbeFactor {
    Sin(u32),
    Cos(u32),
    Pow(i32),
}

impl ProbeFactor {
    /// Value and first two derivatives in the unit coordinate `t`.
    fn eval(self, t: f64) -> (f64, f64, f64) {
        match self {
            ProbeFactor::Sin(k) => {
                let w = f64::from(k) * PI;
                let (s, c) = (w * t).sin_cos();
                (s, w * c, -w * w * s)
            }
            ProbeFactor::Cos(k) => {
                let w = f64::from(k) * PI;
                let (s, c) = (w * t).sin_cos();
                (c, -w * s, -w * w * c)
            }
            ProbeFactor::Pow(p) => {
                let pf = f64::from(p);
                let d1 = if p >= 1 { pf * t.powi(p - 1) } else { 0.0 };
                let d2 = if p >= 2 { pf * (pf - 1.0) * t.powi(p - 2) } else { 0.0 };
                (t.powi(p), d1, d2)
            }
        }
    }
}

/// Tensor product of [`ProbeFactor`]s on a box.
#[derive(Debug, Clone)]
struct ProbeField {
    factors: Vec<ProbeFactor>,
    domain: BoxDomain,
}

impl ProbeField {
    fn axis(&self, x: &[f64]) -> Vec<(f64, f64, f64)> {
        self.factors
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let len = self.domain.hi[i] - self.domain.lo[i];
                let (v, d1, d2) = f.eval((x[i] - self.domain.lo[i]) / len);
                (v, d1 / len, d2 / (len * len))
            })
            .collect()
    }

    fn hessian_sq(&self, x: &[f64]) -> f64 {
        let a = self.axis(x);
        let mut acc = 0.0;
        for i in 0..a.len() {
            for j in 0..a.len() {
                let h: f64 = (0..a.len())
                    .map(|k| match (k == i, k == j) {
                        (true, true) => a[k].2,
                        (true, false) | (false, true) => a[k].1,
                        _ => a[k].0,
                    })
                    .product();
                acc += h * h;
            }
        }
        acc
    }

    fn sobolev_norm(&self) -> f64 {
        let q = Quadrature::over_domain(&self.domain, 16).expect("valid domain");
        q.integrate(|x| {
            let v = self.value(x);
            let g = self.gradient(x).unwrap();
            v * v + g.iter().map(|t| t * t).sum::<f64>() + self.hessian_sq(x)
        })
        .sqrt()
    }
}

impl ScalarField for ProbeField {
    fn dim(&self) -> usize {
        self.factors.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.axis(x).iter().map(|f| f.0).product()
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let a = self.axis(x);
        Some(
            (0..a.len())
                .map(|i| {
                    a.iter()
                        .enumerate()
                        .map(|(j, f)| if i == j { f.1 } else { f.0 })
                        .product()
                })
                .collect(),
        )
    }
}

/// The fixed 20-element smooth probe dictionary on a box, each probe
/// normalized by its `H²` quadrature norm.
pub fn default_probes(domain: &BoxDomain) -> Vec<Probe> {
    let mut one_d: Vec<ProbeFactor> = (1..=7).map(ProbeFactor::Sin).collect();
    one_d.extend((0..=6).map(ProbeFactor::Cos));
    one_d.extend((1..=6).map(ProbeFactor::Pow));
    let sets: Vec<Vec<ProbeFactor>> = match domain.dim() {
        1 => one_d.into_iter().map(|f| vec![f]).collect(),
        _ => {
            let mut s = Vec::new();
            for a in 1..=4 {
                for b in 1..=4 {
                    s.push(vec![ProbeFactor::Sin(a), ProbeFactor::Sin(b)]);
                }
            }
            s.push(vec![ProbeFactor::Cos(0), ProbeFactor::Cos(0)]);
            s.push(vec![ProbeFactor::Pow(1), ProbeFactor::Cos(0)]);
            s.push(vec![ProbeFactor::Cos(0), ProbeFactor::Pow(1)]);
            s.push(vec![ProbeFactor::Pow(1), ProbeFactor::Pow(1)]);
            s
        }
    };
    sets.into_iter()
        .map(|factors| {
            let field = ProbeField {
                factors,
                domain: domain.clone(),
            };
            let norm = field.sobolev_norm();
            Probe {
                field: Arc::new(field),
                norm,
            }
        })
        .collect()
}

/// A measurement `[F(u), φ] = target`, relaxed to `|·| ≤ tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct MeasurementTarget {
    pub test_fn: TestFunction,
    pub target: f64,
    #[serde(default)]
    pub tolerance: f64,
    #[serde(default)]
    pub point_approx: Option<PointApproximation>,
}

impl MeasurementTarget {
    pub fn exact(test_fn: TestFunction, target: f64) -> Self {
        Self {
            test_fn,
            target,
            tolerance: 0.0,
            point_approx: None,
        }
    }

    pub fn is_equality(&self) -> bool {
        self.tolerance == 0.0
    }
}

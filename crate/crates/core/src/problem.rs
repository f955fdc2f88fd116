//! Pointwise nonlinear operators `F(L₁u(x), …, L_Qu(x), x)` and assembly of
//! the finite-dimensional recovery problems.
//!
//! A problem is a basis of functionals `ψ_i`, their Gram matrix `K`, and a
//! list of constraints. Basis elements are either single operator
//! functionals or quadrature-weighted sums of them (used for weak-form
//! pairings). Constraints read the basis values `z = Kλ` of the current
//! iterate `u = Σ λ_i ψ_i`; constraint `n` is
//!
//! ```text
//! r_n(z) = Σ_i a_i z_i + Σ_m c_m F(z_{rows(m)}, x_m) − target_n
//! ```
//!
//! and is enforced either exactly or as `|r_n| ≤ ε_n`.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::field::{apply_operator, ScalarField};
use crate::kernel::{
    cross_entries, Coord, FunctionalKey, GramMatrix, KernelSpec, OperatorFunctional, OperatorTag, RkhsFunction,
};
use crate::measurements::{BoxDomain, MeasurementTarget, Quadrature, TestFamily, TestFunction};

const VALIDATION_PROBES: usize = 100;
const VALIDATION_TOLERANCE: f64 = 1e-5;

/// `coeff · Π_l z_l^{powers_l}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

type PointMap = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
type PointGrad = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
enum Form {
    Polynomial(Vec<Monomial>),
    Custom { f: PointMap, df: PointGrad },
}

/// `F(L₁u(x), …, L_Qu(x), x)` together with its partials `∂_l F`.
#[derive(Clone)]
pub struct PointwiseOp {
    ops: Vec<OperatorTag>,
    form: Form,
}

impl std::fmt::Debug for PointwiseOp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut d = f.debug_struct("PointwiseOp");
        d.field("ops", &self.ops);
        match &self.form {
            Form::Polynomial(terms) => d.field("terms", terms),
            Form::Custom { .. } => d.field("form", &"custom"),
        };
        d.finish()
    }
}

impl PointwiseOp {
    /// `F(z) = Σ_t coeff_t Π_l z_l^{p_tl}`.
    pub fn polynomial(ops: Vec<OperatorTag>, terms: Vec<Monomial>) -> Result<Self> {
        if terms.iter().any(|t| t.powers.len() != ops.len()) {
            return input("every monomial needs one power per operator");
        }
        Self::checked(ops, Form::Polynomial(terms), 1)
    }

    /// Arbitrary `F` with user-supplied partials, checked against central
    /// differences on random probes.
    pub fn from_fn(
        dim: usize,
        ops: Vec<OperatorTag>,
        f: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        df: impl Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        Self::checked(
            ops,
            Form::Custom {
                f: Arc::new(f),
                df: Arc::new(df),
            },
            dim,
        )
    }

    fn checked(ops: Vec<OperatorTag>, form: Form, dim: usize) -> Result<Self> {
        if ops.is_empty() {
            return input("pointwise operator needs at least one linear operator");
        }
        for op in &ops {
            op.validate()?;
        }
        let op = Self { ops, form };
        op.validate_partials(dim)?;
        Ok(op)
    }

    /// `−Δu + u³`
    pub fn cubic_reaction() -> Self {
        Self::polynomial(
            vec![OperatorTag::NegLaplacian, OperatorTag::Identity],
            vec![
                Monomial {
                    coeff: 1.0,
                    powers: vec![1, 0],
                },
                Monomial {
                    coeff: 1.0,
                    powers: vec![0, 3],
                },
            ],
        )
        .expect("static operator")
    }

    /// `u³`
    pub fn cube() -> Self {
        Self::polynomial(
            vec![OperatorTag::Identity],
            vec![Monomial {
                coeff: 1.0,
                powers: vec![3],
            }],
        )
        .expect("static operator")
    }

    /// `L u`
    pub fn linear(op: OperatorTag) -> Result<Self> {
        Self::polynomial(
            vec![op],
            vec![Monomial {
                coeff: 1.0,
                powers: vec![1],
            }],
        )
    }

    /// `F ≡ 0` on `L u`.
    pub fn zero(op: OperatorTag) -> Result<Self> {
        Self::polynomial(vec![op], Vec::new())
    }

    pub fn ops(&self) -> &[OperatorTag] {
        &self.ops
    }

    pub fn q(&self) -> usize {
        self.ops.len()
    }

    /// Whether `F` is affine in `z` (polynomial forms of degree ≤ 1).
    pub fn is_linear(&self) -> bool {
        match &self.form {
            Form::Polynomial(terms) => terms.iter().all(|t| t.powers.iter().sum::<u32>() <= 1),
            Form::Custom { .. } => false,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(&self.form, Form::Polynomial(terms) if terms.iter().all(|t| t.coeff == 0.0))
    }

    pub fn eval(&self, z: &[f64], x: &[f64]) -> f64 {
        match &self.form {
            Form::Polynomial(terms) => terms
                .iter()
                .map(|t| t.coeff * z.iter().zip(&t.powers).map(|(v, &p)| v.powi(p as i32)).product::<f64>())
                .sum(),
            Form::Custom { f, .. } => f(z, x),
        }
    }

    pub fn grad(&self, z: &[f64], x: &[f64]) -> Vec<f64> {
        match &self.form {
            Form::Polynomial(terms) => {
                let mut g = vec![0.0; z.len()];
                for t in terms {
                    for (l, gl) in g.iter_mut().enumerate() {
                        let p = t.powers[l];
                        if p == 0 {
                            continue;
                        }
                        let rest: f64 = z
                            .iter()
                            .zip(&t.powers)
                            .enumerate()
                            .filter(|(k, _)| *k != l)
                            .map(|(_, (v, &pk))| v.powi(pk as i32))
                            .product();
                        *gl += t.coeff * f64::from(p) * z[l].powi(p as i32 - 1) * rest;
                    }
                }
                g
            }
            Form::Custom { df, .. } => df(z, x),
        }
    }

    /// `F(L₁u(x), …, L_Qu(x), x)` for a field supplying the derivatives.
    pub fn apply_to_field(&self, u: &dyn ScalarField, x: &[f64]) -> Result<f64> {
        let z = self
            .ops
            .iter()
            .map(|op| apply_operator(u, op, x))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.eval(&z, x))
    }

    fn validate_partials(&self, dim: usize) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..VALIDATION_PROBES {
            let z: Vec<f64> = (0..self.q()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect();
            let g = self.grad(&z, &x);
            if g.len() != self.q() {
                return input(format!("dF returned {} partials for {} operators", g.len(), self.q()));
            }
            let scale = 1.0 + self.eval(&z, &x).abs();
            for l in 0..self.q() {
                let h = 1e-6 * z[l].abs().max(1.0);
                let (mut zp, mut zm) = (z.clone(), z.clone());
                zp[l] += h;
                zm[l] -= h;
                let fd = (self.eval(&zp, &x) - self.eval(&zm, &x)) / (2.0 * h);
                let denom = g[l].abs().max(fd.abs()).max(1e-3 * scale);
                if (g[l] - fd).abs() > VALIDATION_TOLERANCE * denom {
                    return input(format!(
                        "partial ∂F/∂z_{l} = {} disagrees with finite difference {fd} at z = {z:?}",
                        g[l]
                    ));
                }
            }
        }
        Ok(())
    }
}

/// `[L u, φ] + [F̂(u), φ]` with `L` paired through quadrature and `F̂`
/// through the point approximation of `φ`.
#[derive(Debug, Clone)]
pub struct DecomposedOp {
    pub linear: OperatorTag,
    pub nonlinear: PointwiseOp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// The closed domain with volume measure. Dirac points on `∂Ω` are
    /// left to the boundary subdomain when one exists.
    Interior,
    /// `∂Ω` with surface measure.
    Boundary,
}

#[derive(Debug, Clone)]
pub enum RegionOp {
    /// Pointwise operator paired through point evaluations.
    Pointwise(PointwiseOp),
    /// Linear operator paired through quadrature.
    Linear(OperatorTag),
    Decomposed(DecomposedOp),
}

#[derive(Debug, Clone)]
pub struct Subdomain {
    pub tag: usize,
    pub region: Region,
    pub op: RegionOp,
}

/// `Σ_p [F_p(u), φ]_{Ω_p}` over disjoint subdomains of one box.
#[derive(Debug, Clone)]
pub struct MultiDomainOp {
    pub domain: BoxDomain,
    pub subdomains: Vec<Subdomain>,
}

impl MultiDomainOp {
    pub fn new(domain: BoxDomain, subdomains: Vec<Subdomain>) -> Result<Self> {
        domain.validate()?;
        if subdomains.is_empty() {
            return input("multi-domain operator needs at least one subdomain");
        }
        let mut tags: Vec<usize> = subdomains.iter().map(|s| s.tag).collect();
        tags.sort_unstable();
        tags.dedup();
        if tags.len() != subdomains.len() {
            return input("subdomain tags must be unique");
        }
        for r in [Region::Interior, Region::Boundary] {
            if subdomains.iter().filter(|s| s.region == r).count() > 1 {
                return input(format!("{r:?} region appears more than once"));
            }
        }
        Ok(Self { domain, subdomains })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Equality,
    Relaxed,
    Regularized,
}

/// `coeff · F(z_{rows}, point)`
#[derive(Debug, Clone, PartialEq)]
pub struct PointTerm {
    pub op: usize,
    pub coeff: f64,
    pub rows: Vec<usize>,
    pub point: Coord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    /// `(basis index, weight)` pairs of the affine part.
    pub linear: Vec<(usize, f64)>,
    pub terms: Vec<PointTerm>,
    pub target: f64,
    pub tolerance: f64,
}

/// An assembled finite-dimensional recovery problem.
#[derive(Debug, Clone)]
pub struct RecoveryProblem {
    kernel: KernelSpec,
    atoms: Vec<OperatorFunctional>,
    basis: Vec<Vec<(usize, f64)>>,
    gram: GramMatrix,
    ops: Vec<PointwiseOp>,
    constraints: Vec<Constraint>,
    kind: ProblemKind,
}

impl RecoveryProblem {
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn gram(&self) -> &GramMatrix {
        &self.gram
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn ops(&self) -> &[PointwiseOp] {
        &self.ops
    }

    /// Number of basis elements.
    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    /// The distinct operator functionals the basis is built from.
    pub fn atoms(&self) -> &[OperatorFunctional] {
        &self.atoms
    }

    /// Basis element `i` as `(atom index, weight)` pairs.
    pub fn basis_element(&self, i: usize) -> &[(usize, f64)] {
        &self.basis[i]
    }

    /// Basis element `i` when it is a single unit-weight functional.
    pub fn point_functional(&self, i: usize) -> Option<&OperatorFunctional> {
        match self.basis[i].as_slice() {
            [(a, w)] if *w == 1.0 => Some(&self.atoms[*a]),
            _ => None,
        }
    }

    pub fn tolerances(&self) -> DVector<f64> {
        DVector::from_iterator(self.constraints.len(), self.constraints.iter().map(|c| c.tolerance))
    }

    pub fn targets(&self) -> DVector<f64> {
        DVector::from_iterator(self.constraints.len(), self.constraints.iter().map(|c| c.target))
    }

    /// The same problem with every tolerance zero, as an equality problem.
    pub fn to_equality(&self) -> Self {
        let mut p = self.clone();
        for c in &mut p.constraints {
            c.tolerance = 0.0;
        }
        p.kind = ProblemKind::Equality;
        p
    }

    /// The same problem with tolerances replaced.
    pub fn with_tolerances(&self, tolerances: &[f64]) -> Result<Self> {
        if tolerances.len() != self.constraints.len() {
            return Err(Error::DimensionMismatch {
                expected: self.constraints.len(),
                got: tolerances.len(),
            });
        }
        if tolerances.iter().any(|t| !(*t >= 0.0)) {
            return input("tolerances must be nonnegative");
        }
        let mut p = self.clone();
        for (c, t) in p.constraints.iter_mut().zip(tolerances) {
            c.tolerance = *t;
        }
        p.kind = ProblemKind::Relaxed;
        Ok(p)
    }

    pub fn with_kind(&self, kind: ProblemKind) -> Result<Self> {
        if kind == ProblemKind::Equality && self.constraints.iter().any(|c| c.tolerance != 0.0) {
            return input("equality problems need zero tolerances");
        }
        let mut p = self.clone();
        p.kind = kind;
        Ok(p)
    }

    /// Basis values `z = Kλ`.
    pub fn values(&self, lambda: &DVector<f64>) -> Result<DVector<f64>> {
        if lambda.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: lambda.len(),
            });
        }
        Ok(self.gram.entries() * lambda)
    }

    /// Residuals and `A = ∂r/∂z` at basis values `z`.
    pub fn residual_and_value_jacobian(&self, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let nc = self.constraints.len();
        let mut r = DVector::zeros(nc);
        let mut a = DMatrix::zeros(nc, self.len());
        let mut zq = Vec::new();
        for (n, c) in self.constraints.iter().enumerate() {
            let mut acc = -c.target;
            for &(i, w) in &c.linear {
                acc += w * z[i];
                a[(n, i)] += w;
            }
            for t in &c.terms {
                zq.clear();
                zq.extend(t.rows.iter().map(|&i| z[i]));
                let op = &self.ops[t.op];
                acc += t.coeff * op.eval(&zq, &t.point);
                for (&i, g) in t.rows.iter().zip(op.grad(&zq, &t.point)) {
                    a[(n, i)] += t.coeff * g;
                }
            }
            r[n] = acc;
        }
        (r, a)
    }

    pub fn residual(&self, lambda: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.residual_and_value_jacobian(&self.values(lambda)?).0)
    }

    /// `u = Σ λ_i ψ_i` expanded over the atom functionals.
    pub fn function(&self, lambda: &DVector<f64>) -> Result<RkhsFunction> {
        if lambda.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: lambda.len(),
            });
        }
        let mut coeffs = vec![0.0; self.atoms.len()];
        for (elem, l) in self.basis.iter().zip(lambda.iter()) {
            for &(a, w) in elem {
                coeffs[a] += w * l;
            }
        }
        RkhsFunction::new(self.kernel, self.atoms.clone(), coeffs)
    }
}

/// `(r(λ), J(λ))` with `J = A K`, `A = ∂r/∂z` at `z = Kλ`.
pub fn residual_and_jacobian(problem: &RecoveryProblem, lambda: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let z = problem.values(lambda)?;
    let (r, a) = problem.residual_and_value_jacobian(&z);
    Ok((r, a * problem.gram.entries()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyOptions {
    /// Merge basis functionals with identical operator, point and tag.
    pub dedup: bool,
    /// Gram diagonal shift; `None` uses the default relative nugget.
    pub nugget: Option<f64>,
    /// Cells per boundary edge for surface pairings in 2D.
    pub boundary_cells: usize,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self {
            dedup: true,
            nugget: None,
            boundary_cells: 16,
        }
    }
}

struct Builder<'a> {
    kernel: KernelSpec,
    opts: &'a AssemblyOptions,
    atoms: Vec<OperatorFunctional>,
    atom_index: HashMap<FunctionalKey, usize>,
    basis: Vec<Vec<(usize, f64)>>,
    point_index: HashMap<FunctionalKey, usize>,
    ops: Vec<PointwiseOp>,
    constraints: Vec<Constraint>,
}

impl<'a> Builder<'a> {
    fn new(kernel: KernelSpec, opts: &'a AssemblyOptions) -> Result<Self> {
        kernel.validate()?;
        Ok(Self {
            kernel,
            opts,
            atoms: Vec::new(),
            atom_index: HashMap::new(),
            basis: Vec::new(),
            point_index: HashMap::new(),
            ops: Vec::new(),
            constraints: Vec::new(),
        })
    }

    fn add_op(&mut self, op: &PointwiseOp) -> usize {
        self.ops.push(op.clone());
        self.ops.len() - 1
    }

    fn atom(&mut self, f: OperatorFunctional) -> Result<usize> {
        if f.point.len() != self.kernel.dim {
            return Err(Error::DimensionMismatch {
                expected: self.kernel.dim,
                got: f.point.len(),
            });
        }
        let key = f.key();
        if let Some(&i) = self.atom_index.get(&key) {
            return Ok(i);
        }
        f.op.diff_op(self.kernel.dim)?;
        self.atoms.push(f);
        self.atom_index.insert(key, self.atoms.len() - 1);
        Ok(self.atoms.len() - 1)
    }

    fn point(&mut self, f: OperatorFunctional) -> Result<usize> {
        let key = f.key();
        if self.opts.dedup {
            if let Some(&i) = self.point_index.get(&key) {
                return Ok(i);
            }
        }
        let a = self.atom(f)?;
        self.basis.push(vec![(a, 1.0)]);
        let i = self.basis.len() - 1;
        self.point_index.entry(key).or_insert(i);
        Ok(i)
    }

    /// A weighted-sum basis element; `None` when every weight vanishes.
    fn composite(&mut self, terms: Vec<(OperatorFunctional, f64)>) -> Result<Option<usize>> {
        let mut elem: Vec<(usize, f64)> = Vec::new();
        for (f, w) in terms {
            if w == 0.0 {
                continue;
            }
            let a = self.atom(f)?;
            match elem.iter_mut().find(|(b, _)| *b == a) {
                Some(e) => e.1 += w,
                None => elem.push((a, w)),
            }
        }
        if elem.is_empty() {
            return Ok(None);
        }
        self.basis.push(elem);
        Ok(Some(self.basis.len() - 1))
    }

    fn pointwise_term(&mut self, op: usize, coeff: f64, point: &[f64], tag: usize) -> Result<PointTerm> {
        let rows = self.ops[op]
            .ops
            .clone()
            .into_iter()
            .map(|o| self.point(OperatorFunctional::tagged(o, point.to_vec(), tag)))
            .collect::<Result<_>>()?;
        Ok(PointTerm {
            op,
            coeff,
            rows,
            point: point.to_vec(),
        })
    }

    fn finish(self, kind: ProblemKind) -> Result<RecoveryProblem> {
        if self.basis.is_empty() {
            return input("assembled problem has an empty basis");
        }
        let k_atoms = cross_entries(&self.kernel, &self.atoms, &self.atoms)?;
        let trivial = self.basis.len() == self.atoms.len()
            && self.basis.iter().enumerate().all(|(i, e)| e.as_slice() == [(i, 1.0)]);
        let entries = if trivial {
            k_atoms
        } else {
            let mut b = DMatrix::<f64>::zeros(self.atoms.len(), self.basis.len());
            for (j, elem) in self.basis.iter().enumerate() {
                for &(a, w) in elem {
                    b[(a, j)] += w;
                }
            }
            b.transpose() * k_atoms * b
        };
        let gram = GramMatrix::from_entries(entries, self.opts.nugget)?;
        Ok(RecoveryProblem {
            kernel: self.kernel,
            atoms: self.atoms,
            basis: self.basis,
            gram,
            ops: self.ops,
            constraints: self.constraints,
            kind,
        })
    }
}

/// Collocation problem `F(u)(x_n) = targets_n`.
pub fn assemble_point_problem(
    op: &PointwiseOp,
    points: &[Coord],
    targets: &[f64],
    kernel: &KernelSpec,
) -> Result<RecoveryProblem> {
    assemble_point_problem_with(op, points, targets, kernel, &AssemblyOptions::default())
}

pub fn assemble_point_problem_with(
    op: &PointwiseOp,
    points: &[Coord],
    targets: &[f64],
    kernel: &KernelSpec,
    opts: &AssemblyOptions,
) -> Result<RecoveryProblem> {
    if points.is_empty() {
        return input("point problem needs at least one point");
    }
    if points.len() != targets.len() {
        return input(format!("{} points but {} targets", points.len(), targets.len()));
    }
    let mut b = Builder::new(*kernel, opts)?;
    let id = b.add_op(op);
    for (x, t) in points.iter().zip(targets) {
        let term = b.pointwise_term(id, 1.0, x, 0)?;
        b.constraints.push(Constraint {
            linear: Vec::new(),
            terms: vec![term],
            target: *t,
            tolerance: 0.0,
        });
    }
    b.finish(ProblemKind::Equality)
}

/// Relative size below which a point-approximation weight is dropped.
const NEGLIGIBLE_WEIGHT: f64 = 1e-14;

fn approx_points(m: &MeasurementTarget) -> Result<Vec<(Coord, f64)>> {
    if let TestFamily::DiracPoint { point } = &m.test_fn.family {
        return Ok(vec![(point.clone(), 1.0)]);
    }
    let approx = m
        .point_approx
        .as_ref()
        .ok_or_else(|| Error::Input("measurement lacks a point approximation".into()))?;
    if approx.points.len() != approx.coeffs.len() {
        return input("point approximation has mismatched points and coefficients");
    }
    let scale = approx.coeffs.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    Ok(approx
        .points
        .iter()
        .zip(&approx.coeffs)
        .filter(|(_, c)| c.abs() > NEGLIGIBLE_WEIGHT * scale)
        .map(|(x, c)| (x.clone(), *c))
        .collect())
}

fn check_measurement(m: &MeasurementTarget, kernel: &KernelSpec) -> Result<()> {
    m.test_fn.validate()?;
    if m.test_fn.dim() != kernel.dim {
        return Err(Error::DimensionMismatch {
            expected: kernel.dim,
            got: m.test_fn.dim(),
        });
    }
    if !(m.tolerance >= 0.0) {
        return input(format!("tolerance must be nonnegative, got {}", m.tolerance));
    }
    Ok(())
}

/// `|Σ_m c_mn F(u)(x_mn) − target_n| ≤ ε_n`.
pub fn assemble_relaxed_problem(
    op: &PointwiseOp,
    measurements: &[MeasurementTarget],
    kernel: &KernelSpec,
) -> Result<RecoveryProblem> {
    assemble_relaxed_problem_with(op, measurements, kernel, &AssemblyOptions::default())
}

pub fn assemble_relaxed_problem_with(
    op: &PointwiseOp,
    measurements: &[MeasurementTarget],
    kernel: &KernelSpec,
    opts: &AssemblyOptions,
) -> Result<RecoveryProblem> {
    let domain = match measurements.first() {
        Some(m) => m.test_fn.domain.clone(),
        None => return input("relaxed problem needs at least one measurement"),
    };
    let multi = MultiDomainOp::new(
        domain,
        vec![Subdomain {
            tag: 0,
            region: Region::Interior,
            op: RegionOp::Pointwise(op.clone()),
        }],
    )?;
    assemble_multidomain_problem_with(&multi, measurements, &Quadrature::default(), kernel, opts)
}

/// `|[L u, φ_n] + Σ_m c_mn F̂(u)(x_mn) − target_n| ≤ ε_n` with the linear
/// pairing realized on `quad`.
pub fn assemble_decomposed_problem(
    op: &DecomposedOp,
    measurements: &[MeasurementTarget],
    quad: &Quadrature,
    kernel: &KernelSpec,
) -> Result<RecoveryProblem> {
    assemble_decomposed_problem_with(op, measurements, quad, kernel, &AssemblyOptions::default())
}

pub fn assemble_decomposed_problem_with(
    op: &DecomposedOp,
    measurements: &[MeasurementTarget],
    quad: &Quadrature,
    kernel: &KernelSpec,
    opts: &AssemblyOptions,
) -> Result<RecoveryProblem> {
    let domain = match measurements.first() {
        Some(m) => m.test_fn.domain.clone(),
        None => return input("decomposed problem needs at least one measurement"),
    };
    let multi = MultiDomainOp::new(
        domain,
        vec![Subdomain {
            tag: 0,
            region: Region::Interior,
            op: RegionOp::Decomposed(op.clone()),
        }],
    )?;
    assemble_multidomain_problem_with(&multi, measurements, quad, kernel, opts)
}

pub fn assemble_multidomain_problem(
    op: &MultiDomainOp,
    measurements: &[MeasurementTarget],
    quad: &Quadrature,
    kernel: &KernelSpec,
) -> Result<RecoveryProblem> {
    assemble_multidomain_problem_with(op, measurements, quad, kernel, &AssemblyOptions::default())
}

/// Per-subdomain contributions summed into one constraint per measurement.
/// Interior linear pairings use `quad`; boundary pairings use a
/// Gauss–Legendre rule on `∂Ω`.
pub fn assemble_multidomain_problem_with(
    op: &MultiDomainOp,
    measurements: &[MeasurementTarget],
    quad: &Quadrature,
    kernel: &KernelSpec,
    opts: &AssemblyOptions,
) -> Result<RecoveryProblem> {
    if measurements.is_empty() {
        return input("problem needs at least one measurement");
    }
    let has_interior = op.subdomains.iter().any(|s| s.region == Region::Interior);
    let has_boundary = op.subdomains.iter().any(|s| s.region == Region::Boundary);
    let needs_quad = op
        .subdomains
        .iter()
        .any(|s| s.region == Region::Interior && matches!(s.op, RegionOp::Linear(_) | RegionOp::Decomposed(_)));
    for m in measurements {
        check_measurement(m, kernel)?;
        if m.test_fn.domain != op.domain {
            return input("measurement domain differs from the operator domain");
        }
        let interior_support = match &m.test_fn.family {
            TestFamily::DiracPoint { point } => !op.domain.on_boundary(point),
            _ => true,
        };
        if interior_support && !has_interior {
            return input("measurement supported on the interior, which no subdomain covers");
        }
        if needs_quad && !m.test_fn.is_dirac() && quad.is_empty() {
            return input("linear pairings need a nonempty quadrature");
        }
    }
    let boundary_quad = Quadrature::boundary(&op.domain, opts.boundary_cells)?;
    let mut b = Builder::new(*kernel, opts)?;
    let op_ids: Vec<Option<usize>> = op
        .subdomains
        .iter()
        .map(|s| match &s.op {
            RegionOp::Pointwise(p) => Some(b.add_op(p)),
            RegionOp::Decomposed(d) if !d.nonlinear.is_zero() => Some(b.add_op(&d.nonlinear)),
            _ => None,
        })
        .collect();
    for m in measurements {
        let mut c = Constraint {
            linear: Vec::new(),
            terms: Vec::new(),
            target: m.target,
            tolerance: m.tolerance,
        };
        // a Dirac point on ∂Ω belongs to the boundary subdomain when there is one
        let boundary_dirac = match &m.test_fn.family {
            TestFamily::DiracPoint { point } => has_boundary && op.domain.on_boundary(point),
            _ => false,
        };
        for (sub, id) in op.subdomains.iter().zip(&op_ids) {
            if sub.region == Region::Interior && boundary_dirac {
                continue;
            }
            let (linear, nonlinear) = match &sub.op {
                RegionOp::Pointwise(_) => (None, *id),
                RegionOp::Linear(l) => (Some(l), None),
                RegionOp::Decomposed(d) => (Some(&d.linear), *id),
            };
            if let Some(l) = linear {
                if let Some(i) = linear_pairing(&mut b, l, &m.test_fn, sub, quad, &boundary_quad)? {
                    c.linear.push((i, 1.0));
                }
            }
            if let Some(id) = nonlinear {
                let weights = match sub.region {
                    Region::Interior => approx_points(m)?,
                    Region::Boundary => boundary_weights(&m.test_fn, &boundary_quad),
                };
                for (x, w) in weights {
                    let t = b.pointwise_term(id, w, &x, sub.tag)?;
                    c.terms.push(t);
                }
            }
        }
        b.constraints.push(c);
    }
    b.finish(ProblemKind::Relaxed)
}

fn boundary_weights(phi: &TestFunction, boundary: &Quadrature) -> Vec<(Coord, f64)> {
    match &phi.family {
        TestFamily::DiracPoint { point } => {
            if phi.domain.on_boundary(point) {
                vec![(point.clone(), 1.0)]
            } else {
                Vec::new()
            }
        }
        _ => boundary
            .nodes
            .iter()
            .zip(&boundary.weights)
            .map(|(x, w)| (x.clone(), w * phi.value(x)))
            .filter(|(_, w)| *w != 0.0)
            .collect(),
    }
}

/// Basis element realizing `[L u, φ]` on one subdomain.
fn linear_pairing(
    b: &mut Builder<'_>,
    l: &OperatorTag,
    phi: &TestFunction,
    sub: &Subdomain,
    quad: &Quadrature,
    boundary: &Quadrature,
) -> Result<Option<usize>> {
    let tag = sub.tag;
    if let TestFamily::DiracPoint { point } = &phi.family {
        let on_b = phi.domain.on_boundary(point);
        if sub.region == Region::Boundary && !on_b {
            return Ok(None);
        }
        return b
            .point(OperatorFunctional::tagged(l.clone(), point.clone(), tag))
            .map(Some);
    }
    let terms: Vec<(OperatorFunctional, f64)> = match (sub.region, l) {
        (Region::Interior, OperatorTag::NegLaplacian) => {
            // weak form: ∫ ∇u · ∇φ
            let mut t = Vec::new();
            for (x, w) in quad.nodes.iter().zip(&quad.weights) {
                for (i, g) in phi.gradient(x).into_iter().enumerate() {
                    t.push((
                        OperatorFunctional::tagged(OperatorTag::Gradient { component: i }, x.clone(), tag),
                        w * g,
                    ));
                }
            }
            t
        }
        (Region::Interior, _) => quad
            .nodes
            .iter()
            .zip(&quad.weights)
            .map(|(x, w)| (OperatorFunctional::tagged(l.clone(), x.clone(), tag), w * phi.value(x)))
            .collect(),
        (Region::Boundary, _) => boundary_weights(phi, boundary)
            .into_iter()
            .map(|(x, w)| (OperatorFunctional::tagged(l.clone(), x, tag), w))
            .collect(),
    };
    b.composite(terms)
}

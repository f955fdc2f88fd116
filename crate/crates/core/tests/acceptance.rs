//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line with
//! the measured quantity and the pinned tolerance, then asserts.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use optrec::experiments::{
    self, build_problem, error_metrics, solve_problem, CaseId, Control, Controls, Formulation, MeasurementKind,
    PointLayout, StudyResult, StudySpec,
};
use optrec::kernel::validate::{default_operators, validate_kernel, PairStatus};
use optrec::kernel::{
    rkhs_distance, rkhs_eval, rkhs_norm, KernelFamily, KernelSpec, OperatorFunctional, OperatorTag, RkhsFunction,
};
use optrec::measurements::{approximate_test_function, BoxDomain, MeasurementTarget, Quadrature, TestFunction};
use optrec::problem::{
    assemble_decomposed_problem, assemble_multidomain_problem, assemble_point_problem, assemble_relaxed_problem,
    DecomposedOp, MultiDomainOp, PointwiseOp, RecoveryProblem, Region, RegionOp, Subdomain,
};
use optrec::solvers::{
    kkt_residual, solve_min_norm_equality, solve_min_norm_inequality, RecoverySolution, SolverConfig,
};

const ELL: f64 = 0.2;
const EVAL_GRID: usize = 200;

fn report_line(label: &str, pass: bool, detail: &str, elapsed: Duration, budget_secs: u64) {
    let ok = pass && elapsed <= Duration::from_secs(budget_secs);
    println!(
        "{} {label}: {detail} [{:.2}s of {budget_secs}s]",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
}

fn verdict(label: &str, pass: bool, detail: String, elapsed: Duration, budget_secs: u64) {
    let in_time = elapsed <= Duration::from_secs(budget_secs);
    report_line(label, pass, &detail, elapsed, budget_secs);
    assert!(pass, "{label}: {detail}");
    assert!(in_time, "{label}: took {elapsed:?}");
}

fn equality_solver() -> SolverConfig {
    // N = 40 reaches an equality violation near 1e-7 before roundoff takes over
    SolverConfig {
        tol_constraint: 1e-6,
        ..SolverConfig::default()
    }
}

fn vary_n_study() -> StudyResult {
    let mut spec = StudySpec::new(CaseId::CubicDirichlet1d, Control::N, vec![5.0, 10.0, 20.0, 40.0]);
    spec.solver = equality_solver();
    experiments::run(&spec).unwrap()
}

fn vary_mu_study() -> StudyResult {
    let mut spec = StudySpec::new(CaseId::CubicDirichlet1d, Control::Mu, vec![1e2, 1e4, 1e6, 1e8]);
    spec.fixed.n = 10;
    experiments::run(&spec).unwrap()
}

fn vary_m_study() -> StudyResult {
    let mut spec = StudySpec::new(CaseId::CubicDirichlet1d, Control::M, vec![8.0, 16.0, 32.0, 64.0]);
    spec.fixed.n = 5;
    spec.fixed.reference_m = Some(256);
    experiments::run(&spec).unwrap()
}

fn non_increasing(v: &[f64], slack: f64) -> bool {
    v.windows(2).all(|w| w[1] <= w[0] + slack)
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.2e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn column(result: &StudyResult, f: impl Fn(&experiments::StudyRow) -> f64) -> Vec<f64> {
    result.rows.iter().map(f).collect()
}

// ---------------------------------------------------------------------------
// independent Gaussian kernel closed forms in 1D, k = exp(−d²/(2ℓ²))

fn gauss_1d(op_x: &OperatorTag, op_y: &OperatorTag, x: f64, y: f64) -> f64 {
    let s = ELL * ELL;
    let d = x - y;
    let k = (-d * d / (2.0 * s)).exp();
    let neg_second = (1.0 / s - d * d / (s * s)) * k;
    match (op_x, op_y) {
        (OperatorTag::Identity, OperatorTag::Identity) => k,
        (OperatorTag::Identity, OperatorTag::NegLaplacian) | (OperatorTag::NegLaplacian, OperatorTag::Identity) => {
            neg_second
        }
        (OperatorTag::NegLaplacian, OperatorTag::NegLaplacian) => {
            (3.0 / (s * s) - 6.0 * d * d / (s * s * s) + d.powi(4) / s.powi(4)) * k
        }
        other => panic!("no oracle for {other:?}"),
    }
}

/// Direct LU solve of the linear collocation system `K λ = y` over the atoms.
fn linear_oracle(atoms: &[OperatorFunctional], rhs: impl Fn(&OperatorFunctional) -> f64) -> DVector<f64> {
    let n = atoms.len();
    let k = DMatrix::from_fn(n, n, |i, j| {
        gauss_1d(&atoms[i].op, &atoms[j].op, atoms[i].point[0], atoms[j].point[0])
    });
    let y = DVector::from_iterator(n, atoms.iter().map(rhs));
    k.lu().solve(&y).expect("oracle system is nonsingular")
}

fn oracle_condition(atoms: &[OperatorFunctional]) -> f64 {
    let n = atoms.len();
    let k = DMatrix::from_fn(n, n, |i, j| {
        gauss_1d(&atoms[i].op, &atoms[j].op, atoms[i].point[0], atoms[j].point[0])
    });
    let sv = k.singular_values();
    sv.max() / sv.min().max(f64::MIN_POSITIVE)
}

fn oracle_value(atoms: &[OperatorFunctional], lambda: &DVector<f64>, x: f64) -> f64 {
    atoms
        .iter()
        .zip(lambda.iter())
        .map(|(a, l)| l * gauss_1d(&OperatorTag::Identity, &a.op, x, a.point[0]))
        .sum()
}

/// Midpoint-rule L2 error on `[0, 1]`.
fn l2_error(u: impl Fn(f64) -> f64, exact: impl Fn(f64) -> f64, cells: usize) -> f64 {
    let h = 1.0 / cells as f64;
    ((0..cells)
        .map(|i| {
            let x = (i as f64 + 0.5) * h;
            (u(x) - exact(x)).powi(2)
        })
        .sum::<f64>()
        * h)
        .sqrt()
}

// ---------------------------------------------------------------------------
// second-order finite differences with Newton and the Thomas algorithm for
// −u'' + u³ = f, u(0) = u(1) = 0

fn fd_cubic(f: impl Fn(f64) -> f64, cells: usize) -> Vec<f64> {
    let h = 1.0 / cells as f64;
    let n = cells - 1;
    let x: Vec<f64> = (1..=n).map(|i| i as f64 * h).collect();
    let fx: Vec<f64> = x.iter().map(|&t| f(t)).collect();
    let mut u = vec![0.0; n];
    let inv_h2 = 1.0 / (h * h);
    for _ in 0..50 {
        let at = |u: &[f64], i: isize| if i < 0 || i as usize >= n { 0.0 } else { u[i as usize] };
        let g: Vec<f64> = (0..n)
            .map(|i| {
                let j = i as isize;
                (2.0 * u[i] - at(&u, j - 1) - at(&u, j + 1)) * inv_h2 + u[i].powi(3) - fx[i]
            })
            .collect();
        let diag: Vec<f64> = u.iter().map(|v| 2.0 * inv_h2 + 3.0 * v * v).collect();
        let off = -inv_h2;
        // forward sweep
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        c[0] = off / diag[0];
        d[0] = -g[0] / diag[0];
        for i in 1..n {
            let m = diag[i] - off * c[i - 1];
            c[i] = off / m;
            d[i] = (-g[i] - off * d[i - 1]) / m;
        }
        let mut step = vec![0.0; n];
        step[n - 1] = d[n - 1];
        for i in (0..n - 1).rev() {
            step[i] = d[i] - c[i] * step[i + 1];
        }
        let size = step.iter().fold(0.0f64, |a, s| a.max(s.abs()));
        for (ui, si) in u.iter_mut().zip(&step) {
            *ui += si;
        }
        if size < 1e-14 {
            break;
        }
    }
    let mut full = vec![0.0];
    full.extend(u);
    full.push(0.0);
    full
}

fn fd_l2(u: &[f64], v: impl Fn(f64) -> f64) -> f64 {
    let cells = u.len() - 1;
    let h = 1.0 / cells as f64;
    (u.iter()
        .enumerate()
        .map(|(i, ui)| (ui - v(i as f64 * h)).powi(2))
        .sum::<f64>()
        * h)
        .sqrt()
}

// ---------------------------------------------------------------------------

#[test]
fn kernel_derivatives_match_finite_differences() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    let mut unsupported = 0;
    for family in [KernelFamily::Gaussian, KernelFamily::InverseMultiquadric] {
        for dim in [1, 2] {
            let spec = KernelSpec::new(family, 0.4, 1.3, dim).unwrap();
            for c in validate_kernel(&spec, &default_operators(dim), 100, 17) {
                match c.status {
                    PairStatus::Pass => worst = worst.max(c.max_rel_error),
                    PairStatus::Fail => failures.push(format!("{} d={dim} {}x{}", family.name(), c.left, c.right)),
                    PairStatus::Unsupported => unsupported += 1,
                }
            }
        }
    }
    verdict(
        "kernel derivative suite",
        failures.is_empty(),
        format!("worst rel err {worst:.2e} <= 1e-5, {unsupported} unsupported, failing {failures:?}"),
        start.elapsed(),
        10,
    );
}

#[test]
fn linear_solve_matches_direct_representer_solution() {
    let start = Instant::now();
    let case = CaseId::LinearPoisson1d.build().unwrap();
    let kernel = KernelSpec::gaussian(ELL, 1).unwrap();
    let mut coeff_diff = Vec::new();
    let mut conds = Vec::new();
    let mut worst_l2: f64 = 0.0;
    for n in [5, 10, 20] {
        let controls = Controls {
            n,
            ..Controls::default()
        };
        let cp = build_problem(&case, Formulation::NorPoints, &controls, &kernel, 0, false).unwrap();
        let sol = solve_problem(&cp, &SolverConfig::default()).unwrap();
        assert!(sol.report.converged);
        let atoms = cp.problem.atoms();
        let oracle = linear_oracle(atoms, |a| match a.op {
            OperatorTag::NegLaplacian => PI * PI * (PI * a.point[0]).sin(),
            _ => 0.0,
        });
        let got = DVector::from_column_slice(&sol.function.coeffs);
        coeff_diff.push((&got - &oracle).norm() / oracle.norm());
        conds.push(oracle_condition(atoms));
        let (l2, _) = error_metrics(&sol.function, case.u_star.as_ref(), &case.domain, EVAL_GRID).unwrap();
        let l2_oracle = l2_error(|x| oracle_value(atoms, &oracle, x), |x| (PI * x).sin(), EVAL_GRID);
        worst_l2 = worst_l2.max((l2 - l2_oracle).abs());
    }
    let detail = format!(
        "coeff rel diff {} <= 1e-8 (cond K {}), L2 diff {worst_l2:.2e} <= 1e-8",
        sci(&coeff_diff),
        sci(&conds)
    );
    let full = coeff_diff.iter().all(|d| *d <= 1e-8) && worst_l2 <= 1e-8;
    // coefficients are only determined where K is numerically nonsingular
    let determined = coeff_diff
        .iter()
        .zip(&conds)
        .filter(|(_, c)| **c < 1e12)
        .all(|(d, _)| *d <= 1e-8);
    let elapsed = start.elapsed();
    report_line("linear oracle equivalence", full, &detail, elapsed, 5);
    assert!(determined && worst_l2 <= 1e-8, "{detail}");
    assert!(elapsed <= Duration::from_secs(5));
}

#[test]
fn norm_ordering() {
    let start = Instant::now();
    let kernel = KernelSpec::gaussian(ELL, 1).unwrap();
    let op = PointwiseOp::cubic_reaction();
    let mut worst_gap = f64::NEG_INFINITY;
    for seed in 0..6u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<OperatorFunctional> = (0..6)
            .map(|_| OperatorFunctional::new(OperatorTag::Identity, vec![rng.gen_range(0.0..1.0)]))
            .collect();
        let coeffs: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u_ref = RkhsFunction::new(kernel, centers, coeffs).unwrap();
        let n = 5 + 5 * (seed as usize % 3);
        let points: Vec<Vec<f64>> = (0..n).map(|i| vec![(i as f64 + 0.5) / n as f64]).collect();
        let targets: Vec<f64> = points
            .iter()
            .map(|x| {
                let lap = rkhs_eval(&u_ref, &OperatorTag::NegLaplacian, x).unwrap();
                let v = rkhs_eval(&u_ref, &OperatorTag::Identity, x).unwrap();
                lap + v.powi(3)
            })
            .collect();
        let problem = assemble_point_problem(&op, &points, &targets, &kernel).unwrap();
        let sol = solve_min_norm_equality(&problem, &SolverConfig::default()).unwrap();
        assert!(sol.report.converged, "seed {seed}: {}", sol.report.message);
        worst_gap = worst_gap.max(sol.report.objective - rkhs_norm(&u_ref));
    }
    let study = vary_mu_study();
    let nor = study.reference_norm.unwrap();
    let norms = column(&study, |r| r.norm);
    let reg_ok = norms.iter().all(|n| *n <= nor + 1e-8);
    let monotone = norms.windows(2).all(|w| w[0] <= w[1] + 1e-12);
    verdict(
        "norm ordering",
        worst_gap <= 1e-8 && reg_ok && monotone,
        format!(
            "max(‖u_N‖ − ‖u_ref‖) = {worst_gap:.2e} <= 1e-8; regularized norms {norms:.6?} <= {nor:.6} + 1e-8, nondecreasing {monotone}"
        ),
        start.elapsed(),
        30,
    );
}

#[test]
fn dirichlet_error_decreases_with_n() {
    let start = Instant::now();
    let study = vary_n_study();
    let l2 = column(&study, |r| r.l2);
    let converged = study.all_converged();
    let trend = non_increasing(&l2, 0.0) && l2[3] * 10.0 <= l2[0];

    let exact = |x: f64| (PI * x).sin();
    let forcing = |x: f64| PI * PI * (PI * x).sin() + (PI * x).sin().powi(3);
    let case = CaseId::CubicDirichlet1d.build().unwrap();
    let forcing_gap = (0..50)
        .map(|i| {
            let x = (i as f64 + 0.5) / 50.0;
            (case.f.value(&[x]) - forcing(x)).abs()
        })
        .fold(0.0f64, f64::max);
    let fd = fd_cubic(forcing, 10_000);
    let fd_floor = fd_l2(&fd, exact);

    let mut fd_errors = Vec::new();
    for n in [5, 10, 20, 40] {
        let controls = Controls {
            n,
            ..Controls::default()
        };
        let cp = build_problem(
            &case,
            Formulation::NorPoints,
            &controls,
            &case.id.default_kernel(),
            0,
            false,
        )
        .unwrap();
        let sol = solve_problem(&cp, &equality_solver()).unwrap();
        let u = |x: f64| rkhs_eval(&sol.function, &OperatorTag::Identity, &[x]).unwrap();
        let cells = fd.len() - 1;
        let h = 1.0 / cells as f64;
        let err = (fd
            .iter()
            .enumerate()
            .step_by(10)
            .map(|(i, v)| (u(i as f64 * h) - v).powi(2))
            .sum::<f64>()
            * h
            * 10.0)
            .sqrt();
        fd_errors.push(err);
    }
    let fd_trend = non_increasing(&fd_errors, 2.0 * fd_floor) && fd_errors[3] * 10.0 <= fd_errors[0];
    verdict(
        "Dirichlet error trend in N",
        converged && trend && fd_trend && fd_floor <= 1e-7 && forcing_gap <= 1e-10,
        format!(
            "L2 {} non-increasing, last/first = {:.1e} <= 0.1; vs FD {} (FD vs exact {fd_floor:.1e} <= 1e-7); all converged {converged}",
            sci(&l2),
            l2[3] / l2[0],
            sci(&fd_errors)
        ),
        start.elapsed(),
        60,
    );
}

#[test]
fn regularized_solution_approaches_equality_solution() {
    let start = Instant::now();
    let study = vary_mu_study();
    let dist = column(&study, |r| r.reference_distance.unwrap());
    let nor = study.reference_norm.unwrap();
    let bound = 1e-4 * (1.0 + nor);
    let ok = study.all_converged() && non_increasing(&dist, 0.0) && dist[3] <= bound;
    verdict(
        "regularized convergence in mu",
        ok,
        format!("‖u_mu − u_N‖ = {} non-increasing, final <= {bound:.2e}", sci(&dist)),
        start.elapsed(),
        30,
    );
}

#[test]
fn relaxed_solution_approaches_reference_with_m() {
    let start = Instant::now();
    let study = vary_m_study();
    let eps = column(&study, |r| r.max_tolerance);
    let dist = column(&study, |r| r.reference_distance.unwrap());
    let feasible = study.rows.iter().all(|r| r.converged && r.violation <= 1e-8);
    let eps_strict = eps.windows(2).all(|w| w[1] < w[0]);
    verdict(
        "relaxed convergence in M",
        feasible && eps_strict && non_increasing(&dist, 0.0),
        format!(
            "eps {} strictly decreasing, distance {} non-increasing, all feasible {feasible}",
            sci(&eps),
            sci(&dist)
        ),
        start.elapsed(),
        60,
    );
}

fn structurally_equal(a: &RecoveryProblem, b: &RecoveryProblem) -> bool {
    a.atoms() == b.atoms()
        && a.len() == b.len()
        && (0..a.len()).all(|i| a.basis_element(i) == b.basis_element(i))
        && a.constraints() == b.constraints()
        && a.gram().entries() == b.gram().entries()
        && a.kind() == b.kind()
}

#[test]
fn collapse_identities() {
    let start = Instant::now();
    let case = CaseId::CubicDirichlet1d.build().unwrap();
    let kernel = case.id.default_kernel();

    // zero tolerances: inequality solver versus aggregated equality solver
    let controls = Controls {
        n: 5,
        ..Controls::default()
    };
    let cp = build_problem(&case, Formulation::Relaxed, &controls, &kernel, 0, false).unwrap();
    let zero = cp
        .problem
        .with_tolerances(&vec![0.0; cp.problem.num_constraints()])
        .unwrap();
    let relaxed = solve_min_norm_inequality(&zero, &SolverConfig::default()).unwrap();
    let equality = solve_min_norm_equality(&cp.problem.to_equality(), &SolverConfig::default()).unwrap();
    let collapse = rkhs_distance(&relaxed.function, &equality.function).unwrap();

    // one subdomain: multi-domain assembly versus the direct assemblies
    let domain = BoxDomain::unit(1);
    let ms: Vec<MeasurementTarget> = (1..=4)
        .map(|k| {
            let phi = TestFunction::fourier_sine(domain.clone(), vec![k]).unwrap();
            MeasurementTarget {
                point_approx: Some(approximate_test_function(&phi, 12).unwrap()),
                test_fn: phi,
                target: 0.3 * k as f64,
                tolerance: 0.01,
            }
        })
        .collect();
    let op = PointwiseOp::cubic_reaction();
    let single = |op: RegionOp| {
        MultiDomainOp::new(
            domain.clone(),
            vec![Subdomain {
                tag: 0,
                region: Region::Interior,
                op,
            }],
        )
        .unwrap()
    };
    let direct = assemble_relaxed_problem(&op, &ms, &kernel).unwrap();
    let multi =
        assemble_multidomain_problem(&single(RegionOp::Pointwise(op)), &ms, &Quadrature::default(), &kernel).unwrap();
    let decomposition = DecomposedOp {
        linear: OperatorTag::NegLaplacian,
        nonlinear: PointwiseOp::cube(),
    };
    let quad = Quadrature::over_domain(&domain, 8).unwrap();
    let direct_dec = assemble_decomposed_problem(&decomposition, &ms, &quad, &kernel).unwrap();
    let multi_dec =
        assemble_multidomain_problem(&single(RegionOp::Decomposed(decomposition)), &ms, &quad, &kernel).unwrap();
    let structural = structurally_equal(&direct, &multi) && structurally_equal(&direct_dec, &multi_dec);

    // Dirac approximation is the point itself with zero dual error
    let dirac = TestFunction::dirac(domain.clone(), vec![0.37]).unwrap();
    let approx = approximate_test_function(&dirac, 16).unwrap();
    let dirac_exact =
        approx.points == vec![vec![0.37]] && approx.coeffs == vec![1.0] && approx.dual_error_estimate == 0.0;
    let dirac_controls = Controls {
        n: 10,
        measurement: MeasurementKind::Dirac,
        ..Controls::default()
    };
    let weak = build_problem(&case, Formulation::Decomposed, &dirac_controls, &kernel, 0, false).unwrap();
    let strong = build_problem(&case, Formulation::NorPoints, &dirac_controls, &kernel, 0, false).unwrap();
    let weak_sol = solve_problem(&weak, &SolverConfig::default()).unwrap();
    let strong_sol = solve_problem(&strong, &SolverConfig::default()).unwrap();
    let dirac_gap = rkhs_distance(&weak_sol.function, &strong_sol.function).unwrap();

    let ok = relaxed.report.converged
        && equality.report.converged
        && collapse <= 1e-6
        && structural
        && dirac_exact
        && dirac_gap <= 1e-6;
    verdict(
        "collapse identities",
        ok,
        format!(
            "eps=0 distance {collapse:.2e} <= 1e-6; single-subdomain assembly identical {structural}; Dirac approximation exact {dirac_exact}, Dirac weak vs strong distance {dirac_gap:.2e} <= 1e-6"
        ),
        start.elapsed(),
        10,
    );
}

fn perturbed(sol: &RecoverySolution, size: f64) -> RecoverySolution {
    let mut out = sol.clone();
    for (i, c) in out.coeffs.iter_mut().enumerate() {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        *c += sign * size * (1.0 + c.abs());
    }
    out
}

#[test]
fn kkt_certificates() {
    let start = Instant::now();
    let mut worst_stat: f64 = 0.0;
    let mut worst_feas: f64 = 0.0;
    let mut count = 0;
    let mut perturbation_ok = true;
    let mut check = |problem: &RecoveryProblem, sol: &RecoverySolution, cfg: &SolverConfig| {
        if !sol.report.converged {
            return;
        }
        let kkt = kkt_residual(problem, sol).unwrap();
        worst_stat = worst_stat.max(kkt.stationarity / cfg.tol_stationarity);
        worst_feas = worst_feas.max(kkt.feasibility / cfg.tol_constraint);
        let moved = kkt_residual(problem, &perturbed(sol, 1e-2)).unwrap();
        perturbation_ok &= moved.stationarity > kkt.stationarity;
        count += 1;
    };

    let default = SolverConfig::default();
    let linear = CaseId::LinearPoisson1d.build().unwrap();
    let cubic = CaseId::CubicDirichlet1d.build().unwrap();
    let kernel = KernelSpec::gaussian(ELL, 1).unwrap();
    for n in [5, 10, 20] {
        let c = Controls {
            n,
            ..Controls::default()
        };
        let cp = build_problem(&linear, Formulation::NorPoints, &c, &kernel, 0, false).unwrap();
        check(&cp.problem, &solve_problem(&cp, &default).unwrap(), &default);
    }
    let eq = equality_solver();
    for n in [5, 10, 20, 40] {
        let c = Controls {
            n,
            ..Controls::default()
        };
        let cp = build_problem(&cubic, Formulation::NorPoints, &c, &kernel, 0, false).unwrap();
        check(&cp.problem, &solve_problem(&cp, &eq).unwrap(), &eq);
    }
    for mu in [1e2, 1e4, 1e6, 1e8] {
        let c = Controls {
            n: 10,
            mu,
            ..Controls::default()
        };
        let cp = build_problem(&cubic, Formulation::Regularized, &c, &kernel, 0, false).unwrap();
        check(&cp.problem, &solve_problem(&cp, &default).unwrap(), &default);
    }
    for m in [8, 16, 32, 64] {
        let c = Controls {
            n: 5,
            m,
            ..Controls::default()
        };
        let cp = build_problem(&cubic, Formulation::Relaxed, &c, &kernel, 0, false).unwrap();
        check(&cp.problem, &solve_problem(&cp, &default).unwrap(), &default);
    }
    let stat_ok = worst_stat <= 1.0;
    let feas_ok = worst_feas <= 1.0;
    verdict(
        "KKT certification",
        count == 15 && stat_ok && feas_ok && perturbation_ok,
        format!(
            "{count}/15 converged; max stationarity/tol {worst_stat:.2e} <= 1, max feasibility/tol {worst_feas:.2e} <= 1; 1e-2 perturbation raises stationarity {perturbation_ok}"
        ),
        start.elapsed(),
        30,
    );
}

#[test]
fn robin_case_tracks_dirichlet_case() {
    let start = Instant::now();
    let robin = CaseId::CubicRobin1d.build().unwrap();
    let dirichlet = CaseId::CubicDecomposed1d.build().unwrap();
    let kernel = KernelSpec::gaussian(ELL, 1).unwrap();
    let mut ratios = Vec::new();
    let mut all_converged = true;
    for n in [5, 10, 20] {
        let c = Controls {
            n,
            ..Controls::default()
        };
        let r = build_problem(&robin, Formulation::MultiDomain, &c, &kernel, 0, false).unwrap();
        let d = build_problem(&dirichlet, Formulation::Decomposed, &c, &kernel, 0, false).unwrap();
        let rs = solve_problem(&r, &SolverConfig::default()).unwrap();
        let ds = solve_problem(&d, &SolverConfig::default()).unwrap();
        all_converged &= rs.report.converged && ds.report.converged;
        let (re, _) = error_metrics(&rs.function, robin.u_star.as_ref(), &robin.domain, EVAL_GRID).unwrap();
        let (de, _) = error_metrics(&ds.function, dirichlet.u_star.as_ref(), &dirichlet.domain, EVAL_GRID).unwrap();
        ratios.push(re / de);
    }
    let in_band = ratios.iter().all(|r| (0.1..=10.0).contains(r));
    verdict(
        "Robin versus Dirichlet",
        all_converged && in_band,
        format!("L2 ratio Robin/Dirichlet at N = 5, 10, 20: {ratios:.2?} within [0.1, 10]"),
        start.elapsed(),
        30,
    );
}

#[test]
fn studies_are_bit_reproducible() {
    let start = Instant::now();
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let random_layout = || {
        let mut spec = StudySpec::new(CaseId::CubicDirichlet1d, Control::N, vec![6.0, 12.0, 24.0]);
        spec.fixed.layout = PointLayout::Random;
        spec.solver.seed = 5;
        experiments::run(&spec).unwrap().to_csv()
    };
    let all = || {
        [
            vary_n_study().to_csv(),
            vary_mu_study().to_csv(),
            vary_m_study().to_csv(),
            random_layout(),
        ]
    };
    let first = pool(1).install(all);
    let second = pool(4).install(all);
    let identical = first == second;
    verdict(
        "determinism",
        identical,
        format!(
            "{} study CSVs byte-identical across 1 and 4 threads: {identical}",
            first.len()
        ),
        start.elapsed(),
        60,
    );
}

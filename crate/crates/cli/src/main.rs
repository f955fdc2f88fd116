//! `optrec`: solve kernel recovery problems, run convergence studies and
//! check kernel derivatives from a JSON config.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use optrec::config::{ConfigError, RunConfig};
use optrec::experiments::{self, build_custom_problem, build_problem, error_metrics, solve_problem};
use optrec::kernel::validate::{default_operators, validate_pairs, PairStatus, DEFAULT_TOLERANCE};
use optrec::kernel::{apply_operators, rkhs_norm, OperatorTag};
use optrec::solvers::kkt_residual;
use optrec::Error;

#[derive(Parser)]
#[command(name = "optrec", version, about = "Kernel optimal recovery for nonlinear equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Path to the JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed overriding `solver.seed` and `validation.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for studies.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, hide = true)]
    corrupt_derivative: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem and write `solution.json`.
    Solve,
    /// Run a parameter sweep and write `study.csv` and `study.json`.
    Study,
    /// Compare closed-form kernel derivatives against finite differences.
    ValidateKernel,
    /// Print the config JSON schema.
    Schema,
}

enum Failure {
    Input(String),
    Numerical(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Input(format!("config error at {e}"))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Conditioning { .. } | Error::NotConverged(_) => Failure::Numerical(e.to_string()),
            other => Failure::Input(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<bool, Failure> {
    if let Command::Schema = cli.command {
        println!("{}", RunConfig::schema());
        return Ok(true);
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Input("--config <path> is required".into()))?;
    let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(seed) = cli.seed {
        cfg.solver.seed = seed;
        cfg.validation.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.to_string_lossy().into_owned();
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Input("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Input(e.to_string()))?;
    }
    match cli.command {
        Command::Solve => cmd_solve(&cfg),
        Command::Study => cmd_study(&cfg),
        Command::ValidateKernel => cmd_validate_kernel(&cfg, cli.corrupt_derivative),
        Command::Schema => unreachable!(),
    }
}

/// Write through a temporary file in the target directory so readers never
/// see a partial file.
fn write_atomic(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, Failure> {
    let io = |e: std::io::Error| Failure::Input(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents.as_bytes()).map_err(io)?;
    tmp.flush().map_err(io)?;
    let target = dir.join(name);
    tmp.persist(&target).map_err(|e| io(e.error))?;
    Ok(target)
}

/// Config with every default resolved, suitable for embedding.
fn effective(cfg: &RunConfig) -> Result<RunConfig, Failure> {
    let mut out = cfg.clone();
    if cfg.case.is_some() {
        out.formulation = Some(cfg.effective_formulation()?);
    }
    let kernel = cfg.kernel_spec()?;
    out.kernel.lengthscale = Some(kernel.lengthscale);
    out.kernel.dim = Some(kernel.dim);
    Ok(out)
}

fn cmd_solve(cfg: &RunConfig) -> Result<bool, Failure> {
    let case_id = cfg.require_case()?;
    let case = case_id.build()?;
    let formulation = cfg.effective_formulation()?;
    let kernel = cfg.kernel_spec()?;
    let cp = match &cfg.measurements {
        Some(ms) => build_custom_problem(&case, formulation, ms, &cfg.controls, &kernel)?,
        None => build_problem(&case, formulation, &cfg.controls, &kernel, cfg.solver.seed, false)?,
    };
    let solution = solve_problem(&cp, &cfg.solver)?;
    let (l2, linf) = error_metrics(&solution.function, case.u_star.as_ref(), &case.domain, cfg.eval_grid)?;
    let kkt = kkt_residual(&cp.problem, &solution)?;
    let basis: Vec<_> = (0..cp.problem.len())
        .map(|i| cp.problem.basis_element(i).to_vec())
        .collect();
    let converged = solution.report.converged;
    let doc = json!({
        "config": effective(cfg)?,
        "converged": converged,
        "atoms": cp.problem.atoms(),
        "basis": basis,
        "coeffs": solution.coeffs,
        "multipliers": solution.multipliers,
        "function": solution.function,
        "report": solution.report,
        "metrics": { "l2": l2, "linf": linf, "norm": rkhs_norm(&solution.function) },
        "kkt": kkt,
    });
    let text = serde_json::to_string_pretty(&doc).expect("solution serializes");
    let path = write_atomic(Path::new(&cfg.output.dir), "solution.json", &text)?;
    println!(
        "{} {}: converged={} iters={} L2={:e} Linf={:e} violation={:e} stationarity={:e}",
        case_id.name(),
        path.display(),
        converged,
        solution.report.iters,
        l2,
        linf,
        solution.report.final_constraint_violation,
        solution.report.final_stationarity
    );
    if !converged {
        eprintln!("solver did not converge: {}", solution.report.message);
    }
    Ok(converged)
}

fn cmd_study(cfg: &RunConfig) -> Result<bool, Failure> {
    let spec = cfg.study_spec()?;
    let result = experiments::run(&spec)?;
    let dir = Path::new(&cfg.output.dir);
    let csv = result.to_csv();
    let doc = json!({ "config": effective(cfg)?, "result": result });
    write_atomic(
        dir,
        "study.json",
        &serde_json::to_string_pretty(&doc).expect("study serializes"),
    )?;
    write_atomic(dir, "study.csv", &csv)?;
    print!("{csv}");
    let ok = result.all_converged();
    if !ok {
        let failed: Vec<String> = result
            .rows
            .iter()
            .filter(|r| !r.converged)
            .map(|r| format!("{:e}", r.control))
            .collect();
        eprintln!("rows not converged at {}", failed.join(", "));
    }
    Ok(ok)
}

fn cmd_validate_kernel(cfg: &RunConfig, corrupt: bool) -> Result<bool, Failure> {
    let spec = cfg.kernel_spec()?;
    let ops = default_operators(spec.dim);
    let checks = validate_pairs(
        &spec,
        &ops,
        cfg.validation.trials,
        cfg.validation.seed,
        DEFAULT_TOLERANCE,
        |s, l, r, x, y| {
            let v = apply_operators(s, l, r, x, y)?;
            let hit = corrupt && *l == OperatorTag::NegLaplacian && *r == OperatorTag::NegLaplacian;
            Ok(if hit { v * 1.01 } else { v })
        },
    );
    println!(
        "{} lengthscale={} amplitude={} dim={}",
        spec.family.name(),
        spec.lengthscale,
        spec.amplitude,
        spec.dim
    );
    println!("{:<18} {:<18} {:>12}  status", "left", "right", "max_rel_err");
    let mut ok = true;
    for c in &checks {
        let status = match c.status {
            PairStatus::Pass => "pass",
            PairStatus::Fail => {
                ok = false;
                "FAIL"
            }
            PairStatus::Unsupported => "unsupported",
        };
        println!("{:<18} {:<18} {:>12.3e}  {status}", c.left, c.right, c.max_rel_error);
    }
    Ok(ok)
}

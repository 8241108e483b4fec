//! Argument model and subcommands of the `madapt` command-line tool.

use clap::{Args, Parser, Subcommand};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use multiadaptive::bench::{
    convergence_study, cost_case, cost_comparison, run_benchmark, scaling_study, write_run_outputs,
    CostComparison, RunReport, COST_PROBLEMS, HIRES_ORACLE_STEPS, SCALING_LARGE_STEP, SCALING_ORACLE_STEPS,
    SCALING_SMALL_STEP,
};
use multiadaptive::controller::{adaptive_solve, ControllerConfig, Status};
use multiadaptive::dual::{dual_steps_for, solve_dual, stability_factors, write_dual_csv, DualData};
use multiadaptive::problems::{problem_by_name, ProblemParams};
use multiadaptive::solver::Ordering;
use multiadaptive::{Error, EvalCounter, Method, MethodKind, OdeProblem};

#[derive(Debug, Parser)]
#[command(name = "madapt", version, about = "Multi-adaptive Galerkin (mcG(q) / mdG(q)) ODE solvers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Adaptive solve of one problem; writes the report, step trace and solution.
    Run(RunArgs),
    /// Stiff cost benchmarks against the nonstiff reference, or the mass-spring scaling study.
    Bench(BenchArgs),
    /// Fitted end-point convergence order on uniform steps.
    Converge(ConvergeArgs),
    /// Dual solution and stability factors for an adaptive primal solution.
    Dual(DualArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ProblemArgs {
    /// test-equation, test-system, hires, heat1d, mass-spring or reaction-diffusion.
    #[arg(long)]
    pub problem: String,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Decay rates of the test system, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub rates: Option<Vec<f64>>,
    /// Mesh size of the heat problem.
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub n_masses: Option<usize>,
    #[arg(long)]
    pub small_mass: Option<f64>,
    #[arg(long)]
    pub stiffness: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub n_cells: Option<usize>,
    #[arg(long)]
    pub x0: Option<f64>,
    #[arg(long)]
    pub t_final: Option<f64>,
}

impl ProblemArgs {
    pub fn build(&self) -> multiadaptive::Result<OdeProblem> {
        let params = ProblemParams {
            lambda: self.lambda,
            rates: self.rates.clone(),
            h: self.h,
            n_masses: self.n_masses,
            small_mass: self.small_mass,
            stiffness: self.stiffness,
            epsilon: self.epsilon,
            n_cells: self.n_cells,
            x0: self.x0,
            t_final: self.t_final,
        };
        problem_by_name(&self.problem, &params)
    }
}

#[derive(Debug, Clone, Args)]
pub struct MethodArgs {
    /// mcg or mdg.
    #[arg(long, default_value = "mcg")]
    pub method: MethodKind,
    #[arg(long, default_value_t = 1)]
    pub q: usize,
}

impl MethodArgs {
    pub fn build(&self) -> multiadaptive::Result<Method> {
        let method = Method { kind: self.method, q: self.q };
        method.validate()?;
        Ok(method)
    }
}

/// Controller and iteration constants; unset flags keep the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ControllerArgs {
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub kp: Option<f64>,
    #[arg(long)]
    pub ki: Option<f64>,
    #[arg(long)]
    pub kd: Option<f64>,
    #[arg(long)]
    pub max_growth: Option<f64>,
    #[arg(long)]
    pub k_floor: Option<f64>,
    #[arg(long)]
    pub k_ceil: Option<f64>,
    #[arg(long)]
    pub k_init: Option<f64>,
    /// Interpolation constant C of the estimate.
    #[arg(long)]
    pub interpolation_constant: Option<f64>,
    #[arg(long)]
    pub max_outer: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub fixpoint_factor: Option<f64>,
    #[arg(long)]
    pub reject_factor: Option<f64>,
    #[arg(long)]
    pub max_rejections: Option<usize>,
    /// One primal pass with unit stability factors, no dual problems.
    #[arg(long)]
    pub no_dual: bool,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Target k * rate of the damping steps.
    #[arg(long)]
    pub damping: Option<f64>,
    #[arg(long)]
    pub no_stabilize: bool,
    #[arg(long)]
    pub max_cycles: Option<usize>,
    /// gauss-seidel or levels.
    #[arg(long, value_parser = parse_ordering)]
    pub ordering: Option<Ordering>,
}

fn parse_ordering(s: &str) -> Result<Ordering, String> {
    match s {
        "gauss-seidel" => Ok(Ordering::GaussSeidel),
        "levels" => Ok(Ordering::Levels),
        other => Err(format!("unknown ordering `{other}` (expected gauss-seidel or levels)")),
    }
}

impl ControllerArgs {
    /// Applies the flags on top of `base` and validates the result.
    pub fn apply(&self, base: ControllerConfig) -> multiadaptive::Result<ControllerConfig> {
        let mut c = base;
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = self.$field { c.$field = v; } )* };
        }
        set!(tol, kp, ki, kd, max_growth, interpolation_constant, max_outer, seed, fixpoint_factor, reject_factor, max_rejections);
        c.k_floor = self.k_floor.or(c.k_floor);
        c.k_ceil = self.k_ceil.or(c.k_ceil);
        c.k_init = self.k_init.or(c.k_init);
        if self.no_dual {
            c.use_dual = false;
        }
        if let Some(v) = self.max_iter {
            c.iteration.max_iter = v;
        }
        if let Some(v) = self.damping {
            c.iteration.damping = v;
        }
        if self.no_stabilize {
            c.iteration.stabilize = false;
        }
        if let Some(v) = self.max_cycles {
            c.iteration.max_cycles = v;
        }
        if let Some(v) = self.ordering {
            c.iteration.ordering = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Directory for reports and traces.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Base name of the output files; defaults to problem and method.
    #[arg(long)]
    pub name: Option<String>,
    /// Intervals of the uniform output grid of the solution file.
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub method: MethodArgs,
    #[command(flatten)]
    pub controller: ControllerArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Cost,
    Scaling,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value = "cost")]
    pub suite: Suite,
    /// Cost problems to run, comma separated; all four by default.
    #[arg(long, value_delimiter = ',')]
    pub problems: Option<Vec<String>>,
    /// Mesh size of the heat problem.
    #[arg(long, default_value_t = 0.01)]
    pub heat_h: f64,
    /// Mass counts of the scaling study, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [5, 10, 20, 40])]
    pub n_masses: Vec<usize>,
    /// Worker threads for independent runs.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ConvergeArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub method: MethodArgs,
    /// Uniform steps, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.125, 0.0625, 0.03125, 0.015625])]
    pub steps: Vec<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct DualArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub method: MethodArgs,
    #[command(flatten)]
    pub controller: ControllerArgs,
    /// Dual data phi(T) = e_i; a seeded random unit vector when absent.
    #[arg(long)]
    pub unit: Option<usize>,
    /// Dual mesh intervals; by default half the smallest primal step.
    #[arg(long)]
    pub dual_steps: Option<usize>,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// Failure of a command, mapped to the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or parameters: exit code 1.
    Usage(String),
    /// Solver or output failure: exit code 2.
    Solver(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Solver(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Solver(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) | Error::UnknownProblem(_) => Failure::Usage(e.to_string()),
            _ => Failure::Solver(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Solver(format!("cannot write {}: {e}", path.display()))
}

/// Parses an argument vector (program name first) without exiting.
pub fn parse<I, T>(args: I) -> Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    Cli::try_parse_from(args)
}

/// Validates the parsed arguments and builds the problem, method and
/// controller settings they describe, without running anything.
pub fn validate(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Run(a) => {
            a.problem.build()?;
            a.method.build()?;
            a.controller.apply(ControllerConfig::default())?;
        }
        Command::Bench(a) => {
            for name in a.problems.iter().flatten() {
                cost_case(name, a.heat_h)?;
            }
            if a.workers == 0 {
                return Err(Failure::Usage("--workers must be at least 1".into()));
            }
        }
        Command::Converge(a) => {
            let p = a.problem.build()?;
            a.method.build()?;
            if p.exact(p.t_final()).is_none() {
                return Err(Failure::Usage(format!("problem `{}` has no exact solution", a.problem.problem)));
            }
            if a.steps.len() < 2 || a.steps.iter().any(|k| !(*k > 0.0)) {
                return Err(Failure::Usage("--steps needs at least two positive steps".into()));
            }
        }
        Command::Dual(a) => {
            let p = a.problem.build()?;
            a.method.build()?;
            a.controller.apply(ControllerConfig::default())?;
            if a.unit.is_some_and(|i| i >= p.dim()) {
                return Err(Failure::Usage(format!("--unit must be below the dimension {}", p.dim())));
            }
        }
    }
    Ok(())
}

/// Runs a parsed command; the returned lines go to standard output.
pub fn execute(cli: &Cli) -> Result<Vec<String>, Failure> {
    validate(cli)?;
    match &cli.command {
        Command::Run(a) => run(a),
        Command::Bench(a) => match a.suite {
            Suite::Cost => bench_cost(a),
            Suite::Scaling => bench_scaling(a),
        },
        Command::Converge(a) => converge(a),
        Command::Dual(a) => dual(a),
    }
}

fn default_name(problem: &OdeProblem, method: Method) -> String {
    format!("{}-{}{}", problem.name(), method.kind, method.q)
}

fn summary(name: &str, r: &RunReport) -> String {
    format!(
        "{name}: status {:?}, error estimate {:.3e}, alpha {:.4}, alpha/alpha0 {:.4}, evaluations {:.0}",
        r.status, r.error_estimate, r.alpha, r.alpha_ratio, r.function_evaluations
    )
}

fn run(a: &RunArgs) -> Result<Vec<String>, Failure> {
    let problem = a.problem.build()?;
    let method = a.method.build()?;
    let config = a.controller.apply(ControllerConfig::default())?;
    let start = Instant::now();
    let result = run_benchmark(&problem, method, &config, None)?;
    let wall = start.elapsed().as_secs_f64();
    let name = a.output.name.clone().unwrap_or_else(|| default_name(&problem, method));
    write_run_outputs(
        &a.output.out,
        &name,
        &result.report,
        result.trace(),
        result.trajectory(),
        a.output.samples,
        wall,
    )?;
    let line = summary(&name, &result.report);
    if result.report.status == Status::ToleranceNotMet {
        return Err(Failure::Solver(format!("tolerance not met; {line}")));
    }
    Ok(vec![line])
}

fn bench_cost(a: &BenchArgs) -> Result<Vec<String>, Failure> {
    let names: Vec<String> = a.problems.clone().unwrap_or_else(|| COST_PROBLEMS.iter().map(|s| s.to_string()).collect());
    let cases = names.iter().map(|n| cost_case(n, a.heat_h)).collect::<multiadaptive::Result<Vec<_>>>()?;
    let results = parallel_map(&cases, a.workers, |case| {
        let start = Instant::now();
        let out = cost_comparison(case, HIRES_ORACLE_STEPS);
        out.map(|(cmp, run)| (cmp, run, start.elapsed().as_secs_f64()))
    });
    let mut lines = Vec::new();
    let mut all_ok = true;
    for (name, result) in names.iter().zip(results) {
        let (cmp, run, wall): (CostComparison, _, f64) = result?;
        write_run_outputs(&a.out, &format!("cost-{name}"), &cmp.stiff, run.trace(), run.trajectory(), 200, wall)?;
        let path = a.out.join(format!("cost-{name}-comparison.json"));
        let text = serde_json::to_string_pretty(&cmp).map_err(|e| Failure::Solver(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| io_failure(&path, e))?;
        let ok = cmp.ratio_ok() && cmp.error_ok();
        all_ok &= ok;
        lines.push(format!(
            "{name}: alpha/alpha0 {:.4} (bound {:.4}), error {:.3e}, reference error {:.3e}, {}",
            cmp.stiff.alpha_ratio,
            cmp.max_ratio,
            cmp.stiff.true_error.unwrap_or(f64::NAN),
            cmp.reference.true_error.unwrap_or(f64::NAN),
            if ok { "ok" } else { "outside bounds" }
        ));
    }
    if !all_ok {
        return Err(Failure::Solver(lines.join("\n")));
    }
    Ok(lines)
}

fn bench_scaling(a: &BenchArgs) -> Result<Vec<String>, Failure> {
    let study = scaling_study(&a.n_masses, SCALING_SMALL_STEP, SCALING_LARGE_STEP, SCALING_ORACLE_STEPS)?;
    fs::create_dir_all(&a.out).map_err(|e| io_failure(&a.out, e))?;
    let path = a.out.join("scaling.json");
    let text = serde_json::to_string_pretty(&study).map_err(|e| Failure::Solver(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| io_failure(&path, e))?;
    let mut lines: Vec<String> = study
        .rows
        .iter()
        .map(|r| {
            format!(
                "N = {:3}: single-rate {} evaluations (error {:.2e}), multi-adaptive {} evaluations (error {:.2e})",
                r.n_masses, r.single_evaluations, r.single_error, r.multi_evaluations, r.multi_error
            )
        })
        .collect();
    lines.push(format!("slopes: single-rate {:.3}, multi-adaptive {:.3}", study.single_slope, study.multi_slope));
    Ok(lines)
}

fn converge(a: &ConvergeArgs) -> Result<Vec<String>, Failure> {
    let problem = a.problem.build()?;
    let method = a.method.build()?;
    let study = convergence_study(&problem, method, &a.steps)?;
    let mut lines: Vec<String> = study.rows.iter().map(|r| format!("k = {:.6e}: error {:.6e}", r.k, r.error)).collect();
    lines.push(format!("{method}: fitted order {:.3} (nodal order {})", study.order, method.nodal_order()));
    Ok(lines)
}

fn dual(a: &DualArgs) -> Result<Vec<String>, Failure> {
    let problem = a.problem.build()?;
    let method = a.method.build()?;
    let config = a.controller.apply(ControllerConfig::default())?;
    let run = adaptive_solve(&problem, method, &config)?;
    let traj = &run.primal.trajectory;
    let steps = a.dual_steps.unwrap_or_else(|| dual_steps_for(traj));
    let data = match a.unit {
        Some(i) => DualData::Unit(i),
        None => DualData::Random { seed: config.seed },
    };
    let solution = solve_dual(traj, &problem, data, steps, &mut EvalCounter::default())?;
    let name = a.output.name.clone().unwrap_or_else(|| format!("{}-dual", default_name(&problem, method)));
    fs::create_dir_all(&a.output.out).map_err(|e| io_failure(&a.output.out, e))?;
    let path = a.output.out.join(format!("{name}.csv"));
    let file = fs::File::create(&path).map_err(|e| io_failure(&path, e))?;
    write_dual_csv(&solution, a.output.samples, file)?;
    let mut lines = Vec::new();
    for p in 1..=method.estimate_order().max(1) {
        let s = stability_factors(&solution, p);
        let shown: Vec<String> = s.values.iter().take(8).map(|v| format!("{v:.6e}")).collect();
        let more = if s.values.len() > 8 { ", ..." } else { "" };
        lines.push(format!("S^[{p}] = [{}{more}]", shown.join(", ")));
    }
    lines.push(format!("dual steps {steps}, written to {}", path.display()));
    Ok(lines)
}

/// Maps `f` over `items` on up to `workers` threads, keeping the order.
fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| scope.spawn(|| c.iter().map(&f).collect::<Vec<R>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

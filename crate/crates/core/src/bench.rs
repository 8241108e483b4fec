//! Reference solutions, cost comparisons, convergence and scaling studies,
//! and the run report written by the command-line tool.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::controller::{adaptive_solve, fixed_step_solve, AdaptiveRun, ControllerConfig, PrimalRun, Status};
use crate::error::{invalid, Error, Result};
use crate::mesh::Trajectory;
use crate::method::{galerkin_defect, DefectQuadrature, Method};
use crate::problems::{EvalCounter, OdeProblem};
use crate::solver::{cost, write_step_trace, IterationConfig, StepRecord};

pub const SCHEMA_VERSION: u32 = 1;

/// Two-stage Radau IIA (order 3) with uniform steps and simplified Newton
/// iterations. Shares only the problem definition with the Galerkin solver.
pub fn oracle_solve(problem: &OdeProblem, n_steps: usize) -> Result<Vec<f64>> {
    oracle_solve_to(problem, n_steps, problem.t_final())
}

pub fn oracle_solve_to(problem: &OdeProblem, n_steps: usize, t_final: f64) -> Result<Vec<f64>> {
    if n_steps == 0 {
        return Err(invalid("oracle needs at least one step"));
    }
    const A: [[f64; 2]; 2] = [[5.0 / 12.0, -1.0 / 12.0], [3.0 / 4.0, 1.0 / 4.0]];
    const C: [f64; 2] = [1.0 / 3.0, 1.0];
    let n = problem.dim();
    let h = t_final / n_steps as f64;
    let mut counter = EvalCounter::default();
    let mut u = DVector::from_column_slice(problem.initial());
    let mut z = DVector::zeros(2 * n);
    let mut lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> = None;
    let build = |jac: &DMatrix<f64>| {
        let mut m = DMatrix::identity(2 * n, 2 * n);
        for a in 0..2 {
            for b in 0..2 {
                let mut view = m.view_mut((a * n, b * n), (n, n));
                view -= jac * (h * A[a][b]);
            }
        }
        m.lu()
    };
    let mut stage = vec![0.0; n];
    for step in 0..n_steps {
        let t = h * step as f64;
        let needs_factor = lu.is_none() || !problem.is_linear();
        let mut fresh = false;
        if needs_factor && lu.is_none() {
            lu = Some(build(&problem.eval_jacobian(u.as_slice(), t, &mut counter)?));
            fresh = true;
        }
        z.fill(0.0);
        let mut converged = false;
        for attempt in 0..2 {
            for _ in 0..12 {
                let mut f = DVector::zeros(2 * n);
                for s in 0..2 {
                    for i in 0..n {
                        stage[i] = u[i] + z[s * n + i];
                    }
                    let fs = problem.eval_rhs(&stage, (t + C[s] * h).min(t_final), &mut counter)?;
                    f.rows_mut(s * n, n).copy_from_slice(&fs);
                }
                let mut g = -&z;
                for a in 0..2 {
                    for b in 0..2 {
                        let fb = f.rows(b * n, n) * (h * A[a][b]);
                        let mut ga = g.rows_mut(a * n, n);
                        ga += fb;
                    }
                }
                let dz = lu.as_ref().expect("factorization").solve(&g).ok_or(Error::OracleFailure { t })?;
                z += &dz;
                let scale = 1.0 + u.amax();
                if !z.iter().all(|v| v.is_finite()) {
                    break;
                }
                if dz.amax() <= 1e-14 * scale {
                    converged = true;
                    break;
                }
            }
            if converged || fresh || attempt == 1 {
                break;
            }
            // Stale Jacobian: refactor at the current state and retry.
            lu = Some(build(&problem.eval_jacobian(u.as_slice(), t, &mut counter)?));
            fresh = true;
            z.fill(0.0);
        }
        if !converged {
            return Err(Error::OracleFailure { t });
        }
        for i in 0..n {
            u[i] += z[n + i];
        }
    }
    Ok(u.iter().copied().collect())
}

/// Spectral radius of df/du at (u, t).
pub fn spectral_radius_at(problem: &OdeProblem, u: &[f64], t: f64) -> Result<f64> {
    let jac = problem.eval_jacobian(u, t, &mut EvalCounter::default())?;
    Ok(jac.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Largest stiffness seen by a run: the analytic value when the problem
/// carries one, the spectrum at u0 for other linear problems, and the
/// maximum over `samples` states along the trajectory for nonlinear ones.
pub fn lambda_max(problem: &OdeProblem, traj: Option<&Trajectory>, samples: usize) -> Result<f64> {
    if let Some(r) = problem.spectral_radius() {
        return Ok(r);
    }
    let mut best = spectral_radius_at(problem, problem.initial(), 0.0)?;
    if problem.is_linear() {
        return Ok(best);
    }
    if let Some(traj) = traj {
        let t_end = traj.t_end();
        for j in 1..=samples {
            let t = t_end * j as f64 / samples as f64;
            best = best.max(spectral_radius_at(problem, &traj.state(t)?, t)?);
        }
    }
    Ok(best)
}

/// (alpha, alpha0, alpha / alpha0) with alpha0 = lambda_max / 2.
pub fn compare_cost(trace: &[StepRecord], dim: usize, lambda_max: f64) -> Result<(f64, f64, f64)> {
    let alpha = cost(trace, dim)?;
    let alpha0 = lambda_max / 2.0;
    if !(alpha0 > 0.0) {
        return Err(invalid("baseline stiffness must be positive"));
    }
    Ok((alpha, alpha0, alpha / alpha0))
}

/// Fixed-point settings for prescribed-step studies.
pub fn study_iteration() -> IterationConfig {
    IterationConfig { tol: 1e-13, max_iter: 400, stabilize: false, ..IterationConfig::default() }
}

/// Least-squares slope of log y against log x.
pub fn fitted_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub k: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub method: Method,
    pub rows: Vec<ConvergenceRow>,
    pub order: f64,
}

/// Endpoint errors with uniform steps and the fitted order.
pub fn convergence_study(problem: &OdeProblem, method: Method, steps: &[f64]) -> Result<ConvergenceStudy> {
    let exact = problem.exact(problem.t_final()).ok_or_else(|| invalid("convergence study needs an exact solution"))?;
    let mut rows = Vec::new();
    for &k in steps {
        let run = fixed_step_solve(problem, method, &vec![k; problem.dim()], k, study_iteration())?;
        rows.push(ConvergenceRow { k, error: max_error(&run.trajectory.end_values(), &exact) });
    }
    let ks: Vec<f64> = rows.iter().map(|r| r.k).collect();
    let es: Vec<f64> = rows.iter().map(|r| r.error).collect();
    Ok(ConvergenceStudy { method, rows, order: fitted_slope(&ks, &es) })
}

pub fn max_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n_masses: usize,
    pub dim: usize,
    pub single_evaluations: u64,
    pub multi_evaluations: u64,
    pub single_steps: usize,
    pub multi_steps: usize,
    pub single_error: f64,
    pub multi_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingStudy {
    pub small_step: f64,
    pub large_step: f64,
    pub rows: Vec<ScalingRow>,
    pub single_slope: f64,
    pub multi_slope: f64,
}

/// Steps of the scaling study: the light mass (period about 0.44) and its
/// neighbour take the small step, the unit masses the large one.
pub const SCALING_SMALL_STEP: f64 = 1e-3;
pub const SCALING_LARGE_STEP: f64 = 0.1;
pub const SCALING_ORACLE_STEPS: usize = 20_000;

/// Work of mcG(1) on mass-spring chains of growing length. The single-rate
/// run gives every component the small step; the multi-adaptive run keeps
/// the small step for the light mass and its neighbour and gives every other
/// component the large step. Errors are measured against the oracle.
pub fn scaling_study(n_masses: &[usize], small_step: f64, large_step: f64, oracle_steps: usize) -> Result<ScalingStudy> {
    let mut rows = Vec::new();
    for &n in n_masses {
        let problem = crate::problems::make_mass_spring(&crate::problems::default_masses(n), 1.0)?;
        let reference = oracle_solve(&problem, oracle_steps)?;
        let dim = problem.dim();
        let single = fixed_step_solve(&problem, Method::mcg(1), &vec![small_step; dim], small_step, study_iteration())?;
        let multi_steps: Vec<f64> = (0..dim).map(|c| if c < 4 { small_step } else { large_step }).collect();
        let multi = fixed_step_solve(&problem, Method::mcg(1), &multi_steps, large_step, study_iteration())?;
        rows.push(ScalingRow {
            n_masses: n,
            dim,
            single_evaluations: single.counter.component_evaluations,
            multi_evaluations: multi.counter.component_evaluations,
            single_steps: single.trajectory.element_count(),
            multi_steps: multi.trajectory.element_count(),
            single_error: max_error(&single.trajectory.end_values(), &reference),
            multi_error: max_error(&multi.trajectory.end_values(), &reference),
        });
    }
    let ns: Vec<f64> = rows.iter().map(|r| r.n_masses as f64).collect();
    let single: Vec<f64> = rows.iter().map(|r| r.single_evaluations as f64).collect();
    let multi: Vec<f64> = rows.iter().map(|r| r.multi_evaluations as f64).collect();
    Ok(ScalingStudy {
        small_step,
        large_step,
        single_slope: fitted_slope(&ns, &single),
        multi_slope: fitted_slope(&ns, &multi),
        rows,
    })
}

/// Summary of one adaptive run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: u32,
    pub problem: String,
    pub params: BTreeMap<String, f64>,
    pub method: String,
    pub q: usize,
    pub tol: f64,
    pub status: Status,
    pub passes: usize,
    pub alpha: f64,
    pub alpha0: f64,
    pub alpha_ratio: f64,
    pub lambda_max: f64,
    /// Full right-hand side evaluations of the final primal pass
    /// (component evaluations divided by N).
    pub function_evaluations: f64,
    pub component_evaluations: u64,
    /// Component evaluations of all passes, dual work included.
    pub total_component_evaluations: u64,
    pub total_steps: usize,
    pub slabs: usize,
    pub damping_slabs: usize,
    pub rejected_slabs: usize,
    pub error_estimate: f64,
    pub error_bound: f64,
    pub true_error: Option<f64>,
    pub per_component_s: Vec<f64>,
    #[serde(rename = "C")]
    pub c: f64,
    pub seed: u64,
    pub final_state: Vec<f64>,
}

/// A finished run together with its report.
#[derive(Debug, Clone)]
pub struct BenchRun {
    pub report: RunReport,
    pub run: AdaptiveRun,
}

impl BenchRun {
    pub fn trajectory(&self) -> &Trajectory {
        &self.run.primal.trajectory
    }

    pub fn trace(&self) -> &[StepRecord] {
        &self.run.primal.trace
    }
}

/// Runs the adaptive solver and assembles the report. `reference` is used
/// as the true final state when the problem has no exact solution.
pub fn run_benchmark(
    problem: &OdeProblem,
    method: Method,
    config: &ControllerConfig,
    reference: Option<&[f64]>,
) -> Result<BenchRun> {
    let run = adaptive_solve(problem, method, config)?;
    let report = make_report(problem, method, config, &run, reference)?;
    Ok(BenchRun { report, run })
}

pub fn make_report(
    problem: &OdeProblem,
    method: Method,
    config: &ControllerConfig,
    run: &AdaptiveRun,
    reference: Option<&[f64]>,
) -> Result<RunReport> {
    let primal: &PrimalRun = &run.primal;
    let traj = &primal.trajectory;
    let lam = lambda_max(problem, Some(traj), 64)?;
    let (alpha, alpha0, ratio) = compare_cost(&primal.trace, problem.dim(), lam)?;
    let final_state = traj.end_values();
    let truth = problem.exact(problem.t_final()).or_else(|| reference.map(<[f64]>::to_vec));
    Ok(RunReport {
        schema: SCHEMA_VERSION,
        problem: problem.name().to_string(),
        params: problem.params().iter().cloned().collect(),
        method: method.kind.to_string(),
        q: method.q,
        tol: config.tol,
        status: run.status,
        passes: run.passes,
        alpha,
        alpha0,
        alpha_ratio: ratio,
        lambda_max: lam,
        function_evaluations: primal.counter.function_evaluations(problem.dim()),
        component_evaluations: primal.counter.component_evaluations,
        total_component_evaluations: run.total_counter.component_evaluations,
        total_steps: traj.element_count(),
        slabs: traj.slabs().len(),
        damping_slabs: primal.stats.damping_slabs,
        rejected_slabs: primal.stats.rejected_slabs,
        error_estimate: run.report.representation,
        error_bound: run.report.estimate,
        true_error: truth.map(|u| l2_error(&final_state, &u)),
        per_component_s: run.report.per_component_s.clone(),
        c: run.report.c,
        seed: config.seed,
        final_state,
    })
}

/// Euclidean norm of the difference, the norm the error control targets.
pub fn l2_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// The same solver without stabilization, its steps capped at 1/lambda_max
/// so that every slab iteration contracts.
pub fn nonstiff_reference(problem: &OdeProblem, method: Method, config: &ControllerConfig, lambda_max: f64) -> Result<AdaptiveRun> {
    let mut cfg = config.clone();
    cfg.iteration.stabilize = false;
    cfg.k_ceil = Some(cfg.k_ceil.unwrap_or(f64::INFINITY).min(1.0 / lambda_max));
    adaptive_solve(problem, method, &cfg)
}

/// Largest Galerkin defect of a run relative to its fixed-point tolerance:
/// max over elements and test functions of |defect| / (tol k), with the
/// defect taken under the method quadrature. Returns the ratio and the
/// number of elements checked.
pub fn orthogonality_check(problem: &OdeProblem, run: &PrimalRun) -> Result<(f64, usize)> {
    let traj = &run.trajectory;
    let scheme = traj.scheme();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut counter = EvalCounter::default();
    for slab in traj.slabs() {
        for (i, list) in slab.elements.iter().enumerate() {
            for (j, e) in list.iter().enumerate() {
                let defect = galerkin_defect(slab, scheme, problem, i, j, DefectQuadrature::Method, &mut counter)?;
                let scale = run.fixpoint_tol * e.k();
                worst = defect.iter().fold(worst, |w, d| w.max(d.abs() / scale));
                checked += 1;
            }
        }
    }
    Ok((worst, checked))
}

/// Problems of the stiff cost benchmark.
pub const COST_PROBLEMS: [&str; 4] = ["test-equation", "test-system", "hires", "heat1d"];

/// Oracle resolution used as the HIRES ground truth.
pub const HIRES_ORACLE_STEPS: usize = 1_000_000;

/// One stiff cost benchmark: problem, method, controller settings and the
/// accepted bound on alpha / alpha0.
#[derive(Debug, Clone)]
pub struct CostCase {
    pub problem: OdeProblem,
    pub method: Method,
    pub config: ControllerConfig,
    pub max_ratio: f64,
}

/// The benchmark settings for one of [`COST_PROBLEMS`], mcG(1) throughout.
/// `heat_h` is the mesh size of the heat problem.
pub fn cost_case(name: &str, heat_h: f64) -> Result<CostCase> {
    use crate::problems::{make_heat1d, make_hires, make_test_equation, make_test_system, HeatSource};
    use crate::solver::Ordering;
    let base = ControllerConfig { tol: 1e-3, ..ControllerConfig::default() };
    let levels = |tol: f64| {
        let mut c = ControllerConfig { tol, ..ControllerConfig::default() };
        c.iteration.ordering = Ordering::Levels;
        c
    };
    let (problem, config, max_ratio) = match name {
        "test-equation" => (make_test_equation(1000.0)?, base, 1.0 / 50.0),
        "test-system" => (make_test_system(&[100.0, 1000.0])?, base, 1.0 / 20.0),
        "hires" => (make_hires(), levels(1e-2), 1.0 / 5.0),
        "heat1d" => (make_heat1d(heat_h, HeatSource::Delta)?, levels(1e-2), 1.0 / 3.0),
        other => return Err(Error::UnknownProblem(other.to_string())),
    };
    Ok(CostCase { problem, method: Method::mcg(1), config, max_ratio })
}

/// A stabilized run next to the nonstiff reference at the same tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostComparison {
    pub stiff: RunReport,
    pub reference: RunReport,
    pub max_ratio: f64,
    /// Errors below this level are roundoff: machine epsilon times the
    /// largest solution value seen.
    pub error_floor: f64,
}

impl CostComparison {
    pub fn ratio_ok(&self) -> bool {
        self.stiff.alpha_ratio <= self.max_ratio
    }

    /// Terminal error at most ten times that of the reference, both taken
    /// no lower than the roundoff floor.
    pub fn error_ok(&self) -> bool {
        match (self.stiff.true_error, self.reference.true_error) {
            (Some(e), Some(r)) => e <= 10.0 * r.max(self.error_floor),
            _ => false,
        }
    }
}

/// Runs a cost case and its nonstiff reference. Problems without an exact
/// solution are measured against the oracle with `oracle_steps` steps.
pub fn cost_comparison(case: &CostCase, oracle_steps: usize) -> Result<(CostComparison, BenchRun)> {
    let truth = match case.problem.exact(case.problem.t_final()) {
        Some(_) => None,
        None => Some(oracle_solve(&case.problem, oracle_steps)?),
    };
    let stiff = run_benchmark(&case.problem, case.method, &case.config, truth.as_deref())?;
    let reference_run = nonstiff_reference(&case.problem, case.method, &case.config, stiff.report.lambda_max)?;
    let reference = make_report(&case.problem, case.method, &case.config, &reference_run, truth.as_deref())?;
    let peak = sample_solution(stiff.trajectory(), 256)?
        .iter()
        .flat_map(|row| row[1..].iter().map(|v| v.abs()))
        .fold(0.0, f64::max);
    let comparison = CostComparison {
        stiff: stiff.report.clone(),
        reference,
        max_ratio: case.max_ratio,
        error_floor: f64::EPSILON * peak.max(1e-300),
    };
    Ok((comparison, stiff))
}

/// Samples U on t_j = j T / samples, j = 0..=samples: one row per time.
pub fn sample_solution(traj: &Trajectory, samples: usize) -> Result<Vec<Vec<f64>>> {
    let t_end = traj.t_end();
    (0..=samples.max(1))
        .map(|j| {
            let t = if j == samples.max(1) { t_end } else { t_end * j as f64 / samples.max(1) as f64 };
            let mut row = vec![t];
            row.extend(traj.state(t)?);
            Ok(row)
        })
        .collect()
}

pub fn write_solution_csv<W: Write>(traj: &Trajectory, samples: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Parse { line: 0, message: e.to_string() };
    let mut header = vec!["t".to_string()];
    header.extend((1..=traj.dim()).map(|i| format!("U{i}")));
    w.write_record(&header).map_err(io)?;
    for row in sample_solution(traj, samples)? {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Parse { line: 0, message: e.to_string() })
}

/// Deterministic JSON for a report.
pub fn report_json(report: &RunReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn parse_report(text: &str) -> Result<RunReport> {
    let report: RunReport = serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })?;
    if report.schema != SCHEMA_VERSION {
        return Err(Error::Parse { line: 0, message: format!("unsupported schema {}", report.schema) });
    }
    Ok(report)
}

/// Files written for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFiles {
    pub report: PathBuf,
    pub steps: PathBuf,
    pub solution: PathBuf,
    pub timing: PathBuf,
}

/// Writes `<name>.json`, `<name>-steps.csv`, `<name>-solution.csv` and the
/// wall-clock sidecar `<name>-timing.json` into `dir`.
pub fn write_run_outputs(
    dir: &Path,
    name: &str,
    report: &RunReport,
    trace: &[StepRecord],
    traj: &Trajectory,
    samples: usize,
    wall_seconds: f64,
) -> Result<RunFiles> {
    let io = |e: std::io::Error| invalid(format!("cannot write output: {e}"));
    fs::create_dir_all(dir).map_err(io)?;
    let files = RunFiles {
        report: dir.join(format!("{name}.json")),
        steps: dir.join(format!("{name}-steps.csv")),
        solution: dir.join(format!("{name}-solution.csv")),
        timing: dir.join(format!("{name}-timing.json")),
    };
    fs::write(&files.report, report_json(report)).map_err(io)?;
    write_step_trace(trace, fs::File::create(&files.steps).map_err(io)?)?;
    write_solution_csv(traj, samples, fs::File::create(&files.solution).map_err(io)?)?;
    let timing = serde_json::json!({ "schema": SCHEMA_VERSION, "wall_seconds": wall_seconds });
    fs::write(&files.timing, format!("{}\n", serde_json::to_string_pretty(&timing).expect("timing serializes"))).map_err(io)?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_test_equation, make_test_system, OdeProblem};

    #[test]
    fn oracle_matches_exponential_decay() {
        let p = make_test_equation(1000.0).unwrap().with_t_final(0.01).unwrap();
        let u = oracle_solve(&p, 10_000).unwrap();
        let exact = (-10.0f64).exp();
        assert!((u[0] - exact).abs() < 1e-9 * exact, "{} vs {exact}", u[0]);
    }

    #[test]
    fn oracle_is_third_order() {
        let p = make_test_system(&[1.0, 3.0]).unwrap().with_t_final(1.0).unwrap();
        let exact = p.exact(1.0).unwrap();
        let e1 = max_error(&oracle_solve(&p, 20).unwrap(), &exact);
        let e2 = max_error(&oracle_solve(&p, 40).unwrap(), &exact);
        assert!(((e1 / e2).log2() - 3.0).abs() < 0.2, "{}", (e1 / e2).log2());
    }

    #[test]
    fn oracle_keeps_constant_solution() {
        let p = OdeProblem::new("still", vec![0.25, -4.0], 3.0, |_, _, o| o.fill(0.0)).unwrap();
        assert_eq!(oracle_solve(&p, 17).unwrap(), vec![0.25, -4.0]);
    }

    #[test]
    fn slope_fit() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powi(2)).collect();
        assert!((fitted_slope(&x, &y) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn lambda_max_sources() {
        assert_eq!(lambda_max(&make_test_equation(1000.0).unwrap(), None, 0).unwrap(), 1000.0);
        let hires = crate::problems::make_hires();
        let at_start = lambda_max(&hires, None, 0).unwrap();
        assert!((at_start - 10.48).abs() < 0.01, "{at_start}");
        let ms = crate::problems::make_mass_spring(&[1.0, 1.0], 1.0).unwrap();
        assert!((lambda_max(&ms, None, 0).unwrap() - 3f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn report_round_trip() {
        let p = make_test_equation(1.0).unwrap();
        let cfg = ControllerConfig { tol: 1e-3, ..ControllerConfig::default() };
        let run = run_benchmark(&p, Method::mcg(1), &cfg, None).unwrap();
        let text = report_json(&run.report);
        assert!(text.contains("\"alpha_ratio\""));
        assert!(text.contains("\"schema\": 1"));
        assert_eq!(parse_report(&text).unwrap(), run.report);
        assert!(parse_report("{}").is_err());
        let again = run_benchmark(&p, Method::mcg(1), &cfg, None).unwrap();
        assert_eq!(report_json(&again.report), text);
    }
}

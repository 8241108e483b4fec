//! Acceptance checks for the multi-adaptive solvers. Each check runs one
//! criterion end to end and returns an [`Outcome`] with a one-line summary.

use std::cell::Cell;
use std::thread;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use multiadaptive::bench::{
    convergence_study, cost_case, cost_comparison, l2_error, oracle_solve, orthogonality_check, run_benchmark,
    sample_solution, scaling_study, study_iteration, COST_PROBLEMS, HIRES_ORACLE_STEPS, SCALING_LARGE_STEP,
    SCALING_ORACLE_STEPS, SCALING_SMALL_STEP,
};
use multiadaptive::controller::{adaptive_solve, fixed_step_solve, ControllerConfig, PrimalRun, Status};
use multiadaptive::dual::{solve_dual, stability_factors, DualData};
use multiadaptive::mesh::Phase;
use multiadaptive::problems::{make_hires, make_reaction_diffusion, make_test_equation, make_test_system};
use multiadaptive::solver::{stabilize_count, IterationConfig};
use multiadaptive::{EvalCounter, Method, OdeProblem, Result};

/// Mesh size of the heat problem in the cost benchmark.
pub const HEAT_H: f64 = 0.01;
/// Largest accepted Galerkin defect in units of (fixed-point tol) * k.
pub const ORTHOGONALITY_LIMIT: f64 = 1e3;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub id: usize,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    fn new(id: usize, name: &'static str, pass: bool, detail: String) -> Self {
        Outcome { id, name, pass, detail }
    }

    fn from_result(id: usize, name: &'static str, result: Result<Outcome>) -> Self {
        result.unwrap_or_else(|e| Outcome::new(id, name, false, format!("error: {e}")))
    }

    pub fn line(&self) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        format!("criterion {} [{}] {verdict}: {}", self.id, self.name, self.detail)
    }
}

/// A converged primal run kept for the orthogonality check.
pub struct CheckedRun {
    pub label: String,
    pub problem: OdeProblem,
    pub primal: PrimalRun,
}

/// Fitted endpoint orders on u' = -u, T = 1, k = 1/4 .. 1/64.
pub fn convergence_orders() -> Result<Outcome> {
    let problem = make_test_equation(1.0)?.with_t_final(1.0)?;
    let steps: Vec<f64> = (2..=6).map(|e| 0.5f64.powi(e)).collect();
    let cases = [(Method::mcg(1), 2.0), (Method::mcg(2), 4.0), (Method::mdg(0), 1.0), (Method::mdg(1), 3.0)];
    let mut pass = true;
    let mut parts = Vec::new();
    for (method, expected) in cases {
        let study = convergence_study(&problem, method, &steps)?;
        pass &= (study.order - expected).abs() <= 0.2;
        parts.push(format!("{method} {:.3} (want {expected})", study.order));
    }
    Ok(Outcome::new(1, "convergence orders", pass, parts.join(", ")))
}

/// Galerkin defects of the given benchmark runs and of randomized linear
/// problems, each at most ORTHOGONALITY_LIMIT (fixed-point tol) k.
pub fn galerkin_orthogonality(runs: &[CheckedRun], cases: u32) -> Result<Outcome> {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut elements = 0;
    for run in runs {
        let (worst, checked) = orthogonality_check(&run.problem, &run.primal)?;
        elements += checked;
        pass &= worst <= ORTHOGONALITY_LIMIT;
        parts.push(format!("{} {worst:.2e}", run.label));
    }
    let (property_pass, property_worst, property_detail) = orthogonality_properties(cases);
    pass &= property_pass;
    Ok(Outcome::new(
        2,
        "Galerkin orthogonality",
        pass,
        format!(
            "worst |defect|/(tol k) over {elements} benchmark elements: {}; {cases} random linear problems worst {property_worst:.2e}{property_detail}",
            parts.join(", ")
        ),
    ))
}

fn linear_problem(rates: &[f64], coupling: &[f64]) -> Result<OdeProblem> {
    let n = rates.len();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = if i == j { -rates[i] } else { 0.5 * coupling[i * n + j] };
        }
    }
    let initial: Vec<f64> = (0..n).map(|i| 1.0 - 0.3 * i as f64).collect();
    OdeProblem::new("random-linear", initial, 1.0, move |u, _, out| {
        for i in 0..n {
            out[i] = (0..n).map(|j| a[i * n + j] * u[j]).sum();
        }
    })
}

fn orthogonality_properties(cases: u32) -> (bool, f64, String) {
    let methods = [Method::mcg(1), Method::mcg(2), Method::mcg(3), Method::mdg(0), Method::mdg(1), Method::mdg(2)];
    let strategy = (1usize..5).prop_flat_map(|n| {
        (
            prop::collection::vec(0.1f64..50.0, n),
            prop::collection::vec(-1.0f64..1.0, n * n),
            prop::collection::vec(0.02f64..0.2, n),
            0usize..6,
        )
    });
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    let worst = Cell::new(0.0f64);
    let result = runner.run(&strategy, |(rates, coupling, steps, m)| {
        let fail = |e: multiadaptive::Error| TestCaseError::fail(e.to_string());
        let problem = linear_problem(&rates, &coupling).map_err(fail)?;
        let k_slab = steps.iter().cloned().fold(0.0, f64::max);
        let iteration = IterationConfig { tol: 1e-10, max_iter: 400, ..IterationConfig::default() };
        let run = fixed_step_solve(&problem, methods[m], &steps, k_slab, iteration).map_err(fail)?;
        let (ratio, _) = orthogonality_check(&problem, &run).map_err(fail)?;
        worst.set(worst.get().max(ratio));
        prop_assert!(ratio <= ORTHOGONALITY_LIMIT, "defect ratio {ratio:.3e} with {}", methods[m]);
        Ok(())
    });
    match result {
        Ok(()) => (true, worst.get(), String::new()),
        Err(e) => (false, worst.get(), format!(" ({e})")),
    }
}

/// Damping counts for random K lambda in [2.1, 1e6] and c in [0.1, 1.5]:
/// m satisfies |1 - c|^m (K lambda - 1) <= 1 and m - 1 does not.
pub fn stabilization_math(cases: usize, seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    for _ in 0..cases {
        let product = (rng.random_range(2.1f64.ln()..1e6f64.ln())).exp();
        let c = rng.random_range(0.1..1.5);
        let k_slab = 10f64.powf(rng.random_range(-4.0..1.0));
        let rate = product / k_slab;
        let (m, _) = stabilize_count(k_slab, rate, c);
        let x = k_slab * rate;
        let a = (1.0f64 - c).abs();
        let holds = |m: usize| a.powi(m as i32) * (x - 1.0) <= 1.0;
        if !(holds(m) && (m == 0 || !holds(m - 1))) {
            failures.push(format!("K lambda {x:.4e} c {c:.4} m {m}"));
        }
    }
    let detail = if failures.is_empty() {
        format!("{cases} random cases, m minimal in all")
    } else {
        format!("{} of {cases} cases wrong: {}", failures.len(), failures.join("; "))
    };
    Outcome::new(3, "stabilization counts", failures.is_empty(), detail)
}

/// Stabilized mcG(1) against the nonstiff reference on the four stiff
/// problems, the cases running in parallel.
pub fn cost_reduction(heat_h: f64) -> Result<(Outcome, Vec<CheckedRun>)> {
    let cases = COST_PROBLEMS.iter().map(|name| cost_case(name, heat_h)).collect::<Result<Vec<_>>>()?;
    let results: Vec<_> = thread::scope(|s| {
        let handles: Vec<_> = cases.iter().map(|case| s.spawn(move || cost_comparison(case, HIRES_ORACLE_STEPS))).collect();
        handles.into_iter().map(|h| h.join().expect("cost case panicked")).collect()
    });
    let mut pass = true;
    let mut parts = Vec::new();
    let mut runs = Vec::new();
    for (name, (case, result)) in COST_PROBLEMS.iter().zip(cases.into_iter().zip(results)) {
        let (cmp, bench) = result?;
        let ok = cmp.ratio_ok() && cmp.error_ok();
        pass &= ok;
        parts.push(format!(
            "{name} ratio {:.4} (max {:.4}) error {:.2e} vs reference {:.2e} {}",
            cmp.stiff.alpha_ratio,
            cmp.max_ratio,
            cmp.stiff.true_error.unwrap_or(f64::NAN),
            cmp.reference.true_error.unwrap_or(f64::NAN),
            if ok { "ok" } else { "out of bounds" }
        ));
        runs.push(CheckedRun { label: format!("cost {name}"), problem: case.problem, primal: bench.run.primal });
    }
    Ok((Outcome::new(4, "cost reduction", pass, parts.join("; ")), runs))
}

/// Estimated against true terminal error for the test equation and the
/// test system at two tolerances.
pub fn effectivity() -> Result<(Outcome, Vec<CheckedRun>)> {
    let problems = [
        ("test-equation(1)", make_test_equation(1.0)?),
        ("test-equation(1000)", make_test_equation(1000.0)?),
        ("test-system", make_test_system(&[100.0, 1000.0])?),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    let mut runs = Vec::new();
    for (label, problem) in problems {
        for tol in [1e-3, 1e-5] {
            let config = ControllerConfig { tol, ..ControllerConfig::default() };
            let bench = run_benchmark(&problem, Method::mcg(1), &config, None)?;
            let truth = bench.report.true_error.unwrap_or(f64::NAN);
            let estimate = bench.report.error_estimate;
            let met = bench.report.status == Status::ToleranceMet;
            let ratio = estimate / truth;
            let ok = (!met || truth <= 10.0 * tol) && (0.1..=100.0).contains(&ratio);
            pass &= ok;
            parts.push(format!(
                "{label} TOL {tol:e}: {:?} true {truth:.2e} estimate {estimate:.2e} ratio {ratio:.3}{}",
                bench.report.status,
                if ok { "" } else { " out of bounds" }
            ));
            runs.push(CheckedRun { label: format!("{label} TOL {tol:e}"), problem: problem.clone(), primal: bench.run.primal });
        }
    }
    Ok((Outcome::new(5, "error-control effectivity", pass, parts.join("; ")), runs))
}

fn test_equation_dual_error(lambda: f64, dual_steps: usize) -> Result<f64> {
    let problem = make_test_equation(lambda)?.with_t_final(1.0)?;
    let k = (0.25 / lambda).min(0.1);
    let primal = fixed_step_solve(&problem, Method::mcg(1), &[k], k, study_iteration())?;
    let dual = solve_dual(&primal.trajectory, &problem, DualData::Unit(0), dual_steps, &mut EvalCounter::default())?;
    Ok((0..=dual_steps)
        .map(|j| (dual.node(j)[0] - (-lambda * (1.0 - dual.node_time(j))).exp()).abs())
        .fold(0.0, f64::max))
}

/// S^[1] of the test equation against 1 - exp(-lambda T) and the nodal
/// dual error under mesh refinement.
pub fn dual_oracle() -> Result<Outcome> {
    let mut pass = true;
    let mut parts = Vec::new();
    for lambda in [1.0, 10.0, 1000.0] {
        let problem = make_test_equation(lambda)?.with_t_final(1.0)?;
        let k = (0.25 / lambda).min(0.1);
        let primal = fixed_step_solve(&problem, Method::mcg(1), &[k], k, study_iteration())?;
        let dual = solve_dual(&primal.trajectory, &problem, DualData::Unit(0), 20_000, &mut EvalCounter::default())?;
        let s = stability_factors(&dual, 1).values[0];
        let exact = -(-lambda).exp_m1();
        let rel = (s - exact).abs() / exact;
        pass &= rel <= 0.01;
        parts.push(format!("lambda {lambda}: S {s:.6} vs {exact:.6} (rel {rel:.1e})"));
    }
    for lambda in [1.0, 10.0] {
        let errors = [200, 400, 800].map(|n| test_equation_dual_error(lambda, n)).into_iter().collect::<Result<Vec<_>>>()?;
        let ratios = [errors[0] / errors[1], errors[1] / errors[2]];
        pass &= ratios.iter().all(|r| (3.5..=4.5).contains(r));
        parts.push(format!("lambda {lambda}: refinement ratios {:.3}, {:.3}", ratios[0], ratios[1]));
    }
    Ok(Outcome::new(6, "dual oracle", pass, parts.join("; ")))
}

/// Evaluation counts of single-rate and multi-adaptive mcG(1) on mass-spring
/// chains with N = 5, 10, 20, 40.
pub fn multi_adaptive_scaling() -> Result<Outcome> {
    let study = scaling_study(&[5, 10, 20, 40], SCALING_SMALL_STEP, SCALING_LARGE_STEP, SCALING_ORACLE_STEPS)?;
    let mut pass = study.single_slope >= 0.8 && study.multi_slope <= 0.3;
    let mut parts = vec![format!("slopes single {:.3} multi {:.3}", study.single_slope, study.multi_slope)];
    for row in &study.rows {
        let ratio = row.single_error.max(row.multi_error) / row.single_error.min(row.multi_error);
        pass &= ratio <= 3.0;
        parts.push(format!(
            "N {}: evals {} vs {}, errors {:.2e} vs {:.2e}",
            row.n_masses, row.single_evaluations, row.multi_evaluations, row.single_error, row.multi_error
        ));
    }
    Ok(Outcome::new(7, "multi-adaptive scaling", pass, parts.join("; ")))
}

/// Tolerance and method of the HIRES accuracy run.
pub const HIRES_TOL: f64 = 1e-6;

/// HIRES terminal state against the oracle and the u7 + u8 invariant.
pub fn hires_correctness() -> Result<(Outcome, Vec<CheckedRun>)> {
    let problem = make_hires();
    let oracle = oracle_solve(&problem, HIRES_ORACLE_STEPS)?;
    let config = ControllerConfig { tol: HIRES_TOL, ..ControllerConfig::default() };
    let run = adaptive_solve(&problem, Method::mcg(2), &config)?;
    let end = run.primal.trajectory.end_values();
    let rel = end
        .iter()
        .zip(&oracle)
        .filter(|(_, o)| o.abs() > 1e-6)
        .map(|(u, o)| ((u - o) / o).abs())
        .fold(0.0, f64::max);
    let drift = sample_solution(&run.primal.trajectory, 4000)?
        .iter()
        .map(|row| (row[7] + row[8] - 0.0057).abs())
        .fold(0.0, f64::max);
    let bound = run.primal.fixpoint_tol * problem.t_final();
    let pass = rel <= 1e-4 && drift <= bound;
    let detail = format!(
        "mcG(2) TOL {HIRES_TOL:e} {:?}: max relative deviation {rel:.2e} (max 1e-4), |u7+u8-0.0057| {drift:.2e} (max {bound:.2e}), l2 {:.2e}",
        run.status,
        l2_error(&end, &oracle)
    );
    let runs = vec![CheckedRun { label: "hires mcG(2)".into(), problem, primal: run.primal }];
    Ok((Outcome::new(8, "HIRES correctness", pass, detail), runs))
}

/// Tolerance of the reaction-diffusion run.
pub const FRONT_TOL: f64 = 1e-6;

/// Where the smallest step sits relative to the reaction front.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontSample {
    pub t: f64,
    /// Node of the smallest step over both species.
    pub smallest: usize,
    /// First node where u1 exceeds 1/2.
    pub front: usize,
}

/// Smallest-step nodes on the normal slabs starting in [t0, t1] while the
/// front is inside the domain.
pub fn front_samples(run: &PrimalRun, nodes: usize, t0: f64, t1: f64) -> Vec<FrontSample> {
    let mut out = Vec::new();
    for slab in run.trajectory.slabs() {
        if slab.phase != Phase::Normal || slab.t_begin < t0 || slab.t_begin > t1 {
            continue;
        }
        let end = slab.end_values();
        let Some(front) = (0..nodes).find(|&j| end[j] > 0.5) else { continue };
        let (mut best, mut smallest) = (f64::INFINITY, 0);
        for c in 0..2 * nodes {
            let k = slab.step(c);
            if k < best {
                best = k;
                smallest = c % nodes;
            }
        }
        out.push(FrontSample { t: slab.t_begin, smallest, front });
    }
    out
}

/// mcG(2) on the reaction-diffusion problem with 100 cells: the smallest
/// step follows the front and u1 + u2 stays 1.
pub fn reaction_front() -> Result<(Outcome, Vec<CheckedRun>)> {
    let (epsilon, n_cells) = (0.001, 100);
    let nodes = n_cells + 1;
    let problem = make_reaction_diffusion(epsilon, n_cells, 0.2)?;
    let config = ControllerConfig { tol: FRONT_TOL, use_dual: false, ..ControllerConfig::default() };
    let run = adaptive_solve(&problem, Method::mcg(2), &config)?;
    let samples = front_samples(&run.primal, nodes, 10.0, 90.0);
    // The front spans about sqrt(epsilon); the argmin may wander inside it.
    let width = (epsilon.sqrt() * n_cells as f64).ceil() as usize;
    let mut running = 0;
    let mut backward = Vec::new();
    let mut lag: usize = 0;
    for s in &samples {
        if s.smallest + width < running {
            backward.push(format!("t {:.1}: {} after {running}", s.t, s.smallest));
        }
        running = running.max(s.smallest);
        lag = lag.max(s.smallest.abs_diff(s.front));
    }
    let mass = sample_solution(&run.primal.trajectory, 1000)?
        .iter()
        .flat_map(|row| (0..nodes).map(move |j| (row[1 + j] + row[1 + nodes + j] - 1.0).abs()))
        .fold(0.0, f64::max);
    let advance = match (samples.first(), samples.last()) {
        (Some(a), Some(b)) => b.smallest as i64 - a.smallest as i64,
        _ => 0,
    };
    let last_t = samples.last().map_or(f64::NAN, |s| s.t);
    let pass = !samples.is_empty() && backward.is_empty() && advance >= 10 && mass <= 1e-6;
    let detail = format!(
        "{} slabs with the front inside (last at t {last_t:.1}), smallest-step node {} -> {} (+{advance}), largest distance to the front {lag} nodes, backward moves beyond {width} nodes: {}, max |u1+u2-1| {mass:.2e} (max 1e-6)",
        samples.len(),
        samples.first().map_or(0, |s| s.smallest),
        samples.last().map_or(0, |s| s.smallest),
        if backward.is_empty() { "none".to_string() } else { backward.join(", ") }
    );
    let runs = vec![CheckedRun { label: "reaction-diffusion mcG(2)".into(), problem, primal: run.primal }];
    Ok((Outcome::new(9, "reaction-diffusion front", pass, detail), runs))
}

/// Runs every criterion, the independent ones concurrently, and returns
/// the outcomes in criterion order.
pub fn run_all() -> Vec<Outcome> {
    type Checked = Result<(Outcome, Vec<CheckedRun>)>;
    let split = |id: usize, name: &'static str, r: Checked, runs: &mut Vec<CheckedRun>| match r {
        Ok((o, mut more)) => {
            runs.append(&mut more);
            o
        }
        Err(e) => Outcome::new(id, name, false, format!("error: {e}")),
    };
    let (c1, c3, c4, c5, c6, c7, c8, c9) = thread::scope(|s| {
        let c4 = s.spawn(|| cost_reduction(HEAT_H));
        let c8 = s.spawn(hires_correctness);
        let c9 = s.spawn(reaction_front);
        let c5 = s.spawn(effectivity);
        let c7 = s.spawn(multi_adaptive_scaling);
        let c1 = convergence_orders();
        let c3 = stabilization_math(200, 19);
        let c6 = dual_oracle();
        let c7 = c7.join().expect("criterion panicked");
        let join = |h: thread::ScopedJoinHandle<'_, Checked>| h.join().expect("criterion panicked");
        (c1, c3, join(c4), join(c5), c6, c7, join(c8), join(c9))
    });
    let mut runs = Vec::new();
    let o4 = split(4, "cost reduction", c4, &mut runs);
    let o5 = split(5, "error-control effectivity", c5, &mut runs);
    let o8 = split(8, "HIRES correctness", c8, &mut runs);
    let o9 = split(9, "reaction-diffusion front", c9, &mut runs);
    let o2 = Outcome::from_result(2, "Galerkin orthogonality", galerkin_orthogonality(&runs, 64));
    vec![
        Outcome::from_result(1, "convergence orders", c1),
        o2,
        c3,
        o4,
        o5,
        Outcome::from_result(6, "dual oracle", c6),
        Outcome::from_result(7, "multi-adaptive scaling", c7),
        o8,
        o9,
    ]
}

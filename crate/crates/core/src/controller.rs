//! Individual step selection and the adaptive loop.
//!
//! Each component aims at S_i C k_i^p r_i = TOL / N. The target step
//! k* = (TOL / (N S_i C r_i))^(1/p) is approached by a PID regulator acting
//! on log k. The loop alternates primal solves and dual solves until the
//! error measured through the error representation is below TOL.

use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::dual::{
    dual_steps_for, error_estimate, error_representation, representations_from_samples, residual_measure,
    sample_residuals, solve_dual, solve_duals, stability_factors, DualData, DualSolution,
    ErrorReport,
};
use crate::error::{invalid, Result};
use crate::mesh::{Phase, Trajectory};
use crate::method::{Method, Scheme};
use crate::problems::{EvalCounter, OdeProblem};
use crate::solver::{IterationConfig, SlabSolver, SolverStats, StepRecord};

/// Unit-component duals are solved for systems up to this size.
pub const UNIT_DUAL_LIMIT: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub tol: f64,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Largest step ratio between consecutive slabs.
    pub max_growth: f64,
    /// Absolute step bounds; default 1e-12 T and T / 2.
    pub k_floor: Option<f64>,
    pub k_ceil: Option<f64>,
    /// First step of every component; default 1e-6 T.
    pub k_init: Option<f64>,
    pub interpolation_constant: f64,
    pub max_outer: usize,
    pub seed: u64,
    /// Fixed-point tolerance relative to TOL / T.
    pub fixpoint_factor: f64,
    /// A slab is redone when a component's estimate exceeds this multiple of TOL / N.
    pub reject_factor: f64,
    pub max_rejections: usize,
    /// Solve dual problems and iterate; otherwise one primal pass with S = 1.
    pub use_dual: bool,
    pub iteration: IterationConfig,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            tol: 1e-4,
            kp: 0.4,
            ki: 0.3,
            kd: 0.0,
            max_growth: 2.0,
            k_floor: None,
            k_ceil: None,
            k_init: None,
            interpolation_constant: 1.0,
            max_outer: 5,
            seed: 0,
            fixpoint_factor: 1e-3,
            reject_factor: 2.0,
            max_rejections: 12,
            use_dual: true,
            iteration: IterationConfig::default(),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(invalid(format!("TOL must be positive, got {}", self.tol)));
        }
        if !(self.max_growth > 1.0) {
            return Err(invalid("max_growth must exceed 1"));
        }
        if !(self.interpolation_constant > 0.0) {
            return Err(invalid("interpolation constant must be positive"));
        }
        if self.max_outer == 0 {
            return Err(invalid("max_outer must be at least 1"));
        }
        if !(self.fixpoint_factor > 0.0) || !(self.reject_factor >= 1.0) {
            return Err(invalid("fixpoint_factor must be positive and reject_factor at least 1"));
        }
        for k in [self.k_floor, self.k_ceil, self.k_init].into_iter().flatten() {
            if !(k > 0.0 && k.is_finite()) {
                return Err(invalid("step bounds must be positive"));
            }
        }
        if let (Some(lo), Some(hi)) = (self.k_floor, self.k_ceil) {
            if lo > hi {
                return Err(invalid("k_floor exceeds k_ceil"));
            }
        }
        self.iteration.validate()
    }
}

/// k* = (TOL / (N S C r))^(1/p); infinite when S C r = 0.
pub fn target_step(tol: f64, n: usize, s: f64, c: f64, r: f64, p: usize) -> f64 {
    let denom = n as f64 * s * c * r;
    if !(denom > 0.0) {
        return f64::INFINITY;
    }
    (tol / denom).powf(1.0 / p as f64)
}

/// Per-component PID state on log k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub steps: Vec<f64>,
    pub error_sum: Vec<f64>,
    pub error_prev: Vec<f64>,
    pub tol: f64,
    pub stability: Vec<f64>,
    pub c: f64,
    pub order: usize,
    pub floor: f64,
    pub ceil: f64,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub max_growth: f64,
}

impl ControllerState {
    pub fn new(config: &ControllerConfig, problem: &OdeProblem, method: Method, tol: f64, stability: Vec<f64>) -> Self {
        let t_final = problem.t_final();
        let floor = config.k_floor.unwrap_or(1e-12 * t_final);
        let ceil = config.k_ceil.unwrap_or(0.5 * t_final).max(floor);
        let k0 = config.k_init.unwrap_or(1e-6 * t_final).clamp(floor, ceil);
        let n = problem.dim();
        ControllerState {
            steps: vec![k0; n],
            error_sum: vec![0.0; n],
            error_prev: vec![0.0; n],
            tol,
            stability,
            c: config.interpolation_constant,
            order: method.estimate_order(),
            floor,
            ceil,
            kp: config.kp,
            ki: config.ki,
            kd: config.kd,
            max_growth: config.max_growth,
        }
    }

    pub fn dim(&self) -> usize {
        self.steps.len()
    }

    pub fn target(&self, i: usize, r: f64) -> f64 {
        target_step(self.tol, self.dim(), self.stability[i], self.c, r, self.order)
    }

    /// Weighted estimate S_i C k^p r for component i.
    pub fn local_estimate(&self, i: usize, k: f64, r: f64) -> f64 {
        self.stability[i] * self.c * k.powi(self.order as i32) * r
    }

    /// New steps from the steps `used` in the last slab and the residual
    /// measures observed there.
    pub fn next_steps(&mut self, used: &[f64], residuals: &[f64]) -> Vec<f64> {
        for i in 0..self.dim() {
            let k = used[i];
            let target = self.target(i, residuals[i]);
            let proposal = if target.is_finite() {
                let e = (target / k).ln();
                let delta = self.kp * e + self.ki * (self.error_sum[i] + e) + self.kd * (e - self.error_prev[i]);
                self.error_sum[i] += e;
                self.error_prev[i] = e;
                k * delta.exp()
            } else {
                self.max_growth * k
            };
            self.steps[i] = proposal.min(self.max_growth * k).clamp(self.floor, self.ceil);
        }
        self.steps.clone()
    }
}

/// Result of one primal pass.
#[derive(Debug, Clone)]
pub struct PrimalRun {
    pub trajectory: Trajectory,
    pub trace: Vec<StepRecord>,
    pub stats: SolverStats,
    pub counter: EvalCounter,
    pub damping_steps: Vec<f64>,
    /// Slabs redone because a local estimate exceeded the target.
    pub error_rejections: usize,
    /// Fixed-point tolerance of the slab iterations.
    pub fixpoint_tol: f64,
}

/// One primal pass with steps chosen from the local estimates.
pub fn primal_solve(
    problem: &OdeProblem,
    method: Method,
    config: &ControllerConfig,
    stability: &[f64],
    tol: f64,
) -> Result<PrimalRun> {
    config.validate()?;
    let scheme = Arc::new(Scheme::new(method)?);
    let mut iteration = config.iteration;
    iteration.tol = config.fixpoint_factor * tol / problem.t_final();
    let mut solver = SlabSolver::new(problem, scheme.clone(), iteration)?;
    let mut state = ControllerState::new(config, problem, method, tol, stability.to_vec());
    let mut traj = Trajectory::new(scheme.clone(), problem.initial().to_vec());
    let n = problem.dim();
    let limit = config.reject_factor * tol / n as f64;
    let mut error_rejections = 0;
    let mut check = EvalCounter::default();
    while traj.t_end() < problem.t_final() {
        let mut rejections = 0;
        loop {
            let k_slab = state.steps.iter().cloned().fold(0.0, f64::max).min(state.ceil);
            let advance = solver.advance(&mut traj, &state.steps, k_slab)?;
            let Some(idx) = advance.large_slab else { break };
            let slab = &traj.slabs()[idx];
            let mut used = vec![0.0; n];
            let mut residuals = vec![0.0f64; n];
            for i in 0..n {
                used[i] = slab.step(i);
                for j in 0..slab.elements[i].len() {
                    let r = residual_measure(slab, &scheme, problem, i, j, &mut check)?;
                    residuals[i] = residuals[i].max(r);
                }
            }
            let too_large: Vec<usize> =
                (0..n).filter(|&i| state.local_estimate(i, used[i], residuals[i]) > limit).collect();
            if too_large.is_empty() || rejections >= config.max_rejections {
                state.next_steps(&used, &residuals);
                break;
            }
            rejections += 1;
            error_rejections += 1;
            traj.pop();
            solver.trace.pop();
            solver.stats.accepted_slabs -= 1;
            solver.stats.rejected_slabs += 1;
            for i in too_large {
                let target = state.target(i, residuals[i]);
                state.steps[i] = (0.9 * target).min(0.5 * used[i]).clamp(state.floor, state.ceil);
            }
        }
    }
    solver.counter.merge(&check);
    Ok(PrimalRun {
        trajectory: traj,
        trace: solver.trace,
        stats: solver.stats,
        counter: solver.counter,
        damping_steps: solver.damping_steps,
        error_rejections,
        fixpoint_tol: iteration.tol,
    })
}

/// Integration with prescribed steps: slabs of length `k_slab`, component
/// i taking steps of (about) `steps[i]` inside each slab.
pub fn fixed_step_solve(
    problem: &OdeProblem,
    method: Method,
    steps: &[f64],
    k_slab: f64,
    iteration: IterationConfig,
) -> Result<PrimalRun> {
    if steps.len() != problem.dim() {
        return Err(invalid("one step per component is required"));
    }
    let scheme = Arc::new(Scheme::new(method)?);
    let mut solver = SlabSolver::new(problem, scheme.clone(), iteration)?;
    let mut traj = Trajectory::new(scheme, problem.initial().to_vec());
    while traj.t_end() < problem.t_final() {
        solver.advance(&mut traj, steps, k_slab)?;
    }
    Ok(PrimalRun {
        trajectory: traj,
        trace: solver.trace,
        stats: solver.stats,
        counter: solver.counter,
        damping_steps: solver.damping_steps,
        error_rejections: 0,
        fixpoint_tol: iteration.tol,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    ToleranceMet,
    ToleranceNotMet,
    /// Single primal pass without dual problems.
    PrimalOnly,
}

#[derive(Debug, Clone)]
pub struct AdaptiveRun {
    pub primal: PrimalRun,
    pub report: ErrorReport,
    pub status: Status,
    pub passes: usize,
    /// Evaluations of every pass, dual work included.
    pub total_counter: EvalCounter,
    pub stability: Vec<f64>,
}

/// The adaptive loop: primal solve with the current stability factors
/// (1 on the first pass), dual solves, error evaluation, repeat until the
/// error is below TOL or `max_outer` passes are spent.
///
/// The error measure is |e(T)| assembled from unit-component duals for
/// N <= 16, and sqrt(N) times the representation with seeded random data
/// otherwise. Stability factors come from the random dual, raised to the
/// unit-dual values where those are solved.
pub fn adaptive_solve(problem: &OdeProblem, method: Method, config: &ControllerConfig) -> Result<AdaptiveRun> {
    config.validate()?;
    method.validate()?;
    let n = problem.dim();
    let p = method.estimate_order();
    let mut stability = vec![1.0; n];
    let mut tol_internal = config.tol;
    let mut total = EvalCounter::default();
    let mut last: Option<AdaptiveRun> = None;
    for pass in 1..=config.max_outer {
        let primal = primal_solve(problem, method, config, &stability, tol_internal)?;
        total.merge(&primal.counter);
        let mut dual_counter = EvalCounter::default();
        if !config.use_dual {
            let factors = crate::dual::StabilityFactors { order: p, values: stability.clone() };
            let (estimate, contributions, residuals) = error_estimate(
                &primal.trajectory,
                problem,
                &factors,
                config.interpolation_constant,
                &mut dual_counter,
            )?;
            total.merge(&dual_counter);
            let report = ErrorReport {
                representation: estimate,
                estimate,
                contributions,
                per_component_s: stability.clone(),
                residuals,
                c: config.interpolation_constant,
                seed: config.seed,
            };
            return Ok(AdaptiveRun { primal, report, status: Status::PrimalOnly, passes: 1, total_counter: total, stability });
        }
        let traj = &primal.trajectory;
        let steps = dual_steps_for(traj);
        let (error, factors) = if n <= UNIT_DUAL_LIMIT {
            let mut data = vec![DualData::Random { seed: config.seed }];
            data.extend((0..n).map(DualData::Unit));
            let duals = solve_duals(traj, problem, data, steps, &mut dual_counter)?;
            let samples = sample_residuals(traj, problem, steps, &mut dual_counter)?;
            let units: Vec<&DualSolution> = duals[1..].iter().collect();
            let reps = representations_from_samples(traj, &units, problem, &samples)?;
            let sum: f64 = reps.iter().map(|r| r.total * r.total).sum();
            let mut factors = stability_factors(&duals[0], p);
            for unit in units {
                let unit_factors = stability_factors(unit, p);
                for (s, u) in factors.values.iter_mut().zip(&unit_factors.values) {
                    *s = s.max(*u);
                }
            }
            (sum.sqrt(), factors)
        } else {
            let random = solve_dual(traj, problem, DualData::Random { seed: config.seed }, steps, &mut dual_counter)?;
            let rep = error_representation(traj, &random, problem, &mut dual_counter)?;
            (rep.total.abs() * (n as f64).sqrt(), stability_factors(&random, p))
        };
        let (estimate, contributions, residuals) =
            error_estimate(traj, problem, &factors, config.interpolation_constant, &mut dual_counter)?;
        total.merge(&dual_counter);
        let report = ErrorReport {
            representation: error,
            estimate,
            contributions,
            per_component_s: factors.values.clone(),
            residuals,
            c: config.interpolation_constant,
            seed: config.seed,
        };
        let met = error <= config.tol;
        let run = AdaptiveRun {
            primal,
            report,
            status: if met { Status::ToleranceMet } else { Status::ToleranceNotMet },
            passes: pass,
            total_counter: total,
            stability: stability.clone(),
        };
        if met {
            return Ok(run);
        }
        tol_internal *= (config.tol / error).min(0.5);
        stability = factors.values;
        last = Some(run);
    }
    Ok(last.expect("at least one pass"))
}

/// Steps of the normal (non-damping) slabs for component i: (slab start, step).
pub fn step_history(traj: &Trajectory, i: usize) -> Vec<(f64, f64)> {
    traj.slabs()
        .iter()
        .filter(|s| s.phase == Phase::Normal)
        .map(|s| (s.t_begin, s.step(i)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::make_test_equation;
    use proptest::prelude::*;

    #[test]
    fn target_step_example() {
        assert!((target_step(1e-4, 1, 1.0, 1.0, 1.0, 2) - 1e-2).abs() < 1e-15);
        assert_eq!(target_step(1e-4, 1, 1.0, 1.0, 0.0, 2), f64::INFINITY);
    }

    fn state(tol: f64) -> ControllerState {
        let p = make_test_equation(1.0).unwrap();
        let cfg = ControllerConfig { tol, ..ControllerConfig::default() };
        ControllerState::new(&cfg, &p, Method::mcg(2), tol, vec![1.0])
    }

    #[test]
    fn zero_residual_doubles_the_step() {
        let mut s = state(1e-4);
        assert_eq!(s.next_steps(&[0.1], &[0.0]), vec![0.2]);
        assert_eq!(s.next_steps(&[4.0], &[0.0]), vec![5.0]);
    }

    #[test]
    fn step_at_target_is_a_fixed_point() {
        let mut s = state(1e-4);
        assert!((s.next_steps(&[1e-2], &[1.0])[0] - 1e-2).abs() < 1e-16);
    }

    #[test]
    fn pid_settles_on_the_target() {
        let mut s = state(1e-4);
        let mut k = 1e-4;
        for _ in 0..60 {
            // residual of a second order method grows like k
            k = s.next_steps(&[k], &[k * 100.0])[0];
        }
        let expect = (1e-4f64 / 100.0).powf(1.0 / 3.0);
        assert!((k / expect - 1.0).abs() < 1e-6, "{k} vs {expect}");
    }

    proptest! {
        #[test]
        fn target_is_monotone(tol in 1e-8f64..1.0, r in 1e-6f64..1e6, s in 1e-3f64..1e3, p in 1usize..4, f in 1.01f64..10.0) {
            let k = target_step(tol, 3, s, 1.0, r, p);
            prop_assert!(target_step(tol, 3, s, 1.0, r * f, p) < k);
            prop_assert!(target_step(tol / f, 3, s, 1.0, r, p) < k);
        }

        #[test]
        fn steps_stay_within_bounds(ks in prop::collection::vec(1e-9f64..10.0, 1..20), rs in prop::collection::vec(0.0f64..1e8, 20)) {
            let mut s = state(1e-6);
            for (k, r) in ks.iter().zip(&rs) {
                let out = s.next_steps(&[*k], &[*r])[0];
                prop_assert!(out >= s.floor && out <= s.ceil);
                prop_assert!(out <= 2.0 * k * (1.0 + 1e-15) || out == s.floor);
            }
        }
    }

    #[test]
    fn huge_tolerance_takes_ceiling_steps() {
        let p = make_test_equation(0.1).unwrap();
        let cfg = ControllerConfig { tol: 1e3, k_init: Some(5.0), ..ControllerConfig::default() };
        let run = adaptive_solve(&p, Method::mcg(1), &cfg).unwrap();
        assert_eq!(run.passes, 1);
        assert_eq!(run.status, Status::ToleranceMet);
        assert!(run.primal.trajectory.slabs().iter().all(|s| s.length() == 5.0));
    }

    #[test]
    fn adaptive_solve_meets_tolerance_on_decay() {
        let p = make_test_equation(1.0).unwrap();
        let cfg = ControllerConfig { tol: 1e-4, ..ControllerConfig::default() };
        let run = adaptive_solve(&p, Method::mcg(1), &cfg).unwrap();
        assert_eq!(run.status, Status::ToleranceMet);
        assert!(run.passes <= 2);
        let err = (run.primal.trajectory.end_values()[0] - (-10.0f64).exp()).abs();
        assert!(err <= 10.0 * cfg.tol, "{err}");
    }
}

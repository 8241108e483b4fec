//! Fixed-point iteration on time slabs and stabilization of stiff problems
//! by bursts of small damping steps.
//!
//! Elements are updated in order of their end times. Elements sharing an
//! end time either see each other's freshest values (Gauss-Seidel) or the
//! values from the start of the pass (Jacobi within a time level). A sweep whose
//! increments grow for three consecutive passes is declared divergent; the
//! growth rate then gives an estimate of the dominant stiff rate, which sets
//! the length and number of the damping steps taken before the large step is
//! tried again.

use serde::{Deserialize, Serialize};
use std::io::Write;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::mesh::{build_slab_between, Phase, TimeSlab, Trajectory};
use crate::method::{MethodKind, Scheme};
use crate::problems::{EvalCounter, OdeProblem};

/// Passes with growing increments after which a sweep counts as divergent.
const DIVERGENCE_PASSES: usize = 3;

/// How elements with a common end time see each other within one pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ordering {
    /// Freshest values of every element already visited in the pass.
    #[default]
    GaussSeidel,
    /// Freshest values of earlier time levels, pass-start values within the
    /// current level. Keeps the unstable modes of the iteration aligned with
    /// the stiff modes of symmetric problems.
    Levels,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationConfig {
    /// A sweep has converged when every dof moved by less than `tol * k`
    /// in the last pass, k being the length of the dof's element.
    pub tol: f64,
    pub max_iter: usize,
    /// Target product c = k * rate for the damping steps.
    pub damping: f64,
    pub stabilize: bool,
    /// Damping bursts tried for one large step before it is halved.
    pub max_cycles: usize,
    pub ordering: Ordering,
}

impl Default for IterationConfig {
    fn default() -> Self {
        IterationConfig {
            tol: 1e-10,
            max_iter: 100,
            damping: 0.5,
            stabilize: true,
            max_cycles: 4,
            ordering: Ordering::GaussSeidel,
        }
    }
}

impl IterationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(invalid(format!("fixed-point tolerance must be positive, got {}", self.tol)));
        }
        if !(self.damping > 0.0 && self.damping < 2.0) {
            return Err(invalid(format!("damping target must lie in (0, 2), got {}", self.damping)));
        }
        if self.max_iter < DIVERGENCE_PASSES + 1 {
            return Err(invalid("max_iter must be at least 4"));
        }
        if self.max_cycles == 0 {
            return Err(invalid("max_cycles must be at least 1"));
        }
        Ok(())
    }
}

/// Rate estimate and damping plan carried between rejections.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StabilizationState {
    pub rate: f64,
    pub steps_left: usize,
    pub phase_damping: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub converged: bool,
    pub diverged: bool,
    pub passes: usize,
    /// Largest scaled increment of the last pass.
    pub increment: f64,
    /// Scaled increment of every pass.
    pub history: Vec<f64>,
    /// Last increment ratio, increment_j / increment_{j-1}.
    pub ratio: f64,
}

/// Updates one element once from the current slab state and returns the
/// largest dof change divided by the element length.
fn update_element(
    slab: &mut TimeSlab,
    scheme: &Scheme,
    problem: &OdeProblem,
    i: usize,
    j: usize,
    counter: &mut EvalCounter,
    state: &mut [f64],
    samples: &mut [f64],
) -> Result<f64> {
    let mut dofs = Vec::new();
    let left = element_update(slab, scheme, problem, i, j, counter, state, samples, &mut dofs)?;
    Ok(apply_update(slab, i, j, left, &dofs))
}

fn apply_update(slab: &mut TimeSlab, i: usize, j: usize, left: f64, dofs: &[f64]) -> f64 {
    let e = &mut slab.elements[i][j];
    let k = e.k();
    e.left_value = left;
    let mut incr: f64 = 0.0;
    for (old, &new) in e.dofs.iter_mut().zip(dofs) {
        incr = incr.max((new - *old).abs());
        *old = new;
    }
    incr / k
}

/// New dofs of element (i, j) from the current slab state, written to
/// `dofs`; returns the element's incoming value.
#[allow(clippy::too_many_arguments)]
fn element_update(
    slab: &TimeSlab,
    scheme: &Scheme,
    problem: &OdeProblem,
    i: usize,
    j: usize,
    counter: &mut EvalCounter,
    state: &mut [f64],
    samples: &mut [f64],
    dofs: &mut Vec<f64>,
) -> Result<f64> {
    let basis = &scheme.basis;
    let nodes = scheme.nodes();
    let deps = problem.dependencies(i);
    let left = if j == 0 { slab.elements[i][0].left_value } else { slab.elements[i][j - 1].end_value() };
    let mcg = scheme.method.kind == MethodKind::Mcg;
    {
        let e = &slab.elements[i][j];
        let k = e.k();
        for (n, &s) in nodes.iter().enumerate() {
            let t = e.t_begin + k * s;
            slab.fill_state(basis, t, deps, state);
            state[i] = if mcg && n == 0 { left } else { e.dofs[n] };
            samples[n] = problem.eval_component(i, state, t, counter)?;
        }
    }
    let k = slab.elements[i][j].k();
    dofs.clear();
    for m in 0..nodes.len() {
        let row = scheme.weights.row(m);
        dofs.push(left + k * row.iter().zip(samples.iter()).map(|(w, f)| w * f).sum::<f64>());
    }
    Ok(left)
}

/// Splits the iteration order into runs of elements with a common end time.
fn time_levels(slab: &TimeSlab, order: &[(usize, usize)]) -> Vec<std::ops::Range<usize>> {
    let slack = 1e-12 * slab.length();
    let mut levels = Vec::new();
    let mut start = 0;
    for idx in 1..=order.len() {
        let split = idx == order.len() || {
            let (a, b) = (order[start], order[idx]);
            slab.elements[b.0][b.1].t_end - slab.elements[a.0][a.1].t_end > slack
        };
        if split {
            levels.push(start..idx);
            start = idx;
        }
    }
    levels
}

/// Ordered fixed-point passes over a slab until the increments fall below
/// the tolerance, grow for three passes in a row, or `max_iter` is reached.
pub fn sweep_slab(
    slab: &mut TimeSlab,
    scheme: &Scheme,
    problem: &OdeProblem,
    config: &IterationConfig,
    counter: &mut EvalCounter,
    slab_id: usize,
) -> Result<SweepOutcome> {
    let order = slab.iteration_order();
    let mut state = problem.initial().to_vec();
    let mut samples = vec![0.0; scheme.dofs_per_element()];
    let levels = match config.ordering {
        Ordering::GaussSeidel => Vec::new(),
        Ordering::Levels => time_levels(slab, &order),
    };
    let mut pending: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut history = Vec::new();
    let mut growing = 0;
    for _ in 0..config.max_iter {
        let mut incr: f64 = 0.0;
        match config.ordering {
            Ordering::GaussSeidel => {
                for &(i, j) in &order {
                    let d = update_element(slab, scheme, problem, i, j, counter, &mut state, &mut samples)?;
                    incr = incr.max(d);
                }
            }
            Ordering::Levels => {
                for level in &levels {
                    pending.resize_with(level.len(), Default::default);
                    for (slot, &(i, j)) in pending.iter_mut().zip(&order[level.clone()]) {
                        slot.0 = element_update(slab, scheme, problem, i, j, counter, &mut state, &mut samples, &mut slot.1)?;
                    }
                    for (slot, &(i, j)) in pending.iter().zip(&order[level.clone()]) {
                        incr = incr.max(apply_update(slab, i, j, slot.0, &slot.1));
                    }
                }
            }
        }
        if !incr.is_finite() {
            return Err(Error::IterationOverflow { slab: slab_id, t: slab.t_begin });
        }
        if let Some(&prev) = history.last() {
            growing = if incr > prev { growing + 1 } else { 0 };
        }
        history.push(incr);
        let ratio = ratio_of(&history);
        if incr < config.tol {
            return Ok(SweepOutcome { converged: true, diverged: false, passes: history.len(), increment: incr, history, ratio });
        }
        if growing >= DIVERGENCE_PASSES {
            return Ok(SweepOutcome { converged: false, diverged: true, passes: history.len(), increment: incr, history, ratio });
        }
    }
    let increment = *history.last().unwrap_or(&f64::INFINITY);
    let ratio = ratio_of(&history);
    Ok(SweepOutcome { converged: false, diverged: false, passes: history.len(), increment, history, ratio })
}

fn ratio_of(history: &[f64]) -> f64 {
    match history {
        [.., a, b] if *a > 0.0 => b / a,
        _ => 0.0,
    }
}

/// Dominant rate from the growth of the increments: rho / K with rho the
/// geometric mean ratio over (at most) the last three passes. Returns 0
/// when fewer than two increments are available.
pub fn estimate_rate(history: &[f64], k_slab: f64) -> f64 {
    if history.len() < 2 || !(k_slab > 0.0) {
        return 0.0;
    }
    let pairs = (history.len() - 1).min(3);
    let tail = &history[history.len() - pairs - 1..];
    let mut log_sum = 0.0;
    for w in tail.windows(2) {
        if !(w[0] > 0.0 && w[1] > 0.0) {
            return 0.0;
        }
        log_sum += (w[1] / w[0]).ln();
    }
    let rho = (log_sum / pairs as f64).exp();
    (rho / k_slab).max(0.0)
}

/// True when the last increment is smaller than the one before it.
pub fn is_converging(history: &[f64]) -> bool {
    matches!(history, [.., a, b] if b < a)
}

/// Number m of damping steps of length k = c / rate needed after a step K:
/// the smallest m with |1 - c|^m (K rate - 1) <= 1, or 0 when K rate <= 2.
pub fn stabilize_count(k_slab: f64, rate: f64, c: f64) -> (usize, f64) {
    let k = if rate > 0.0 { c / rate } else { f64::INFINITY };
    let x = k_slab * rate;
    if !(x > 2.0) {
        return (0, k);
    }
    let a = (1.0 - c).abs();
    let bound = |m: usize| a.powi(m as i32) * (x - 1.0) <= 1.0;
    let mut m = if a > 0.0 { ((x - 1.0).ln() / -a.ln()).ceil().max(0.0) as usize } else { 1 };
    while m > 0 && bound(m - 1) {
        m -= 1;
    }
    while !bound(m) {
        m += 1;
    }
    (m, k)
}

/// One accepted slab in the step trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub k: f64,
    pub phase: Phase,
    pub passes: usize,
    pub increment: f64,
    pub elements: usize,
}

/// Steps per unit time: accepted element steps divided by N and by the
/// time covered.
pub fn cost(trace: &[StepRecord], dim: usize) -> Result<f64> {
    if trace.is_empty() || dim == 0 {
        return Err(invalid("cost needs a nonempty trace"));
    }
    let steps: usize = trace.iter().map(|r| r.elements).sum();
    let time: f64 = trace.iter().map(|r| r.k).sum();
    Ok(steps as f64 / dim as f64 / time)
}

pub fn write_step_trace<W: Write>(trace: &[StepRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let fail = |e: csv::Error| Error::Parse { line: 0, message: e.to_string() };
    w.write_record(["t", "k", "phase", "passes", "increment", "elements"]).map_err(fail)?;
    for r in trace {
        w.write_record([
            r.t.to_string(),
            r.k.to_string(),
            r.phase.to_string(),
            r.passes.to_string(),
            r.increment.to_string(),
            r.elements.to_string(),
        ])
        .map_err(fail)?;
    }
    w.flush().map_err(|e| Error::Parse { line: 0, message: e.to_string() })
}

pub fn read_step_trace<R: std::io::Read>(input: R) -> Result<Vec<StepRecord>> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
    if headers.iter().ne(["t", "k", "phase", "passes", "increment", "elements"]) {
        return Err(Error::Parse { line: 1, message: "unexpected step trace header".into() });
    }
    let mut out = Vec::new();
    for (n, rec) in reader.records().enumerate() {
        let line = n + 2;
        let rec = rec.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let bad = |name: &str| Error::Parse { line, message: format!("bad {name}") };
        let t: f64 = field(0).parse().map_err(|_| bad("t"))?;
        let k: f64 = field(1).parse().map_err(|_| bad("k"))?;
        let phase: Phase = field(2).parse().map_err(|_| bad("phase"))?;
        let passes: usize = field(3).parse().map_err(|_| bad("passes"))?;
        let increment: f64 = field(4).parse().map_err(|_| bad("increment"))?;
        let elements: usize = field(5).parse().map_err(|_| bad("elements"))?;
        if !(t.is_finite() && k > 0.0 && k.is_finite()) || increment.is_nan() {
            return Err(bad("step"));
        }
        out.push(StepRecord { t, k, phase, passes, increment, elements });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub accepted_slabs: usize,
    pub damping_slabs: usize,
    pub rejected_slabs: usize,
    pub damping_bursts: usize,
    pub halvings: usize,
    pub passes: usize,
}

/// What one call to [`SlabSolver::advance`] appended to the trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Advance {
    /// Index of the accepted large slab, None if damping steps alone reached
    /// the end time.
    pub large_slab: Option<usize>,
    pub damping_slabs: usize,
}

/// Advances a trajectory slab by slab, holding the iteration settings, the
/// evaluation counter and the step trace of one run.
#[derive(Debug)]
pub struct SlabSolver<'p> {
    pub problem: &'p OdeProblem,
    pub scheme: Arc<Scheme>,
    pub config: IterationConfig,
    pub counter: EvalCounter,
    pub trace: Vec<StepRecord>,
    pub stats: SolverStats,
    pub stabilization: StabilizationState,
    /// Damping step lengths actually used, one entry per burst.
    pub damping_steps: Vec<f64>,
}

impl<'p> SlabSolver<'p> {
    pub fn new(problem: &'p OdeProblem, scheme: Arc<Scheme>, config: IterationConfig) -> Result<Self> {
        config.validate()?;
        Ok(SlabSolver {
            problem,
            scheme,
            config,
            counter: EvalCounter::default(),
            trace: Vec::new(),
            stats: SolverStats::default(),
            stabilization: StabilizationState::default(),
            damping_steps: Vec::new(),
        })
    }

    fn floor(&self) -> f64 {
        1e-12 * self.problem.t_final()
    }

    fn slab_end(&self, t: f64, k: f64) -> f64 {
        let t_final = self.problem.t_final();
        let end = t + k;
        if end >= t_final - 1e-9 * k {
            t_final
        } else {
            end
        }
    }

    fn record(&mut self, slab: &TimeSlab, outcome: &SweepOutcome) {
        self.stats.passes += outcome.passes;
        self.trace.push(StepRecord {
            t: slab.t_begin,
            k: slab.length(),
            phase: slab.phase,
            passes: outcome.passes,
            increment: outcome.increment,
            elements: slab.element_count(),
        });
    }

    /// Solves a slab from the trajectory's end with the given per-component
    /// steps, without stabilization. Returns the outcome and the solved slab.
    pub fn attempt(&mut self, traj: &Trajectory, steps: &[f64], t_end: f64) -> Result<(TimeSlab, SweepOutcome)> {
        let left = traj.end_values();
        let mut slab = build_slab_between(traj.t_end(), t_end, steps, self.scheme.method.q, &left)?;
        let outcome = sweep_slab(
            &mut slab,
            &self.scheme,
            self.problem,
            &self.config,
            &mut self.counter,
            traj.slabs().len(),
        )?;
        Ok((slab, outcome))
    }

    /// Takes one large step of length at most `k_slab` with per-component
    /// steps `steps`, inserting damping steps whenever the iteration diverges.
    pub fn advance(&mut self, traj: &mut Trajectory, steps: &[f64], k_slab: f64) -> Result<Advance> {
        let mut k_big = k_slab;
        let mut cycles = 0;
        let mut damping_slabs = 0;
        loop {
            let t = traj.t_end();
            if t >= self.problem.t_final() {
                return Ok(Advance { large_slab: None, damping_slabs });
            }
            if k_big < self.floor() {
                return Err(Error::UnableToStabilize { t, step: k_big, floor: self.floor(), rate: self.stabilization.rate });
            }
            let t_end = self.slab_end(t, k_big);
            let capped: Vec<f64> = steps.iter().map(|&k| k.min(t_end - t)).collect();
            let attempt = self.attempt(traj, &capped, t_end);
            let (slab, outcome) = match attempt {
                Ok(pair) => pair,
                Err(Error::IterationOverflow { .. }) | Err(Error::RhsOverflow { .. }) => {
                    self.stats.rejected_slabs += 1;
                    self.stats.halvings += 1;
                    k_big /= 2.0;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if outcome.converged {
                self.record(&slab, &outcome);
                traj.push(slab)?;
                self.stats.accepted_slabs += 1;
                self.stabilization.phase_damping = false;
                return Ok(Advance { large_slab: Some(traj.slabs().len() - 1), damping_slabs });
            }
            self.stats.rejected_slabs += 1;
            self.stats.passes += outcome.passes;
            let length = t_end - t;
            let rate = estimate_rate(&outcome.history, length);
            let (m, k) = stabilize_count(length, rate, self.config.damping);
            // A diverging sweep gets at least one damping step even when the
            // estimate says K rate <= 2, since the iteration itself is unstable.
            let m = m.max(1);
            // A damping step below the floor means the growth was not a linear
            // instability (typically a nonlinear blow-up): shorten the large step.
            let hopeless = !(k >= self.floor() && k < length);
            if !self.config.stabilize || !outcome.diverged || hopeless || cycles >= self.config.max_cycles {
                self.stats.halvings += 1;
                k_big = length / 2.0;
                cycles = 0;
                continue;
            }
            self.stabilization = StabilizationState { rate, steps_left: m, phase_damping: true };
            cycles += 1;
            self.stats.damping_bursts += 1;
            damping_slabs += self.damp(traj, m, k)?;
        }
    }

    /// Takes m small steps of length k with every component on one element.
    fn damp(&mut self, traj: &mut Trajectory, m: usize, mut k: f64) -> Result<usize> {
        let dim = self.problem.dim();
        let mut taken = 0;
        let mut first = true;
        while taken < m {
            let t = traj.t_end();
            if t >= self.problem.t_final() {
                break;
            }
            if k < self.floor() {
                return Err(Error::UnableToStabilize { t, step: k, floor: self.floor(), rate: self.stabilization.rate });
            }
            let t_end = self.slab_end(t, k);
            let (mut slab, outcome) = match self.attempt(traj, &vec![k; dim], t_end) {
                Ok(pair) => pair,
                Err(Error::IterationOverflow { .. }) | Err(Error::RhsOverflow { .. }) => {
                    self.stats.rejected_slabs += 1;
                    k /= 2.0;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if !outcome.converged {
                // The rate seen by the large step underestimated the stiffness.
                self.stats.rejected_slabs += 1;
                self.stats.passes += outcome.passes;
                let rate = estimate_rate(&outcome.history, t_end - t);
                let shorter = if rate > 0.0 { self.config.damping / rate } else { k };
                k = shorter.min(k / 2.0);
                continue;
            }
            if first {
                self.damping_steps.push(k);
                first = false;
            }
            slab.phase = Phase::Damping;
            self.record(&slab, &outcome);
            traj.push(slab)?;
            self.stats.damping_slabs += 1;
            self.stabilization.steps_left = m - taken - 1;
            taken += 1;
        }
        Ok(taken)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_slab;
    use crate::method::Method;
    use crate::problems::{make_test_equation, OdeProblem};
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn scheme(m: Method) -> Arc<Scheme> {
        Arc::new(Scheme::new(m).unwrap())
    }

    fn tight() -> IterationConfig {
        IterationConfig { tol: 1e-14, max_iter: 400, ..IterationConfig::default() }
    }

    #[test]
    fn mcg1_sweep_reaches_the_trapezoidal_fixed_point() {
        let p = make_test_equation(1.0).unwrap();
        let sc = scheme(Method::mcg(1));
        let mut slab = build_slab(0.0, 1.0, &[1.0], 1, &[1.0]).unwrap();
        let out = sweep_slab(&mut slab, &sc, &p, &tight(), &mut EvalCounter::default(), 0).unwrap();
        assert!(out.converged);
        assert!((slab.elements[0][0].end_value() - 1.0 / 3.0).abs() < 1e-13);
        assert!((out.ratio - 0.5).abs() < 1e-6);
    }

    #[test]
    fn mdg0_sweep_is_backward_euler() {
        let p = make_test_equation(1.0).unwrap();
        let sc = scheme(Method::mdg(0));
        let mut slab = build_slab(0.0, 0.5, &[0.5], 0, &[1.0]).unwrap();
        let out = sweep_slab(&mut slab, &sc, &p, &tight(), &mut EvalCounter::default(), 0).unwrap();
        assert!(out.converged);
        assert!((slab.elements[0][0].end_value() - 1.0 / 1.5).abs() < 1e-13);
        // k lambda = 1 is marginal: the iteration neither converges nor diverges.
        let mut slab = build_slab(0.0, 1.0, &[1.0], 0, &[1.0]).unwrap();
        let out = sweep_slab(&mut slab, &sc, &p, &tight(), &mut EvalCounter::default(), 0).unwrap();
        assert!(!out.converged && !out.diverged);
        assert!((out.ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_rhs_converges_in_one_pass() {
        let p = OdeProblem::new("zero", vec![2.0, -1.0], 1.0, |_, _, out| out.fill(0.0)).unwrap();
        let sc = scheme(Method::mcg(2));
        let mut slab = build_slab(0.0, 0.5, &[0.5, 0.1], 2, &[2.0, -1.0]).unwrap();
        let out = sweep_slab(&mut slab, &sc, &p, &tight(), &mut EvalCounter::default(), 0).unwrap();
        assert!(out.converged);
        assert_eq!(out.passes, 1);
        assert!(slab.elements[0].iter().all(|e| e.dofs.iter().all(|&d| d == 2.0)));
        assert!(slab.elements[1].iter().all(|e| e.dofs.iter().all(|&d| d == -1.0)));
    }

    #[test]
    fn stiff_sweep_diverges() {
        let p = make_test_equation(1000.0).unwrap();
        let sc = scheme(Method::mcg(1));
        let mut slab = build_slab(0.0, 0.1, &[0.1], 1, &[1.0]).unwrap();
        let out = sweep_slab(&mut slab, &sc, &p, &tight(), &mut EvalCounter::default(), 0).unwrap();
        assert!(out.diverged);
        // rho = K lambda / 2 for mcG(1), so the estimate is lambda / 2.
        let rate = estimate_rate(&out.history, 0.1);
        assert!((rate - 500.0).abs() < 1e-6 * 500.0, "{rate}");
    }

    #[test]
    fn rate_estimates() {
        let doubling = [1.0, 2.0, 4.0, 8.0];
        assert!((estimate_rate(&doubling, 0.001) - 2000.0).abs() < 1e-9);
        assert!((estimate_rate(&[3.0, 3.0, 3.0], 0.5) - 2.0).abs() < 1e-12);
        assert_eq!(estimate_rate(&[1.0], 0.5), 0.0);
        assert!(is_converging(&[4.0, 2.0]));
        assert!(!is_converging(&[2.0, 4.0]));
    }

    #[test]
    fn damping_counts() {
        assert_eq!(stabilize_count(100.0, 1.0, 0.5).0, 7);
        assert!(0.5f64.powi(7) * 99.0 <= 1.0);
        assert_eq!(stabilize_count(2.0, 1.0, 0.5).0, 0);
        assert_eq!(stabilize_count(1.0, 1000.0, 0.5).0, 10);
        let (m, k) = stabilize_count(0.1, 1000.0, 0.5);
        assert_eq!(m, 7);
        assert_eq!(k, 0.0005);
        assert_eq!(stabilize_count(10.0, 1.0, 1.0).0, 1);
    }

    #[test]
    fn cost_examples() {
        let rec = |k: f64, phase| StepRecord { t: 0.0, k, phase, passes: 1, increment: 0.0, elements: 1 };
        let mut trace = vec![rec(0.1, Phase::Normal)];
        trace.extend((0..7).map(|_| rec(0.0005, Phase::Damping)));
        assert!((cost(&trace, 1).unwrap() - 8.0 / 0.1035).abs() < 1e-9);
        let uniform: Vec<StepRecord> = (0..20).map(|_| rec(0.05, Phase::Normal)).collect();
        assert!((cost(&uniform, 1).unwrap() - 20.0).abs() < 1e-9);
        assert!(cost(&[], 1).is_err());
    }

    #[test]
    fn step_trace_round_trip() {
        let trace = vec![
            StepRecord { t: 0.0, k: 0.1, phase: Phase::Normal, passes: 3, increment: 1e-12, elements: 4 },
            StepRecord { t: 0.1, k: 1.0 / 3.0, phase: Phase::Damping, passes: 9, increment: 2.5e-11, elements: 2 },
        ];
        let mut buf = Vec::new();
        write_step_trace(&trace, &mut buf).unwrap();
        assert_eq!(read_step_trace(buf.as_slice()).unwrap(), trace);
        assert!(read_step_trace("t,k\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn nonstiff_advance_never_damps() {
        let p = make_test_equation(1.0).unwrap();
        let sc = scheme(Method::mcg(1));
        let mut solver = SlabSolver::new(&p, sc.clone(), IterationConfig::default()).unwrap();
        let mut traj = Trajectory::new(sc, p.initial().to_vec());
        while traj.t_end() < p.t_final() {
            solver.advance(&mut traj, &[0.1], 0.1).unwrap();
        }
        assert_eq!(solver.stats.damping_slabs, 0);
        assert!(solver.trace.iter().all(|r| r.phase == Phase::Normal));
        assert_eq!(traj.t_end(), 10.0);
        let err = (traj.end_values()[0] - (-10.0f64).exp()).abs();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn stiff_advance_inserts_damping_steps() {
        let p = make_test_equation(1000.0).unwrap();
        let sc = scheme(Method::mcg(1));
        let mut solver = SlabSolver::new(&p, sc.clone(), IterationConfig::default()).unwrap();
        let mut traj = Trajectory::new(sc, p.initial().to_vec());
        let adv = solver.advance(&mut traj, &[0.1], 0.1).unwrap();
        assert!(adv.damping_slabs > 0);
        assert!(adv.large_slab.is_some());
        for &k in &solver.damping_steps {
            assert!(k * 500.0 <= 0.5 + 1e-9);
        }
        assert!(traj.end_values()[0].abs() < 1e-3);
    }

    #[test]
    fn sweeps_are_deterministic() {
        let p = make_test_equation(1000.0).unwrap();
        let run = || {
            let sc = scheme(Method::mcg(1));
            let mut solver = SlabSolver::new(&p, sc.clone(), IterationConfig::default()).unwrap();
            let mut traj = Trajectory::new(sc, p.initial().to_vec());
            for _ in 0..5 {
                solver.advance(&mut traj, &[0.05], 0.05).unwrap();
            }
            (solver.trace, solver.counter)
        };
        assert_eq!(run(), run());
    }

    /// Solves the element equations of a scalar linear problem directly:
    /// (I + k lambda W) xi = left for the dofs updated by the weight rows.
    fn direct_solution(sc: &Scheme, lambda: f64, k: f64, left: f64) -> Vec<f64> {
        let n = sc.dofs_per_element();
        let mut a = DMatrix::<f64>::identity(n, n);
        for m in 0..n {
            for j in 0..n {
                a[(m, j)] += k * lambda * sc.weights.get(m, j);
            }
        }
        let x = a.lu().solve(&DVector::from_element(n, left)).unwrap();
        x.iter().copied().collect()
    }

    proptest! {
        #[test]
        fn contraction_certificate(q in 0usize..4, dg in any::<bool>(), frac in 0.05f64..0.9, lambda in 0.1f64..100.0) {
            let method = if dg { Method::mdg(q) } else { Method::mcg(q + 1) };
            let sc = scheme(method);
            let k = frac / (lambda * sc.weights.max_row_sum());
            let p = make_test_equation(lambda).unwrap().with_t_final(10.0 * k).unwrap();
            let mut slab = build_slab(0.0, k, &[k], method.q, &[1.0]).unwrap();
            // Increments are scaled by 1/k, so roundoff alone gives about 1e-14 / k.
            let cfg = IterationConfig { tol: 1e-11, max_iter: 4000, ..IterationConfig::default() };
            let out = sweep_slab(&mut slab, &sc, &p, &cfg, &mut EvalCounter::default(), 0).unwrap();
            prop_assert!(out.converged);
            let direct = direct_solution(&sc, lambda, k, 1.0);
            for (a, b) in slab.elements[0][0].dofs.iter().zip(&direct) {
                prop_assert!((a - b).abs() <= 1e-11, "{} vs {}", a, b);
            }
        }

        #[test]
        fn stabilization_inequality(x in 2.1f64..1e6, c in 0.1f64..1.5, rate in 1e-3f64..1e4) {
            let k_slab = x / rate;
            let (m, k) = stabilize_count(k_slab, rate, c);
            prop_assert!((k * rate - c).abs() <= 1e-12);
            let a = (1.0 - c).abs();
            let y = k_slab * rate - 1.0;
            prop_assert!(a.powi(m as i32) * y <= 1.0);
            prop_assert!(m == 0 || a.powi(m as i32 - 1) * y > 1.0);
        }
    }
}

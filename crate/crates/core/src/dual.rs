//! The linearized backward (dual) problem, stability factors, and the
//! a posteriori error representation and estimate at the final time.
//!
//! The dual -phi' = J^T phi with J = df/du(U(t), t) is solved backward from
//! phi(T) by cG(1) (Crank-Nicolson) on a uniform mesh, so phi is stored as a
//! continuous piecewise linear function.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mesh::{Element, TimeSlab, Trajectory};
use crate::method::{gauss_rule, MethodKind, Scheme};
use crate::problems::{EvalCounter, OdeProblem};

/// Hard cap on dual steps.
pub const MAX_DUAL_STEPS: usize = 1_000_000;
/// Cap on stored dual values, (steps + 1) * N.
pub const MAX_DUAL_VALUES: usize = 50_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualData {
    /// Normalized standard normal vector from a seeded generator.
    Random { seed: u64 },
    /// phi(T) = e_i: the representation gives the error of component i.
    Unit(usize),
    Given(Vec<f64>),
}

impl DualData {
    pub fn terminal(&self, dim: usize) -> Result<Vec<f64>> {
        match self {
            DualData::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                Ok(v.into_iter().map(|x| x / norm).collect())
            }
            DualData::Unit(i) => {
                if *i >= dim {
                    return Err(invalid(format!("unit dual component {i} out of range")));
                }
                let mut v = vec![0.0; dim];
                v[*i] = 1.0;
                Ok(v)
            }
            DualData::Given(v) => {
                if v.len() != dim || v.iter().any(|x| !x.is_finite()) {
                    return Err(invalid("dual data has the wrong length or is not finite"));
                }
                Ok(v.clone())
            }
        }
    }
}

/// Piecewise linear phi on the uniform mesh t_j = j T / steps.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub t_final: f64,
    pub steps: usize,
    pub dim: usize,
    pub data: DualData,
    /// values[j * dim + i] = phi_i(t_j).
    values: Vec<f64>,
}

impl DualSolution {
    pub fn dt(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    pub fn node_time(&self, j: usize) -> f64 {
        if j == self.steps {
            self.t_final
        } else {
            self.t_final * j as f64 / self.steps as f64
        }
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn value(&self, i: usize, t: f64) -> f64 {
        let x = (t / self.dt()).clamp(0.0, self.steps as f64);
        let j = (x.floor() as usize).min(self.steps - 1);
        let theta = x - j as f64;
        let a = self.values[j * self.dim + i];
        let b = self.values[(j + 1) * self.dim + i];
        a + theta * (b - a)
    }
}

/// Dual step count: half the smallest primal element, within the caps.
pub fn dual_steps_for(traj: &Trajectory) -> usize {
    let t_final = traj.t_end();
    let k_min = traj
        .slabs()
        .iter()
        .flat_map(|s| s.elements.iter().map(|l| l[0].k()))
        .fold(f64::INFINITY, f64::min);
    let wanted = if k_min.is_finite() && k_min > 0.0 { (2.0 * t_final / k_min).ceil() } else { 1.0 };
    let cap = MAX_DUAL_STEPS.min(MAX_DUAL_VALUES / traj.dim().max(1) - 1);
    (wanted as usize).clamp(1, cap)
}

/// Solves the dual backward from T with (I - dt/2 J^T) phi_j = (I + dt/2 J^T) phi_{j+1},
/// J taken at the primal solution at the interval midpoint.
pub fn solve_dual(
    traj: &Trajectory,
    problem: &OdeProblem,
    data: DualData,
    steps: usize,
    counter: &mut EvalCounter,
) -> Result<DualSolution> {
    let mut duals = solve_duals(traj, problem, vec![data], steps, counter)?;
    Ok(duals.pop().expect("one dual"))
}

/// Solves several duals on the same mesh, sharing Jacobians and
/// factorizations. The batch is split so that the stored values stay under
/// MAX_DUAL_VALUES.
pub fn solve_duals(
    traj: &Trajectory,
    problem: &OdeProblem,
    data: Vec<DualData>,
    steps: usize,
    counter: &mut EvalCounter,
) -> Result<Vec<DualSolution>> {
    if steps == 0 {
        return Err(invalid("dual needs at least one step"));
    }
    let n = problem.dim();
    let per_dual = (steps + 1) * n;
    let batch = (MAX_DUAL_VALUES / per_dual).max(1);
    let mut out = Vec::with_capacity(data.len());
    let mut data = data.into_iter().peekable();
    while data.peek().is_some() {
        let group: Vec<DualData> = data.by_ref().take(batch).collect();
        out.extend(solve_dual_batch(traj, problem, group, steps, counter)?);
    }
    Ok(out)
}

fn solve_dual_batch(
    traj: &Trajectory,
    problem: &OdeProblem,
    data: Vec<DualData>,
    steps: usize,
    counter: &mut EvalCounter,
) -> Result<Vec<DualSolution>> {
    let n = problem.dim();
    let t_final = traj.t_end();
    if !(t_final > 0.0) {
        return Err(invalid("primal trajectory is empty"));
    }
    let g = data.len();
    let mut phi = DMatrix::zeros(n, g);
    let mut values = Vec::with_capacity(g);
    for (c, d) in data.iter().enumerate() {
        let terminal = d.terminal(n)?;
        phi.column_mut(c).copy_from_slice(&terminal);
        let mut v = vec![0.0; (steps + 1) * n];
        v[steps * n..].copy_from_slice(&terminal);
        values.push(v);
    }
    let dt = t_final / steps as f64;
    let mut cached: Option<(DMatrix<f64>, nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>, DMatrix<f64>)> = None;
    for j in (0..steps).rev() {
        let t_mid = dt * (j as f64 + 0.5);
        let jac = if problem.is_linear() && cached.is_some() {
            None
        } else {
            let u = traj.state(t_mid)?;
            Some(problem.eval_jacobian(&u, t_mid, counter)?)
        };
        let reuse = match (&jac, &cached) {
            (None, Some(_)) => true,
            (Some(jm), Some((prev, _, _))) => jm == prev,
            _ => false,
        };
        if !reuse {
            let jm = jac.expect("fresh Jacobian");
            let jt = jm.transpose();
            let lhs = DMatrix::identity(n, n) - &jt * (dt / 2.0);
            let rhs = DMatrix::identity(n, n) + &jt * (dt / 2.0);
            cached = Some((jm, lhs.lu(), rhs));
        }
        let (_, lu, rhs) = cached.as_ref().expect("factorization");
        let b = rhs * &phi;
        phi = lu.solve(&b).ok_or(Error::DualBlowUp { t: t_mid })?;
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::DualBlowUp { t: dt * j as f64 });
        }
        for (c, v) in values.iter_mut().enumerate() {
            v[j * n..(j + 1) * n].copy_from_slice(phi.column(c).as_slice());
        }
    }
    Ok(data
        .into_iter()
        .zip(values)
        .map(|(data, values)| DualSolution { t_final, steps, dim: n, data, values })
        .collect())
}

/// Writes phi on t_j = j T / samples as CSV with columns t, phi1..phiN.
pub fn write_dual_csv<W: std::io::Write>(dual: &DualSolution, samples: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let fail = |e: csv::Error| Error::Parse { line: 0, message: e.to_string() };
    let mut header = vec!["t".to_string()];
    header.extend((1..=dual.dim).map(|i| format!("phi{i}")));
    w.write_record(&header).map_err(fail)?;
    let samples = samples.max(1);
    for j in 0..=samples {
        let t = if j == samples { dual.t_final } else { dual.t_final * j as f64 / samples as f64 };
        let mut row = vec![t.to_string()];
        row.extend((0..dual.dim).map(|i| dual.value(i, t).to_string()));
        w.write_record(&row).map_err(fail)?;
    }
    w.flush().map_err(|e| Error::Parse { line: 0, message: e.to_string() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityFactors {
    pub order: usize,
    pub values: Vec<f64>,
}

/// S_i = integral over [0, T] of |phi_i^(p)|. Exact for p = 1 on the piecewise
/// linear dual; for p >= 2 the derivative comes from p-th divided differences
/// of the nodal values and the integral from the trapezoidal rule.
pub fn stability_factors(dual: &DualSolution, p: usize) -> StabilityFactors {
    let n = dual.dim;
    let dt = dual.dt();
    let values = (0..n)
        .map(|i| {
            let nodes: Vec<f64> = (0..=dual.steps).map(|j| dual.node(j)[i]).collect();
            match p {
                0 => trapezoid(&nodes.iter().map(|v| v.abs()).collect::<Vec<_>>(), dt),
                1 => nodes.windows(2).map(|w| (w[1] - w[0]).abs()).sum(),
                _ => {
                    if nodes.len() <= p {
                        return 0.0;
                    }
                    let mut d = nodes;
                    for _ in 0..p {
                        d = d.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
                    }
                    trapezoid(&d.iter().map(|v| v.abs()).collect::<Vec<_>>(), dt)
                }
            }
        })
        .collect();
    StabilityFactors { order: p, values }
}

fn trapezoid(samples: &[f64], h: f64) -> f64 {
    match samples.len() {
        0 => 0.0,
        1 => samples[0] * h,
        len => h * (samples.iter().sum::<f64>() - 0.5 * (samples[0] + samples[len - 1])),
    }
}

/// The error representation split by component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representation {
    pub total: f64,
    pub per_component: Vec<f64>,
}

/// Elements covering more dual intervals than this are integrated through
/// an interpolant of the residual instead of direct evaluation.
const DIRECT_INTERVALS: usize = 8;

/// Residual values of a trajectory at the quadrature points used by the
/// error representation on a given dual mesh, so that several duals on the
/// same mesh share the evaluations of f.
#[derive(Debug, Clone)]
pub struct ResidualSamples {
    t_final: f64,
    steps: usize,
    values: Vec<f64>,
}

/// Splits [a, b] at the nodes j t_final / steps into pieces (lo, hi, j)
/// with [lo, hi] inside dual interval j.
fn split_at_nodes(t_final: f64, steps: usize, a: f64, b: f64, out: &mut Vec<(f64, f64, usize)>) {
    out.clear();
    let node = |j: usize| if j >= steps { t_final } else { t_final * j as f64 / steps as f64 };
    let mut j = ((a / t_final * steps as f64).floor() as usize + 1).min(steps);
    while j > 0 && node(j - 1) > a {
        j -= 1;
    }
    while j < steps && node(j) <= a {
        j += 1;
    }
    let mut lo = a;
    while lo < b {
        let hi = if j <= steps { node(j).min(b) } else { b };
        let hi = if hi <= lo { b } else { hi };
        out.push((lo, hi, j.clamp(1, steps) - 1));
        lo = hi;
        j += 1;
    }
}

/// Newton divided differences of `values` at `nodes`, in place.
fn divided_differences(nodes: &[f64], values: &mut [f64]) {
    let n = nodes.len();
    for level in 1..n {
        for m in (level..n).rev() {
            values[m] = (values[m] - values[m - 1]) / (nodes[m] - nodes[m - level]);
        }
    }
}

fn newton_eval(nodes: &[f64], coeffs: &[f64], s: f64) -> f64 {
    let mut acc = coeffs[coeffs.len() - 1];
    for m in (0..coeffs.len() - 1).rev() {
        acc = coeffs[m] + (s - nodes[m]) * acc;
    }
    acc
}

/// Whether element e of component i is integrated through the interpolant
/// of its residual: it spans many dual intervals and no element of a
/// component it depends on ends inside it.
fn is_smooth(slab: &TimeSlab, problem: &OdeProblem, i: usize, e: &Element, dt: f64) -> bool {
    (e.k() / dt) as usize > DIRECT_INTERVALS && !has_interior_break(slab, problem.dependencies(i), e.t_begin, e.t_end)
}

/// Samples R_i for the representation on the dual mesh of `steps` uniform
/// intervals: q+4 Gauss points on smooth elements, otherwise q+2 Gauss
/// points on each piece of the element split at the dual nodes.
pub fn sample_residuals(
    traj: &Trajectory,
    problem: &OdeProblem,
    steps: usize,
    counter: &mut EvalCounter,
) -> Result<ResidualSamples> {
    let scheme = traj.scheme();
    let q = scheme.method.q;
    let rule = gauss_rule(q + 2)?;
    let sample_rule = gauss_rule(q + 4)?;
    let t_final = traj.t_end();
    let dt = t_final / steps as f64;
    let mut state = problem.initial().to_vec();
    let mut pieces = Vec::new();
    let mut values = Vec::new();
    for slab in traj.slabs() {
        for i in 0..problem.dim() {
            for e in &slab.elements[i] {
                if is_smooth(slab, problem, i, e, dt) {
                    for &s in &sample_rule.points {
                        let t = e.t_begin + e.k() * s;
                        values.push(residual_at(slab, scheme, problem, i, e, t, &mut state, counter)?);
                    }
                } else {
                    split_at_nodes(t_final, steps, e.t_begin, e.t_end, &mut pieces);
                    for &(a, b, _) in &pieces {
                        for &s in &rule.points {
                            let t = a + (b - a) * s;
                            values.push(residual_at(slab, scheme, problem, i, e, t, &mut state, counter)?);
                        }
                    }
                }
            }
        }
    }
    Ok(ResidualSamples { t_final, steps, values })
}

/// (e(T), phi(T)) = -sum over elements of the integral of R_i phi_i, minus
/// sum of [U_i] phi_i at the left element ends for mdG. Each element is
/// split at the dual mesh nodes and integrated with q+2 Gauss points. On
/// elements spanning many dual intervals where R_i is smooth (no element
/// break of another component inside), R_i is sampled at q+4 Gauss points
/// and its interpolant is integrated instead.
pub fn error_representation(
    traj: &Trajectory,
    dual: &DualSolution,
    problem: &OdeProblem,
    counter: &mut EvalCounter,
) -> Result<Representation> {
    let samples = sample_residuals(traj, problem, dual.steps, counter)?;
    let mut reps = representations_from_samples(traj, &[dual], problem, &samples)?;
    Ok(reps.pop().expect("one representation"))
}

/// The error representations for several duals on one mesh from residuals
/// sampled on that mesh.
pub fn representations_from_samples(
    traj: &Trajectory,
    duals: &[&DualSolution],
    problem: &OdeProblem,
    samples: &ResidualSamples,
) -> Result<Vec<Representation>> {
    if duals.iter().any(|d| samples.steps != d.steps || samples.t_final != d.t_final) {
        return Err(invalid("residual samples were taken on a different dual mesh"));
    }
    let scheme = traj.scheme();
    let q = scheme.method.q;
    let rule = gauss_rule(q + 2)?;
    let sample_rule = gauss_rule(q + 4)?;
    let n = problem.dim();
    let (t_final, steps) = (samples.t_final, samples.steps);
    let dt = t_final / steps as f64;
    let mut per_component = vec![vec![0.0; n]; duals.len()];
    let mut integral = vec![0.0; duals.len()];
    let mut pieces = Vec::new();
    let mut coeffs = vec![0.0; sample_rule.len()];
    let mut residuals = vec![0.0; rule.len()];
    let mut next = samples.values.iter();
    let mismatch = || invalid("residual samples do not match the trajectory");
    for slab in traj.slabs() {
        for i in 0..n {
            for e in &slab.elements[i] {
                split_at_nodes(t_final, steps, e.t_begin, e.t_end, &mut pieces);
                let smooth = is_smooth(slab, problem, i, e, dt);
                if smooth {
                    for c in coeffs.iter_mut() {
                        *c = *next.next().ok_or_else(mismatch)?;
                    }
                    divided_differences(&sample_rule.points, &mut coeffs);
                }
                integral.fill(0.0);
                for &(a, b, j) in &pieces {
                    let t_j = j as f64 * dt;
                    for (r, &s) in residuals.iter_mut().zip(&rule.points) {
                        *r = if smooth {
                            let t = a + (b - a) * s;
                            newton_eval(&sample_rule.points, &coeffs, (t - e.t_begin) / e.k())
                        } else {
                            *next.next().ok_or_else(mismatch)?
                        };
                    }
                    for (d, dual) in duals.iter().enumerate() {
                        let (left, right) = (dual.values[j * n + i], dual.values[(j + 1) * n + i]);
                        let mut sum = 0.0;
                        for ((&s, &w), &r) in rule.points.iter().zip(&rule.weights).zip(&residuals) {
                            let theta = (a + (b - a) * s - t_j) / dt;
                            sum += w * r * (left + theta * (right - left));
                        }
                        integral[d] += (b - a) * sum;
                    }
                }
                for (d, dual) in duals.iter().enumerate() {
                    per_component[d][i] -= integral[d];
                    if scheme.method.kind == MethodKind::Mdg {
                        per_component[d][i] -= e.jump(&scheme.basis) * dual.value(i, e.t_begin);
                    }
                }
            }
        }
    }
    if next.next().is_some() {
        return Err(mismatch());
    }
    Ok(per_component
        .into_iter()
        .map(|per_component| Representation { total: per_component.iter().sum(), per_component })
        .collect())
}

/// True when an element of one of the components `deps` (all components
/// when None) ends strictly inside (a, b).
fn has_interior_break(slab: &TimeSlab, deps: Option<&[usize]>, a: f64, b: f64) -> bool {
    let slack = 1e-9 * (b - a);
    let breaks = |list: &Vec<Element>| list.iter().any(|e| e.t_end > a + slack && e.t_end < b - slack);
    match deps {
        Some(deps) => deps.iter().any(|&d| breaks(&slab.elements[d])),
        None => slab.elements.iter().any(breaks),
    }
}

#[allow(clippy::too_many_arguments)]
fn residual_at(
    slab: &TimeSlab,
    scheme: &Scheme,
    problem: &OdeProblem,
    i: usize,
    e: &crate::mesh::Element,
    t: f64,
    state: &mut [f64],
    counter: &mut EvalCounter,
) -> Result<f64> {
    slab.fill_state(&scheme.basis, t, problem.dependencies(i), state);
    state[i] = e.value(&scheme.basis, t);
    Ok(e.derivative(&scheme.basis, t) - problem.eval_component(i, state, t, counter)?)
}

/// Local residual measure r_ij of element j of component i in a slab: the
/// largest |R_i| over q+3 Gauss points, plus |[U_i]| / k for mdG.
pub fn residual_measure(
    slab: &TimeSlab,
    scheme: &Scheme,
    problem: &OdeProblem,
    i: usize,
    j: usize,
    counter: &mut EvalCounter,
) -> Result<f64> {
    let rule = gauss_rule(scheme.method.q + 3)?;
    let e = &slab.elements[i][j];
    let mut state = problem.initial().to_vec();
    let mut r: f64 = 0.0;
    for &s in &rule.points {
        let t = e.t_begin + e.k() * s;
        r = r.max(residual_at(slab, scheme, problem, i, e, t, &mut state, counter)?.abs());
    }
    if scheme.method.kind == MethodKind::Mdg {
        r += e.jump(&scheme.basis).abs() / e.k();
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// Error measure used for stopping, built from error representations.
    pub representation: f64,
    /// The a priori-weighted bound sum_i S_i max_j C k_ij^p r_ij.
    pub estimate: f64,
    /// S_i max_j C k_ij^p r_ij for each component.
    pub contributions: Vec<f64>,
    pub per_component_s: Vec<f64>,
    /// Largest residual measure of each component over the run.
    pub residuals: Vec<f64>,
    #[serde(rename = "C")]
    pub c: f64,
    pub seed: u64,
}

/// Assembles the bound from the stability factors and the residual measures.
pub fn error_estimate(
    traj: &Trajectory,
    problem: &OdeProblem,
    factors: &StabilityFactors,
    c: f64,
    counter: &mut EvalCounter,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let scheme = traj.scheme();
    let p = scheme.method.estimate_order() as i32;
    let n = problem.dim();
    let mut weighted = vec![0.0f64; n];
    let mut residuals = vec![0.0f64; n];
    for slab in traj.slabs() {
        for i in 0..n {
            for j in 0..slab.elements[i].len() {
                let r = residual_measure(slab, scheme, problem, i, j, counter)?;
                let k = slab.elements[i][j].k();
                weighted[i] = weighted[i].max(c * k.powi(p) * r);
                residuals[i] = residuals[i].max(r);
            }
        }
    }
    let contributions: Vec<f64> = weighted.iter().zip(&factors.values).map(|(w, s)| w * s).collect();
    Ok((contributions.iter().sum(), contributions, residuals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Trajectory;
    use crate::method::{Method, Scheme};
    use crate::problems::{make_test_equation, OdeProblem};
    use crate::solver::{IterationConfig, SlabSolver};
    use std::sync::Arc;

    fn solve(problem: &OdeProblem, method: Method, k: f64) -> Trajectory {
        let sc = Arc::new(Scheme::new(method).unwrap());
        let cfg = IterationConfig { tol: 1e-13, max_iter: 400, stabilize: false, ..IterationConfig::default() };
        let mut solver = SlabSolver::new(problem, sc.clone(), cfg).unwrap();
        let mut traj = Trajectory::new(sc, problem.initial().to_vec());
        let steps = vec![k; problem.dim()];
        while traj.t_end() < problem.t_final() {
            solver.advance(&mut traj, &steps, k).unwrap();
        }
        traj
    }

    #[test]
    fn test_equation_dual_is_an_exponential() {
        let p = make_test_equation(2.0).unwrap().with_t_final(1.0).unwrap();
        let traj = solve(&p, Method::mcg(1), 0.1);
        let mut errs = Vec::new();
        for steps in [100, 200] {
            let d = solve_dual(&traj, &p, DualData::Unit(0), steps, &mut EvalCounter::default()).unwrap();
            let err = (0..=steps)
                .map(|j| (d.node(j)[0] - (-2.0 * (1.0 - d.node_time(j))).exp()).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        assert!(errs[0] < 1e-3);
        assert!((errs[0] / errs[1] - 4.0).abs() < 0.2, "{errs:?}");
    }

    #[test]
    fn zero_rhs_gives_constant_dual_and_zero_factors() {
        let p = OdeProblem::new("still", vec![1.0, 2.0], 1.0, |_, _, o| o.fill(0.0)).unwrap();
        let traj = solve(&p, Method::mdg(1), 0.25);
        let d = solve_dual(&traj, &p, DualData::Random { seed: 7 }, 16, &mut EvalCounter::default()).unwrap();
        let end = d.node(16).to_vec();
        assert!(((end[0] * end[0] + end[1] * end[1]).sqrt() - 1.0).abs() < 1e-15);
        for j in 0..16 {
            assert_eq!(d.node(j), end.as_slice());
        }
        for order in 1..4 {
            assert!(stability_factors(&d, order).values.iter().all(|&s| s == 0.0));
        }
        let rep = error_representation(&traj, &d, &p, &mut EvalCounter::default()).unwrap();
        assert!(rep.total.abs() < 1e-12);
    }

    #[test]
    fn stability_factor_of_linear_dual() {
        let values: Vec<f64> = (0..=10).map(|j| 2.0 - 0.2 * j as f64).collect();
        let d = DualSolution { t_final: 2.0, steps: 10, dim: 1, data: DualData::Unit(0), values };
        assert!((stability_factors(&d, 1).values[0] - 2.0).abs() < 1e-12);
        assert!(stability_factors(&d, 2).values[0].abs() < 1e-9);
    }

    #[test]
    fn representation_matches_true_error() {
        for (method, k) in [(Method::mdg(0), 0.5), (Method::mcg(1), 0.25), (Method::mdg(1), 0.25)] {
            let p = make_test_equation(1.0).unwrap().with_t_final(1.0).unwrap();
            let traj = solve(&p, method, k);
            let err = (-1.0f64).exp() - traj.end_values()[0];
            let d = solve_dual(&traj, &p, DualData::Unit(0), 4000, &mut EvalCounter::default()).unwrap();
            let rep = error_representation(&traj, &d, &p, &mut EvalCounter::default()).unwrap();
            assert!((rep.total - err).abs() < 1e-3 * err.abs(), "{method}: {} vs {err}", rep.total);
        }
    }

    #[test]
    fn representation_is_stable_under_dual_refinement() {
        let p = crate::problems::make_test_system(&[1.0, 3.0]).unwrap().with_t_final(2.0).unwrap();
        let traj = solve(&p, Method::mcg(1), 0.1);
        let reps: Vec<f64> = [160, 640]
            .iter()
            .map(|&n| {
                let d = solve_dual(&traj, &p, DualData::Random { seed: 3 }, n, &mut EvalCounter::default()).unwrap();
                error_representation(&traj, &d, &p, &mut EvalCounter::default()).unwrap().total
            })
            .collect();
        assert!((reps[0] - reps[1]).abs() <= 0.01 * reps[1].abs(), "{reps:?}");
    }

    #[test]
    fn residual_free_solution_has_zero_estimate() {
        let p = OdeProblem::new("ramp", vec![0.0], 1.0, |_, _, o| o[0] = 1.0).unwrap();
        let traj = solve(&p, Method::mcg(1), 0.5);
        let d = solve_dual(&traj, &p, DualData::Unit(0), 8, &mut EvalCounter::default()).unwrap();
        let s = stability_factors(&d, 1);
        let (est, _, r) = error_estimate(&traj, &p, &s, 1.0, &mut EvalCounter::default()).unwrap();
        assert!(est.abs() < 1e-12 && r[0] < 1e-12);
    }

    #[test]
    fn random_data_is_seeded_and_normalized() {
        let a = DualData::Random { seed: 11 }.terminal(5).unwrap();
        let b = DualData::Random { seed: 11 }.terminal(5).unwrap();
        let c = DualData::Random { seed: 12 }.terminal(5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(DualData::Unit(5).terminal(5).is_err());
    }
}

//! ODE problems `u' = f(u, t)` on (0, T] and the benchmark constructors.
//!
//! A problem is immutable data plus functions. Evaluation work is tallied in
//! an [`EvalCounter`] owned by the run, never by the problem.

use nalgebra::DMatrix;
use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};

pub type RhsFn = dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync;
pub type ComponentFn = dyn Fn(usize, &[f64], f64) -> f64 + Send + Sync;
pub type JacobianFn = dyn Fn(&[f64], f64) -> DMatrix<f64> + Send + Sync;
pub type ExactFn = dyn Fn(f64) -> Vec<f64> + Send + Sync;

/// Largest mass count and cell count accepted by the constructors.
pub const MAX_SIZE: usize = 1_000_000;
/// Largest cell count of the heat problem, whose exact solution costs O(n^2) to set up.
pub const MAX_HEAT_CELLS: usize = 10_000;

/// Names accepted by [`problem_by_name`].
pub const PROBLEM_NAMES: [&str; 6] = [
    "test-equation",
    "test-system",
    "hires",
    "heat1d",
    "mass-spring",
    "reaction-diffusion",
];

#[derive(Clone)]
pub struct OdeProblem {
    name: String,
    params: Vec<(String, f64)>,
    dim: usize,
    initial: Vec<f64>,
    t_final: f64,
    rhs: Arc<RhsFn>,
    component: Option<Arc<ComponentFn>>,
    dependencies: Option<Arc<Vec<Vec<usize>>>>,
    jacobian: Option<Arc<JacobianFn>>,
    exact: Option<Arc<ExactFn>>,
    spectral_radius: Option<f64>,
    linear: bool,
}

impl fmt::Debug for OdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OdeProblem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("t_final", &self.t_final)
            .field("params", &self.params)
            .finish_non_exhaustive()
    }
}

/// Per-run tally of right-hand side and Jacobian work.
///
/// A full vector evaluation adds `dim` component evaluations, so
/// `function_evaluations` (full-vector equivalents) is the exact quotient
/// `component_evaluations / dim`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalCounter {
    pub component_evaluations: u64,
    pub jacobian_evaluations: u64,
}

impl EvalCounter {
    pub fn function_evaluations(&self, dim: usize) -> f64 {
        self.component_evaluations as f64 / dim as f64
    }

    pub fn merge(&mut self, other: &EvalCounter) {
        self.component_evaluations += other.component_evaluations;
        self.jacobian_evaluations += other.jacobian_evaluations;
    }
}

impl OdeProblem {
    pub fn new(
        name: impl Into<String>,
        initial: Vec<f64>,
        t_final: f64,
        rhs: impl Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        if initial.is_empty() {
            return Err(invalid("problem dimension must be at least 1"));
        }
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(invalid(format!("final time must be positive, got {t_final}")));
        }
        Ok(OdeProblem {
            name: name.into(),
            params: Vec::new(),
            dim: initial.len(),
            initial,
            t_final,
            rhs: Arc::new(rhs),
            component: None,
            dependencies: None,
            jacobian: None,
            exact: None,
            spectral_radius: None,
            linear: false,
        })
    }

    /// Component-wise right-hand side `f_i(u, t)`. It may only read the
    /// entries of `u` listed by [`OdeProblem::with_dependencies`] when those
    /// are given.
    pub fn with_component(
        mut self,
        f: impl Fn(usize, &[f64], f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.component = Some(Arc::new(f));
        self
    }

    pub fn with_dependencies(mut self, deps: Vec<Vec<usize>>) -> Result<Self> {
        if deps.len() != self.dim || deps.iter().flatten().any(|&j| j >= self.dim) {
            return Err(invalid("dependency lists must cover every component with valid indices"));
        }
        self.dependencies = Some(Arc::new(deps));
        Ok(self)
    }

    pub fn with_jacobian(
        mut self,
        jac: impl Fn(&[f64], f64) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    pub fn with_exact(mut self, exact: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.exact = Some(Arc::new(exact));
        self
    }

    /// Known spectral radius of a linear problem's Jacobian.
    pub fn with_spectral_radius(mut self, radius: f64) -> Self {
        self.spectral_radius = Some(radius);
        self
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.push((key.to_string(), value));
        self
    }

    fn mark_linear(mut self) -> Self {
        self.linear = true;
        self
    }

    pub fn with_t_final(mut self, t_final: f64) -> Result<Self> {
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(invalid(format!("final time must be positive, got {t_final}")));
        }
        self.t_final = t_final;
        Ok(self)
    }

    pub fn with_initial(mut self, initial: Vec<f64>) -> Result<Self> {
        if initial.len() != self.dim {
            return Err(invalid("initial state has the wrong length"));
        }
        self.initial = initial;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &[(String, f64)] {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn dependencies(&self, i: usize) -> Option<&[usize]> {
        self.dependencies.as_ref().map(|d| d[i].as_slice())
    }

    pub fn has_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn has_exact(&self) -> bool {
        self.exact.is_some()
    }

    pub fn is_linear(&self) -> bool {
        self.linear
    }

    pub fn spectral_radius(&self) -> Option<f64> {
        self.spectral_radius
    }

    pub fn exact(&self, t: f64) -> Option<Vec<f64>> {
        self.exact.as_ref().map(|e| e(t))
    }

    fn check_state(&self, u: &[f64], t: f64) -> Result<()> {
        if u.len() != self.dim {
            return Err(invalid(format!("state has length {}, expected {}", u.len(), self.dim)));
        }
        let slack = 1e-9 * self.t_final.max(1.0);
        if !(t >= -slack && t <= self.t_final + slack) {
            return Err(Error::OutOfRange { t, begin: 0.0, end: self.t_final });
        }
        Ok(())
    }

    /// f(u, t), counting one full evaluation.
    pub fn eval_rhs(&self, u: &[f64], t: f64, counter: &mut EvalCounter) -> Result<Vec<f64>> {
        self.check_state(u, t)?;
        let mut out = vec![0.0; self.dim];
        (self.rhs)(u, t, &mut out);
        counter.component_evaluations += self.dim as u64;
        if let Some(index) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::RhsOverflow { t, index });
        }
        Ok(out)
    }

    /// f_i(u, t). Problems without a component function fall back to a
    /// full evaluation and are charged for it.
    pub fn eval_component(
        &self,
        i: usize,
        u: &[f64],
        t: f64,
        counter: &mut EvalCounter,
    ) -> Result<f64> {
        let v = match &self.component {
            Some(f) => {
                counter.component_evaluations += 1;
                f(i, u, t)
            }
            None => {
                let mut out = vec![0.0; self.dim];
                (self.rhs)(u, t, &mut out);
                counter.component_evaluations += self.dim as u64;
                out[i]
            }
        };
        if !v.is_finite() {
            return Err(Error::RhsOverflow { t, index: i });
        }
        Ok(v)
    }

    /// df/du at (u, t): the analytic Jacobian when supplied, otherwise
    /// central differences.
    pub fn eval_jacobian(&self, u: &[f64], t: f64, counter: &mut EvalCounter) -> Result<DMatrix<f64>> {
        self.check_state(u, t)?;
        counter.jacobian_evaluations += 1;
        let jac = match &self.jacobian {
            Some(j) => j(u, t),
            None => self.finite_difference_jacobian(u, t, counter),
        };
        check_jacobian(&jac, t)?;
        Ok(jac)
    }

    /// Central-difference Jacobian with h_j = max(eps, eps |u_j|), eps = machine epsilon^(1/3).
    pub fn finite_difference_jacobian(&self, u: &[f64], t: f64, counter: &mut EvalCounter) -> DMatrix<f64> {
        let n = self.dim;
        let eps = fd_epsilon();
        let mut jac = DMatrix::zeros(n, n);
        let mut up = u.to_vec();
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];
        for j in 0..n {
            let h = eps.max(eps * u[j].abs());
            up[j] = u[j] + h;
            (self.rhs)(&up, t, &mut fp);
            up[j] = u[j] - h;
            (self.rhs)(&up, t, &mut fm);
            up[j] = u[j];
            for i in 0..n {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        counter.component_evaluations += 2 * (n * n) as u64;
        jac
    }
}

/// Relative (and absolute) finite-difference step: machine epsilon^(1/3).
pub fn fd_epsilon() -> f64 {
    f64::EPSILON.cbrt()
}

fn check_jacobian(jac: &DMatrix<f64>, t: f64) -> Result<()> {
    for c in 0..jac.ncols() {
        for r in 0..jac.nrows() {
            if !jac[(r, c)].is_finite() {
                return Err(Error::JacobianOverflow { t, row: r, col: c });
            }
        }
    }
    Ok(())
}

/// u' + lambda u = 0, u(0) = 1 on [0, 10].
pub fn make_test_equation(lambda: f64) -> Result<OdeProblem> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("rate must be positive, got {lambda}")));
    }
    Ok(OdeProblem::new("test-equation", vec![1.0], 10.0, move |u, _, out| {
        out[0] = -lambda * u[0];
    })?
    .with_component(move |_, u, _| -lambda * u[0])
    .with_dependencies(vec![vec![0]])?
    .with_jacobian(move |_, _| DMatrix::from_element(1, 1, -lambda))
    .with_exact(move |t| vec![(-lambda * t).exp()])
    .with_spectral_radius(lambda)
    .with_param("lambda", lambda)
    .mark_linear())
}

/// u' + A u = 0 with A = diag(rates), u(0) = (1, ..., 1) on [0, 10].
pub fn make_test_system(rates: &[f64]) -> Result<OdeProblem> {
    if rates.is_empty() {
        return Err(invalid("test system needs at least one rate"));
    }
    if rates.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(invalid("test system rates must be positive"));
    }
    let a: Arc<Vec<f64>> = Arc::new(rates.to_vec());
    let n = a.len();
    let (a1, a2, a3, a4) = (a.clone(), a.clone(), a.clone(), a.clone());
    let radius = rates.iter().cloned().fold(0.0, f64::max);
    let mut problem = OdeProblem::new("test-system", vec![1.0; n], 10.0, move |u, _, out| {
        for i in 0..u.len() {
            out[i] = -a1[i] * u[i];
        }
    })?
    .with_component(move |i, u, _| -a2[i] * u[i])
    .with_dependencies((0..n).map(|i| vec![i]).collect())?
    .with_jacobian(move |_, _| DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(a3.len(), a3.iter().map(|v| -v))))
    .with_exact(move |t| a4.iter().map(|v| (-v * t).exp()).collect())
    .with_spectral_radius(radius)
    .mark_linear();
    for (i, r) in rates.iter().enumerate() {
        problem = problem.with_param(&format!("rate{}", i + 1), *r);
    }
    Ok(problem)
}

/// The 8-component HIRES system on [0, 321.8122].
pub fn make_hires() -> OdeProblem {
    fn component(i: usize, u: &[f64]) -> f64 {
        match i {
            0 => -1.71 * u[0] + 0.43 * u[1] + 8.32 * u[2] + 0.0007,
            1 => 1.71 * u[0] - 8.75 * u[1],
            2 => -10.03 * u[2] + 0.43 * u[3] + 0.035 * u[4],
            3 => 8.32 * u[1] + 1.71 * u[2] - 1.12 * u[3],
            4 => -1.745 * u[4] + 0.43 * u[5] + 0.43 * u[6],
            5 => -280.0 * u[5] * u[7] + 0.69 * u[3] + 1.71 * u[4] - 0.43 * u[5] + 0.69 * u[6],
            6 => 280.0 * u[5] * u[7] - 1.81 * u[6],
            7 => -280.0 * u[5] * u[7] + 1.81 * u[6],
            _ => unreachable!(),
        }
    }
    let deps = vec![
        vec![0, 1, 2],
        vec![0, 1],
        vec![2, 3, 4],
        vec![1, 2, 3],
        vec![4, 5, 6],
        vec![3, 4, 5, 6, 7],
        vec![5, 6, 7],
        vec![5, 6, 7],
    ];
    OdeProblem::new(
        "hires",
        vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0057],
        321.8122,
        |u, _, out| {
            for (i, o) in out.iter_mut().enumerate() {
                *o = component(i, u);
            }
        },
    )
    .expect("valid HIRES data")
    .with_component(|i, u, _| component(i, u))
    .with_dependencies(deps)
    .expect("valid HIRES dependencies")
    .with_jacobian(|u, _| {
        let mut j = DMatrix::zeros(8, 8);
        j[(0, 0)] = -1.71;
        j[(0, 1)] = 0.43;
        j[(0, 2)] = 8.32;
        j[(1, 0)] = 1.71;
        j[(1, 1)] = -8.75;
        j[(2, 2)] = -10.03;
        j[(2, 3)] = 0.43;
        j[(2, 4)] = 0.035;
        j[(3, 1)] = 8.32;
        j[(3, 2)] = 1.71;
        j[(3, 3)] = -1.12;
        j[(4, 4)] = -1.745;
        j[(4, 5)] = 0.43;
        j[(4, 6)] = 0.43;
        j[(5, 3)] = 0.69;
        j[(5, 4)] = 1.71;
        j[(5, 5)] = -280.0 * u[7] - 0.43;
        j[(5, 6)] = 0.69;
        j[(5, 7)] = -280.0 * u[5];
        j[(6, 5)] = 280.0 * u[7];
        j[(6, 6)] = -1.81;
        j[(6, 7)] = 280.0 * u[5];
        j[(7, 5)] = -280.0 * u[7];
        j[(7, 6)] = 1.81;
        j[(7, 7)] = -280.0 * u[5];
        j
    })
}

/// Source term for the heat equation, sampled at the interior nodes.
pub enum HeatSource<'a> {
    /// Discrete delta of unit mass at the node nearest x = 0.5.
    Delta,
    Function(&'a dyn Fn(f64) -> f64),
}

/// u' + A u = f, u(0) = 0 on [0, 1]: central differences for -u'' on the
/// interior nodes of (0, 1) with homogeneous Dirichlet ends.
pub fn make_heat1d(h: f64, source: HeatSource<'_>) -> Result<OdeProblem> {
    let cells = (1.0 / h).round();
    if !(h > 0.0) || !h.is_finite() || cells < 2.0 || ((1.0 / h) - cells).abs() > 1e-9 * cells {
        return Err(invalid(format!("1/h must be an integer >= 2, got h = {h}")));
    }
    if cells > MAX_HEAT_CELLS as f64 {
        return Err(invalid(format!("h must be at least 1/{MAX_HEAT_CELLS}, got {h}")));
    }
    let n = cells as usize - 1;
    let inv_h2 = 1.0 / (h * h);
    let f: Vec<f64> = match source {
        HeatSource::Delta => {
            let mut f = vec![0.0; n];
            let nearest = ((0.5 / h).round() as usize).clamp(1, n);
            f[nearest - 1] = 1.0 / h;
            f
        }
        HeatSource::Function(g) => (1..=n).map(|j| g(j as f64 * h)).collect(),
    };
    // A = sum_k mu_k v_k v_k^T / |v_k|^2 with v_k(j) = sin(k pi j h), so
    // u(t) = sum_k (1 - exp(-mu_k t)) / mu_k (v_k . f) / |v_k|^2 v_k.
    let modes: Vec<(f64, f64)> = (1..=n)
        .map(|k| {
            let mu = 4.0 * inv_h2 * (k as f64 * std::f64::consts::PI * h / 2.0).sin().powi(2);
            let v = |j: usize| (k as f64 * std::f64::consts::PI * (j + 1) as f64 * h).sin();
            let dot: f64 = f.iter().enumerate().map(|(j, fj)| fj * v(j)).sum();
            let norm2: f64 = (0..n).map(|j| v(j) * v(j)).sum();
            (mu, dot / norm2)
        })
        .collect();
    let exact = move |t: f64| -> Vec<f64> {
        let mut u = vec![0.0; n];
        for (k, &(mu, coef)) in modes.iter().enumerate() {
            let a = -(-mu * t).exp_m1() / mu * coef;
            for (j, uj) in u.iter_mut().enumerate() {
                *uj += a * ((k + 1) as f64 * std::f64::consts::PI * (j + 1) as f64 * h).sin();
            }
        }
        u
    };
    let f = Arc::new(f);
    let (f1, f2) = (f.clone(), f.clone());
    let component = move |i: usize, u: &[f64], src: &[f64]| {
        let left = if i > 0 { u[i - 1] } else { 0.0 };
        let right = if i + 1 < u.len() { u[i + 1] } else { 0.0 };
        src[i] - inv_h2 * (2.0 * u[i] - left - right)
    };
    let deps = (0..n)
        .map(|i| (i.saturating_sub(1)..=(i + 1).min(n - 1)).collect())
        .collect();
    let radius = 4.0 * inv_h2 * (n as f64 * std::f64::consts::PI * h / 2.0).sin().powi(2);
    Ok(OdeProblem::new("heat1d", vec![0.0; n], 1.0, move |u, _, out| {
        for (i, o) in out.iter_mut().enumerate() {
            *o = component(i, u, &f1);
        }
    })?
    .with_component(move |i, u, _| component(i, u, &f2))
    .with_dependencies(deps)?
    .with_jacobian(move |_, _| {
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = -2.0 * inv_h2;
            if i > 0 {
                a[(i, i - 1)] = inv_h2;
            }
            if i + 1 < n {
                a[(i, i + 1)] = inv_h2;
            }
        }
        a
    })
    .with_spectral_radius(radius)
    .with_exact(exact)
    .with_param("h", h)
    .mark_linear())
}

/// The matrix A of the heat problem with mesh size h.
pub fn heat1d_stiffness(h: f64) -> Result<DMatrix<f64>> {
    let p = make_heat1d(h, HeatSource::Delta)?;
    let j = p.eval_jacobian(p.initial(), 0.0, &mut EvalCounter::default())?;
    Ok(-j)
}

/// A chain of point masses between two fixed walls, joined by springs of
/// equal stiffness. State layout is interleaved: component 2i is the
/// displacement of mass i and 2i+1 its velocity. Initially only mass 0 is
/// displaced, by one unit.
pub fn make_mass_spring(masses: &[f64], stiffness: f64) -> Result<OdeProblem> {
    let n = masses.len();
    if n < 2 {
        return Err(invalid("mass-spring chain needs at least two masses"));
    }
    if n > MAX_SIZE {
        return Err(invalid(format!("at most {MAX_SIZE} masses")));
    }
    if masses.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
        return Err(invalid("masses must be positive"));
    }
    if !(stiffness > 0.0 && stiffness.is_finite()) {
        return Err(invalid("stiffness must be positive"));
    }
    let m = Arc::new(masses.to_vec());
    let (m1, m2, m3) = (m.clone(), m.clone(), m.clone());
    let kappa = stiffness;
    let component = move |c: usize, u: &[f64], m: &[f64]| -> f64 {
        let i = c / 2;
        if c % 2 == 0 {
            u[c + 1]
        } else {
            let x = u[2 * i];
            let left = if i > 0 { u[2 * (i - 1)] } else { 0.0 };
            let right = if i + 1 < m.len() { u[2 * (i + 1)] } else { 0.0 };
            kappa * (left - 2.0 * x + right) / m[i]
        }
    };
    let deps = (0..2 * n)
        .map(|c| {
            let i = c / 2;
            if c % 2 == 0 {
                vec![c + 1]
            } else {
                (i.saturating_sub(1)..=(i + 1).min(n - 1)).map(|j| 2 * j).collect()
            }
        })
        .collect();
    let mut initial = vec![0.0; 2 * n];
    initial[0] = 1.0;
    let mut problem = OdeProblem::new("mass-spring", initial, 10.0, move |u, _, out| {
        for (c, o) in out.iter_mut().enumerate() {
            *o = component(c, u, &m1);
        }
    })?
    .with_component(move |c, u, _| component(c, u, &m2))
    .with_dependencies(deps)?
    .with_jacobian(move |_, _| {
        let n = m3.len();
        let mut j = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            j[(2 * i, 2 * i + 1)] = 1.0;
            j[(2 * i + 1, 2 * i)] = -2.0 * kappa / m3[i];
            if i > 0 {
                j[(2 * i + 1, 2 * (i - 1))] = kappa / m3[i];
            }
            if i + 1 < n {
                j[(2 * i + 1, 2 * (i + 1))] = kappa / m3[i];
            }
        }
        j
    })
    .with_param("n_masses", n as f64)
    .with_param("stiffness", stiffness)
    .mark_linear();
    problem = problem.with_param("small_mass", masses[0]);
    Ok(problem)
}

/// Default chain: one mass of 0.01 followed by n-1 unit masses, unit stiffness.
pub fn default_masses(n_masses: usize) -> Vec<f64> {
    let mut m = vec![1.0; n_masses];
    if let Some(first) = m.first_mut() {
        *first = 0.01;
    }
    m
}

/// Total mechanical energy of a mass-spring state.
pub fn mass_spring_energy(masses: &[f64], stiffness: f64, u: &[f64]) -> f64 {
    let n = masses.len();
    let kinetic: f64 = (0..n).map(|i| 0.5 * masses[i] * u[2 * i + 1].powi(2)).sum();
    let mut potential = 0.5 * stiffness * u[0].powi(2) + 0.5 * stiffness * u[2 * (n - 1)].powi(2);
    for i in 1..n {
        potential += 0.5 * stiffness * (u[2 * i] - u[2 * (i - 1)]).powi(2);
    }
    kinetic + potential
}

/// Auto-catalytic reaction A1 + 2 A2 -> 3 A2 with diffusion on (0, 1),
/// homogeneous Neumann ends mirrored through ghost nodes. Components
/// 0..=n_cells hold u1 at the nodes x_j = j/n_cells, the next n_cells+1
/// components hold u2.
pub fn make_reaction_diffusion(epsilon: f64, n_cells: usize, x0: f64) -> Result<OdeProblem> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(invalid("diffusion coefficient must be positive"));
    }
    if !(4..=MAX_SIZE).contains(&n_cells) {
        return Err(invalid(format!("reaction-diffusion needs between 4 and {MAX_SIZE} cells")));
    }
    if !(x0 > 0.0 && x0 < 1.0) {
        return Err(invalid("front position must lie in (0, 1)"));
    }
    let nodes = n_cells + 1;
    let dx = 1.0 / n_cells as f64;
    let d = epsilon / (dx * dx);
    let component = move |c: usize, u: &[f64]| -> f64 {
        let species = c / nodes;
        let j = c % nodes;
        let base = species * nodes;
        let left = if j == 0 { u[base + 1] } else { u[base + j - 1] };
        let right = if j == nodes - 1 { u[base + j - 1] } else { u[base + j + 1] };
        let diffusion = d * (left - 2.0 * u[c] + right);
        let (u1, u2) = (u[j], u[nodes + j]);
        let reaction = u1 * u2 * u2;
        if species == 0 {
            diffusion - reaction
        } else {
            diffusion + reaction
        }
    };
    let deps = (0..2 * nodes)
        .map(|c| {
            let species = c / nodes;
            let j = c % nodes;
            let base = species * nodes;
            let mut v: Vec<usize> = (j.saturating_sub(1)..=(j + 1).min(nodes - 1)).map(|k| base + k).collect();
            let other = if species == 0 { nodes + j } else { j };
            v.push(other);
            v.sort_unstable();
            v
        })
        .collect();
    let initial: Vec<f64> = (0..2 * nodes)
        .map(|c| {
            let x = (c % nodes) as f64 * dx;
            let u1 = if x < x0 { 0.0 } else { 1.0 };
            if c < nodes {
                u1
            } else {
                1.0 - u1
            }
        })
        .collect();
    Ok(OdeProblem::new("reaction-diffusion", initial, 100.0, move |u, _, out| {
        for (c, o) in out.iter_mut().enumerate() {
            *o = component(c, u);
        }
    })?
    .with_component(move |c, u, _| component(c, u))
    .with_dependencies(deps)?
    .with_jacobian(move |u, _| {
        let n = 2 * nodes;
        let mut jac = DMatrix::zeros(n, n);
        for species in 0..2 {
            let base = species * nodes;
            for j in 0..nodes {
                let c = base + j;
                jac[(c, c)] -= 2.0 * d;
                let left = if j == 0 { base + 1 } else { base + j - 1 };
                let right = if j == nodes - 1 { base + j - 1 } else { base + j + 1 };
                jac[(c, left)] += d;
                jac[(c, right)] += d;
                let (u1, u2) = (u[j], u[nodes + j]);
                let sign = if species == 0 { -1.0 } else { 1.0 };
                jac[(c, j)] += sign * u2 * u2;
                jac[(c, nodes + j)] += sign * 2.0 * u1 * u2;
            }
        }
        jac
    })
    .with_param("epsilon", epsilon)
    .with_param("n_cells", n_cells as f64)
    .with_param("x0", x0))
}

/// Parameters for [`problem_by_name`]; unset fields take each problem's defaults.
#[derive(Debug, Clone, Default)]
pub struct ProblemParams {
    pub lambda: Option<f64>,
    pub rates: Option<Vec<f64>>,
    pub h: Option<f64>,
    pub n_masses: Option<usize>,
    pub small_mass: Option<f64>,
    pub stiffness: Option<f64>,
    pub epsilon: Option<f64>,
    pub n_cells: Option<usize>,
    pub x0: Option<f64>,
    pub t_final: Option<f64>,
}

/// Builds a benchmark problem from its registry name.
pub fn problem_by_name(name: &str, p: &ProblemParams) -> Result<OdeProblem> {
    let problem = match name {
        "test-equation" => make_test_equation(p.lambda.unwrap_or(1000.0))?,
        "test-system" => make_test_system(p.rates.as_deref().unwrap_or(&[100.0, 1000.0]))?,
        "hires" => make_hires(),
        "heat1d" => make_heat1d(p.h.unwrap_or(0.01), HeatSource::Delta)?,
        "mass-spring" => {
            let n = p.n_masses.unwrap_or(5);
            if n > MAX_SIZE {
                return Err(invalid(format!("at most {MAX_SIZE} masses")));
            }
            let mut masses = default_masses(n);
            if let (Some(m), Some(first)) = (p.small_mass, masses.first_mut()) {
                *first = m;
            }
            make_mass_spring(&masses, p.stiffness.unwrap_or(1.0))?
        }
        "reaction-diffusion" => make_reaction_diffusion(
            p.epsilon.unwrap_or(0.001),
            p.n_cells.unwrap_or(100),
            p.x0.unwrap_or(0.2),
        )?,
        other => return Err(Error::UnknownProblem(other.to_string())),
    };
    match p.t_final {
        Some(t) => problem.with_t_final(t),
        None => Ok(problem),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn counter() -> EvalCounter {
        EvalCounter::default()
    }

    #[test]
    fn test_equation_rhs_and_exact() {
        let p = make_test_equation(1000.0).unwrap();
        assert_eq!(p.eval_rhs(&[1.0], 0.0, &mut counter()).unwrap(), vec![-1000.0]);
        assert!((p.exact(0.01).unwrap()[0] - (-10.0f64).exp()).abs() < 1e-18);
        assert_eq!(p.exact(10.0).unwrap()[0], 0.0);
        let p1 = make_test_equation(1.0).unwrap();
        assert!((p1.exact(1.0).unwrap()[0] - 0.36787944117144233).abs() < 1e-15);
        assert!(make_test_equation(0.0).is_err());
        assert!(make_test_equation(-3.0).is_err());
        assert_eq!(p.t_final(), 10.0);
    }

    #[test]
    fn rhs_is_deterministic_and_counted() {
        let p = make_hires();
        let mut c = counter();
        let u = [0.3, 0.1, 0.2, 0.05, 0.4, 0.2, 0.01, 0.0047];
        let a = p.eval_rhs(&u, 1.0, &mut c).unwrap();
        let b = p.eval_rhs(&u, 1.0, &mut c).unwrap();
        assert_eq!(a, b);
        assert_eq!(c.component_evaluations, 16);
        p.eval_component(3, &u, 1.0, &mut c).unwrap();
        assert_eq!(c.component_evaluations, 17);
        assert!((c.function_evaluations(8) - 17.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn hires_values() {
        let p = make_hires();
        assert_eq!(p.dim(), 8);
        assert_eq!(p.initial()[7], 0.0057);
        let f = p.eval_rhs(p.initial(), 0.0, &mut counter()).unwrap();
        assert!((f[0] - (-1.7093)).abs() < 1e-15);
        let j = p.eval_jacobian(p.initial(), 0.0, &mut counter()).unwrap();
        assert!((j[(6, 5)] - 1.596).abs() < 1e-12);
    }

    #[test]
    fn hires_last_two_equations_cancel() {
        // u7' + u8' = (280 u6 u8 - 1.81 u7) + (-280 u6 u8 + 1.81 u7) = 0
        let p = make_hires();
        let mut c = counter();
        for seed in 0..20 {
            let u: Vec<f64> = (0..8).map(|i| ((seed * 8 + i) as f64 * 0.37).sin().abs()).collect();
            let f = p.eval_rhs(&u, 0.0, &mut c).unwrap();
            assert!((f[6] + f[7]).abs() < 1e-12 * (1.0 + f[6].abs()));
        }
    }

    #[test]
    fn test_system_jacobian_is_diagonal() {
        let p = make_test_system(&[100.0, 1000.0]).unwrap();
        let j = p.eval_jacobian(&[0.5, 2.0], 3.0, &mut counter()).unwrap();
        assert_eq!(j[(0, 0)], -100.0);
        assert_eq!(j[(1, 1)], -1000.0);
        assert_eq!(j[(0, 1)], 0.0);
        let e = p.exact(0.01).unwrap();
        assert!((e[0] - (-1.0f64).exp()).abs() < 1e-15 && (e[1] - (-10.0f64).exp()).abs() < 1e-18);
        assert!(make_test_system(&[]).is_err());
    }

    #[test]
    fn heat_exact_solves_the_system() {
        let p = make_heat1d(0.05, HeatSource::Delta).unwrap();
        let a = heat1d_stiffness(0.05).unwrap();
        let f = p.eval_rhs(p.initial(), 0.0, &mut counter()).unwrap();
        assert!(p.exact(0.0).unwrap().iter().all(|v| v.abs() < 1e-15));
        let (t, dt) = (0.01, 1e-6);
        let u = DVector::from_vec(p.exact(t).unwrap());
        let du = (DVector::from_vec(p.exact(t + dt).unwrap()) - DVector::from_vec(p.exact(t - dt).unwrap())) / (2.0 * dt);
        let residual = du + &a * &u - DVector::from_vec(f.clone());
        assert!(residual.amax() < 1e-5 * f.iter().fold(0.0f64, |m, v| m.max(v.abs())), "{}", residual.amax());
        let steady = a.lu().solve(&DVector::from_vec(f)).unwrap();
        let late = DVector::from_vec(p.exact(50.0).unwrap());
        assert!((late - &steady).amax() < 1e-12 * steady.amax());
    }

    #[test]
    fn heat_dimensions_and_spectrum() {
        let p = make_heat1d(0.5, HeatSource::Delta).unwrap();
        assert_eq!(p.dim(), 1);
        let j = p.eval_jacobian(&[0.0], 0.0, &mut counter()).unwrap();
        assert_eq!(j[(0, 0)], -8.0);
        let p = make_heat1d(0.01, HeatSource::Delta).unwrap();
        assert_eq!(p.dim(), 99);
        let expect = 4e4 * (99.0 * std::f64::consts::PI * 0.005).sin().powi(2);
        assert!((p.spectral_radius().unwrap() - expect).abs() < 1e-9);
        assert!(expect > 3.99e4 && expect < 4e4);
        assert!(make_heat1d(0.3, HeatSource::Delta).is_err());
        assert!(make_heat1d(1.0, HeatSource::Delta).is_err());
        let g = |x: f64| x;
        let p = make_heat1d(0.25, HeatSource::Function(&g)).unwrap();
        let f = p.eval_rhs(&[0.0; 3], 0.0, &mut counter()).unwrap();
        assert_eq!(f, vec![0.25, 0.5, 0.75]);
    }

    #[test]
    fn mass_spring_two_mass_spectrum() {
        let p = make_mass_spring(&[1.0, 1.0], 1.0).unwrap();
        let j = p.eval_jacobian(p.initial(), 0.0, &mut counter()).unwrap();
        let mut mags: Vec<f64> = j.complex_eigenvalues().iter().map(|z| z.norm()).collect();
        mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expect = [1.0, 1.0, 3f64.sqrt(), 3f64.sqrt()];
        for (m, e) in mags.iter().zip(expect) {
            assert!((m - e).abs() < 1e-10);
        }
        let p5 = problem_by_name("mass-spring", &ProblemParams::default()).unwrap();
        assert_eq!(p5.dim(), 10);
        assert!(make_mass_spring(&[1.0], 1.0).is_err());
        assert!(make_mass_spring(&[1.0, -1.0], 1.0).is_err());
        assert!(make_mass_spring(&[1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn reaction_terms_cancel_in_the_sum() {
        let p = make_reaction_diffusion(0.001, 10, 0.2).unwrap();
        assert_eq!(p.dim(), 22);
        let u: Vec<f64> = (0..22).map(|c| if c < 11 { (c as f64 * 0.3).sin().abs() } else { 0.0 }).collect();
        let mut u = u;
        for j in 0..11 {
            u[11 + j] = 1.0 - u[j];
        }
        let f = p.eval_rhs(&u, 0.0, &mut counter()).unwrap();
        for j in 0..11 {
            assert!((f[j] + f[11 + j]).abs() < 1e-12);
        }
        assert!(make_reaction_diffusion(0.0, 10, 0.2).is_err());
        assert!(make_reaction_diffusion(0.001, 3, 0.2).is_err());
        assert!(make_reaction_diffusion(0.001, 10, 1.0).is_err());
    }

    #[test]
    fn finite_difference_jacobian_matches_analytic() {
        let problems = vec![
            make_test_equation(1000.0).unwrap(),
            make_test_system(&[100.0, 1000.0]).unwrap(),
            make_hires(),
            make_heat1d(0.1, HeatSource::Delta).unwrap(),
            make_mass_spring(&default_masses(5), 1.0).unwrap(),
            make_reaction_diffusion(0.001, 8, 0.2).unwrap(),
        ];
        let h = fd_epsilon();
        for p in problems {
            let u: Vec<f64> = (0..p.dim()).map(|i| 0.1 + 0.5 * ((i as f64) * 0.7).cos().abs()).collect();
            let mut c = counter();
            let a = p.eval_jacobian(&u, 0.5, &mut c).unwrap();
            let fd = p.finite_difference_jacobian(&u, 0.5, &mut c);
            let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let diff = (&a - &fd).amax();
            assert!(diff <= 10.0 * h * scale, "{}: {diff}", p.name());
        }
    }

    #[test]
    fn non_finite_rhs_is_reported() {
        let p = OdeProblem::new("bad", vec![1.0, 1.0], 1.0, |u, _, out| {
            out[0] = u[0];
            out[1] = 1.0 / (u[1] - 1.0);
        })
        .unwrap();
        match p.eval_rhs(&[1.0, 1.0], 0.5, &mut counter()) {
            Err(Error::RhsOverflow { t, index }) => assert!(t == 0.5 && index == 1),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            p.eval_jacobian(&[1.0, 1.0], 0.5, &mut counter()),
            Err(Error::JacobianOverflow { .. })
        ));
    }

    #[test]
    fn registry_knows_every_name() {
        for name in PROBLEM_NAMES {
            let mut params = ProblemParams::default();
            if name == "heat1d" {
                params.h = Some(0.1);
            }
            assert_eq!(problem_by_name(name, &params).unwrap().name(), name);
        }
        assert!(matches!(problem_by_name("nope", &ProblemParams::default()), Err(Error::UnknownProblem(_))));
    }

    #[test]
    fn oversized_problems_are_rejected() {
        assert!(make_heat1d(1e-5, HeatSource::Delta).is_err());
        assert!(make_heat1d(1e-4, HeatSource::Delta).is_ok());
        assert!(make_reaction_diffusion(0.001, MAX_SIZE + 1, 0.2).is_err());
        let huge = ProblemParams { n_masses: Some(usize::MAX), ..ProblemParams::default() };
        assert!(matches!(problem_by_name("mass-spring", &huge), Err(Error::InvalidParameter(_))));
    }
}

//! Polynomial bases, quadrature rules and the weight matrices that turn the
//! local Galerkin equations into the explicit update
//!
//! ```text
//! xi_m = left + k * sum_n w_mn f(U(t_n), t_n),   t_n = t_begin + k s_n
//! ```
//!
//! mcG(q) stores its dofs at the q+1 Gauss-Lobatto points of [0, 1] and is
//! tested against polynomials of degree q-1; mdG(q) stores its dofs at the
//! q+1 right Radau points and is tested against polynomials of degree q,
//! with the jump at the left end of the element. The right endpoint is a
//! node in both families, so the end value of an element is its last dof.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use crate::error::{invalid, Error, Result};
use crate::mesh::TimeSlab;
use crate::problems::{EvalCounter, OdeProblem};

/// Largest polynomial degree supported by the node generators.
pub const MAX_ORDER: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Mcg,
    Mdg,
}

/// A Galerkin method together with its polynomial degree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Method {
    pub kind: MethodKind,
    pub q: usize,
}

impl Method {
    pub fn mcg(q: usize) -> Self {
        Method { kind: MethodKind::Mcg, q }
    }

    pub fn mdg(q: usize) -> Self {
        Method { kind: MethodKind::Mdg, q }
    }

    /// Exponent of the step in the a posteriori estimate: q for mcG, q+1 for mdG.
    pub fn estimate_order(&self) -> usize {
        match self.kind {
            MethodKind::Mcg => self.q,
            MethodKind::Mdg => self.q + 1,
        }
    }

    /// Nodal order of convergence at the end point: 2q for mcG, 2q+1 for mdG.
    pub fn nodal_order(&self) -> usize {
        match self.kind {
            MethodKind::Mcg => 2 * self.q,
            MethodKind::Mdg => 2 * self.q + 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let min = match self.kind {
            MethodKind::Mcg => 1,
            MethodKind::Mdg => 0,
        };
        if self.q < min || self.q > MAX_ORDER {
            return Err(invalid(format!(
                "{self}: order must lie in [{min}, {MAX_ORDER}]"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodKind::Mcg => write!(f, "mcg"),
            MethodKind::Mdg => write!(f, "mdg"),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            MethodKind::Mcg => write!(f, "mcG({})", self.q),
            MethodKind::Mdg => write!(f, "mdG({})", self.q),
        }
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mcg" | "cg" => Ok(MethodKind::Mcg),
            "mdg" | "dg" => Ok(MethodKind::Mdg),
            other => Err(invalid(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleFamily {
    Lobatto,
    RadauRight,
    Gauss,
}

/// A quadrature rule on [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub family: RuleFamily,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Highest polynomial degree integrated exactly.
    pub fn exactness_degree(&self) -> usize {
        let n = self.points.len();
        match self.family {
            RuleFamily::Lobatto => 2 * n - 3,
            RuleFamily::RadauRight => 2 * n - 2,
            RuleFamily::Gauss => 2 * n - 1,
        }
    }

    /// Integral of `g` over [a, b].
    pub fn integrate(&self, a: f64, b: f64, mut g: impl FnMut(f64) -> f64) -> f64 {
        let k = b - a;
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(s, w)| w * g(a + k * s))
            .sum::<f64>()
            * k
    }
}

/// Legendre polynomials (P_n(x), P_{n-1}(x)) by the three-term recurrence.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut prev, mut cur) = (1.0, x);
    for j in 1..n {
        let jf = j as f64;
        let next = ((2.0 * jf + 1.0) * x * cur - jf * prev) / (jf + 1.0);
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

pub(crate) fn legendre(n: usize, x: f64) -> f64 {
    legendre_pair(n, x).0
}

/// Simple roots of `g` in the open interval (-1, 1), located by sign changes
/// on a fine grid and refined by bisection.
fn interior_roots(g: impl Fn(f64) -> f64, expected: usize) -> Vec<f64> {
    const GRID: usize = 20_000;
    let mut roots = Vec::with_capacity(expected);
    let node = |i: usize| -1.0 + 2.0 * (i as f64) / (GRID as f64);
    let mut a = node(1);
    let mut ga = g(a);
    for i in 2..GRID {
        let b = node(i);
        let gb = g(b);
        if ga == 0.0 {
            roots.push(a);
        } else if ga * gb < 0.0 {
            let (mut lo, mut hi, mut glo) = (a, b, ga);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let gm = g(mid);
                if gm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if glo * gm < 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    glo = gm;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        a = b;
        ga = gb;
    }
    debug_assert_eq!(roots.len(), expected);
    roots
}

fn to_unit_interval(x: &[f64], w: &[f64], family: RuleFamily) -> QuadratureRule {
    QuadratureRule {
        points: x.iter().map(|x| 0.5 * (x + 1.0)).collect(),
        weights: w.iter().map(|w| 0.5 * w).collect(),
        family,
    }
}

/// The q+1 Gauss-Lobatto points on [0, 1] (both end points included).
pub fn lobatto_rule(q: usize) -> Result<QuadratureRule> {
    if q < 1 || q > MAX_ORDER {
        return Err(invalid(format!("Lobatto rule needs 1 <= q <= {MAX_ORDER}, got {q}")));
    }
    let n = q + 1;
    // interior nodes are the roots of P'_q, equivalently of x P_q - P_{q-1}
    let mut x = vec![-1.0];
    x.extend(interior_roots(
        |x| {
            let (p, pm) = legendre_pair(q, x);
            x * p - pm
        },
        q - 1,
    ));
    x.push(1.0);
    let nf = n as f64;
    let w: Vec<f64> = x
        .iter()
        .map(|&x| {
            let p = legendre(q, x);
            2.0 / (nf * (nf - 1.0) * p * p)
        })
        .collect();
    Ok(to_unit_interval(&x, &w, RuleFamily::Lobatto))
}

/// The q+1 right Radau points on [0, 1] (1 included, 0 excluded).
pub fn radau_right_rule(q: usize) -> Result<QuadratureRule> {
    if q > MAX_ORDER {
        return Err(invalid(format!("Radau rule needs q <= {MAX_ORDER}, got {q}")));
    }
    let n = q + 1;
    let mut x = interior_roots(|x| legendre(n, x) - legendre(n - 1, x), n - 1);
    x.push(1.0);
    let nf = n as f64;
    let w: Vec<f64> = x
        .iter()
        .map(|&x| {
            let p = legendre(n - 1, x);
            (1.0 + x) / (nf * nf * p * p)
        })
        .collect();
    Ok(to_unit_interval(&x, &w, RuleFamily::RadauRight))
}

/// The n-point Gauss-Legendre rule on [0, 1], computed once per n.
pub fn gauss_rule(n: usize) -> Result<QuadratureRule> {
    static CACHE: [OnceLock<QuadratureRule>; 64] = [const { OnceLock::new() }; 64];
    if n < 1 || n > 64 {
        return Err(invalid(format!("Gauss rule needs 1 <= n <= 64, got {n}")));
    }
    Ok(CACHE[n - 1].get_or_init(|| compute_gauss_rule(n)).clone())
}

fn compute_gauss_rule(n: usize) -> QuadratureRule {
    let x = interior_roots(|x| legendre(n, x), n);
    let w: Vec<f64> = x
        .iter()
        .map(|&x| {
            let (p, pm) = legendre_pair(n, x);
            let dp = n as f64 * (x * p - pm) / (x * x - 1.0);
            2.0 / ((1.0 - x * x) * dp * dp)
        })
        .collect();
    to_unit_interval(&x, &w, RuleFamily::Gauss)
}

/// Lagrange basis on a fixed set of distinct nodes in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeBasis {
    nodes: Vec<f64>,
    denominators: Vec<f64>,
}

impl LagrangeBasis {
    pub fn new(nodes: &[f64]) -> Self {
        let denominators = (0..nodes.len())
            .map(|m| {
                nodes
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != m)
                    .map(|(_, &sj)| nodes[m] - sj)
                    .product()
            })
            .collect();
        LagrangeBasis { nodes: nodes.to_vec(), denominators }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn value(&self, m: usize, s: f64) -> f64 {
        let num: f64 = self
            .nodes
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != m)
            .map(|(_, &sj)| s - sj)
            .product();
        num / self.denominators[m]
    }

    pub fn derivative(&self, m: usize, s: f64) -> f64 {
        let n = self.nodes.len();
        let mut total = 0.0;
        for l in (0..n).filter(|&l| l != m) {
            let mut term = 1.0;
            for j in (0..n).filter(|&j| j != m && j != l) {
                term *= s - self.nodes[j];
            }
            total += term;
        }
        total / self.denominators[m]
    }

    /// Value of the interpolant with nodal values `dofs` at `s`.
    pub fn interpolate(&self, dofs: &[f64], s: f64) -> f64 {
        // hitting a node exactly returns the stored value bit for bit
        if let Some(m) = self.nodes.iter().position(|&x| x == s) {
            return dofs[m];
        }
        dofs.iter().enumerate().map(|(m, d)| d * self.value(m, s)).sum()
    }

    /// d/ds of the interpolant at `s`.
    pub fn interpolate_derivative(&self, dofs: &[f64], s: f64) -> f64 {
        dofs.iter().enumerate().map(|(m, d)| d * self.derivative(m, s)).sum()
    }
}

/// The (q+1)x(q+1) weights of the fixed-point update.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub method: Method,
    rows: Vec<Vec<f64>>,
}

impl WeightMatrix {
    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.rows[m][n]
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.rows[m]
    }

    pub fn size(&self) -> usize {
        self.rows.len()
    }

    /// Largest absolute row sum; bounds the contraction factor k*lambda*w_max.
    pub fn max_row_sum(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.iter().map(|w| w.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Shifted Legendre polynomial of degree r on [0, 1].
fn test_function(r: usize, s: f64) -> f64 {
    legendre(r, 2.0 * s - 1.0)
}

fn solve_dense(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<DMatrix<f64>> {
    a.lu()
        .solve(&b)
        .ok_or_else(|| invalid("singular Galerkin system"))
}

/// Weights for mcG(q): dofs on Lobatto nodes, test space P^{q-1}, Lobatto
/// quadrature for the right-hand side. Row 0 is zero since xi_0 is fixed by
/// continuity.
pub fn mcg_weight_matrix(q: usize) -> Result<WeightMatrix> {
    let method = Method::mcg(q);
    method.validate()?;
    let rule = lobatto_rule(q)?;
    let basis = LagrangeBasis::new(&rule.points);
    let exact = gauss_rule(q + 2)?;
    let mut a = DMatrix::zeros(q, q);
    let mut b = DMatrix::zeros(q, q + 1);
    for r in 0..q {
        for m in 1..=q {
            a[(r, m - 1)] =
                exact.integrate(0.0, 1.0, |s| basis.derivative(m, s) * test_function(r, s));
        }
        for n in 0..=q {
            b[(r, n)] = rule.weights[n] * test_function(r, rule.points[n]);
        }
    }
    let x = solve_dense(a, b)?;
    let mut rows = vec![vec![0.0; q + 1]];
    for m in 0..q {
        rows.push((0..=q).map(|n| x[(m, n)]).collect());
    }
    Ok(WeightMatrix { method, rows })
}

/// Weights for mdG(q): dofs on right Radau nodes, test space P^q including
/// the jump term at the left end, Radau quadrature for the right-hand side.
pub fn mdg_weight_matrix(q: usize) -> Result<WeightMatrix> {
    let method = Method::mdg(q);
    method.validate()?;
    let rule = radau_right_rule(q)?;
    let basis = LagrangeBasis::new(&rule.points);
    let exact = gauss_rule(q + 2)?;
    let mut a = DMatrix::zeros(q + 1, q + 1);
    let mut b = DMatrix::zeros(q + 1, q + 1);
    for r in 0..=q {
        for m in 0..=q {
            a[(r, m)] = basis.value(m, 0.0) * test_function(r, 0.0)
                + exact.integrate(0.0, 1.0, |s| basis.derivative(m, s) * test_function(r, s));
        }
        for n in 0..=q {
            b[(r, n)] = rule.weights[n] * test_function(r, rule.points[n]);
        }
    }
    let x = solve_dense(a, b)?;
    let rows = (0..=q).map(|m| (0..=q).map(|n| x[(m, n)]).collect()).collect();
    Ok(WeightMatrix { method, rows })
}

/// Everything an element update needs for one method: nodes, quadrature
/// weights, the update weights and the interpolation basis.
#[derive(Debug, Clone)]
pub struct Scheme {
    pub method: Method,
    pub rule: QuadratureRule,
    pub weights: WeightMatrix,
    pub basis: LagrangeBasis,
}

impl Scheme {
    pub fn new(method: Method) -> Result<Self> {
        method.validate()?;
        let (rule, weights) = match method.kind {
            MethodKind::Mcg => (lobatto_rule(method.q)?, mcg_weight_matrix(method.q)?),
            MethodKind::Mdg => (radau_right_rule(method.q)?, mdg_weight_matrix(method.q)?),
        };
        let basis = LagrangeBasis::new(&rule.points);
        Ok(Scheme { method, rule, weights, basis })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.rule.points
    }

    pub fn dofs_per_element(&self) -> usize {
        self.method.q + 1
    }

    /// Number of test functions per element.
    pub fn test_dim(&self) -> usize {
        match self.method.kind {
            MethodKind::Mcg => self.method.q,
            MethodKind::Mdg => self.method.q + 1,
        }
    }

    /// Test basis function r, shifted Legendre on the reference element.
    pub fn test_function(&self, r: usize, s: f64) -> f64 {
        test_function(r, s)
    }
}

/// Residual R_i(U, t) = U_i'(t) - f_i(U(t), t) on element j of component i,
/// with the other components read from the same slab.
pub fn element_residual(
    slab: &TimeSlab,
    scheme: &Scheme,
    problem: &OdeProblem,
    i: usize,
    j: usize,
    t: f64,
    counter: &mut EvalCounter,
) -> Result<f64> {
    let e = &slab.elements[i][j];
    let mut state = problem.initial().to_vec();
    slab.fill_state(&scheme.basis, t, problem.dependencies(i), &mut state);
    state[i] = e.value(&scheme.basis, t);
    Ok(e.derivative(&scheme.basis, t) - problem.eval_component(i, &state, t, counter)?)
}

/// Quadrature used for the f-integral of [`galerkin_defect`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefectQuadrature {
    /// The method's own nodes and weights: the equations the iteration solves.
    Method,
    /// Gauss quadrature with 2q+3 points.
    Exact,
}

/// Projection of the residual onto each test function v_r of element j of
/// component i: [U] v_r(0) (mdG only) plus the integral of R v_r. Vanishes
/// for the exact discrete solution when the method quadrature is used, and
/// for linear problems with polynomial data also under exact quadrature.
pub fn galerkin_defect(
    slab: &TimeSlab,
    scheme: &Scheme,
    problem: &OdeProblem,
    i: usize,
    j: usize,
    quadrature: DefectQuadrature,
    counter: &mut EvalCounter,
) -> Result<Vec<f64>> {
    let e = &slab.elements[i][j];
    let k = e.k();
    let q = scheme.method.q;
    let basis = &scheme.basis;
    let deps = problem.dependencies(i);
    let mcg = scheme.method.kind == MethodKind::Mcg;
    let mut state = problem.initial().to_vec();
    let mut f_at = |s: f64, own: f64, counter: &mut EvalCounter| -> Result<f64> {
        let t = e.t_begin + k * s;
        slab.fill_state(basis, t, deps, &mut state);
        state[i] = own;
        problem.eval_component(i, &state, t, counter)
    };
    let mut samples = Vec::new();
    let rule = match quadrature {
        DefectQuadrature::Method => {
            for (n, &s) in scheme.nodes().iter().enumerate() {
                let own = if mcg && n == 0 { e.left_value } else { e.dofs[n] };
                samples.push(f_at(s, own, counter)?);
            }
            scheme.rule.clone()
        }
        DefectQuadrature::Exact => {
            let g = gauss_rule(2 * q + 3)?;
            for &s in &g.points {
                samples.push(f_at(s, basis.interpolate(&e.dofs, s), counter)?);
            }
            g
        }
    };
    let derivative_rule = gauss_rule(q + 2)?;
    let jump = if mcg { 0.0 } else { e.jump(basis) };
    Ok((0..scheme.test_dim())
        .map(|r| {
            let du = derivative_rule.integrate(0.0, 1.0, |s| basis.interpolate_derivative(&e.dofs, s) * test_function(r, s));
            let fv: f64 = rule
                .points
                .iter()
                .zip(&rule.weights)
                .zip(&samples)
                .map(|((&s, &w), &f)| w * f * test_function(r, s))
                .sum();
            jump * test_function(r, 0.0) + du - k * fv
        })
        .collect())
}

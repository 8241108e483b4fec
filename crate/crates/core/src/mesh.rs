//! Per-component partitions of (0, T]: elements, time slabs and the global
//! piecewise polynomial solution.
//!
//! Within one slab every component uses uniform sub-steps. Element lookups
//! follow the right-continuous convention: time t belongs to the element
//! with t in (t_begin, t_end].

use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::method::{LagrangeBasis, MethodKind, Scheme};

/// One component's polynomial on one local interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub component: usize,
    pub t_begin: f64,
    pub t_end: f64,
    /// Nodal values at t_begin + k s_n.
    pub dofs: Vec<f64>,
    /// Value carried in from the previous element (or the initial value).
    pub left_value: f64,
}

impl Element {
    pub fn k(&self) -> f64 {
        self.t_end - self.t_begin
    }

    pub fn order(&self) -> usize {
        self.dofs.len() - 1
    }

    pub fn end_value(&self) -> f64 {
        self.dofs[self.dofs.len() - 1]
    }

    fn reference(&self, t: f64) -> f64 {
        (t - self.t_begin) / self.k()
    }

    pub fn value(&self, basis: &LagrangeBasis, t: f64) -> f64 {
        basis.interpolate(&self.dofs, self.reference(t))
    }

    pub fn derivative(&self, basis: &LagrangeBasis, t: f64) -> f64 {
        basis.interpolate_derivative(&self.dofs, self.reference(t)) / self.k()
    }

    /// [U] at the left end: limit from inside minus the carried-in value.
    /// Zero for mcG up to rounding.
    pub fn jump(&self, basis: &LagrangeBasis) -> f64 {
        basis.interpolate(&self.dofs, 0.0) - self.left_value
    }

    pub fn contains(&self, t: f64) -> bool {
        t > self.t_begin && t <= self.t_end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Normal,
    Damping,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Normal => "normal",
            Phase::Damping => "damping",
        })
    }
}

impl FromStr for Phase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Phase::Normal),
            "damping" => Ok(Phase::Damping),
            other => Err(invalid(format!("unknown phase `{other}`"))),
        }
    }
}

/// All elements between two synchronized time levels.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSlab {
    pub t_begin: f64,
    pub t_end: f64,
    pub phase: Phase,
    /// elements[i] lists component i's elements in time order.
    pub elements: Vec<Vec<Element>>,
}

impl TimeSlab {
    pub fn length(&self) -> f64 {
        self.t_end - self.t_begin
    }

    pub fn dim(&self) -> usize {
        self.elements.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.iter().map(Vec::len).sum()
    }

    /// Index of the element of component i holding time t. Times at or
    /// before t_begin map to the first element, times past t_end to the last.
    pub fn locate(&self, i: usize, t: f64) -> usize {
        let list = &self.elements[i];
        let m = list.len();
        if m == 1 {
            return 0;
        }
        let guess = ((t - self.t_begin) / self.length() * m as f64).ceil() as isize - 1;
        let mut j = guess.clamp(0, m as isize - 1) as usize;
        while j > 0 && t <= list[j].t_begin {
            j -= 1;
        }
        while j + 1 < m && t > list[j].t_end {
            j += 1;
        }
        j
    }

    pub fn value(&self, basis: &LagrangeBasis, i: usize, t: f64) -> f64 {
        let e = &self.elements[i][self.locate(i, t)];
        if t <= e.t_begin {
            return e.left_value;
        }
        e.value(basis, t)
    }

    /// Writes U_d(t) into buf[d] for each listed component (all when `deps`
    /// is None); other entries are left untouched.
    pub fn fill_state(&self, basis: &LagrangeBasis, t: f64, deps: Option<&[usize]>, buf: &mut [f64]) {
        match deps {
            Some(list) => {
                for &d in list {
                    buf[d] = self.value(basis, d, t);
                }
            }
            None => {
                for (d, b) in buf.iter_mut().enumerate() {
                    *b = self.value(basis, d, t);
                }
            }
        }
    }

    pub fn left_values(&self) -> Vec<f64> {
        self.elements.iter().map(|l| l[0].left_value).collect()
    }

    pub fn end_values(&self) -> Vec<f64> {
        self.elements.iter().map(|l| l[l.len() - 1].end_value()).collect()
    }

    /// Global iteration order: all elements sorted by end time, ties broken
    /// by component index.
    pub fn iteration_order(&self) -> Vec<(usize, usize)> {
        let mut order: Vec<(usize, usize)> = self
            .elements
            .iter()
            .enumerate()
            .flat_map(|(i, l)| (0..l.len()).map(move |j| (i, j)))
            .collect();
        order.sort_by(|a, b| {
            let ta = self.elements[a.0][a.1].t_end;
            let tb = self.elements[b.0][b.1].t_end;
            ta.total_cmp(&tb).then(a.0.cmp(&b.0))
        });
        order
    }

    /// Largest element length of component i.
    pub fn step(&self, i: usize) -> f64 {
        self.length() / self.elements[i].len() as f64
    }
}

/// Builds a slab on [t_begin, t_begin + k_slab]; see [`build_slab_between`].
pub fn build_slab(
    t_begin: f64,
    k_slab: f64,
    steps: &[f64],
    q: usize,
    left: &[f64],
) -> Result<TimeSlab> {
    build_slab_between(t_begin, t_begin + k_slab, steps, q, left)
}

/// Component i gets m_i = max(1, ceil(K / steps[i])) uniform elements, so no
/// element exceeds its proposed step; every dof starts at the component's incoming value.
pub fn build_slab_between(
    t_begin: f64,
    t_end: f64,
    steps: &[f64],
    q: usize,
    left: &[f64],
) -> Result<TimeSlab> {
    let k_slab = t_end - t_begin;
    if !(k_slab > 0.0) || !k_slab.is_finite() || !t_begin.is_finite() {
        return Err(invalid(format!("slab [{t_begin}, {t_end}] is empty or not finite")));
    }
    if steps.len() != left.len() {
        return Err(invalid("steps and incoming values differ in length"));
    }
    if let Some(k) = steps.iter().find(|k| !(**k > 0.0 && k.is_finite())) {
        return Err(invalid(format!("proposed step {k} is not a positive finite number")));
    }
    let elements = steps
        .iter()
        .zip(left)
        .enumerate()
        .map(|(i, (&k, &u))| {
            let m = ((k_slab / k - 1e-6).ceil() as usize).max(1);
            (0..m)
                .map(|j| Element {
                    component: i,
                    t_begin: if j == 0 { t_begin } else { t_begin + k_slab * j as f64 / m as f64 },
                    t_end: if j + 1 == m { t_end } else { t_begin + k_slab * (j + 1) as f64 / m as f64 },
                    dofs: vec![u; q + 1],
                    left_value: u,
                })
                .collect()
        })
        .collect();
    Ok(TimeSlab { t_begin, t_end, phase: Phase::Normal, elements })
}

/// The discrete solution U: completed slabs in time order.
#[derive(Debug, Clone)]
pub struct Trajectory {
    scheme: Arc<Scheme>,
    initial: Vec<f64>,
    slabs: Vec<TimeSlab>,
}

impl Trajectory {
    pub fn new(scheme: Arc<Scheme>, initial: Vec<f64>) -> Self {
        Trajectory { scheme, initial, slabs: Vec::new() }
    }

    pub fn scheme(&self) -> &Arc<Scheme> {
        &self.scheme
    }

    pub fn basis(&self) -> &LagrangeBasis {
        &self.scheme.basis
    }

    pub fn dim(&self) -> usize {
        self.initial.len()
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn slabs(&self) -> &[TimeSlab] {
        &self.slabs
    }

    pub fn t_end(&self) -> f64 {
        self.slabs.last().map_or(0.0, |s| s.t_end)
    }

    /// Incoming values for the next slab.
    pub fn end_values(&self) -> Vec<f64> {
        self.slabs.last().map_or_else(|| self.initial.clone(), TimeSlab::end_values)
    }

    pub fn element_count(&self) -> usize {
        self.slabs.iter().map(TimeSlab::element_count).sum()
    }

    pub fn push(&mut self, slab: TimeSlab) -> Result<()> {
        if slab.dim() != self.dim() {
            return Err(invalid("slab dimension does not match the trajectory"));
        }
        if slab.t_begin != self.t_end() {
            return Err(invalid(format!(
                "slab starts at {} but the trajectory ends at {}",
                slab.t_begin,
                self.t_end()
            )));
        }
        self.slabs.push(slab);
        Ok(())
    }

    pub fn pop(&mut self) -> Option<TimeSlab> {
        self.slabs.pop()
    }

    /// Index of the slab with t in (t_begin, t_end].
    pub fn locate_slab(&self, t: f64) -> Option<usize> {
        if self.slabs.is_empty() || !(t > 0.0) || t > self.t_end() {
            return None;
        }
        let idx = self.slabs.partition_point(|s| s.t_end < t);
        (idx < self.slabs.len()).then_some(idx)
    }

    fn out_of_range(&self, t: f64) -> Error {
        Error::OutOfRange { t, begin: 0.0, end: self.t_end() }
    }

    pub fn evaluate(&self, i: usize, t: f64) -> Result<f64> {
        if i >= self.dim() {
            return Err(invalid(format!("component {i} out of range")));
        }
        if t == 0.0 {
            return Ok(self.initial[i]);
        }
        let s = self.locate_slab(t).ok_or_else(|| self.out_of_range(t))?;
        Ok(self.slabs[s].value(self.basis(), i, t))
    }

    pub fn state(&self, t: f64) -> Result<Vec<f64>> {
        if t == 0.0 {
            return Ok(self.initial.clone());
        }
        let s = self.locate_slab(t).ok_or_else(|| self.out_of_range(t))?;
        let slab = &self.slabs[s];
        Ok((0..self.dim()).map(|i| slab.value(self.basis(), i, t)).collect())
    }

    /// Component i's elements over the whole run, in time order.
    pub fn elements_of(&self, i: usize) -> impl Iterator<Item = &Element> + '_ {
        self.slabs.iter().flat_map(move |s| s.elements[i].iter())
    }

    /// Largest gap or overlap between consecutive element endpoints of any
    /// component; zero for a well-formed trajectory.
    pub fn coverage_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim() {
            let mut t = 0.0;
            for e in self.elements_of(i) {
                worst = worst.max((e.t_begin - t).abs());
                t = e.t_end;
            }
            worst = worst.max((t - self.t_end()).abs());
        }
        worst
    }
}

const TRACE_FIXED_COLUMNS: [&str; 8] = ["slab", "phase", "component", "t_begin", "t_end", "q", "k", "left"];

/// Writes one CSV row per element. Floats use the shortest representation
/// that parses back to the same bits, so [`read_trace`] round-trips exactly.
pub fn write_trace<W: Write>(trajectory: &Trajectory, out: W) -> Result<()> {
    let q = trajectory.scheme.method.q;
    // The second row holds the initial state, so rows vary in width.
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    let mut header: Vec<String> = TRACE_FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..=q).map(|m| format!("dof{m}")));
    w.write_record(&header).map_err(io_error)?;
    let initial_row: Vec<String> = std::iter::once("initial".to_string())
        .chain(trajectory.initial.iter().map(|v| v.to_string()))
        .collect();
    w.write_record(&initial_row).map_err(io_error)?;
    for (s, slab) in trajectory.slabs.iter().enumerate() {
        for list in &slab.elements {
            for e in list {
                let mut row = vec![
                    s.to_string(),
                    slab.phase.to_string(),
                    e.component.to_string(),
                    e.t_begin.to_string(),
                    e.t_end.to_string(),
                    q.to_string(),
                    e.k().to_string(),
                    e.left_value.to_string(),
                ];
                row.extend(e.dofs.iter().map(|v| v.to_string()));
                w.write_record(&row).map_err(io_error)?;
            }
        }
    }
    w.flush().map_err(io_error)?;
    Ok(())
}

fn io_error(e: impl fmt::Display) -> Error {
    Error::Parse { line: 0, message: e.to_string() }
}

fn parse_field<T: FromStr>(field: Option<&str>, name: &str, line: usize) -> Result<T> {
    let raw = field.ok_or_else(|| Error::Parse { line, message: format!("missing {name}") })?;
    raw.trim()
        .parse()
        .map_err(|_| Error::Parse { line, message: format!("bad {name} `{raw}`") })
}

fn parse_finite(field: Option<&str>, name: &str, line: usize) -> Result<f64> {
    let v: f64 = parse_field(field, name, line)?;
    if !v.is_finite() {
        return Err(Error::Parse { line, message: format!("{name} is not finite") });
    }
    Ok(v)
}

/// Reads a trace written by [`write_trace`] and rebuilds the trajectory,
/// validating its structure.
pub fn read_trace<R: Read>(input: R, scheme: Arc<Scheme>) -> Result<Trajectory> {
    let q = scheme.method.q;
    let mut reader = csv::ReaderBuilder::new().flexible(true).has_headers(false).from_reader(input);
    let mut records = reader.records();
    let parse_err = |line: usize, e: csv::Error| Error::Parse { line, message: e.to_string() };

    let header = records
        .next()
        .ok_or(Error::Parse { line: 1, message: "empty trace".into() })?
        .map_err(|e| parse_err(1, e))?;
    let expected: Vec<String> = TRACE_FIXED_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain((0..=q).map(|m| format!("dof{m}")))
        .collect();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Parse { line: 1, message: format!("header does not match order q = {q}") });
    }

    let initial_rec = records
        .next()
        .ok_or(Error::Parse { line: 2, message: "missing initial state".into() })?
        .map_err(|e| parse_err(2, e))?;
    if initial_rec.get(0) != Some("initial") || initial_rec.len() < 2 {
        return Err(Error::Parse { line: 2, message: "expected initial state row".into() });
    }
    let initial = (1..initial_rec.len())
        .map(|c| parse_finite(initial_rec.get(c), "initial value", 2))
        .collect::<Result<Vec<f64>>>()?;
    let dim = initial.len();

    let mut trajectory = Trajectory::new(scheme.clone(), initial);
    let mut current: Option<(usize, TimeSlab)> = None;
    for (n, rec) in records.enumerate() {
        let line = n + 3;
        let rec = rec.map_err(|e| parse_err(line, e))?;
        if rec.len() != TRACE_FIXED_COLUMNS.len() + q + 1 {
            return Err(Error::Parse { line, message: format!("expected {} fields", TRACE_FIXED_COLUMNS.len() + q + 1) });
        }
        let slab_id: usize = parse_field(rec.get(0), "slab", line)?;
        let phase: Phase = parse_field(rec.get(1), "phase", line)?;
        let component: usize = parse_field(rec.get(2), "component", line)?;
        let t_begin = parse_finite(rec.get(3), "t_begin", line)?;
        let t_end = parse_finite(rec.get(4), "t_end", line)?;
        let order: usize = parse_field(rec.get(5), "q", line)?;
        let k = parse_finite(rec.get(6), "k", line)?;
        let left_value = parse_finite(rec.get(7), "left", line)?;
        let dofs = (0..=q)
            .map(|m| parse_finite(rec.get(8 + m), "dof", line))
            .collect::<Result<Vec<f64>>>()?;
        let fail = |message: &str| Error::Parse { line, message: message.to_string() };
        if order != q {
            return Err(fail("element order differs from the scheme"));
        }
        if component >= dim {
            return Err(fail("component index out of range"));
        }
        if !(t_end > t_begin) || k != t_end - t_begin {
            return Err(fail("element length is inconsistent"));
        }
        if scheme.method.kind == MethodKind::Mcg && dofs[0] != left_value {
            return Err(fail("continuous element does not start at its left value"));
        }
        let element = Element { component, t_begin, t_end, dofs, left_value };

        let start_new = match &current {
            Some((id, _)) => *id != slab_id,
            None => true,
        };
        if start_new {
            if let Some((_, done)) = current.take() {
                finish_slab(&mut trajectory, done, line)?;
            }
            if slab_id != trajectory.slabs.len() {
                return Err(fail("slabs are not numbered consecutively"));
            }
            current = Some((
                slab_id,
                TimeSlab { t_begin, t_end, phase, elements: vec![Vec::new(); dim] },
            ));
        }
        let (_, slab) = current.as_mut().expect("slab in progress");
        if slab.phase != phase {
            return Err(fail("phase changes within a slab"));
        }
        let list = &mut slab.elements[component];
        let expected_begin = list.last().map_or(slab.t_begin, |e| e.t_end);
        if t_begin != expected_begin {
            return Err(fail("element does not continue its component"));
        }
        slab.t_end = slab.t_end.max(t_end);
        list.push(element);
    }
    if let Some((_, done)) = current.take() {
        finish_slab(&mut trajectory, done, 0)?;
    }
    Ok(trajectory)
}

fn finish_slab(trajectory: &mut Trajectory, slab: TimeSlab, line: usize) -> Result<()> {
    let fail = |message: &str| Error::Parse { line, message: message.to_string() };
    for list in &slab.elements {
        match (list.first(), list.last()) {
            (Some(first), Some(last)) if first.t_begin == slab.t_begin && last.t_end == slab.t_end => {}
            _ => return Err(fail("slab does not cover every component")),
        }
    }
    trajectory.push(slab).map_err(|e| fail(&e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::method::{Method, Scheme};
    use proptest::prelude::*;

    fn scheme(method: Method) -> Arc<Scheme> {
        Arc::new(Scheme::new(method).unwrap())
    }

    #[test]
    fn slab_element_counts() {
        let s = build_slab(0.0, 1.0, &[1.0, 0.25], 1, &[0.0, 0.0]).unwrap();
        assert_eq!(s.elements[0].len(), 1);
        assert_eq!(s.elements[1].len(), 4);
        for e in &s.elements[1] {
            assert!((e.k() - 0.25).abs() < 1e-15);
        }
        let s = build_slab(0.0, 1.0, &[1.0, 0.3], 1, &[0.0, 0.0]).unwrap();
        assert_eq!(s.elements[1].len(), 4);
        assert!((s.elements[1][1].k() - 0.25).abs() < 1e-15);
        assert_eq!(s.elements[1][3].t_end, 1.0);
        let s = build_slab(2.0, 0.5, &[7.0], 2, &[3.0]).unwrap();
        assert_eq!(s.elements[0].len(), 1);
        assert_eq!(s.elements[0][0].dofs, vec![3.0; 3]);
    }

    #[test]
    fn slab_rejects_bad_steps() {
        assert!(build_slab(0.0, 1.0, &[f64::NAN], 1, &[0.0]).is_err());
        assert!(build_slab(0.0, 1.0, &[0.0], 1, &[0.0]).is_err());
        assert!(build_slab(0.0, 0.0, &[1.0], 1, &[0.0]).is_err());
        assert!(build_slab(0.0, 1.0, &[1.0, 1.0], 1, &[0.0]).is_err());
    }

    #[test]
    fn iteration_order_sorts_by_end_time_then_component() {
        let s = build_slab(0.0, 1.0, &[0.5, 1.0, 0.5], 1, &[0.0; 3]).unwrap();
        assert_eq!(s.iteration_order(), vec![(0, 0), (2, 0), (0, 1), (1, 0), (2, 1)]);
    }

    #[test]
    fn linear_element_evaluation() {
        let sc = scheme(Method::mcg(1));
        let e = Element { component: 0, t_begin: 0.0, t_end: 1.0, dofs: vec![0.0, 1.0], left_value: 0.0 };
        assert_eq!(e.value(&sc.basis, 0.5), 0.5);
        assert_eq!(e.value(&sc.basis, 1.0), 1.0);
        assert_eq!(e.end_value(), 1.0);
    }

    #[test]
    fn trajectory_evaluation_is_right_continuous() {
        let sc = scheme(Method::mdg(0));
        let mut traj = Trajectory::new(sc, vec![1.0]);
        let mut s = build_slab(0.0, 1.0, &[1.0], 0, &[1.0]).unwrap();
        s.elements[0][0].dofs = vec![2.0];
        traj.push(s).unwrap();
        let mut s = build_slab(1.0, 1.0, &[1.0], 0, &[2.0]).unwrap();
        s.elements[0][0].dofs = vec![3.0];
        traj.push(s).unwrap();
        assert_eq!(traj.evaluate(0, 0.0).unwrap(), 1.0);
        assert_eq!(traj.evaluate(0, 0.5).unwrap(), 2.0);
        assert_eq!(traj.evaluate(0, 1.0).unwrap(), 2.0);
        assert_eq!(traj.evaluate(0, 1.0 + 1e-12).unwrap(), 3.0);
        assert!(matches!(traj.evaluate(0, 2.5), Err(Error::OutOfRange { .. })));
        assert!(matches!(traj.evaluate(0, -0.1), Err(Error::OutOfRange { .. })));
        assert_eq!(traj.coverage_defect(), 0.0);
        let gap = build_slab(2.5, 1.0, &[1.0], 0, &[3.0]).unwrap();
        assert!(traj.push(gap).is_err());
    }

    fn sample_trajectory(method: Method) -> Trajectory {
        let sc = scheme(method);
        let q = method.q;
        let mut traj = Trajectory::new(sc.clone(), vec![1.0, -0.5]);
        let mut t = 0.0;
        for (n, k) in [0.1, 0.3, 1.0 / 3.0].iter().enumerate() {
            let left = traj.end_values();
            let mut s = build_slab(t, *k, &[k / 3.0, *k], q, &left).unwrap();
            if n == 1 {
                s.phase = Phase::Damping;
            }
            for list in &mut s.elements {
                let mut carry = list[0].left_value;
                for e in list.iter_mut() {
                    e.left_value = carry;
                    for (m, d) in e.dofs.iter_mut().enumerate() {
                        *d = if method.kind == MethodKind::Mcg && m == 0 {
                            carry
                        } else {
                            (e.t_begin + 0.1 * m as f64).sin() / 7.0 + carry
                        };
                    }
                    carry = e.end_value();
                }
            }
            t = s.t_end;
            traj.push(s).unwrap();
        }
        traj
    }

    #[test]
    fn trace_round_trip_is_bit_exact() {
        for method in [Method::mcg(1), Method::mcg(2), Method::mdg(0), Method::mdg(1)] {
            let traj = sample_trajectory(method);
            let mut first = Vec::new();
            write_trace(&traj, &mut first).unwrap();
            let back = read_trace(first.as_slice(), traj.scheme().clone()).unwrap();
            let mut second = Vec::new();
            write_trace(&back, &mut second).unwrap();
            assert_eq!(first, second);
            assert_eq!(back.slabs(), traj.slabs());
            assert_eq!(back.initial(), traj.initial());
        }
    }

    #[test]
    fn trace_import_rejects_malformed_input() {
        let traj = sample_trajectory(Method::mcg(1));
        let mut buf = Vec::new();
        write_trace(&traj, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let sc = traj.scheme().clone();
        assert!(read_trace("".as_bytes(), sc.clone()).is_err());
        let lines: Vec<&str> = text.lines().collect();
        let dropped = [lines[..3].join("\n"), lines[4..].join("\n")].join("\n");
        assert!(read_trace(dropped.as_bytes(), sc.clone()).is_err());
        let wrong_order = text.replacen("dof1", "dofX", 1);
        assert!(read_trace(wrong_order.as_bytes(), sc.clone()).is_err());
        assert!(read_trace(text.as_bytes(), scheme(Method::mcg(2))).is_err());
        let nan = text.replacen(",1,", ",NaN,", 1);
        assert!(read_trace(nan.as_bytes(), sc).is_err());
    }

    proptest! {
        #[test]
        fn evaluation_reproduces_polynomials(
            coeffs in prop::collection::vec(-3.0f64..3.0, 1..6),
            a in -5.0f64..5.0,
            k in 0.01f64..4.0,
            s in 0.0f64..=1.0,
            dg in any::<bool>(),
        ) {
            let q = coeffs.len() - 1;
            let method = if dg { Method::mdg(q) } else { Method::mcg(q.max(1)) };
            let sc = Scheme::new(method).unwrap();
            let poly = |t: f64| coeffs.iter().rev().fold(0.0, |acc, c| acc * (t - a) + c);
            let dofs: Vec<f64> = sc.nodes().iter().map(|&sn| poly(a + k * sn)).collect();
            let e = Element { component: 0, t_begin: a, t_end: a + k, left_value: dofs[0], dofs };
            let t = a + k * s;
            let scale = coeffs.iter().map(|c| c.abs()).sum::<f64>() * (1.0 + k).powi(q as i32);
            prop_assert!((e.value(&sc.basis, t) - poly(t)).abs() <= 1e-11 * scale.max(1.0));
        }

        #[test]
        fn slabs_tile_their_interval(
            steps in prop::collection::vec(0.001f64..2.0, 1..6),
            t0 in 0.0f64..10.0,
            k in 0.01f64..3.0,
        ) {
            let left = vec![0.0; steps.len()];
            let s = build_slab(t0, k, &steps, 1, &left).unwrap();
            for (i, list) in s.elements.iter().enumerate() {
                let m = list.len();
                prop_assert!(k / m as f64 <= steps[i] * (1.0 + 1e-6));
                prop_assert!(m == 1 || k / (m - 1) as f64 > steps[i]);
                prop_assert_eq!(list[0].t_begin, s.t_begin);
                prop_assert_eq!(list[list.len() - 1].t_end, s.t_end);
                for w in list.windows(2) {
                    prop_assert_eq!(w[0].t_end, w[1].t_begin);
                }
            }
        }
    }
}

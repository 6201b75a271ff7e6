//! Balanced positive-sequence phasor network.
//!
//! Each inverter is an ideal voltage source `E = V∠δ` at an internal node
//! behind its coupling impedance (or directly at its bus when that impedance
//! is zero). Loads are constant shunt admittances. Eliminating every
//! non-source node yields the Kron-reduced matrix `Y_red`, so that the source
//! currents are `I = Y_red·E` and the injected powers `S = E·conj(I)`.

use std::collections::{BTreeMap, VecDeque};

use num_complex::Complex;

use crate::linalg::{ComplexLu, LinalgError};
use crate::model::InverterId;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetError {
    #[error("unknown bus `{0}`")]
    UnknownBus(String),
    #[error("duplicate bus `{0}`")]
    DuplicateBus(String),
    #[error("line {from}-{to}: {reason}")]
    InvalidLine { from: String, to: String, reason: String },
    #[error("inverter {inverter}: {reason}")]
    InvalidBinding { inverter: InverterId, reason: String },
    #[error("network is disconnected; unreachable buses: {0:?}")]
    Disconnected(Vec<String>),
    #[error("expected {expected} source phasors, got {got}")]
    SourceCount { expected: usize, got: usize },
    #[error("nodal solve failed: {0}")]
    Solve(#[from] LinalgError),
}

/// Series branch between two buses, impedance in ohms.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSpec<T> {
    pub from: String,
    pub to: String,
    pub r: T,
    pub x: T,
}

/// Constant-impedance load given as its consumption at nominal voltage.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadSpec<T> {
    pub bus: String,
    pub p: T,
    pub q: T,
}

/// Inverter terminal binding with its coupling impedance in ohms.
#[derive(Debug, Clone, PartialEq)]
pub struct BindingSpec<T> {
    pub inverter: InverterId,
    pub bus: String,
    pub r: T,
    pub x: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line<T> {
    pub from: usize,
    pub to: usize,
    pub z: Complex<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Source<T> {
    pub inverter: InverterId,
    pub bus: usize,
    pub z: Complex<T>,
}

/// A change to one bus's shunt load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LoadChange<T> {
    /// Admittance increment in siemens.
    Admittance(Complex<T>),
    /// Consumption increment at nominal voltage (W, VAR).
    Power { p: T, q: T },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhasorNetwork<T> {
    bus_ids: Vec<String>,
    v_nom: T,
    lines: Vec<Line<T>>,
    base_loads: Vec<Complex<T>>,
    events: Vec<(usize, Complex<T>)>,
    sources: Vec<Source<T>>,
    y_bus: Vec<Complex<T>>,
}

impl<T: Scalar> PhasorNetwork<T> {
    pub fn new(
        buses: Vec<String>,
        v_nom: T,
        lines: &[LineSpec<T>],
        loads: &[LoadSpec<T>],
        bindings: &[BindingSpec<T>],
    ) -> Result<Self, NetError> {
        let mut index = BTreeMap::new();
        for (k, b) in buses.iter().enumerate() {
            if index.insert(b.clone(), k).is_some() {
                return Err(NetError::DuplicateBus(b.clone()));
            }
        }
        let lookup = |b: &str| index.get(b).copied().ok_or_else(|| NetError::UnknownBus(b.to_string()));
        let n = buses.len();

        let mut ls = Vec::with_capacity(lines.len());
        for l in lines {
            let (from, to) = (lookup(&l.from)?, lookup(&l.to)?);
            let bad = |reason: &str| NetError::InvalidLine {
                from: l.from.clone(),
                to: l.to.clone(),
                reason: reason.to_string(),
            };
            if from == to {
                return Err(bad("both ends on the same bus"));
            }
            if !(l.r >= T::zero()) || !l.x.is_finite() || !l.r.is_finite() {
                return Err(bad("resistance must be finite and non-negative"));
            }
            if l.r == T::zero() && l.x == T::zero() {
                return Err(bad("zero series impedance"));
            }
            ls.push(Line {
                from,
                to,
                z: Complex::new(l.r, l.x),
            });
        }

        let mut base_loads = vec![Complex::new(T::zero(), T::zero()); n];
        for ld in loads {
            let k = lookup(&ld.bus)?;
            base_loads[k] += power_to_admittance(ld.p, ld.q, v_nom);
        }

        let mut sources = Vec::with_capacity(bindings.len());
        let mut direct = BTreeMap::new();
        for b in bindings {
            let bus = lookup(&b.bus)?;
            let bad = |reason: &str| NetError::InvalidBinding {
                inverter: b.inverter,
                reason: reason.to_string(),
            };
            if sources.iter().any(|s: &Source<T>| s.inverter == b.inverter) {
                return Err(bad("bound twice"));
            }
            if !(b.r >= T::zero()) || !b.x.is_finite() {
                return Err(bad("coupling resistance must be finite and non-negative"));
            }
            let z = Complex::new(b.r, b.x);
            if z == Complex::new(T::zero(), T::zero()) && direct.insert(bus, b.inverter).is_some() {
                return Err(bad("two stiff sources on the same bus"));
            }
            sources.push(Source {
                inverter: b.inverter,
                bus,
                z,
            });
        }
        if sources.is_empty() {
            return Err(NetError::SourceCount { expected: 1, got: 0 });
        }

        let mut y_bus = vec![Complex::new(T::zero(), T::zero()); n * n];
        for l in &ls {
            let y = l.z.inv();
            y_bus[l.from * n + l.from] += y;
            y_bus[l.to * n + l.to] += y;
            y_bus[l.from * n + l.to] -= y;
            y_bus[l.to * n + l.from] -= y;
        }

        let net = Self {
            bus_ids: buses,
            v_nom,
            lines: ls,
            base_loads,
            events: Vec::new(),
            sources,
            y_bus,
        };
        net.check_connected()?;
        Ok(net)
    }

    fn check_connected(&self) -> Result<(), NetError> {
        let n = self.bus_ids.len();
        let mut adj = vec![Vec::new(); n];
        for l in &self.lines {
            adj[l.from].push(l.to);
            adj[l.to].push(l.from);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        let missing: Vec<String> = (0..n).filter(|&k| !seen[k]).map(|k| self.bus_ids[k].clone()).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(NetError::Disconnected(missing))
        }
    }

    pub fn bus_ids(&self) -> &[String] {
        &self.bus_ids
    }

    pub fn bus_index(&self, bus: &str) -> Option<usize> {
        self.bus_ids.iter().position(|b| b == bus)
    }

    pub fn v_nom(&self) -> T {
        self.v_nom
    }

    pub fn lines(&self) -> &[Line<T>] {
        &self.lines
    }

    pub fn sources(&self) -> &[Source<T>] {
        &self.sources
    }

    /// Line-only bus admittance matrix, row-major `n×n`.
    pub fn y_bus(&self) -> &[Complex<T>] {
        &self.y_bus
    }

    /// Current per-bus shunt admittances: base loads plus applied events.
    pub fn loads(&self) -> Vec<Complex<T>> {
        let mut y = self.base_loads.clone();
        for &(k, dy) in &self.events {
            y[k] += dy;
        }
        y
    }

    /// Shunt admittance equivalent of a consumption change at nominal voltage.
    pub fn admittance_of(&self, change: LoadChange<T>) -> Complex<T> {
        match change {
            LoadChange::Admittance(y) => y,
            LoadChange::Power { p, q } => power_to_admittance(p, q, self.v_nom),
        }
    }

    /// Returns the network with `change` applied at `bus`. Applying the
    /// exact inverse of an earlier event removes it, so the original loads
    /// are restored bit for bit.
    pub fn apply_load_event(&self, bus: &str, change: LoadChange<T>) -> Result<Self, NetError> {
        let k = self.bus_index(bus).ok_or_else(|| NetError::UnknownBus(bus.to_string()))?;
        let dy = self.admittance_of(change);
        let mut out = self.clone();
        if dy == Complex::new(T::zero(), T::zero()) {
            return Ok(out);
        }
        if let Some(pos) = out.events.iter().rposition(|&(b, y)| b == k && y == -dy) {
            out.events.remove(pos);
        } else {
            out.events.push((k, dy));
        }
        Ok(out)
    }

    /// Kron reduction onto the source nodes with the current loads.
    pub fn reduce(&self) -> Result<Reduced<T>, NetError> {
        self.reduce_with(&self.loads())
    }

    /// Kron reduction onto the source nodes with an explicit load vector.
    pub fn reduce_with(&self, loads: &[Complex<T>]) -> Result<Reduced<T>, NetError> {
        let n = self.bus_ids.len();
        if loads.len() != n {
            return Err(NetError::SourceCount {
                expected: n,
                got: loads.len(),
            });
        }
        let zero = Complex::new(T::zero(), T::zero());
        // Node numbering: buses first, then one internal node per source with
        // a non-zero coupling impedance.
        let mut source_nodes = Vec::with_capacity(self.sources.len());
        let mut internal = 0usize;
        for s in &self.sources {
            if s.z == zero {
                source_nodes.push(s.bus);
            } else {
                source_nodes.push(n + internal);
                internal += 1;
            }
        }
        let total = n + internal;
        let mut y = vec![zero; total * total];
        for r in 0..n {
            for c in 0..n {
                y[r * total + c] = self.y_bus[r * n + c];
            }
            y[r * total + r] += loads[r];
        }
        for (s, &node) in self.sources.iter().zip(&source_nodes) {
            if node >= n {
                let ys = s.z.inv();
                y[node * total + node] += ys;
                y[s.bus * total + s.bus] += ys;
                y[node * total + s.bus] -= ys;
                y[s.bus * total + node] -= ys;
            }
        }

        let is_source = {
            let mut v = vec![false; total];
            for &k in &source_nodes {
                v[k] = true;
            }
            v
        };
        let other: Vec<usize> = (0..total).filter(|&k| !is_source[k]).collect();
        let k = source_nodes.len();
        let m = other.len();

        // X = Y_nn⁻¹·Y_ns, so that V_other = −X·E.
        let mut x = vec![zero; m * k];
        if m > 0 {
            let ynn: Vec<Complex<T>> = other
                .iter()
                .flat_map(|&r| other.iter().map(move |&c| (r, c)))
                .map(|(r, c)| y[r * total + c])
                .collect();
            let lu = ComplexLu::factor(m, ynn)?;
            for (col, &sc) in source_nodes.iter().enumerate() {
                let rhs: Vec<Complex<T>> = other.iter().map(|&r| y[r * total + sc]).collect();
                let sol = lu.solve(&rhs);
                for (row, v) in sol.into_iter().enumerate() {
                    x[row * k + col] = v;
                }
            }
        }
        let mut y_red = vec![zero; k * k];
        for (i, &si) in source_nodes.iter().enumerate() {
            for (j, &sj) in source_nodes.iter().enumerate() {
                let mut acc = y[si * total + sj];
                for (row, &o) in other.iter().enumerate() {
                    acc -= y[si * total + o] * x[row * k + j];
                }
                y_red[i * k + j] = acc;
            }
        }
        Ok(Reduced {
            k,
            total,
            y_red,
            x,
            source_nodes,
            other,
        })
    }

    /// Complex power absorbed by loads and dissipated in series elements for
    /// a full node-voltage solution (buses first, then internal nodes).
    pub fn power_balance(&self, loads: &[Complex<T>], node_v: &[Complex<T>]) -> (Complex<T>, Complex<T>) {
        let zero = Complex::new(T::zero(), T::zero());
        let mut load = zero;
        for (y, v) in loads.iter().zip(node_v) {
            load += y.conj() * v.norm_sqr();
        }
        let mut loss = zero;
        for l in &self.lines {
            let i = (node_v[l.from] - node_v[l.to]) / l.z;
            loss += l.z * i.norm_sqr();
        }
        let n = self.bus_ids.len();
        let mut internal = 0usize;
        for s in &self.sources {
            if s.z != zero {
                let node = n + internal;
                internal += 1;
                let i = (node_v[node] - node_v[s.bus]) / s.z;
                loss += s.z * i.norm_sqr();
            }
        }
        (load, loss)
    }
}

/// Shunt admittance consuming `(p, q)` at voltage `v`: `y = (p − jq)/v²`.
#[inline]
pub fn power_to_admittance<T: Scalar>(p: T, q: T, v: T) -> Complex<T> {
    Complex::new(p, -q) / (v * v)
}

/// Source phasor `V∠δ`.
#[inline]
pub fn phasor<T: Scalar>(v: T, delta: T) -> Complex<T> {
    Complex::from_polar(v, delta)
}

/// Kron-reduced network for one load vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Reduced<T> {
    k: usize,
    total: usize,
    y_red: Vec<Complex<T>>,
    x: Vec<Complex<T>>,
    source_nodes: Vec<usize>,
    other: Vec<usize>,
}

impl<T: Scalar> Reduced<T> {
    pub fn sources(&self) -> usize {
        self.k
    }

    /// Reduced admittance entry `(i, j)`.
    #[inline]
    pub fn y(&self, i: usize, j: usize) -> Complex<T> {
        self.y_red[i * self.k + j]
    }

    pub fn y_red(&self) -> &[Complex<T>] {
        &self.y_red
    }

    /// Source currents `I = Y_red·E`.
    pub fn currents(&self, e: &[Complex<T>]) -> Vec<Complex<T>> {
        (0..self.k)
            .map(|i| {
                let mut acc = Complex::new(T::zero(), T::zero());
                for (j, ej) in e.iter().enumerate() {
                    acc += self.y(i, j) * ej;
                }
                acc
            })
            .collect()
    }

    /// Injected `(P, Q)` per source for source phasors `(V, δ)`.
    pub fn injections(&self, sources: &[(T, T)]) -> Result<Vec<(T, T)>, NetError> {
        if sources.len() != self.k {
            return Err(NetError::SourceCount {
                expected: self.k,
                got: sources.len(),
            });
        }
        let e: Vec<Complex<T>> = sources.iter().map(|&(v, d)| phasor(v, d)).collect();
        let i = self.currents(&e);
        Ok(e.iter()
            .zip(&i)
            .map(|(e, i)| {
                let s = e * i.conj();
                (s.re, s.im)
            })
            .collect())
    }

    /// All node voltages (buses, then internal source nodes).
    pub fn node_voltages(&self, e: &[Complex<T>]) -> Vec<Complex<T>> {
        let mut v = vec![Complex::new(T::zero(), T::zero()); self.total];
        for (&node, &ej) in self.source_nodes.iter().zip(e) {
            v[node] = ej;
        }
        for (row, &node) in self.other.iter().enumerate() {
            let mut acc = Complex::new(T::zero(), T::zero());
            for (j, ej) in e.iter().enumerate() {
                acc -= self.x[row * self.k + j] * ej;
            }
            v[node] = acc;
        }
        v
    }
}

/// Injected `(P, Q)` per inverter for source phasors `(V, δ)`.
pub fn solve_injections<T: Scalar>(net: &PhasorNetwork<T>, sources: &[(T, T)]) -> Result<Vec<(T, T)>, NetError> {
    net.reduce()?.injections(sources)
}

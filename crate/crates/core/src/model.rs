//! Shared domain types: inverter ratings and gains, per-inverter dynamic
//! state, and the weighted consensus graph with its Laplacians.
//!
//! Droop gains `m` and `n` are stored per-unit on each inverter's own
//! `(s_max, v_nom, omega_nom)` base and converted to SI with
//! [`InverterParams::m_si`] / [`InverterParams::n_si`] wherever they meet
//! watts, vars, volts or rad/s.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub type InverterId = u32;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("inverter {id}: {reason}")]
    InvalidParams { id: InverterId, reason: String },
    #[error("communication graph is disconnected; components: {components:?}")]
    Disconnected { components: Vec<Vec<InverterId>> },
    #[error("edge ({i}, {j}): {reason}")]
    InvalidEdge {
        i: InverterId,
        j: InverterId,
        reason: String,
    },
    #[error("duplicate inverter id {0}")]
    DuplicateId(InverterId),
    #[error("graph gains are not uniform on the {channel} channel")]
    NonUniformGains { channel: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InverterKind {
    Droop,
    Vsm,
}

/// Static ratings and control gains of one grid-forming inverter.
#[derive(Debug, Clone, PartialEq)]
pub struct InverterParams<T> {
    pub id: InverterId,
    pub kind: InverterKind,
    /// Apparent-power rating (VA).
    pub s_max: T,
    /// Current limit (A); documents how `s_max` was derived, unused by the dynamics.
    pub i_max: Option<T>,
    /// Active power setpoint P* (W).
    pub p_set: T,
    /// Reactive power setpoint Q* (VAR).
    pub q_set: T,
    /// Voltage setpoint V* (V).
    pub v_nom: T,
    /// Frequency setpoint ω* (rad/s).
    pub omega_nom: T,
    /// P–ω droop gain, per-unit.
    pub m: T,
    /// Q–V droop gain, per-unit.
    pub n: T,
    /// Virtual inertia M_ω (s). VSM only.
    pub m_omega: T,
    /// Voltage loop time constant τ_V (s). VSM only.
    pub tau_v: T,
    /// Inverse integral frequency gain (s).
    pub k_i: T,
    /// Inverse integral voltage gain (s).
    pub kappa_i: T,
    /// Voltage-deviation consensus gain ξ.
    pub xi: T,
    /// Total active energy capacity Ē_c (W·s).
    pub e_capacity: T,
}

impl<T: Scalar> InverterParams<T> {
    /// Reference gains and ratings: 2.5 MVA at 480 V line-to-line, `m` of
    /// 2⁻⁶ pu and `n` of 20×10⁻⁶ V/VAR stored per-unit. VSM constants
    /// default to 0.1 s.
    pub fn reference(id: InverterId, kind: InverterKind) -> Self {
        let s_max = T::c(2.5e6);
        let v_nom = T::c(480.0 * (2.0f64 / 3.0).sqrt());
        Self {
            id,
            kind,
            s_max,
            i_max: None,
            p_set: T::c(1.2e6),
            q_set: T::c(0.6e6),
            v_nom,
            omega_nom: T::c(2.0 * std::f64::consts::PI * 60.0),
            m: T::c(0.015625),
            n: T::c(20e-6) * s_max / v_nom,
            m_omega: T::c(0.1),
            tau_v: T::c(0.1),
            k_i: T::c(0.05),
            kappa_i: T::c(0.05),
            xi: T::c(0.1),
            e_capacity: s_max * T::c(3600.0),
        }
    }

    /// P–ω droop gain in rad/s per W.
    #[inline]
    pub fn m_si(&self) -> T {
        self.m * self.omega_nom / self.s_max
    }

    /// Q–V droop gain in V per VAR.
    #[inline]
    pub fn n_si(&self) -> T {
        self.n * self.v_nom / self.s_max
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |reason: &str| {
            Err(ModelError::InvalidParams {
                id: self.id,
                reason: reason.to_string(),
            })
        };
        let all = [
            self.s_max,
            self.p_set,
            self.q_set,
            self.v_nom,
            self.omega_nom,
            self.m,
            self.n,
            self.m_omega,
            self.tau_v,
            self.k_i,
            self.kappa_i,
            self.xi,
            self.e_capacity,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return bad("non-finite parameter");
        }
        if self.s_max <= T::zero() {
            return bad("s_max must be positive");
        }
        if self.p_set * self.p_set + self.q_set * self.q_set > self.s_max * self.s_max {
            return bad("setpoint (P*, Q*) exceeds the apparent-power rating");
        }
        if self.v_nom <= T::zero() || self.omega_nom <= T::zero() {
            return bad("v_nom and omega_nom must be positive");
        }
        if self.m <= T::zero() || self.n <= T::zero() {
            return bad("droop gains m and n must be positive");
        }
        if self.k_i <= T::zero() || self.kappa_i <= T::zero() {
            return bad("inverse integral gains k_i and kappa_i must be positive");
        }
        if self.xi < T::zero() {
            return bad("xi must be non-negative");
        }
        if self.kind == InverterKind::Vsm && (self.m_omega <= T::zero() || self.tau_v <= T::zero()) {
            return bad("VSM inverters need positive m_omega and tau_v");
        }
        if let Some(i) = self.i_max {
            if !(i > T::zero()) {
                return bad("i_max must be positive when given");
            }
        }
        Ok(())
    }
}

/// Dynamic state of one inverter (all SI).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InverterState<T> {
    pub delta: T,
    pub d_omega: T,
    pub v: T,
    pub omega_cons: T,
    pub e_cons: T,
    pub p_filt: T,
    pub q_filt: T,
    pub d_e: T,
    pub d_f: T,
    pub f_capacity: T,
}

impl<T: Scalar> InverterState<T> {
    pub fn is_finite(&self) -> bool {
        [
            self.delta,
            self.d_omega,
            self.v,
            self.omega_cons,
            self.e_cons,
            self.p_filt,
            self.q_filt,
            self.d_e,
            self.d_f,
            self.f_capacity,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

/// One undirected consensus link with its four channel gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge<T> {
    pub i: usize,
    pub j: usize,
    pub a: T,
    pub b: T,
    pub e: T,
    pub f: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    /// Frequency consensus.
    A,
    /// Reactive power sharing.
    B,
    /// Active energy reserve.
    E,
    /// Reactive energy reserve.
    F,
}

impl<T: Copy> Edge<T> {
    #[inline]
    pub fn weight(&self, kind: WeightKind) -> T {
        match kind {
            WeightKind::A => self.a,
            WeightKind::B => self.b,
            WeightKind::E => self.e,
            WeightKind::F => self.f,
        }
    }
}

/// A neighbor of some node as seen from that node's row of the graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link<T> {
    pub neighbor: InverterId,
    pub a: T,
    pub b: T,
    pub e: T,
    pub f: T,
}

/// Weighted undirected consensus graph over inverter ids.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph<T> {
    ids: Vec<InverterId>,
    edges: Vec<Edge<T>>,
}

/// Edge description by inverter id, used to build a [`CommGraph`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeSpec<T> {
    pub i: InverterId,
    pub j: InverterId,
    pub a: T,
    pub b: T,
    pub e: T,
    pub f: T,
}

impl<T: Scalar> CommGraph<T> {
    /// Builds and validates a graph. Rejects self loops, duplicate or
    /// unknown endpoints, negative weights and disconnected topologies.
    pub fn new(ids: Vec<InverterId>, edges: &[EdgeSpec<T>]) -> Result<Self, ModelError> {
        let g = Self::new_unchecked(ids, edges)?;
        let comps = g.components();
        if comps.len() > 1 {
            return Err(ModelError::Disconnected { components: comps });
        }
        Ok(g)
    }

    /// Same validation as [`CommGraph::new`] except connectivity. Used for
    /// degraded topologies where some agents have dropped out.
    pub fn new_unchecked(ids: Vec<InverterId>, edges: &[EdgeSpec<T>]) -> Result<Self, ModelError> {
        let mut seen = BTreeSet::new();
        for &id in &ids {
            if !seen.insert(id) {
                return Err(ModelError::DuplicateId(id));
            }
        }
        let index: BTreeMap<InverterId, usize> = ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();
        let mut pairs = BTreeSet::new();
        let mut out = Vec::with_capacity(edges.len());
        for s in edges {
            let err = |reason: &str| ModelError::InvalidEdge {
                i: s.i,
                j: s.j,
                reason: reason.to_string(),
            };
            let (Some(&i), Some(&j)) = (index.get(&s.i), index.get(&s.j)) else {
                return Err(err("unknown endpoint"));
            };
            if i == j {
                return Err(err("self loop"));
            }
            if !pairs.insert((i.min(j), i.max(j))) {
                return Err(err("duplicate edge"));
            }
            let w = [s.a, s.b, s.e, s.f];
            if w.iter().any(|x| !x.is_finite() || *x < T::zero()) {
                return Err(err("weights must be finite and non-negative"));
            }
            out.push(Edge {
                i,
                j,
                a: s.a,
                b: s.b,
                e: s.e,
                f: s.f,
            });
        }
        Ok(Self { ids, edges: out })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[InverterId] {
        &self.ids
    }

    pub fn edges(&self) -> &[Edge<T>] {
        &self.edges
    }

    pub fn index_of(&self, id: InverterId) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }

    /// Neighbors of node `idx` in edge-list order.
    pub fn row(&self, idx: usize) -> Vec<Link<T>> {
        self.edges
            .iter()
            .filter_map(|e| {
                let other = if e.i == idx {
                    e.j
                } else if e.j == idx {
                    e.i
                } else {
                    return None;
                };
                Some(Link {
                    neighbor: self.ids[other],
                    a: e.a,
                    b: e.b,
                    e: e.e,
                    f: e.f,
                })
            })
            .collect()
    }

    /// Connected components as sorted id lists.
    pub fn components(&self) -> Vec<Vec<InverterId>> {
        let n = self.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            let mut c = x;
            while p[c] != r {
                let next = p[c];
                p[c] = r;
                c = next;
            }
            r
        }
        for e in &self.edges {
            let (ri, rj) = (find(&mut parent, e.i), find(&mut parent, e.j));
            if ri != rj {
                parent[ri] = rj;
            }
        }
        let mut groups: BTreeMap<usize, Vec<InverterId>> = BTreeMap::new();
        for k in 0..n {
            let r = find(&mut parent, k);
            groups.entry(r).or_default().push(self.ids[k]);
        }
        let mut comps: Vec<Vec<InverterId>> = groups.into_values().collect();
        for c in &mut comps {
            c.sort_unstable();
        }
        comps.sort();
        comps
    }

    /// Graph with every link touching `id` removed (connectivity not enforced).
    pub fn isolate(&self, id: InverterId) -> Self {
        let Some(k) = self.index_of(id) else {
            return self.clone();
        };
        Self {
            ids: self.ids.clone(),
            edges: self.edges.iter().copied().filter(|e| e.i != k && e.j != k).collect(),
        }
    }

    /// Copy with every `e` (resp. `f`) weight replaced by `value`.
    pub fn with_uniform(&self, kind: WeightKind, value: T) -> Self {
        let mut g = self.clone();
        for e in &mut g.edges {
            match kind {
                WeightKind::A => e.a = value,
                WeightKind::B => e.b = value,
                WeightKind::E => e.e = value,
                WeightKind::F => e.f = value,
            }
        }
        g
    }

    /// Weighted Laplacian of one channel: `L[i][j] = −w_ij`, `L[i][i] = Σ_j w_ij`.
    pub fn laplacian(&self, kind: WeightKind) -> Matrix<T> {
        let n = self.len();
        let mut l = Matrix::zeros(n, n);
        for e in &self.edges {
            let w = e.weight(kind);
            l[(e.i, e.j)] -= w;
            l[(e.j, e.i)] -= w;
        }
        // Diagonal as the exact negated sum of the row, so rows sum to zero.
        for i in 0..n {
            let s: T = (0..n).filter(|&j| j != i).map(|j| l[(i, j)]).sum();
            l[(i, i)] = -s;
        }
        l
    }

    /// `(γ_e, γ_f)` such that `L_e = γ_e·L_a` and `L_f = γ_f·L_b`.
    pub fn gamma_ratios(&self) -> Result<(T, T), ModelError> {
        let ge = uniform_ratio(self.edges.iter().map(|e| (e.e, e.a))).ok_or(ModelError::NonUniformGains { channel: "e/a" })?;
        let gf = uniform_ratio(self.edges.iter().map(|e| (e.f, e.b))).ok_or(ModelError::NonUniformGains { channel: "f/b" })?;
        Ok((ge, gf))
    }
}

fn uniform_ratio<T: Scalar>(pairs: impl Iterator<Item = (T, T)>) -> Option<T> {
    let mut ratio: Option<T> = None;
    for (num, den) in pairs {
        if den == T::zero() {
            if num != T::zero() {
                return None;
            }
            continue;
        }
        let r = num / den;
        match ratio {
            None => ratio = Some(r),
            Some(r0) => {
                let tol = T::c(1e-12) * r0.abs().max(r.abs());
                if (r - r0).abs() > tol {
                    return None;
                }
            }
        }
    }
    Some(ratio.unwrap_or_else(T::zero))
}

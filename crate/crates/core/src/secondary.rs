//! DAPI secondary control with regulation-energy-reserve consensus.
//!
//! ```text
//! k_i·Ω̇_i = −Δω_i − Σ_j a_ij(Ω_i − Ω_j) − Σ_j e_ij(m_iΔE_i − m_jΔE_j)
//! κ_i·ė_i = −ξ_iΔV_i − Σ_j b_ij(Q_i/Q*_i − Q_j/Q*_j) − Σ_j f_ij(n_iΔF_i − n_jΔF_j)
//! ```
//!
//! Neighbor quantities enter only through the four broadcast values of
//! [`ConsensusVars`], so a controller needs no knowledge of neighbor
//! parameters.

use std::collections::BTreeMap;

use crate::model::{InverterId, InverterParams, Link};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SecondaryError {
    #[error("steady-state prediction needs homogeneous droop gains")]
    Heterogeneous,
    #[error("no inverters")]
    Empty,
}

/// The values one controller broadcasts to its neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConsensusVars<T> {
    pub omega_cons: T,
    pub q_ratio: T,
    pub m_de: T,
    pub n_df: T,
}

/// Latest value received from one neighbor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborEntry<T> {
    pub vars: ConsensusVars<T>,
    pub seq: u64,
    /// Sender clock of the record.
    pub t: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Accept {
    Accepted,
    /// Sequence number not newer than the last accepted one.
    Stale,
    /// Sender is not a declared neighbor.
    Foreign,
}

/// Zero-order-hold store of neighbor values.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborView<T> {
    entries: BTreeMap<InverterId, Option<NeighborEntry<T>>>,
}

impl<T: Scalar> NeighborView<T> {
    pub fn new(neighbors: impl IntoIterator<Item = InverterId>) -> Self {
        Self {
            entries: neighbors.into_iter().map(|id| (id, None)).collect(),
        }
    }

    pub fn from_row(row: &[Link<T>]) -> Self {
        Self::new(row.iter().map(|l| l.neighbor))
    }

    pub fn accept(&mut self, sender: InverterId, seq: u64, t: T, vars: ConsensusVars<T>) -> Accept {
        match self.entries.get_mut(&sender) {
            None => Accept::Foreign,
            Some(slot) => {
                if let Some(prev) = slot {
                    if seq <= prev.seq {
                        return Accept::Stale;
                    }
                }
                *slot = Some(NeighborEntry { vars, seq, t });
                Accept::Accepted
            }
        }
    }

    pub fn get(&self, id: InverterId) -> Option<&NeighborEntry<T>> {
        self.entries.get(&id).and_then(|e| e.as_ref())
    }

    pub fn vars(&self, id: InverterId) -> Option<ConsensusVars<T>> {
        self.get(id).map(|e| e.vars)
    }

    /// Declared neighbors from which nothing has been received yet.
    pub fn missing(&self) -> Vec<InverterId> {
        self.entries.iter().filter(|(_, v)| v.is_none()).map(|(&k, _)| k).collect()
    }

    /// Oldest sender timestamp across neighbors that have reported.
    pub fn oldest(&self) -> Option<T> {
        self.entries.values().flatten().map(|e| e.t).reduce(|a, b| a.min(b))
    }
}

/// `Ω̇_i` given a lookup of neighbor values; links without data are skipped.
pub fn freq_rate_with<T: Scalar>(
    k_i: T,
    d_omega: T,
    local: &ConsensusVars<T>,
    row: &[Link<T>],
    lookup: impl Fn(InverterId) -> Option<ConsensusVars<T>>,
) -> T {
    let mut acc = -d_omega;
    for l in row {
        if let Some(nb) = lookup(l.neighbor) {
            acc -= l.a * (local.omega_cons - nb.omega_cons);
            acc -= l.e * (local.m_de - nb.m_de);
        }
    }
    acc / k_i
}

/// `ė_i` given a lookup of neighbor values; links without data are skipped.
pub fn volt_rate_with<T: Scalar>(
    kappa_i: T,
    xi: T,
    d_v: T,
    local: &ConsensusVars<T>,
    row: &[Link<T>],
    lookup: impl Fn(InverterId) -> Option<ConsensusVars<T>>,
) -> T {
    let mut acc = -xi * d_v;
    for l in row {
        if let Some(nb) = lookup(l.neighbor) {
            acc -= l.b * (local.q_ratio - nb.q_ratio);
            acc -= l.f * (local.n_df - nb.n_df);
        }
    }
    acc / kappa_i
}

/// Frequency consensus rate `dΩ_i/dt` from the latest neighbor snapshot.
pub fn dapi_freq_rate<T: Scalar>(
    params: &InverterParams<T>,
    local: &ConsensusVars<T>,
    d_omega: T,
    neighbors: &NeighborView<T>,
    row: &[Link<T>],
) -> T {
    freq_rate_with(params.k_i, d_omega, local, row, |id| neighbors.vars(id))
}

/// Voltage consensus rate `de_i/dt`; `d_v` is the deviation from the
/// active voltage reference.
pub fn dapi_volt_rate<T: Scalar>(
    params: &InverterParams<T>,
    local: &ConsensusVars<T>,
    d_v: T,
    neighbors: &NeighborView<T>,
    row: &[Link<T>],
) -> T {
    volt_rate_with(params.kappa_i, params.xi, d_v, local, row, |id| neighbors.vars(id))
}

/// Regulation energy bookkeeping for one inverter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReserveState<T> {
    pub d_e: T,
    pub d_f: T,
    pub e_capacity: T,
    pub e_unused: T,
    pub f_capacity: T,
    pub f_unused: T,
    last: Option<(T, T)>,
}

impl<T: Scalar> ReserveState<T> {
    pub fn new(e_capacity: T) -> Self {
        Self {
            d_e: T::zero(),
            d_f: T::zero(),
            e_capacity,
            e_unused: e_capacity,
            f_capacity: T::zero(),
            f_unused: T::zero(),
            last: None,
        }
    }

    /// Seeds the trapezoid with the deviation sample at the start time.
    pub fn with_initial_sample(mut self, dp: T, dq: T) -> Self {
        self.last = Some((dp, dq));
        self
    }

    fn refresh(&mut self) {
        self.e_unused = self.e_capacity - self.d_e;
        self.f_unused = self.f_capacity - self.d_f;
    }
}

/// Adds the trapezoidal integral of `(ΔP, ΔQ)` over the last `dt`. The
/// interval starts at the previous sample, or at this one on the first call.
pub fn energy_update<T: Scalar>(reserve: &ReserveState<T>, dp: T, dq: T, dt: T) -> ReserveState<T> {
    let (p0, q0) = reserve.last.unwrap_or((dp, dq));
    let half = T::c(0.5) * dt;
    let mut r = *reserve;
    r.d_e += half * (p0 + dp);
    r.d_f += half * (q0 + dq);
    r.last = Some((dp, dq));
    r.refresh();
    r
}

/// Accumulates unused reactive capability over `dt`:
/// `F̄_c += max(√max(S² − P², 0) − |Q|, 0)·dt`.
#[inline]
pub fn reactive_headroom<T: Scalar>(f_capacity: T, s_max: T, p: T, q: T, dt: T) -> T {
    let avail = (s_max * s_max - p * p).max(T::zero()).sqrt();
    f_capacity + (avail - q.abs()).max(T::zero()) * dt
}

/// Same as [`reactive_headroom`] but applied to a [`ReserveState`].
pub fn headroom_update<T: Scalar>(reserve: &ReserveState<T>, s_max: T, p: T, q: T, dt: T) -> ReserveState<T> {
    let mut r = *reserve;
    r.f_capacity = reactive_headroom(r.f_capacity, s_max, p, q, dt);
    r.refresh();
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState<T> {
    /// Settled frequency (rad/s).
    pub omega: T,
    /// Settled frequency consensus value per inverter (rad/s).
    pub omega_cons: Vec<T>,
    /// Per-inverter power deviation from setpoint (W).
    pub c: T,
}

/// Closed-loop equilibrium for homogeneous droop gains: every inverter takes
/// an equal share `c` of the excess load and `Ω̄ = m·c`.
pub fn steady_state_predict<T: Scalar>(params: &[InverterParams<T>], total_dp: T) -> Result<SteadyState<T>, SecondaryError> {
    let first = params.first().ok_or(SecondaryError::Empty)?;
    let m = first.m_si();
    let w = first.omega_nom;
    for p in params {
        if (p.m_si() - m).abs() > T::c(1e-12) * m.abs() || p.omega_nom != w {
            return Err(SecondaryError::Heterogeneous);
        }
    }
    let c = total_dp / T::c(params.len() as f64);
    Ok(SteadyState {
        omega: w,
        omega_cons: vec![m * c; params.len()],
        c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InverterKind;
    use proptest::prelude::*;

    fn link(neighbor: u32, a: f64, b: f64, e: f64, f: f64) -> Link<f64> {
        Link { neighbor, a, b, e, f }
    }

    fn view(vars: ConsensusVars<f64>) -> NeighborView<f64> {
        let mut v = NeighborView::new([2]);
        assert_eq!(v.accept(2, 1, 0.0, vars), Accept::Accepted);
        v
    }

    fn params() -> InverterParams<f64> {
        InverterParams::reference(1, InverterKind::Droop)
    }

    #[test]
    fn frequency_rate_examples() {
        let p = params();
        let local = ConsensusVars { omega_cons: 0.1, ..Default::default() };
        let nb = view(ConsensusVars::default());
        let r = dapi_freq_rate(&p, &local, 0.0, &nb, &[link(2, 1.0, 0.0, 0.0, 0.0)]);
        assert!((r + 2.0).abs() < 1e-12);

        let local = ConsensusVars { m_de: 0.2, ..Default::default() };
        let r = dapi_freq_rate(&p, &local, 0.0, &nb, &[link(2, 1.0, 0.0, 0.5, 0.0)]);
        assert!((p.k_i * r + 0.1).abs() < 1e-12);

        let same = ConsensusVars { omega_cons: 0.3, q_ratio: 1.0, m_de: 0.7, n_df: 0.2 };
        let r = dapi_freq_rate(&p, &same, 0.0, &view(same), &[link(2, 1.0, 1.0, 0.5, 0.05)]);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn voltage_rate_examples() {
        let p = params();
        let nb = view(ConsensusVars::default());
        let r = dapi_volt_rate(&p, &ConsensusVars::default(), 10.0, &nb, &[link(2, 0.0, 0.0, 0.0, 0.0)]);
        assert!((r + 20.0).abs() < 1e-12);

        let nb = view(ConsensusVars { q_ratio: 1.0, ..Default::default() });
        let local = ConsensusVars { q_ratio: 1.2, ..Default::default() };
        let r = dapi_volt_rate(&p, &local, 0.0, &nb, &[link(2, 0.0, 1.0, 0.0, 0.0)]);
        assert!((p.kappa_i * r + 0.2).abs() < 1e-12);
    }

    #[test]
    fn neighbor_view_ordering() {
        let mut v = NeighborView::<f64>::new([2, 3]);
        let x = ConsensusVars::default();
        assert_eq!(v.accept(4, 1, 0.0, x), Accept::Foreign);
        assert_eq!(v.accept(2, 5, 0.0, x), Accept::Accepted);
        assert_eq!(v.accept(2, 5, 0.1, x), Accept::Stale);
        assert_eq!(v.accept(2, 4, 0.1, x), Accept::Stale);
        assert_eq!(v.missing(), vec![3]);
        let empty = dapi_freq_rate(&params(), &x, 0.5, &NeighborView::new([2]), &[link(2, 1.0, 0.0, 0.0, 0.0)]);
        assert!((empty + 0.5 / params().k_i).abs() < 1e-12);
    }

    #[test]
    fn energy_integration() {
        let mut r = ReserveState::<f64>::new(100.0);
        for _ in 0..1000 {
            r = energy_update(&r, 0.0, 0.0, 0.01);
        }
        assert_eq!(r.d_e, 0.0);
        let mut r = ReserveState::<f64>::new(100.0);
        for _ in 0..10_000 {
            r = energy_update(&r, 0.1, 0.0, 1e-3);
        }
        assert!((r.d_e - 1.0).abs() < 1e-9);

        let dt = 1e-3;
        let w = 2.0 * std::f64::consts::PI;
        let mut r = ReserveState::<f64>::new(0.0).with_initial_sample(0.0, 0.0);
        for k in 1..=1000 {
            let s = (w * k as f64 * dt).sin();
            r = energy_update(&r, s, 0.0, dt);
        }
        assert!(r.d_e.abs() < dt * dt);
    }

    #[test]
    fn headroom_examples() {
        assert!((reactive_headroom(0.0f64, 2.5, 1.5, 1.0, 1.0) - 1.0).abs() < 1e-15);
        assert_eq!(reactive_headroom(3.0, 2.5, 1.5, 2.5, 1.0), 3.0);
        assert_eq!(reactive_headroom(3.0, 2.5, 2.6, 0.0, 1.0), 3.0);
    }

    #[test]
    fn steady_state_examples() {
        let ps: Vec<_> = (1..=3).map(|i| InverterParams::<f64>::reference(i, InverterKind::Droop)).collect();
        let z = steady_state_predict(&ps, 0.0).unwrap();
        assert_eq!(z.c, 0.0);
        assert!(z.omega_cons.iter().all(|&o| o == 0.0));
        let s = ps[0].s_max;
        let r = steady_state_predict(&ps, 0.3 * s).unwrap();
        assert!((r.c - 0.1 * s).abs() < 1e-6);
        assert!((r.omega_cons[0] - 0.1 * s * ps[0].m_si()).abs() < 1e-12);
        let mut het = ps.clone();
        het[0].s_max = 5e6;
        assert_eq!(steady_state_predict(&het, 1.0), Err(SecondaryError::Heterogeneous));
    }

    proptest! {
        #[test]
        fn bookkeeping_identities(steps in proptest::collection::vec((-1e5f64..1e5, -1e5f64..1e5, -1e5f64..1e5), 1..50)) {
            let mut r = ReserveState::new(9e9);
            for (dp, dq, p) in steps {
                r = energy_update(&r, dp, dq, 1e-3);
                r = headroom_update(&r, 2.5e6, p, dq, 1e-3);
                let tol_e = 4.0 * f64::EPSILON * r.e_capacity.abs().max(r.d_e.abs());
                let tol_f = 4.0 * f64::EPSILON * r.f_capacity.abs().max(r.d_f.abs()).max(1.0);
                prop_assert!((r.e_unused + r.d_e - r.e_capacity).abs() <= tol_e);
                prop_assert!((r.f_unused + r.d_f - r.f_capacity).abs() <= tol_f);
            }
        }
    }
}

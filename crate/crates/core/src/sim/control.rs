//! Per-inverter controller evaluation shared by the monolithic engine and
//! the agent runtime.
//!
//! State slots per inverter, in order:
//! `[δ, Δω, V, Ω, e, P_f, Q_f, ΔE, ΔF]`. For droop inverters `Δω` and `V`
//! are algebraic; their rates are zero and the engine refreshes them from
//! [`outputs`] on every step boundary.

use crate::config::PowerSignal;
use crate::model::{InverterId, InverterKind, InverterParams, InverterState, Link};
use crate::primary::{droop_outputs, lpf_rate, vsm_derivatives};
use crate::secondary::{freq_rate_with, volt_rate_with, ConsensusVars};

use super::Control;

pub const STATE: usize = 9;
pub const DELTA: usize = 0;
pub const D_OMEGA: usize = 1;
pub const V: usize = 2;
pub const OMEGA: usize = 3;
pub const E: usize = 4;
pub const P_F: usize = 5;
pub const Q_F: usize = 6;
pub const D_E: usize = 7;
pub const D_F: usize = 8;

/// Frequency deviation and voltage magnitude presented to the network.
#[inline]
pub fn outputs(p: &InverterParams<f64>, v_ref: f64, x: &[f64]) -> (f64, f64) {
    match p.kind {
        InverterKind::Droop => droop_outputs(p, v_ref, x[P_F], x[Q_F], x[OMEGA], x[E]),
        InverterKind::Vsm => (x[D_OMEGA], x[V]),
    }
}

/// Power pair driving the primary law: filtered for droop, per `ctrl` for VSM.
#[inline]
pub fn control_power(p: &InverterParams<f64>, ctrl: &Control, x: &[f64], pq: (f64, f64)) -> (f64, f64) {
    match (p.kind, ctrl.vsm_power) {
        (InverterKind::Vsm, PowerSignal::Instantaneous) => pq,
        _ => (x[P_F], x[Q_F]),
    }
}

/// Values this inverter broadcasts to its neighbors.
#[inline]
pub fn consensus_vars(p: &InverterParams<f64>, ctrl: &Control, x: &[f64], pq: (f64, f64)) -> ConsensusVars<f64> {
    let (_, q) = control_power(p, ctrl, x, pq);
    ConsensusVars {
        omega_cons: x[OMEGA],
        q_ratio: q / p.q_set,
        m_de: p.m_si() * x[D_E],
        n_df: p.n_si() * x[D_F],
    }
}

/// Rates of every slot except `δ`, whose rate is the `Δω` output.
#[allow(clippy::too_many_arguments)]
pub fn rates(
    p: &InverterParams<f64>,
    ctrl: &Control,
    v_ref: f64,
    x: &[f64],
    out: (f64, f64),
    pq: (f64, f64),
    local: &ConsensusVars<f64>,
    row: &[Link<f64>],
    lookup: impl Fn(InverterId) -> Option<ConsensusVars<f64>>,
    dx: &mut [f64],
) {
    let (d_omega, v) = out;
    let (p_meas, q_meas) = pq;
    dx[DELTA] = d_omega;
    match p.kind {
        InverterKind::Droop => {
            dx[D_OMEGA] = 0.0;
            dx[V] = 0.0;
        }
        InverterKind::Vsm => {
            let (ps, qs) = control_power(p, ctrl, x, pq);
            let st = InverterState {
                d_omega: x[D_OMEGA],
                v: x[V],
                omega_cons: x[OMEGA],
                e_cons: x[E],
                ..Default::default()
            };
            let (_, dw, dv) = vsm_derivatives(p, v_ref, &st, ps, qs);
            dx[D_OMEGA] = dw;
            dx[V] = dv;
        }
    }
    dx[OMEGA] = freq_rate_with(p.k_i, d_omega, local, row, &lookup);
    dx[E] = volt_rate_with(p.kappa_i, p.xi, v - v_ref, local, row, &lookup);
    dx[P_F] = lpf_rate(x[P_F], p_meas, ctrl.omega_c);
    dx[Q_F] = lpf_rate(x[Q_F], q_meas, ctrl.omega_c);
    dx[D_E] = p_meas - p.p_set;
    dx[D_F] = q_meas - p.q_set;
}

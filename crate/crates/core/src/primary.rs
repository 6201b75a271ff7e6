//! Primary control: droop law, VSM dynamics, measurement filter, and the
//! dq-frame LC output filter used by the single-inverter detailed model.
//!
//! Every function takes and returns SI quantities; per-unit droop gains are
//! converted through [`InverterParams::m_si`] and [`InverterParams::n_si`].
//! `v_ref` is the voltage reference currently in force (normally `v_nom`,
//! lower while a voltage ramp is active).

use crate::model::{InverterParams, InverterState};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PrimaryError {
    #[error("filter discretization unstable: omega_c*dt = {0} must be below 2")]
    UnstableFilter(f64),
    #[error("filter cutoff and step must be positive")]
    NonPositive,
    #[error("invalid LC filter parameters: {0}")]
    InvalidFilter(&'static str),
}

/// Droop law with secondary terms: returns `(Δω, V)`.
///
/// `Δω = −m·(P − P*) + Ω`, `V = v_ref − n·(Q − Q*) + e`.
#[inline]
pub fn droop_outputs<T: Scalar>(
    params: &InverterParams<T>,
    v_ref: T,
    p_filt: T,
    q_filt: T,
    omega_cons: T,
    e_cons: T,
) -> (T, T) {
    let d_omega = -params.m_si() * (p_filt - params.p_set) + omega_cons;
    let v = v_ref - params.n_si() * (q_filt - params.q_set) + e_cons;
    (d_omega, v)
}

/// VSM dynamics: returns `(δ̇, Δω̇, V̇)`.
#[inline]
pub fn vsm_derivatives<T: Scalar>(
    params: &InverterParams<T>,
    v_ref: T,
    state: &InverterState<T>,
    p: T,
    q: T,
) -> (T, T, T) {
    let dd = state.d_omega;
    let dw = (-state.d_omega - params.m_si() * (p - params.p_set) + state.omega_cons) / params.m_omega;
    let dv = (-(state.v - v_ref) - params.n_si() * (q - params.q_set) + state.e_cons) / params.tau_v;
    (dd, dw, dv)
}

/// Right-hand side of the first-order measurement filter `ẏ = ω_c(u − y)`.
#[inline]
pub fn lpf_rate<T: Scalar>(y: T, u: T, omega_c: T) -> T {
    omega_c * (u - y)
}

/// One forward-Euler step of the measurement filter.
pub fn lpf_step<T: Scalar>(y: T, u: T, omega_c: T, dt: T) -> Result<T, PrimaryError> {
    if !(omega_c > T::zero() && dt > T::zero()) {
        return Err(PrimaryError::NonPositive);
    }
    let a = omega_c * dt;
    if a >= T::c(2.0) {
        return Err(PrimaryError::UnstableFilter(a.as_f64()));
    }
    Ok(y + a * (u - y))
}

/// LC output filter constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LcParams<T> {
    pub c_f: T,
    pub l_f: T,
    pub r_f: T,
}

impl<T: Scalar> LcParams<T> {
    pub fn validate(&self) -> Result<(), PrimaryError> {
        if !(self.c_f > T::zero()) {
            return Err(PrimaryError::InvalidFilter("C_f must be positive"));
        }
        if !(self.l_f > T::zero()) {
            return Err(PrimaryError::InvalidFilter("L_f must be positive"));
        }
        if !(self.r_f >= T::zero()) {
            return Err(PrimaryError::InvalidFilter("R_f must be non-negative"));
        }
        Ok(())
    }
}

/// dq-frame LC filter state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LcFilterState<T> {
    pub v_gd: T,
    pub v_gq: T,
    pub i_d: T,
    pub i_q: T,
    pub i_gd: T,
    pub i_gq: T,
    pub params: LcParams<T>,
}

impl<T: Scalar> LcFilterState<T> {
    pub fn zero(params: LcParams<T>) -> Self {
        Self {
            v_gd: T::zero(),
            v_gq: T::zero(),
            i_d: T::zero(),
            i_q: T::zero(),
            i_gd: T::zero(),
            i_gq: T::zero(),
            params,
        }
    }

    pub fn to_array(&self) -> [T; 6] {
        [self.v_gd, self.v_gq, self.i_d, self.i_q, self.i_gd, self.i_gq]
    }

    pub fn from_array(x: &[T], params: LcParams<T>) -> Self {
        Self {
            v_gd: x[0],
            v_gq: x[1],
            i_d: x[2],
            i_q: x[3],
            i_gd: x[4],
            i_gq: x[5],
            params,
        }
    }
}

/// Filter derivatives `[v̇_gd, v̇_gq, i̇_d, i̇_q, i̇_gd, i̇_gq]` for inverter-side
/// voltage `(v_d, v_q)` in a frame rotating at `omega`. The grid-side
/// currents are driven by whatever is connected downstream, so their
/// derivatives are returned as zero here; see [`rl_load_derivatives`].
pub fn lc_filter_derivatives<T: Scalar>(s: &LcFilterState<T>, v_d: T, v_q: T, omega: T) -> [T; 6] {
    let LcParams { c_f, l_f, r_f } = s.params;
    [
        (s.i_d - s.i_gd + omega * c_f * s.v_gq) / c_f,
        (s.i_q - s.i_gq - omega * c_f * s.v_gd) / c_f,
        (v_d - s.v_gd + omega * l_f * s.i_q - r_f * s.i_d) / l_f,
        (v_q - s.v_gq - omega * l_f * s.i_d - r_f * s.i_q) / l_f,
        T::zero(),
        T::zero(),
    ]
}

/// Grid-side current derivatives for a series RL load fed by the filter
/// capacitor voltage.
pub fn rl_load_derivatives<T: Scalar>(s: &LcFilterState<T>, r: T, l: T, omega: T) -> (T, T) {
    (
        (s.v_gd - r * s.i_gd + omega * l * s.i_gq) / l,
        (s.v_gq - r * s.i_gq - omega * l * s.i_gd) / l,
    )
}

pub mod lc {
    //! Single inverter with an LC filter feeding an RL load, regulated by
    //! cascaded dq PI loops (outer capacitor voltage, inner inductor current)
    //! with decoupling feed-forward.
    //!
    //! Gains come from pole placement: each loop is treated as a first-order
    //! plant (`L_f` for the current loop, `C_f` for the voltage loop) and its
    //! PI gains put the closed-loop poles at natural frequency `ω_n` with
    //! damping 0.7. The voltage loop runs ten times slower than the current
    //! loop.

    use super::*;
    use crate::integrate::Rk4;
    use std::convert::Infallible;

    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct PiGains<T> {
        pub kp: T,
        pub ki: T,
    }

    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct LcDemo<T> {
        pub filter: LcParams<T>,
        pub r_load: T,
        pub l_load: T,
        pub omega: T,
        pub v_ref: T,
        pub current: PiGains<T>,
        pub voltage: PiGains<T>,
    }

    impl<T: Scalar> LcDemo<T> {
        /// Low-voltage lab-scale defaults with current-loop bandwidth
        /// `omega_i` (rad/s).
        pub fn with_bandwidth(filter: LcParams<T>, omega_i: T) -> Self {
            let zeta = T::c(0.7);
            let two = T::c(2.0);
            let omega_v = omega_i / T::c(10.0);
            Self {
                filter,
                r_load: T::c(10.0),
                l_load: T::c(5e-3),
                omega: T::c(2.0 * std::f64::consts::PI * 60.0),
                v_ref: T::c(170.0),
                current: PiGains {
                    kp: two * zeta * omega_i * filter.l_f - filter.r_f,
                    ki: omega_i * omega_i * filter.l_f,
                },
                voltage: PiGains {
                    kp: two * zeta * omega_v * filter.c_f,
                    ki: omega_v * omega_v * filter.c_f,
                },
            }
        }

        /// State layout: six filter states then the four PI integrators
        /// (voltage d, q; current d, q).
        fn rhs(&self, x: &[T], dx: &mut [T]) {
            let s = LcFilterState::from_array(&x[..6], self.filter);
            let w = self.omega;
            let LcParams { c_f, l_f, .. } = self.filter;
            let (evd, evq) = (self.v_ref - s.v_gd, -s.v_gq);
            let id_ref = s.i_gd - w * c_f * s.v_gq + self.voltage.kp * evd + self.voltage.ki * x[6];
            let iq_ref = s.i_gq + w * c_f * s.v_gd + self.voltage.kp * evq + self.voltage.ki * x[7];
            let (eid, eiq) = (id_ref - s.i_d, iq_ref - s.i_q);
            let v_d = s.v_gd - w * l_f * s.i_q + self.current.kp * eid + self.current.ki * x[8];
            let v_q = s.v_gq + w * l_f * s.i_d + self.current.kp * eiq + self.current.ki * x[9];
            let d = lc_filter_derivatives(&s, v_d, v_q, w);
            let (dgd, dgq) = rl_load_derivatives(&s, self.r_load, self.l_load, w);
            dx[..4].copy_from_slice(&d[..4]);
            dx[4] = dgd;
            dx[5] = dgq;
            dx[6] = evd;
            dx[7] = evq;
            dx[8] = eid;
            dx[9] = eiq;
        }

        /// Runs from rest and returns `(t, v_gd, v_gq)` samples every `every` steps.
        pub fn run(&self, duration: T, dt: T, every: usize) -> Result<Vec<(T, T, T)>, PrimaryError> {
            self.filter.validate()?;
            let steps = (duration / dt).round().to_usize().unwrap_or(0);
            let mut x = vec![T::zero(); 10];
            let mut rk = Rk4::new(10);
            let mut out = vec![(T::zero(), x[0], x[1])];
            for k in 0..steps {
                let t = T::c(k as f64) * dt;
                rk.step(t, &mut x, dt, |_, y, d| {
                    self.rhs(y, d);
                    Ok::<_, Infallible>(())
                })
                .unwrap_or_else(|e| match e {});
                if (k + 1) % every.max(1) == 0 {
                    out.push((t + dt, x[0], x[1]));
                }
            }
            Ok(out)
        }
    }
}

use crate::linalg::{solve_real, Matrix};
use crate::model::{CommGraph, InverterParams, WeightKind};
use crate::netsolve::Reduced;

use super::SimError;

/// Synchronous operating point with every energy state at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub delta: Vec<f64>,
    pub v: Vec<f64>,
    /// Common frequency consensus value (rad/s).
    pub omega_bar: f64,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Residual vector and the injections it was evaluated at.
type Residual = (Vec<f64>, Vec<(f64, f64)>);

const TOL: f64 = 1e-10;
const MAX_ITER: usize = 60;

/// Solves for `(δ₂…δ_N, Ω̄, V₁…V_N)` such that `Δω = 0`, `Ω̇ = 0` and
/// `ė = 0` with `ΔE = ΔF = 0`:
///
/// ```text
/// m_i(P_i − P*_i) = Ω̄
/// ξ_i(V_i − v_ref,i) + Σ_j b_ij(Q_i/Q*_i − Q_j/Q*_j) = 0
/// ```
///
/// With every `ξ_i = 0` the voltage level is fixed by `mean(V − v_ref) = 0`.
pub fn equilibrium(params: &[InverterParams<f64>], graph: &CommGraph<f64>, red: &Reduced<f64>, v_ref: &[f64]) -> Result<Equilibrium, SimError> {
    let n = params.len();
    let lb = graph.laplacian(WeightKind::B);
    let no_xi = params.iter().all(|p| p.xi == 0.0);
    let dim = 2 * n;

    let unpack = |u: &[f64]| {
        let mut delta = vec![0.0; n];
        delta[1..n].copy_from_slice(&u[..n - 1]);
        (delta, u[n - 1], u[n..].to_vec())
    };
    let residual = |u: &[f64]| -> Result<Residual, SimError> {
        let (delta, omega_bar, v) = unpack(u);
        let src: Vec<(f64, f64)> = v.iter().zip(&delta).map(|(&v, &d)| (v, d)).collect();
        let pq = red.injections(&src)?;
        let qr: Vec<f64> = pq.iter().zip(params).map(|(s, p)| s.1 / p.q_set).collect();
        let lq = lb.mul_vec(&qr);
        let mut r = Vec::with_capacity(dim);
        for (k, p) in params.iter().enumerate() {
            r.push(p.m_si() * (pq[k].0 - p.p_set) - omega_bar);
        }
        for (k, p) in params.iter().enumerate() {
            r.push(p.xi * (v[k] - v_ref[k]) + lq[k]);
        }
        if no_xi {
            r[dim - 1] = v.iter().zip(v_ref).map(|(a, b)| a - b).sum::<f64>() / n as f64;
        }
        Ok((r, pq))
    };
    let norm = |r: &[f64]| r.iter().fold(0.0f64, |m, x| m.max(x.abs()));

    let mut u = vec![0.0; dim];
    u[n..].copy_from_slice(v_ref);
    let (mut r, mut pq) = residual(&u)?;
    let mut it = 0;
    while norm(&r) > TOL && it < MAX_ITER {
        it += 1;
        let mut jac = Matrix::zeros(dim, dim);
        for c in 0..dim {
            let h = if c >= n { 1e-6 * u[c].abs().max(1.0) } else { 1e-7 };
            let mut up = u.clone();
            let mut dn = u.clone();
            up[c] += h;
            dn[c] -= h;
            let (rp, _) = residual(&up)?;
            let (rm, _) = residual(&dn)?;
            for row in 0..dim {
                jac[(row, c)] = (rp[row] - rm[row]) / (2.0 * h);
            }
        }
        let neg: Vec<f64> = r.iter().map(|x| -x).collect();
        let step = solve_real(&jac, &neg).map_err(|_| SimError::Equilibrium(norm(&r)))?;
        let base = norm(&r);
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = u.iter().zip(&step).map(|(a, s)| a + lambda * s).collect();
            if let Ok((rt, pt)) = residual(&trial) {
                if norm(&rt) < base || lambda < 1e-4 {
                    u = trial;
                    r = rt;
                    pq = pt;
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < 1e-6 {
                return Err(SimError::Equilibrium(base));
            }
        }
    }
    let res = norm(&r);
    if !(res <= TOL) {
        return Err(SimError::Equilibrium(res));
    }
    let (delta, omega_bar, v) = unpack(&u);
    Ok(Equilibrium {
        delta,
        v,
        omega_bar,
        p: pq.iter().map(|s| s.0).collect(),
        q: pq.iter().map(|s| s.1).collect(),
        residual: res,
        iterations: it,
    })
}

use std::time::Instant;

use crate::integrate::{combine, stage_point};
use crate::model::{InverterParams, Link};
use crate::secondary::{reactive_headroom, steady_state_predict, ConsensusVars};

use super::control::{self, D_OMEGA, STATE, V};
use super::equilibrium::{equilibrium, Equilibrium};
use super::plant::Plant;
use super::trace::{channel_summary, window_metrics, Channel, Metrics, Row, Sample, SteadyCheck, Trace};
use super::{apply_gain, is_homogeneous, rows_of, EventKind, Scenario, SimError};

#[derive(Debug, Clone)]
pub struct RunResult {
    pub trace: Trace,
    pub metrics: Metrics,
    pub equilibrium: Equilibrium,
}

/// Outputs of one full stage evaluation.
pub(crate) struct StageEval {
    pub out: Vec<(f64, f64)>,
    pub pq: Vec<(f64, f64)>,
    pub vars: Vec<ConsensusVars<f64>>,
}

impl StageEval {
    fn new(n: usize) -> Self {
        Self {
            out: vec![(0.0, 0.0); n],
            pq: vec![(0.0, 0.0); n],
            vars: vec![ConsensusVars::default(); n],
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn eval(
    sc: &Scenario,
    params: &[InverterParams<f64>],
    rows: &[Vec<Link<f64>>],
    plant: &mut Plant,
    step: i64,
    t: f64,
    x: &[f64],
    dx: &mut [f64],
    ev: &mut StageEval,
) -> Result<(), SimError> {
    let f = sc.v_ref_factor(t);
    for (k, p) in params.iter().enumerate() {
        ev.out[k] = control::outputs(p, f * p.v_nom, &x[k * STATE..(k + 1) * STATE]);
    }
    let src: Vec<(f64, f64)> = ev.out.iter().enumerate().map(|(k, o)| (o.1, x[k * STATE])).collect();
    let pq = plant.solve(sc, step, t, &src)?;
    ev.pq.copy_from_slice(&pq);
    for (k, p) in params.iter().enumerate() {
        ev.vars[k] = control::consensus_vars(p, &sc.control, &x[k * STATE..(k + 1) * STATE], ev.pq[k]);
    }
    let ids: Vec<_> = params.iter().map(|p| p.id).collect();
    let vars = &ev.vars;
    let lookup = |id| ids.iter().position(|&x| x == id).map(|j| vars[j]);
    for (k, p) in params.iter().enumerate() {
        let span = k * STATE..(k + 1) * STATE;
        control::rates(
            p,
            &sc.control,
            f * p.v_nom,
            &x[span.clone()],
            ev.out[k],
            ev.pq[k],
            &vars[k],
            &rows[k],
            lookup,
            &mut dx[span],
        );
    }
    Ok(())
}

/// Initial state vector at the synchronous equilibrium of time zero.
pub(crate) fn initial_state(sc: &Scenario, params: &[InverterParams<f64>], plant: &mut Plant, graph: &crate::model::CommGraph<f64>) -> Result<(Vec<f64>, Equilibrium), SimError> {
    let f = sc.v_ref_factor(0.0);
    let v_ref: Vec<f64> = params.iter().map(|p| f * p.v_nom).collect();
    let loads = sc.loads_at(0, 0.0);
    let red = plant.reduced(&loads)?;
    let eq = equilibrium(params, graph, red, &v_ref)?;
    let mut x = vec![0.0; params.len() * STATE];
    for (k, p) in params.iter().enumerate() {
        let s = &mut x[k * STATE..(k + 1) * STATE];
        s[control::DELTA] = eq.delta[k];
        s[D_OMEGA] = 0.0;
        s[V] = eq.v[k];
        s[control::OMEGA] = eq.omega_bar;
        s[control::E] = eq.v[k] - v_ref[k] + p.n_si() * (eq.q[k] - p.q_set);
        s[control::P_F] = eq.p[k];
        s[control::Q_F] = eq.q[k];
    }
    Ok((x, eq))
}

pub(crate) fn make_row(p: &InverterParams<f64>, x: &[f64], out: (f64, f64), pq: (f64, f64), f_cap: f64) -> Row {
    Row {
        p: pq.0,
        q: pq.1,
        omega: p.omega_nom + out.0,
        v: out.1,
        omega_cons: x[control::OMEGA],
        e_cons: x[control::E],
        d_e: x[control::D_E],
        d_f: x[control::D_F],
        e_res: p.e_capacity - x[control::D_E],
        f_res: f_cap - x[control::D_F],
        omega_nom: p.omega_nom,
        m_si: p.m_si(),
        n_si: p.n_si(),
        p_set: p.p_set,
    }
}

/// Integrates the scenario from its time-zero equilibrium.
///
/// Fails only when the initial equilibrium cannot be found. A non-finite
/// state or failed network solve mid-run ends the run early; the result
/// then keeps the last valid sample and `metrics.abort` says why.
pub fn run(sc: &Scenario) -> Result<RunResult, SimError> {
    let wall = Instant::now();
    let n = sc.len();
    let mut params = sc.inverters.clone();
    let mut graph = sc.graph.clone();
    for e in sc.gain_events_at(0) {
        if let EventKind::Gain { target, gain, value } = e.kind {
            apply_gain(&mut params, &mut graph, target, gain, value);
        }
    }
    let mut rows = rows_of(&graph);
    let mut plant = Plant::new(sc.network.clone());
    let (mut x, eq) = initial_state(sc, &params, &mut plant, &graph)?;

    let dim = n * STATE;
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    let mut f_cap = vec![0.0; n];
    let mut ev = StageEval::new(n);
    let mut scratch = StageEval::new(n);
    let mut trace = Trace::new(sc.ids());
    let steps = sc.steps();
    let stride = sc.stride();
    let dt = sc.dt;
    let half = 0.5 * dt;
    let mut abort = None;

    let mut k = 0usize;
    loop {
        let t = sc.time(k);
        let step = k as i64;
        if k > 0 {
            let mut changed = false;
            for e in sc.gain_events_at(step) {
                if let EventKind::Gain { target, gain, value } = e.kind {
                    apply_gain(&mut params, &mut graph, target, gain, value);
                    changed = true;
                }
            }
            if changed {
                rows = rows_of(&graph);
            }
        }
        let f = sc.v_ref_factor(t);
        for (i, p) in params.iter().enumerate() {
            let s = &mut x[i * STATE..(i + 1) * STATE];
            if p.kind == crate::model::InverterKind::Droop {
                let (dw, v) = control::outputs(p, f * p.v_nom, s);
                s[D_OMEGA] = dw;
                s[V] = v;
            }
        }
        if let Err(e) = eval(sc, &params, &rows, &mut plant, step, t, &x, &mut k1, &mut ev) {
            abort = Some(format!("t = {t}: {e}"));
            break;
        }
        if k > 0 {
            for (i, p) in params.iter().enumerate() {
                f_cap[i] = reactive_headroom(f_cap[i], p.s_max, ev.pq[i].0, ev.pq[i].1, dt);
            }
        }
        if k.is_multiple_of(stride) || k == steps {
            trace.samples.push(sample(t, &params, &x, &ev, &f_cap));
        }
        if k == steps {
            break;
        }

        let stages = (|| -> Result<(), SimError> {
            stage_point(&x, &k1, half, &mut tmp);
            eval(sc, &params, &rows, &mut plant, step, t + half, &tmp, &mut k2, &mut scratch)?;
            stage_point(&x, &k2, half, &mut tmp);
            eval(sc, &params, &rows, &mut plant, step, t + half, &tmp, &mut k3, &mut scratch)?;
            stage_point(&x, &k3, dt, &mut tmp);
            eval(sc, &params, &rows, &mut plant, step, t + dt, &tmp, &mut k4, &mut scratch)?;
            Ok(())
        })();
        if let Err(e) = stages {
            keep_last(&mut trace, t, &params, &x, &ev, &f_cap);
            abort = Some(format!("t = {t}: {e}"));
            break;
        }
        let prev = x.clone();
        combine(&mut x, [&k1, &k2, &k3, &k4], dt);
        if let Some(i) = (0..n).find(|&i| x[i * STATE..(i + 1) * STATE].iter().any(|v| !v.is_finite())) {
            x = prev;
            keep_last(&mut trace, t, &params, &x, &ev, &f_cap);
            abort = Some(
                SimError::NonFinite {
                    t: t + dt,
                    inverter: params[i].id,
                }
                .to_string(),
            );
            break;
        }
        k += 1;
    }

    let metrics = metrics(sc, &params, &trace, abort, wall.elapsed().as_secs_f64());
    Ok(RunResult {
        trace,
        metrics,
        equilibrium: eq,
    })
}

fn sample(t: f64, params: &[InverterParams<f64>], x: &[f64], ev: &StageEval, f_cap: &[f64]) -> Sample {
    Sample {
        t,
        rows: params
            .iter()
            .enumerate()
            .map(|(i, p)| make_row(p, &x[i * STATE..(i + 1) * STATE], ev.out[i], ev.pq[i], f_cap[i]))
            .collect(),
    }
}

fn keep_last(trace: &mut Trace, t: f64, params: &[InverterParams<f64>], x: &[f64], ev: &StageEval, f_cap: &[f64]) {
    if trace.samples.last().map(|s| s.t) != Some(t) {
        trace.samples.push(sample(t, params, x, ev, f_cap));
    }
}

pub(crate) fn metrics(sc: &Scenario, params: &[InverterParams<f64>], trace: &Trace, abort: Option<String>, wall: f64) -> Metrics {
    let starts = sc.window_starts();
    let end = trace.last().map(|s| s.t).unwrap_or(0.0);
    let windows = window_metrics(trace, &starts, end, sc.settle_band);
    let from = starts.last().copied().unwrap_or(0.0);
    let (mut lo, mut hi, mut dev) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for s in &trace.samples {
        for r in &s.rows {
            lo = lo.min(r.omega);
            hi = hi.max(r.omega);
            dev = dev.max(r.d_omega().abs());
        }
    }
    let ps = channel_summary(trace, Channel::PowerSharing, from);
    let mean_mdp = trace
        .last()
        .map(|s| s.rows.iter().map(|r| Channel::PowerSharing.value(r).abs()).sum::<f64>() / s.rows.len().max(1) as f64)
        .unwrap_or(0.0);
    let steady = if is_homogeneous(params) {
        trace.last().and_then(|s| {
            let total: f64 = s.rows.iter().map(|r| r.p - r.p_set).sum();
            let pred = steady_state_predict(params, total).ok()?;
            let c_scale = pred.c.abs().max(1e-6 * params[0].s_max);
            let w_scale = pred.omega_cons[0].abs().max(1e-9);
            let mut rel = 0.0f64;
            for r in &s.rows {
                rel = rel.max(((r.p - r.p_set) - pred.c).abs() / c_scale);
                rel = rel.max((r.omega_cons - pred.omega_cons[0]).abs() / w_scale);
            }
            let n = s.rows.len() as f64;
            Some(SteadyCheck {
                c_measured: total / n,
                c_predicted: pred.c,
                omega_bar_measured: s.rows.iter().map(|r| r.omega_cons).sum::<f64>() / n,
                omega_bar_predicted: pred.omega_cons[0],
                rel_error: rel,
            })
        })
    } else {
        None
    };
    Metrics {
        scenario: sc.name.clone(),
        inverters: sc.ids(),
        duration: sc.duration,
        dt: sc.dt,
        steps: sc.steps(),
        samples: trace.samples.len(),
        completed: abort.is_none(),
        abort,
        settle_band: sc.settle_band,
        restored: !windows.is_empty() && windows.iter().all(|w| w.restored),
        windows,
        omega_min: lo,
        omega_max: hi,
        max_freq_deviation: dev,
        reserve_freq: channel_summary(trace, Channel::FreqEnergy, from),
        reserve_volt: channel_summary(trace, Channel::VoltEnergy, from),
        power_sharing_rel: if mean_mdp > 0.0 { ps.terminal / mean_mdp } else { 0.0 },
        power_sharing: ps,
        steady_state: steady,
        wall_time_s: wall,
    }
}

use serde::Serialize;

use crate::model::{InverterId, InverterKind, InverterParams, WeightKind};
use crate::stability::{certify, find_ki_crossing, gain_bounds, linearize_power, Bound, FreqGains, LinearizedSystem, OperatingPoint, StabilityReport, VoltGains};

use super::equilibrium::equilibrium;
use super::plant::Plant;
use super::{apply_gain, is_homogeneous, EventKind, Scenario, SimError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InverterBounds {
    pub id: InverterId,
    pub k_i: Bound<f64>,
    pub m_omega: Bound<f64>,
    pub reactive: Bound<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatingPointSummary {
    pub v: Vec<f64>,
    pub delta: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub omega_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub scenario: String,
    pub homogeneous: bool,
    /// Homogeneous, every modal Routh–Hurwitz check passes and the
    /// assembled spectrum is stable.
    pub certified: bool,
    pub bounds_ok: bool,
    pub operating_point: OperatingPointSummary,
    pub report: Option<StabilityReport<f64>>,
    /// Smallest `k_i` above the configured value at which a frequency mode
    /// fails Routh–Hurwitz, searched up to `10⁴·max(k_i, 1/γ_e)`.
    pub ki_crossing: Option<f64>,
    pub inverter_bounds: Vec<InverterBounds>,
    pub notes: Vec<String>,
}

/// Lag constant standing in for `M_ω` and `τ_V` of a droop inverter.
fn lag(p: &InverterParams<f64>, omega_c: f64, vsm: f64) -> f64 {
    match p.kind {
        InverterKind::Vsm => vsm,
        InverterKind::Droop => 1.0 / omega_c,
    }
}

/// Linearizes the scenario at its settled post-event operating point
/// (every event applied, nominal voltage reference) and certifies it.
pub fn analyze(sc: &Scenario) -> Result<AnalysisReport, SimError> {
    let mut params = sc.inverters.clone();
    let mut graph = sc.graph.clone();
    for e in &sc.events {
        if let EventKind::Gain { target, gain, value } = e.kind {
            apply_gain(&mut params, &mut graph, target, gain, value);
        }
    }
    let t_end = sc.duration;
    let loads = sc.loads_at(i64::MAX, t_end);
    let f = sc.v_ref_factor(t_end);
    let v_ref: Vec<f64> = params.iter().map(|p| f * p.v_nom).collect();
    let mut plant = Plant::new(sc.network.clone());
    let red = plant.reduced(&loads)?.clone();
    let eq = equilibrium(&params, &graph, &red, &v_ref)?;
    let op = OperatingPoint {
        v: eq.v.clone(),
        delta: eq.delta.clone(),
        converged: true,
    };
    let lin = linearize_power(&red, &op)?;
    let mut notes = Vec::new();
    let homogeneous = is_homogeneous(&params);
    let gammas = graph.gamma_ratios();
    if let Err(e) = &gammas {
        notes.push(format!("gain bounds refused: {e}"));
    }

    let inverter_bounds = match gammas {
        Ok((ge, gf)) => params
            .iter()
            .map(|p| {
                let b = gain_bounds(
                    p.k_i,
                    lag(p, sc.control.omega_c, p.m_omega),
                    ge,
                    gf,
                    p.n_si(),
                    lag(p, sc.control.omega_c, p.tau_v),
                    p.q_set,
                );
                InverterBounds {
                    id: p.id,
                    k_i: b.k_i,
                    m_omega: b.m_omega,
                    reactive: b.reactive,
                }
            })
            .collect(),
        Err(_) => Vec::new(),
    };
    let bounds_ok = !inverter_bounds.is_empty() && inverter_bounds.iter().all(|b| b.k_i.ok && b.m_omega.ok && b.reactive.ok);

    let mut report = None;
    let mut ki_crossing = None;
    match (homogeneous, gammas) {
        (true, Ok((ge, gf))) if params.len() >= 2 => {
            let p = &params[0];
            let sys = LinearizedSystem {
                l_p: lin.l_p.clone(),
                l_q: lin.l_q.clone(),
                l_a: graph.laplacian(WeightKind::A),
                l_b: graph.laplacian(WeightKind::B),
                l_e: graph.laplacian(WeightKind::E),
                l_f: graph.laplacian(WeightKind::F),
                freq: FreqGains {
                    k_i: p.k_i,
                    m_omega: lag(p, sc.control.omega_c, p.m_omega),
                    m: p.m_si(),
                    gamma_e: ge,
                },
                volt: VoltGains {
                    kappa_i: p.kappa_i,
                    tau_v: lag(p, sc.control.omega_c, p.tau_v),
                    n: p.n_si(),
                    q_set: p.q_set,
                    beta: p.xi,
                    gamma_f: gf,
                },
            };
            if p.kind == InverterKind::Droop {
                notes.push(format!("droop filter lag 1/omega_c = {} s used for m_omega and tau_v", 1.0 / sc.control.omega_c));
            }
            let rep = certify(&sys)?;
            if !rep.freq_modes.is_empty() {
                let modes: Vec<(f64, f64)> = rep.freq_modes.iter().map(|m| (m.lambda[0], m.lambda[1])).collect();
                let hi = 1e4 * p.k_i.max(if ge > 0.0 { 1.0 / ge } else { p.k_i });
                ki_crossing = find_ki_crossing(&modes, &sys.freq, p.k_i, hi)?;
            }
            report = Some(rep);
        }
        (true, Ok(_)) => notes.push("single inverter: no disagreement modes".into()),
        (false, _) => notes.push("heterogeneous inverters: modal certification not applicable; per-inverter bounds only".into()),
        (true, Err(_)) => {}
    }
    let certified = report.as_ref().is_some_and(|r| r.rh_pass && r.spectrum_stable);
    Ok(AnalysisReport {
        scenario: sc.name.clone(),
        homogeneous,
        certified,
        bounds_ok,
        operating_point: OperatingPointSummary {
            v: eq.v,
            delta: eq.delta,
            p: eq.p,
            q: eq.q,
            omega_bar: eq.omega_bar,
        },
        report,
        ki_crossing,
        inverter_bounds,
        notes,
    })
}

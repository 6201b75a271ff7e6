//! Fixed-step closed-loop scenario engine.
//!
//! All inverter states advance together with classical RK4 against the
//! algebraic phasor plant. Each stage evaluates, in order: primary outputs,
//! the network solve, the broadcast consensus values, then every rate.
//! Step events (load steps, gain changes) act on step boundaries; ramps are
//! evaluated at the stage time.

mod analyze;
pub mod control;
mod engine;
mod equilibrium;
mod plant;
mod trace;

use num_complex::Complex64;

use crate::config::{ConfigError, EventConfig, GainName, PowerSignal, RampKind, ScenarioConfig};
use crate::model::{CommGraph, EdgeSpec, InverterId, InverterKind, InverterParams, Link, WeightKind};
use crate::netsolve::{BindingSpec, LineSpec, LoadSpec, PhasorNetwork};

pub use analyze::{analyze, AnalysisReport, InverterBounds};
pub use engine::{run, RunResult};
pub(crate) use engine::{initial_state, make_row, metrics};
pub use equilibrium::{equilibrium, Equilibrium};
pub use plant::Plant;
pub use trace::{consensus_error, Channel, ChannelSummary, Metrics, Row, Sample, Trace, WindowMetrics, CSV_HEADER};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("network: {0}")]
    Network(#[from] crate::netsolve::NetError),
    #[error("equilibrium initialization did not converge (residual {0:e})")]
    Equilibrium(f64),
    #[error("non-finite state at t = {t} s (inverter {inverter})")]
    NonFinite { t: f64, inverter: InverterId },
    #[error("unknown consensus channel `{0}`")]
    UnknownChannel(String),
    #[error("trace is empty")]
    EmptyTrace,
    #[error("stability: {0}")]
    Stability(#[from] crate::stability::StabilityError),
}

/// Controller options shared by every inverter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Control {
    pub omega_c: f64,
    pub vsm_power: PowerSignal,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    LoadStep { bus: usize, dy: Complex64 },
    LoadRamp { bus: usize, dy: Complex64, duration: f64, ramp: RampKind },
    Gain { target: Option<usize>, gain: GainName, value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub t: f64,
    /// Step boundary at which step-type effects begin.
    pub step: i64,
    pub kind: EventKind,
}

impl Event {
    /// Load events mark the start of a new disturbance window.
    pub fn is_disturbance(&self) -> bool {
        !matches!(self.kind, EventKind::Gain { .. })
    }
}

/// A validated, ready-to-run scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub duration: f64,
    pub dt: f64,
    pub decimation: f64,
    pub v_start_fraction: f64,
    pub settle_band: f64,
    pub seed: u64,
    /// Sources ordered like `inverters`.
    pub network: PhasorNetwork<f64>,
    pub inverters: Vec<InverterParams<f64>>,
    pub graph: CommGraph<f64>,
    pub control: Control,
    pub events: Vec<Event>,
    pub agents: crate::config::AgentsConfig,
}

impl Scenario {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self, ConfigError> {
        let s = &cfg.sim;
        if !(s.dt > 0.0 && s.dt.is_finite()) {
            return Err(ConfigError::at("/sim/dt", "dt must be positive"));
        }
        if !(s.duration >= s.dt && s.duration.is_finite()) {
            return Err(ConfigError::at("/sim/duration", "duration must be at least one step"));
        }
        if !(s.decimation >= s.dt && s.decimation.is_finite()) {
            return Err(ConfigError::at("/sim/decimation", "decimation must be at least one step"));
        }
        if !(s.v_start_fraction > 0.0 && s.v_start_fraction <= 1.5) {
            return Err(ConfigError::at("/sim/v_start_fraction", "must lie in (0, 1.5]"));
        }
        if !(s.settle_band > 0.0) {
            return Err(ConfigError::at("/sim/settle_band", "must be positive"));
        }
        let c = &cfg.controller;
        if !(c.omega_c > 0.0 && c.omega_c * s.dt < 2.0) {
            return Err(ConfigError::at("/controller/omega_c", "need 0 < omega_c·dt < 2"));
        }

        let mut inverters = Vec::with_capacity(cfg.inverters.len());
        for (k, ic) in cfg.inverters.iter().enumerate() {
            let p = InverterParams {
                id: ic.id,
                kind: ic.kind,
                s_max: ic.s_max,
                i_max: ic.i_max,
                p_set: ic.p_set,
                q_set: ic.q_set,
                v_nom: ic.v_nom,
                omega_nom: ic.omega_nom,
                m: ic.m,
                n: ic.n,
                m_omega: ic.m_omega,
                tau_v: ic.tau_v,
                k_i: ic.k_i,
                kappa_i: ic.kappa_i,
                xi: ic.xi,
                e_capacity: ic.e_capacity.unwrap_or(3600.0 * ic.s_max),
            };
            p.validate().map_err(|e| ConfigError::at(format!("/inverters/{k}"), e.to_string()))?;
            if p.q_set == 0.0 {
                return Err(ConfigError::at(format!("/inverters/{k}/q_set"), "q_set must be non-zero"));
            }
            inverters.push(p);
        }
        if inverters.is_empty() {
            return Err(ConfigError::at("/inverters", "at least one inverter is required"));
        }
        let ids: Vec<InverterId> = inverters.iter().map(|p| p.id).collect();

        let net = &cfg.network;
        let mut bindings = Vec::with_capacity(ids.len());
        for (k, &id) in ids.iter().enumerate() {
            let found: Vec<_> = net.bindings.iter().filter(|b| b.inverter == id).collect();
            if found.len() != 1 {
                return Err(ConfigError::at(
                    "/network/bindings",
                    format!("inverter {id} (index {k}) must be bound exactly once, found {}", found.len()),
                ));
            }
            let b = found[0];
            bindings.push(BindingSpec {
                inverter: id,
                bus: b.bus.clone(),
                r: b.r,
                x: b.x,
            });
        }
        if let Some((k, b)) = net.bindings.iter().enumerate().find(|(_, b)| !ids.contains(&b.inverter)) {
            return Err(ConfigError::at(
                format!("/network/bindings/{k}/inverter"),
                format!("no inverter with id {}", b.inverter),
            ));
        }
        let lines: Vec<LineSpec<f64>> = net
            .lines
            .iter()
            .map(|l| LineSpec {
                from: l.from.clone(),
                to: l.to.clone(),
                r: l.r,
                x: l.x,
            })
            .collect();
        let loads: Vec<LoadSpec<f64>> = net
            .loads
            .iter()
            .map(|l| LoadSpec {
                bus: l.bus.clone(),
                p: l.p,
                q: l.q,
            })
            .collect();
        let network = PhasorNetwork::new(net.buses.clone(), net.v_nom, &lines, &loads, &bindings)
            .map_err(|e| ConfigError::at("/network", e.to_string()))?;

        let edges: Vec<EdgeSpec<f64>> = cfg
            .graph
            .edges
            .iter()
            .map(|e| EdgeSpec {
                i: e.i,
                j: e.j,
                a: e.a,
                b: e.b,
                e: e.e,
                f: e.f,
            })
            .collect();
        let mut graph = CommGraph::new(ids.clone(), &edges).map_err(|e| ConfigError::at("/graph/edges", e.to_string()))?;
        if !c.energy_consensus {
            graph = graph.with_uniform(WeightKind::E, 0.0).with_uniform(WeightKind::F, 0.0);
        }
        if let Some(v) = c.e_override {
            if !(v >= 0.0) {
                return Err(ConfigError::at("/controller/e_override", "must be non-negative"));
            }
            graph = graph.with_uniform(WeightKind::E, v);
        }
        if let Some(v) = c.f_override {
            if !(v >= 0.0) {
                return Err(ConfigError::at("/controller/f_override", "must be non-negative"));
            }
            graph = graph.with_uniform(WeightKind::F, v);
        }

        let mut events = Vec::with_capacity(cfg.events.len());
        let mut voltage_ramps = 0;
        for (k, ev) in cfg.events.iter().enumerate() {
            let at = |field: &str| format!("/events/{k}/{field}");
            let t = ev.t();
            if !t.is_finite() {
                return Err(ConfigError::at(at("t"), "event time must be finite"));
            }
            let bus_of = |bus: &str| network.bus_index(bus).ok_or_else(|| ConfigError::at(at("bus"), format!("unknown bus `{bus}`")));
            let kind = match ev {
                EventConfig::LoadStep { bus, p, q, .. } => EventKind::LoadStep {
                    bus: bus_of(bus)?,
                    dy: network.admittance_of(crate::netsolve::LoadChange::Power { p: *p, q: *q }),
                },
                EventConfig::LoadPickupRamp {
                    bus, p, q, duration, ramp, ..
                } => {
                    if !(*duration > 0.0 && duration.is_finite()) {
                        return Err(ConfigError::at(at("duration"), "ramp duration must be positive"));
                    }
                    if *ramp == RampKind::Voltage {
                        voltage_ramps += 1;
                        if voltage_ramps > 1 {
                            return Err(ConfigError::at(format!("/events/{k}"), "only one voltage-ramp pickup is supported"));
                        }
                    }
                    EventKind::LoadRamp {
                        bus: bus_of(bus)?,
                        dy: network.admittance_of(crate::netsolve::LoadChange::Power { p: *p, q: *q }),
                        duration: *duration,
                        ramp: *ramp,
                    }
                }
                EventConfig::GainChange { inverter, gain, value, .. } => {
                    if !value.is_finite() {
                        return Err(ConfigError::at(at("value"), "gain must be finite"));
                    }
                    let target = match inverter {
                        None => None,
                        Some(id) => Some(
                            ids.iter()
                                .position(|x| x == id)
                                .ok_or_else(|| ConfigError::at(at("inverter"), format!("no inverter with id {id}")))?,
                        ),
                    };
                    EventKind::Gain {
                        target,
                        gain: *gain,
                        value: *value,
                    }
                }
            };
            events.push(Event {
                t,
                step: (t / s.dt).round() as i64,
                kind,
            });
        }
        events.sort_by(|a, b| a.t.total_cmp(&b.t));

        let a = &cfg.agents;
        if !(a.tick_ms > 0.0) {
            return Err(ConfigError::at("/agents/tick_ms", "tick period must be positive"));
        }
        if !(a.delay_ms >= 0.0 && a.jitter_ms >= 0.0) {
            return Err(ConfigError::at("/agents/delay_ms", "delays must be non-negative"));
        }
        if !(0.0..1.0).contains(&a.loss) {
            return Err(ConfigError::at("/agents/loss", "loss probability must lie in [0, 1)"));
        }
        if !(a.join_ms > 0.0) {
            return Err(ConfigError::at("/agents/join_ms", "join window must be positive"));
        }
        if !(a.timeout_ms > 0.0) {
            return Err(ConfigError::at("/agents/timeout_ms", "timeout must be positive"));
        }
        if let Some(k) = a.silenced.iter().position(|id| !ids.contains(id)) {
            return Err(ConfigError::at(format!("/agents/silenced/{k}"), "unknown inverter id"));
        }

        Ok(Self {
            name: cfg.name.clone(),
            duration: s.duration,
            dt: s.dt,
            decimation: s.decimation,
            v_start_fraction: s.v_start_fraction,
            settle_band: s.settle_band,
            seed: s.seed,
            network,
            inverters,
            graph,
            control: Control {
                omega_c: c.omega_c,
                vsm_power: c.vsm_power,
            },
            events,
            agents: a.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.inverters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inverters.is_empty()
    }

    pub fn ids(&self) -> Vec<InverterId> {
        self.inverters.iter().map(|p| p.id).collect()
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    /// Steps between trace samples.
    pub fn stride(&self) -> usize {
        ((self.decimation / self.dt).round() as usize).max(1)
    }

    /// Time of step `k`.
    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Multiplier on each inverter's V* giving the voltage reference in force.
    pub fn v_ref_factor(&self, t: f64) -> f64 {
        let ramp = self.events.iter().find_map(|e| match e.kind {
            EventKind::LoadRamp {
                duration,
                ramp: RampKind::Voltage,
                ..
            } => Some((e.t, duration)),
            _ => None,
        });
        match ramp {
            None => 1.0,
            Some((t0, dur)) => {
                let f0 = self.v_start_fraction;
                let x = ((t - t0) / dur).clamp(0.0, 1.0);
                f0 + (1.0 - f0) * x
            }
        }
    }

    /// Per-bus shunt admittances during step `step` at stage time `t`.
    pub fn loads_at(&self, step: i64, t: f64) -> Vec<Complex64> {
        let mut y = self.network.loads();
        for e in &self.events {
            match e.kind {
                EventKind::LoadStep { bus, dy } if e.step <= step => y[bus] += dy,
                EventKind::LoadRamp {
                    bus,
                    dy,
                    ramp: RampKind::Voltage,
                    ..
                } if e.step <= step => y[bus] += dy,
                EventKind::LoadRamp {
                    bus,
                    dy,
                    duration,
                    ramp: RampKind::Load,
                } => {
                    let x = ((t - e.t) / duration).clamp(0.0, 1.0);
                    if x > 0.0 {
                        y[bus] += dy * x;
                    }
                }
                _ => {}
            }
        }
        y
    }

    /// Gain events taking effect at the start of step `step` (every event at
    /// or before time zero fires on step 0).
    pub fn gain_events_at(&self, step: i64) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| {
            matches!(e.kind, EventKind::Gain { .. }) && (e.step == step || (step == 0 && e.step < 0))
        })
    }

    /// Times after zero at which a new disturbance window begins.
    pub fn window_starts(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for e in &self.events {
            let t = e.step as f64 * self.dt;
            if e.is_disturbance() && t > 0.0 && t < self.duration && out.last() != Some(&t) {
                out.push(t);
            }
        }
        out
    }

    /// Copy with the communication graph replaced, e.g. with a node isolated.
    pub fn with_graph(&self, graph: CommGraph<f64>) -> Self {
        Self { graph, ..self.clone() }
    }
}

/// Applies one gain event to inverter parameters and the graph.
pub fn apply_gain(params: &mut [InverterParams<f64>], graph: &mut CommGraph<f64>, target: Option<usize>, gain: GainName, value: f64) {
    match gain {
        GainName::E => *graph = graph.with_uniform(WeightKind::E, value),
        GainName::F => *graph = graph.with_uniform(WeightKind::F, value),
        _ => {
            for (k, p) in params.iter_mut().enumerate() {
                if target.is_some_and(|t| t != k) {
                    continue;
                }
                let slot = match gain {
                    GainName::M => &mut p.m,
                    GainName::N => &mut p.n,
                    GainName::MOmega => &mut p.m_omega,
                    GainName::TauV => &mut p.tau_v,
                    GainName::KI => &mut p.k_i,
                    GainName::KappaI => &mut p.kappa_i,
                    GainName::Xi => &mut p.xi,
                    GainName::PSet => &mut p.p_set,
                    GainName::QSet => &mut p.q_set,
                    GainName::E | GainName::F => unreachable!(),
                };
                *slot = value;
            }
        }
    }
}

/// Graph rows of every node, in graph id order.
pub fn rows_of(graph: &CommGraph<f64>) -> Vec<Vec<Link<f64>>> {
    (0..graph.len()).map(|k| graph.row(k)).collect()
}

/// True when every inverter shares kind, ratings and gains.
pub fn is_homogeneous(params: &[InverterParams<f64>]) -> bool {
    let Some(first) = params.first() else {
        return true;
    };
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
    params.iter().all(|p| {
        p.kind == first.kind
            && close(p.m_si(), first.m_si())
            && close(p.n_si(), first.n_si())
            && close(p.k_i, first.k_i)
            && close(p.kappa_i, first.kappa_i)
            && close(p.xi, first.xi)
            && close(p.q_set, first.q_set)
            && (p.kind == InverterKind::Droop || (close(p.m_omega, first.m_omega) && close(p.tau_v, first.tau_v)))
    })
}

//! JSON scenario configuration.
//!
//! A config has seven sections: `network`, `inverters`, `graph`,
//! `controller`, `events`, `sim` and `agents`. Unknown keys are rejected.
//! Parse failures and semantic validation failures both carry a JSON pointer
//! to the offending value.
//!
//! Overrides use dotted paths on the raw document before typed parsing;
//! `*` matches every element of an array or every key of an object:
//!
//! ```
//! use gridform_core::config::apply_override;
//! let mut doc = serde_json::json!({"inverters": [{"k_i": 0.05}, {"k_i": 0.05}]});
//! apply_override(&mut doc, "inverters.*.k_i=2.5").unwrap();
//! assert_eq!(doc["inverters"][1]["k_i"], 2.5);
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::{InverterId, InverterKind};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{pointer}: {message}")]
pub struct ConfigError {
    /// JSON pointer (RFC 6901) to the offending value; empty for the root.
    pub pointer: String,
    pub message: String,
}

impl ConfigError {
    pub fn at(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            pointer: pointer.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub network: NetworkConfig,
    pub inverters: Vec<InverterConfig>,
    pub graph: GraphConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub events: Vec<EventConfig>,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub agents: AgentsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Nominal voltage used to convert load powers to admittances (V).
    pub v_nom: f64,
    pub buses: Vec<String>,
    pub lines: Vec<LineConfig>,
    #[serde(default)]
    pub loads: Vec<LoadConfig>,
    pub bindings: Vec<BindingConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineConfig {
    pub from: String,
    pub to: String,
    /// Series resistance (Ω).
    pub r: f64,
    /// Series reactance (Ω).
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadConfig {
    pub bus: String,
    /// Active consumption at nominal voltage (W).
    pub p: f64,
    /// Reactive consumption at nominal voltage (VAR).
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BindingConfig {
    pub inverter: InverterId,
    pub bus: String,
    #[serde(default)]
    pub r: f64,
    #[serde(default)]
    pub x: f64,
}

fn d_s_max() -> f64 {
    2.5e6
}
fn d_p_set() -> f64 {
    1.2e6
}
fn d_q_set() -> f64 {
    0.6e6
}
fn d_v_nom() -> f64 {
    480.0 * (2.0f64 / 3.0).sqrt()
}
fn d_omega_nom() -> f64 {
    2.0 * std::f64::consts::PI * 60.0
}
fn d_m() -> f64 {
    0.015625
}
fn d_n() -> f64 {
    20e-6 * d_s_max() / d_v_nom()
}
fn d_tenth() -> f64 {
    0.1
}
fn d_k() -> f64 {
    0.05
}

/// One inverter. Defaults reproduce the reference ratings and gains; `m`
/// and `n` are per-unit on the inverter's own `(s_max, v_nom, omega_nom)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverterConfig {
    pub id: InverterId,
    pub kind: InverterKind,
    #[serde(default = "d_s_max")]
    pub s_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_max: Option<f64>,
    #[serde(default = "d_p_set")]
    pub p_set: f64,
    #[serde(default = "d_q_set")]
    pub q_set: f64,
    #[serde(default = "d_v_nom")]
    pub v_nom: f64,
    #[serde(default = "d_omega_nom")]
    pub omega_nom: f64,
    #[serde(default = "d_m")]
    pub m: f64,
    #[serde(default = "d_n")]
    pub n: f64,
    #[serde(default = "d_tenth")]
    pub m_omega: f64,
    #[serde(default = "d_tenth")]
    pub tau_v: f64,
    #[serde(default = "d_k")]
    pub k_i: f64,
    #[serde(default = "d_k")]
    pub kappa_i: f64,
    #[serde(default = "d_tenth")]
    pub xi: f64,
    /// Ē_c (W·s); one hour at `s_max` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_capacity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub edges: Vec<EdgeConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeConfig {
    pub i: InverterId,
    pub j: InverterId,
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub e: f64,
    #[serde(default)]
    pub f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerSignal {
    Filtered,
    Instantaneous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    /// Measurement filter cutoff (rad/s).
    #[serde(default = "ControllerConfig::d_omega_c")]
    pub omega_c: f64,
    /// Power signal driving VSM inverters. Droop always uses filtered power.
    #[serde(default = "ControllerConfig::d_vsm_power")]
    pub vsm_power: PowerSignal,
    /// `false` zeroes every `e` and `f` weight (plain DAPI).
    #[serde(default = "ControllerConfig::d_true")]
    pub energy_consensus: bool,
    /// Uniform replacement for every edge's `e`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_override: Option<f64>,
    /// Uniform replacement for every edge's `f`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_override: Option<f64>,
}

impl ControllerConfig {
    fn d_omega_c() -> f64 {
        2.0 * std::f64::consts::PI * 5.0
    }
    fn d_vsm_power() -> PowerSignal {
        PowerSignal::Instantaneous
    }
    fn d_true() -> bool {
        true
    }
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            omega_c: Self::d_omega_c(),
            vsm_power: Self::d_vsm_power(),
            energy_consensus: true,
            e_override: None,
            f_override: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampKind {
    /// Load connects at once; the voltage reference ramps to nominal.
    Voltage,
    /// Load admittance ramps linearly from zero to its full value.
    Load,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventConfig {
    LoadStep {
        t: f64,
        bus: String,
        p: f64,
        q: f64,
    },
    LoadPickupRamp {
        t: f64,
        bus: String,
        p: f64,
        q: f64,
        duration: f64,
        ramp: RampKind,
    },
    GainChange {
        t: f64,
        /// Target inverter; every inverter when absent. Ignored for graph gains.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inverter: Option<InverterId>,
        gain: GainName,
        value: f64,
    },
}

impl EventConfig {
    pub fn t(&self) -> f64 {
        match self {
            Self::LoadStep { t, .. } | Self::LoadPickupRamp { t, .. } | Self::GainChange { t, .. } => *t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainName {
    M,
    N,
    MOmega,
    TauV,
    KI,
    KappaI,
    Xi,
    PSet,
    QSet,
    /// Uniform graph weight `e`.
    E,
    /// Uniform graph weight `f`.
    F,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "SimConfig::d_duration")]
    pub duration: f64,
    #[serde(default = "SimConfig::d_dt")]
    pub dt: f64,
    /// Trace sampling interval (s).
    #[serde(default = "SimConfig::d_decimation")]
    pub decimation: f64,
    /// Initial voltage reference as a fraction of V* when a voltage-ramp
    /// pickup is scheduled.
    #[serde(default = "SimConfig::d_v_start")]
    pub v_start_fraction: f64,
    /// Frequency band for settling metrics (rad/s).
    #[serde(default = "SimConfig::d_band")]
    pub settle_band: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SimConfig {
    fn d_duration() -> f64 {
        120.0
    }
    fn d_dt() -> f64 {
        1e-3
    }
    fn d_decimation() -> f64 {
        0.01
    }
    fn d_v_start() -> f64 {
        0.9
    }
    fn d_band() -> f64 {
        1e-3
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            duration: Self::d_duration(),
            dt: Self::d_dt(),
            decimation: Self::d_decimation(),
            v_start_fraction: Self::d_v_start(),
            settle_band: Self::d_band(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    InMemory,
    Datagram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentsConfig {
    #[serde(default = "AgentsConfig::d_transport")]
    pub transport: TransportKind,
    /// Control tick (ms); one integration step per tick.
    #[serde(default = "AgentsConfig::d_tick")]
    pub tick_ms: f64,
    /// Fixed consensus-link latency (ms).
    #[serde(default)]
    pub delay_ms: f64,
    /// Uniform extra latency in `[0, jitter_ms]` (ms).
    #[serde(default)]
    pub jitter_ms: f64,
    /// Independent drop probability per consensus message.
    #[serde(default)]
    pub loss: f64,
    #[serde(default = "AgentsConfig::d_host")]
    pub bind_host: String,
    /// Plant listens on `base_port`, agent `i` on `base_port + i`.
    #[serde(default = "AgentsConfig::d_port")]
    pub base_port: u16,
    /// Pace ticks against the wall clock.
    #[serde(default)]
    pub realtime: bool,
    /// Receive timeout per exchange (ms) before continuing degraded.
    #[serde(default = "AgentsConfig::d_timeout")]
    pub timeout_ms: f64,
    /// After the first agent joins, how long the plant waits for the rest
    /// before starting without them (ms).
    #[serde(default = "AgentsConfig::d_join")]
    pub join_ms: f64,
    /// Inverters whose agents never transmit consensus messages.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub silenced: Vec<InverterId>,
}

impl AgentsConfig {
    fn d_transport() -> TransportKind {
        TransportKind::InMemory
    }
    fn d_tick() -> f64 {
        10.0
    }
    fn d_host() -> String {
        "127.0.0.1".into()
    }
    fn d_port() -> u16 {
        47100
    }
    fn d_timeout() -> f64 {
        500.0
    }
    fn d_join() -> f64 {
        10_000.0
    }
}

impl Default for AgentsConfig {
    fn default() -> Self {
        Self {
            transport: Self::d_transport(),
            tick_ms: Self::d_tick(),
            delay_ms: 0.0,
            jitter_ms: 0.0,
            loss: 0.0,
            bind_host: Self::d_host(),
            base_port: Self::d_port(),
            realtime: false,
            timeout_ms: Self::d_timeout(),
            join_ms: Self::d_join(),
            silenced: Vec::new(),
        }
    }
}

/// Sets every value matched by a dotted `path=value` override. The value is
/// parsed as JSON when possible, otherwise taken as a string.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::at("", format!("override `{spec}` is not key=value")))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let segs: Vec<&str> = path.split('.').collect();
    if segs.iter().any(|s| s.is_empty()) {
        return Err(ConfigError::at("", format!("override path `{path}` has an empty segment")));
    }
    let hits = set_path(doc, &segs, &value, String::new())?;
    if hits == 0 {
        return Err(ConfigError::at("", format!("override path `{path}` matched nothing")));
    }
    Ok(())
}

fn set_path(node: &mut Value, segs: &[&str], value: &Value, at: String) -> Result<usize, ConfigError> {
    let Some((head, rest)) = segs.split_first() else {
        *node = value.clone();
        return Ok(1);
    };
    match node {
        Value::Array(items) => {
            if *head == "*" {
                let mut n = 0;
                for (k, item) in items.iter_mut().enumerate() {
                    n += set_path(item, rest, value, format!("{at}/{k}"))?;
                }
                Ok(n)
            } else {
                let k: usize = head
                    .parse()
                    .map_err(|_| ConfigError::at(at.clone(), format!("`{head}` is not an array index")))?;
                let len = items.len();
                let item = items
                    .get_mut(k)
                    .ok_or_else(|| ConfigError::at(at.clone(), format!("index {k} out of range (len {len})")))?;
                set_path(item, rest, value, format!("{at}/{k}"))
            }
        }
        Value::Object(map) => {
            if *head == "*" {
                let mut n = 0;
                for (key, item) in map.iter_mut() {
                    n += set_path(item, rest, value, format!("{at}/{}", escape(key)))?;
                }
                Ok(n)
            } else if rest.is_empty() {
                map.insert(head.to_string(), value.clone());
                Ok(1)
            } else {
                let child = map.entry(head.to_string()).or_insert_with(|| Value::Object(Default::default()));
                set_path(child, rest, value, format!("{at}/{}", escape(head)))
            }
        }
        _ => Err(ConfigError::at(at, format!("cannot descend into a scalar with `{head}`"))),
    }
}

fn escape(key: &str) -> String {
    key.replace('~', "~0").replace('/', "~1")
}

/// Typed parse of a JSON document with JSON-pointer error locations.
pub fn parse_value(doc: Value) -> Result<ScenarioConfig, ConfigError> {
    serde_path_to_error::deserialize(doc).map_err(|e| {
        let pointer = pointer_of(e.path());
        ConfigError::at(pointer, e.into_inner().to_string())
    })
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", escape(key))),
            Segment::Enum { variant } => out.push_str(&format!("/{}", escape(variant))),
            Segment::Unknown => {}
        }
    }
    out
}

/// Parses JSON text, applies overrides in order, then parses the typed config.
pub fn parse_str(text: &str, overrides: &[String]) -> Result<ScenarioConfig, ConfigError> {
    let mut doc: Value = serde_json::from_str(text).map_err(|e| ConfigError::at("", format!("invalid JSON: {e}")))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    parse_value(doc)
}

pub fn load(path: &Path, overrides: &[String]) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::at("", format!("cannot read {}: {e}", path.display())))?;
    parse_str(&text, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn minimal() -> Value {
        json!({
            "network": {
                "v_nom": 391.9,
                "buses": ["a", "b"],
                "lines": [{"from": "a", "to": "b", "r": 0.001, "x": 0.01}],
                "loads": [{"bus": "b", "p": 2.4e6, "q": 1.2e6}],
                "bindings": [{"inverter": 1, "bus": "a"}, {"inverter": 2, "bus": "b", "r": 0.0006, "x": 0.006}]
            },
            "inverters": [{"id": 1, "kind": "droop"}, {"id": 2, "kind": "vsm"}],
            "graph": {"edges": [{"i": 1, "j": 2, "a": 1.0, "b": 1.0, "e": 0.5, "f": 0.05}]}
        })
    }

    #[test]
    fn defaults_fill_in() {
        let c = parse_value(minimal()).unwrap();
        assert_eq!(c.inverters[0].k_i, 0.05);
        assert_eq!(c.sim.dt, 1e-3);
        assert!(c.controller.energy_consensus);
        assert!((c.inverters[1].n * c.inverters[1].v_nom / c.inverters[1].s_max - 20e-6).abs() < 1e-18);
    }

    #[test]
    fn unknown_key_reports_pointer() {
        let mut doc = minimal();
        doc["inverters"][1]["bogus"] = json!(1);
        let e = parse_value(doc).unwrap_err();
        assert_eq!(e.pointer, "/inverters/1/bogus");
        assert!(e.message.contains("bogus"));
    }

    #[test]
    fn wrong_type_reports_pointer() {
        let mut doc = minimal();
        doc["network"]["lines"][0]["r"] = json!("big");
        let e = parse_value(doc).unwrap_err();
        assert_eq!(e.pointer, "/network/lines/0/r");
    }

    #[test]
    fn overrides() {
        let mut doc = minimal();
        apply_override(&mut doc, "inverters.*.k_i=2.5").unwrap();
        apply_override(&mut doc, "sim.duration=3").unwrap();
        apply_override(&mut doc, "graph.edges.0.e=0").unwrap();
        let c = parse_value(doc.clone()).unwrap();
        assert!(c.inverters.iter().all(|i| i.k_i == 2.5));
        assert_eq!(c.sim.duration, 3.0);
        assert_eq!(c.graph.edges[0].e, 0.0);
        assert!(apply_override(&mut doc, "inverters.7.k_i=1").is_err());
        assert!(apply_override(&mut doc, "novalue").is_err());
    }

    #[test]
    fn events_parse_and_round_trip() {
        let mut doc = minimal();
        doc["events"] = json!([
            {"kind": "load_step", "t": 80.0, "bus": "b", "p": 5e5, "q": 0.0},
            {"kind": "load_pickup_ramp", "t": 0.0, "bus": "b", "p": 6e5, "q": 3e5, "duration": 60.0, "ramp": "voltage"},
            {"kind": "gain_change", "t": 5.0, "gain": "k_i", "value": 0.1}
        ]);
        let c = parse_value(doc).unwrap();
        assert_eq!(c.events.len(), 3);
        let again = parse_value(serde_json::to_value(&c).unwrap()).unwrap();
        assert_eq!(again, c);

        let mut bad = minimal();
        bad["events"] = json!([{"kind": "load_step", "t": 1.0, "bus": "b", "p": 1.0, "q": 0.0, "extra": 1}]);
        assert!(parse_value(bad).is_err());
    }
}

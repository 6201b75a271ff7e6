//! Secondary controllers as independent peers.
//!
//! Each agent owns one inverter's controller state and exchanges only
//! consensus broadcasts with its graph neighbors. A plant service owns the
//! electrical network: it receives actuations (frequency, voltage) and
//! returns measured powers. Agents and plant advance in lockstep, one RK4
//! stage per exchange, so an unimpaired run reproduces the monolithic
//! engine.
//!
//! Link impairments act in simulated time and are a pure function of
//! `(seed, sender, receiver, seq)`, so a run is reproducible on either
//! transport.

pub mod codec;
mod memory;
mod node;
mod udp;

use std::str::FromStr;

use serde::Serialize;

use crate::config::TransportKind;
use crate::model::InverterId;
use crate::sim::{Metrics, Scenario, SimError, Trace};

pub use memory::run_in_memory;
pub use node::{agent_tick, seq_of, stage_time, Agent, History, Impairment, PlantService, Telemetry, TickOutput, STAGES};
pub use udp::{run_agent, run_datagram, run_plant, AgentOutcome};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("inverter {0} is not in the scenario")]
    UnknownInverter(InverterId),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("non-finite controller state of inverter {id} at t = {t} s")]
    NonFinite { id: InverterId, t: f64 },
    #[error("no response from {0}")]
    Unresponsive(String),
    #[error("bad role `{0}` (expected plant, agent:<id> or all)")]
    Role(String),
}

impl From<crate::netsolve::NetError> for AgentError {
    fn from(e: crate::netsolve::NetError) -> Self {
        Self::Sim(e.into())
    }
}

/// Process role in a multi-process run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Plant,
    Agent(InverterId),
    All,
}

impl FromStr for Role {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, AgentError> {
        match s {
            "plant" => Ok(Self::Plant),
            "all" => Ok(Self::All),
            _ => s
                .strip_prefix("agent:")
                .and_then(|id| id.parse().ok())
                .map(Self::Agent)
                .ok_or_else(|| AgentError::Role(s.to_string())),
        }
    }
}

/// Communication graph actually in use: silenced agents are cut off.
pub fn effective_graph(sc: &Scenario) -> crate::model::CommGraph<f64> {
    sc.agents.silenced.iter().fold(sc.graph.clone(), |g, &id| g.isolate(id))
}

/// Initial full-system state; every role derives it independently.
pub(crate) fn initial(sc: &Scenario) -> Result<Vec<f64>, AgentError> {
    let mut plant = crate::sim::Plant::new(sc.network.clone());
    Ok(crate::sim::initial_state(sc, &sc.inverters, &mut plant, &effective_graph(sc))?.0)
}

/// Impairment configured for a scenario.
pub fn impairment(sc: &Scenario) -> Impairment {
    Impairment {
        delay: sc.agents.delay_ms * 1e-3,
        jitter: sc.agents.jitter_ms * 1e-3,
        loss: sc.agents.loss,
        seed: sc.seed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributedResult {
    #[serde(skip)]
    pub trace: Trace,
    pub metrics: Metrics,
    pub telemetry: Vec<Telemetry>,
}

impl DistributedResult {
    pub fn degraded(&self) -> bool {
        self.telemetry.iter().any(|t| t.degraded)
    }
}

/// Runs the scenario as agents plus plant over the configured transport.
pub fn run_distributed(sc: &Scenario) -> Result<DistributedResult, AgentError> {
    match sc.agents.transport {
        TransportKind::InMemory => run_in_memory(sc),
        TransportKind::Datagram => run_datagram(sc),
    }
}

/// Joins per-agent sample lists into one trace. Samples are matched by
/// position; the trace ends at the shortest list.
pub fn merge_samples(per_agent: &[(InverterId, Vec<(f64, crate::sim::Row)>)]) -> Trace {
    let mut trace = Trace::new(per_agent.iter().map(|(id, _)| *id).collect());
    let len = per_agent.iter().map(|(_, s)| s.len()).min().unwrap_or(0);
    for k in 0..len {
        let t = per_agent[0].1[k].0;
        trace.samples.push(crate::sim::Sample {
            t,
            rows: per_agent.iter().map(|(_, s)| s[k].1).collect(),
        });
    }
    trace
}

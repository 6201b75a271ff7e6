use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::integrate::{combine, stage_point};
use crate::model::{CommGraph, InverterId, InverterKind, InverterParams, Link};
use crate::secondary::{reactive_headroom, Accept, ConsensusVars, NeighborView};
use crate::sim::control::{self, D_OMEGA, STATE, V};
use crate::sim::{apply_gain, EventKind, Plant, Row, Scenario};

use super::codec::{ActMsg, ConsensusMsg, MeasMsg};
use super::AgentError;

/// RK4 stages per step.
pub const STAGES: usize = 4;

/// Sequence number of stage `stage` of tick `tick`; strictly increasing.
#[inline]
pub fn seq_of(tick: usize, stage: usize) -> u64 {
    (STAGES * tick + stage + 1) as u64
}

/// Simulated time of a stage.
#[inline]
pub fn stage_time(sc: &Scenario, tick: usize, stage: usize) -> f64 {
    let t = sc.time(tick);
    match stage {
        0 => t,
        1 | 2 => t + 0.5 * sc.dt,
        _ => t + sc.dt,
    }
}

#[inline]
fn stage_step(dt: f64, stage: usize) -> f64 {
    if stage == 3 {
        dt
    } else {
        0.5 * dt
    }
}

/// Deterministic link impairment in simulated time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Impairment {
    pub delay: f64,
    pub jitter: f64,
    pub loss: f64,
    pub seed: u64,
}

impl Impairment {
    pub fn none() -> Self {
        Self {
            delay: 0.0,
            jitter: 0.0,
            loss: 0.0,
            seed: 0,
        }
    }

    pub fn is_none(&self) -> bool {
        self.delay == 0.0 && self.jitter == 0.0 && self.loss == 0.0
    }

    /// Delivery time of message `seq` sent at `t` on link `from → to`, or
    /// `None` if the message is lost. Any party can evaluate this.
    pub fn fate(&self, from: InverterId, to: InverterId, seq: u64, t: f64) -> Option<f64> {
        if self.loss == 0.0 && self.jitter == 0.0 {
            return Some(t + self.delay);
        }
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&u64::from(from).to_le_bytes());
        key[16..24].copy_from_slice(&u64::from(to).to_le_bytes());
        key[24..].copy_from_slice(&seq.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        let lost = rng.gen::<f64>() < self.loss;
        let extra = rng.gen::<f64>() * self.jitter;
        (!lost).then_some(t + self.delay + extra)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Telemetry {
    pub id: InverterId,
    pub sent: u64,
    pub received: u64,
    pub stale: u64,
    pub foreign: u64,
    /// Stage evaluations after warm-up with a declared neighbor never heard from.
    pub missing_stages: u64,
    /// Largest neighbor data age seen after warm-up (s).
    pub max_age: f64,
    /// Receive waits that ran out before the expected record arrived.
    pub timeouts: u64,
    /// Ticks that exceeded the real-time budget.
    pub overruns: u64,
    pub degraded: bool,
}

const HISTORY: usize = 8192;

/// This agent's own broadcasts by sequence number.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    first: u64,
    vars: VecDeque<ConsensusVars<f64>>,
}

impl History {
    pub fn push(&mut self, seq: u64, v: ConsensusVars<f64>) {
        if self.vars.is_empty() || seq != self.first + self.vars.len() as u64 {
            self.vars.clear();
            self.first = seq;
        }
        self.vars.push_back(v);
        if self.vars.len() > HISTORY {
            self.vars.pop_front();
            self.first += 1;
        }
    }

    pub fn at(&self, seq: u64) -> Option<ConsensusVars<f64>> {
        seq.checked_sub(self.first).and_then(|k| self.vars.get(k as usize)).copied()
    }
}

/// Neighbor value shifted so that `local − shifted` equals the difference
/// of both values at the neighbor's sample instant.
fn aligned(nb: ConsensusVars<f64>, then: ConsensusVars<f64>, now: &ConsensusVars<f64>) -> ConsensusVars<f64> {
    ConsensusVars {
        omega_cons: nb.omega_cons + (now.omega_cons - then.omega_cons),
        q_ratio: nb.q_ratio + (now.q_ratio - then.q_ratio),
        m_de: nb.m_de + (now.m_de - then.m_de),
        n_df: nb.n_df + (now.n_df - then.n_df),
    }
}

/// Result of one controller evaluation on the latest neighbor snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub rates: [f64; STATE],
    pub msg: ConsensusMsg,
    /// Declared neighbors with no data; their terms were skipped.
    pub missing: Vec<InverterId>,
}

/// One secondary-controller evaluation: rates of the local states from the
/// held neighbor values, plus this agent's broadcast. Each link difference
/// pairs a neighbor sample with this agent's own value at the same sequence
/// number when `history` still holds it.
#[allow(clippy::too_many_arguments)]
pub fn agent_tick(
    params: &InverterParams<f64>,
    ctrl: &crate::sim::Control,
    v_ref: f64,
    x: &[f64],
    pq: (f64, f64),
    inbox: &NeighborView<f64>,
    history: &History,
    row: &[Link<f64>],
    seq: u64,
    t: f64,
) -> TickOutput {
    let out = control::outputs(params, v_ref, x);
    let local = control::consensus_vars(params, ctrl, x, pq);
    let lookup = |id| {
        inbox.get(id).map(|e| match history.at(e.seq) {
            Some(then) if e.seq != seq => aligned(e.vars, then, &local),
            _ => e.vars,
        })
    };
    let mut rates = [0.0; STATE];
    control::rates(params, ctrl, v_ref, x, out, pq, &local, row, lookup, &mut rates);
    TickOutput {
        rates,
        msg: ConsensusMsg::new(params.id, seq, t, local),
        missing: inbox.missing(),
    }
}

/// Secondary controller of one inverter, driven stage by stage.
#[derive(Debug, Clone)]
pub struct Agent {
    pub id: InverterId,
    idx: usize,
    sc: Scenario,
    params: Vec<InverterParams<f64>>,
    graph: CommGraph<f64>,
    row: Vec<Link<f64>>,
    view: NeighborView<f64>,
    history: History,
    silenced: bool,
    warmup: f64,
    x: [f64; STATE],
    xs: [f64; STATE],
    k: [[f64; STATE]; STAGES],
    pq: (f64, f64),
    f_cap: f64,
    pub telemetry: Telemetry,
    pub samples: Vec<(f64, Row)>,
}

impl Agent {
    /// `x0` is the full-system initial state; only this inverter's slice is kept.
    pub fn new(sc: &Scenario, id: InverterId, x0: &[f64], imp: &Impairment) -> Result<Self, AgentError> {
        let idx = sc.graph.index_of(id).ok_or(AgentError::UnknownInverter(id))?;
        let mut params = sc.inverters.clone();
        let mut graph = sc.graph.clone();
        for e in sc.gain_events_at(0) {
            if let EventKind::Gain { target, gain, value } = e.kind {
                apply_gain(&mut params, &mut graph, target, gain, value);
            }
        }
        let row = graph.row(idx);
        let mut x = [0.0; STATE];
        x.copy_from_slice(&x0[idx * STATE..(idx + 1) * STATE]);
        Ok(Self {
            id,
            idx,
            view: NeighborView::from_row(&row),
            history: History::default(),
            silenced: sc.agents.silenced.contains(&id),
            warmup: imp.delay + imp.jitter + sc.dt,
            sc: sc.clone(),
            params,
            graph,
            row,
            x,
            xs: x,
            k: [[0.0; STATE]; STAGES],
            pq: (0.0, 0.0),
            f_cap: 0.0,
            telemetry: Telemetry {
                id,
                ..Default::default()
            },
            samples: Vec::new(),
        })
    }

    pub fn params(&self) -> &InverterParams<f64> {
        &self.params[self.idx]
    }

    /// This agent's copy of every inverter's parameters, gain events applied.
    pub fn all_params(&self) -> &[InverterParams<f64>] {
        &self.params
    }

    /// Neighbors this agent transmits to; empty when silenced.
    pub fn peers(&self) -> Vec<InverterId> {
        if self.silenced {
            Vec::new()
        } else {
            self.row.iter().map(|l| l.neighbor).collect()
        }
    }

    pub fn is_silenced(&self) -> bool {
        self.silenced
    }

    /// Applies gain events of this tick and refreshes algebraic droop outputs.
    pub fn begin_tick(&mut self, tick: usize) {
        if tick > 0 {
            let mut changed = false;
            for e in self.sc.gain_events_at(tick as i64) {
                if let EventKind::Gain { target, gain, value } = e.kind {
                    apply_gain(&mut self.params, &mut self.graph, target, gain, value);
                    changed = true;
                }
            }
            if changed {
                self.row = self.graph.row(self.idx);
            }
        }
        let p = &self.params[self.idx];
        if p.kind == InverterKind::Droop {
            let v_ref = self.sc.v_ref_factor(self.sc.time(tick)) * p.v_nom;
            let (dw, v) = control::outputs(p, v_ref, &self.x);
            self.x[D_OMEGA] = dw;
            self.x[V] = v;
        }
    }

    fn v_ref(&self, t: f64) -> f64 {
        self.sc.v_ref_factor(t) * self.params[self.idx].v_nom
    }

    /// Forms the stage state and returns the actuation for the plant.
    pub fn act(&mut self, tick: usize, stage: usize) -> ActMsg {
        if stage == 0 {
            self.xs = self.x;
        } else {
            stage_point(&self.x, &self.k[stage - 1], stage_step(self.sc.dt, stage), &mut self.xs);
        }
        let p = &self.params[self.idx];
        let (dw, v) = control::outputs(p, self.v_ref(stage_time(&self.sc, tick, stage)), &self.xs);
        ActMsg {
            inv: self.id,
            omega: p.omega_nom + dw,
            v,
            seq: Some(seq_of(tick, stage)),
        }
    }

    /// Takes the plant measurement and returns this agent's broadcast. On
    /// the first stage of a tick this also updates the reactive headroom and
    /// records a trace sample when due.
    pub fn on_meas(&mut self, tick: usize, stage: usize, m: &MeasMsg) -> ConsensusMsg {
        self.pq = (m.p, m.q);
        let t = stage_time(&self.sc, tick, stage);
        let p = &self.params[self.idx];
        if stage == 0 {
            if tick > 0 {
                self.f_cap = reactive_headroom(self.f_cap, p.s_max, m.p, m.q, self.sc.dt);
            }
            if tick.is_multiple_of(self.sc.stride()) || tick == self.sc.steps() {
                let out = control::outputs(p, self.v_ref(t), &self.xs);
                let row = crate::sim::make_row(p, &self.xs, out, self.pq, self.f_cap);
                self.samples.push((t, row));
            }
        }
        let vars = control::consensus_vars(p, &self.sc.control, &self.xs, self.pq);
        self.history.push(seq_of(tick, stage), vars);
        if !self.silenced {
            self.telemetry.sent += self.row.len() as u64;
        }
        ConsensusMsg::new(self.id, seq_of(tick, stage), t, vars)
    }

    /// Hands one received broadcast to the neighbor store.
    pub fn deliver(&mut self, msg: &ConsensusMsg) {
        if self.silenced {
            return;
        }
        match self.view.accept(msg.sender, msg.seq, msg.t, msg.vars()) {
            Accept::Accepted => self.telemetry.received += 1,
            Accept::Stale => self.telemetry.stale += 1,
            Accept::Foreign => self.telemetry.foreign += 1,
        }
    }

    /// Latest accepted sequence number from `sender`.
    pub fn last_seq(&self, sender: InverterId) -> Option<u64> {
        self.view.get(sender).map(|e| e.seq)
    }

    /// Evaluates the stage rates; after the last stage advances the state.
    pub fn finish_stage(&mut self, tick: usize, stage: usize) -> Result<(), AgentError> {
        let t = stage_time(&self.sc, tick, stage);
        let p = &self.params[self.idx];
        let empty = NeighborView::new(std::iter::empty());
        let inbox = if self.silenced { &empty } else { &self.view };
        let row: &[Link<f64>] = if self.silenced { &[] } else { &self.row };
        let out = agent_tick(p, &self.sc.control, self.v_ref(t), &self.xs, self.pq, inbox, &self.history, row, seq_of(tick, stage), t);
        self.k[stage] = out.rates;
        if t > self.warmup {
            if !out.missing.is_empty() {
                self.telemetry.missing_stages += 1;
                self.telemetry.degraded = true;
            }
            if let Some(oldest) = inbox.oldest() {
                let age = t - oldest;
                self.telemetry.max_age = self.telemetry.max_age.max(age);
                if age > self.warmup + 1e-9 {
                    self.telemetry.degraded = true;
                }
            }
        }
        if stage == STAGES - 1 {
            let k = &self.k;
            combine(&mut self.x, [&k[0], &k[1], &k[2], &k[3]], self.sc.dt);
            if self.x.iter().any(|v| !v.is_finite()) {
                return Err(AgentError::NonFinite { id: self.id, t });
            }
        }
        Ok(())
    }
}

/// Plant service: owns the angles and the network.
#[derive(Debug, Clone)]
pub struct PlantService {
    sc: Scenario,
    plant: Plant,
    ids: Vec<InverterId>,
    omega_nom: Vec<f64>,
    delta: Vec<f64>,
    ds: Vec<f64>,
    k: [Vec<f64>; STAGES],
}

impl PlantService {
    pub fn new(sc: &Scenario, x0: &[f64]) -> Self {
        let n = sc.len();
        let delta: Vec<f64> = (0..n).map(|i| x0[i * STATE + control::DELTA]).collect();
        Self {
            plant: Plant::new(sc.network.clone()),
            ids: sc.ids(),
            omega_nom: sc.inverters.iter().map(|p| p.omega_nom).collect(),
            ds: delta.clone(),
            delta,
            k: std::array::from_fn(|_| vec![0.0; n]),
            sc: sc.clone(),
        }
    }

    pub fn ids(&self) -> &[InverterId] {
        &self.ids
    }

    /// Solves the network for one stage; `acts` is in inverter order.
    pub fn solve(&mut self, tick: usize, stage: usize, acts: &[ActMsg]) -> Result<Vec<MeasMsg>, AgentError> {
        if stage == 0 {
            self.ds.copy_from_slice(&self.delta);
        } else {
            stage_point(&self.delta, &self.k[stage - 1], stage_step(self.sc.dt, stage), &mut self.ds);
        }
        for (i, a) in acts.iter().enumerate() {
            self.k[stage][i] = a.omega - self.omega_nom[i];
        }
        let src: Vec<(f64, f64)> = acts.iter().zip(&self.ds).map(|(a, &d)| (a.v, d)).collect();
        let t = stage_time(&self.sc, tick, stage);
        let pq = self.plant.solve(&self.sc, tick as i64, t, &src)?;
        if stage == STAGES - 1 {
            let k = &self.k;
            combine(&mut self.delta, [&k[0], &k[1], &k[2], &k[3]], self.sc.dt);
        }
        Ok(self
            .ids
            .iter()
            .zip(pq)
            .map(|(&inv, (p, q))| MeasMsg {
                inv,
                p,
                q,
                seq: Some(seq_of(tick, stage)),
            })
            .collect())
    }
}

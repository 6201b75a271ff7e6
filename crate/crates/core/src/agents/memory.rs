use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use crate::model::InverterId;
use crate::sim::{metrics, Scenario};

use super::codec::ConsensusMsg;
use super::node::{stage_time, Agent, PlantService, STAGES};
use super::{impairment, initial, merge_samples, AgentError, DistributedResult};

/// Messages in flight to one receiver, ordered by delivery time.
#[derive(Debug, Default)]
struct Inbox {
    queue: BTreeMap<(u64, InverterId, u64), ConsensusMsg>,
}

impl Inbox {
    fn push(&mut self, at: f64, msg: ConsensusMsg) {
        self.queue.insert((at.max(0.0).to_bits(), msg.sender, msg.seq), msg);
    }

    fn due(&mut self, now: f64) -> Vec<ConsensusMsg> {
        let cut = (now + 1e-12).to_bits();
        let later = self.queue.split_off(&(cut + 1, 0, 0));
        std::mem::replace(&mut self.queue, later).into_values().collect()
    }
}

/// Single-threaded lockstep run with in-process message passing.
pub fn run_in_memory(sc: &Scenario) -> Result<DistributedResult, AgentError> {
    let wall = Instant::now();
    let imp = impairment(sc);
    let x0 = initial(sc)?;
    let mut agents = sc
        .ids()
        .into_iter()
        .map(|id| Agent::new(sc, id, &x0, &imp))
        .collect::<Result<Vec<_>, _>>()?;
    let mut service = PlantService::new(sc, &x0);
    let ids = sc.ids();
    let mut inboxes: Vec<Inbox> = ids.iter().map(|_| Inbox::default()).collect();
    let pace = Duration::from_secs_f64(sc.agents.tick_ms * 1e-3);
    let steps = sc.steps();
    let mut abort = None;

    'ticks: for tick in 0..=steps {
        if sc.agents.realtime {
            let due = pace * tick as u32;
            let now = wall.elapsed();
            if now < due {
                std::thread::sleep(due - now);
            } else if now > due + pace {
                agents.iter_mut().for_each(|a| a.telemetry.overruns += 1);
            }
        }
        agents.iter_mut().for_each(|a| a.begin_tick(tick));
        let stages = if tick == steps { 1 } else { STAGES };
        for stage in 0..stages {
            let t = stage_time(sc, tick, stage);
            let acts: Vec<_> = agents.iter_mut().map(|a| a.act(tick, stage)).collect();
            let meas = match service.solve(tick, stage, &acts) {
                Ok(m) => m,
                Err(e) => {
                    abort = Some(format!("t = {t}: {e}"));
                    break 'ticks;
                }
            };
            let msgs: Vec<ConsensusMsg> = agents.iter_mut().zip(&meas).map(|(a, m)| a.on_meas(tick, stage, m)).collect();
            if tick == steps {
                break;
            }
            for (a, msg) in agents.iter().zip(&msgs) {
                for peer in a.peers() {
                    let Some(j) = ids.iter().position(|&id| id == peer) else { continue };
                    if let Some(at) = imp.fate(a.id, peer, msg.seq, msg.t) {
                        inboxes[j].push(at, *msg);
                    }
                }
            }
            for (a, inbox) in agents.iter_mut().zip(&mut inboxes) {
                for m in inbox.due(t) {
                    a.deliver(&m);
                }
            }
            for a in agents.iter_mut() {
                if let Err(e) = a.finish_stage(tick, stage) {
                    abort = Some(e.to_string());
                    break 'ticks;
                }
            }
        }
    }

    let per_agent: Vec<_> = agents.iter_mut().map(|a| (a.id, std::mem::take(&mut a.samples))).collect();
    let trace = merge_samples(&per_agent);
    let metrics = metrics(sc, agents[0].all_params(), &trace, abort, wall.elapsed().as_secs_f64());
    Ok(DistributedResult {
        trace,
        metrics,
        telemetry: agents.into_iter().map(|a| a.telemetry).collect(),
    })
}

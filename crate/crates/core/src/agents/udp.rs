use std::collections::{HashMap, HashSet};
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::time::{Duration, Instant};

use crate::model::{InverterId, InverterParams};
use crate::sim::{metrics, Row, Scenario};

use crate::sim::control::{STATE, V};

use super::codec::{decode, encode, ActMsg, ConsensusMsg, Record};
use super::node::{stage_time, Agent, PlantService, Telemetry, STAGES};
use super::{impairment, initial, merge_samples, AgentError, DistributedResult, Impairment};

const HANDSHAKE: Duration = Duration::from_secs(60);

fn stall(sc: &Scenario) -> Duration {
    Duration::from_secs_f64((20.0 * sc.agents.timeout_ms * 1e-3).max(2.0))
}

fn address(sc: &Scenario, id: Option<InverterId>) -> Result<SocketAddr, AgentError> {
    let offset = id.unwrap_or(0);
    let port = u16::try_from(u64::from(sc.agents.base_port) + u64::from(offset))
        .map_err(|_| AgentError::Protocol(format!("port for inverter {offset} exceeds 65535")))?;
    let host = format!("{}:{}", sc.agents.bind_host, port);
    host.to_socket_addrs()?
        .next()
        .ok_or_else(|| AgentError::Protocol(format!("cannot resolve {host}")))
}

fn bind(sc: &Scenario, id: Option<InverterId>) -> Result<UdpSocket, AgentError> {
    let addr = address(sc, id)?;
    let sock = UdpSocket::bind(addr).map_err(|source| AgentError::Bind {
        addr: addr.to_string(),
        source,
    })?;
    sock.set_read_timeout(Some(Duration::from_secs_f64(sc.agents.timeout_ms * 1e-3)))?;
    Ok(sock)
}

fn send(sock: &UdpSocket, to: SocketAddr, r: &Record) -> Result<(), AgentError> {
    sock.send_to(encode(r).as_bytes(), to)?;
    Ok(())
}

/// Next decodable record, or `None` on timeout. Malformed datagrams are skipped.
fn recv(sock: &UdpSocket, buf: &mut [u8]) -> Result<Option<Record>, AgentError> {
    loop {
        match sock.recv_from(buf) {
            Ok((n, _)) => {
                if let Ok(r) = decode(&buf[..n]) {
                    return Ok(Some(r));
                }
            }
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => return Ok(None),
            Err(e) => return Err(e.into()),
        }
    }
}

/// Runs the plant service on its configured port until the last tick.
pub fn run_plant(sc: &Scenario) -> Result<(), AgentError> {
    let sock = bind(sc, None)?;
    plant_on(sc, &sock)
}

fn plant_on(sc: &Scenario, sock: &UdpSocket) -> Result<(), AgentError> {
    let x0 = initial(sc)?;
    let mut service = PlantService::new(sc, &x0);
    let ids = sc.ids();
    let peers = ids.iter().map(|&id| address(sc, Some(id))).collect::<Result<Vec<_>, _>>()?;
    let mut buf = [0u8; 1024];

    let mut hello = vec![false; ids.len()];
    let start = Instant::now();
    let mut first: Option<Instant> = None;
    let join = Duration::from_secs_f64(sc.agents.join_ms * 1e-3);
    while !hello.iter().all(|&h| h) {
        if first.is_some_and(|f| f.elapsed() > join) {
            break;
        }
        if first.is_none() && start.elapsed() > HANDSHAKE {
            return Err(AgentError::Unresponsive("agents during handshake".into()));
        }
        if let Some(Record::Hello(id)) = recv(sock, &mut buf)? {
            if let Some(k) = ids.iter().position(|&i| i == id) {
                hello[k] = true;
                first.get_or_insert_with(Instant::now);
            }
        }
    }
    // Inverters whose agent never joined hold their initial setpoint.
    let held: Vec<Option<ActMsg>> = ids
        .iter()
        .enumerate()
        .map(|(k, &inv)| {
            (!hello[k]).then(|| ActMsg {
                inv,
                omega: sc.inverters[k].omega_nom,
                v: x0[k * STATE + V],
                seq: None,
            })
        })
        .collect();
    for (&to, _) in peers.iter().zip(&hello).filter(|(_, &h)| h) {
        send(sock, to, &Record::Start(ids.len()))?;
    }

    let steps = sc.steps();
    for tick in 0..=steps {
        let stages = if tick == steps { 1 } else { STAGES };
        for stage in 0..stages {
            let seq = super::seq_of(tick, stage);
            let mut acts = held.clone();
            let mut waited = Instant::now();
            while acts.iter().any(Option::is_none) {
                match recv(sock, &mut buf)? {
                    Some(Record::Act(a)) if a.seq == Some(seq) => {
                        if let Some(k) = ids.iter().position(|&i| i == a.inv) {
                            acts[k] = Some(a);
                            waited = Instant::now();
                        }
                    }
                    Some(Record::Hello(id)) => {
                        if let Some(k) = ids.iter().position(|&i| i == id).filter(|&k| hello[k]) {
                            send(sock, peers[k], &Record::Start(ids.len()))?;
                        }
                    }
                    Some(_) => {}
                    None if waited.elapsed() > stall(sc) => {
                        let missing: Vec<String> = ids.iter().zip(&acts).filter(|(_, a)| a.is_none()).map(|(id, _)| id.to_string()).collect();
                        return Err(AgentError::Unresponsive(format!("agents {} at seq {seq}", missing.join(","))));
                    }
                    None => {}
                }
            }
            let acts: Vec<_> = acts.into_iter().flatten().collect();
            let meas = service.solve(tick, stage, &acts)?;
            for ((m, &to), _) in meas.iter().zip(&peers).zip(&hello).filter(|(_, &h)| h) {
                send(sock, to, &Record::Meas(*m))?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentOutcome {
    pub id: InverterId,
    pub samples: Vec<(f64, Row)>,
    pub telemetry: Telemetry,
    pub params: Vec<InverterParams<f64>>,
    pub abort: Option<String>,
}

/// Runs one agent on its configured port until the last tick.
pub fn run_agent(sc: &Scenario, id: InverterId) -> Result<AgentOutcome, AgentError> {
    let sock = bind(sc, Some(id))?;
    agent_on(sc, id, &sock)
}

/// Highest sequence number from `from` due at this agent by `t`, looking
/// back only as far as the longest possible latency.
fn expected(sc: &Scenario, imp: &Impairment, from: InverterId, to: InverterId, tick: usize, stage: usize, t: f64) -> Option<u64> {
    let horizon = t - imp.delay - imp.jitter - 1e-9;
    let (mut tk, mut st) = (tick, stage);
    loop {
        let ts = stage_time(sc, tk, st);
        if ts < horizon {
            return None;
        }
        let seq = super::seq_of(tk, st);
        if imp.fate(from, to, seq, ts).is_some_and(|at| at <= t + 1e-12) {
            return Some(seq);
        }
        match (tk, st) {
            (0, 0) => return None,
            (_, 0) => (tk, st) = (tk - 1, STAGES - 1),
            _ => st -= 1,
        }
    }
}

fn agent_on(sc: &Scenario, id: InverterId, sock: &UdpSocket) -> Result<AgentOutcome, AgentError> {
    let imp = impairment(sc);
    let x0 = initial(sc)?;
    let mut agent = Agent::new(sc, id, &x0, &imp)?;
    let plant_addr = address(sc, None)?;
    let mut peer_addr = HashMap::new();
    for p in agent.peers() {
        peer_addr.insert(p, address(sc, Some(p))?);
    }
    let listen: Vec<InverterId> = agent.peers().into_iter().filter(|p| !sc.agents.silenced.contains(p)).collect();
    let mut buf = [0u8; 1024];
    let mut pending: Vec<(f64, ConsensusMsg)> = Vec::new();
    let mut heard: HashMap<InverterId, u64> = HashMap::new();
    // Neighbors that timed out; not waited for again until heard from.
    let mut quiet: HashSet<InverterId> = HashSet::new();
    let hold = |m: ConsensusMsg, pending: &mut Vec<(f64, ConsensusMsg)>, heard: &mut HashMap<InverterId, u64>| {
        if let Some(at) = imp.fate(m.sender, id, m.seq, m.t) {
            let h = heard.entry(m.sender).or_insert(0);
            *h = (*h).max(m.seq);
            pending.push((at, m));
        }
    };

    let start = Instant::now();
    send(sock, plant_addr, &Record::Hello(id))?;
    loop {
        match recv(sock, &mut buf)? {
            Some(Record::Start(_)) => break,
            Some(Record::Dapi(m)) => hold(m, &mut pending, &mut heard),
            Some(_) => {}
            None if start.elapsed() > HANDSHAKE => return Err(AgentError::Unresponsive("plant during handshake".into())),
            None => send(sock, plant_addr, &Record::Hello(id))?,
        }
    }

    let clock = Instant::now();
    let pace = Duration::from_secs_f64(sc.agents.tick_ms * 1e-3);
    let steps = sc.steps();
    let mut abort = None;
    'ticks: for tick in 0..=steps {
        if sc.agents.realtime {
            let due = pace * tick as u32;
            let now = clock.elapsed();
            if now < due {
                std::thread::sleep(due - now);
            } else if now > due + pace {
                agent.telemetry.overruns += 1;
            }
        }
        agent.begin_tick(tick);
        let stages = if tick == steps { 1 } else { STAGES };
        for stage in 0..stages {
            let seq = super::seq_of(tick, stage);
            let t = stage_time(sc, tick, stage);
            let act = Record::Act(agent.act(tick, stage));
            send(sock, plant_addr, &act)?;
            let waited = Instant::now();
            let meas = loop {
                match recv(sock, &mut buf)? {
                    Some(Record::Meas(m)) if m.seq == Some(seq) && m.inv == id => break m,
                    Some(Record::Dapi(m)) => hold(m, &mut pending, &mut heard),
                    Some(_) => {}
                    None if waited.elapsed() > stall(sc) => return Err(AgentError::Unresponsive(format!("plant at seq {seq}"))),
                    None => {
                        agent.telemetry.timeouts += 1;
                        send(sock, plant_addr, &act)?;
                    }
                }
            };
            let msg = agent.on_meas(tick, stage, &meas);
            if tick == steps {
                break;
            }
            for (&p, &to) in &peer_addr {
                if imp.fate(id, p, seq, t).is_some() {
                    send(sock, to, &Record::Dapi(msg))?;
                }
            }

            let want: Vec<(InverterId, u64)> = listen.iter().filter_map(|&j| expected(sc, &imp, j, id, tick, stage, t).map(|s| (j, s))).collect();
            let behind = |heard: &HashMap<InverterId, u64>, quiet: &HashSet<InverterId>| -> Vec<InverterId> {
                want.iter().filter(|(j, s)| !quiet.contains(j) && heard.get(j).is_none_or(|h| h < s)).map(|(j, _)| *j).collect()
            };
            loop {
                let late = behind(&heard, &quiet);
                if late.is_empty() {
                    break;
                }
                match recv(sock, &mut buf)? {
                    Some(Record::Dapi(m)) => {
                        quiet.remove(&m.sender);
                        hold(m, &mut pending, &mut heard);
                    }
                    Some(_) => {}
                    None => {
                        agent.telemetry.timeouts += 1;
                        agent.telemetry.degraded = true;
                        quiet.extend(late);
                    }
                }
            }
            pending.sort_by(|a, b| a.0.total_cmp(&b.0));
            let split = pending.partition_point(|(at, _)| *at <= t + 1e-12);
            for (_, m) in pending.drain(..split) {
                agent.deliver(&m);
            }
            if let Err(e) = agent.finish_stage(tick, stage) {
                abort = Some(e.to_string());
                break 'ticks;
            }
        }
    }
    Ok(AgentOutcome {
        id,
        samples: std::mem::take(&mut agent.samples),
        params: agent.all_params().to_vec(),
        telemetry: agent.telemetry,
        abort,
    })
}

/// Runs plant and every agent as threads of this process, each on its own
/// socket.
pub fn run_datagram(sc: &Scenario) -> Result<DistributedResult, AgentError> {
    let wall = Instant::now();
    let plant_sock = bind(sc, None)?;
    let socks = sc.ids().into_iter().map(|id| bind(sc, Some(id)).map(|s| (id, s))).collect::<Result<Vec<_>, _>>()?;
    let (plant_res, outcomes) = std::thread::scope(|s| {
        let plant = s.spawn(|| plant_on(sc, &plant_sock));
        let agents: Vec<_> = socks.iter().map(|(id, sock)| s.spawn(move || agent_on(sc, *id, sock))).collect();
        let outcomes: Vec<_> = agents.into_iter().map(|h| h.join().expect("agent thread panicked")).collect();
        (plant.join().expect("plant thread panicked"), outcomes)
    });
    let mut abort = plant_res.err().map(|e| e.to_string());
    let mut done = Vec::new();
    for o in outcomes {
        match o {
            Ok(o) => done.push(o),
            Err(e) => abort = abort.or(Some(e.to_string())),
        }
    }
    if done.is_empty() {
        return Err(AgentError::Protocol(abort.unwrap_or_else(|| "no agent finished".into())));
    }
    abort = abort.or_else(|| done.iter().find_map(|o| o.abort.clone()));
    let per_agent: Vec<_> = done.iter_mut().map(|o| (o.id, std::mem::take(&mut o.samples))).collect();
    let trace = merge_samples(&per_agent);
    let metrics = metrics(sc, &done[0].params, &trace, abort, wall.elapsed().as_secs_f64());
    Ok(DistributedResult {
        trace,
        metrics,
        telemetry: done.into_iter().map(|o| o.telemetry).collect(),
    })
}

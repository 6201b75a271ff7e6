//! Newline-framed text records.
//!
//! ```text
//! DAPI,<sender>,<seq>,<t>,<omega_cons>,<q_ratio>,<m_dE>,<n_dF>
//! ACT,<inv>,<omega>,<V>[,<seq>]
//! MEAS,<inv>,<P>,<Q>[,<seq>]
//! HELLO,<inv>
//! START,<count>
//! ```
//!
//! Floats are written in shortest round-trip form, so decoding an encoded
//! record gives back the same bits.

use crate::model::InverterId;
use crate::secondary::ConsensusVars;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("field {field}: {reason}")]
pub struct DecodeError {
    /// Zero-based field index; 0 is the record tag.
    pub field: usize,
    pub reason: String,
}

impl DecodeError {
    fn new(field: usize, reason: impl Into<String>) -> Self {
        Self {
            field,
            reason: reason.into(),
        }
    }
}

/// One consensus broadcast.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsensusMsg {
    pub sender: InverterId,
    pub seq: u64,
    /// Sender clock (s).
    pub t: f64,
    pub omega_cons: f64,
    pub q_ratio: f64,
    pub m_de: f64,
    pub n_df: f64,
}

impl ConsensusMsg {
    pub fn new(sender: InverterId, seq: u64, t: f64, v: ConsensusVars<f64>) -> Self {
        Self {
            sender,
            seq,
            t,
            omega_cons: v.omega_cons,
            q_ratio: v.q_ratio,
            m_de: v.m_de,
            n_df: v.n_df,
        }
    }

    pub fn vars(&self) -> ConsensusVars<f64> {
        ConsensusVars {
            omega_cons: self.omega_cons,
            q_ratio: self.q_ratio,
            m_de: self.m_de,
            n_df: self.n_df,
        }
    }
}

/// Actuation sent by an agent to the plant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActMsg {
    pub inv: InverterId,
    /// Absolute angular frequency (rad/s).
    pub omega: f64,
    pub v: f64,
    pub seq: Option<u64>,
}

/// Measurement sent by the plant to an agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasMsg {
    pub inv: InverterId,
    pub p: f64,
    pub q: f64,
    pub seq: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Record {
    Dapi(ConsensusMsg),
    Act(ActMsg),
    Meas(MeasMsg),
    Hello(InverterId),
    Start(usize),
}

fn opt_seq(seq: Option<u64>) -> String {
    seq.map(|s| format!(",{s}")).unwrap_or_default()
}

pub fn encode(r: &Record) -> String {
    match r {
        Record::Dapi(m) => format!(
            "DAPI,{},{},{:?},{:?},{:?},{:?},{:?}\n",
            m.sender, m.seq, m.t, m.omega_cons, m.q_ratio, m.m_de, m.n_df
        ),
        Record::Act(a) => format!("ACT,{},{:?},{:?}{}\n", a.inv, a.omega, a.v, opt_seq(a.seq)),
        Record::Meas(m) => format!("MEAS,{},{:?},{:?}{}\n", m.inv, m.p, m.q, opt_seq(m.seq)),
        Record::Hello(id) => format!("HELLO,{id}\n"),
        Record::Start(n) => format!("START,{n}\n"),
    }
}

pub fn encode_dapi(m: &ConsensusMsg) -> String {
    encode(&Record::Dapi(*m))
}

fn float(fields: &[&str], k: usize) -> Result<f64, DecodeError> {
    let s = fields.get(k).ok_or_else(|| DecodeError::new(k, "missing"))?;
    let x: f64 = s.parse().map_err(|_| DecodeError::new(k, format!("`{s}` is not a number")))?;
    if !x.is_finite() {
        return Err(DecodeError::new(k, "non-finite value"));
    }
    Ok(x)
}

fn int<U: std::str::FromStr>(fields: &[&str], k: usize) -> Result<U, DecodeError> {
    let s = fields.get(k).ok_or_else(|| DecodeError::new(k, "missing"))?;
    s.parse().map_err(|_| DecodeError::new(k, format!("`{s}` is not an unsigned integer")))
}

fn arity(fields: &[&str], min: usize, max: usize) -> Result<(), DecodeError> {
    if fields.len() < min {
        return Err(DecodeError::new(fields.len(), "missing"));
    }
    if fields.len() > max {
        return Err(DecodeError::new(max, "unexpected extra field"));
    }
    Ok(())
}

/// Decodes one record. The trailing newline is required.
pub fn decode(bytes: &[u8]) -> Result<Record, DecodeError> {
    let text = std::str::from_utf8(bytes).map_err(|_| DecodeError::new(0, "not UTF-8"))?;
    let body = text.strip_suffix('\n').ok_or_else(|| DecodeError::new(0, "record not newline-terminated"))?;
    let body = body.strip_suffix('\r').unwrap_or(body);
    let fields: Vec<&str> = body.split(',').collect();
    match fields[0] {
        "DAPI" => {
            arity(&fields, 8, 8)?;
            Ok(Record::Dapi(ConsensusMsg {
                sender: int(&fields, 1)?,
                seq: int(&fields, 2)?,
                t: float(&fields, 3)?,
                omega_cons: float(&fields, 4)?,
                q_ratio: float(&fields, 5)?,
                m_de: float(&fields, 6)?,
                n_df: float(&fields, 7)?,
            }))
        }
        "ACT" => {
            arity(&fields, 4, 5)?;
            Ok(Record::Act(ActMsg {
                inv: int(&fields, 1)?,
                omega: float(&fields, 2)?,
                v: float(&fields, 3)?,
                seq: if fields.len() == 5 { Some(int(&fields, 4)?) } else { None },
            }))
        }
        "MEAS" => {
            arity(&fields, 4, 5)?;
            Ok(Record::Meas(MeasMsg {
                inv: int(&fields, 1)?,
                p: float(&fields, 2)?,
                q: float(&fields, 3)?,
                seq: if fields.len() == 5 { Some(int(&fields, 4)?) } else { None },
            }))
        }
        "HELLO" => {
            arity(&fields, 2, 2)?;
            Ok(Record::Hello(int(&fields, 1)?))
        }
        "START" => {
            arity(&fields, 2, 2)?;
            Ok(Record::Start(int(&fields, 1)?))
        }
        other => Err(DecodeError::new(0, format!("unknown record tag `{other}`"))),
    }
}

/// Splits a byte stream into records. A malformed record yields an error
/// and framing resumes at the next newline.
#[derive(Debug, Default, Clone)]
pub struct Framer {
    buf: Vec<u8>,
}

impl Framer {
    pub fn push(&mut self, bytes: &[u8]) -> Vec<Result<Record, DecodeError>> {
        self.buf.extend_from_slice(bytes);
        let mut out = Vec::new();
        while let Some(pos) = self.buf.iter().position(|&b| b == b'\n') {
            let line: Vec<u8> = self.buf.drain(..=pos).collect();
            out.push(decode(&line));
        }
        out
    }

    /// Bytes held back waiting for a newline.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }
}

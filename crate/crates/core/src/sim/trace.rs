use std::fmt::Write as _;
use std::io::{self, Write};
use std::str::FromStr;

use serde::Serialize;

use crate::model::InverterId;

use super::SimError;

pub const CSV_HEADER: &str = "t,inv,P,Q,omega,V,Omega,e_cons,dE,dF,E,F";

/// One inverter at one sample time.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Row {
    pub p: f64,
    pub q: f64,
    /// Absolute angular frequency (rad/s).
    pub omega: f64,
    pub v: f64,
    pub omega_cons: f64,
    pub e_cons: f64,
    pub d_e: f64,
    pub d_f: f64,
    /// Unused active reserve `Ē_c − ΔE`.
    pub e_res: f64,
    /// Unused reactive reserve `F̄_c − ΔF`.
    pub f_res: f64,
    pub omega_nom: f64,
    pub m_si: f64,
    pub n_si: f64,
    pub p_set: f64,
}

impl Row {
    #[inline]
    pub fn d_omega(&self) -> f64 {
        self.omega - self.omega_nom
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub ids: Vec<InverterId>,
    pub samples: Vec<Sample>,
}

fn clean_time(t: f64) -> f64 {
    (t * 1e9).round() / 1e9
}

impl Trace {
    pub fn new(ids: Vec<InverterId>) -> Self {
        Self { ids, samples: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    /// One CSV line per inverter per sample.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        let mut line = String::with_capacity(256);
        for s in &self.samples {
            for (id, r) in self.ids.iter().zip(&s.rows) {
                line.clear();
                let _ = writeln!(
                    line,
                    "{},{},{},{},{},{},{},{},{},{},{},{}",
                    clean_time(s.t),
                    id,
                    r.p,
                    r.q,
                    r.omega,
                    r.v,
                    r.omega_cons,
                    r.e_cons,
                    r.d_e,
                    r.d_f,
                    r.e_res,
                    r.f_res
                );
                w.write_all(line.as_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ASCII output")
    }

    /// Per-sample `max − min` of a channel across inverters.
    pub fn spread(&self, ch: Channel) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| {
                let (lo, hi) = s
                    .rows
                    .iter()
                    .map(|r| ch.value(r))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
                if s.rows.is_empty() {
                    0.0
                } else {
                    hi - lo
                }
            })
            .collect()
    }
}

/// Quantity compared across inverters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    /// `m_iΔE_i`.
    FreqEnergy,
    /// `n_iΔF_i`.
    VoltEnergy,
    /// `m_i(P_i − P*_i)`.
    PowerSharing,
}

impl Channel {
    #[inline]
    pub fn value(self, r: &Row) -> f64 {
        match self {
            Self::FreqEnergy => r.m_si * r.d_e,
            Self::VoltEnergy => r.n_si * r.d_f,
            Self::PowerSharing => r.m_si * (r.p - r.p_set),
        }
    }
}

impl FromStr for Channel {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        match s {
            "freq_energy" => Ok(Self::FreqEnergy),
            "volt_energy" => Ok(Self::VoltEnergy),
            "power_sharing" => Ok(Self::PowerSharing),
            other => Err(SimError::UnknownChannel(other.to_string())),
        }
    }
}

/// Differences between consecutive inverters (1−2, 2−3, …) per sample.
pub fn consensus_error(trace: &Trace, channel: &str) -> Result<Vec<(f64, Vec<f64>)>, SimError> {
    let ch: Channel = channel.parse()?;
    if trace.is_empty() {
        return Err(SimError::EmptyTrace);
    }
    Ok(trace
        .samples
        .iter()
        .map(|s| (s.t, s.rows.windows(2).map(|w| ch.value(&w[0]) - ch.value(&w[1])).collect()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowMetrics {
    pub start: f64,
    pub end: f64,
    /// Time after `start` from which every `|ω − ω*|` stays inside the band.
    pub settling_time: Option<f64>,
    /// Largest `|ω − ω*|` at the last sample of the window.
    pub terminal_deviation: f64,
    pub restored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelSummary {
    /// Cross-inverter spread at the last sample.
    pub terminal: f64,
    /// Largest spread from the start of the last disturbance window.
    pub peak: f64,
    pub peak_time: f64,
    /// `terminal / peak` (zero when the peak is zero).
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyCheck {
    pub c_measured: f64,
    pub c_predicted: f64,
    pub omega_bar_measured: f64,
    pub omega_bar_predicted: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub scenario: String,
    pub inverters: Vec<InverterId>,
    pub duration: f64,
    pub dt: f64,
    pub steps: usize,
    pub samples: usize,
    pub completed: bool,
    pub abort: Option<String>,
    pub settle_band: f64,
    pub windows: Vec<WindowMetrics>,
    pub restored: bool,
    pub omega_min: f64,
    pub omega_max: f64,
    pub max_freq_deviation: f64,
    pub reserve_freq: ChannelSummary,
    pub reserve_volt: ChannelSummary,
    pub power_sharing: ChannelSummary,
    /// Terminal `m·ΔP` spread relative to the mean `|m·ΔP|`.
    pub power_sharing_rel: f64,
    pub steady_state: Option<SteadyCheck>,
    pub wall_time_s: f64,
}

pub(super) fn window_metrics(trace: &Trace, starts: &[f64], end: f64, band: f64) -> Vec<WindowMetrics> {
    let mut bounds = vec![0.0];
    bounds.extend_from_slice(starts);
    bounds.push(end);
    let dev = |s: &Sample| s.rows.iter().map(|r| r.d_omega().abs()).fold(0.0f64, f64::max);
    bounds
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let last = w[1] >= end;
            let inside: Vec<&Sample> = trace
                .samples
                .iter()
                .filter(|s| s.t >= a - 1e-12 && (s.t < b - 1e-12 || (last && s.t <= b + 1e-12)))
                .collect();
            let terminal = inside.last().map(|s| dev(s)).unwrap_or(f64::NAN);
            let mut settle = None;
            for s in inside.iter().rev() {
                if dev(s) >= band {
                    break;
                }
                settle = Some(s.t - a);
            }
            WindowMetrics {
                start: a,
                end: b,
                settling_time: settle,
                terminal_deviation: terminal,
                restored: terminal < band,
            }
        })
        .collect()
}

pub(super) fn channel_summary(trace: &Trace, ch: Channel, from: f64) -> ChannelSummary {
    let spread = trace.spread(ch);
    let terminal = spread.last().copied().unwrap_or(0.0);
    let (mut peak, mut peak_time) = (0.0, 0.0);
    for (s, &x) in trace.samples.iter().zip(&spread) {
        if s.t >= from - 1e-12 && x > peak {
            peak = x;
            peak_time = s.t;
        }
    }
    ChannelSummary {
        terminal,
        peak,
        peak_time,
        ratio: if peak > 0.0 { terminal / peak } else { 0.0 },
    }
}

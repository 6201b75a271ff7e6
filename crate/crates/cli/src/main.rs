use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gridform_core::agents::{self, AgentError, Role, Telemetry};
use gridform_core::config::{self, ConfigError};
use gridform_core::sim::{self, Scenario, Trace};

#[derive(Parser)]
#[command(name = "gridform", version, about = "Grid-forming inverter microgrid workbench")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate a scenario; writes trace.csv and metrics.json.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Linearize and certify a scenario; prints the report as JSON.
    Analyze {
        #[command(flatten)]
        common: Common,
    },
    /// Run the scenario as communicating agents.
    Agents {
        #[command(flatten)]
        common: Common,
        /// plant, agent:<id>, or all (every role in this process).
        #[arg(long, default_value = "all")]
        role: String,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted `key=value`; repeatable, applied in order.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    /// Completed, but the outcome is negative.
    Outcome(String),
    Config(ConfigError),
    Usage(String),
    Bind(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::Config(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::Outcome(e.to_string())
    }
}

impl From<sim::SimError> for Failure {
    fn from(e: sim::SimError) -> Self {
        Self::Outcome(e.to_string())
    }
}

impl From<AgentError> for Failure {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Bind { .. } => Self::Bind(e.to_string()),
            e => Self::Outcome(e.to_string()),
        }
    }
}

impl Common {
    fn scenario(&self) -> Result<Scenario, Failure> {
        let mut ov = self.overrides.clone();
        if let Some(seed) = self.seed {
            ov.push(format!("sim.seed={seed}"));
        }
        let cfg = config::load(&self.config, &ov)?;
        Ok(Scenario::from_config(&cfg)?)
    }

    fn out_dir(&self) -> Result<Option<&Path>, Failure> {
        if let Some(dir) = &self.out {
            fs::create_dir_all(dir)?;
        }
        Ok(self.out.as_deref())
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Failure::Outcome(e.to_string()))?;
    writeln!(w)?;
    Ok(())
}

fn write_trace(path: &Path, trace: &Trace) -> Result<(), Failure> {
    let mut w = BufWriter::new(File::create(path)?);
    trace.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_telemetry(path: &Path, rows: &[Telemetry]) -> Result<(), Failure> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "inv,sent,received,stale,foreign,missing_stages,max_age,timeouts,overruns,degraded")?;
    for t in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            t.id, t.sent, t.received, t.stale, t.foreign, t.missing_stages, t.max_age, t.timeouts, t.overruns, t.degraded
        )?;
    }
    w.flush()?;
    Ok(())
}

fn print_json<T: serde::Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn simulate(c: &Common) -> Result<(), Failure> {
    let sc = c.scenario()?;
    let r = sim::run(&sc)?;
    if let Some(dir) = c.out_dir()? {
        write_trace(&dir.join("trace.csv"), &r.trace)?;
        write_json(&dir.join("metrics.json"), &r.metrics)?;
    }
    print_json(&r.metrics);
    match r.metrics.abort {
        Some(why) => Err(Failure::Outcome(format!("integration aborted: {why}"))),
        None => Ok(()),
    }
}

fn analyze(c: &Common) -> Result<(), Failure> {
    let sc = c.scenario()?;
    let report = sim::analyze(&sc)?;
    if let Some(dir) = c.out_dir()? {
        write_json(&dir.join("stability.json"), &report)?;
    }
    print_json(&report);
    if report.certified {
        Ok(())
    } else {
        Err(Failure::Outcome("not certified".into()))
    }
}

fn run_agents(c: &Common, role: &str) -> Result<(), Failure> {
    let role: Role = role.parse().map_err(|e: AgentError| Failure::Usage(e.to_string()))?;
    let sc = c.scenario()?;
    let out = c.out_dir()?;
    match role {
        Role::All => {
            let r = agents::run_distributed(&sc)?;
            if let Some(dir) = out {
                write_trace(&dir.join("trace.csv"), &r.trace)?;
                write_json(&dir.join("metrics.json"), &r.metrics)?;
                write_telemetry(&dir.join("telemetry.csv"), &r.telemetry)?;
            }
            print_json(&r);
            match r.metrics.abort {
                Some(why) => Err(Failure::Outcome(format!("run aborted: {why}"))),
                None => Ok(()),
            }
        }
        Role::Plant => {
            agents::run_plant(&sc)?;
            Ok(())
        }
        Role::Agent(id) => {
            let o = agents::run_agent(&sc, id)?;
            if let Some(dir) = out {
                let trace = agents::merge_samples(&[(id, o.samples.clone())]);
                write_trace(&dir.join(format!("trace_{id}.csv")), &trace)?;
                write_telemetry(&dir.join(format!("telemetry_{id}.csv")), std::slice::from_ref(&o.telemetry))?;
            }
            print_json(&o.telemetry);
            match o.abort {
                Some(why) => Err(Failure::Outcome(format!("agent {id} aborted: {why}"))),
                None => Ok(()),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Simulate { common } => simulate(common),
        Cmd::Analyze { common } => analyze(common),
        Cmd::Agents { common, role } => run_agents(common, role),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Outcome(msg)) => {
            eprintln!("gridform: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            let at = if e.pointer.is_empty() { "/" } else { e.pointer.as_str() };
            eprintln!("gridform: config error at {at}: {}", e.message);
            ExitCode::from(2)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("gridform: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Bind(msg)) => {
            eprintln!("gridform: {msg}");
            ExitCode::from(3)
        }
    }
}

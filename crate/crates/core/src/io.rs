//! File formats: traces, simulation results, event logs, metric reports and
//! scenario configuration.
//!
//! Trace CSV:
//!
//! ```text
//! # sample_period=0.001
//! # seed=7
//! t,p_work,eta
//! 0,30.1,0.5
//! 0.001,30.4,0.51
//! ```
//!
//! Leading `# key=value` lines carry metadata; `sample_period` is used when
//! present and checked against the `t` column. All other CSVs are plain
//! header + rows.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    place_lels, resolve_case, Event, EventKind, EventSchedule, GridCase, GridEvent, ScheduledEvent,
    SimConfig, SimResult,
};
use crate::lel::{from_exchange_str, Archetype};
use crate::metrics::MetricReport;
use crate::thermal_aux::MotorMode;
use crate::trace::Trace;

/// Relative tolerance on the spacing of the `t` column.
pub const TIME_JITTER: f64 = 1e-9;

fn parse_err(origin: &str, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{origin}, row {line}: {msg}"))
}

/// Parses a trace document. `expected` channels must be present; an empty
/// list accepts whatever the header names.
pub fn parse_trace(document: &str, expected: &[&str], origin: &str) -> Result<Trace> {
    let mut metadata = BTreeMap::new();
    let mut body_start = 0;
    let mut header_line = 1;
    for line in document.lines() {
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                metadata.insert(k.trim().to_string(), v.trim().to_string());
            }
        } else if !trimmed.is_empty() {
            break;
        }
        body_start += line.len() + 1;
        header_line += 1;
    }
    let body = document.get(body_start.min(document.len())..).unwrap_or("");
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("t") {
        return Err(parse_err(origin, header_line, "first column must be `t`"));
    }
    let names = &header[1..];
    for want in expected {
        if !names.iter().any(|n| n == want) {
            return Err(Error::MissingField(format!("{origin}: channel `{want}`")));
        }
    }

    let mut times = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for (k, record) in reader.records().enumerate() {
        let line = header_line + 1 + k;
        let record = record?;
        if record.len() != header.len() {
            return Err(parse_err(
                origin,
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let mut values = record.iter().map(|field| {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(origin, line, format!("`{field}` is not a number")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_err(
                    origin,
                    line,
                    format!("non-finite value `{field}`"),
                ))
            }
        });
        let t = values.next().unwrap()?;
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(parse_err(
                    origin,
                    line,
                    format!("time {t} does not increase (previous {prev})"),
                ));
            }
        }
        times.push(t);
        for (col, v) in columns.iter_mut().zip(values) {
            col.push(v?);
        }
    }
    if times.len() < 2 && !metadata.contains_key("sample_period") {
        return Err(Error::Parse(format!(
            "{origin}: need at least two rows to infer the sample period"
        )));
    }

    let period = match metadata.get("sample_period") {
        Some(s) => s
            .parse::<f64>()
            .map_err(|_| Error::Parse(format!("{origin}: bad sample_period `{s}`")))?,
        None => (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64,
    };
    let t0 = times.first().copied().unwrap_or(0.0);
    for (k, &t) in times.iter().enumerate() {
        let expect = t0 + k as f64 * period;
        if (t - expect).abs() > TIME_JITTER * expect.abs().max(period) {
            return Err(parse_err(
                origin,
                header_line + 1 + k,
                format!("time {t} breaks the uniform grid (expected {expect})"),
            ));
        }
    }
    let mut trace = Trace::new(period)?;
    for (name, values) in names.iter().zip(columns) {
        trace.push_channel(name, values)?;
    }
    metadata.remove("sample_period");
    if t0 != 0.0 {
        metadata.insert("t0".into(), t0.to_string());
    }
    trace.metadata = metadata;
    Ok(trace)
}

pub fn read_trace(path: &Path, expected: &[&str]) -> Result<Trace> {
    let text = fs::read_to_string(path)?;
    parse_trace(&text, expected, &path.display().to_string())
}

pub fn trace_to_string(trace: &Trace) -> String {
    let mut out = format!("# sample_period={}\n", trace.sample_period);
    let t0: f64 = trace
        .metadata
        .get("t0")
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.0);
    for (k, v) in &trace.metadata {
        if k != "t0" {
            out.push_str(&format!("# {k}={v}\n"));
        }
    }
    out.push('t');
    for name in trace.channel_names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for k in 0..trace.len() {
        out.push_str(&(t0 + k as f64 * trace.sample_period).to_string());
        for c in &trace.channels {
            out.push(',');
            out.push_str(&c.values[k].to_string());
        }
        out.push('\n');
    }
    out
}

pub fn write_trace(path: &Path, trace: &Trace) -> Result<()> {
    fs::write(path, trace_to_string(trace))?;
    Ok(())
}

/// All series of a simulation as one wide trace: `v_<bus>`, `theta_<bus>`,
/// `omega_<gen bus>`, `delta_<gen bus>`, and per LEL `lel<k>_p`, `_q`,
/// `_kappa`, `_prot` (mode code) and `_motor` (1 running, 0 tripped).
pub fn sim_result_trace(result: &SimResult) -> Result<Trace> {
    let dt = if result.time.len() > 1 {
        result.time[1] - result.time[0]
    } else {
        1.0
    };
    let mut trace = Trace::new(dt)?;
    for (i, id) in result.bus_ids.iter().enumerate() {
        trace.push_channel(&format!("v_{id}"), result.v_mag[i].clone())?;
    }
    for (i, id) in result.bus_ids.iter().enumerate() {
        trace.push_channel(&format!("theta_{id}"), result.v_angle[i].clone())?;
    }
    for (g, bus) in result.gen_buses.iter().enumerate() {
        trace.push_channel(&format!("omega_{bus}"), result.omega[g].clone())?;
        trace.push_channel(&format!("delta_{bus}"), result.delta[g].clone())?;
    }
    for (k, l) in result.lels.iter().enumerate() {
        trace.push_channel(&format!("lel{k}_p"), l.p.clone())?;
        trace.push_channel(&format!("lel{k}_q"), l.q.clone())?;
        trace.push_channel(&format!("lel{k}_kappa"), l.kappa.clone())?;
        trace.push_channel(
            &format!("lel{k}_prot"),
            l.prot_mode.iter().map(|m| f64::from(m.code())).collect(),
        )?;
        trace.push_channel(
            &format!("lel{k}_motor"),
            l.motor_mode
                .iter()
                .map(|m| if *m == MotorMode::Running { 1.0 } else { 0.0 })
                .collect(),
        )?;
    }
    if let Some(c) = result.collapse {
        trace
            .metadata
            .insert("collapse_time".into(), c.time().to_string());
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EventRow {
    time: f64,
    lel_id: Option<usize>,
    event_type: String,
    onset: Option<f64>,
}

pub fn write_events<W: Write>(writer: W, events: &[Event]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(writer);
    w.write_record(["time", "lel_id", "event_type", "onset"])?;
    for e in events {
        w.serialize(EventRow {
            time: e.time,
            lel_id: e.lel_id,
            event_type: e.kind.as_str().to_string(),
            onset: e.onset,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_events<R: Read>(reader: R) -> Result<Vec<Event>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (k, row) in r.deserialize::<EventRow>().enumerate() {
        let row = row?;
        let kind = EventKind::parse(&row.event_type).ok_or_else(|| {
            parse_err(
                "event log",
                k + 2,
                format!("unknown event type `{}`", row.event_type),
            )
        })?;
        out.push(Event {
            time: row.time,
            lel_id: row.lel_id,
            kind,
            onset: row.onset,
        });
    }
    Ok(out)
}

/// Writes `<stem>.csv` (series) and `<stem>_events.csv` next to each other;
/// returns both paths.
pub fn write_sim_result(dir: &Path, stem: &str, result: &SimResult) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let series = dir.join(format!("{stem}.csv"));
    let events = dir.join(format!("{stem}_events.csv"));
    write_trace(&series, &sim_result_trace(result)?)?;
    write_events(fs::File::create(&events)?, &result.events)?;
    Ok((series, events))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub channel: String,
    pub dtw: f64,
    pub max_xcorr: f64,
    pub cosine: f64,
}

impl MetricRow {
    pub fn new(channel: &str, report: MetricReport) -> Self {
        Self {
            channel: channel.to_string(),
            dtw: report.dtw,
            max_xcorr: report.max_xcorr,
            cosine: report.cosine,
        }
    }
}

/// Serializes any row type as a headed CSV.
pub fn write_rows<W: Write, S: Serialize>(writer: W, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read, S: for<'de> Deserialize<'de>>(reader: R) -> Result<Vec<S>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Grid scenario file.
///
/// ```toml
/// case = "ieee39"          # bundled fixture name or path to a .case file
///
/// [solver]
/// dt = 0.005
/// horizon = 20.0
/// seed = 3
///
/// [lels]                   # optional: replaces the case's own LEL section
/// k = 10
/// placement_seed = 3
/// archetypes = ["datacenter", "crypto_mining", "electrolyzer"]
/// param_files = []          # exchange files, assigned round-robin
///
/// [[events]]
/// time = 5.0
/// kind = "fault"            # fault | clear_fault | branch_trip
/// bus = 16
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub case: String,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub lels: Option<LelSection>,
    #[serde(default)]
    pub events: Vec<EventEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub v_guard: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            dt: d.dt,
            horizon: d.horizon,
            seed: d.seed,
            v_guard: d.v_guard,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LelSection {
    pub k: usize,
    #[serde(default)]
    pub placement_seed: u64,
    #[serde(default = "all_archetypes")]
    pub archetypes: Vec<Archetype>,
    #[serde(default)]
    pub param_files: Vec<PathBuf>,
}

fn all_archetypes() -> Vec<Archetype> {
    Archetype::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventEntry {
    pub time: f64,
    pub kind: String,
    #[serde(default)]
    pub bus: Option<usize>,
    #[serde(default)]
    pub from: Option<usize>,
    #[serde(default)]
    pub to: Option<usize>,
    /// Fault shunt conductance and susceptance, pu; default `-j1e4`.
    #[serde(default)]
    pub g: Option<f64>,
    #[serde(default)]
    pub b: Option<f64>,
}

impl EventEntry {
    fn to_event(&self) -> Result<ScheduledEvent> {
        let need = |v: Option<usize>, field: &str| {
            v.ok_or_else(|| {
                Error::MissingField(format!("events.{field} (for a `{}` event)", self.kind))
            })
        };
        let event = match self.kind.as_str() {
            "fault" => GridEvent::Fault {
                bus: need(self.bus, "bus")?,
                admittance: Complex64::new(self.g.unwrap_or(0.0), self.b.unwrap_or(-1e4)),
            },
            "clear_fault" => GridEvent::ClearFault {
                bus: need(self.bus, "bus")?,
            },
            "branch_trip" => GridEvent::BranchTrip {
                from: need(self.from, "from")?,
                to: need(self.to, "to")?,
            },
            other => return Err(Error::Parse(format!("unknown event kind `{other}`"))),
        };
        Ok(ScheduledEvent {
            time: self.time,
            event,
        })
    }
}

/// A scenario resolved into runnable pieces.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub case: GridCase,
    pub events: EventSchedule,
    pub cfg: SimConfig,
}

impl ScenarioConfig {
    pub fn parse(document: &str) -> Result<Self> {
        toml::from_str(document).map_err(|e| Error::Parse(format!("scenario: {}", e.message())))
    }

    /// Loads the case, places LELs and builds the schedule. Relative paths
    /// are taken from `base_dir`.
    pub fn resolve(&self, base_dir: &Path) -> Result<Scenario> {
        let case_ref = if Path::new(&self.case).is_relative() && base_dir.join(&self.case).is_file()
        {
            base_dir.join(&self.case).display().to_string()
        } else {
            self.case.clone()
        };
        let mut case = resolve_case(&case_ref)?;
        if let Some(lels) = &self.lels {
            case = place_lels(&case, lels.k, lels.placement_seed, &lels.archetypes)?;
            if !lels.param_files.is_empty() {
                let params = lels
                    .param_files
                    .iter()
                    .map(|p| {
                        let path = base_dir.join(p);
                        let text = fs::read_to_string(&path).map_err(|e| {
                            Error::Validation(format!("parameter file {}: {e}", path.display()))
                        })?;
                        from_exchange_str(&text)
                    })
                    .collect::<Result<Vec<_>>>()?;
                for (i, l) in case.lels.iter_mut().enumerate() {
                    l.params = params[i % params.len()];
                }
            }
        }
        let events = EventSchedule::new(
            self.events
                .iter()
                .map(EventEntry::to_event)
                .collect::<Result<_>>()?,
        );
        let cfg = SimConfig {
            dt: self.solver.dt,
            horizon: self.solver.horizon,
            seed: self.solver.seed,
            v_guard: self.solver.v_guard,
            ..SimConfig::default()
        };
        cfg.validate()?;
        events.validate(cfg.horizon)?;
        Ok(Scenario { case, events, cfg })
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    ScenarioConfig::parse(&text)?.resolve(base)
}

//! End-to-end driver: scenario generation, fusion, and scoring, plus the
//! dotted-key config override mechanism used by the command line.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::association::AssociationConfig;
use crate::events::{self, Event, TimedEvent, TruthRecord};
use crate::filter::FilterConfig;
use crate::fusion::{EngineConfig, FusionConfig, FusionEngine};
use crate::geo::ReferenceOrigin;
use crate::metrics::{compute_report, MetricsConfig, MetricsReport};
use crate::model::TrackletMessage;
use crate::simulator::{run_scenario, ScenarioConfig, ScenarioOutput};
use crate::transport::{self, FileSource, MessageSource};
use crate::Error;

pub const TRUTH_FILE: &str = "truth.jsonl";
pub const MESSAGES_FILE: &str = "messages.jsonl";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const METRICS_FILE: &str = "metrics.json";

/// Scenario plus every engine and scoring tunable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub association: AssociationConfig,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

impl RunConfig {
    pub fn new(scenario: ScenarioConfig) -> Self {
        RunConfig {
            scenario,
            filter: FilterConfig::default(),
            association: AssociationConfig::default(),
            fusion: FusionConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }

    pub fn engine(&self) -> EngineConfig {
        EngineConfig {
            filter: self.filter,
            association: self.association,
            fusion: self.fusion,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.scenario
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.engine().validate().map_err(Error::Config)?;
        self.metrics.validate().map_err(Error::Config)
    }

    /// Parses either a full run config or a bare scenario.
    pub fn from_json(value: Value) -> Result<Self, Error> {
        let full = value.get("scenario").is_some();
        let cfg = if full {
            serde_json::from_value(value)
        } else {
            serde_json::from_value::<ScenarioConfig>(value).map(RunConfig::new)
        }
        .map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = Self::from_json(value)?;
        let cfg = base.with_overrides(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, Error> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut value = serde_json::to_value(self).expect("config serializes");
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Applies one `dotted.key=value` override to a JSON document. The value is
/// read as JSON when it parses, otherwise as a string. Numeric segments index
/// into arrays.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<(), Error> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let segments: Vec<&str> = key.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let (last, parents) = segments.split_last().expect("split yields one segment");
    let mut node = root;
    for seg in parents {
        node = match node {
            Value::Object(map) => map.get_mut(*seg),
            Value::Array(items) => seg.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| Error::Config(format!("unknown override key `{key}`")))?;
    }
    match node {
        Value::Object(map) => {
            map.insert(last.to_string(), value);
        }
        Value::Array(items) => {
            let slot = last
                .parse::<usize>()
                .ok()
                .and_then(|i| items.get_mut(i))
                .ok_or_else(|| Error::Config(format!("unknown override key `{key}`")))?;
            *slot = value;
        }
        _ => return Err(Error::Config(format!("unknown override key `{key}`"))),
    }
    Ok(())
}

/// Feeds a message stream through `engine`, advancing after every message,
/// flushes at end of stream, and appends the final counters.
pub fn fuse_stream<S: MessageSource + ?Sized>(
    engine: &mut FusionEngine,
    source: &mut S,
    sent: Option<u64>,
) -> Result<Vec<TimedEvent>, Error> {
    let mut events = Vec::new();
    while let Some(msg) = source.next_message() {
        events.extend(engine.process(&msg?)?);
    }
    events.extend(engine.finish()?);
    let stats = engine.stats();
    events.push(TimedEvent {
        at: engine.clock().unwrap_or(0.0),
        event: Event::Stats {
            sent,
            delivered: stats.messages,
            accepted: stats.accepted,
            late: stats.late_dropped,
            degenerate: stats.degeneracy_events,
        },
    });
    Ok(events)
}

pub fn fuse_messages<'a, I>(
    engine: &mut FusionEngine,
    messages: I,
    sent: Option<u64>,
) -> Result<Vec<TimedEvent>, Error>
where
    I: IntoIterator<Item = &'a TrackletMessage>,
{
    struct Iter<I>(I);
    impl<'a, I: Iterator<Item = &'a TrackletMessage>> MessageSource for Iter<I> {
        fn next_message(&mut self) -> Option<Result<TrackletMessage, transport::TransportError>> {
            self.0.next().cloned().map(Ok)
        }
    }
    fuse_stream(engine, &mut Iter(messages.into_iter()), sent)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scenario: ScenarioOutput,
    pub events: Vec<TimedEvent>,
    pub report: MetricsReport,
}

impl RunOutput {
    pub fn plain_events(&self) -> Vec<Event> {
        self.events.iter().map(|e| e.event.clone()).collect()
    }
}

/// Simulate, fuse in delivery order, and score, all in memory.
pub fn run_e2e(cfg: &RunConfig) -> Result<RunOutput, Error> {
    cfg.validate()?;
    let started = Instant::now();
    let scenario = run_scenario(&cfg.scenario).map_err(|e| Error::Config(e.to_string()))?;
    let mut engine = FusionEngine::new(cfg.engine(), cfg.scenario.origin, cfg.scenario.seed)?;
    let events = fuse_messages(
        &mut engine,
        scenario.tracklet_messages(),
        Some(scenario.counters.sent),
    )?;
    let plain: Vec<Event> = events.iter().map(|e| e.event.clone()).collect();
    let mut report = compute_report(&scenario.truth, &plain, &cfg.metrics);
    report.runtime_seconds = Some(started.elapsed().as_secs_f64());
    Ok(RunOutput {
        scenario,
        events,
        report,
    })
}

fn create(dir: &Path, name: &str) -> Result<(BufWriter<File>, PathBuf), Error> {
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    Ok((BufWriter::new(f), path))
}

pub fn write_scenario(dir: &Path, out: &ScenarioOutput) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (w, path) = create(dir, TRUTH_FILE)?;
    events::write_lines(w, &out.truth).map_err(|e| Error::io(&path, e))?;
    let (w, path) = create(dir, MESSAGES_FILE)?;
    transport::write_messages(w, out.tracklet_messages()).map_err(|e| Error::io(&path, e))
}

pub fn write_events(dir: &Path, events: &[TimedEvent]) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (w, path) = create(dir, EVENTS_FILE)?;
    events::write_lines(w, events.iter().map(|e| &e.event)).map_err(|e| Error::io(&path, e))
}

/// Single-line metrics file without the wall-clock runtime.
pub fn metrics_line(report: &MetricsReport) -> String {
    let mut clean = report.clone();
    clean.runtime_seconds = None;
    events::to_line(&clean)
}

pub fn write_metrics(path: &Path, report: &MetricsReport) -> Result<(), Error> {
    fs::write(path, metrics_line(report)).map_err(|e| Error::io(path, e))
}

pub fn write_run(dir: &Path, out: &RunOutput) -> Result<(), Error> {
    write_scenario(dir, &out.scenario)?;
    write_events(dir, &out.events)?;
    write_metrics(&dir.join(METRICS_FILE), &out.report)
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthRecord>, Error> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    events::read_lines(BufReader::new(f)).map_err(|e| Error::read(path, e))
}

pub fn read_events(path: &Path) -> Result<Vec<Event>, Error> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    events::read_lines(BufReader::new(f)).map_err(|e| Error::read(path, e))
}

/// Recomputes a metrics report from written truth and event files.
pub fn metrics_from_files(
    truth: &Path,
    events: &Path,
    cfg: &MetricsConfig,
) -> Result<MetricsReport, Error> {
    Ok(compute_report(
        &read_truth(truth)?,
        &read_events(events)?,
        cfg,
    ))
}

/// Fuses a recorded message file. Without an explicit origin the first point
/// of the stream anchors the tangent plane.
pub fn fuse_file<R: std::io::BufRead>(
    reader: R,
    cfg: EngineConfig,
    origin: Option<ReferenceOrigin>,
    seed: u64,
) -> Result<Vec<TimedEvent>, Error> {
    let messages = transport::drain(&mut FileSource::new(reader))?;
    let origin = match origin {
        Some(o) => o,
        None => match messages.first() {
            Some(m) => ReferenceOrigin::new(m.tracklet.points[0].pos)
                .map_err(|e| Error::Config(e.to_string()))?,
            None => return Ok(Vec::new()),
        },
    };
    let mut engine = FusionEngine::new(cfg, origin, seed)?;
    fuse_messages(&mut engine, &messages, None)
}

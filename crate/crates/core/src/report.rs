//! Report files written after a run.
//!
//! | file            | contents                                                        |
//! |-----------------|-----------------------------------------------------------------|
//! | `series.csv`    | `tick,source,key,value,unit`, every monitor record              |
//! | `services.csv`  | `tick,service,state,out_port,vt,channel`, one row per service per tick |
//! | `resources.csv` | `tick,free_subcarriers,free_modulators,virtual_transceivers,channels,occupied_slots,flow_rules` |
//! | `decisions.log` | one JSON object per manager decision                            |
//! | `messages.hex`  | `tick KIND hex`, every control frame sent                       |
//! | `events.log`    | `tick text`, human-readable run narrative                       |
//! | `summary.json`  | counts and the final state of services and channels             |

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::engine::RunReport;
use crate::monitor::MonitorError;
use crate::scenario::thz_string;
use crate::units::Tick;

pub const REPORT_FILES: &[&str] =
    &["series.csv", "services.csv", "resources.csv", "decisions.log", "messages.hex", "events.log", "summary.json"];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    pub duration: Tick,
    pub records: usize,
    pub messages: usize,
    pub decisions: BTreeMap<String, usize>,
    pub services: Vec<ServiceSummary>,
    pub channels: Vec<ChannelSummary>,
    pub free_subcarriers: usize,
    pub free_modulators: usize,
}

#[derive(Debug, Serialize)]
pub struct ServiceSummary {
    pub id: String,
    pub state: &'static str,
    pub rate_gbps: f64,
    pub out_port: Option<u16>,
    pub vt: Option<u32>,
    pub channel: Option<u32>,
}

#[derive(Debug, Serialize)]
pub struct ChannelSummary {
    pub id: u32,
    pub path: Vec<String>,
    pub center_thz: String,
    pub slots: Vec<i64>,
    pub osnr_db: f64,
}

pub fn summarize(r: &RunReport) -> Summary {
    let mut decisions = BTreeMap::new();
    for d in &r.decisions {
        let kind = serde_json::to_value(d.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        *decisions.entry(format!("{kind}.{}", d.outcome)).or_insert(0) += 1;
    }
    let (sc, m) = r.plant.vbvt.list_free_resources();
    Summary {
        scenario: r.scenario.clone(),
        seed: r.seed,
        duration: r.duration,
        records: r.db.len(),
        messages: r.messages.len(),
        decisions,
        services: r
            .manager
            .services()
            .values()
            .map(|s| ServiceSummary {
                id: s.request.id.0.clone(),
                state: s.state.as_str(),
                rate_gbps: s.request.rate.gbps(),
                out_port: s.out_port,
                vt: s.vt.map(|v| v.0),
                channel: s.channel.map(|c| c.0),
            })
            .collect(),
        channels: r
            .plant
            .optical
            .channels()
            .map(|c| ChannelSummary {
                id: c.id.0,
                path: c.path.nodes.iter().map(|n| n.0.clone()).collect(),
                center_thz: thz_string(c.center),
                slots: c.slots.iter().map(|s| s.0).collect(),
                osnr_db: c.current_osnr_db,
            })
            .collect(),
        free_subcarriers: sc.len(),
        free_modulators: m.len(),
    }
}

/// Renders every report file in memory, keyed by file name.
pub fn render(r: &RunReport) -> Result<BTreeMap<&'static str, Vec<u8>>, ReportError> {
    let mut out = BTreeMap::new();

    let mut series = Vec::new();
    r.db.export_csv(&mut series)?;
    out.insert("series.csv", series);

    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &r.services {
        w.serialize(row)?;
    }
    if r.services.is_empty() {
        w.write_record(["tick", "service", "state", "out_port", "vt", "channel"])?;
    }
    out.insert("services.csv", w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?);

    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &r.resources {
        w.serialize(row)?;
    }
    out.insert("resources.csv", w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?);

    let mut log = Vec::new();
    for d in &r.decisions {
        serde_json::to_writer(&mut log, d)?;
        log.push(b'\n');
    }
    out.insert("decisions.log", log);

    let mut hex = String::new();
    for m in &r.messages {
        hex.push_str(&m.to_string());
        hex.push('\n');
    }
    out.insert("messages.hex", hex.into_bytes());

    let mut ev = String::new();
    for (t, e) in &r.events {
        ev.push_str(&format!("{t} {e}\n"));
    }
    out.insert("events.log", ev.into_bytes());

    let mut summary = serde_json::to_vec_pretty(&summarize(r))?;
    summary.push(b'\n');
    out.insert("summary.json", summary);
    Ok(out)
}

/// Writes the report files into `dir`, creating it if needed.
pub fn emit_report(r: &RunReport, dir: &Path) -> Result<(), ReportError> {
    let io_err = |p: &Path| {
        let path = p.display().to_string();
        move |source| ReportError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, bytes) in render(r)? {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).map_err(io_err(&path))?;
        f.write_all(&bytes).map_err(io_err(&path))?;
    }
    Ok(())
}

//! Time-series store for optical and Ethernet metrics, and the poller that fills it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ethernet::{EthSwitch, NicSample};
use crate::optical::OpticalNetwork;
use crate::units::{Rate, Tick};

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("record ({tick}, {origin}, {key}) already stored")]
    Duplicate { tick: Tick, origin: Source, key: String },
    #[error("export failed: {0}")]
    Export(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    WaveAnalyzer,
    Nic,
    SwitchPort,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::WaveAnalyzer => "wave_analyzer",
            Source::Nic => "nic",
            Source::SwitchPort => "switch_port",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "dB")]
    Db,
    #[serde(rename = "ratio")]
    Ratio,
    #[serde(rename = "Mb/s")]
    Mbps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub tick: Tick,
    pub source: Source,
    pub key: String,
    pub value: f64,
    pub unit: Unit,
}

pub fn channel_key(id: crate::optical::ChannelId) -> String {
    id.to_string()
}

pub fn port_rx_key(port: u16) -> String {
    format!("port{port}.rx")
}

pub fn port_tx_key(port: u16) -> String {
    format!("port{port}.tx")
}

/// Append-only store indexed by (source, key) then tick.
#[derive(Debug, Clone, Default)]
pub struct MonitorDb {
    records: Vec<MetricRecord>,
    index: BTreeMap<(Source, String), BTreeMap<Tick, usize>>,
}

impl MonitorDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, record: MetricRecord) -> Result<(), MonitorError> {
        let series = self.index.entry((record.source, record.key.clone())).or_default();
        if series.contains_key(&record.tick) {
            return Err(MonitorError::Duplicate { tick: record.tick, origin: record.source, key: record.key });
        }
        series.insert(record.tick, self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn latest(&self, source: Source, key: &str) -> Option<&MetricRecord> {
        self.index.get(&(source, key.to_string())).and_then(|s| s.values().next_back()).map(|&i| &self.records[i])
    }

    /// Records with `t0 <= tick <= t1`, ascending by tick.
    pub fn range(&self, source: Source, key: &str, t0: Tick, t1: Tick) -> Vec<&MetricRecord> {
        if t0 > t1 {
            return Vec::new();
        }
        self.index
            .get(&(source, key.to_string()))
            .map(|s| s.range(t0..=t1).map(|(_, &i)| &self.records[i]).collect())
            .unwrap_or_default()
    }

    pub fn records(&self) -> &[MetricRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn keys(&self, source: Source) -> impl Iterator<Item = &str> {
        self.index.keys().filter(move |(s, _)| *s == source).map(|(_, k)| k.as_str())
    }

    /// Writes `tick,source,key,value,unit`, one record per line, in insertion order.
    pub fn export_csv<W: Write>(&self, w: W) -> Result<(), MonitorError> {
        let mut wr = csv::Writer::from_writer(w);
        if self.records.is_empty() {
            wr.write_record(["tick", "source", "key", "value", "unit"])?;
        }
        for r in &self.records {
            wr.serialize(r)?;
        }
        wr.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// What the poller reads from. Port sets decide which switch counters are recorded.
pub struct Devices<'a> {
    pub optical: &'a OpticalNetwork,
    pub nics: &'a [NicSample],
    pub switch: &'a EthSwitch,
    pub ingress_ports: &'a BTreeSet<u16>,
    pub egress_ports: &'a BTreeSet<u16>,
}

/// Writes one record per active channel, link, NIC-observed MAC and monitored
/// port when `tick` falls on the polling interval. Returns the number written.
pub fn poll_tick(db: &mut MonitorDb, devices: &Devices<'_>, tick: Tick, interval: Tick) -> Result<usize, MonitorError> {
    if interval == 0 || !tick.is_multiple_of(interval) {
        return Ok(0);
    }
    let before = db.len();
    let snap = devices.optical.wave_analyzer_scan();
    for c in &snap.channels {
        db.insert(MetricRecord {
            tick,
            source: Source::WaveAnalyzer,
            key: channel_key(c.channel),
            value: c.osnr_db,
            unit: Unit::Db,
        })?;
    }
    for u in &snap.links {
        let name = devices.optical.link(u.link).map(|l| l.name.clone()).unwrap_or_else(|| u.link.0.to_string());
        db.insert(MetricRecord {
            tick,
            source: Source::WaveAnalyzer,
            key: name,
            value: u.utilisation,
            unit: Unit::Ratio,
        })?;
    }
    let mut per_mac: BTreeMap<String, Rate> = BTreeMap::new();
    for s in devices.nics {
        for (mac, r) in &s.rates {
            *per_mac.entry(mac.to_string()).or_default() += *r;
        }
    }
    for (key, r) in per_mac {
        db.insert(MetricRecord { tick, source: Source::Nic, key, value: r.mbps() as f64, unit: Unit::Mbps })?;
    }
    for &p in devices.ingress_ports {
        db.insert(MetricRecord {
            tick,
            source: Source::SwitchPort,
            key: port_rx_key(p),
            value: devices.switch.ingress(p).mbps() as f64,
            unit: Unit::Mbps,
        })?;
    }
    for &p in devices.egress_ports {
        db.insert(MetricRecord {
            tick,
            source: Source::SwitchPort,
            key: port_tx_key(p),
            value: devices.switch.egress(p).mbps() as f64,
            unit: Unit::Mbps,
        })?;
    }
    Ok(db.len() - before)
}

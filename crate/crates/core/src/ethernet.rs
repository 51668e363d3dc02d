//! Emulated Ethernet switch, DPI NIC sampling and the schedule-driven traffic
//! generator. Traffic is fluid: each flow offers a rate per tick.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::units::{Rate, Tick};

pub const SFP_PORTS: std::ops::RangeInclusive<u16> = 1..=48;
pub const QSFP_PORTS: std::ops::RangeInclusive<u16> = 49..=52;
pub const SFP_CAPACITY: Rate = Rate::from_mbps(10_000);
pub const QSFP_CAPACITY: Rate = Rate::from_mbps(40_000);
pub const NIC_CAPACITY: Rate = Rate::from_mbps(10_000);

#[derive(Debug, Error, PartialEq)]
pub enum EthernetError {
    #[error("switch port {0} does not exist (1-52)")]
    BadPort(u16),
    #[error("bad MAC address '{0}'")]
    BadMac(String),
    #[error("no flow rule {0}")]
    UnknownRule(u64),
    #[error("no flow rule matching {0}")]
    UnknownRuleKey(String),
    #[error("flow {flow}: {reason}")]
    BadFlow { flow: String, reason: String },
    #[error("NIC on {server} offers {rate} at tick {tick}, above 10 Gb/s")]
    NicOverload { server: String, tick: Tick, rate: Rate },
    #[error("trace line {line}: {reason}")]
    Trace { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MacAddr(pub [u8; 6]);

impl FromStr for MacAddr {
    type Err = EthernetError;

    /// Accepts one or two hex digits per group, so `11:6:89:CC:E:2A` parses.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EthernetError::BadMac(s.to_string());
        let mut out = [0u8; 6];
        let mut groups = s.trim().split([':', '-']);
        for b in out.iter_mut() {
            let g = groups.next().ok_or_else(bad)?;
            if g.is_empty() || g.len() > 2 {
                return Err(bad());
            }
            *b = u8::from_str_radix(g, 16).map_err(|_| bad())?;
        }
        if groups.next().is_some() {
            return Err(bad());
        }
        Ok(MacAddr(out))
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(f, "{:02X}:{:02X}:{:02X}:{:02X}:{:02X}:{:02X}", b[0], b[1], b[2], b[3], b[4], b[5])
    }
}

impl Serialize for MacAddr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PortClass {
    SfpPlus,
    QsfpPlus,
}

impl PortClass {
    pub fn capacity(self) -> Rate {
        match self {
            PortClass::SfpPlus => SFP_CAPACITY,
            PortClass::QsfpPlus => QSFP_CAPACITY,
        }
    }
}

pub fn port_class(port: u16) -> Option<PortClass> {
    if SFP_PORTS.contains(&port) {
        Some(PortClass::SfpPlus)
    } else if QSFP_PORTS.contains(&port) {
        Some(PortClass::QsfpPlus)
    } else {
        None
    }
}

pub fn port_capacity(port: u16) -> Option<Rate> {
    port_class(port).map(PortClass::capacity)
}

fn check_port(port: u16) -> Result<u16, EthernetError> {
    port_class(port).map(|_| port).ok_or(EthernetError::BadPort(port))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowMatch {
    pub in_port: Option<u16>,
    pub dst_mac: Option<MacAddr>,
}

impl FlowMatch {
    pub fn matches(&self, in_port: u16, mac: MacAddr) -> bool {
        self.in_port.is_none_or(|p| p == in_port) && self.dst_mac.is_none_or(|m| m == mac)
    }
}

impl fmt::Display for FlowMatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.in_port {
            Some(p) => write!(f, "in={p}")?,
            None => f.write_str("in=*")?,
        }
        match self.dst_mac {
            Some(m) => write!(f, ",dst={m}"),
            None => f.write_str(",dst=*"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowRule {
    #[serde(rename = "match")]
    pub matcher: FlowMatch,
    pub out_port: u16,
    pub priority: u16,
}

impl FlowRule {
    pub fn new(in_port: Option<u16>, dst_mac: Option<MacAddr>, out_port: u16, priority: u16) -> Self {
        FlowRule { matcher: FlowMatch { in_port, dst_mac }, out_port, priority }
    }
}

impl fmt::Display for FlowRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{} prio {}] -> {}", self.matcher, self.priority, self.out_port)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RuleId(pub u64);

/// A flow's offered rate at one tick.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct OfferedFlow {
    pub in_port: u16,
    pub dst_mac: MacAddr,
    pub server: String,
    pub rate: Rate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum SwitchEvent {
    Unmatched { in_port: u16, dst_mac: MacAddr, rate: Rate },
    Overflow { port: u16, offered: Rate, capacity: Rate },
}

impl fmt::Display for SwitchEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SwitchEvent::Unmatched { in_port, dst_mac, rate } => {
                write!(f, "dropped {rate} from port {in_port} to {dst_mac}: no matching rule")
            }
            SwitchEvent::Overflow { port, offered, capacity } => {
                write!(f, "port {port} offered {offered} above capacity {capacity}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EthSwitch {
    rules: Vec<(RuleId, FlowRule)>,
    next_rule: u64,
    ingress: BTreeMap<u16, Rate>,
    egress: BTreeMap<u16, Rate>,
    dropped: Rate,
}

impl EthSwitch {
    pub fn new() -> Self {
        Self::default()
    }

    /// Installs `rule`. A rule with the same match and priority is replaced
    /// in place and keeps its id and position.
    pub fn install_flow_rule(&mut self, rule: FlowRule) -> Result<RuleId, EthernetError> {
        if let Some(p) = rule.matcher.in_port {
            check_port(p)?;
        }
        check_port(rule.out_port)?;
        if let Some((id, existing)) =
            self.rules.iter_mut().find(|(_, r)| r.matcher == rule.matcher && r.priority == rule.priority)
        {
            *existing = rule;
            return Ok(*id);
        }
        self.next_rule += 1;
        let id = RuleId(self.next_rule);
        self.rules.push((id, rule));
        Ok(id)
    }

    pub fn remove_flow_rule(&mut self, id: RuleId) -> Result<FlowRule, EthernetError> {
        let pos = self.rules.iter().position(|(i, _)| *i == id).ok_or(EthernetError::UnknownRule(id.0))?;
        Ok(self.rules.remove(pos).1)
    }

    pub fn remove_by_key(&mut self, matcher: FlowMatch, priority: u16) -> Result<FlowRule, EthernetError> {
        let pos = self
            .rules
            .iter()
            .position(|(_, r)| r.matcher == matcher && r.priority == priority)
            .ok_or_else(|| EthernetError::UnknownRuleKey(format!("{matcher} prio {priority}")))?;
        Ok(self.rules.remove(pos).1)
    }

    pub fn rules(&self) -> impl Iterator<Item = &FlowRule> {
        self.rules.iter().map(|(_, r)| r)
    }

    pub fn rule(&self, id: RuleId) -> Option<&FlowRule> {
        self.rules.iter().find(|(i, _)| *i == id).map(|(_, r)| r)
    }

    /// Sorted rule set, for comparing device states.
    pub fn sorted_rules(&self) -> Vec<FlowRule> {
        let mut v: Vec<FlowRule> = self.rules().copied().collect();
        v.sort();
        v
    }

    /// Highest priority wins; among equals the earliest installed.
    pub fn lookup(&self, in_port: u16, mac: MacAddr) -> Option<&FlowRule> {
        let mut best: Option<&FlowRule> = None;
        for (_, r) in &self.rules {
            if r.matcher.matches(in_port, mac) && best.is_none_or(|b| r.priority > b.priority) {
                best = Some(r);
            }
        }
        best
    }

    /// Forwards one tick of offered traffic and replaces the port counters.
    pub fn forward(&mut self, offered: &[OfferedFlow]) -> Vec<SwitchEvent> {
        let mut events = Vec::new();
        let mut ingress: BTreeMap<u16, Rate> = BTreeMap::new();
        let mut wanted: BTreeMap<u16, Rate> = BTreeMap::new();
        let mut dropped = Rate::ZERO;
        for f in offered {
            *ingress.entry(f.in_port).or_default() += f.rate;
            match self.lookup(f.in_port, f.dst_mac) {
                Some(r) => *wanted.entry(r.out_port).or_default() += f.rate,
                None => {
                    dropped += f.rate;
                    events.push(SwitchEvent::Unmatched { in_port: f.in_port, dst_mac: f.dst_mac, rate: f.rate });
                }
            }
        }
        let mut egress = BTreeMap::new();
        for (port, rate) in wanted {
            let cap = port_capacity(port).unwrap_or(Rate::ZERO);
            if rate > cap {
                events.push(SwitchEvent::Overflow { port, offered: rate, capacity: cap });
                dropped += rate - cap;
                egress.insert(port, cap);
            } else {
                egress.insert(port, rate);
            }
        }
        self.ingress = ingress;
        self.egress = egress;
        self.dropped = dropped;
        events
    }

    pub fn ingress(&self, port: u16) -> Rate {
        self.ingress.get(&port).copied().unwrap_or_default()
    }

    pub fn egress(&self, port: u16) -> Rate {
        self.egress.get(&port).copied().unwrap_or_default()
    }

    pub fn dropped(&self) -> Rate {
        self.dropped
    }

    pub fn ingress_counters(&self) -> &BTreeMap<u16, Rate> {
        &self.ingress
    }

    pub fn egress_counters(&self) -> &BTreeMap<u16, Rate> {
        &self.egress
    }

    /// Flow conservation and per-port capacity for the last forwarded tick.
    pub fn check_counters(&self) -> Result<(), String> {
        let inn: Rate = self.ingress.values().sum();
        let out: Rate = self.egress.values().sum();
        if inn != out + self.dropped {
            return Err(format!("ingress {inn} != egress {out} + dropped {}", self.dropped));
        }
        for (&port, &rate) in &self.egress {
            if Some(rate) > port_capacity(port) {
                return Err(format!("port {port} egress {rate} above capacity"));
            }
        }
        Ok(())
    }
}

/// Yes iff the rates fit on one port; the sum is returned either way.
pub fn aggregate_feasible(rates: &[Rate], port_capacity: Rate) -> (bool, Rate) {
    let sum: Rate = rates.iter().sum();
    (sum <= port_capacity, sum)
}

/// Constant `rate` over ticks `start..=end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateSegment {
    pub start: Tick,
    pub end: Tick,
    pub rate: Rate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacFlow {
    pub server: String,
    pub in_port: u16,
    pub dst_mac: MacAddr,
    pub segments: Vec<RateSegment>,
}

impl MacFlow {
    pub fn rate_at(&self, tick: Tick) -> Rate {
        self.segments.iter().find(|s| s.start <= tick && tick <= s.end).map(|s| s.rate).unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), EthernetError> {
        let bad =
            |reason: String| EthernetError::BadFlow { flow: format!("{}->{}", self.server, self.dst_mac), reason };
        check_port(self.in_port)?;
        let mut segs = self.segments.clone();
        segs.sort_by_key(|s| s.start);
        for s in &segs {
            if s.start > s.end {
                return Err(bad(format!("segment {}..{} ends before it starts", s.start, s.end)));
            }
            if s.rate > NIC_CAPACITY {
                return Err(bad(format!("rate {} above NIC capacity", s.rate)));
            }
        }
        if let Some(w) = segs.windows(2).find(|w| w[1].start <= w[0].end) {
            return Err(bad(format!("segments starting at {} and {} overlap", w[0].start, w[1].start)));
        }
        Ok(())
    }
}

/// A set of MACs on one server sharing `total` over `start..=end`; each tick the
/// total is split into random positive whole-Mb/s shares.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedBlock {
    pub server: String,
    pub in_port: u16,
    pub macs: Vec<MacAddr>,
    pub start: Tick,
    pub end: Tick,
    pub total: Rate,
}

impl GeneratedBlock {
    pub fn validate(&self) -> Result<(), EthernetError> {
        let bad =
            |reason: &str| EthernetError::BadFlow { flow: format!("{} block", self.server), reason: reason.into() };
        check_port(self.in_port)?;
        if self.macs.is_empty() {
            return Err(bad("no MAC addresses"));
        }
        if self.start > self.end {
            return Err(bad("ends before it starts"));
        }
        if self.total > NIC_CAPACITY {
            return Err(bad("total above NIC capacity"));
        }
        if self.total.mbps() < self.macs.len() as u64 {
            return Err(bad("total too small to give every MAC a positive share"));
        }
        Ok(())
    }

    /// Shares at `tick`, one per MAC, summing exactly to `total`.
    pub fn split(&self, seed: u64, block: usize, tick: Tick) -> Vec<Rate> {
        let n = self.macs.len();
        let total = self.total.mbps();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, block as u64, tick));
        let mut cuts: Vec<u64> =
            sample(&mut rng, (total - 1) as usize, n - 1).into_iter().map(|c| c as u64 + 1).collect();
        cuts.sort_unstable();
        let mut prev = 0;
        let mut out = Vec::with_capacity(n);
        for c in cuts.into_iter().chain([total]) {
            out.push(Rate::from_mbps(c - prev));
            prev = c;
        }
        out
    }
}

fn mix(seed: u64, block: u64, tick: u64) -> u64 {
    seed ^ block.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ tick.wrapping_mul(0xC2B2_AE3D_27D4_EB4F).rotate_left(29)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrafficSchedule {
    pub flows: Vec<MacFlow>,
    pub generated: Vec<GeneratedBlock>,
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    server: String,
    in_port: u16,
    dst_mac: String,
    start_tick: Tick,
    end_tick: Tick,
    rate_gbps: f64,
}

impl TrafficSchedule {
    pub fn validate(&self) -> Result<(), EthernetError> {
        self.flows.iter().try_for_each(MacFlow::validate)?;
        self.generated.iter().try_for_each(GeneratedBlock::validate)
    }

    /// Appends flows from a trace with columns
    /// `server,in_port,dst_mac,start_tick,end_tick,rate_gbps`; rows for the
    /// same (server, in_port, dst_mac) become segments of one flow.
    pub fn load_trace<R: Read>(&mut self, reader: R) -> Result<(), EthernetError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        for (i, row) in rdr.deserialize::<TraceRow>().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| EthernetError::Trace { line, reason: e.to_string() })?;
            let dst_mac: MacAddr =
                row.dst_mac.parse().map_err(|e: EthernetError| EthernetError::Trace { line, reason: e.to_string() })?;
            let rate = Rate::from_gbps(row.rate_gbps)
                .ok_or_else(|| EthernetError::Trace { line, reason: format!("bad rate {}", row.rate_gbps) })?;
            let seg = RateSegment { start: row.start_tick, end: row.end_tick, rate };
            match self
                .flows
                .iter_mut()
                .find(|f| f.server == row.server && f.in_port == row.in_port && f.dst_mac == dst_mac)
            {
                Some(f) => f.segments.push(seg),
                None => {
                    self.flows.push(MacFlow { server: row.server, in_port: row.in_port, dst_mac, segments: vec![seg] })
                }
            }
        }
        Ok(())
    }

    /// Every flow with a positive rate at `tick`, merged per
    /// (in_port, dst_mac, server) and sorted.
    pub fn offered(&self, tick: Tick) -> Vec<OfferedFlow> {
        let mut acc: BTreeMap<(u16, MacAddr, String), Rate> = BTreeMap::new();
        for f in &self.flows {
            let r = f.rate_at(tick);
            if r > Rate::ZERO {
                *acc.entry((f.in_port, f.dst_mac, f.server.clone())).or_default() += r;
            }
        }
        for (i, b) in self.generated.iter().enumerate() {
            if b.start <= tick && tick <= b.end {
                for (mac, r) in b.macs.iter().zip(b.split(self.seed, i, tick)) {
                    *acc.entry((b.in_port, *mac, b.server.clone())).or_default() += r;
                }
            }
        }
        acc.into_iter()
            .map(|((in_port, dst_mac, server), rate)| OfferedFlow { in_port, dst_mac, server, rate })
            .collect()
    }

    /// Every MAC the schedule can ever emit.
    pub fn mac_set(&self) -> BTreeSet<MacAddr> {
        self.flows
            .iter()
            .filter(|f| f.segments.iter().any(|s| s.rate > Rate::ZERO))
            .map(|f| f.dst_mac)
            .chain(self.generated.iter().flat_map(|b| b.macs.iter().copied()))
            .collect()
    }

    pub fn servers(&self) -> BTreeSet<String> {
        self.flows.iter().map(|f| f.server.clone()).chain(self.generated.iter().map(|b| b.server.clone())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NicSample {
    pub tick: Tick,
    pub server: String,
    pub rates: Vec<(MacAddr, Rate)>,
}

impl NicSample {
    pub fn total(&self) -> Rate {
        self.rates.iter().map(|(_, r)| *r).sum()
    }
}

/// Per-MAC rates the NIC on `server` sees at `tick`; MACs with zero rate are absent.
pub fn nic_dpi_sample(offered: &[OfferedFlow], server: &str, tick: Tick) -> NicSample {
    let mut per_mac: BTreeMap<MacAddr, Rate> = BTreeMap::new();
    for f in offered.iter().filter(|f| f.server == server && f.rate > Rate::ZERO) {
        *per_mac.entry(f.dst_mac).or_default() += f.rate;
    }
    NicSample { tick, server: server.to_string(), rates: per_mac.into_iter().collect() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickTraffic {
    pub tick: Tick,
    pub offered: Vec<OfferedFlow>,
    pub nic: Vec<NicSample>,
    pub events: Vec<SwitchEvent>,
}

/// Applies the schedule at `tick` to the switch and samples every NIC.
pub fn step_traffic(
    switch: &mut EthSwitch,
    schedule: &TrafficSchedule,
    tick: Tick,
) -> Result<TickTraffic, EthernetError> {
    let offered = schedule.offered(tick);
    let mut nic = Vec::new();
    for server in schedule.servers() {
        let s = nic_dpi_sample(&offered, &server, tick);
        if s.total() > NIC_CAPACITY {
            return Err(EthernetError::NicOverload { server, tick, rate: s.total() });
        }
        nic.push(s);
    }
    let events = switch.forward(&offered);
    Ok(TickTraffic { tick, offered, nic, events })
}

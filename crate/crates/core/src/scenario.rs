//! Scenario files: TOML schema, validation with line-level diagnostics, and
//! the scenarios shipped with the binary.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

use crate::ethernet::{
    port_class, EthSwitch, FlowRule, GeneratedBlock, MacAddr, MacFlow, RateSegment, TrafficSchedule,
};
use crate::manager::{ManagerConfig, ServiceRequest};
use crate::optical::{
    testbed_links, LinkId, LinkSpec, NodeId, NoiseLevel, OpticalNetwork, SpectrumWindow, DEFAULT_K_PATHS,
    DEFAULT_LATENCY_MS_PER_KM,
};
use crate::proto::Plant;
use crate::spectrum::{
    default_required_osnr, CatalogEntry, Frequency, ModulationCatalog, ModulationFormat, ModulationProfile,
    DEFAULT_ROLLOFF, UNITS_PER_THZ,
};
use crate::units::{Rate, ServiceId, Tick};
use crate::vbvt::{
    parse_input_port, CrossConnect, ModulatorPool, SubcarrierPool, Vbvt, DEFAULT_SUBCARRIER_ANCHOR_UNITS,
    DEFAULT_SUBCARRIER_COUNT, DEFAULT_SUBCARRIER_SPACING_GHZ, WSS_OUTPUTS,
};

pub const SHIPPED: &[(&str, &str)] = &[
    ("default", include_str!("../scenarios/default.toml")),
    ("osnr-drop", include_str!("../scenarios/osnr-drop.toml")),
    ("agg-2port", include_str!("../scenarios/agg-2port.toml")),
    ("agg-5port", include_str!("../scenarios/agg-5port.toml")),
    ("nic-dpi", include_str!("../scenarios/nic-dpi.toml")),
    ("empty", include_str!("../scenarios/empty.toml")),
];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("{origin}:{line}:{col}: {message}")]
    Invalid { origin: String, line: usize, col: usize, message: String },
    #[error("{origin}: {message}")]
    Semantic { origin: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("no scenario file or shipped scenario named '{0}'")]
    NotFound(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: Option<String>,
    pub description: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub duration: Tick,
    #[serde(default = "default_tick_seconds")]
    pub tick_seconds: f64,
    pub topology: Option<TopologyCfg>,
    #[serde(default)]
    pub noise: Vec<NoiseCfg>,
    #[serde(default)]
    pub vbvt: VbvtCfg,
    #[serde(default)]
    pub switch: SwitchCfg,
    #[serde(default)]
    pub traffic: TrafficCfg,
    #[serde(default)]
    pub services: Vec<ServiceCfg>,
    #[serde(default)]
    pub wss_static: Vec<WssStaticCfg>,
    #[serde(default)]
    pub thresholds: ThresholdsCfg,
}

fn default_tick_seconds() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyCfg {
    pub nodes: Vec<Spanned<String>>,
    pub links: Vec<LinkCfg>,
    pub window_first: Option<i64>,
    pub window_slots: Option<u32>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkCfg {
    pub name: Spanned<String>,
    pub a: Spanned<String>,
    pub b: Spanned<String>,
    pub length_km: f64,
    pub osnr_db: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseCfg {
    pub tick: Tick,
    pub link: Spanned<String>,
    pub target_db: Option<f64>,
    pub linear: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VbvtCfg {
    pub subcarrier_count: Option<u32>,
    pub subcarrier_spacing_ghz: Option<f64>,
    pub subcarrier_anchor_thz: Option<f64>,
    #[serde(default)]
    pub modulators: Vec<ModulatorCfg>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulatorCfg {
    pub format: Spanned<String>,
    pub baud_gbd: f64,
    #[serde(default = "one")]
    pub count: u32,
    pub required_osnr_db: Option<f64>,
    pub rolloff: Option<f64>,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchCfg {
    #[serde(default)]
    pub egress_pool: Vec<Spanned<u16>>,
    #[serde(default)]
    pub rules: Vec<RuleCfg>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleCfg {
    pub in_port: Option<Spanned<u16>>,
    pub dst_mac: Option<Spanned<String>>,
    pub out_port: Spanned<u16>,
    #[serde(default)]
    pub priority: u16,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficCfg {
    pub trace_csv: Option<Spanned<String>>,
    #[serde(default)]
    pub flows: Vec<FlowCfg>,
    #[serde(default)]
    pub generated: Vec<GeneratedCfg>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowCfg {
    pub server: String,
    pub in_port: Spanned<u16>,
    pub dst_mac: Spanned<String>,
    pub segments: Vec<SegmentCfg>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentCfg {
    pub start: Tick,
    pub end: Tick,
    pub rate_gbps: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratedCfg {
    pub server: String,
    pub in_port: Spanned<u16>,
    pub macs: Vec<Spanned<String>>,
    pub start: Tick,
    pub end: Tick,
    pub total_gbps: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceCfg {
    pub id: Spanned<String>,
    pub arrival: Tick,
    pub departure: Option<Tick>,
    pub src: Spanned<String>,
    pub dst: Spanned<String>,
    pub in_port: Spanned<u16>,
    pub dst_mac: Spanned<String>,
    pub rate_gbps: f64,
    pub latency_ms: Option<f64>,
    pub preferred_wavelength_nm: Option<f64>,
    pub preferred_thz: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WssStaticCfg {
    pub tick: Tick,
    #[serde(rename = "in")]
    pub in_port: Spanned<String>,
    pub out: Spanned<u16>,
    pub center_thz: f64,
    pub width_ghz: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdsCfg {
    #[serde(default = "default_alarm")]
    pub osnr_alarm_db: f64,
    #[serde(default = "default_margin")]
    pub margin_db: f64,
    #[serde(default = "default_poll")]
    pub poll_interval: Tick,
    #[serde(default = "default_k")]
    pub k_paths: usize,
    #[serde(default = "default_latency_per_km")]
    pub latency_ms_per_km: f64,
}

fn default_alarm() -> f64 {
    15.0
}
fn default_margin() -> f64 {
    1.0
}
fn default_poll() -> Tick {
    1
}
fn default_k() -> usize {
    DEFAULT_K_PATHS
}
fn default_latency_per_km() -> f64 {
    DEFAULT_LATENCY_MS_PER_KM
}

impl Default for ThresholdsCfg {
    fn default() -> Self {
        ThresholdsCfg {
            osnr_alarm_db: default_alarm(),
            margin_db: default_margin(),
            poll_interval: default_poll(),
            k_paths: default_k(),
            latency_ms_per_km: default_latency_per_km(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledService {
    pub arrival: Tick,
    pub departure: Option<Tick>,
    pub request: ServiceRequest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledNoise {
    pub tick: Tick,
    pub link: LinkId,
    pub level: NoiseLevel,
}

/// A validated scenario, ready to build devices from.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub seed: u64,
    pub duration: Tick,
    pub tick_seconds: f64,
    pub nodes: Vec<String>,
    pub links: Vec<LinkSpec>,
    pub window: SpectrumWindow,
    pub catalog: ModulationCatalog,
    pub subcarrier_anchor: Frequency,
    pub subcarrier_spacing_ghz: f64,
    pub subcarrier_count: u32,
    pub egress_pool: Vec<u16>,
    pub static_rules: Vec<FlowRule>,
    pub schedule: TrafficSchedule,
    pub noise: Vec<ScheduledNoise>,
    pub services: Vec<ScheduledService>,
    pub wss_static: Vec<(Tick, CrossConnect)>,
    pub thresholds: ThresholdsCfg,
}

struct Ctx<'a> {
    origin: &'a str,
    src: &'a str,
}

impl Ctx<'_> {
    fn at(&self, span: Range<usize>, message: impl fmt::Display) -> ScenarioError {
        let (line, col) = line_col(self.src, span.start);
        ScenarioError::Invalid { origin: self.origin.to_string(), line, col, message: message.to_string() }
    }

    fn semantic(&self, message: impl fmt::Display) -> ScenarioError {
        ScenarioError::Semantic { origin: self.origin.to_string(), message: message.to_string() }
    }
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

fn mac(ctx: &Ctx<'_>, s: &Spanned<String>) -> Result<MacAddr, ScenarioError> {
    s.get_ref().parse().map_err(|e| ctx.at(s.span(), e))
}

fn port(ctx: &Ctx<'_>, p: &Spanned<u16>) -> Result<u16, ScenarioError> {
    port_class(*p.get_ref())
        .map(|_| *p.get_ref())
        .ok_or_else(|| ctx.at(p.span(), format!("switch port {} does not exist (1-52)", p.get_ref())))
}

fn thz(ctx: &Ctx<'_>, v: f64, what: &str) -> Result<Frequency, ScenarioError> {
    Frequency::from_thz(v).map_err(|e| ctx.semantic(format!("{what}: {e}")))
}

impl Scenario {
    /// Parses and validates `src`. `origin` names the file in diagnostics and
    /// `base_dir` resolves a relative trace path.
    pub fn parse(src: &str, origin: &str, base_dir: Option<&Path>) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = toml::from_str(src)
            .map_err(|e| ScenarioError::Parse { origin: origin.to_string(), message: e.to_string() })?;
        let ctx = Ctx { origin, src };

        if file.duration == 0 {
            return Err(ctx.semantic("duration must be at least one tick"));
        }
        if !(file.tick_seconds > 0.0 && file.tick_seconds.is_finite()) {
            return Err(ctx.semantic("tick_seconds must be positive"));
        }
        let th = file.thresholds.clone();
        if th.poll_interval == 0 {
            return Err(ctx.semantic("poll_interval must be at least one tick"));
        }
        if th.k_paths == 0 {
            return Err(ctx.semantic("k_paths must be at least 1"));
        }
        if !(th.margin_db >= 0.0 && th.osnr_alarm_db.is_finite() && th.latency_ms_per_km >= 0.0) {
            return Err(ctx.semantic("thresholds must be finite and non-negative"));
        }

        // Topology.
        let (nodes, links, window) = match &file.topology {
            None => (["N1", "N2", "N3", "N4"].map(String::from).to_vec(), testbed_links(), SpectrumWindow::default()),
            Some(t) => {
                let mut seen = BTreeSet::new();
                for n in &t.nodes {
                    if !seen.insert(n.get_ref().clone()) {
                        return Err(ctx.at(n.span(), format!("duplicate node '{}'", n.get_ref())));
                    }
                }
                let mut names = BTreeSet::new();
                let mut specs = Vec::new();
                for l in &t.links {
                    if !names.insert(l.name.get_ref().clone()) {
                        return Err(ctx.at(l.name.span(), format!("duplicate link '{}'", l.name.get_ref())));
                    }
                    for end in [&l.a, &l.b] {
                        if !seen.contains(end.get_ref()) {
                            return Err(ctx.at(
                                end.span(),
                                format!("link '{}' references unknown node '{}'", l.name.get_ref(), end.get_ref()),
                            ));
                        }
                    }
                    if l.a.get_ref() == l.b.get_ref() {
                        return Err(
                            ctx.at(l.b.span(), format!("link '{}' has both ends on one node", l.name.get_ref()))
                        );
                    }
                    if !(l.length_km > 0.0 && l.length_km.is_finite()) {
                        return Err(
                            ctx.at(l.name.span(), format!("link '{}' needs a positive length", l.name.get_ref()))
                        );
                    }
                    if !l.osnr_db.is_finite() {
                        return Err(ctx.at(l.name.span(), format!("link '{}' needs a finite OSNR", l.name.get_ref())));
                    }
                    specs.push(LinkSpec {
                        name: l.name.get_ref().clone(),
                        a: l.a.get_ref().clone(),
                        b: l.b.get_ref().clone(),
                        length_km: l.length_km,
                        osnr_db: l.osnr_db,
                    });
                }
                let mut window = SpectrumWindow::default();
                if let Some(f) = t.window_first {
                    window.first = f;
                }
                if let Some(c) = t.window_slots {
                    if c == 0 {
                        return Err(ctx.semantic("window_slots must be positive"));
                    }
                    window.count = c;
                }
                (t.nodes.iter().map(|n| n.get_ref().clone()).collect(), specs, window)
            }
        };
        let probe = OpticalNetwork::with_options(nodes.clone(), &links, window, th.k_paths, th.latency_ms_per_km)
            .map_err(|e| ctx.semantic(e))?;

        // Noise schedule.
        let mut noise = Vec::new();
        for n in &file.noise {
            let link = probe
                .link_by_name(n.link.get_ref())
                .ok_or_else(|| ctx.at(n.link.span(), format!("unknown link '{}'", n.link.get_ref())))?;
            let level = match (n.target_db, n.linear) {
                (Some(t), None) => NoiseLevel::TargetDb(t),
                (None, Some(x)) => NoiseLevel::Linear(x),
                _ => return Err(ctx.at(n.link.span(), "noise event needs exactly one of target_db or linear")),
            };
            probe.noise_addend(link.id, level).map_err(|e| ctx.at(n.link.span(), e))?;
            noise.push(ScheduledNoise { tick: n.tick, link: link.id, level });
        }

        // Transceiver pools.
        let catalog = if file.vbvt.modulators.is_empty() {
            ModulationCatalog::testbed()
        } else {
            let mut entries = Vec::new();
            for m in &file.vbvt.modulators {
                let format: ModulationFormat = m.format.get_ref().parse().map_err(|e| ctx.at(m.format.span(), e))?;
                let required = match m.required_osnr_db.or_else(|| default_required_osnr(format, m.baud_gbd)) {
                    Some(r) => r,
                    None => {
                        return Err(ctx.at(
                            m.format.span(),
                            format!(
                                "no default required OSNR for {} at {} GBd; set required_osnr_db",
                                format.name(),
                                m.baud_gbd
                            ),
                        ))
                    }
                };
                let profile = ModulationProfile::new(format, m.baud_gbd, required)
                    .with_rolloff(m.rolloff.unwrap_or(DEFAULT_ROLLOFF));
                entries.push(CatalogEntry { profile, count: m.count });
            }
            ModulationCatalog::new(entries).map_err(|e| ctx.semantic(e))?
        };
        ModulatorPool::from_catalog(&catalog).map_err(|e| ctx.semantic(e))?;
        let subcarrier_anchor = match file.vbvt.subcarrier_anchor_thz {
            Some(t) => thz(&ctx, t, "subcarrier_anchor_thz")?,
            None => Frequency::from_units(DEFAULT_SUBCARRIER_ANCHOR_UNITS).unwrap(),
        };
        let subcarrier_spacing_ghz = file.vbvt.subcarrier_spacing_ghz.unwrap_or(DEFAULT_SUBCARRIER_SPACING_GHZ);
        let subcarrier_count = file.vbvt.subcarrier_count.unwrap_or(DEFAULT_SUBCARRIER_COUNT);
        SubcarrierPool::generate(subcarrier_anchor, subcarrier_spacing_ghz, subcarrier_count)
            .map_err(|e| ctx.semantic(e))?;

        // Switch.
        let mut egress_pool = Vec::new();
        for p in &file.switch.egress_pool {
            let v = port(&ctx, p)?;
            if egress_pool.contains(&v) {
                return Err(ctx.at(p.span(), format!("port {v} listed twice")));
            }
            egress_pool.push(v);
        }
        let mut static_rules = Vec::new();
        for r in &file.switch.rules {
            let in_port = r.in_port.as_ref().map(|p| port(&ctx, p)).transpose()?;
            let dst_mac = r.dst_mac.as_ref().map(|m| mac(&ctx, m)).transpose()?;
            let out = port(&ctx, &r.out_port)?;
            if egress_pool.contains(&out) {
                return Err(ctx.at(r.out_port.span(), format!("port {out} is in the egress pool")));
            }
            static_rules.push(FlowRule::new(in_port, dst_mac, out, r.priority));
        }

        // Traffic.
        let mut schedule = TrafficSchedule { seed: file.seed, ..Default::default() };
        for f in &file.traffic.flows {
            let flow = MacFlow {
                server: f.server.clone(),
                in_port: port(&ctx, &f.in_port)?,
                dst_mac: mac(&ctx, &f.dst_mac)?,
                segments: f
                    .segments
                    .iter()
                    .map(|s| {
                        Rate::from_gbps(s.rate_gbps)
                            .map(|rate| RateSegment { start: s.start, end: s.end, rate })
                            .ok_or_else(|| ctx.at(f.dst_mac.span(), format!("bad rate {}", s.rate_gbps)))
                    })
                    .collect::<Result<_, _>>()?,
            };
            flow.validate().map_err(|e| ctx.at(f.dst_mac.span(), e))?;
            schedule.flows.push(flow);
        }
        for g in &file.traffic.generated {
            let block = GeneratedBlock {
                server: g.server.clone(),
                in_port: port(&ctx, &g.in_port)?,
                macs: g.macs.iter().map(|m| mac(&ctx, m)).collect::<Result<_, _>>()?,
                start: g.start,
                end: g.end,
                total: Rate::from_gbps(g.total_gbps)
                    .ok_or_else(|| ctx.at(g.in_port.span(), format!("bad total {}", g.total_gbps)))?,
            };
            block.validate().map_err(|e| ctx.at(g.in_port.span(), e))?;
            schedule.generated.push(block);
        }
        if let Some(trace) = &file.traffic.trace_csv {
            let path = match base_dir {
                Some(d) => d.join(trace.get_ref()),
                None => PathBuf::from(trace.get_ref()),
            };
            let f = fs::File::open(&path)
                .map_err(|e| ctx.at(trace.span(), format!("cannot open {}: {e}", path.display())))?;
            schedule.load_trace(f).map_err(|e| ctx.at(trace.span(), e))?;
            schedule.validate().map_err(|e| ctx.at(trace.span(), e))?;
        }
        for t in 1..=file.duration {
            for s in schedule.servers() {
                let total = crate::ethernet::nic_dpi_sample(&schedule.offered(t), &s, t).total();
                if total > crate::ethernet::NIC_CAPACITY {
                    return Err(ctx.semantic(format!("server {s} offers {total} at tick {t}, above its 10 Gb/s NIC")));
                }
            }
        }

        // Services.
        let mut ids = BTreeSet::new();
        let mut services = Vec::new();
        for s in &file.services {
            if !ids.insert(s.id.get_ref().clone()) {
                return Err(ctx.at(s.id.span(), format!("duplicate service '{}'", s.id.get_ref())));
            }
            for n in [&s.src, &s.dst] {
                if !nodes.contains(n.get_ref()) {
                    return Err(ctx.at(n.span(), format!("unknown node '{}'", n.get_ref())));
                }
            }
            if s.src.get_ref() == s.dst.get_ref() {
                return Err(ctx.at(s.dst.span(), "source and destination are the same node"));
            }
            let rate = Rate::from_gbps(s.rate_gbps)
                .filter(|r| *r > Rate::ZERO)
                .ok_or_else(|| ctx.at(s.id.span(), format!("service rate must be positive, got {}", s.rate_gbps)))?;
            if s.departure.is_some_and(|d| d <= s.arrival) {
                return Err(ctx.at(s.id.span(), "departure must come after arrival"));
            }
            if s.latency_ms.is_some_and(|l| l.is_nan() || l <= 0.0) {
                return Err(ctx.at(s.id.span(), "latency bound must be positive"));
            }
            let preferred = match (s.preferred_wavelength_nm, s.preferred_thz) {
                (Some(_), Some(_)) => {
                    return Err(ctx.at(s.id.span(), "give preferred_wavelength_nm or preferred_thz, not both"))
                }
                (Some(nm), None) => Some(Frequency::from_wavelength_nm(nm).map_err(|e| ctx.at(s.id.span(), e))?),
                (None, Some(t)) => Some(thz(&ctx, t, "preferred_thz")?),
                (None, None) => None,
            };
            services.push(ScheduledService {
                arrival: s.arrival,
                departure: s.departure,
                request: ServiceRequest {
                    id: ServiceId(s.id.get_ref().clone()),
                    src: NodeId(s.src.get_ref().clone()),
                    dst: NodeId(s.dst.get_ref().clone()),
                    in_port: port(&ctx, &s.in_port)?,
                    dst_mac: mac(&ctx, &s.dst_mac)?,
                    rate,
                    latency_ms: s.latency_ms,
                    preferred_subcarrier: preferred,
                },
            });
        }

        // Static WSS entries.
        let mut wss_static = Vec::new();
        for w in &file.wss_static {
            let in_port = parse_input_port(w.in_port.get_ref()).map_err(|e| ctx.at(w.in_port.span(), e))?;
            let out = *w.out.get_ref();
            if !WSS_OUTPUTS.contains(&out) {
                return Err(ctx.at(w.out.span(), format!("WSS output {out} out of range 1-16")));
            }
            if !(w.width_ghz > 0.0 && w.width_ghz.is_finite()) {
                return Err(ctx.at(w.in_port.span(), "filter width must be positive"));
            }
            let center = thz(&ctx, w.center_thz, "center_thz")?;
            if center.units() > u32::MAX as u64 {
                return Err(ctx.at(w.in_port.span(), "centre frequency does not fit the 32-bit field"));
            }
            let filter_width_mhz = (w.width_ghz * 1000.0).round() as u32;
            wss_static.push((w.tick, CrossConnect { in_port, out_port: out, center, filter_width_mhz }));
        }

        Ok(Scenario {
            name: file.name.clone().unwrap_or_else(|| origin.to_string()),
            description: file.description.clone().unwrap_or_default(),
            seed: file.seed,
            duration: file.duration,
            tick_seconds: file.tick_seconds,
            nodes,
            links,
            window,
            catalog,
            subcarrier_anchor,
            subcarrier_spacing_ghz,
            subcarrier_count,
            egress_pool,
            static_rules,
            schedule,
            noise,
            services,
            wss_static,
            thresholds: th,
        })
    }

    pub fn shipped(name: &str) -> Option<Self> {
        SHIPPED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(n, src)| Scenario::parse(src, n, None).expect("shipped scenarios are valid"))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.schedule.seed = seed;
        self
    }

    pub fn with_duration(mut self, duration: Tick) -> Self {
        self.duration = duration.max(1);
        self
    }

    pub fn build_plant(&self) -> Plant {
        let optical = OpticalNetwork::with_options(
            self.nodes.clone(),
            &self.links,
            self.window,
            self.thresholds.k_paths,
            self.thresholds.latency_ms_per_km,
        )
        .expect("validated");
        let subcarriers =
            SubcarrierPool::generate(self.subcarrier_anchor, self.subcarrier_spacing_ghz, self.subcarrier_count)
                .expect("validated");
        let modulators = ModulatorPool::from_catalog(&self.catalog).expect("validated");
        Plant::new(EthSwitch::new(), Vbvt::new(subcarriers, modulators), optical)
    }

    pub fn manager_config(&self) -> ManagerConfig {
        ManagerConfig {
            egress_pool: self.egress_pool.clone(),
            margin_db: self.thresholds.margin_db,
            osnr_alarm_db: self.thresholds.osnr_alarm_db,
        }
    }

    /// Switch ports whose receive counters are recorded: every port traffic enters on.
    pub fn ingress_ports(&self) -> BTreeSet<u16> {
        self.schedule.flows.iter().map(|f| f.in_port).chain(self.schedule.generated.iter().map(|g| g.in_port)).collect()
    }

    /// Switch ports whose transmit counters are recorded.
    pub fn egress_ports(&self) -> BTreeSet<u16> {
        self.egress_pool.iter().copied().chain(self.static_rules.iter().map(|r| r.out_port)).collect()
    }
}

/// Loads a scenario from a file path, or by name from the shipped set.
pub fn load_scenario(path_or_name: &str) -> Result<Scenario, ScenarioError> {
    let path = Path::new(path_or_name);
    if path.is_file() {
        let src = fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        return Scenario::parse(&src, &path.display().to_string(), path.parent());
    }
    match SHIPPED.iter().find(|(n, _)| *n == path_or_name) {
        Some((n, src)) => Scenario::parse(src, n, None),
        None => Err(ScenarioError::NotFound(path_or_name.to_string())),
    }
}

/// Centre frequency in THz with every significant digit of the 100 kHz grid.
pub fn thz_string(f: Frequency) -> String {
    let whole = f.units() / UNITS_PER_THZ;
    let frac = f.units() % UNITS_PER_THZ;
    format!("{whole}.{frac:07}").trim_end_matches('0').to_string()
}

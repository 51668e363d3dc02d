//! The management block: admission of new services, aggregation when traffic
//! changes, and reselection when a channel's OSNR drops.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ethernet::{aggregate_feasible, port_capacity, port_class, FlowRule, MacAddr, PortClass};
use crate::monitor::{channel_key, port_rx_key, MonitorDb, Source};
use crate::optical::{ChannelId, NodeId, OpticalError, PathCandidate, SpectrumWindow};
use crate::proto::{ControlError, Controller, DevicePlan, EthOp, OpticalOp, Plant};
use crate::spectrum::{run_center, Frequency, ModulationProfile, SlotIndex};
use crate::units::{Rate, ServiceId, Tick};
use crate::vbvt::{ModulatorId, SubcarrierId, VtId};

/// Slack for comparing OSNR values that went through dB/linear conversions.
const OSNR_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ManagerError {
    #[error("decision for {services:?} is not feasible: {reason}")]
    Infeasible { services: Vec<ServiceId>, reason: String },
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Optical(#[from] OpticalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceRequest {
    pub id: ServiceId,
    pub src: NodeId,
    pub dst: NodeId,
    pub in_port: u16,
    pub dst_mac: MacAddr,
    pub rate: Rate,
    pub latency_ms: Option<f64>,
    pub preferred_subcarrier: Option<Frequency>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceState {
    Pending,
    Active,
    Degraded,
    Replanned,
    Failed,
}

impl ServiceState {
    pub fn as_str(self) -> &'static str {
        match self {
            ServiceState::Pending => "pending",
            ServiceState::Active => "active",
            ServiceState::Degraded => "degraded",
            ServiceState::Replanned => "replanned",
            ServiceState::Failed => "failed",
        }
    }

    fn carries_traffic(self) -> bool {
        matches!(self, ServiceState::Active | ServiceState::Degraded | ServiceState::Replanned)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceRecord {
    pub request: ServiceRequest,
    pub state: ServiceState,
    pub out_port: Option<u16>,
    pub vt: Option<VtId>,
    pub channel: Option<ChannelId>,
}

impl ServiceRecord {
    fn rule(&self) -> Option<FlowRule> {
        self.out_port.map(|p| FlowRule::new(Some(self.request.in_port), Some(self.request.dst_mac), p, RULE_PRIORITY))
    }
}

pub const RULE_PRIORITY: u16 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Ports,
    Modulators,
    Subcarriers,
    Path,
    Spectrum,
    Osnr,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::Ports => "ports",
            RejectReason::Modulators => "modulators",
            RejectReason::Subcarriers => "subcarriers",
            RejectReason::Path => "path",
            RejectReason::Spectrum => "spectrum",
            RejectReason::Osnr => "OSNR",
        })
    }
}

/// One candidate path with the OSNR and occupied slots seen at snapshot time.
#[derive(Debug, Clone, PartialEq)]
pub struct PathView {
    pub path: PathCandidate,
    pub osnr_db: f64,
    /// Slots taken on at least one link of the path.
    pub busy: BTreeSet<SlotIndex>,
}

/// Everything selection looks at, frozen at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionInputs {
    pub paths: Vec<PathView>,
    pub subcarriers: Vec<(SubcarrierId, Frequency)>,
    pub modulators: Vec<(ModulatorId, ModulationProfile)>,
    pub window: SpectrumWindow,
}

impl SelectionInputs {
    /// Snapshot for `src`→`dst`, treating the VTs in `release` (and their
    /// channels) as already free.
    pub fn snapshot(plant: &Plant, src: &NodeId, dst: &NodeId, release: &[VtId]) -> Result<Self, OpticalError> {
        let released: BTreeSet<ChannelId> = release.iter().filter_map(|v| plant.channel_of(*v)).collect();
        let released_vts: BTreeSet<VtId> = release.iter().copied().collect();
        let opt = &plant.optical;
        for n in [src, dst] {
            if !opt.has_node(n) {
                return Err(OpticalError::UnknownNode(n.0.clone()));
            }
        }
        let mut paths = Vec::new();
        for path in opt.candidates(src, dst).iter().cloned() {
            let osnr_db = opt.path_osnr(&path.links)?;
            let mut busy = BTreeSet::new();
            for l in &path.links {
                let link = opt.link(*l).expect("candidate links exist");
                busy.extend(link.occupancy().iter().filter(|(_, c)| !released.contains(c)).map(|(s, _)| *s));
            }
            paths.push(PathView { path, osnr_db, busy });
        }
        let free_or_released = |owner: Option<VtId>| owner.is_none_or(|o| released_vts.contains(&o));
        let subcarriers = plant
            .vbvt
            .subcarriers()
            .all()
            .iter()
            .filter(|s| free_or_released(s.owner))
            .map(|s| (s.id, s.frequency))
            .collect();
        let modulators = plant
            .vbvt
            .modulators()
            .all()
            .iter()
            .filter(|m| free_or_released(m.owner))
            .map(|m| (m.id, m.profile.clone()))
            .collect();
        Ok(SelectionInputs { paths, subcarriers, modulators, window: opt.window() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demand {
    pub rate: Rate,
    pub latency_ms: Option<f64>,
    /// Paths below this OSNR are skipped outright.
    pub min_path_osnr_db: Option<f64>,
    pub preferred_subcarrier: Option<SubcarrierId>,
}

impl Demand {
    pub fn rate(rate: Rate) -> Self {
        Demand { rate, latency_ms: None, min_path_osnr_db: None, preferred_subcarrier: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    #[serde(skip)]
    pub path: PathCandidate,
    pub path_osnr_db: f64,
    pub modulator: ModulatorId,
    #[serde(skip)]
    pub profile: ModulationProfile,
    pub subcarrier: SubcarrierId,
    pub subcarrier_freq: Frequency,
    pub center: Frequency,
    pub slots: Vec<SlotIndex>,
}

/// Walks paths in k-shortest order; on each, tries modulators feasible by
/// capacity and OSNR in (slots, required OSNR, id) order and takes the
/// lowest-index run of free slots along the whole path. The subcarrier is the
/// preferred one when free, else the lowest free id.
pub fn select_resources(inputs: &SelectionInputs, demand: &Demand, margin_db: f64) -> Option<Selection> {
    search(inputs, demand, margin_db, true)
}

/// Lowest-index run of `n` slots inside `window` that avoids `busy`.
pub fn first_fit(busy: &BTreeSet<SlotIndex>, window: SpectrumWindow, n: u32) -> Option<Vec<SlotIndex>> {
    if n == 0 || n > window.count {
        return None;
    }
    let end = window.first + window.count as i64;
    let mut start = window.first;
    while start + n as i64 <= end {
        match busy.range(SlotIndex(start)..SlotIndex(start + n as i64)).next_back() {
            None => return Some((start..start + n as i64).map(SlotIndex).collect()),
            Some(b) => start = b.0 + 1,
        }
    }
    None
}

fn search(inputs: &SelectionInputs, demand: &Demand, margin_db: f64, check_osnr: bool) -> Option<Selection> {
    if demand.rate == Rate::ZERO {
        return None;
    }
    let mut mods: Vec<&(ModulatorId, ModulationProfile)> =
        inputs.modulators.iter().filter(|(_, p)| p.capacity() >= demand.rate).collect();
    mods.sort_by(|(ia, a), (ib, b)| {
        a.slots_needed().cmp(&b.slots_needed()).then(a.required_osnr_db.total_cmp(&b.required_osnr_db)).then(ia.cmp(ib))
    });
    let &(subcarrier, subcarrier_freq) =
        inputs.subcarriers.iter().min_by_key(|(id, _)| (Some(*id) != demand.preferred_subcarrier, *id))?;

    for pv in &inputs.paths {
        if demand.latency_ms.is_some_and(|b| pv.path.latency_ms > b + 1e-12) {
            continue;
        }
        if check_osnr && demand.min_path_osnr_db.is_some_and(|m| pv.osnr_db + OSNR_EPS < m) {
            continue;
        }
        for (mid, prof) in &mods {
            if check_osnr && pv.osnr_db - margin_db + OSNR_EPS < prof.required_osnr_db {
                continue;
            }
            let n = prof.slots_needed();
            if let Some(slots) = first_fit(&pv.busy, inputs.window, n) {
                return Some(Selection {
                    path: pv.path.clone(),
                    path_osnr_db: pv.osnr_db,
                    modulator: *mid,
                    profile: prof.clone(),
                    subcarrier,
                    subcarrier_freq,
                    center: run_center(slots[0], n),
                    slots,
                });
            }
        }
    }
    None
}

/// The first dimension that rules the demand out.
fn rejection_reason(inputs: &SelectionInputs, demand: &Demand, margin_db: f64) -> RejectReason {
    if !inputs.modulators.iter().any(|(_, p)| p.capacity() >= demand.rate) {
        return RejectReason::Modulators;
    }
    if inputs.subcarriers.is_empty() {
        return RejectReason::Subcarriers;
    }
    if !inputs.paths.iter().any(|p| demand.latency_ms.is_none_or(|b| p.path.latency_ms <= b + 1e-12)) {
        return RejectReason::Path;
    }
    if search(inputs, demand, margin_db, false).is_none() {
        return RejectReason::Spectrum;
    }
    RejectReason::Osnr
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    Admit,
    Release,
    Aggregate,
    OsnrReplan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub kind: DecisionKind,
    pub services: Vec<ServiceId>,
    pub out_port: Option<u16>,
    pub rate: Rate,
    pub selection: Option<Selection>,
    /// An existing VT that keeps serving the affected services.
    pub reuse: Option<VtId>,
    /// VTs torn down by this decision.
    pub retire: Vec<VtId>,
    pub plan: DevicePlan,
}

/// Feasibility of a decision against the plant it will be applied to: the
/// stated capacity, OSNR and port bounds hold and a dry run succeeds.
pub fn verify_decision(plant: &Plant, d: &Decision, margin_db: f64) -> Result<(), String> {
    if let Some(s) = &d.selection {
        if s.profile.capacity() < d.rate {
            return Err(format!("{} carries {} but {} is needed", s.profile.label(), s.profile.capacity(), d.rate));
        }
        let osnr = plant.optical.path_osnr(&s.path.links).map_err(|e| e.to_string())?;
        if s.profile.required_osnr_db > osnr - margin_db + OSNR_EPS {
            return Err(format!(
                "{} needs {} dB, path gives {:.2} dB",
                s.profile.label(),
                s.profile.required_osnr_db,
                osnr
            ));
        }
    }
    if let Some(p) = d.out_port {
        let cap = port_capacity(p).ok_or_else(|| format!("no port {p}"))?;
        if d.rate > cap {
            return Err(format!("port {p} cannot carry {}", d.rate));
        }
    }
    let mut scratch = plant.clone();
    Controller::new().apply(&mut scratch, 0, &d.plan).map_err(|e| e.to_string())?;
    scratch.check_consistency()
}

/// One line of the decision log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionRecord {
    pub tick: Tick,
    pub kind: DecisionKind,
    pub outcome: &'static str,
    pub services: Vec<ServiceId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub rate_gbps: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_port: Option<u16>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path_osnr_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modulator: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modulation: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subcarrier: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center_thz: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subcarrier_nm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slots: Option<Vec<i64>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub retired: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reused: Option<u32>,
    pub messages: usize,
}

impl DecisionRecord {
    fn new(tick: Tick, kind: DecisionKind, outcome: &'static str, services: Vec<ServiceId>, rate: Rate) -> Self {
        DecisionRecord {
            tick,
            kind,
            outcome,
            services,
            reason: None,
            rate_gbps: rate.gbps(),
            out_port: None,
            path: None,
            path_osnr_db: None,
            modulator: None,
            modulation: None,
            subcarrier: None,
            center_thz: None,
            subcarrier_nm: None,
            slots: None,
            retired: vec![],
            reused: None,
            messages: 0,
        }
    }

    fn from_decision(tick: Tick, d: &Decision, messages: usize) -> Self {
        let mut r = Self::new(tick, d.kind, "applied", d.services.clone(), d.rate);
        r.out_port = d.out_port;
        if let Some(s) = &d.selection {
            r.path = Some(s.path.nodes.iter().map(|n| n.0.clone()).collect());
            r.path_osnr_db = Some((s.path_osnr_db * 100.0).round() / 100.0);
            r.modulator = Some(s.modulator.0);
            r.modulation = Some(s.profile.label());
            r.subcarrier = Some(s.subcarrier.0);
            r.subcarrier_nm = Some((s.subcarrier_freq.wavelength_nm() * 100.0).round() / 100.0);
            r.center_thz = Some(s.center.to_string());
            r.slots = Some(s.slots.iter().map(|x| x.0).collect());
        }
        r.retired = d.retire.iter().map(|v| v.0).collect();
        r.reused = d.reuse.map(|v| v.0);
        r.messages = messages;
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManagerConfig {
    pub egress_pool: Vec<u16>,
    pub margin_db: f64,
    pub osnr_alarm_db: f64,
}

impl Default for ManagerConfig {
    fn default() -> Self {
        ManagerConfig { egress_pool: vec![], margin_db: 1.0, osnr_alarm_db: 15.0 }
    }
}

#[derive(Debug, Clone)]
pub struct VonManager {
    cfg: ManagerConfig,
    services: BTreeMap<ServiceId, ServiceRecord>,
    log: Vec<DecisionRecord>,
    events: Vec<(Tick, String)>,
    abandoned: BTreeMap<Vec<ServiceId>, Vec<Rate>>,
    overloaded: BTreeSet<Vec<ServiceId>>,
}

impl VonManager {
    pub fn new(cfg: ManagerConfig) -> Self {
        VonManager {
            cfg,
            services: BTreeMap::new(),
            log: Vec::new(),
            events: Vec::new(),
            abandoned: BTreeMap::new(),
            overloaded: BTreeSet::new(),
        }
    }

    pub fn config(&self) -> &ManagerConfig {
        &self.cfg
    }

    pub fn services(&self) -> &BTreeMap<ServiceId, ServiceRecord> {
        &self.services
    }

    pub fn service(&self, id: &ServiceId) -> Option<&ServiceRecord> {
        self.services.get(id)
    }

    pub fn log(&self) -> &[DecisionRecord] {
        &self.log
    }

    pub fn events(&self) -> &[(Tick, String)] {
        &self.events
    }

    fn event(&mut self, tick: Tick, text: String) {
        self.events.push((tick, text));
    }

    fn port_in_use(&self, port: u16) -> bool {
        self.services.values().any(|s| s.out_port == Some(port))
    }

    /// Lowest free pool port of the preferred class (SFP+ up to 10 Gb/s,
    /// QSFP+ above), else of the other class if it is large enough.
    fn pick_port(&self, rate: Rate) -> Option<u16> {
        let preferred = if rate <= PortClass::SfpPlus.capacity() { PortClass::SfpPlus } else { PortClass::QsfpPlus };
        let free = |class: PortClass| {
            let mut ports: Vec<u16> = self
                .cfg
                .egress_pool
                .iter()
                .copied()
                .filter(|p| port_class(*p) == Some(class) && !self.port_in_use(*p))
                .collect();
            ports.sort_unstable();
            ports.first().copied().filter(|_| class.capacity() >= rate)
        };
        free(preferred).or_else(|| {
            free(match preferred {
                PortClass::SfpPlus => PortClass::QsfpPlus,
                PortClass::QsfpPlus => PortClass::SfpPlus,
            })
        })
    }

    /// Plans a new service without touching any state.
    pub fn plan_admission(&self, plant: &Plant, req: &ServiceRequest) -> Result<Decision, RejectReason> {
        let port = self.pick_port(req.rate).ok_or(RejectReason::Ports)?;
        let inputs = SelectionInputs::snapshot(plant, &req.src, &req.dst, &[]).map_err(|_| RejectReason::Path)?;
        let demand = Demand {
            rate: req.rate,
            latency_ms: req.latency_ms,
            min_path_osnr_db: None,
            preferred_subcarrier: req.preferred_subcarrier.and_then(|f| plant.vbvt.subcarriers().nearest(f)),
        };
        let sel = select_resources(&inputs, &demand, self.cfg.margin_db)
            .ok_or_else(|| rejection_reason(&inputs, &demand, self.cfg.margin_db))?;
        let rule = FlowRule::new(Some(req.in_port), Some(req.dst_mac), port, RULE_PRIORITY);
        let plan = DevicePlan { eth: vec![EthOp::Install(rule)], optical: vec![create_op(&sel, &req.id)] };
        Ok(Decision {
            kind: DecisionKind::Admit,
            services: vec![req.id.clone()],
            out_port: Some(port),
            rate: req.rate,
            selection: Some(sel),
            reuse: None,
            retire: vec![],
            plan,
        })
    }

    pub fn admit_service(
        &mut self,
        plant: &mut Plant,
        ctl: &mut Controller,
        req: &ServiceRequest,
        tick: Tick,
    ) -> Result<Result<(), RejectReason>, ManagerError> {
        if self.services.contains_key(&req.id) {
            return Err(ManagerError::Infeasible {
                services: vec![req.id.clone()],
                reason: "duplicate service id".into(),
            });
        }
        let d = match self.plan_admission(plant, req) {
            Ok(d) => d,
            Err(reason) => {
                let mut r = DecisionRecord::new(tick, DecisionKind::Admit, "rejected", vec![req.id.clone()], req.rate);
                r.reason = Some(reason.to_string());
                self.log.push(r);
                self.event(tick, format!("service {} rejected: {}", req.id, reason));
                return Ok(Err(reason));
            }
        };
        self.services.insert(
            req.id.clone(),
            ServiceRecord {
                request: req.clone(),
                state: ServiceState::Pending,
                out_port: d.out_port,
                vt: None,
                channel: None,
            },
        );
        let applied = self.execute(plant, ctl, &d, tick)?;
        let (vt, ch) = applied[0];
        let rec = self.services.get_mut(&req.id).unwrap();
        rec.vt = Some(vt);
        rec.channel = Some(ch);
        rec.state = ServiceState::Active;
        self.event(tick, format!("service {} active on port {} via {} / {}", req.id, d.out_port.unwrap(), vt, ch));
        Ok(Ok(()))
    }

    /// Verifies, applies and logs `d`. Returns the VTs created.
    fn execute(
        &mut self,
        plant: &mut Plant,
        ctl: &mut Controller,
        d: &Decision,
        tick: Tick,
    ) -> Result<Vec<(VtId, ChannelId)>, ManagerError> {
        verify_decision(plant, d, self.cfg.margin_db)
            .map_err(|reason| ManagerError::Infeasible { services: d.services.clone(), reason })?;
        let applied = ctl.apply(plant, tick, &d.plan)?;
        self.log.push(DecisionRecord::from_decision(tick, d, applied.messages.len()));
        Ok(applied.created)
    }

    pub fn release_service(
        &mut self,
        plant: &mut Plant,
        ctl: &mut Controller,
        id: &ServiceId,
        tick: Tick,
    ) -> Result<bool, ManagerError> {
        let Some(rec) = self.services.get(id).cloned() else {
            return Ok(false);
        };
        let mut plan = DevicePlan::default();
        if let Some(rule) = rec.rule() {
            plan.eth.push(EthOp::Remove(rule));
        }
        let mut retire = vec![];
        if let Some(vt) = rec.vt {
            let shared = self.services.values().any(|s| s.request.id != *id && s.vt == Some(vt));
            if !shared {
                plan.optical.push(OpticalOp::DestroyVt(vt));
                retire.push(vt);
            }
        }
        let d = Decision {
            kind: DecisionKind::Release,
            services: vec![id.clone()],
            out_port: None,
            rate: rec.request.rate,
            selection: None,
            reuse: None,
            retire,
            plan,
        };
        self.execute(plant, ctl, &d, tick)?;
        self.services.remove(id);
        self.abandoned.retain(|k, _| !k.contains(id));
        self.overloaded.retain(|k| !k.contains(id));
        self.event(tick, format!("service {id} released"));
        Ok(true)
    }

    /// Current rate of a service: the switch counter of its ingress port when
    /// that port carries only this service, else the requested rate.
    pub fn measured_rate(&self, db: &MonitorDb, rec: &ServiceRecord) -> Rate {
        let sharing = self.services.values().filter(|s| s.request.in_port == rec.request.in_port).count();
        if sharing == 1 {
            if let Some(r) = db.latest(Source::SwitchPort, &port_rx_key(rec.request.in_port)) {
                return Rate::from_mbps(r.value as u64);
            }
        }
        rec.request.rate
    }

    /// Reacts to channel OSNR readings. Returns the number of replans applied.
    pub fn replan_osnr_drop(
        &mut self,
        plant: &mut Plant,
        ctl: &mut Controller,
        db: &MonitorDb,
        tick: Tick,
    ) -> Result<usize, ManagerError> {
        let threshold = self.cfg.osnr_alarm_db;
        let margin = self.cfg.margin_db;
        let channels: Vec<(VtId, ChannelId)> = plant.bindings().iter().map(|(v, c)| (*v, *c)).collect();
        let mut done = 0;
        for (vt, ch) in channels {
            let members: Vec<ServiceId> = self
                .services
                .values()
                .filter(|s| s.vt == Some(vt) && s.state.carries_traffic())
                .map(|s| s.request.id.clone())
                .collect();
            if members.is_empty() {
                continue;
            }
            let Some(reading) = db.latest(Source::WaveAnalyzer, &channel_key(ch)).filter(|r| r.tick == tick) else {
                continue;
            };
            let osnr = reading.value;
            let m = plant.vbvt.vt(vt).unwrap().modulator;
            let required = plant.vbvt.modulators().get(m).unwrap().profile.required_osnr_db;
            let triggered = osnr < required + margin || osnr < threshold;
            if !triggered {
                let degraded = osnr < threshold + margin;
                for id in &members {
                    let s = self.services.get_mut(id).unwrap();
                    if degraded && s.state != ServiceState::Degraded {
                        s.state = ServiceState::Degraded;
                        self.events.push((tick, format!("service {id} degraded: {ch} at {osnr:.2} dB")));
                    } else if !degraded && s.state == ServiceState::Degraded {
                        s.state = ServiceState::Active;
                        self.events.push((tick, format!("service {id} recovered: {ch} at {osnr:.2} dB")));
                    }
                }
                continue;
            }
            self.event(
                tick,
                format!(
                    "OSNR alarm on {ch}: {osnr:.2} dB (required {required} + {margin} dB, threshold {threshold} dB)"
                ),
            );
            let rate: Rate = members.iter().map(|id| self.measured_rate(db, &self.services[id])).sum();
            let first = &self.services[&members[0]];
            let (src, dst) = (first.request.src.clone(), first.request.dst.clone());
            let latency = members.iter().filter_map(|id| self.services[id].request.latency_ms).reduce(f64::min);
            let inputs = SelectionInputs::snapshot(plant, &src, &dst, &[])?;
            let demand =
                Demand { rate, latency_ms: latency, min_path_osnr_db: Some(threshold), preferred_subcarrier: None };
            match select_resources(&inputs, &demand, margin) {
                Some(sel) => {
                    let d = Decision {
                        kind: DecisionKind::OsnrReplan,
                        services: members.clone(),
                        out_port: first.out_port,
                        rate,
                        plan: DevicePlan {
                            eth: vec![],
                            optical: vec![create_op(&sel, &members[0]), OpticalOp::DestroyVt(vt)],
                        },
                        selection: Some(sel),
                        reuse: None,
                        retire: vec![vt],
                    };
                    let created = self.execute(plant, ctl, &d, tick)?;
                    let (nvt, nch) = created[0];
                    for id in &members {
                        let s = self.services.get_mut(id).unwrap();
                        s.vt = Some(nvt);
                        s.channel = Some(nch);
                        s.state = ServiceState::Replanned;
                    }
                    self.event(tick, format!("replanned {} from {} to {} / {}", join(&members), ch, nvt, nch));
                    done += 1;
                }
                None => {
                    let mut r = DecisionRecord::new(tick, DecisionKind::OsnrReplan, "failed", members.clone(), rate);
                    r.reason = Some(format!("no alternative for {ch} at {osnr:.2} dB"));
                    self.log.push(r);
                    for id in &members {
                        self.services.get_mut(id).unwrap().state = ServiceState::Failed;
                    }
                    self.event(
                        tick,
                        format!("ALARM: services {} failed, no feasible alternative for {ch}", join(&members)),
                    );
                }
            }
        }
        Ok(done)
    }

    /// Groups of live services sharing destination MAC and endpoints.
    fn groups(&self) -> Vec<Vec<ServiceId>> {
        let mut g: BTreeMap<(MacAddr, NodeId, NodeId), Vec<ServiceId>> = BTreeMap::new();
        for s in self.services.values().filter(|s| s.state.carries_traffic()) {
            g.entry((s.request.dst_mac, s.request.src.clone(), s.request.dst.clone()))
                .or_default()
                .push(s.request.id.clone());
        }
        g.into_values().filter(|v| v.len() >= 2).collect()
    }

    /// Plans the aggregation of `members`, or says why it cannot be done.
    pub fn plan_aggregation(&self, plant: &Plant, members: &[ServiceId], rates: &[Rate]) -> Result<Decision, String> {
        let recs: Vec<&ServiceRecord> = members.iter().map(|id| &self.services[id]).collect();
        let (ok, sum) = aggregate_feasible(rates, PortClass::QsfpPlus.capacity());
        if !ok {
            return Err(format!("sum {sum} exceeds every port"));
        }
        // Keep the member port that redirects the least traffic.
        let mut per_port: BTreeMap<u16, Rate> = BTreeMap::new();
        for (r, rate) in recs.iter().zip(rates) {
            *per_port.entry(r.out_port.unwrap()).or_default() += *rate;
        }
        let kept = per_port
            .iter()
            .filter(|(p, _)| port_capacity(**p).is_some_and(|c| c >= sum))
            .max_by(|(pa, ra), (pb, rb)| ra.cmp(rb).then(pb.cmp(pa)))
            .map(|(p, _)| *p);
        let port = match kept {
            Some(p) => p,
            None => {
                let mut free: Vec<u16> = self
                    .cfg
                    .egress_pool
                    .iter()
                    .copied()
                    .filter(|p| !self.port_in_use(*p) && port_capacity(*p).is_some_and(|c| c >= sum))
                    .collect();
                free.sort_by_key(|p| (port_capacity(*p), *p));
                *free.first().ok_or_else(|| format!("no port can carry {sum}"))?
            }
        };
        let vts: Vec<VtId> = recs.iter().filter_map(|r| r.vt).collect::<BTreeSet<_>>().into_iter().collect();
        let first = &recs[0].request;
        let inputs = SelectionInputs::snapshot(plant, &first.src, &first.dst, &vts).map_err(|e| e.to_string())?;
        let latency = recs.iter().filter_map(|r| r.request.latency_ms).reduce(f64::min);
        let demand = Demand { rate: sum, latency_ms: latency, min_path_osnr_db: None, preferred_subcarrier: None };
        let sel =
            select_resources(&inputs, &demand, self.cfg.margin_db).ok_or_else(|| format!("no resources for {sum}"))?;
        let old_slots: usize = vts
            .iter()
            .filter_map(|v| plant.channel_of(*v))
            .map(|c| plant.optical.channel(c).unwrap().slots.len())
            .sum();
        if sel.slots.len() > old_slots {
            return Err(format!("needs {} slots, the group holds {}", sel.slots.len(), old_slots));
        }
        let reuse = vts.iter().copied().find(|v| {
            let vt = plant.vbvt.vt(*v).unwrap();
            let ch = plant.optical.channel(plant.channel_of(*v).unwrap()).unwrap();
            vt.modulator == sel.modulator
                && vt.subcarrier == sel.subcarrier
                && ch.path.links == sel.path.links
                && ch.slots == sel.slots
        });
        let mut eth: Vec<(u16, FlowRule)> = recs
            .iter()
            .map(|r| {
                (
                    r.request.in_port,
                    FlowRule::new(Some(r.request.in_port), Some(r.request.dst_mac), port, RULE_PRIORITY),
                )
            })
            .collect();
        eth.sort_by_key(|(p, _)| *p);
        let retire: Vec<VtId> = vts.iter().copied().filter(|v| Some(*v) != reuse).collect();
        let mut optical: Vec<OpticalOp> = retire.iter().map(|v| OpticalOp::DestroyVt(*v)).collect();
        optical.push(match reuse {
            Some(v) => OpticalOp::Reassert(v),
            None => create_op(&sel, &members[0]),
        });
        Ok(Decision {
            kind: DecisionKind::Aggregate,
            services: members.to_vec(),
            out_port: Some(port),
            rate: sum,
            selection: Some(sel),
            reuse,
            retire,
            plan: DevicePlan { eth: eth.into_iter().map(|(_, r)| EthOp::Install(r)).collect(), optical },
        })
    }

    /// Aggregates same-destination services whose current rates fit one port.
    /// Returns the number of aggregations applied.
    pub fn replan_traffic_change(
        &mut self,
        plant: &mut Plant,
        ctl: &mut Controller,
        db: &MonitorDb,
        tick: Tick,
    ) -> Result<usize, ManagerError> {
        let mut done = 0;
        for members in self.groups() {
            let rates: Vec<Rate> = members.iter().map(|id| self.measured_rate(db, &self.services[id])).collect();
            let vts: BTreeSet<Option<VtId>> = members.iter().map(|id| self.services[id].vt).collect();
            let ports: BTreeSet<Option<u16>> = members.iter().map(|id| self.services[id].out_port).collect();
            if vts.len() < 2 && ports.len() < 2 {
                self.watch_aggregate(plant, &members, &rates, tick);
                continue;
            }
            match self.plan_aggregation(plant, &members, &rates) {
                Ok(d) => {
                    let created = self.execute(plant, ctl, &d, tick)?;
                    let (vt, ch) = match d.reuse {
                        Some(v) => (v, plant.channel_of(v).unwrap()),
                        None => created[0],
                    };
                    for id in &members {
                        let s = self.services.get_mut(id).unwrap();
                        s.vt = Some(vt);
                        s.channel = Some(ch);
                        s.out_port = d.out_port;
                        s.state = ServiceState::Replanned;
                    }
                    self.abandoned.remove(&members);
                    self.event(
                        tick,
                        format!(
                            "aggregated {} onto port {} at {} via {} / {}",
                            join(&members),
                            d.out_port.unwrap(),
                            d.rate,
                            vt,
                            ch
                        ),
                    );
                    done += 1;
                }
                Err(reason) => {
                    if self.abandoned.get(&members) != Some(&rates) {
                        self.abandoned.insert(members.clone(), rates.clone());
                        let sum: Rate = rates.iter().sum();
                        let mut r =
                            DecisionRecord::new(tick, DecisionKind::Aggregate, "abandoned", members.clone(), sum);
                        r.reason = Some(reason.clone());
                        self.log.push(r);
                        self.event(tick, format!("aggregation of {} not possible: {}", join(&members), reason));
                    }
                }
            }
        }
        Ok(done)
    }

    /// Notes, once, when an existing aggregate no longer fits its port or modulator.
    fn watch_aggregate(&mut self, plant: &Plant, members: &[ServiceId], rates: &[Rate], tick: Tick) {
        let rec = &self.services[&members[0]];
        let sum: Rate = rates.iter().sum();
        let port_cap = rec.out_port.and_then(port_capacity).unwrap_or(Rate::ZERO);
        let mod_cap = rec
            .vt
            .and_then(|v| plant.vbvt.vt(v))
            .and_then(|vt| plant.vbvt.modulators().get(vt.modulator))
            .map(|m| m.profile.capacity())
            .unwrap_or(Rate::ZERO);
        let key = members.to_vec();
        if sum > port_cap.min(mod_cap) {
            if self.overloaded.insert(key) {
                self.event(tick, format!("aggregate {} now carries {}, above what it can hold", join(members), sum));
            }
        } else {
            self.overloaded.remove(&key);
        }
    }

    /// Service records agree with the plant: every live or failed service has
    /// its rule installed and a VT bound to a live channel.
    pub fn check_services(&self, plant: &Plant) -> Result<(), String> {
        for s in self.services.values() {
            if s.state == ServiceState::Pending {
                return Err(format!("service {} left pending", s.request.id));
            }
            let vt = s.vt.ok_or_else(|| format!("service {} has no VT", s.request.id))?;
            if plant.vbvt.vt(vt).is_none() {
                return Err(format!("service {} points at destroyed {}", s.request.id, vt));
            }
            if plant.channel_of(vt) != s.channel || s.channel.and_then(|c| plant.optical.channel(c)).is_none() {
                return Err(format!("service {} has no live channel", s.request.id));
            }
            let rule = s.rule().ok_or_else(|| format!("service {} has no port", s.request.id))?;
            if !plant.switch.rules().any(|r| *r == rule) {
                return Err(format!("service {} rule {} missing", s.request.id, rule));
            }
        }
        Ok(())
    }
}

fn create_op(sel: &Selection, service: &ServiceId) -> OpticalOp {
    OpticalOp::CreateVt {
        subcarrier: sel.subcarrier,
        modulator: sel.modulator,
        service: service.clone(),
        path: sel.path.clone(),
        center: sel.center,
        slots: sel.slots.clone(),
    }
}

fn join(ids: &[ServiceId]) -> String {
    ids.iter().map(|i| i.0.as_str()).collect::<Vec<_>>().join("+")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ethernet::EthSwitch;
    use crate::optical::{testbed_network, LinkSpec, OpticalNetwork};
    use crate::spectrum::ModulationFormat;
    use crate::vbvt::Vbvt;

    fn plant() -> Plant {
        Plant::new(EthSwitch::new(), Vbvt::testbed(), testbed_network())
    }

    fn two_node(osnr_db: f64) -> Plant {
        let net = OpticalNetwork::new(
            ["A", "B"],
            &[LinkSpec { name: "AB".into(), a: "A".into(), b: "B".into(), length_km: 50.0, osnr_db }],
            SpectrumWindow::default(),
        )
        .unwrap();
        Plant::new(EthSwitch::new(), Vbvt::testbed(), net)
    }

    fn inputs(p: &Plant, src: &str, dst: &str) -> SelectionInputs {
        SelectionInputs::snapshot(p, &NodeId::from(src), &NodeId::from(dst), &[]).unwrap()
    }

    fn gbps(g: f64) -> Rate {
        Rate::from_gbps(g).unwrap()
    }

    fn format_of(sel: &Selection) -> (ModulationFormat, f64) {
        (sel.profile.format, sel.profile.baud_gbd)
    }

    #[test]
    fn forty_gig_on_a_clean_path_is_qpsk() {
        let p = two_node(24.0);
        let sel = select_resources(&inputs(&p, "A", "B"), &Demand::rate(gbps(40.0)), 1.0).unwrap();
        assert_eq!(format_of(&sel), (ModulationFormat::PmQpsk, 10.0));
        assert_eq!(sel.slots.len(), 1);
        assert_eq!(sel.subcarrier, SubcarrierId(0));
    }

    #[test]
    fn forty_gig_at_twenty_db_without_qpsk_is_bpsk40() {
        let p = two_node(20.0);
        let mut inp = inputs(&p, "A", "B");
        inp.modulators.retain(|(_, m)| m.format != ModulationFormat::PmQpsk);
        let sel = select_resources(&inp, &Demand::rate(gbps(40.0)), 1.0).unwrap();
        assert_eq!(format_of(&sel), (ModulationFormat::Bpsk, 40.0));
        assert_eq!(sel.slots.len(), 4);
    }

    #[test]
    fn seven_db_path_is_infeasible() {
        let p = two_node(7.0);
        let inp = inputs(&p, "A", "B");
        let d = Demand::rate(gbps(40.0));
        assert!(select_resources(&inp, &d, 1.0).is_none());
        assert_eq!(rejection_reason(&inp, &d, 1.0), RejectReason::Osnr);
    }

    #[test]
    fn latency_bound_skips_long_paths() {
        let p = plant();
        let mut d = Demand::rate(gbps(10.0));
        d.latency_ms = Some(0.1);
        assert!(select_resources(&inputs(&p, "N1", "N2"), &d, 1.0).is_none());
        assert_eq!(rejection_reason(&inputs(&p, "N1", "N2"), &d, 1.0), RejectReason::Path);
        d.latency_ms = Some(0.25);
        let sel = select_resources(&inputs(&p, "N1", "N2"), &d, 1.0).unwrap();
        assert_eq!(sel.path.total_length_km, 50.0);
    }

    #[test]
    fn preferred_subcarrier_first() {
        let p = plant();
        let mut d = Demand::rate(gbps(40.0));
        d.preferred_subcarrier = Some(SubcarrierId(11));
        assert_eq!(select_resources(&inputs(&p, "N1", "N2"), &d, 1.0).unwrap().subcarrier, SubcarrierId(11));
    }

    fn request(id: &str, in_port: u16, rate: f64) -> ServiceRequest {
        ServiceRequest {
            id: id.into(),
            src: "N1".into(),
            dst: "N2".into(),
            in_port,
            dst_mac: "02:00:00:00:00:02".parse().unwrap(),
            rate: gbps(rate),
            latency_ms: None,
            preferred_subcarrier: None,
        }
    }

    fn manager(pool: &[u16]) -> VonManager {
        VonManager::new(ManagerConfig { egress_pool: pool.to_vec(), ..Default::default() })
    }

    #[test]
    fn two_services_get_independent_ports_and_vts() {
        let mut p = plant();
        let mut c = Controller::new();
        let mut m = manager(&[26, 28]);
        m.admit_service(&mut p, &mut c, &request("A", 25, 8.6), 1).unwrap().unwrap();
        m.admit_service(&mut p, &mut c, &request("B", 27, 7.2), 1).unwrap().unwrap();
        let a = m.service(&"A".into()).unwrap();
        let b = m.service(&"B".into()).unwrap();
        assert_eq!((a.out_port, b.out_port), (Some(26), Some(28)));
        assert_ne!(a.vt, b.vt);
        assert_eq!(c.log().len(), 4);
        m.check_services(&p).unwrap();
        p.check_consistency().unwrap();
    }

    #[test]
    fn rates_above_ten_take_qsfp() {
        let p = plant();
        let m = manager(&[26, 50]);
        assert_eq!(m.plan_admission(&p, &request("X", 25, 35.0)).unwrap().out_port, Some(50));
        assert_eq!(m.plan_admission(&p, &request("Y", 25, 5.0)).unwrap().out_port, Some(26));
        let m = manager(&[50]);
        assert_eq!(m.plan_admission(&p, &request("Z", 25, 5.0)).unwrap().out_port, Some(50));
        let m = manager(&[26]);
        assert_eq!(m.plan_admission(&p, &request("W", 25, 35.0)).unwrap_err(), RejectReason::Ports);
    }

    #[test]
    fn rejection_reasons() {
        let mut p = plant();
        let mut c = Controller::new();
        let mut m = manager(&(1..=20).collect::<Vec<_>>());
        for i in 0..6 {
            m.admit_service(&mut p, &mut c, &request(&format!("S{i}"), 30 + i, 5.0), 1).unwrap().unwrap();
        }
        let r = m.admit_service(&mut p, &mut c, &request("S6", 40, 5.0), 1).unwrap();
        assert_eq!(r, Err(RejectReason::Modulators));
        assert_eq!(m.log().last().unwrap().outcome, "rejected");
        let m = manager(&[]);
        assert_eq!(m.plan_admission(&p, &request("S7", 41, 5.0)).unwrap_err(), RejectReason::Ports);
    }

    #[test]
    fn subcarrier_exhaustion() {
        let mut p = Plant::new(
            EthSwitch::new(),
            Vbvt::new(
                crate::vbvt::SubcarrierPool::generate(Frequency::from_thz(193.3529).unwrap(), 20.0, 1).unwrap(),
                crate::vbvt::ModulatorPool::from_catalog(&crate::spectrum::ModulationCatalog::testbed()).unwrap(),
            ),
            testbed_network(),
        );
        let mut c = Controller::new();
        let mut m = manager(&[1, 2]);
        m.admit_service(&mut p, &mut c, &request("A", 25, 5.0), 1).unwrap().unwrap();
        assert_eq!(m.plan_admission(&p, &request("B", 27, 5.0)).unwrap_err(), RejectReason::Subcarriers);
    }

    #[test]
    fn release_returns_everything() {
        let mut p = plant();
        let fresh_wss = p.vbvt.wss().sorted();
        let mut c = Controller::new();
        let mut m = manager(&[26]);
        m.admit_service(&mut p, &mut c, &request("A", 25, 8.6), 1).unwrap().unwrap();
        assert!(m.release_service(&mut p, &mut c, &"A".into(), 2).unwrap());
        assert!(m.services().is_empty());
        assert_eq!(p.vbvt.wss().sorted(), fresh_wss);
        assert_eq!(p.switch.rules().count(), 0);
        assert_eq!(p.optical.channels().count(), 0);
        assert!(!m.release_service(&mut p, &mut c, &"A".into(), 3).unwrap());
    }

    #[test]
    fn aggregation_keeps_busier_port_and_reuses_a_vt() {
        let mut p = plant();
        let mut c = Controller::new();
        let mut m = manager(&[26, 28]);
        m.admit_service(&mut p, &mut c, &request("A", 25, 8.6), 1).unwrap().unwrap();
        m.admit_service(&mut p, &mut c, &request("B", 27, 7.2), 1).unwrap().unwrap();
        let members: Vec<ServiceId> = vec!["A".into(), "B".into()];
        assert!(m.plan_aggregation(&p, &members, &[gbps(8.6), gbps(7.2)]).is_err());
        let d = m.plan_aggregation(&p, &members, &[gbps(2.0), gbps(3.4)]).unwrap();
        assert_eq!(d.out_port, Some(28));
        assert_eq!(d.rate, gbps(5.4));
        assert_eq!(d.reuse, m.service(&"A".into()).unwrap().vt);
        assert_eq!(d.retire, vec![m.service(&"B".into()).unwrap().vt.unwrap()]);
        assert_eq!(d.plan.eth.len(), 2);
        verify_decision(&p, &d, 1.0).unwrap();
    }

    #[test]
    fn osnr_replan_fails_when_nothing_fits() {
        let mut p = two_node(24.0);
        let mut c = Controller::new();
        let mut m = manager(&[50]);
        let mut req = request("A", 25, 40.0);
        req.src = "A".into();
        req.dst = "B".into();
        m.admit_service(&mut p, &mut c, &req, 1).unwrap().unwrap();
        let l = p.optical.links()[0].id;
        let x = p.optical.noise_addend(l, crate::optical::NoiseLevel::TargetDb(12.0)).unwrap();
        p.optical.inject_noise_event(l, x, 2).unwrap();
        p.optical.advance_to(2);
        let mut db = MonitorDb::new();
        let none = BTreeSet::new();
        crate::monitor::poll_tick(
            &mut db,
            &crate::monitor::Devices {
                optical: &p.optical,
                nics: &[],
                switch: &p.switch,
                ingress_ports: &none,
                egress_ports: &none,
            },
            2,
            1,
        )
        .unwrap();
        assert_eq!(m.replan_osnr_drop(&mut p, &mut c, &db, 2).unwrap(), 0);
        let s = m.service(&"A".into()).unwrap();
        assert_eq!(s.state, ServiceState::Failed);
        assert!(s.channel.is_some());
        m.check_services(&p).unwrap();
        assert_eq!(m.log().last().unwrap().outcome, "failed");
        // Not retried.
        assert_eq!(m.replan_osnr_drop(&mut p, &mut c, &db, 2).unwrap(), 0);
        assert_eq!(m.log().iter().filter(|r| r.outcome == "failed").count(), 1);
    }
}

//! Optical plane: topology, per-link spectrum occupancy, the OSNR model and
//! the emulated wave analyser.
//!
//! Link OSNR is a configured baseline plus a linear noise addend that noise
//! events change over time. Path OSNR accumulates link noise inverse-linearly.

mod ksp;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectrum::{self, Frequency, SlotIndex};
use crate::units::{db_to_linear, linear_to_db, Tick};

pub const DEFAULT_LATENCY_MS_PER_KM: f64 = 0.005;
pub const DEFAULT_K_PATHS: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum OpticalError {
    #[error("unknown node '{0}'")]
    UnknownNode(String),
    #[error("unknown link '{0}'")]
    UnknownLink(String),
    #[error("source and destination are both '{0}'")]
    SameEndpoints(String),
    #[error("link '{0}': {1}")]
    BadLink(String, String),
    #[error("duplicate {0} '{1}'")]
    Duplicate(&'static str, String),
    #[error("slot {slot} on link '{link}' is held by channel {owner}")]
    SlotBusy { link: String, slot: SlotIndex, owner: ChannelId },
    #[error("slot {0} lies outside the spectrum window")]
    OutsideWindow(SlotIndex),
    #[error("empty path")]
    EmptyPath,
    #[error("no active channel {0}")]
    UnknownChannel(ChannelId),
    #[error("noise level must be non-negative and finite, got {0}")]
    NegativeNoise(f64),
    #[error("target OSNR {target} dB on link '{link}' exceeds its baseline {baseline} dB")]
    TargetAboveBaseline { link: String, target: f64, baseline: f64 },
    #[error(transparent)]
    Spectrum(#[from] spectrum::SpectrumError),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub String);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinkId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChannelId(pub u32);

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ch{}", self.0)
    }
}

/// The slot range every link offers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpectrumWindow {
    pub first: i64,
    pub count: u32,
}

impl Default for SpectrumWindow {
    /// 384 slots from the anchor: 193.1 to 197.9 THz.
    fn default() -> Self {
        SpectrumWindow { first: 0, count: 384 }
    }
}

impl SpectrumWindow {
    pub fn contains(&self, s: SlotIndex) -> bool {
        s.0 >= self.first && s.0 < self.first + self.count as i64
    }

    pub fn slots(&self) -> impl Iterator<Item = SlotIndex> {
        (self.first..self.first + self.count as i64).map(SlotIndex)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub name: String,
    pub a: String,
    pub b: String,
    pub length_km: f64,
    pub osnr_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: LinkId,
    pub name: String,
    pub endpoints: (NodeId, NodeId),
    length_m: u64,
    pub baseline_osnr_db: f64,
    pub extra_noise: f64,
    spectrum: BTreeMap<SlotIndex, ChannelId>,
}

impl Link {
    pub fn length_km(&self) -> f64 {
        self.length_m as f64 / 1000.0
    }

    pub fn osnr_db(&self) -> f64 {
        link_osnr(self.baseline_osnr_db, self.extra_noise)
    }

    pub fn owner(&self, slot: SlotIndex) -> Option<ChannelId> {
        self.spectrum.get(&slot).copied()
    }

    pub fn is_free(&self, slot: SlotIndex) -> bool {
        !self.spectrum.contains_key(&slot)
    }

    pub fn occupied(&self) -> usize {
        self.spectrum.len()
    }

    pub fn occupancy(&self) -> &BTreeMap<SlotIndex, ChannelId> {
        &self.spectrum
    }
}

/// Link OSNR from its baseline and the injected linear noise.
pub fn link_osnr(baseline_db: f64, extra_noise: f64) -> f64 {
    linear_to_db(1.0 / (db_to_linear(-baseline_db) + extra_noise))
}

/// Cascade of per-link OSNR values: noise adds linearly.
pub fn path_osnr<I: IntoIterator<Item = f64>>(link_osnrs: I) -> Result<f64, OpticalError> {
    let mut noise = 0.0;
    let mut n = 0;
    for osnr in link_osnrs {
        noise += db_to_linear(-osnr);
        n += 1;
    }
    if n == 0 {
        return Err(OpticalError::EmptyPath);
    }
    Ok(linear_to_db(1.0 / noise))
}

/// Quantises a reading to the analyser's 0.01 dB display step.
pub fn quantize_osnr(db: f64) -> f64 {
    (db * 100.0).round() / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathCandidate {
    pub nodes: Vec<NodeId>,
    pub links: Vec<LinkId>,
    pub total_length_km: f64,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRecord {
    pub id: ChannelId,
    pub path: PathCandidate,
    pub center: Frequency,
    pub slots: Vec<SlotIndex>,
    pub current_osnr_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseLevel {
    /// Linear noise addend, relative to a unit signal.
    Linear(f64),
    /// The addend that brings the link to this OSNR.
    TargetDb(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseEvent {
    pub tick: Tick,
    pub link: LinkId,
    pub addend: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelReading {
    pub channel: ChannelId,
    pub osnr_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkUtilisation {
    pub link: LinkId,
    pub occupied: usize,
    pub total: usize,
    pub utilisation: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnalyzerSnapshot {
    pub channels: Vec<ChannelReading>,
    pub links: Vec<LinkUtilisation>,
}

/// Topology, channels and the pending noise schedule.
#[derive(Debug, Clone)]
pub struct OpticalNetwork {
    nodes: BTreeSet<NodeId>,
    links: Vec<Link>,
    window: SpectrumWindow,
    latency_ms_per_km: f64,
    k_paths: usize,
    candidates: BTreeMap<(NodeId, NodeId), Vec<PathCandidate>>,
    channels: BTreeMap<ChannelId, ChannelRecord>,
    next_channel: u32,
    pending_noise: Vec<NoiseEvent>,
    now: Tick,
}

impl OpticalNetwork {
    pub fn new(
        nodes: impl IntoIterator<Item = impl Into<String>>,
        links: &[LinkSpec],
        window: SpectrumWindow,
    ) -> Result<Self, OpticalError> {
        Self::with_options(nodes, links, window, DEFAULT_K_PATHS, DEFAULT_LATENCY_MS_PER_KM)
    }

    pub fn with_options(
        nodes: impl IntoIterator<Item = impl Into<String>>,
        links: &[LinkSpec],
        window: SpectrumWindow,
        k_paths: usize,
        latency_ms_per_km: f64,
    ) -> Result<Self, OpticalError> {
        let mut node_set = BTreeSet::new();
        for n in nodes {
            let n = NodeId(n.into());
            if !node_set.insert(n.clone()) {
                return Err(OpticalError::Duplicate("node", n.0));
            }
        }
        let mut built: Vec<Link> = Vec::with_capacity(links.len());
        for (i, spec) in links.iter().enumerate() {
            for end in [&spec.a, &spec.b] {
                if !node_set.contains(&NodeId(end.clone())) {
                    return Err(OpticalError::UnknownNode(end.clone()));
                }
            }
            if spec.a == spec.b {
                return Err(OpticalError::BadLink(spec.name.clone(), "both ends on one node".into()));
            }
            if !spec.length_km.is_finite() || spec.length_km <= 0.0 {
                return Err(OpticalError::BadLink(spec.name.clone(), "length must be positive".into()));
            }
            if !spec.osnr_db.is_finite() {
                return Err(OpticalError::BadLink(spec.name.clone(), "baseline OSNR must be finite".into()));
            }
            if built.iter().any(|l| l.name == spec.name) {
                return Err(OpticalError::Duplicate("link", spec.name.clone()));
            }
            built.push(Link {
                id: LinkId(i as u32),
                name: spec.name.clone(),
                endpoints: (NodeId(spec.a.clone()), NodeId(spec.b.clone())),
                length_m: (spec.length_km * 1000.0).round() as u64,
                baseline_osnr_db: spec.osnr_db,
                extra_noise: 0.0,
                spectrum: BTreeMap::new(),
            });
        }
        let mut net = OpticalNetwork {
            nodes: node_set,
            links: built,
            window,
            latency_ms_per_km,
            k_paths,
            candidates: BTreeMap::new(),
            channels: BTreeMap::new(),
            next_channel: 1,
            pending_noise: Vec::new(),
            now: 0,
        };
        net.precompute_candidates();
        Ok(net)
    }

    fn precompute_candidates(&mut self) {
        let nodes: Vec<NodeId> = self.nodes.iter().cloned().collect();
        for src in &nodes {
            for dst in &nodes {
                if src == dst {
                    continue;
                }
                let paths = self.k_shortest_paths(src, dst, self.k_paths).expect("known nodes");
                self.candidates.insert((src.clone(), dst.clone()), paths);
            }
        }
    }

    fn graph(&self) -> (Vec<NodeId>, ksp::Graph) {
        let index: Vec<NodeId> = self.nodes.iter().cloned().collect();
        let pos = |n: &NodeId| index.binary_search(n).unwrap();
        let mut adj = vec![Vec::new(); index.len()];
        for l in &self.links {
            let (a, b) = (pos(&l.endpoints.0), pos(&l.endpoints.1));
            adj[a].push((b, l.id.0, l.length_m));
            adj[b].push((a, l.id.0, l.length_m));
        }
        (index, ksp::Graph { adj })
    }

    /// Up to `k` loop-free paths, shortest first.
    pub fn k_shortest_paths(&self, src: &NodeId, dst: &NodeId, k: usize) -> Result<Vec<PathCandidate>, OpticalError> {
        for n in [src, dst] {
            if !self.nodes.contains(n) {
                return Err(OpticalError::UnknownNode(n.0.clone()));
            }
        }
        if src == dst {
            return Err(OpticalError::SameEndpoints(src.0.clone()));
        }
        let (index, g) = self.graph();
        let s = index.binary_search(src).unwrap();
        let d = index.binary_search(dst).unwrap();
        Ok(ksp::yen(&g, s, d, k)
            .into_iter()
            .map(|raw| {
                let km = raw.cost as f64 / 1000.0;
                PathCandidate {
                    nodes: raw.nodes.iter().map(|&i| index[i].clone()).collect(),
                    links: raw.links.iter().map(|&l| LinkId(l)).collect(),
                    total_length_km: km,
                    latency_ms: km * self.latency_ms_per_km,
                }
            })
            .collect())
    }

    /// Precomputed candidates for a node pair (empty when unreachable or unknown).
    pub fn candidates(&self, src: &NodeId, dst: &NodeId) -> &[PathCandidate] {
        self.candidates.get(&(src.clone(), dst.clone())).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeId> {
        self.nodes.iter()
    }

    pub fn has_node(&self, n: &NodeId) -> bool {
        self.nodes.contains(n)
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> Option<&Link> {
        self.links.get(id.0 as usize)
    }

    pub fn link_by_name(&self, name: &str) -> Option<&Link> {
        self.links.iter().find(|l| l.name == name)
    }

    pub fn window(&self) -> SpectrumWindow {
        self.window
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    fn link_checked(&self, id: LinkId) -> Result<&Link, OpticalError> {
        self.link(id).ok_or_else(|| OpticalError::UnknownLink(format!("#{}", id.0)))
    }

    pub fn link_osnr(&self, id: LinkId) -> Result<f64, OpticalError> {
        Ok(self.link_checked(id)?.osnr_db())
    }

    pub fn path_osnr(&self, links: &[LinkId]) -> Result<f64, OpticalError> {
        let values = links.iter().map(|&l| self.link_osnr(l)).collect::<Result<Vec<_>, _>>()?;
        path_osnr(values)
    }

    /// Whether every slot is inside the window and free on every link.
    pub fn slots_free(&self, links: &[LinkId], slots: &[SlotIndex]) -> bool {
        slots.iter().all(|s| self.window.contains(*s))
            && links.iter().all(|&l| self.link(l).is_some_and(|link| slots.iter().all(|s| link.is_free(*s))))
    }

    /// Lowest-index run of `n_slots` contiguous slots free on every link.
    pub fn first_fit_channel(&self, links: &[LinkId], n_slots: u32) -> Option<(Frequency, Vec<SlotIndex>)> {
        if n_slots == 0 || n_slots > self.window.count {
            return None;
        }
        let end = self.window.first + self.window.count as i64;
        let mut start = self.window.first;
        while start + n_slots as i64 <= end {
            let run: Vec<SlotIndex> = (start..start + n_slots as i64).map(SlotIndex).collect();
            match run.iter().rposition(|s| !links.iter().all(|&l| self.links[l.0 as usize].is_free(*s))) {
                None => return Some((spectrum::run_center(run[0], n_slots), run)),
                Some(blocked) => start += blocked as i64 + 1,
            }
        }
        None
    }

    /// Claims `slots` on every link of `path`; nothing changes on error.
    pub fn allocate_channel(
        &mut self,
        path: &PathCandidate,
        center: Frequency,
        slots: &[SlotIndex],
    ) -> Result<ChannelId, OpticalError> {
        if path.links.is_empty() {
            return Err(OpticalError::EmptyPath);
        }
        for &l in &path.links {
            let link = self.link_checked(l)?;
            for &s in slots {
                if !self.window.contains(s) {
                    return Err(OpticalError::OutsideWindow(s));
                }
                if let Some(owner) = link.owner(s) {
                    return Err(OpticalError::SlotBusy { link: link.name.clone(), slot: s, owner });
                }
            }
        }
        let id = ChannelId(self.next_channel);
        self.next_channel += 1;
        for &l in &path.links {
            let link = &mut self.links[l.0 as usize];
            for &s in slots {
                link.spectrum.insert(s, id);
            }
        }
        let osnr = self.path_osnr(&path.links)?;
        self.channels
            .insert(id, ChannelRecord { id, path: path.clone(), center, slots: slots.to_vec(), current_osnr_db: osnr });
        Ok(id)
    }

    pub fn release_channel(&mut self, id: ChannelId) -> Result<ChannelRecord, OpticalError> {
        let record = self.channels.remove(&id).ok_or(OpticalError::UnknownChannel(id))?;
        for &l in &record.path.links {
            let link = &mut self.links[l.0 as usize];
            for s in &record.slots {
                link.spectrum.remove(s);
            }
        }
        Ok(record)
    }

    pub fn channel(&self, id: ChannelId) -> Option<&ChannelRecord> {
        self.channels.get(&id)
    }

    pub fn channels(&self) -> impl Iterator<Item = &ChannelRecord> {
        self.channels.values()
    }

    /// Per-link occupancy maps, for state comparison.
    pub fn spectrum_maps(&self) -> Vec<BTreeMap<SlotIndex, ChannelId>> {
        self.links.iter().map(|l| l.spectrum.clone()).collect()
    }

    /// Converts a noise level into a linear addend for `link`.
    pub fn noise_addend(&self, link: LinkId, level: NoiseLevel) -> Result<f64, OpticalError> {
        let l = self.link_checked(link)?;
        let addend = match level {
            NoiseLevel::Linear(x) => x,
            NoiseLevel::TargetDb(t) => {
                if t > l.baseline_osnr_db {
                    return Err(OpticalError::TargetAboveBaseline {
                        link: l.name.clone(),
                        target: t,
                        baseline: l.baseline_osnr_db,
                    });
                }
                (db_to_linear(-t) - db_to_linear(-l.baseline_osnr_db)).max(0.0)
            }
        };
        if !addend.is_finite() || addend < 0.0 {
            return Err(OpticalError::NegativeNoise(addend));
        }
        Ok(addend)
    }

    /// Schedules `link`'s injected noise to become `extra_noise_linear` at `at_tick`.
    /// Events at or before the current tick take effect immediately.
    pub fn inject_noise_event(
        &mut self,
        link: LinkId,
        extra_noise_linear: f64,
        at_tick: Tick,
    ) -> Result<(), OpticalError> {
        self.link_checked(link)?;
        if !extra_noise_linear.is_finite() || extra_noise_linear < 0.0 {
            return Err(OpticalError::NegativeNoise(extra_noise_linear));
        }
        self.pending_noise.push(NoiseEvent { tick: at_tick, link, addend: extra_noise_linear });
        self.pending_noise.sort_by_key(|e| e.tick);
        self.apply_due_noise();
        Ok(())
    }

    /// Moves the clock to `tick` and applies every noise event that is due.
    pub fn advance_to(&mut self, tick: Tick) {
        self.now = tick;
        self.apply_due_noise();
    }

    fn apply_due_noise(&mut self) {
        let now = self.now;
        let due: Vec<NoiseEvent> = self.pending_noise.iter().filter(|e| e.tick <= now).copied().collect();
        if due.is_empty() {
            return;
        }
        self.pending_noise.retain(|e| e.tick > now);
        for e in due {
            self.links[e.link.0 as usize].extra_noise = e.addend;
        }
        self.refresh_channel_osnr();
    }

    fn refresh_channel_osnr(&mut self) {
        let values: Vec<(ChannelId, f64)> = self
            .channels
            .values()
            .map(|c| (c.id, self.path_osnr(&c.path.links).expect("channel links exist")))
            .collect();
        for (id, v) in values {
            self.channels.get_mut(&id).unwrap().current_osnr_db = v;
        }
    }

    /// What the wave analyser reports at the current tick.
    pub fn wave_analyzer_scan(&self) -> AnalyzerSnapshot {
        let total = self.window.count as usize;
        AnalyzerSnapshot {
            channels: self
                .channels
                .values()
                .map(|c| ChannelReading { channel: c.id, osnr_db: quantize_osnr(c.current_osnr_db) })
                .collect(),
            links: self
                .links
                .iter()
                .map(|l| LinkUtilisation {
                    link: l.id,
                    occupied: l.occupied(),
                    total,
                    utilisation: l.occupied() as f64 / total as f64,
                })
                .collect(),
        }
    }

    /// Checks slot ownership against the channel table.
    pub fn check_consistency(&self) -> Result<(), String> {
        for c in self.channels.values() {
            for &l in &c.path.links {
                let link = &self.links[l.0 as usize];
                for s in &c.slots {
                    if link.owner(*s) != Some(c.id) {
                        return Err(format!("{} slot {} on {} not held by it", c.id, s, link.name));
                    }
                }
            }
        }
        for link in &self.links {
            for (s, owner) in &link.spectrum {
                let ok =
                    self.channels.get(owner).is_some_and(|c| c.path.links.contains(&link.id) && c.slots.contains(s));
                if !ok {
                    return Err(format!("slot {} on {} held by stale owner {}", s, link.name, owner));
                }
            }
        }
        Ok(())
    }
}

/// The four-node, five-link mesh used by the testbed: three 50 km links,
/// one 130 km and one 100 km, with every link at a 24 dB baseline.
pub fn testbed_links() -> Vec<LinkSpec> {
    let l = |name: &str, a: &str, b: &str, km: f64| LinkSpec {
        name: name.into(),
        a: a.into(),
        b: b.into(),
        length_km: km,
        osnr_db: 24.0,
    };
    vec![
        l("L12", "N1", "N2", 50.0),
        l("L23", "N2", "N3", 50.0),
        l("L34", "N3", "N4", 50.0),
        l("L13", "N1", "N3", 130.0),
        l("L24", "N2", "N4", 100.0),
    ]
}

pub fn testbed_network() -> OpticalNetwork {
    OpticalNetwork::new(["N1", "N2", "N3", "N4"], &testbed_links(), SpectrumWindow::default()).expect("valid testbed")
}

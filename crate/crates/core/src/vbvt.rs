//! The virtualise-able transceiver: subcarrier pool, modulator pool, the 4x16
//! WSS that joins them, and the lifecycle of virtual transceivers.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectrum::{Frequency, ModulationCatalog, ModulationProfile, SpectrumError, UNITS_PER_GHZ};
use crate::units::ServiceId;

pub const DEFAULT_SUBCARRIER_COUNT: u32 = 25;
pub const DEFAULT_SUBCARRIER_SPACING_GHZ: f64 = 20.0;
/// 193.3529 THz, the comb line nearest 1550.50 nm.
pub const DEFAULT_SUBCARRIER_ANCHOR_UNITS: u64 = 1_933_529_000;

pub const WSS_INPUTS: std::ops::RangeInclusive<u16> = 10..=13;
pub const WSS_OUTPUTS: std::ops::RangeInclusive<u16> = 1..=16;
/// Input A, where the subcarrier comb enters.
pub const COMB_INPUT_PORT: u16 = 10;

#[derive(Debug, Error, PartialEq)]
pub enum VbvtError {
    #[error("subcarrier {0} is busy")]
    SubcarrierBusy(SubcarrierId),
    #[error("modulator {0} is busy")]
    ModulatorBusy(ModulatorId),
    #[error("no subcarrier {0}")]
    UnknownSubcarrier(SubcarrierId),
    #[error("no modulator {0}")]
    UnknownModulator(ModulatorId),
    #[error("no active virtual transceiver {0}")]
    UnknownVt(VtId),
    #[error("WSS input port {0} out of range 10-13")]
    BadInputPort(u16),
    #[error("WSS output port {0} out of range 1-16")]
    BadOutputPort(u16),
    #[error("filter width must be positive")]
    ZeroWidth,
    #[error("passband {new} overlaps {existing} on output {port}")]
    PassbandOverlap { port: u16, new: String, existing: String },
    #[error("no such cross-connect {0}")]
    UnknownCrossConnect(String),
    #[error("modulator pool has {0} instances but the WSS has 16 outputs")]
    PoolTooLarge(u32),
    #[error("bad input port label '{0}'")]
    BadPortLabel(String),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubcarrierId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModulatorId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VtId(pub u32);

impl fmt::Display for SubcarrierId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sc{}", self.0)
    }
}

impl fmt::Display for ModulatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "mod{}", self.0)
    }
}

impl fmt::Display for VtId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "vt{}", self.0)
    }
}

/// Parses a WSS input port given as a letter A-D or its number 10-13.
pub fn parse_input_port(label: &str) -> Result<u16, VbvtError> {
    let label = label.trim();
    match label.to_ascii_uppercase().as_str() {
        "A" => Ok(10),
        "B" => Ok(11),
        "C" => Ok(12),
        "D" => Ok(13),
        other => match other.parse::<u16>() {
            Ok(p) if WSS_INPUTS.contains(&p) => Ok(p),
            _ => Err(VbvtError::BadPortLabel(label.to_string())),
        },
    }
}

pub fn input_port_label(port: u16) -> Option<char> {
    WSS_INPUTS.contains(&port).then(|| (b'A' + (port - 10) as u8) as char)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subcarrier {
    pub id: SubcarrierId,
    pub frequency: Frequency,
    pub owner: Option<VtId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubcarrierPool {
    subcarriers: Vec<Subcarrier>,
}

impl SubcarrierPool {
    /// `count` comb lines at `spacing_ghz` upward from `anchor`.
    pub fn generate(anchor: Frequency, spacing_ghz: f64, count: u32) -> Result<Self, VbvtError> {
        let step = (spacing_ghz * UNITS_PER_GHZ as f64).round() as u64;
        if step == 0 {
            return Err(SpectrumError::BadWidth(spacing_ghz).into());
        }
        let subcarriers = (0..count)
            .map(|i| Subcarrier {
                id: SubcarrierId(i),
                frequency: Frequency::from_units(anchor.units() + i as u64 * step).expect("positive"),
                owner: None,
            })
            .collect();
        Ok(SubcarrierPool { subcarriers })
    }

    pub fn testbed() -> Self {
        let anchor = Frequency::from_units(DEFAULT_SUBCARRIER_ANCHOR_UNITS).unwrap();
        Self::generate(anchor, DEFAULT_SUBCARRIER_SPACING_GHZ, DEFAULT_SUBCARRIER_COUNT).unwrap()
    }

    pub fn get(&self, id: SubcarrierId) -> Option<&Subcarrier> {
        self.subcarriers.get(id.0 as usize)
    }

    pub fn all(&self) -> &[Subcarrier] {
        &self.subcarriers
    }

    pub fn len(&self) -> usize {
        self.subcarriers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subcarriers.is_empty()
    }

    /// Comb line closest to `f`; ties go to the lower id.
    pub fn nearest(&self, f: Frequency) -> Option<SubcarrierId> {
        self.subcarriers.iter().min_by_key(|s| s.frequency.units().abs_diff(f.units())).map(|s| s.id)
    }

    pub fn by_frequency(&self, f: Frequency) -> Option<SubcarrierId> {
        self.subcarriers.iter().find(|s| s.frequency == f).map(|s| s.id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModulatorInstance {
    pub id: ModulatorId,
    pub profile: ModulationProfile,
    /// WSS-1 output port the modulator hangs off.
    pub wss_port: u16,
    pub owner: Option<VtId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModulatorPool {
    instances: Vec<ModulatorInstance>,
}

impl ModulatorPool {
    /// Instance `i` of the expanded catalog gets id `i` and WSS output `i + 1`.
    pub fn from_catalog(catalog: &ModulationCatalog) -> Result<Self, VbvtError> {
        let n = catalog.instance_count();
        if n > *WSS_OUTPUTS.end() as u32 {
            return Err(VbvtError::PoolTooLarge(n));
        }
        let instances = catalog
            .instances()
            .enumerate()
            .map(|(i, p)| ModulatorInstance {
                id: ModulatorId(i as u32),
                profile: p.clone(),
                wss_port: i as u16 + 1,
                owner: None,
            })
            .collect();
        Ok(ModulatorPool { instances })
    }

    pub fn get(&self, id: ModulatorId) -> Option<&ModulatorInstance> {
        self.instances.get(id.0 as usize)
    }

    pub fn all(&self) -> &[ModulatorInstance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn by_port(&self, port: u16) -> Option<&ModulatorInstance> {
        self.instances.iter().find(|m| m.wss_port == port)
    }
}

/// One WSS passband: `center` ± `filter_width_mhz / 2` from `in_port` to `out_port`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CrossConnect {
    pub in_port: u16,
    pub out_port: u16,
    pub center: Frequency,
    pub filter_width_mhz: u32,
}

impl CrossConnect {
    /// Passband edges in doubled 100 kHz units.
    fn edges2(&self) -> (u64, u64) {
        let c2 = 2 * self.center.units();
        let w = self.filter_width_mhz as u64 * 10;
        (c2.saturating_sub(w), c2 + w)
    }

    pub fn overlaps(&self, other: &CrossConnect) -> bool {
        let (a0, a1) = self.edges2();
        let (b0, b1) = other.edges2();
        a0.max(b0) < a1.min(b1)
    }

    pub fn filter_width_ghz(&self) -> f64 {
        self.filter_width_mhz as f64 / 1000.0
    }
}

impl fmt::Display for CrossConnect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inp = input_port_label(self.in_port).map(String::from).unwrap_or_else(|| self.in_port.to_string());
        write!(f, "{}->{} @{} THz/{} GHz", inp, self.out_port, self.center, self.filter_width_ghz())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WssState {
    cross_connects: Vec<CrossConnect>,
}

impl WssState {
    /// Records `xc`. Re-applying an identical cross-connect is a no-op and
    /// returns `Ok(false)`.
    pub fn apply(&mut self, xc: CrossConnect) -> Result<bool, VbvtError> {
        if !WSS_INPUTS.contains(&xc.in_port) {
            return Err(VbvtError::BadInputPort(xc.in_port));
        }
        if !WSS_OUTPUTS.contains(&xc.out_port) {
            return Err(VbvtError::BadOutputPort(xc.out_port));
        }
        if xc.filter_width_mhz == 0 {
            return Err(VbvtError::ZeroWidth);
        }
        if self.cross_connects.contains(&xc) {
            return Ok(false);
        }
        if let Some(existing) = self.cross_connects.iter().find(|e| e.out_port == xc.out_port && e.overlaps(&xc)) {
            return Err(VbvtError::PassbandOverlap {
                port: xc.out_port,
                new: xc.to_string(),
                existing: existing.to_string(),
            });
        }
        self.cross_connects.push(xc);
        Ok(true)
    }

    pub fn remove(&mut self, xc: &CrossConnect) -> Result<(), VbvtError> {
        let pos = self
            .cross_connects
            .iter()
            .position(|e| e == xc)
            .ok_or_else(|| VbvtError::UnknownCrossConnect(xc.to_string()))?;
        self.cross_connects.remove(pos);
        Ok(())
    }

    pub fn cross_connects(&self) -> &[CrossConnect] {
        &self.cross_connects
    }

    /// Sorted view, for comparing device states.
    pub fn sorted(&self) -> Vec<CrossConnect> {
        let mut v = self.cross_connects.clone();
        v.sort();
        v
    }
}

/// Free-function form of [`WssState::apply`].
pub fn wss_apply(
    wss: &mut WssState,
    in_port: u16,
    out_port: u16,
    center: Frequency,
    filter_width_ghz: f64,
) -> Result<(), VbvtError> {
    if !filter_width_ghz.is_finite() || filter_width_ghz <= 0.0 {
        return Err(VbvtError::ZeroWidth);
    }
    let filter_width_mhz = (filter_width_ghz * 1000.0).round() as u32;
    wss.apply(CrossConnect { in_port, out_port, center, filter_width_mhz }).map(|_| ())
}

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualTransceiver {
    pub id: VtId,
    pub subcarrier: SubcarrierId,
    pub modulator: ModulatorId,
    pub cross_connect: CrossConnect,
    pub service: ServiceId,
}

/// The whole transceiver: pools, WSS-1 and the live virtual transceivers.
#[derive(Debug, Clone, PartialEq)]
pub struct Vbvt {
    subcarriers: SubcarrierPool,
    modulators: ModulatorPool,
    wss: WssState,
    vts: BTreeMap<VtId, VirtualTransceiver>,
    next_vt: u32,
}

impl Vbvt {
    pub fn new(subcarriers: SubcarrierPool, modulators: ModulatorPool) -> Self {
        Vbvt { subcarriers, modulators, wss: WssState::default(), vts: BTreeMap::new(), next_vt: 1 }
    }

    pub fn testbed() -> Self {
        Self::new(SubcarrierPool::testbed(), ModulatorPool::from_catalog(&ModulationCatalog::testbed()).unwrap())
    }

    pub fn subcarriers(&self) -> &SubcarrierPool {
        &self.subcarriers
    }

    pub fn modulators(&self) -> &ModulatorPool {
        &self.modulators
    }

    pub fn wss(&self) -> &WssState {
        &self.wss
    }

    pub fn wss_mut(&mut self) -> &mut WssState {
        &mut self.wss
    }

    pub fn vt(&self, id: VtId) -> Option<&VirtualTransceiver> {
        self.vts.get(&id)
    }

    pub fn vts(&self) -> impl Iterator<Item = &VirtualTransceiver> {
        self.vts.values()
    }

    /// Free subcarriers and modulators, ascending id.
    pub fn list_free_resources(&self) -> (Vec<&Subcarrier>, Vec<&ModulatorInstance>) {
        (
            self.subcarriers.all().iter().filter(|s| s.owner.is_none()).collect(),
            self.modulators.all().iter().filter(|m| m.owner.is_none()).collect(),
        )
    }

    /// The cross-connect a VT on these resources would install.
    pub fn planned_cross_connect(&self, sc: SubcarrierId, m: ModulatorId) -> Result<CrossConnect, VbvtError> {
        let sub = self.subcarriers.get(sc).ok_or(VbvtError::UnknownSubcarrier(sc))?;
        let md = self.modulators.get(m).ok_or(VbvtError::UnknownModulator(m))?;
        Ok(CrossConnect {
            in_port: COMB_INPUT_PORT,
            out_port: md.wss_port,
            center: sub.frequency,
            filter_width_mhz: (md.profile.filter_width_ghz() * 1000.0).round() as u32,
        })
    }

    pub fn create_virtual_transceiver(
        &mut self,
        sc: SubcarrierId,
        m: ModulatorId,
        service: ServiceId,
    ) -> Result<&VirtualTransceiver, VbvtError> {
        let xc = self.planned_cross_connect(sc, m)?;
        if self.subcarriers.get(sc).unwrap().owner.is_some() {
            return Err(VbvtError::SubcarrierBusy(sc));
        }
        if self.modulators.get(m).unwrap().owner.is_some() {
            return Err(VbvtError::ModulatorBusy(m));
        }
        self.wss.apply(xc)?;
        let id = VtId(self.next_vt);
        self.next_vt += 1;
        self.subcarriers.subcarriers[sc.0 as usize].owner = Some(id);
        self.modulators.instances[m.0 as usize].owner = Some(id);
        self.vts.insert(id, VirtualTransceiver { id, subcarrier: sc, modulator: m, cross_connect: xc, service });
        Ok(&self.vts[&id])
    }

    pub fn destroy_virtual_transceiver(&mut self, id: VtId) -> Result<VirtualTransceiver, VbvtError> {
        let vt = self.vts.remove(&id).ok_or(VbvtError::UnknownVt(id))?;
        self.wss.remove(&vt.cross_connect)?;
        self.subcarriers.subcarriers[vt.subcarrier.0 as usize].owner = None;
        self.modulators.instances[vt.modulator.0 as usize].owner = None;
        Ok(vt)
    }

    /// Re-labels the service a VT serves (used when a VT is shared after aggregation).
    pub fn reassign(&mut self, id: VtId, service: ServiceId) -> Result<(), VbvtError> {
        self.vts.get_mut(&id).ok_or(VbvtError::UnknownVt(id))?.service = service;
        Ok(())
    }

    /// Conservation, exclusivity, and the VT ↔ cross-connect correspondence.
    pub fn check_consistency(&self) -> Result<(), String> {
        for s in self.subcarriers.all() {
            if let Some(owner) = s.owner {
                match self.vts.get(&owner) {
                    Some(vt) if vt.subcarrier == s.id => {}
                    _ => return Err(format!("{} owned by stale {}", s.id, owner)),
                }
            }
        }
        for m in self.modulators.all() {
            if let Some(owner) = m.owner {
                match self.vts.get(&owner) {
                    Some(vt) if vt.modulator == m.id => {}
                    _ => return Err(format!("{} owned by stale {}", m.id, owner)),
                }
            }
        }
        for vt in self.vts.values() {
            if self.subcarriers.get(vt.subcarrier).and_then(|s| s.owner) != Some(vt.id) {
                return Err(format!("{} does not hold {}", vt.id, vt.subcarrier));
            }
            if self.modulators.get(vt.modulator).and_then(|m| m.owner) != Some(vt.id) {
                return Err(format!("{} does not hold {}", vt.id, vt.modulator));
            }
            if !self.wss.cross_connects().contains(&vt.cross_connect) {
                return Err(format!("{} has no installed cross-connect", vt.id));
            }
        }
        let busy_sc = self.subcarriers.all().iter().filter(|s| s.owner.is_some()).count();
        let busy_mod = self.modulators.all().iter().filter(|m| m.owner.is_some()).count();
        if busy_sc != self.vts.len() || busy_mod != self.vts.len() {
            return Err(format!(
                "{} VTs but {} busy subcarriers and {} busy modulators",
                self.vts.len(),
                busy_sc,
                busy_mod
            ));
        }
        Ok(())
    }
}

//! Applies device plans to the emulated plant, one decision at a time, and
//! keeps the byte-level message log.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use super::codec::{decode_frame, encode_frame, to_hex, CodecError, EthFlowMod, Message, WssFlowMod};
use crate::ethernet::{EthSwitch, EthernetError, FlowRule};
use crate::optical::{ChannelId, OpticalError, OpticalNetwork, PathCandidate};
use crate::spectrum::{Frequency, SlotIndex};
use crate::units::{ServiceId, Tick};
use crate::vbvt::{CrossConnect, ModulatorId, SubcarrierId, Vbvt, VbvtError, VtId, WssState};

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("switch agent: {0}")]
    Ethernet(#[from] EthernetError),
    #[error("WSS agent: {0}")]
    Vbvt(#[from] VbvtError),
    #[error("optical agent: {0}")]
    Optical(#[from] OpticalError),
    #[error("codec: {0}")]
    Codec(#[from] CodecError),
    #[error("{0} has no bound channel")]
    Unbound(VtId),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum EthOp {
    Install(FlowRule),
    Remove(FlowRule),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum OpticalOp {
    /// Build a VT and light its channel on `path` over `slots`.
    CreateVt {
        subcarrier: SubcarrierId,
        modulator: ModulatorId,
        service: ServiceId,
        #[serde(skip)]
        path: PathCandidate,
        center: Frequency,
        slots: Vec<SlotIndex>,
    },
    /// Release the VT's channel and tear it down.
    DestroyVt(VtId),
    /// Send the VT's cross-connect again; the device treats it as a no-op.
    Reassert(VtId),
    AddCrossConnect(CrossConnect),
    RemoveCrossConnect(CrossConnect),
}

/// Device operations for one decision. Ethernet operations run first, then
/// optical ones in the given order.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DevicePlan {
    pub eth: Vec<EthOp>,
    pub optical: Vec<OpticalOp>,
}

impl DevicePlan {
    pub fn is_empty(&self) -> bool {
        self.eth.is_empty() && self.optical.is_empty()
    }
}

/// Every emulated device plus the VT-to-channel bindings.
#[derive(Debug, Clone)]
pub struct Plant {
    pub switch: EthSwitch,
    pub vbvt: Vbvt,
    pub optical: OpticalNetwork,
    bindings: BTreeMap<VtId, ChannelId>,
}

impl Plant {
    pub fn new(switch: EthSwitch, vbvt: Vbvt, optical: OpticalNetwork) -> Self {
        Plant { switch, vbvt, optical, bindings: BTreeMap::new() }
    }

    pub fn channel_of(&self, vt: VtId) -> Option<ChannelId> {
        self.bindings.get(&vt).copied()
    }

    pub fn vt_of(&self, ch: ChannelId) -> Option<VtId> {
        self.bindings.iter().find(|(_, c)| **c == ch).map(|(v, _)| *v)
    }

    pub fn bindings(&self) -> &BTreeMap<VtId, ChannelId> {
        &self.bindings
    }

    /// Pool conservation, cross-connect correspondence, spectrum ownership and
    /// one live channel per VT, as wide as its modulator needs.
    pub fn check_consistency(&self) -> Result<(), String> {
        self.vbvt.check_consistency()?;
        self.optical.check_consistency()?;
        for vt in self.vbvt.vts() {
            let ch = self.bindings.get(&vt.id).ok_or_else(|| format!("{} has no channel", vt.id))?;
            let rec = self.optical.channel(*ch).ok_or_else(|| format!("{} bound to dead {}", vt.id, ch))?;
            let need = self.vbvt.modulators().get(vt.modulator).unwrap().profile.slots_needed() as usize;
            if rec.slots.len() != need {
                return Err(format!("{} spans {} slots, {} needs {}", ch, rec.slots.len(), vt.modulator, need));
            }
        }
        if self.bindings.len() != self.vbvt.vts().count() {
            return Err("binding for a destroyed VT".into());
        }
        if self.optical.channels().count() != self.bindings.len() {
            return Err("channel without a VT".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoggedMessage {
    pub tick: Tick,
    pub message: Message,
    #[serde(skip)]
    pub bytes: Vec<u8>,
}

impl fmt::Display for LoggedMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.tick, self.message.kind(), to_hex(&self.bytes))
    }
}

/// What a successful apply did.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Applied {
    pub created: Vec<(VtId, ChannelId)>,
    pub destroyed: Vec<(VtId, ChannelId)>,
    pub messages: Vec<LoggedMessage>,
}

#[derive(Debug, Clone, Default)]
pub struct Controller {
    log: Vec<LoggedMessage>,
}

impl Controller {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn log(&self) -> &[LoggedMessage] {
        &self.log
    }

    /// Applies `plan` all-or-nothing: on any agent error the plant is restored
    /// and nothing is logged.
    pub fn apply(&mut self, plant: &mut Plant, tick: Tick, plan: &DevicePlan) -> Result<Applied, ControlError> {
        let saved = plant.clone();
        match apply_inner(plant, tick, plan) {
            Ok(applied) => {
                self.log.extend(applied.messages.iter().cloned());
                Ok(applied)
            }
            Err(e) => {
                *plant = saved;
                Err(e)
            }
        }
    }
}

fn logged(tick: Tick, message: Message) -> Result<LoggedMessage, ControlError> {
    let bytes = encode_frame(&message)?;
    Ok(LoggedMessage { tick, message, bytes })
}

fn wss_msg(xc: &CrossConnect) -> Result<WssFlowMod, ControlError> {
    Ok(WssFlowMod::from_cross_connect(xc)?)
}

fn apply_inner(plant: &mut Plant, tick: Tick, plan: &DevicePlan) -> Result<Applied, ControlError> {
    let mut out = Applied::default();
    for op in &plan.eth {
        match op {
            EthOp::Install(rule) => {
                out.messages.push(logged(tick, Message::EthAdd(EthFlowMod::from(*rule)))?);
                plant.switch.install_flow_rule(*rule)?;
            }
            EthOp::Remove(rule) => {
                out.messages.push(logged(tick, Message::EthDel(EthFlowMod::from(*rule)))?);
                plant.switch.remove_by_key(rule.matcher, rule.priority)?;
            }
        }
    }
    for op in &plan.optical {
        match op {
            OpticalOp::CreateVt { subcarrier, modulator, service, path, center, slots } => {
                let xc = plant.vbvt.planned_cross_connect(*subcarrier, *modulator)?;
                out.messages.push(logged(tick, Message::WssAdd(wss_msg(&xc)?))?);
                let vt = plant.vbvt.create_virtual_transceiver(*subcarrier, *modulator, service.clone())?.id;
                let ch = plant.optical.allocate_channel(path, *center, slots)?;
                plant.bindings.insert(vt, ch);
                out.created.push((vt, ch));
            }
            OpticalOp::DestroyVt(vt) => {
                let ch = plant.bindings.remove(vt).ok_or(ControlError::Unbound(*vt))?;
                let xc = plant.vbvt.vt(*vt).ok_or(VbvtError::UnknownVt(*vt))?.cross_connect;
                out.messages.push(logged(tick, Message::WssDel(wss_msg(&xc)?))?);
                plant.optical.release_channel(ch)?;
                plant.vbvt.destroy_virtual_transceiver(*vt)?;
                out.destroyed.push((*vt, ch));
            }
            OpticalOp::Reassert(vt) => {
                let xc = plant.vbvt.vt(*vt).ok_or(VbvtError::UnknownVt(*vt))?.cross_connect;
                out.messages.push(logged(tick, Message::WssAdd(wss_msg(&xc)?))?);
                plant.vbvt.wss_mut().apply(xc)?;
            }
            OpticalOp::AddCrossConnect(xc) => {
                out.messages.push(logged(tick, Message::WssAdd(wss_msg(xc)?))?);
                plant.vbvt.wss_mut().apply(*xc)?;
            }
            OpticalOp::RemoveCrossConnect(xc) => {
                out.messages.push(logged(tick, Message::WssDel(wss_msg(xc)?))?);
                plant.vbvt.wss_mut().remove(xc)?;
            }
        }
    }
    Ok(out)
}

/// Rebuilds switch and WSS state from a message log alone.
pub fn replay(log: &[LoggedMessage]) -> Result<(EthSwitch, WssState), ControlError> {
    let mut switch = EthSwitch::new();
    let mut wss = WssState::default();
    for m in log {
        match decode_frame(&m.bytes)? {
            Message::EthAdd(f) => {
                switch.install_flow_rule(f.into())?;
            }
            Message::EthDel(f) => {
                let r = FlowRule::from(f);
                switch.remove_by_key(r.matcher, r.priority)?;
            }
            Message::WssAdd(w) => {
                wss.apply(w.to_cross_connect()?)?;
            }
            Message::WssDel(w) => wss.remove(&w.to_cross_connect()?)?,
        }
    }
    Ok((switch, wss))
}

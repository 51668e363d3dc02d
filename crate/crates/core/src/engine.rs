//! Deterministic tick loop wiring traffic, optics, monitoring, the manager and
//! the controller together.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::ethernet::{step_traffic, EthernetError, SwitchEvent, NIC_CAPACITY};
use crate::manager::{DecisionRecord, ManagerError, VonManager};
use crate::monitor::{poll_tick, Devices, MonitorDb, MonitorError};
use crate::proto::{ControlError, Controller, DevicePlan, EthOp, LoggedMessage, OpticalOp, Plant};
use crate::scenario::Scenario;
use crate::units::Tick;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("setup failed: {0}")]
    Setup(String),
    #[error("tick {tick}: invariant violated: {message}")]
    Invariant { tick: Tick, message: String },
    #[error("tick {tick}: {source}")]
    Traffic { tick: Tick, source: EthernetError },
    #[error("tick {tick}: {source}")]
    Monitor { tick: Tick, source: MonitorError },
    #[error("tick {tick}: {source}")]
    Manager { tick: Tick, source: ManagerError },
    #[error("tick {tick}: {source}")]
    Control { tick: Tick, source: ControlError },
}

/// Per-tick state of one service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ServiceRow {
    pub tick: Tick,
    pub service: String,
    pub state: &'static str,
    pub out_port: Option<u16>,
    pub vt: Option<u32>,
    pub channel: Option<u32>,
}

/// Per-tick pool occupancy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ResourceRow {
    pub tick: Tick,
    pub free_subcarriers: usize,
    pub free_modulators: usize,
    pub virtual_transceivers: usize,
    pub channels: usize,
    pub occupied_slots: usize,
    pub flow_rules: usize,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub duration: Tick,
    pub db: MonitorDb,
    pub decisions: Vec<DecisionRecord>,
    pub messages: Vec<LoggedMessage>,
    pub services: Vec<ServiceRow>,
    pub resources: Vec<ResourceRow>,
    pub events: Vec<(Tick, String)>,
    pub plant: Plant,
    pub manager: VonManager,
}

impl RunReport {
    pub fn service_rows<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a ServiceRow> + 'a {
        self.services.iter().filter(move |r| r.service == id)
    }

    pub fn resources_at(&self, tick: Tick) -> Option<&ResourceRow> {
        self.resources.iter().find(|r| r.tick == tick)
    }
}

struct Engine<'a> {
    scn: &'a Scenario,
    plant: Plant,
    ctl: Controller,
    manager: VonManager,
    db: MonitorDb,
    events: Vec<(Tick, String)>,
    manager_events_seen: usize,
    switch_conditions: BTreeSet<String>,
    services: Vec<ServiceRow>,
    resources: Vec<ResourceRow>,
}

/// Runs `scn` from tick 1 to its duration. Any invariant violation aborts the run.
pub fn run(scn: &Scenario) -> Result<RunReport, RunError> {
    let mut e = Engine {
        scn,
        plant: scn.build_plant(),
        ctl: Controller::new(),
        manager: VonManager::new(scn.manager_config()),
        db: MonitorDb::new(),
        events: Vec::new(),
        manager_events_seen: 0,
        switch_conditions: BTreeSet::new(),
        services: Vec::new(),
        resources: Vec::new(),
    };
    e.setup()?;
    for tick in 1..=scn.duration {
        e.step(tick)?;
    }
    Ok(RunReport {
        scenario: scn.name.clone(),
        seed: scn.seed,
        duration: scn.duration,
        db: e.db,
        decisions: e.manager.log().to_vec(),
        messages: e.ctl.log().to_vec(),
        services: e.services,
        resources: e.resources,
        events: e.events,
        plant: e.plant,
        manager: e.manager,
    })
}

impl Engine<'_> {
    fn setup(&mut self) -> Result<(), RunError> {
        if !self.scn.static_rules.is_empty() {
            let plan = DevicePlan {
                eth: self.scn.static_rules.iter().cloned().map(EthOp::Install).collect(),
                optical: vec![],
            };
            self.ctl.apply(&mut self.plant, 0, &plan).map_err(|e| RunError::Setup(e.to_string()))?;
            for r in &self.scn.static_rules {
                self.events.push((0, format!("static rule {} -> port {}", r.matcher, r.out_port)));
            }
        }
        for n in &self.scn.noise {
            let addend =
                self.plant.optical.noise_addend(n.link, n.level).map_err(|e| RunError::Setup(e.to_string()))?;
            self.plant
                .optical
                .inject_noise_event(n.link, addend, n.tick)
                .map_err(|e| RunError::Setup(e.to_string()))?;
        }
        Ok(())
    }

    fn step(&mut self, tick: Tick) -> Result<(), RunError> {
        let traffic = step_traffic(&mut self.plant.switch, &self.scn.schedule, tick)
            .map_err(|source| RunError::Traffic { tick, source })?;
        self.note_switch_events(tick, &traffic.events);

        self.plant.optical.advance_to(tick);
        for n in self.scn.noise.iter().filter(|n| n.tick == tick) {
            let name = &self.plant.optical.link(n.link).unwrap().name;
            let osnr = self.plant.optical.link_osnr(n.link).unwrap();
            self.events.push((tick, format!("link {name} OSNR now {osnr:.2} dB")));
        }

        let ingress = self.scn.ingress_ports();
        let egress = self.scn.egress_ports();
        let devices = Devices {
            optical: &self.plant.optical,
            nics: &traffic.nic,
            switch: &self.plant.switch,
            ingress_ports: &ingress,
            egress_ports: &egress,
        };
        poll_tick(&mut self.db, &devices, tick, self.scn.thresholds.poll_interval)
            .map_err(|source| RunError::Monitor { tick, source })?;

        for (_, xc) in self.scn.wss_static.iter().filter(|(t, _)| *t == tick) {
            let plan = DevicePlan { eth: vec![], optical: vec![OpticalOp::AddCrossConnect(*xc)] };
            self.ctl.apply(&mut self.plant, tick, &plan).map_err(|source| RunError::Control { tick, source })?;
            self.events.push((tick, format!("static cross-connect {xc}")));
        }
        for s in self.scn.services.iter().filter(|s| s.departure == Some(tick)) {
            self.manager
                .release_service(&mut self.plant, &mut self.ctl, &s.request.id, tick)
                .map_err(|source| RunError::Manager { tick, source })?;
        }
        for s in self.scn.services.iter().filter(|s| s.arrival == tick) {
            self.manager
                .admit_service(&mut self.plant, &mut self.ctl, &s.request, tick)
                .map_err(|source| RunError::Manager { tick, source })?
                .ok();
        }
        self.manager
            .replan_osnr_drop(&mut self.plant, &mut self.ctl, &self.db, tick)
            .map_err(|source| RunError::Manager { tick, source })?;
        self.manager
            .replan_traffic_change(&mut self.plant, &mut self.ctl, &self.db, tick)
            .map_err(|source| RunError::Manager { tick, source })?;
        self.drain_manager_events();

        self.record(tick);
        self.sweep(tick, &traffic.nic)
    }

    fn note_switch_events(&mut self, tick: Tick, events: &[SwitchEvent]) {
        let mut now = BTreeSet::new();
        for ev in events {
            let key = match ev {
                SwitchEvent::Unmatched { in_port, dst_mac, .. } => format!("unmatched {in_port} {dst_mac}"),
                SwitchEvent::Overflow { port, .. } => format!("overflow {port}"),
            };
            if !self.switch_conditions.contains(&key) {
                self.events.push((tick, ev.to_string()));
            }
            now.insert(key);
        }
        self.switch_conditions = now;
    }

    fn drain_manager_events(&mut self) {
        let all = self.manager.events();
        self.events.extend(all[self.manager_events_seen..].iter().cloned());
        self.manager_events_seen = all.len();
    }

    fn record(&mut self, tick: Tick) {
        for s in self.manager.services().values() {
            self.services.push(ServiceRow {
                tick,
                service: s.request.id.0.clone(),
                state: s.state.as_str(),
                out_port: s.out_port,
                vt: s.vt.map(|v| v.0),
                channel: s.channel.map(|c| c.0),
            });
        }
        let (free_sc, free_mod) = self.plant.vbvt.list_free_resources();
        self.resources.push(ResourceRow {
            tick,
            free_subcarriers: free_sc.len(),
            free_modulators: free_mod.len(),
            virtual_transceivers: self.plant.vbvt.vts().count(),
            channels: self.plant.optical.channels().count(),
            occupied_slots: self.plant.optical.channels().map(|c| c.slots.len()).sum(),
            flow_rules: self.plant.switch.rules().count(),
        });
    }

    fn sweep(&self, tick: Tick, nics: &[crate::ethernet::NicSample]) -> Result<(), RunError> {
        let fail = |message: String| RunError::Invariant { tick, message };
        self.plant.check_consistency().map_err(fail)?;
        self.plant.switch.check_counters().map_err(fail)?;
        self.manager.check_services(&self.plant).map_err(fail)?;
        for n in nics {
            if n.total() > NIC_CAPACITY {
                return Err(fail(format!("NIC on {} carries {}", n.server, n.total())));
            }
        }
        Ok(())
    }
}

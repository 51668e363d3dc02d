//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each, and
//! exits nonzero if any failed.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vonsim::engine::{run, RunReport};
use vonsim::ethernet::MacAddr;
use vonsim::manager::{
    select_resources, DecisionKind, Demand, ManagerConfig, PathView, SelectionInputs, ServiceRequest, VonManager,
};
use vonsim::monitor::Source;
use vonsim::optical::{LinkSpec, NodeId, OpticalNetwork, PathCandidate, SpectrumWindow};
use vonsim::proto::{
    decode_eth_flowmod, decode_frame, decode_wss_flowmod, encode_eth_flowmod, encode_frame, encode_wss_flowmod,
    Controller, EthFlowMod, Message, Plant, WssFlowMod,
};
use vonsim::report::render;
use vonsim::scenario::{thz_string, Scenario, SHIPPED};
use vonsim::spectrum::{ModulationCatalog, SlotIndex};
use vonsim::units::{Rate, ServiceId};
use vonsim::vbvt::{ModulatorId, ModulatorPool, SubcarrierPool, Vbvt};

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: &[Criterion] = &[
        ("1", "codec golden vector", c1_golden_vector),
        ("2", "osnr-drop replan", c2_osnr_drop),
        ("3", "agg-2port aggregation", c3_agg_2port),
        ("4", "agg-5port aggregation", c4_agg_5port),
        ("5", "nic-dpi MAC epochs", c5_nic_dpi),
        ("6a", "random admit/release invariants", c6a_admit_release),
        ("6b", "codec round-trip fuzz", c6b_codec_fuzz),
        ("6c", "path OSNR bounded by weakest link", c6c_path_osnr),
        ("6d", "byte-identical reports", c6d_determinism),
        ("6e", "selection monotonicity", c6e_monotonicity),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, check) in criteria {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {id:<3} PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {id:<3} FAIL  {name}: {why}");
            }
        }
    }
    let _ = panic::take_hook();
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}

fn shipped_run(name: &str) -> RunReport {
    run(&Scenario::shipped(name).expect("shipped")).expect("run")
}

fn series(r: &RunReport, source: Source, key: &str) -> BTreeMap<u64, f64> {
    r.db.range(source, key, 0, u64::MAX).into_iter().map(|m| (m.tick, m.value)).collect()
}

fn port_tx(r: &RunReport, port: u16) -> BTreeMap<u64, f64> {
    series(r, Source::SwitchPort, &format!("port{port}.tx"))
}

// Speed of light over frequency, in nm.
fn wavelength_nm(thz: f64) -> f64 {
    299_792_458.0 / (thz * 1e12) * 1e9
}

fn c1_golden_vector() -> Outcome {
    let msg = WssFlowMod { in_port: 10, out_port: 7, center_freq: 1_984_283_648, filter_width: 112_000 };
    let bytes = encode_wss_flowmod(&msg).map_err(|e| e.to_string())?;
    let golden = [0x00, 0x0A, 0x00, 0x07, 0x76, 0x45, 0xC4, 0x00, 0x00, 0x01, 0xB5, 0x80];
    ensure!(bytes == golden, "encoded {bytes:02X?}");
    let back = decode_wss_flowmod(&golden).map_err(|e| e.to_string())?;
    ensure!(back == msg, "decoded {back:?}");
    let xc = back.to_cross_connect().map_err(|e| e.to_string())?;
    ensure!(thz_string(xc.center) == "198.4283648", "centre {}", thz_string(xc.center));
    ensure!(xc.filter_width_ghz() == 112.0, "width {}", xc.filter_width_ghz());

    let report = shipped_run("osnr-drop");
    let hex = String::from_utf8(render(&report).unwrap()["messages.hex"].clone()).unwrap();
    ensure!(
        hex.contains("WSS_ADD 00 00 01 01 00 0A 00 07 76 45 C4 00 00 01 B5 80"),
        "osnr-drop hex log lacks the vector"
    );
    Ok("00 0A 00 07 76 45 C4 00 00 01 B5 80 <-> 198.4283648 THz, 112 GHz".into())
}

fn c2_osnr_drop() -> Outcome {
    let r = shipped_run("osnr-drop");
    let replans: Vec<_> = r.decisions.iter().filter(|d| d.kind == DecisionKind::OsnrReplan).collect();
    ensure!(replans.len() == 1, "{} replan decisions", replans.len());
    let d = replans[0];
    ensure!(d.outcome == "applied", "replan {}", d.outcome);

    let admit = r.decisions.iter().find(|d| d.kind == DecisionKind::Admit).ok_or("no admission")?;
    ensure!(admit.modulation.as_deref() == Some("PM-QPSK 10 GBd"), "admitted with {:?}", admit.modulation);

    ensure!(d.path.as_deref() == Some(&["N1".to_string(), "N3".into(), "N2".into()][..]), "path {:?}", d.path);
    // Two 23.0103 dB links in series.
    let oracle_p2 = -10.0 * (2.0 * 10f64.powf(-2.30103)).log10();
    ensure!((d.path_osnr_db.unwrap() - oracle_p2).abs() <= 0.01, "path OSNR {:?}", d.path_osnr_db);
    ensure!((oracle_p2 - 20.0).abs() < 0.001, "oracle {oracle_p2}");
    ensure!(d.modulation.as_deref() == Some("BPSK 40 GBd"), "modulation {:?}", d.modulation);
    ensure!(d.slots.as_ref().map(Vec::len) == Some(4), "slots {:?}", d.slots);
    // Comb entry nearest to 1550.50 nm: 25 lines, 20 GHz apart from 193.3529 THz.
    let target_thz = 299_792_458.0 / 1550.50e-9 / 1e12;
    let nearest = (0..25u32)
        .min_by(|a, b| {
            let da = (193.3529 + 0.02 * *a as f64 - target_thz).abs();
            let db = (193.3529 + 0.02 * *b as f64 - target_thz).abs();
            da.total_cmp(&db)
        })
        .unwrap();
    let sc_nm = wavelength_nm(193.3529 + 0.02 * nearest as f64);
    ensure!(d.subcarrier == Some(nearest), "subcarrier {:?}, nearest to 1550.50 nm is {nearest}", d.subcarrier);
    ensure!(d.subcarrier_nm.is_some_and(|nm| (nm - sc_nm).abs() < 0.005), "subcarrier at {:?} nm", d.subcarrier_nm);

    let rows: Vec<_> = r.service_rows("svc-40g").collect();
    ensure!(rows.len() as u64 == r.duration, "{} service rows", rows.len());
    ensure!(rows.iter().all(|row| row.channel.is_some() && row.vt.is_some()), "service left without a channel");

    // Configured model: 24 dB until the first event, then each target holds until the next.
    let targets = [
        (10, 23.5),
        (11, 22.5),
        (12, 21.5),
        (13, 20.5),
        (14, 19.5),
        (15, 18.5),
        (16, 17.5),
        (17, 16.5),
        (18, 15.5),
        (19, 14.5),
        (20, 14.0),
    ];
    let model = |t: u64| targets.iter().rev().find(|(at, _)| *at <= t).map_or(24.0, |(_, db)| *db);
    let old = series(&r, Source::WaveAnalyzer, "ch1");
    let new = series(&r, Source::WaveAnalyzer, "ch2");
    ensure!(old.keys().copied().eq(2..=19), "ch1 polled at {:?}", old.keys().collect::<Vec<_>>());
    ensure!(new.keys().copied().eq(20..=r.duration), "ch2 polled at {:?}", new.keys().collect::<Vec<_>>());
    for (t, v) in &old {
        ensure!((v - model(*t)).abs() <= 0.01, "ch1 at tick {t}: {v} vs {}", model(*t));
    }
    for (t, v) in &new {
        ensure!((v - oracle_p2).abs() <= 0.01, "ch2 at tick {t}: {v}");
    }
    let low = old.values().copied().fold(f64::INFINITY, f64::min);
    ensure!(low < 15.0, "OSNR never fell below 15 dB");
    Ok(format!("one replan at tick {}: N1-N3-N2 {:.2} dB, BPSK 40 GBd, subcarrier {nearest} ({sc_nm:.3} nm, nearest to 1550.50), lowest reading {low:.2} dB", d.tick, oracle_p2))
}

fn c3_agg_2port() -> Outcome {
    let r = shipped_run("agg-2port");
    let p26 = port_tx(&r, 26);
    let p28 = port_tx(&r, 28);
    for t in 2..=21 {
        ensure!(p26[&t] == 8600.0 && p28[&t] == 7200.0, "tick {t}: 26={} 28={}", p26[&t], p28[&t]);
    }
    let aggs: Vec<_> =
        r.decisions.iter().filter(|d| d.kind == DecisionKind::Aggregate && d.outcome == "applied").collect();
    ensure!(aggs.len() == 1, "{} aggregation decisions", aggs.len());
    let d = aggs[0];
    let port = d.out_port.ok_or("no port")?;
    for t in d.tick + 1..=r.duration {
        ensure!(p26[&t] == 0.0, "port 26 at tick {t}: {}", p26[&t]);
        ensure!((port_tx(&r, port)[&t] - 5400.0).abs() <= 50.0, "port {port} at tick {t}");
    }
    let before = r.resources_at(d.tick - 1).unwrap();
    let after = r.resources_at(d.tick).unwrap();
    ensure!(
        after.free_modulators == before.free_modulators + 1,
        "modulators {} -> {}",
        before.free_modulators,
        after.free_modulators
    );
    ensure!(
        after.free_subcarriers == before.free_subcarriers + 1,
        "subcarriers {} -> {}",
        before.free_subcarriers,
        after.free_subcarriers
    );
    ensure!(after.channels + 1 == before.channels, "channels {} -> {}", before.channels, after.channels);
    // The retired VT's channel was set up by one of the admissions; its slot count is what must come back.
    let retired = d.retired.clone();
    ensure!(retired.len() == 1, "retired {retired:?}");
    let kept = d.reused.ok_or("no VT reused")?;
    let freed_slots: usize = r
        .decisions
        .iter()
        .filter(|a| a.kind == DecisionKind::Admit)
        .zip(1u32..)
        .filter(|(_, vt)| *vt == retired[0])
        .map(|(a, _)| a.slots.as_ref().unwrap().len())
        .sum();
    ensure!(
        freed_slots > 0 && before.occupied_slots - after.occupied_slots == freed_slots,
        "slots {} -> {}",
        before.occupied_slots,
        after.occupied_slots
    );
    Ok(format!(
        "tick {}: both inputs on port {port} at {:.1} Gb/s, port 26 idle, vt{kept} kept, one modulator/subcarrier/{freed_slots}-slot channel freed",
        d.tick,
        port_tx(&r, port)[&r.duration] / 1000.0
    ))
}

fn c4_agg_5port() -> Outcome {
    let r = shipped_run("agg-5port");
    let aggs: Vec<_> =
        r.decisions.iter().filter(|d| d.kind == DecisionKind::Aggregate && d.outcome == "applied").collect();
    ensure!(aggs.len() == 1, "{} aggregation decisions", aggs.len());
    let d = aggs[0];
    ensure!(d.out_port == Some(50), "aggregated onto {:?}", d.out_port);
    ensure!((d.rate_gbps - 35.0).abs() < 1e-9, "decided rate {}", d.rate_gbps);
    let p50 = port_tx(&r, 50);
    for t in d.tick + 1..=r.duration {
        ensure!((p50[&t] - 35_000.0).abs() <= 100.0, "port 50 at tick {t}: {}", p50[&t]);
        for p in [22, 24, 26, 28, 30] {
            ensure!(port_tx(&r, p)[&t] == 0.0, "port {p} still carries traffic at tick {t}");
        }
    }
    let outs: BTreeSet<u16> = r.plant.switch.rules().map(|rule| rule.out_port).collect();
    ensure!(outs == BTreeSet::from([50]), "rules still point at {outs:?}");
    let vts: BTreeSet<_> = r.manager.services().values().map(|s| s.vt).collect();
    ensure!(vts.len() == 1 && vts.iter().all(Option::is_some), "group VTs {vts:?}");
    ensure!(r.plant.vbvt.vts().count() == 1, "{} VTs live", r.plant.vbvt.vts().count());
    for p in [25, 27, 29, 31, 33] {
        ensure!(
            r.manager.services().values().any(|s| s.request.in_port == p && s.out_port == Some(50)),
            "input {p} not redirected"
        );
    }
    Ok(format!(
        "tick {}: 5 inputs onto QSFP+ port 50 at {:.1} Gb/s, SFP+ outputs freed, 1 VT",
        d.tick,
        p50[&r.duration] / 1000.0
    ))
}

fn normalize_mac(s: &str) -> String {
    s.split(':').map(|g| format!("{:0>2}", g.to_uppercase())).collect::<Vec<_>>().join(":")
}

fn c5_nic_dpi() -> Outcome {
    let epochs: [(u64, u64, &[&str]); 3] = [
        (
            1,
            20,
            &[
                "59:53:83:2A:6:4C",
                "89:B4:C3:2:FE:8E",
                "8A:26:8:A2:74:21",
                "A0:61:C:CA:EF:E1",
                "AB:25:1F:1D:AA:9B",
                "B0:36:1E:2F:14:5A",
            ],
        ),
        (21, 37, &["A0:24:81:75:E5:DA", "F2:74:62:F0:96:B9", "25:40:F1:F0:E4:B8"]),
        (38, 54, &["36:B0:CD:68:3A:92", "8D:72:35:B0:36:8F", "B1:62:B8:C3:72:E1", "11:6:89:CC:E:2A"]),
    ];
    let r = shipped_run("nic-dpi");
    let expected: BTreeSet<String> = epochs.iter().flat_map(|(_, _, m)| m.iter().map(|s| normalize_mac(s))).collect();
    ensure!(expected.len() == 13, "table has {} addresses", expected.len());
    let seen: BTreeSet<String> = r.db.keys(Source::Nic).map(String::from).collect();
    ensure!(seen == expected, "MAC set differs: {:?}", seen.symmetric_difference(&expected).collect::<Vec<_>>());
    for (start, end, macs) in epochs {
        for m in macs {
            let s = series(&r, Source::Nic, &normalize_mac(m));
            let first = *s.keys().next().unwrap();
            let last = *s.keys().next_back().unwrap();
            ensure!(first >= start && first <= end && last <= end, "{m} seen {first}..{last}, epoch {start}-{end}");
        }
    }
    let mut per_tick: BTreeMap<u64, f64> = BTreeMap::new();
    for m in r.db.records().iter().filter(|m| m.source == Source::Nic) {
        *per_tick.entry(m.tick).or_default() += m.value;
    }
    for t in 1..=20 {
        ensure!(per_tick.get(&t) == Some(&10_000.0), "tick {t} sums to {:?} Mb/s", per_tick.get(&t));
    }
    Ok("13 addresses, first seen inside epochs 1-20 / 21-37 / 38-54, 10.0 Gb/s every tick of epoch 1".into())
}

fn random_topology(rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<LinkSpec>) {
    let n = rng.gen_range(4..=8);
    let nodes: Vec<String> = (0..n).map(|i| format!("R{i}")).collect();
    let mut pairs = BTreeSet::new();
    for i in 0..n {
        pairs.insert((i, (i + 1) % n));
    }
    for _ in 0..rng.gen_range(0..=n) {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b && !pairs.contains(&(b, a)) {
            pairs.insert((a, b));
        }
    }
    let links = pairs
        .into_iter()
        .enumerate()
        .map(|(i, (a, b))| LinkSpec {
            name: format!("E{i}"),
            a: nodes[a].clone(),
            b: nodes[b].clone(),
            length_km: rng.gen_range(20..=400) as f64,
            osnr_db: rng.gen_range(140..=270) as f64 / 10.0,
        })
        .collect();
    (nodes, links)
}

fn sfp_or_qsfp_capacity(port: u16) -> u64 {
    match port {
        1..=48 => 10_000,
        49..=52 => 40_000,
        _ => 0,
    }
}

fn check_plant_invariants(plant: &Plant, mgr: &VonManager, margin: f64) -> Result<(), String> {
    plant.check_consistency()?;
    mgr.check_services(plant)?;
    let mut owner: BTreeMap<(u32, i64), u32> = BTreeMap::new();
    for ch in plant.optical.channels() {
        for l in &ch.path.links {
            for s in &ch.slots {
                if let Some(prev) = owner.insert((l.0, s.0), ch.id.0) {
                    return Err(format!("slot {} on link {} held by ch{prev} and {}", s.0, l.0, ch.id));
                }
            }
        }
    }
    for l in plant.optical.links() {
        for (s, ch) in l.occupancy() {
            if owner.get(&(l.id.0, s.0)) != Some(&ch.0) {
                return Err(format!("link {} occupancy disagrees at slot {}", l.name, s.0));
            }
        }
    }
    let subs = plant.vbvt.subcarriers().all();
    let mods = plant.vbvt.modulators().all();
    let (free_sc, free_mod) = plant.vbvt.list_free_resources();
    let vts = plant.vbvt.vts().count();
    if free_sc.len() + vts != subs.len() || free_mod.len() + vts != mods.len() {
        return Err(format!("{} + {vts} subcarriers, {} + {vts} modulators", free_sc.len(), free_mod.len()));
    }
    let mut per_port: BTreeMap<u16, u64> = BTreeMap::new();
    let mut per_vt: BTreeMap<u32, u64> = BTreeMap::new();
    for s in mgr.services().values() {
        let port = s.out_port.ok_or("service without port")?;
        *per_port.entry(port).or_default() += s.request.rate.mbps();
        *per_vt.entry(s.vt.ok_or("service without VT")?.0).or_default() += s.request.rate.mbps();
    }
    for (p, sum) in per_port {
        if sum > sfp_or_qsfp_capacity(p) {
            return Err(format!("port {p} carries {sum} Mb/s"));
        }
    }
    for vt in plant.vbvt.vts() {
        let m = plant.vbvt.modulators().get(vt.modulator).unwrap();
        let cap = (m.profile.baud_gbd * (m.profile.bits_per_symbol_per_pol * m.profile.polarizations) as f64 * 1000.0)
            .round() as u64;
        if per_vt.get(&vt.id.0).copied().unwrap_or(0) > cap {
            return Err(format!("{} over modulator capacity", vt.id));
        }
        let ch = plant.optical.channel(plant.channel_of(vt.id).unwrap()).unwrap();
        if ch.current_osnr_db + 0.005 < m.profile.required_osnr_db + margin {
            return Err(format!(
                "{} at {:.2} dB below {} + margin",
                ch.id, ch.current_osnr_db, m.profile.required_osnr_db
            ));
        }
    }
    Ok(())
}

fn c6a_admit_release() -> Outcome {
    let sequences = 1000;
    let (mut admitted, mut rejected, mut released) = (0, 0, 0);
    for seed in 0..sequences {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (nodes, links) = random_topology(&mut rng);
        let window = SpectrumWindow { first: 0, count: rng.gen_range(8..=32) };
        let optical = OpticalNetwork::new(nodes.clone(), &links, window).map_err(|e| e.to_string())?;
        let vbvt =
            Vbvt::new(SubcarrierPool::testbed(), ModulatorPool::from_catalog(&ModulationCatalog::testbed()).unwrap());
        let mut plant = Plant::new(Default::default(), vbvt, optical);
        let pool: Vec<u16> = (1..=52).filter(|p| p % 2 == 0).collect();
        let mut mgr = VonManager::new(ManagerConfig { egress_pool: pool, ..Default::default() });
        let mut ctl = Controller::new();
        let mut live: Vec<ServiceId> = Vec::new();
        for step in 0..12u64 {
            if !live.is_empty() && rng.gen_bool(0.35) {
                let id = live.remove(rng.gen_range(0..live.len()));
                mgr.release_service(&mut plant, &mut ctl, &id, step).map_err(|e| format!("seed {seed}: {e}"))?;
                released += 1;
            } else {
                let src = rng.gen_range(0..nodes.len());
                let dst = (src + rng.gen_range(1..nodes.len())) % nodes.len();
                let id = ServiceId(format!("s{step}"));
                let req = ServiceRequest {
                    id: id.clone(),
                    src: NodeId(nodes[src].clone()),
                    dst: NodeId(nodes[dst].clone()),
                    in_port: 2 * step as u16 + 1,
                    dst_mac: MacAddr([2, 0, 0, 0, 0, rng.gen()]),
                    rate: Rate::from_mbps(rng.gen_range(1..=400) * 100),
                    latency_ms: None,
                    preferred_subcarrier: None,
                };
                match mgr.admit_service(&mut plant, &mut ctl, &req, step).map_err(|e| format!("seed {seed}: {e}"))? {
                    Ok(()) => {
                        admitted += 1;
                        live.push(id);
                    }
                    Err(_) => rejected += 1,
                }
            }
            check_plant_invariants(&plant, &mgr, 1.0).map_err(|e| format!("seed {seed} step {step}: {e}"))?;
        }
    }
    ensure!(admitted > 0 && rejected > 0 && released > 0, "degenerate mix {admitted}/{rejected}/{released}");
    Ok(format!("{sequences} sequences: {admitted} admitted, {rejected} rejected, {released} released"))
}

fn c6b_codec_fuzz() -> Outcome {
    let mut runner = TestRunner::new(Config { cases: 10_000, failure_persistence: None, ..Config::default() });
    let wss = (any::<u16>(), any::<u16>(), 1..=u32::MAX, 1..=u32::MAX).prop_map(|(i, o, c, w)| WssFlowMod {
        in_port: i,
        out_port: o,
        center_freq: c,
        filter_width: w,
    });
    let eth = (proptest::option::of(any::<u16>()), proptest::option::of(any::<[u8; 6]>()), any::<u16>(), any::<u16>())
        .prop_map(|(i, m, o, p)| EthFlowMod { in_port: i, dst_mac: m.map(MacAddr), out_port: o, priority: p });
    let case = (wss, eth, any::<bool>(), proptest::collection::vec(any::<u8>(), 0..24));
    runner
        .run(&case, |(w, e, del, noise)| {
            let body = encode_wss_flowmod(&w).unwrap();
            prop_assert_eq!(body.len(), 12);
            prop_assert_eq!(decode_wss_flowmod(&body).unwrap(), w);
            let body = encode_eth_flowmod(&e);
            prop_assert_eq!(body.len(), 14);
            prop_assert_eq!(decode_eth_flowmod(&body).unwrap(), e);
            for m in [
                if del { Message::WssDel(w) } else { Message::WssAdd(w) },
                if del { Message::EthDel(e) } else { Message::EthAdd(e) },
            ] {
                let frame = encode_frame(&m).unwrap();
                prop_assert_eq!(decode_frame(&frame).unwrap(), m);
            }
            // Arbitrary bytes either decode to something that re-encodes identically, or error.
            if let Ok(m) = decode_frame(&noise) {
                prop_assert_eq!(encode_frame(&m).unwrap(), noise);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("10000 cases, WSS/ETH bodies and frames round-trip".into())
}

fn c6c_path_osnr() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x05A2);
    let mut checked = 0;
    while checked < 1000 {
        let (nodes, links) = random_topology(&mut rng);
        let mut net =
            OpticalNetwork::new(nodes.clone(), &links, SpectrumWindow::default()).map_err(|e| e.to_string())?;
        for l in net.links().iter().map(|l| l.id).collect::<Vec<_>>() {
            if rng.gen_bool(0.5) {
                net.inject_noise_event(l, rng.gen_range(0.0..0.05), 0).map_err(|e| e.to_string())?;
            }
        }
        let src = NodeId(nodes[rng.gen_range(0..nodes.len())].clone());
        let dst = NodeId(nodes[rng.gen_range(0..nodes.len())].clone());
        if src == dst {
            continue;
        }
        for p in net.k_shortest_paths(&src, &dst, 3).map_err(|e| e.to_string())? {
            let link_db: Vec<f64> = p.links.iter().map(|l| net.link_osnr(*l).unwrap()).collect();
            let got = net.path_osnr(&p.links).map_err(|e| e.to_string())?;
            let min = link_db.iter().copied().fold(f64::INFINITY, f64::min);
            // Inverse sum of linear noise-to-signal ratios.
            let oracle = -10.0 * link_db.iter().map(|db| 10f64.powf(-db / 10.0)).sum::<f64>().log10();
            ensure!(got <= min + 1e-9, "path {:?}: {got} above weakest link {min}", p.nodes);
            ensure!((got - oracle).abs() < 1e-9, "path {:?}: {got} vs oracle {oracle}", p.nodes);
            checked += 1;
        }
    }
    Ok(format!("{checked} paths, none above its weakest link"))
}

fn c6d_determinism() -> Outcome {
    let mut total = 0;
    for (name, _) in SHIPPED {
        let a = render(&shipped_run(name)).map_err(|e| e.to_string())?;
        let b = render(&shipped_run(name)).map_err(|e| e.to_string())?;
        for (file, bytes) in &a {
            ensure!(b.get(file) == Some(bytes), "{name}/{file} differs between runs");
            total += bytes.len();
        }
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        vonsim::report::emit_report(&shipped_run(name), dir_a.path()).map_err(|e| e.to_string())?;
        vonsim::report::emit_report(&shipped_run(name), dir_b.path()).map_err(|e| e.to_string())?;
        for file in vonsim::report::REPORT_FILES {
            let x = std::fs::read(dir_a.path().join(file)).unwrap();
            let y = std::fs::read(dir_b.path().join(file)).unwrap();
            ensure!(x == y, "{name}/{file} on disk differs");
        }
    }
    Ok(format!("{} scenarios, {total} report bytes identical", SHIPPED.len()))
}

fn random_path(rng: &mut ChaCha8Rng, i: usize) -> PathCandidate {
    let hops = rng.gen_range(1..=4);
    PathCandidate {
        nodes: (0..=hops).map(|h| NodeId(format!("P{i}H{h}"))).collect(),
        links: (0..hops as u32).map(|h| vonsim::optical::LinkId(i as u32 * 10 + h)).collect(),
        total_length_km: 100.0 * hops as f64,
        latency_ms: rng.gen_range(1..=40) as f64 / 10.0,
    }
}

fn c6e_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6E);
    let catalog = ModulationCatalog::testbed();
    let all_mods: Vec<_> = catalog.instances().enumerate().map(|(i, p)| (ModulatorId(i as u32), p.clone())).collect();
    let all_subs: Vec<_> = SubcarrierPool::testbed().all().iter().map(|s| (s.id, s.frequency)).collect();
    let window = SpectrumWindow { first: 0, count: 16 };
    let (mut feasible, mut pairs) = (0, 0);
    while pairs < 500 {
        let mut small_paths = Vec::new();
        let mut large_paths = Vec::new();
        for i in 0..rng.gen_range(1..=3) {
            let path = random_path(&mut rng, i);
            let osnr_db = rng.gen_range(80..=260) as f64 / 10.0;
            let large_busy: BTreeSet<SlotIndex> = (0..16).filter(|_| rng.gen_bool(0.4)).map(SlotIndex).collect();
            let mut small_busy = large_busy.clone();
            small_busy.extend((0..16).filter(|_| rng.gen_bool(0.3)).map(SlotIndex));
            small_paths.push(PathView { path: path.clone(), osnr_db, busy: small_busy });
            large_paths.push(PathView { path, osnr_db, busy: large_busy });
        }
        let large_mods: Vec<_> = all_mods.iter().filter(|_| rng.gen_bool(0.8)).cloned().collect();
        let small_mods: Vec<_> = large_mods.iter().filter(|_| rng.gen_bool(0.7)).cloned().collect();
        let large_subs: Vec<_> = all_subs.iter().filter(|_| rng.gen_bool(0.6)).copied().collect();
        let small_subs: Vec<_> = large_subs.iter().filter(|_| rng.gen_bool(0.6)).copied().collect();
        let small = SelectionInputs { paths: small_paths, subcarriers: small_subs, modulators: small_mods, window };
        let large =
            SelectionInputs { paths: large_paths, subcarriers: large_subs.clone(), modulators: large_mods, window };
        let demand = Demand {
            rate: Rate::from_mbps(rng.gen_range(1..=120) * 1000),
            latency_ms: rng.gen_bool(0.3).then(|| rng.gen_range(5..=40) as f64 / 10.0),
            min_path_osnr_db: rng.gen_bool(0.3).then(|| rng.gen_range(100..=200) as f64 / 10.0),
            preferred_subcarrier: large_subs.choose(&mut rng).map(|(id, _)| *id).filter(|_| rng.gen_bool(0.5)),
        };
        let margin = [0.0, 0.5, 1.0][rng.gen_range(0..3)];
        pairs += 1;
        if let Some(s) = select_resources(&small, &demand, margin) {
            feasible += 1;
            let l = select_resources(&large, &demand, margin);
            ensure!(l.is_some(), "pair {pairs}: larger set lost {:?} ({} slots)", s.modulator, s.slots.len());
        }
    }
    ensure!(feasible >= 100, "only {feasible} feasible pairs");
    Ok(format!("{pairs} pairs, {feasible} feasible on the smaller set, all feasible on the larger"))
}

use vonsim::engine::run;
use vonsim::manager::DecisionKind;
use vonsim::monitor::Source;
use vonsim::proto::replay;
use vonsim::scenario::{Scenario, SHIPPED};

#[test]
fn every_shipped_log_replays_to_final_devices() {
    for (name, _) in SHIPPED {
        let r = run(&Scenario::shipped(name).unwrap()).unwrap();
        let (sw, wss) = replay(&r.messages).unwrap();
        assert_eq!(sw.sorted_rules(), r.plant.switch.sorted_rules(), "{name}");
        assert_eq!(wss.sorted(), r.plant.vbvt.wss().sorted(), "{name}");
    }
}

#[test]
fn resource_pools_are_conserved_every_tick() {
    for (name, _) in SHIPPED {
        let r = run(&Scenario::shipped(name).unwrap()).unwrap();
        for row in &r.resources {
            assert_eq!(row.free_subcarriers + row.virtual_transceivers, 25, "{name} tick {}", row.tick);
            assert_eq!(row.free_modulators + row.virtual_transceivers, 6, "{name} tick {}", row.tick);
            assert_eq!(row.channels, row.virtual_transceivers, "{name} tick {}", row.tick);
        }
    }
}

#[test]
fn empty_scenario_is_empty() {
    let r = run(&Scenario::shipped("empty").unwrap()).unwrap();
    assert!(r.db.is_empty());
    assert!(r.decisions.is_empty());
    assert!(r.events.is_empty());
}

#[test]
fn different_seed_changes_only_generated_rates() {
    let base = Scenario::shipped("nic-dpi").unwrap();
    let a = run(&base.clone()).unwrap();
    let b = run(&base.with_seed(99)).unwrap();
    let macs = |r: &vonsim::engine::RunReport| r.db.keys(Source::Nic).map(String::from).collect::<Vec<_>>();
    assert_eq!(macs(&a), macs(&b));
    assert_ne!(a.db.records(), b.db.records());
}

#[test]
fn osnr_drop_without_noise_never_replans() {
    let src = include_str!("../scenarios/osnr-drop.toml");
    let cut = src.find("[[noise]]").unwrap();
    let rest = &src[src.find("[switch]").unwrap()..];
    let quiet = format!("{}{}", &src[..cut], rest);
    let r = run(&Scenario::parse(&quiet, "quiet", None).unwrap()).unwrap();
    assert!(r.decisions.iter().all(|d| d.kind == DecisionKind::Admit));
    assert!(r.service_rows("svc-40g").all(|row| row.state == "active"));
}

#[test]
fn aggregation_waits_while_sum_exceeds_ports() {
    let r = run(&Scenario::shipped("agg-2port").unwrap()).unwrap();
    let abandoned: Vec<_> = r.decisions.iter().filter(|d| d.outcome == "abandoned").collect();
    assert_eq!(abandoned.len(), 1);
    assert_eq!(abandoned[0].tick, 1);
    assert!((abandoned[0].rate_gbps - 15.8).abs() < 1e-9);
}

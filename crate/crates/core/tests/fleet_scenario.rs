use std::collections::BTreeMap;

use condmon_core::features::{battery_utilization, Series};
use condmon_core::model::{MemorySink, StreamId, Timestamp};
use condmon_core::sim::fleet::run_fleet_observed;
use condmon_core::sim::{run_fleet_scenario, ScenarioConfig};

fn by_topic(sink: &MemorySink) -> BTreeMap<String, Vec<f64>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for m in &sink.messages {
        out.entry(m.stream.as_str().to_string())
            .or_default()
            .push(m.payload.first_real().unwrap());
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn signal_is_weakest_at_the_start() {
    let cfg = ScenarioConfig::default();
    let mut sink = MemorySink::default();
    run_fleet_scenario(&cfg, &mut sink, None).unwrap();
    let topics = by_topic(&sink);
    for k in 1..=5 {
        let wifi = &topics[&format!("robot{k}/wifi")];
        assert_eq!(wifi.len(), 600);
        let early = mean(&wifi[..30]);
        let all = mean(wifi);
        assert!(all - early >= 3.0, "robot{k}: early {early:.2} overall {all:.2}");
    }
}

#[test]
fn noise_free_start_is_near_the_minimum() {
    let mut cfg = ScenarioConfig::default();
    cfg.rssi.noise_sd_db = 0.0;
    let mut sink = MemorySink::default();
    run_fleet_scenario(&cfg, &mut sink, None).unwrap();
    for (topic, wifi) in by_topic(&sink).iter().filter(|(t, _)| t.ends_with("/wifi")) {
        let min = wifi.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(wifi[0] - min <= 2.0, "{topic}: first {} min {min}", wifi[0]);
    }
}

#[test]
fn cpu_step_raises_drain() {
    let cfg = ScenarioConfig::default();
    let mut sink = MemorySink::default();
    run_fleet_scenario(&cfg, &mut sink, None).unwrap();
    let series: Series = Series::from_messages(StreamId::new("robot4/battery").unwrap(), &sink.messages);
    let at = |s: f64| cfg.start_time.offset_secs_f64(s);
    let before = battery_utilization(&series, at(0.0), at(250.0)).unwrap();
    let during = battery_utilization(&series, at(251.0), at(420.0)).unwrap();
    let ratio = during / before;
    assert!((ratio - 0.023 / 0.009).abs() < 0.02, "{ratio}");
    let other: Series = Series::from_messages(StreamId::new("robot1/battery").unwrap(), &sink.messages);
    let flat = battery_utilization(&other, at(251.0), at(420.0)).unwrap();
    assert!((flat - 0.009 * 60.0).abs() < 1e-6);
}

#[test]
fn robots_stay_inside_and_clear_of_obstacles() {
    for seed in 0..10 {
        let cfg = ScenarioConfig {
            seed,
            ..ScenarioConfig::default()
        };
        let mut worst = f64::INFINITY;
        let mut sink = MemorySink::default();
        let summary = run_fleet_observed(&cfg, &mut sink, None, &mut |_, w| {
            for r in &w.robots {
                assert!(w.contains(r.pos));
                for o in &w.obstacles {
                    let d = (r.pos[0] - o.pos[0]).hypot(r.pos[1] - o.pos[1]);
                    worst = worst.min(d - o.radius);
                }
            }
            for o in &w.obstacles {
                assert!(w.contains(o.pos));
            }
        })
        .unwrap();
        assert!(summary.stayed_inside);
        assert!(worst > 0.0, "seed {seed}: {worst}");
        assert_eq!(summary.min_clearance, summary.min_clearance.min(worst));
    }
}

#[test]
fn stamps_follow_the_start_time() {
    let cfg = ScenarioConfig {
        duration_s: 3.0,
        start_time: Timestamp::new(5, 0).unwrap(),
        ..ScenarioConfig::default()
    };
    let mut sink = MemorySink::default();
    run_fleet_scenario(&cfg, &mut sink, None).unwrap();
    let secs: Vec<u64> = sink.messages.iter().map(|m| m.stamp.secs()).collect();
    assert_eq!(secs, [vec![5; 10], vec![6; 10], vec![7; 10]].concat());
}

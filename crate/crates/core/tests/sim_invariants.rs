mod common;

use common::load;
use nfslicer::sim::{pcie_traffic, run, SimReport};

/// Short runs with a denser measuring stream keep these tests quick while
/// leaving enough samples for stable means.
const SHORT: [&str; 2] = ["sim.duration_s=0.3", "streams.measuring.rate_pps=2e4"];

fn short(name: &str, extra: &[&str]) -> SimReport {
    let overrides: Vec<&str> = SHORT.iter().chain(extra).copied().collect();
    run(&load(name, &overrides)).unwrap()
}

fn conserved(r: &SimReport) -> bool {
    let injected = r.load.injected + r.measuring.injected;
    let accounted = r.load.completed + r.measuring.completed + r.load.dropped + r.measuring.dropped + r.in_flight;
    injected == accounted
}

#[test]
fn every_injected_packet_is_accounted_for() {
    let cases: [&[&str]; 4] = [
        &[],
        // Tiny table and TTL under load: stale-generation drops at splice.
        &["slicing.mode=\"full\"", "slicing.entries=8", "slicing.ttl=1"],
        // Meter too small for the load.
        &[
            "nf.pipeline=[\"qos\"]",
            "nf.qos.cir_bytes_per_s=1000000000",
            "nf.qos.cbs_bytes=20000",
            "nf.qos.ebs_bytes=20000",
        ],
        // Six ports for hundreds of flows.
        &["nf.pipeline=[\"nat\"]", "nf.nat.port_min=1024", "nf.nat.port_max=1029"],
    ];
    for (i, extra) in cases.iter().enumerate() {
        let mut overrides = vec!["sim.duration_s=0.05"];
        overrides.extend_from_slice(extra);
        let r = run(&load("l2fwd_4mpps.toml", &overrides)).unwrap();
        assert!(conserved(&r), "case {i}: {r:?}");
        assert!(r.load.injected > 100_000);
        if i > 0 {
            assert!(r.drops_total() > 0, "case {i} produced no drops");
        }
        if i == 1 {
            assert!(r.drops_stale_generation() > 0);
        }
    }
}

#[test]
fn same_seed_gives_identical_reports() {
    let cfg = load("chain_4mpps.toml", &["sim.duration_s=0.05", "slicing.mode=\"full\""]);
    let a = run(&cfg).unwrap();
    let b = run(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_json(), b.to_json());
    let other = run(&load(
        "chain_4mpps.toml",
        &["sim.duration_s=0.05", "slicing.mode=\"full\"", "sim.seed=2"],
    ))
    .unwrap();
    assert_ne!(a.to_json(), other.to_json());
}

#[test]
fn baseline_latency_grows_with_size_and_rate() {
    let by_size: Vec<f64> = [64, 512, 1024, 1518]
        .iter()
        .map(|s| {
            short("l2fwd_4mpps.toml", &[&format!("streams.load.size={s}")])
                .measuring
                .latency
                .mean_ns
        })
        .collect();
    assert!(by_size.windows(2).all(|w| w[0] <= w[1]), "{by_size:?}");
    let by_rate: Vec<f64> = ["1e5", "1e6", "2e6", "4e6", "6e6"]
        .iter()
        .map(|r| {
            short("l2fwd_4mpps.toml", &[&format!("streams.load.rate_pps={r}")])
                .measuring
                .latency
                .mean_ns
        })
        .collect();
    assert!(by_rate.windows(2).all(|w| w[0] <= w[1]), "{by_rate:?}");
}

/// Empty-system latency of one frame: base latency plus serialization on
/// every hop, with the memory hop traversed twice and the core charged its
/// fixed cost.
fn floor_ns(cfg: &nfslicer::sim::SimConfig, frame: usize) -> f64 {
    let l = &cfg.links;
    let ser = |bytes: usize, gbps: f64| bytes as f64 * 8.0 / gbps;
    let wire = l.wire_base_latency_ns + ser(frame, l.nic_gbps);
    let pcie = l.pcie_base_latency_ns + ser(frame + l.pcie_overhead_bytes, l.pcie_gbps);
    let mem = l.mem_base_latency_ns + ser(frame, l.mem_gbps);
    let core = (cfg.sim.core_overhead_ns + cfg.nf.service_ns()) as f64;
    2.0 * (wire + pcie + mem) + core
}

#[test]
fn near_zero_load_sits_on_the_base_latency_floor() {
    let mut floors = Vec::new();
    for load_size in [64, 1518] {
        for meas_size in [64, 1518] {
            let cfg = load(
                "l2fwd_4mpps.toml",
                &[
                    "sim.duration_s=0.2",
                    "streams.load.rate_pps=10",
                    &format!("streams.load.size={load_size}"),
                    &format!("streams.measuring.size={meas_size}"),
                ],
            );
            let r = run(&cfg).unwrap();
            let lat = r.measuring.latency;
            let expected = floor_ns(&cfg, meas_size);
            assert!(
                (lat.min_ns as f64 - expected).abs() <= 1.0,
                "{} vs {expected}",
                lat.min_ns
            );
            assert!(
                (lat.max_ns as f64 - expected).abs() <= 1.0,
                "{} vs {expected}",
                lat.max_ns
            );
            floors.push((meas_size, lat.mean_ns));
        }
    }
    // The load size does not move the floor; the measured size moves it only
    // by serialization time.
    assert_eq!(floors[0].1, floors[2].1);
    assert_eq!(floors[1].1, floors[3].1);
    let cfg = load("l2fwd_4mpps.toml", &[]);
    let serialization_delta = floor_ns(&cfg, 1518) - floor_ns(&cfg, 64);
    assert!((floors[1].1 - floors[0].1 - serialization_delta).abs() <= 1.0);
    assert!(serialization_delta < 600.0);
}

#[test]
fn utilizations_are_fractions_and_histograms_match_completions() {
    for extra in [
        &["sim.warmup_s=0"][..],
        &["sim.warmup_s=0", "slicing.mode=\"full\""],
        &["streams.load.rate_pps=7e6"],
    ] {
        let mut overrides = vec!["sim.duration_s=0.05"];
        overrides.extend_from_slice(extra);
        let cfg = load("l2fwd_4mpps.toml", &overrides);
        let r = run(&cfg).unwrap();
        for (k, u) in &r.utilization {
            assert!((0.0..=1.0).contains(u), "{k} = {u}");
        }
        assert!(r.utilization["pcie_in"] > 0.0);
        for s in [&r.load, &r.measuring] {
            if cfg.sim.warmup_s == 0.0 {
                assert_eq!(s.latency.count, s.completed);
            } else {
                assert!(s.latency.count < s.completed);
            }
        }
        assert_eq!(r.measuring_histogram.count(), r.measuring.latency.count);
        assert_eq!(r.load_histogram.count(), r.load.latency.count);
    }
}

#[test]
fn full_slicing_equalizes_every_nf() {
    for name in [
        "l2fwd_4mpps.toml",
        "qos_4mpps.toml",
        "firewall_4mpps.toml",
        "nat_4mpps.toml",
        "chain_4mpps.toml",
    ] {
        let large = short(name, &[]);
        let sliced = short(name, &["slicing.mode=\"full\""]);
        let small = short(name, &["streams.load.size=64"]);
        assert_eq!(
            large.drops_total() + sliced.drops_total() + small.drops_total(),
            0,
            "{name}"
        );
        let (l, s, b) = (
            large.measuring.latency.mean_ns,
            sliced.measuring.latency.mean_ns,
            small.measuring.latency.mean_ns,
        );
        assert!(s <= l, "{name}: sliced {s} > unsliced {l}");
        assert!((s - b).abs() / b <= 0.05, "{name}: sliced {s} vs 64 B {b}");
    }
}

#[test]
fn pcie_traffic_arithmetic() {
    let cfg = load("l2fwd_7mpps.toml", &[]);
    let t = pcie_traffic(&cfg);
    assert_eq!(t.bytes_per_packet, 1518.0);
    assert!((t.per_direction_bytes_per_s / 1e9 - 10.626).abs() < 1e-9);
    assert!((t.aggregate_bytes_per_s / 1e9 - 21.252).abs() < 1e-9);
    assert_eq!(t.reduction, 1.0);

    let sliced = pcie_traffic(&load("l2fwd_7mpps.toml", &["slicing.mode=\"full\""]));
    assert_eq!(sliced.bytes_per_packet, 64.0);
    assert!((sliced.per_direction_bytes_per_s / 1e9 - 0.448).abs() < 1e-9);
    assert!((sliced.reduction - 23.72).abs() < 0.01);
    for size in [500, 1024, 1518] {
        let t = pcie_traffic(&load(
            "l2fwd_7mpps.toml",
            &["slicing.mode=\"full\"", &format!("streams.load.size={size}")],
        ));
        assert_eq!(t.bytes_per_packet, 64.0);
    }
    // Below THR nothing is sliced.
    let t = pcie_traffic(&load(
        "l2fwd_7mpps.toml",
        &["slicing.mode=\"full\"", "streams.load.size=499"],
    ));
    assert_eq!(t.reduction, 1.0);
}

#[test]
fn simulated_pcie_bytes_match_the_analytic_volume() {
    let cfg = load(
        "l2fwd_4mpps.toml",
        &["sim.duration_s=0.05", "sim.warmup_s=0", "slicing.mode=\"full\""],
    );
    let r = run(&cfg).unwrap();
    let per_packet = 64 + cfg.links.pcie_overhead_bytes as u64;
    let meas_per_packet = 1518 + cfg.links.pcie_overhead_bytes as u64;
    // Every injected packet crossed ingress PCIe unless it was still on the wire.
    let upper = r.load.injected * per_packet + r.measuring.injected * meas_per_packet;
    assert!(r.pcie_in_bytes <= upper);
    assert!(r.pcie_in_bytes as f64 >= 0.999 * upper as f64);
}

#[test]
fn saturation_is_detected_before_running() {
    let over = load("l2fwd_4mpps.toml", &["streams.load.rate_pps=8e6"]);
    let sat = over.saturation();
    assert!(sat.iter().any(|s| s.resource.starts_with("memory")), "{sat:?}");
    assert!(load("l2fwd_7mpps.toml", &[]).saturation().is_empty());
    // Slicing lifts the memory limit; the cores stay saturated.
    let sliced = load(
        "l2fwd_4mpps.toml",
        &["streams.load.rate_pps=8e6", "slicing.mode=\"full\""],
    );
    let sat = sliced.saturation();
    assert!(!sat.iter().any(|s| s.resource.starts_with("memory")), "{sat:?}");
    assert!(sat.iter().any(|s| s.resource.starts_with("cores")), "{sat:?}");
    // Narrow PCIe links saturate on frame plus per-packet overhead.
    let narrow = load(
        "l2fwd_4mpps.toml",
        &["streams.load.rate_pps=7e6", "links.pcie_gbps=90.0"],
    );
    assert!(narrow.saturation().iter().any(|s| s.resource.starts_with("pcie")));
}

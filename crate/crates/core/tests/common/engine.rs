use std::collections::HashMap;
use std::net::Ipv4Addr;
use std::time::{Duration, Instant};

use bytes::Bytes;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nfslicer::engine::{PassthroughReason, SpliceDropReason};
use nfslicer::packet::{wire_size, Dscp, MAX_PAYLOAD};
use nfslicer::{Headers, MacAddr, Packet, SliceMode, SliceOutcome, SliceTables, SpliceOutcome, StreamId, TableConfig};

pub const SLICED: u8 = 0b11_1111;

pub fn random_headers(rng: &mut ChaCha8Rng) -> Headers {
    let mut dscp = rng.random_range(0..64u8);
    if dscp == SLICED {
        dscp = 0;
    }
    Headers {
        eth_src: MacAddr(rng.random()),
        eth_dst: MacAddr(rng.random()),
        ip_src: Ipv4Addr::from(rng.random::<u32>()),
        ip_dst: Ipv4Addr::from(rng.random::<u32>()),
        dscp: Dscp::new(dscp).unwrap(),
        l4_src_port: rng.random(),
        l4_dst_port: rng.random(),
        ..Headers::default()
    }
}

pub fn random_packet(rng: &mut ChaCha8Rng, min_payload: usize) -> Packet {
    let len = rng.random_range(min_payload..=MAX_PAYLOAD);
    let payload: Vec<u8> = (0..len).map(|_| rng.random()).collect();
    Packet::new(random_headers(rng), Bytes::from(payload), StreamId::Load).unwrap()
}

/// Rewrites L2-L4 fields the way forwarders and NATs do.
pub fn mutate_headers(p: &mut Packet, rng: &mut ChaCha8Rng) {
    match rng.random_range(0..3) {
        0 => {
            p.headers.eth_src = MacAddr(rng.random());
            p.headers.eth_dst = MacAddr(rng.random());
        }
        1 => {
            p.headers.set_ip_src(Ipv4Addr::from(rng.random::<u32>()));
            p.headers.set_src_port(rng.random());
        }
        _ => {
            p.headers.set_ip_dst(Ipv4Addr::from(rng.random::<u32>()));
            p.headers.set_dst_port(rng.random());
        }
    }
}

pub struct Roundtrip {
    pub packets: usize,
    pub failures: usize,
    pub elapsed: Duration,
    pub entries_left: u64,
}

/// Slices `count` random packets at or above THR = 500 B, rewrites their
/// headers as an NF would, and splices them back in shuffled order.
pub fn roundtrip(count: usize, seed: u64) -> Roundtrip {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tables = SliceTables::new(TableConfig {
        entries: 64,
        ..TableConfig::default()
    })
    .unwrap();
    let min_payload = 500 - 64;
    let mut failures = 0;
    let mut done = 0;
    while done < count {
        // Batches no larger than the table keep every slice on a free entry.
        let batch: Vec<Packet> = (0..rng.random_range(1..=64))
            .map(|_| random_packet(&mut rng, min_payload))
            .collect();
        let mut in_flight = Vec::new();
        for original in batch {
            assert!(wire_size(&original) >= 500);
            let SliceOutcome::Sliced(mut sliced) = tables.slice(original.clone()) else {
                failures += 1;
                continue;
            };
            assert_eq!(wire_size(&sliced), 64);
            let mut expected = original;
            let state = rng.random::<u64>();
            mutate_headers(&mut sliced, &mut ChaCha8Rng::seed_from_u64(state));
            mutate_headers(&mut expected, &mut ChaCha8Rng::seed_from_u64(state));
            in_flight.push((sliced, expected));
        }
        // Egress order differs from ingress order.
        while !in_flight.is_empty() {
            let (sliced, expected) = in_flight.swap_remove(rng.random_range(0..in_flight.len()));
            match tables.splice(sliced) {
                SpliceOutcome::Reconstructed(p) if p == expected => {}
                _ => failures += 1,
            }
            done += 1;
        }
    }
    Roundtrip {
        packets: done,
        failures,
        elapsed: start.elapsed(),
        entries_left: tables.occupancy().entries_used,
    }
}

/// Unbounded map keyed by (index, generation) with explicit visit counts.
pub struct Reference {
    n: u64,
    thr: usize,
    ttl: u8,
    cursor: u64,
    generations: Vec<u64>,
    live: HashMap<(u64, u64), (Bytes, Dscp, u8)>,
}

#[derive(Debug, PartialEq)]
pub enum Outcome {
    Sliced(Packet),
    Passthrough(Packet, PassthroughReason),
    Reconstructed(Packet),
    EgressPassthrough(Packet),
    Dropped,
}

impl Reference {
    pub fn new(n: u64, thr: usize, ttl: u8) -> Self {
        Reference {
            n,
            thr,
            ttl,
            cursor: 0,
            generations: vec![0; n as usize],
            live: HashMap::new(),
        }
    }

    fn bits(&self) -> u32 {
        self.n.trailing_zeros()
    }

    fn live_at(&self, index: u64) -> Option<(u64, u64)> {
        self.live.keys().copied().find(|&(i, _)| i == index)
    }

    pub fn slice(&mut self, p: Packet) -> Outcome {
        if p.headers.dscp.value() == SLICED || p.token_word().is_some() {
            return Outcome::Passthrough(p, PassthroughReason::DscpCollision);
        }
        if 42 + 22 + p.payload().len() < self.thr {
            return Outcome::Passthrough(p, PassthroughReason::BelowThreshold);
        }
        let at = self.cursor;
        self.cursor = (self.cursor + 1) % self.n;
        if let Some(key) = self.live_at(at) {
            let entry = self.live.get_mut(&key).unwrap();
            entry.2 -= 1;
            if entry.2 == 0 {
                self.live.remove(&key);
            }
            return Outcome::Passthrough(p, PassthroughReason::TableOccupied);
        }
        self.generations[at as usize] += 1;
        let generation = self.generations[at as usize];
        let word = ((generation << self.bits()) & !(self.n - 1)) | at;
        self.live
            .insert((at, generation), (p.payload().clone(), p.headers.dscp, self.ttl));
        Outcome::Sliced(nfslicer::packet::mark_sliced(p, word).unwrap().packet)
    }

    pub fn splice(&mut self, p: Packet) -> Outcome {
        if p.headers.dscp.value() != SLICED {
            return Outcome::EgressPassthrough(p);
        }
        let Some(word) = p.token_word() else {
            return Outcome::EgressPassthrough(p);
        };
        let index = word & (self.n - 1);
        let generation = word >> self.bits();
        let mask = u64::MAX >> self.bits();
        let Some(key) = self.live_at(index).filter(|&(_, g)| g & mask == generation) else {
            return Outcome::Dropped;
        };
        let (payload, dscp, _) = self.live.remove(&key).unwrap();
        let restored = nfslicer::packet::restore_sliced(p, &payload, dscp).unwrap();
        Outcome::Reconstructed(restored)
    }
}

pub fn engine_slice(t: &mut SliceTables, p: Packet) -> Outcome {
    match t.slice(p) {
        SliceOutcome::Sliced(p) => Outcome::Sliced(p),
        SliceOutcome::Passthrough(p, r) => Outcome::Passthrough(p, r),
    }
}

pub fn engine_splice(t: &mut SliceTables, p: Packet) -> Outcome {
    match t.splice(p) {
        SpliceOutcome::Reconstructed(p) => Outcome::Reconstructed(p),
        SpliceOutcome::Passthrough(p) => Outcome::EgressPassthrough(p),
        SpliceOutcome::Dropped(SpliceDropReason::StaleGeneration) => Outcome::Dropped,
    }
}

#[derive(Debug, Default)]
pub struct OracleStats {
    pub ops: usize,
    pub divergences: usize,
    pub stale: usize,
    pub reconstructed: usize,
    pub occupied: usize,
}

/// Drives the engine and the reference through the same random mix of
/// slices, splices, NF drops and replayed copies over several table shapes.
pub fn compare_with_reference(ops: usize, seed: u64) -> OracleStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let configs = [(1u64, 1u8), (2, 2), (8, 3), (16, 1), (4, 10), (256, 10)];
    let per_config = ops / configs.len() + 1;
    let mut stats = OracleStats::default();
    for &(n, ttl) in &configs {
        let mut engine = SliceTables::new(TableConfig {
            entries: n,
            thr_bytes: 500,
            ttl_init: ttl,
            mode: SliceMode::Full,
        })
        .unwrap();
        let mut reference = Reference::new(n, 500, ttl);
        // Packets between slice and splice; clones model duplicated or late
        // egress copies.
        let mut in_flight: Vec<Packet> = Vec::new();
        for _ in 0..per_config {
            stats.ops += 1;
            let op = rng.random_range(0..100);
            let (a, b) = if op < 45 || in_flight.is_empty() {
                let mut p = random_packet(&mut rng, 0);
                if rng.random_range(0..50) == 0 {
                    p.headers.dscp = Dscp::new(SLICED).unwrap();
                }
                (engine_slice(&mut engine, p.clone()), reference.slice(p))
            } else if op < 80 {
                let i = rng.random_range(0..in_flight.len());
                let mut p = in_flight.swap_remove(i);
                mutate_headers(&mut p, &mut rng);
                (engine_splice(&mut engine, p.clone()), reference.splice(p))
            } else if op < 90 {
                // NF drop: the packet never reaches egress.
                in_flight.swap_remove(rng.random_range(0..in_flight.len()));
                continue;
            } else {
                // Replay a copy that may already have been spliced.
                let p = in_flight[rng.random_range(0..in_flight.len())].clone();
                (engine_splice(&mut engine, p.clone()), reference.splice(p))
            };
            match &a {
                Outcome::Sliced(p) | Outcome::Passthrough(p, _) => in_flight.push(p.clone()),
                Outcome::Dropped => stats.stale += 1,
                Outcome::Reconstructed(_) => stats.reconstructed += 1,
                Outcome::EgressPassthrough(_) => {}
            }
            if matches!(a, Outcome::Passthrough(_, PassthroughReason::TableOccupied)) {
                stats.occupied += 1;
            }
            if a != b {
                stats.divergences += 1;
            }
            if in_flight.len() > 4 * n as usize + 8 {
                in_flight.swap_remove(0);
            }
        }
    }
    stats
}

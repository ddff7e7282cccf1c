use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::net::Ipv4Addr;

use bytes::Bytes;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{weighted::WeightedIndex, Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::config::{Ddio, SimConfig, SlicingMode};
use super::histogram::{LatencyHistogram, LatencySummary};
use super::queue::QueueModel;
use crate::engine::{shard_for, ShardedEngine, SliceOutcome, SpliceOutcome};
use crate::error::Result;
use crate::nf::{Chain, DropReason, NetworkFunction, NfAction};
use crate::packet::{payload_len_for_frame, wire_size, Headers, MacAddr, Packet, StreamId, MAX_PAYLOAD};

const PS_PER_S: f64 = 1e12;
/// On-NIC pipeline cycle at 390.625 MHz.
const NIC_CYCLE_PS: u64 = 2560;
const SLICE_CYCLES: u64 = 3;
const SPLICE_CYCLES: u64 = 2;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamReport {
    pub injected: u64,
    /// Left the egress wire before the horizon.
    pub completed: u64,
    pub dropped: u64,
    /// Latency over completed packets generated after warmup.
    pub latency: LatencySummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub duration_s: f64,
    pub warmup_s: f64,
    pub seed: u64,
    pub slicing: SlicingMode,
    pub measuring: StreamReport,
    pub load: StreamReport,
    /// Packets injected but neither completed nor dropped at the horizon.
    pub in_flight: u64,
    pub utilization: BTreeMap<String, f64>,
    pub pcie_in_bytes: u64,
    pub pcie_out_bytes: u64,
    pub pcie_in_gbps: f64,
    pub pcie_out_gbps: f64,
    pub drops: BTreeMap<String, u64>,
    /// Slice/splice counters summed over shards; empty when slicing is off.
    pub engine: BTreeMap<String, u64>,
    #[serde(skip)]
    pub measuring_histogram: LatencyHistogram,
    #[serde(skip)]
    pub load_histogram: LatencyHistogram,
}

impl SimReport {
    pub fn drops_total(&self) -> u64 {
        self.drops.values().sum()
    }

    pub fn drops_stale_generation(&self) -> u64 {
        self.drops.get("stale_generation").copied().unwrap_or(0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report always serializes")
    }
}

fn drop_key(r: DropReason) -> &'static str {
    match r {
        DropReason::FirewallDeny => "firewall_deny",
        DropReason::MeterRed => "meter_red",
        DropReason::NatNoMapping => "nat_no_mapping",
        DropReason::NatPoolExhausted => "nat_pool_exhausted",
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Stage {
    LoadGen,
    MeasuringGen,
    NicIngress,
    MemIngress,
    Core,
    MemEgress,
    PcieEgress,
    NicEgress,
}

struct InFlight {
    packet: Packet,
    gen_ps: u64,
    shard: usize,
}

struct StreamState {
    wire_in: QueueModel,
    wire_out: QueueModel,
    report: StreamReport,
    hist: LatencyHistogram,
}

impl StreamState {
    fn new(cfg: &SimConfig) -> Self {
        let l = &cfg.links;
        StreamState {
            wire_in: QueueModel::new(l.nic_gbps, l.wire_base_latency_ns),
            wire_out: QueueModel::new(l.nic_gbps, l.wire_base_latency_ns),
            report: StreamReport::default(),
            hist: LatencyHistogram::new(),
        }
    }
}

struct Simulator<'a> {
    cfg: &'a SimConfig,
    horizon_ps: u64,
    warmup_ps: u64,
    events: BinaryHeap<Reverse<(u64, u64, Stage, u32)>>,
    seq: u64,
    slots: Vec<Option<InFlight>>,
    free: Vec<u32>,
    load: StreamState,
    measuring: StreamState,
    pcie_in: QueueModel,
    pcie_out: QueueModel,
    mem: Option<QueueModel>,
    cores: Vec<QueueModel>,
    chains: Vec<Chain>,
    engine: Option<ShardedEngine>,
    drops: BTreeMap<String, u64>,
    on_wire_at_horizon: u64,
    arrivals_rng: ChaCha8Rng,
    attrs_rng: ChaCha8Rng,
    epoch_gap: Exp<f64>,
    sizes: Option<(Vec<usize>, WeightedIndex<f64>)>,
    flows: Vec<Headers>,
    measuring_headers: Headers,
    fill: Bytes,
}

fn flow_headers(i: u32) -> Headers {
    Headers {
        eth_src: MacAddr([0x02, 0, 0, 0, 0x10, 0x01]),
        eth_dst: MacAddr([0x02, 0, 0, 0, 0, 0x01]),
        ip_src: Ipv4Addr::new(10, 0, (i >> 8) as u8, i as u8),
        ip_dst: Ipv4Addr::new(192, 168, 1, 1),
        l4_src_port: 1024 + (i % 60_000) as u16,
        l4_dst_port: 5001,
        ..Headers::default()
    }
}

impl<'a> Simulator<'a> {
    fn new(cfg: &'a SimConfig) -> Result<Self> {
        cfg.validate()?;
        let l = &cfg.links;
        let n_cores = cfg.sim.cores as usize;
        let engine = match cfg.slicing.table_config()? {
            Some(t) => Some(ShardedEngine::new(n_cores, t)?),
            None => None,
        };
        let chains = (0..n_cores).map(|_| cfg.nf.build()).collect::<Result<Vec<_>>>()?;

        // Independent substreams so that changing packet sizes leaves
        // arrival times untouched.
        let mut arrivals_rng = ChaCha8Rng::seed_from_u64(cfg.sim.seed);
        arrivals_rng.set_stream(1);
        let mut attrs_rng = ChaCha8Rng::seed_from_u64(cfg.sim.seed);
        attrs_rng.set_stream(2);
        let mut fill_rng = ChaCha8Rng::seed_from_u64(cfg.sim.seed);
        fill_rng.set_stream(3);
        let mut fill = vec![0u8; 2 * MAX_PAYLOAD];
        fill_rng.fill_bytes(&mut fill);

        let load = &cfg.streams.load;
        let sizes = if load.size_mix.is_empty() {
            None
        } else {
            let idx = WeightedIndex::new(load.size_mix.iter().map(|s| s.weight))
                .map_err(|e| crate::error::Error::config(format!("size_mix: {e}")))?;
            Some((load.size_mix.iter().map(|s| s.size).collect(), idx))
        };
        let epoch_rate = load.rate_pps / load.burst as f64;

        Ok(Simulator {
            cfg,
            horizon_ps: (cfg.sim.duration_s * PS_PER_S).round() as u64,
            warmup_ps: (cfg.sim.warmup_s * PS_PER_S).round() as u64,
            events: BinaryHeap::new(),
            seq: 0,
            slots: Vec::new(),
            free: Vec::new(),
            load: StreamState::new(cfg),
            measuring: StreamState::new(cfg),
            pcie_in: QueueModel::new(l.pcie_gbps, l.pcie_base_latency_ns),
            pcie_out: QueueModel::new(l.pcie_gbps, l.pcie_base_latency_ns),
            mem: (cfg.sim.ddio == Ddio::Off).then(|| QueueModel::new(l.mem_gbps, l.mem_base_latency_ns)),
            cores: (0..n_cores).map(|_| QueueModel::new(f64::INFINITY, 0.0)).collect(),
            chains,
            engine,
            drops: [
                "firewall_deny",
                "meter_red",
                "nat_no_mapping",
                "nat_pool_exhausted",
                "stale_generation",
            ]
            .into_iter()
            .map(|k| (k.to_string(), 0))
            .collect(),
            on_wire_at_horizon: 0,
            arrivals_rng,
            attrs_rng,
            epoch_gap: Exp::new(epoch_rate / PS_PER_S).expect("rate validated positive"),
            sizes,
            flows: (0..load.flows).map(flow_headers).collect(),
            measuring_headers: Headers {
                ip_src: Ipv4Addr::new(10, 255, 0, 1),
                l4_src_port: 9000,
                ..flow_headers(0)
            },
            fill: Bytes::from(fill),
        })
    }

    fn push(&mut self, t: u64, stage: Stage, slot: u32) {
        self.seq += 1;
        self.events.push(Reverse((t, self.seq, stage, slot)));
    }

    fn alloc(&mut self, f: InFlight) -> u32 {
        match self.free.pop() {
            Some(i) => {
                self.slots[i as usize] = Some(f);
                i
            }
            None => {
                self.slots.push(Some(f));
                (self.slots.len() - 1) as u32
            }
        }
    }

    fn take(&mut self, slot: u32) -> InFlight {
        self.slots[slot as usize].take().expect("event refers to a live packet")
    }

    fn put(&mut self, slot: u32, f: InFlight) {
        self.slots[slot as usize] = Some(f);
    }

    fn release(&mut self, slot: u32) {
        debug_assert!(self.slots[slot as usize].is_none());
        self.free.push(slot);
    }

    fn stream(&mut self, s: StreamId) -> &mut StreamState {
        match s {
            StreamId::Load => &mut self.load,
            StreamId::Measuring => &mut self.measuring,
        }
    }

    fn make_packet(&mut self, stream: StreamId, headers: Headers, frame: usize) -> Packet {
        let len = payload_len_for_frame(frame).expect("frame sizes validated");
        let off = self.attrs_rng.random_range(0..=self.fill.len() - len);
        let payload = self.fill.slice(off..off + len);
        Packet::new(headers, payload, stream).expect("payload within bounds")
    }

    fn inject(&mut self, t: u64, packet: Packet) {
        let stream = packet.stream;
        let shard = shard_for(&packet, self.cores.len());
        let state = self.stream(stream);
        state.report.injected += 1;
        let arrival = state.wire_in.transfer(t, wire_size(&packet));
        let slot = self.alloc(InFlight {
            packet,
            gen_ps: t,
            shard,
        });
        self.push(arrival, Stage::NicIngress, slot);
    }

    fn gen_load(&mut self, t: u64) {
        let load = &self.cfg.streams.load;
        for _ in 0..load.burst {
            let frame = match &self.sizes {
                Some((sizes, idx)) => sizes[idx.sample(&mut self.attrs_rng)],
                None => load.size,
            };
            let flow = self.attrs_rng.random_range(0..self.flows.len());
            let headers = self.flows[flow].clone();
            let p = self.make_packet(StreamId::Load, headers, frame);
            self.inject(t, p);
        }
        let gap = (self.epoch_gap.sample(&mut self.arrivals_rng)).round() as u64;
        let next = t + gap.max(1);
        if next < self.horizon_ps {
            self.push(next, Stage::LoadGen, 0);
        }
    }

    fn measuring_period_ps(&self) -> u64 {
        (PS_PER_S / self.cfg.streams.measuring.rate_pps).round().max(1.0) as u64
    }

    fn gen_measuring(&mut self, t: u64) {
        let headers = self.measuring_headers.clone();
        let p = self.make_packet(StreamId::Measuring, headers, self.cfg.streams.measuring.size);
        self.inject(t, p);
        let next = t + self.measuring_period_ps();
        if next < self.horizon_ps {
            self.push(next, Stage::MeasuringGen, 0);
        }
    }

    fn count_drop(&mut self, stream: StreamId, key: &str) {
        *self.drops.get_mut(key).expect("known drop cause") += 1;
        self.stream(stream).report.dropped += 1;
    }

    fn pcie_bytes(&self, p: &Packet) -> usize {
        wire_size(p) + self.cfg.links.pcie_overhead_bytes
    }

    fn nic_ingress(&mut self, t: u64, slot: u32) {
        let mut f = self.take(slot);
        let mut ready = t;
        if f.packet.stream == StreamId::Load {
            if let Some(engine) = self.engine.as_mut() {
                match engine.shard_mut(f.shard).slice(f.packet) {
                    SliceOutcome::Sliced(p) => {
                        f.packet = p;
                        if self.cfg.sim.hw_latency {
                            ready += SLICE_CYCLES * NIC_CYCLE_PS;
                        }
                    }
                    SliceOutcome::Passthrough(p, _) => f.packet = p,
                }
            }
        }
        let bytes = self.pcie_bytes(&f.packet);
        let done = self.pcie_in.transfer(ready, bytes);
        self.put(slot, f);
        let next = if self.mem.is_some() {
            Stage::MemIngress
        } else {
            Stage::Core
        };
        self.push(done, next, slot);
    }

    fn memory(&mut self, t: u64, slot: u32, next: Stage) {
        let bytes = wire_size(&self.slots[slot as usize].as_ref().expect("live").packet);
        let done = self
            .mem
            .as_mut()
            .expect("memory stage only with ddio off")
            .transfer(t, bytes);
        self.push(done, next, slot);
    }

    fn core(&mut self, t: u64, slot: u32) {
        let f = self.take(slot);
        let stream = f.packet.stream;
        let core = &mut self.cores[f.shard];
        let start = core.start_time(t);
        let verdict = self.chains[f.shard].process(f.packet, start / 1000);
        let service = (verdict.service_ns + self.cfg.sim.core_overhead_ns) * 1000;
        let done = core.serve(t, service);
        match verdict.action {
            NfAction::Forward(packet) => {
                self.put(slot, InFlight { packet, ..f });
                let next = if self.mem.is_some() {
                    Stage::MemEgress
                } else {
                    Stage::PcieEgress
                };
                self.push(done, next, slot);
            }
            NfAction::Drop(reason) => {
                self.release(slot);
                self.count_drop(stream, drop_key(reason));
            }
        }
    }

    fn pcie_egress(&mut self, t: u64, slot: u32) {
        let bytes = self.pcie_bytes(&self.slots[slot as usize].as_ref().expect("live").packet);
        let done = self.pcie_out.transfer(t, bytes);
        self.push(done, Stage::NicEgress, slot);
    }

    fn nic_egress(&mut self, t: u64, slot: u32) {
        let f = self.take(slot);
        self.release(slot);
        let mut ready = t;
        let packet = match (f.packet.stream, self.engine.as_mut()) {
            (StreamId::Load, Some(engine)) => match engine.shard_mut(f.shard).splice(f.packet) {
                SpliceOutcome::Reconstructed(p) => {
                    if self.cfg.sim.hw_latency {
                        ready += SPLICE_CYCLES * NIC_CYCLE_PS;
                    }
                    p
                }
                SpliceOutcome::Passthrough(p) => p,
                SpliceOutcome::Dropped(_) => {
                    self.count_drop(StreamId::Load, "stale_generation");
                    return;
                }
            },
            (_, _) => f.packet,
        };
        let (warmup, horizon) = (self.warmup_ps, self.horizon_ps);
        let state = self.stream(packet.stream);
        let done = state.wire_out.transfer(ready, wire_size(&packet));
        if done > horizon {
            self.on_wire_at_horizon += 1;
            return;
        }
        state.report.completed += 1;
        if f.gen_ps >= warmup {
            state.hist.record((done - f.gen_ps + 500) / 1000);
        }
    }

    fn run(mut self) -> SimReport {
        let phase = self.attrs_rng.random_range(0..self.measuring_period_ps());
        self.push(phase, Stage::MeasuringGen, 0);
        self.push(0, Stage::LoadGen, 0);
        while let Some(&Reverse((t, _, stage, slot))) = self.events.peek() {
            if t > self.horizon_ps {
                break;
            }
            self.events.pop();
            match stage {
                Stage::LoadGen => self.gen_load(t),
                Stage::MeasuringGen => self.gen_measuring(t),
                Stage::NicIngress => self.nic_ingress(t, slot),
                Stage::MemIngress => self.memory(t, slot, Stage::Core),
                Stage::Core => self.core(t, slot),
                Stage::MemEgress => self.memory(t, slot, Stage::PcieEgress),
                Stage::PcieEgress => self.pcie_egress(t, slot),
                Stage::NicEgress => self.nic_egress(t, slot),
            }
        }
        self.report()
    }

    fn report(self) -> SimReport {
        let h = self.horizon_ps;
        let secs = self.cfg.sim.duration_s;
        let mut utilization = BTreeMap::new();
        utilization.insert("load_wire_in".to_string(), self.load.wire_in.utilization(h));
        utilization.insert("load_wire_out".to_string(), self.load.wire_out.utilization(h));
        utilization.insert("measuring_wire_in".to_string(), self.measuring.wire_in.utilization(h));
        utilization.insert("pcie_in".to_string(), self.pcie_in.utilization(h));
        utilization.insert("pcie_out".to_string(), self.pcie_out.utilization(h));
        if let Some(mem) = &self.mem {
            utilization.insert("memory".to_string(), mem.utilization(h));
        }
        for (i, c) in self.cores.iter().enumerate() {
            utilization.insert(format!("core_{i}"), c.utilization(h));
        }
        let live = self.slots.iter().filter(|s| s.is_some()).count() as u64;
        let finish = |s: StreamState| StreamReport {
            latency: s.hist.summary(),
            ..s.report
        };
        SimReport {
            duration_s: secs,
            warmup_s: self.cfg.sim.warmup_s,
            seed: self.cfg.sim.seed,
            slicing: self.cfg.slicing.mode,
            in_flight: live + self.on_wire_at_horizon,
            utilization,
            pcie_in_bytes: self.pcie_in.bytes(),
            pcie_out_bytes: self.pcie_out.bytes(),
            pcie_in_gbps: self.pcie_in.bytes() as f64 * 8.0 / secs / 1e9,
            pcie_out_gbps: self.pcie_out.bytes() as f64 * 8.0 / secs / 1e9,
            drops: self.drops,
            engine: self.engine.as_ref().map(|e| e.snapshot()).unwrap_or_default(),
            measuring_histogram: self.measuring.hist.clone(),
            load_histogram: self.load.hist.clone(),
            measuring: finish(self.measuring),
            load: finish(self.load),
        }
    }
}

/// Runs one experiment to its horizon.
pub fn run(cfg: &SimConfig) -> Result<SimReport> {
    Ok(Simulator::new(cfg)?.run())
}

/// Analytic DMA volume of the load stream, excluding per-packet overhead.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcieTraffic {
    pub unsliced_bytes_per_packet: f64,
    pub bytes_per_packet: f64,
    /// Unsliced over sliced bytes per packet.
    pub reduction: f64,
    pub per_direction_bytes_per_s: f64,
    pub aggregate_bytes_per_s: f64,
}

pub fn pcie_traffic(cfg: &SimConfig) -> PcieTraffic {
    let load = &cfg.streams.load;
    let unsliced = load.mean_of(|s| s as f64);
    let sliced = cfg.load_pcie_frame_bytes();
    PcieTraffic {
        unsliced_bytes_per_packet: unsliced,
        bytes_per_packet: sliced,
        reduction: unsliced / sliced,
        per_direction_bytes_per_s: load.rate_pps * sliced,
        aggregate_bytes_per_s: 2.0 * load.rate_pps * sliced,
    }
}

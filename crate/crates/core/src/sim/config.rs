use serde::{Deserialize, Serialize};

use crate::engine::{SliceMode, TableConfig, DEFAULT_ENTRIES, DEFAULT_THRESHOLD, DEFAULT_TTL};
use crate::error::{Error, Result};
use crate::nf::NfSection;
use crate::packet::{payload_len_for_frame, MAX_FRAME, MIN_FRAME};

/// One experiment. Every section and key is optional in the file; missing
/// keys take the defaults below.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub sim: SimSection,
    pub streams: StreamsSection,
    pub nf: NfSection,
    pub slicing: SlicingSection,
    pub links: LinksSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ddio {
    On,
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    /// Simulated seconds; packets still in flight at the horizon are not
    /// reported.
    pub duration_s: f64,
    /// Packets generated before this time are simulated but not recorded.
    pub warmup_s: f64,
    pub seed: u64,
    /// Worker cores, one NF instance and one table shard per core.
    pub cores: u32,
    /// Fixed per-packet driver cost on a core, on top of the NF chain.
    pub core_overhead_ns: u64,
    pub ddio: Ddio,
    /// Charge the on-NIC slice (3 cycles) and splice (2 cycles) pipeline
    /// latency to sliced packets.
    pub hw_latency: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            duration_s: 0.5,
            warmup_s: 0.01,
            seed: 1,
            cores: 4,
            core_overhead_ns: 100,
            ddio: Ddio::On,
            hw_latency: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamsSection {
    pub load: LoadStream,
    pub measuring: MeasuringStream,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeWeight {
    pub size: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadStream {
    pub rate_pps: f64,
    /// Frame size in bytes; ignored when `size_mix` is non-empty.
    pub size: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub size_mix: Vec<SizeWeight>,
    pub flows: u32,
    /// Packets per arrival epoch. Epochs are Poisson at `rate_pps / burst`.
    pub burst: u32,
}

impl Default for LoadStream {
    fn default() -> Self {
        LoadStream {
            rate_pps: 4e6,
            size: MAX_FRAME,
            size_mix: Vec::new(),
            flows: 1024,
            burst: 1,
        }
    }
}

impl LoadStream {
    pub fn sizes(&self) -> Vec<SizeWeight> {
        if self.size_mix.is_empty() {
            vec![SizeWeight {
                size: self.size,
                weight: 1.0,
            }]
        } else {
            self.size_mix.clone()
        }
    }

    /// Weighted mean of `f(size)` over the size distribution.
    pub fn mean_of(&self, f: impl Fn(usize) -> f64) -> f64 {
        let sizes = self.sizes();
        let total: f64 = sizes.iter().map(|s| s.weight).sum();
        sizes.iter().map(|s| s.weight * f(s.size)).sum::<f64>() / total
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasuringStream {
    pub rate_pps: f64,
    pub size: usize,
}

impl Default for MeasuringStream {
    fn default() -> Self {
        MeasuringStream {
            rate_pps: 1000.0,
            size: MAX_FRAME,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlicingMode {
    Off,
    Full,
    Partial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlicingSection {
    pub mode: SlicingMode,
    /// Partial mode: share of the payload to slice.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    /// Partial mode: trailing payload bytes to slice.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bytes: Option<usize>,
    pub thr_bytes: usize,
    /// Table entries per shard; a power of two.
    pub entries: u64,
    pub ttl: u8,
}

impl Default for SlicingSection {
    fn default() -> Self {
        SlicingSection {
            mode: SlicingMode::Off,
            fraction: None,
            bytes: None,
            thr_bytes: DEFAULT_THRESHOLD,
            entries: DEFAULT_ENTRIES,
            ttl: DEFAULT_TTL,
        }
    }
}

impl SlicingSection {
    /// `None` when slicing is off.
    pub fn slice_mode(&self) -> Result<Option<SliceMode>> {
        match (self.mode, self.fraction, self.bytes) {
            (SlicingMode::Off, _, _) => Ok(None),
            (SlicingMode::Full, None, None) => Ok(Some(SliceMode::Full)),
            (SlicingMode::Full, _, _) => Err(Error::config("slicing.fraction/bytes only apply to partial mode")),
            (SlicingMode::Partial, Some(f), None) => Ok(Some(SliceMode::Fraction(f))),
            (SlicingMode::Partial, None, Some(k)) => Ok(Some(SliceMode::Bytes(k))),
            (SlicingMode::Partial, _, _) => Err(Error::config(
                "partial slicing needs exactly one of slicing.fraction or slicing.bytes",
            )),
        }
    }

    pub fn table_config(&self) -> Result<Option<TableConfig>> {
        Ok(self.slice_mode()?.map(|mode| TableConfig {
            entries: self.entries,
            thr_bytes: self.thr_bytes,
            ttl_init: self.ttl,
            mode,
        }))
    }

    /// Frame bytes that leave the NIC for a packet of `frame` bytes.
    pub fn sliced_frame_size(&self, frame: usize) -> usize {
        match self.slice_mode() {
            Ok(Some(mode)) if frame >= self.thr_bytes => {
                let payload = frame.saturating_sub(MIN_FRAME);
                (frame - mode.slice_len(payload)).max(MIN_FRAME)
            }
            _ => frame,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinksSection {
    pub nic_gbps: f64,
    pub wire_base_latency_ns: f64,
    /// Usable DMA bandwidth per direction.
    pub pcie_gbps: f64,
    pub pcie_base_latency_ns: f64,
    /// Descriptor and TLP header bytes charged per packet per direction.
    pub pcie_overhead_bytes: usize,
    pub mem_gbps: f64,
    pub mem_base_latency_ns: f64,
}

impl Default for LinksSection {
    fn default() -> Self {
        LinksSection {
            nic_gbps: 100.0,
            wire_base_latency_ns: 1000.0,
            pcie_gbps: 100.0,
            pcie_base_latency_ns: 900.0,
            pcie_overhead_bytes: 64,
            mem_gbps: 150.0,
            mem_base_latency_ns: 100.0,
        }
    }
}

/// A resource whose offered load meets or exceeds its capacity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Saturation {
    pub resource: String,
    pub offered: f64,
    pub capacity: f64,
}

impl std::fmt::Display for Saturation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: offered {:.3} >= capacity {:.3} ({:.1}%)",
            self.resource,
            self.offered,
            self.capacity,
            100.0 * self.offered / self.capacity
        )
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be positive, got {v}")))
    }
}

fn frame(name: &str, size: usize) -> Result<()> {
    payload_len_for_frame(size)
        .map(|_| ())
        .map_err(|_| Error::config(format!("{name} = {size} outside {MIN_FRAME}..={MAX_FRAME}")))
}

impl SimConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        Self::from_toml_with_overrides(s, &[])
    }

    /// Parses `s` and applies `key.path=value` overrides before
    /// deserializing. Values are read as TOML, falling back to a string.
    pub fn from_toml_with_overrides(s: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = s.parse().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: SimConfig = doc
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.sim;
        positive("sim.duration_s", s.duration_s)?;
        if !(s.warmup_s >= 0.0 && s.warmup_s < s.duration_s) {
            return Err(Error::config("sim.warmup_s must be in [0, duration_s)"));
        }
        if s.cores == 0 {
            return Err(Error::config("sim.cores must be at least 1"));
        }
        let load = &self.streams.load;
        positive("streams.load.rate_pps", load.rate_pps)?;
        if load.flows == 0 || load.burst == 0 {
            return Err(Error::config("streams.load.flows and burst must be at least 1"));
        }
        for sw in load.sizes() {
            frame("streams.load.size", sw.size)?;
            if !(sw.weight >= 0.0 && sw.weight.is_finite()) {
                return Err(Error::config("size_mix weights must be non-negative"));
            }
        }
        if load.sizes().iter().all(|s| s.weight == 0.0) {
            return Err(Error::config("size_mix needs a positive weight"));
        }
        positive("streams.measuring.rate_pps", self.streams.measuring.rate_pps)?;
        frame("streams.measuring.size", self.streams.measuring.size)?;
        self.nf.validate()?;
        if let Some(t) = self.slicing.table_config()? {
            t.validate()?;
        }
        let l = &self.links;
        positive("links.nic_gbps", l.nic_gbps)?;
        positive("links.pcie_gbps", l.pcie_gbps)?;
        positive("links.mem_gbps", l.mem_gbps)?;
        for (name, v) in [
            ("links.wire_base_latency_ns", l.wire_base_latency_ns),
            ("links.pcie_base_latency_ns", l.pcie_base_latency_ns),
            ("links.mem_base_latency_ns", l.mem_base_latency_ns),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be non-negative")));
            }
        }
        Ok(())
    }

    pub fn slicing_enabled(&self) -> bool {
        self.slicing.mode != SlicingMode::Off
    }

    /// Mean bytes per load packet crossing PCIe, before per-packet overhead.
    pub fn load_pcie_frame_bytes(&self) -> f64 {
        self.streams
            .load
            .mean_of(|size| self.slicing.sliced_frame_size(size) as f64)
    }

    /// Resources whose offered load reaches capacity, checked analytically.
    pub fn saturation(&self) -> Vec<Saturation> {
        let load = &self.streams.load;
        let meas = &self.streams.measuring;
        let l = &self.links;
        let ovh = l.pcie_overhead_bytes as f64;
        let mut out = Vec::new();
        let mut check = |resource: &str, offered: f64, capacity: f64| {
            if offered >= capacity {
                out.push(Saturation {
                    resource: resource.into(),
                    offered,
                    capacity,
                });
            }
        };
        let load_wire_gbps = load.rate_pps * load.mean_of(|s| s as f64) * 8.0 / 1e9;
        check("load wire (Gbps)", load_wire_gbps, l.nic_gbps);
        check(
            "measuring wire (Gbps)",
            meas.rate_pps * meas.size as f64 * 8.0 / 1e9,
            l.nic_gbps,
        );
        let pcie_gbps =
            (load.rate_pps * (self.load_pcie_frame_bytes() + ovh) + meas.rate_pps * (meas.size as f64 + ovh)) * 8.0
                / 1e9;
        check("pcie per direction (Gbps)", pcie_gbps, l.pcie_gbps);
        if self.sim.ddio == Ddio::Off {
            let mem_gbps =
                2.0 * (load.rate_pps * self.load_pcie_frame_bytes() + meas.rate_pps * meas.size as f64) * 8.0 / 1e9;
            check("memory (Gbps)", mem_gbps, l.mem_gbps);
        }
        let per_pkt_ns = (self.nf.service_ns() + self.sim.core_overhead_ns) as f64;
        let core_load = (load.rate_pps + meas.rate_pps) * per_pkt_ns / 1e9;
        check("cores (busy cores)", core_load, self.sim.cores as f64);
        out
    }
}

fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override {spec:?} is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::config(format!("override {spec:?} has an empty key")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = keys.split_last().expect("non-empty path");
    let mut table = doc;
    for k in parents {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override {spec:?}: {k} is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

//! Closed-form sizing: on-NIC table provisioning, interface line rate, data
//! movement reduction, switch SRAM extrapolation, and traffic-mix
//! statistics over packet-size histograms.
//!
//! Times are integer picoseconds and rates integer bits per second so the
//! headline numbers come out exact.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::packet::{MAX_FRAME, MAX_PAYLOAD};

const PS_PER_S: u128 = 1_000_000_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizingInput {
    pub line_rate_bps: u64,
    pub thr_bytes: u64,
    pub service_time_ps: u64,
    pub max_payload_bytes: u64,
}

impl SizingInput {
    pub fn new(line_rate_bps: u64, thr_bytes: u64, service_time_ps: u64) -> Self {
        SizingInput {
            line_rate_bps,
            thr_bytes,
            service_time_ps,
            max_payload_bytes: MAX_PAYLOAD as u64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.line_rate_bps == 0 || self.thr_bytes == 0 || self.service_time_ps == 0 || self.max_payload_bytes == 0 {
            return Err(Error::config("sizing inputs must all be positive"));
        }
        Ok(())
    }

    /// Shortest gap between two slice-worthy arrivals at line rate.
    pub fn min_interarrival_ps(&self) -> f64 {
        self.thr_bytes as f64 * 8.0 * PS_PER_S as f64 / self.line_rate_bps as f64
    }
}

/// Table entries needed to hold every payload in flight for one service
/// time at line rate: `ceil(service_time / (thr * 8 / line_rate))`.
pub fn provision_entries(input: &SizingInput) -> Result<u64> {
    input.validate()?;
    let num = input.service_time_ps as u128 * input.line_rate_bps as u128;
    let den = input.thr_bytes as u128 * 8 * PS_PER_S;
    Ok(num.div_ceil(den) as u64)
}

pub fn sram_bytes(entries: u64, max_payload_bytes: u64) -> u64 {
    entries * max_payload_bytes
}

/// Gbps sustained by a `width_bits` datapath clocked every `cycle_ps`.
pub fn line_rate_gbps(width_bits: u64, cycle_ps: u64) -> Result<f64> {
    if width_bits == 0 || cycle_ps == 0 {
        return Err(Error::config("width and cycle time must be positive"));
    }
    Ok(width_bits as f64 * 1000.0 / cycle_ps as f64)
}

pub fn data_reduction(full_bytes: u64, sliced_bytes: u64) -> Result<f64> {
    if sliced_bytes == 0 || full_bytes < sliced_bytes {
        return Err(Error::config("need full_bytes >= sliced_bytes > 0"));
    }
    Ok(full_bytes as f64 / sliced_bytes as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalabilityPoint {
    pub servers: u32,
    pub sram_utilization: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SwitchModel {
    /// Least-squares line `u = a + b * servers`.
    LinearWithIntercept,
    /// `u = b * servers` with the smallest observed per-server share.
    ZeroIntercept,
}

impl std::str::FromStr for SwitchModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear-with-intercept" | "linear" | "intercept" => Ok(SwitchModel::LinearWithIntercept),
            "zero-intercept" | "zero" => Ok(SwitchModel::ZeroIntercept),
            other => Err(Error::config(format!("unknown switch model {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchFit {
    pub model: SwitchModel,
    pub intercept: f64,
    pub slope: f64,
    pub nic_scale: f64,
    pub max_servers: u64,
}

impl SwitchFit {
    pub fn predicted_utilization(&self, servers: u64) -> f64 {
        self.nic_scale * (self.intercept + self.slope * servers as f64)
    }
}

/// Largest server count whose predicted SRAM utilization stays at or below
/// 100%. `nic_scale` multiplies the fitted utilization, so a 2.5x faster
/// NIC holds 2.5x as many bytes in flight per server.
pub fn switch_max_servers(points: &[ScalabilityPoint], model: SwitchModel, nic_scale: f64) -> Result<SwitchFit> {
    if points.len() < 2 {
        return Err(Error::DegenerateFit("need at least two points"));
    }
    if !nic_scale.is_finite() || nic_scale <= 0.0 {
        return Err(Error::config("nic_scale must be positive"));
    }
    for p in points {
        if p.servers == 0 || !(p.sram_utilization > 0.0 && p.sram_utilization <= 1.0) {
            return Err(Error::config("points need servers > 0 and utilization in (0, 1]"));
        }
    }
    let mut servers: Vec<u32> = points.iter().map(|p| p.servers).collect();
    servers.sort_unstable();
    servers.dedup();
    if servers.len() != points.len() {
        return Err(Error::DegenerateFit("server counts must be distinct"));
    }

    let (intercept, slope) = match model {
        SwitchModel::LinearWithIntercept => {
            let n = points.len() as f64;
            let mx = points.iter().map(|p| p.servers as f64).sum::<f64>() / n;
            let my = points.iter().map(|p| p.sram_utilization).sum::<f64>() / n;
            let sxy: f64 = points
                .iter()
                .map(|p| (p.servers as f64 - mx) * (p.sram_utilization - my))
                .sum();
            let sxx: f64 = points.iter().map(|p| (p.servers as f64 - mx).powi(2)).sum();
            let slope = sxy / sxx;
            (my - slope * mx, slope)
        }
        SwitchModel::ZeroIntercept => {
            let slope = points
                .iter()
                .map(|p| p.sram_utilization / p.servers as f64)
                .fold(f64::INFINITY, f64::min);
            (0.0, slope)
        }
    };
    if slope.is_nan() || slope <= 0.0 {
        return Err(Error::DegenerateFit("utilization does not grow with servers"));
    }
    // Small tolerance so a prediction of exactly 100% counts as fitting.
    let bound = ((1.0 / nic_scale - intercept) / slope + 1e-9).floor();
    Ok(SwitchFit {
        model,
        intercept,
        slope,
        nic_scale,
        max_servers: bound.max(0.0) as u64,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeHistogram {
    bins: Vec<(u32, u64)>,
}

impl SizeHistogram {
    pub fn new(bins: impl IntoIterator<Item = (u32, u64)>) -> Result<Self> {
        let bins: Vec<(u32, u64)> = bins.into_iter().collect();
        if let Some(&(size, _)) = bins.iter().find(|(s, _)| *s as usize > MAX_FRAME) {
            return Err(Error::InvalidFrameSize(size as usize));
        }
        Ok(SizeHistogram { bins })
    }

    pub fn bins(&self) -> &[(u32, u64)] {
        &self.bins
    }

    pub fn total_packets(&self) -> u64 {
        self.bins.iter().map(|(_, c)| c).sum()
    }

    /// Reads either `size,count` rows or one size per line. A leading
    /// non-numeric row is taken as a header.
    pub fn from_csv(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut bins = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |j: usize| rec.get(j).filter(|s| !s.is_empty());
            let Some(first) = field(0) else { continue };
            let size: u32 = match first.parse() {
                Ok(v) => v,
                Err(_) if i == 0 => continue,
                Err(_) => return Err(Error::config(format!("line {}: bad size {first:?}", i + 1))),
            };
            let count: u64 = match field(1) {
                None => 1,
                Some(c) => c
                    .parse()
                    .map_err(|_| Error::config(format!("line {}: bad count {c:?}", i + 1)))?,
            };
            bins.push((size, count));
        }
        Self::new(bins)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficMix {
    pub packet_fraction: f64,
    pub byte_fraction: f64,
}

/// Share of packets at or above `threshold_bytes` and their share of bytes.
pub fn traffic_mix(h: &SizeHistogram, threshold_bytes: u32) -> Result<TrafficMix> {
    let (mut pkts, mut bytes, mut big_pkts, mut big_bytes) = (0u128, 0u128, 0u128, 0u128);
    for &(size, count) in h.bins() {
        let b = size as u128 * count as u128;
        pkts += count as u128;
        bytes += b;
        if size >= threshold_bytes {
            big_pkts += count as u128;
            big_bytes += b;
        }
    }
    if pkts == 0 {
        return Err(Error::EmptyInput("size histogram has no packets"));
    }
    Ok(TrafficMix {
        packet_fraction: big_pkts as f64 / pkts as f64,
        byte_fraction: if bytes == 0 {
            0.0
        } else {
            big_bytes as f64 / bytes as f64
        },
    })
}

/// Parses a bit rate such as `100G`, `40Gbps`, `2.5e9`.
pub fn parse_bitrate(s: &str) -> Result<u64> {
    let t = s.trim();
    let lower = t.to_ascii_lowercase();
    let body = lower.strip_suffix("bps").unwrap_or(&lower);
    let (num, mult) = match body.chars().last() {
        Some('k') => (&body[..body.len() - 1], 1e3),
        Some('m') => (&body[..body.len() - 1], 1e6),
        Some('g') => (&body[..body.len() - 1], 1e9),
        Some('t') => (&body[..body.len() - 1], 1e12),
        _ => (body, 1.0),
    };
    let v: f64 = num.parse().map_err(|_| Error::config(format!("bad bit rate {s:?}")))?;
    let bps = (v * mult).round();
    if !bps.is_finite() || bps < 1.0 {
        return Err(Error::config(format!("bit rate {s:?} must be positive")));
    }
    Ok(bps as u64)
}

/// Parses a duration such as `10us`, `40ns`, `2.56ns`, `1ms` into
/// picoseconds. A bare number is seconds.
pub fn parse_duration_ps(s: &str) -> Result<u64> {
    let t = s.trim().to_ascii_lowercase();
    let units: [(&str, f64); 6] = [
        ("ps", 1.0),
        ("ns", 1e3),
        ("us", 1e6),
        ("µs", 1e6),
        ("ms", 1e9),
        ("s", 1e12),
    ];
    let (num, mult) = units
        .iter()
        .find_map(|(suffix, m)| t.strip_suffix(suffix).map(|n| (n, *m)))
        .unwrap_or((t.as_str(), 1e12));
    let v: f64 = num
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("bad duration {s:?}")))?;
    let ps = (v * mult).round();
    if !ps.is_finite() || ps < 1.0 {
        return Err(Error::config(format!("duration {s:?} must be positive")));
    }
    Ok(ps as u64)
}

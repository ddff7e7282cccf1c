use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{SimConfig, SlicingMode};
use super::run::{run, SimReport};
use crate::error::{Error, Result};

/// Fixed-size slice marks appended to a fraction sweep.
pub const FIXED_SLICE_MARKS: [usize; 2] = [160, 320];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    PacketSize,
    RatePps,
    SlicedFraction,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::PacketSize => "packet_size",
            SweepAxis::RatePps => "rate_pps",
            SweepAxis::SlicedFraction => "sliced_fraction",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "packet_size" | "size" => Ok(SweepAxis::PacketSize),
            "rate_pps" | "rate" => Ok(SweepAxis::RatePps),
            "sliced_fraction" | "fraction" => Ok(SweepAxis::SlicedFraction),
            _ => Err(Error::config(format!(
                "unknown sweep axis {s:?}; expected packet_size, rate_pps, or sliced_fraction"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub run_id: String,
    pub axis_value: String,
    pub report: Option<SimReport>,
    /// Measuring-stream mean latency reduction against slicing off, percent.
    pub reduction_pct: Option<f64>,
    /// Measuring-stream mean and p90 over the 64 B, slicing-off run.
    pub gap_mean: Option<f64>,
    pub gap_p90: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

pub const CSV_COLUMNS: [&str; 17] = [
    "run_id",
    "axis_value",
    "mean_ns",
    "p50_ns",
    "p90_ns",
    "p99_ns",
    "pcie_in_gbps",
    "pcie_out_gbps",
    "drops_total",
    "drops_stale_gen",
    "reduction_pct",
    "gap_mean",
    "gap_p90",
    "pcie_in_util",
    "pcie_out_util",
    "max_core_util",
    "error",
];

impl SweepTable {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&CSV_COLUMNS.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&csv_row(row));
            out.push('\n');
        }
        out
    }
}

fn opt(v: Option<f64>, decimals: usize) -> String {
    v.map(|x| format!("{x:.decimals$}")).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One CSV line in [`CSV_COLUMNS`] order. Formatting is locale-independent.
pub fn csv_row(row: &SweepRow) -> String {
    let mut s = String::new();
    let _ = write!(s, "{},{},", csv_field(&row.run_id), csv_field(&row.axis_value));
    match &row.report {
        Some(r) => {
            let l = &r.measuring.latency;
            let util = |k: &str| r.utilization.get(k).copied().unwrap_or(0.0);
            let max_core = r
                .utilization
                .iter()
                .filter(|(k, _)| k.starts_with("core_"))
                .map(|(_, v)| *v)
                .fold(0.0, f64::max);
            let _ = write!(
                s,
                "{:.1},{},{},{},{:.3},{:.3},{},{},{},{},{},{:.4},{:.4},{:.4},",
                l.mean_ns,
                l.p50_ns,
                l.p90_ns,
                l.p99_ns,
                r.pcie_in_gbps,
                r.pcie_out_gbps,
                r.drops_total(),
                r.drops_stale_generation(),
                opt(row.reduction_pct, 3),
                opt(row.gap_mean, 4),
                opt(row.gap_p90, 4),
                util("pcie_in"),
                util("pcie_out"),
                max_core,
            );
        }
        None => s.push_str(",,,,,,,,,,,,,,"),
    }
    s.push_str(&csv_field(row.error.as_deref().unwrap_or("")));
    s
}

/// Single-run row used by `simulate`.
pub fn report_row(run_id: &str, report: &SimReport) -> SweepRow {
    SweepRow {
        run_id: run_id.to_string(),
        axis_value: String::new(),
        report: Some(report.clone()),
        reduction_pct: None,
        gap_mean: None,
        gap_p90: None,
        error: None,
    }
}

struct Point {
    label: String,
    cfg: Result<SimConfig>,
}

fn apply(base: &SimConfig, axis: SweepAxis, v: f64) -> Result<SimConfig> {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::PacketSize => {
            if v.fract() != 0.0 || v < 0.0 {
                return Err(Error::config(format!("packet size {v} is not a whole number of bytes")));
            }
            cfg.streams.load.size = v as usize;
            cfg.streams.load.size_mix.clear();
        }
        SweepAxis::RatePps => cfg.streams.load.rate_pps = v,
        SweepAxis::SlicedFraction => {
            if v == 0.0 {
                cfg.slicing.mode = SlicingMode::Off;
            } else {
                cfg.slicing.mode = SlicingMode::Partial;
                cfg.slicing.fraction = Some(v);
                cfg.slicing.bytes = None;
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fixed_slice(base: &SimConfig, bytes: usize) -> Result<SimConfig> {
    let mut cfg = base.clone();
    cfg.slicing.mode = SlicingMode::Partial;
    cfg.slicing.fraction = None;
    cfg.slicing.bytes = Some(bytes);
    cfg.validate()?;
    Ok(cfg)
}

fn slicing_off(cfg: &SimConfig) -> SimConfig {
    let mut c = cfg.clone();
    c.slicing.mode = SlicingMode::Off;
    c.slicing.fraction = None;
    c.slicing.bytes = None;
    c
}

fn small_packets(cfg: &SimConfig) -> SimConfig {
    let mut c = slicing_off(cfg);
    c.streams.load.size = 64;
    c.streams.load.size_mix.clear();
    c
}

fn run_checked(cfg: &SimConfig) -> std::result::Result<SimReport, String> {
    if let Some(s) = cfg.saturation().first() {
        return Err(format!("saturated: {s}"));
    }
    run(cfg).map_err(|e| e.to_string())
}

/// Runs one simulation per value, plus the slicing-off and 64 B references
/// each point is compared against. Every run uses the base seed.
pub fn sweep(base: &SimConfig, axis: SweepAxis, values: &[f64], jobs: usize) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::EmptyInput("sweep values"));
    }
    base.validate()?;
    let mut points: Vec<Point> = values
        .iter()
        .map(|&v| Point {
            label: format!("{v}"),
            cfg: apply(base, axis, v),
        })
        .collect();
    if axis == SweepAxis::SlicedFraction {
        points.extend(FIXED_SLICE_MARKS.iter().map(|&b| Point {
            label: format!("{b}B"),
            cfg: fixed_slice(base, b),
        }));
    }

    // Every distinct configuration runs once.
    let mut keys: Vec<String> = Vec::new();
    let mut unique: Vec<SimConfig> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut intern = |cfg: SimConfig| -> usize {
        let key = cfg.to_toml();
        *index.entry(key.clone()).or_insert_with(|| {
            keys.push(key);
            unique.push(cfg);
            unique.len() - 1
        })
    };
    let ids: Vec<Option<(usize, usize, usize)>> = points
        .iter()
        .map(|p| {
            p.cfg
                .as_ref()
                .ok()
                .map(|c| (intern(c.clone()), intern(slicing_off(c)), intern(small_packets(c))))
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    let results: Vec<std::result::Result<SimReport, String>> =
        pool.install(|| unique.par_iter().map(run_checked).collect());

    let rows = points
        .into_iter()
        .zip(ids)
        .enumerate()
        .map(|(i, (p, id))| {
            let run_id = format!("{}-{i}", axis.name());
            let (own, off, small) = match (p.cfg, id) {
                (Err(e), _) => {
                    return SweepRow {
                        run_id,
                        axis_value: p.label,
                        report: None,
                        reduction_pct: None,
                        gap_mean: None,
                        gap_p90: None,
                        error: Some(e.to_string()),
                    }
                }
                (Ok(_), Some(ids)) => ids,
                (Ok(_), None) => unreachable!("valid configs are interned"),
            };
            let report = results[own].clone();
            let reference = |j: usize| results[j].as_ref().ok().map(|r| &r.measuring.latency);
            let mine = report.as_ref().ok().map(|r| r.measuring.latency);
            let ratio = |a: Option<f64>, b: Option<f64>| match (a, b) {
                (Some(a), Some(b)) if b > 0.0 => Some(a / b),
                _ => None,
            };
            let reduction_pct = match (mine, reference(off)) {
                (Some(m), Some(r)) if r.mean_ns > 0.0 => Some(100.0 * (r.mean_ns - m.mean_ns) / r.mean_ns),
                _ => None,
            };
            let gap_mean = ratio(mine.map(|m| m.mean_ns), reference(small).map(|r| r.mean_ns));
            let gap_p90 = ratio(mine.map(|m| m.p90_ns as f64), reference(small).map(|r| r.p90_ns as f64));
            let error = match (&report, &results[off], &results[small]) {
                (Err(e), _, _) => Some(e.clone()),
                (_, Err(e), _) => Some(format!("slicing-off reference: {e}")),
                (_, _, Err(e)) => Some(format!("64B reference: {e}")),
                _ => None,
            };
            SweepRow {
                run_id,
                axis_value: p.label,
                report: report.ok(),
                reduction_pct,
                gap_mean,
                gap_p90,
                error,
            }
        })
        .collect();
    Ok(SweepTable { axis, rows })
}

use hdrhistogram::Histogram;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One hour; larger samples saturate.
const MAX_NS: u64 = 3_600_000_000_000;

/// Nanosecond latency histogram with exact count, sum, min, and max.
#[derive(Clone, Debug)]
pub struct LatencyHistogram {
    hist: Histogram<u64>,
    sum: u128,
    min: u64,
    max: u64,
}

impl Default for LatencyHistogram {
    fn default() -> Self {
        Self::new()
    }
}

impl PartialEq for LatencyHistogram {
    fn eq(&self, other: &Self) -> bool {
        self.hist == other.hist && self.sum == other.sum && self.min == other.min && self.max == other.max
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: u64,
    pub mean_ns: f64,
    pub p50_ns: u64,
    pub p90_ns: u64,
    pub p99_ns: u64,
    pub min_ns: u64,
    pub max_ns: u64,
}

impl LatencyHistogram {
    pub fn new() -> Self {
        LatencyHistogram {
            hist: Histogram::new_with_bounds(1, MAX_NS, 3).expect("valid bounds"),
            sum: 0,
            min: u64::MAX,
            max: 0,
        }
    }

    pub fn record(&mut self, ns: u64) {
        self.hist.saturating_record(ns);
        self.sum += ns as u128;
        self.min = self.min.min(ns);
        self.max = self.max.max(ns);
    }

    pub fn count(&self) -> u64 {
        self.hist.len()
    }

    pub fn mean(&self) -> Result<f64> {
        match self.count() {
            0 => Err(Error::EmptyHistogram),
            n => Ok(self.sum as f64 / n as f64),
        }
    }

    /// Nearest-rank percentile. Exact below 2048 ns, otherwise the upper
    /// edge of the holding bucket, clamped to the observed range.
    pub fn percentile(&self, p: f64) -> Result<u64> {
        if !(p > 0.0 && p < 100.0) {
            return Err(Error::InvalidPercentile(p));
        }
        let n = self.count();
        if n == 0 {
            return Err(Error::EmptyHistogram);
        }
        let rank = ((p / 100.0 * n as f64).ceil() as u64).clamp(1, n);
        let mut seen = 0;
        for v in self.hist.iter_recorded() {
            seen += v.count_at_value();
            if seen >= rank {
                return Ok(v.value_iterated_to().clamp(self.min, self.max));
            }
        }
        Ok(self.max)
    }

    /// Width of the bucket holding `ns`.
    pub fn bucket_width(&self, ns: u64) -> u64 {
        self.hist.highest_equivalent(ns) - self.hist.lowest_equivalent(ns) + 1
    }

    pub fn summary(&self) -> LatencySummary {
        if self.count() == 0 {
            return LatencySummary::default();
        }
        let pct = |p| self.percentile(p).expect("non-empty, valid percentile");
        LatencySummary {
            count: self.count(),
            mean_ns: self.mean().expect("non-empty"),
            p50_ns: pct(50.0),
            p90_ns: pct(90.0),
            p99_ns: pct(99.0),
            min_ns: self.min,
            max_ns: self.max,
        }
    }

    /// `(bucket_upper_ns, count)` for every non-empty bucket.
    pub fn buckets(&self) -> Vec<(u64, u64)> {
        self.hist
            .iter_recorded()
            .map(|v| (v.value_iterated_to(), v.count_at_value()))
            .collect()
    }

    /// `bucket_upper_ns,count` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bucket_upper_ns,count\n");
        for (upper, n) in self.buckets() {
            out.push_str(&format!("{upper},{n}\n"));
        }
        out
    }
}

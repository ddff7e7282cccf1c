//! Single-rate three-color marker, color-blind mode.
//!
//! Both buckets fill at CIR: the committed bucket first, overflow into the
//! excess bucket. Token counts are kept in byte-nanoseconds-per-second units
//! (bytes x 1e9) so refills are exact integer arithmetic.

use serde::{Deserialize, Serialize};

use super::{DropReason, NetworkFunction, NfVerdict};
use crate::error::{Error, Result};
use crate::packet::{wire_size, Packet};

const SCALE: u128 = 1_000_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Green,
    Yellow,
    Red,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeterConfig {
    pub service_ns: u64,
    /// Committed information rate, bytes per second.
    pub cir_bytes_per_s: u64,
    pub cbs_bytes: u64,
    pub ebs_bytes: u64,
}

impl Default for MeterConfig {
    fn default() -> Self {
        // Generous enough that a 100G link never turns red.
        MeterConfig {
            service_ns: 55,
            cir_bytes_per_s: 25_000_000_000,
            cbs_bytes: 1 << 20,
            ebs_bytes: 1 << 20,
        }
    }
}

impl MeterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cir_bytes_per_s == 0 {
            return Err(Error::config("qos.cir_bytes_per_s must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MeterState {
    cir: u128,
    cbs: u128,
    ebs: u128,
    tc: u128,
    te: u128,
    last_ns: u64,
}

impl MeterState {
    /// Both buckets start full.
    pub fn new(cir_bytes_per_s: u64, cbs_bytes: u64, ebs_bytes: u64) -> Self {
        let cbs = cbs_bytes as u128 * SCALE;
        let ebs = ebs_bytes as u128 * SCALE;
        MeterState {
            cir: cir_bytes_per_s as u128,
            cbs,
            ebs,
            tc: cbs,
            te: ebs,
            last_ns: 0,
        }
    }

    pub fn committed_tokens(&self) -> f64 {
        self.tc as f64 / SCALE as f64
    }

    pub fn excess_tokens(&self) -> f64 {
        self.te as f64 / SCALE as f64
    }

    fn refill(&mut self, now_ns: u64) {
        let dt = now_ns.saturating_sub(self.last_ns) as u128;
        self.last_ns = self.last_ns.max(now_ns);
        let mut add = self.cir.saturating_mul(dt);
        let room_c = self.cbs - self.tc;
        let to_c = add.min(room_c);
        self.tc += to_c;
        add -= to_c;
        let room_e = self.ebs - self.te;
        self.te += add.min(room_e);
    }

    pub fn color(&mut self, size_bytes: u64, now_ns: u64) -> Color {
        self.refill(now_ns);
        let need = size_bytes as u128 * SCALE;
        if self.tc >= need {
            self.tc -= need;
            Color::Green
        } else if self.te >= need {
            self.te -= need;
            Color::Yellow
        } else {
            Color::Red
        }
    }
}

pub struct QosMeter {
    state: MeterState,
    service_ns: u64,
}

impl QosMeter {
    pub fn new(state: MeterState, service_ns: u64) -> Self {
        QosMeter { state, service_ns }
    }

    pub fn from_config(cfg: &MeterConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self::new(
            MeterState::new(cfg.cir_bytes_per_s, cfg.cbs_bytes, cfg.ebs_bytes),
            cfg.service_ns,
        ))
    }

    pub fn state(&self) -> &MeterState {
        &self.state
    }

    /// Colors the packet and returns the verdict together with the color.
    pub fn meter(&mut self, p: Packet, now_ns: u64) -> (NfVerdict, Color) {
        let color = self.state.color(wire_size(&p) as u64, now_ns);
        let verdict = match color {
            Color::Red => NfVerdict::drop(DropReason::MeterRed, self.service_ns),
            Color::Green | Color::Yellow => NfVerdict::forward(p, self.service_ns),
        };
        (verdict, color)
    }
}

impl NetworkFunction for QosMeter {
    fn name(&self) -> &'static str {
        "qos"
    }

    fn service_ns(&self) -> u64 {
        self.service_ns
    }

    fn process(&mut self, p: Packet, now_ns: u64) -> NfVerdict {
        self.meter(p, now_ns).0
    }
}

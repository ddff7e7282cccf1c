//! Header-only network functions and sequential chaining.
//!
//! Every NF returns an [`NfVerdict`] carrying the simulated processing time
//! it charges. Forwarded packets never have their payload touched.

mod firewall;
mod l2fwd;
mod meter;
mod nat;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::packet::Packet;

pub use firewall::{Firewall, FirewallConfig, FirewallRule, RuleAction};
pub use l2fwd::{L2Forwarder, L2Route, L2fwdConfig};
pub use meter::{Color, MeterConfig, MeterState, QosMeter};
pub use nat::{FlowKey, Nat, NatConfig, NatState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    FirewallDeny,
    MeterRed,
    NatNoMapping,
    NatPoolExhausted,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NfAction {
    Forward(Packet),
    Drop(DropReason),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NfVerdict {
    pub action: NfAction,
    pub service_ns: u64,
}

impl NfVerdict {
    pub fn forward(p: Packet, service_ns: u64) -> Self {
        NfVerdict {
            action: NfAction::Forward(p),
            service_ns,
        }
    }

    pub fn drop(reason: DropReason, service_ns: u64) -> Self {
        NfVerdict {
            action: NfAction::Drop(reason),
            service_ns,
        }
    }

    pub fn is_drop(&self) -> bool {
        matches!(self.action, NfAction::Drop(_))
    }
}

pub trait NetworkFunction: Send {
    fn name(&self) -> &'static str;

    /// Per-packet processing time charged to the core.
    fn service_ns(&self) -> u64;

    fn process(&mut self, p: Packet, now_ns: u64) -> NfVerdict;
}

/// NFs applied in order; the first drop short-circuits.
pub struct Chain {
    nfs: Vec<Box<dyn NetworkFunction>>,
}

impl Chain {
    pub fn new(nfs: Vec<Box<dyn NetworkFunction>>) -> Result<Self> {
        if nfs.is_empty() {
            return Err(Error::config("an NF chain needs at least one NF"));
        }
        Ok(Chain { nfs })
    }

    pub fn len(&self) -> usize {
        self.nfs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nfs.is_empty()
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.nfs.iter().map(|nf| nf.name()).collect()
    }
}

impl NetworkFunction for Chain {
    fn name(&self) -> &'static str {
        "chain"
    }

    fn service_ns(&self) -> u64 {
        self.nfs.iter().map(|nf| nf.service_ns()).sum()
    }

    fn process(&mut self, p: Packet, now_ns: u64) -> NfVerdict {
        let mut spent = 0;
        let mut packet = p;
        for nf in &mut self.nfs {
            let v = nf.process(packet, now_ns + spent);
            spent += v.service_ns;
            match v.action {
                NfAction::Forward(next) => packet = next,
                NfAction::Drop(reason) => return NfVerdict::drop(reason, spent),
            }
        }
        NfVerdict::forward(packet, spent)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NfKind {
    L2fwd,
    Qos,
    Firewall,
    Nat,
}

/// The `[nf]` section of an experiment file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NfSection {
    pub pipeline: Vec<NfKind>,
    pub l2fwd: L2fwdConfig,
    pub qos: MeterConfig,
    pub firewall: FirewallConfig,
    pub nat: NatConfig,
}

impl Default for NfSection {
    fn default() -> Self {
        NfSection {
            pipeline: vec![NfKind::L2fwd],
            l2fwd: L2fwdConfig::default(),
            qos: MeterConfig::default(),
            firewall: FirewallConfig::default(),
            nat: NatConfig::default(),
        }
    }
}

impl NfSection {
    pub fn validate(&self) -> Result<()> {
        if self.pipeline.is_empty() {
            return Err(Error::config("nf.pipeline must list at least one NF"));
        }
        for kind in &self.pipeline {
            match kind {
                NfKind::L2fwd => self.l2fwd.validate()?,
                NfKind::Qos => self.qos.validate()?,
                NfKind::Firewall => self.firewall.validate()?,
                NfKind::Nat => self.nat.validate()?,
            }
        }
        Ok(())
    }

    /// Sum of per-NF service times, the worst case per packet.
    pub fn service_ns(&self) -> u64 {
        self.pipeline
            .iter()
            .map(|k| match k {
                NfKind::L2fwd => self.l2fwd.service_ns,
                NfKind::Qos => self.qos.service_ns,
                NfKind::Firewall => self.firewall.service_ns,
                NfKind::Nat => self.nat.service_ns,
            })
            .sum()
    }

    /// Fresh NF state for one worker.
    pub fn build(&self) -> Result<Chain> {
        self.validate()?;
        let nfs = self
            .pipeline
            .iter()
            .map(|k| -> Result<Box<dyn NetworkFunction>> {
                Ok(match k {
                    NfKind::L2fwd => Box::new(L2Forwarder::from_config(&self.l2fwd)?),
                    NfKind::Qos => Box::new(QosMeter::from_config(&self.qos)?),
                    NfKind::Firewall => Box::new(Firewall::from_config(&self.firewall)?),
                    NfKind::Nat => Box::new(Nat::from_config(&self.nat)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Chain::new(nfs)
    }
}

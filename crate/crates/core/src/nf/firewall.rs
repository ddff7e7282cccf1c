use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::{DropReason, NetworkFunction, NfVerdict};
use crate::error::{Error, Result};
use crate::packet::Packet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleAction {
    Allow,
    Deny,
}

/// Five-tuple match; an absent field is a wildcard.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirewallRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_ip: Option<Ipv4Addr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst_ip: Option<Ipv4Addr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_port: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst_port: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<u8>,
    #[serde(default)]
    pub priority: i32,
    pub action: RuleAction,
}

impl FirewallRule {
    pub fn any(action: RuleAction, priority: i32) -> Self {
        FirewallRule {
            src_ip: None,
            dst_ip: None,
            src_port: None,
            dst_port: None,
            protocol: None,
            priority,
            action,
        }
    }

    pub fn matches(&self, p: &Packet) -> bool {
        let h = &p.headers;
        self.src_ip.is_none_or(|ip| ip == h.ip_src)
            && self.dst_ip.is_none_or(|ip| ip == h.ip_dst)
            && self.src_port.is_none_or(|port| port == h.l4_src_port)
            && self.dst_port.is_none_or(|port| port == h.l4_dst_port)
            && self.protocol.is_none_or(|proto| proto == h.protocol)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FirewallConfig {
    pub service_ns: u64,
    pub default_action: RuleAction,
    pub rules: Vec<FirewallRule>,
}

impl Default for FirewallConfig {
    fn default() -> Self {
        FirewallConfig {
            service_ns: 70,
            default_action: RuleAction::Allow,
            rules: Vec::new(),
        }
    }
}

impl FirewallConfig {
    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.rules.iter().enumerate() {
            if r.src_port == Some(0) || r.dst_port == Some(0) {
                return Err(Error::config(format!("firewall rule {i}: port 0 is not matchable")));
            }
        }
        Ok(())
    }
}

/// First match by descending priority; equal priorities keep insertion
/// order.
pub struct Firewall {
    rules: Vec<FirewallRule>,
    default_action: RuleAction,
    service_ns: u64,
}

impl Firewall {
    pub fn new(mut rules: Vec<FirewallRule>, default_action: RuleAction, service_ns: u64) -> Self {
        // Stable sort keeps insertion order among equal priorities.
        rules.sort_by_key(|r| std::cmp::Reverse(r.priority));
        Firewall {
            rules,
            default_action,
            service_ns,
        }
    }

    pub fn from_config(cfg: &FirewallConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self::new(cfg.rules.clone(), cfg.default_action, cfg.service_ns))
    }

    pub fn decide(&self, p: &Packet) -> RuleAction {
        self.rules
            .iter()
            .find(|r| r.matches(p))
            .map_or(self.default_action, |r| r.action)
    }
}

impl NetworkFunction for Firewall {
    fn name(&self) -> &'static str {
        "firewall"
    }

    fn service_ns(&self) -> u64 {
        self.service_ns
    }

    fn process(&mut self, p: Packet, _now_ns: u64) -> NfVerdict {
        match self.decide(&p) {
            RuleAction::Allow => NfVerdict::forward(p, self.service_ns),
            RuleAction::Deny => NfVerdict::drop(DropReason::FirewallDeny, self.service_ns),
        }
    }
}

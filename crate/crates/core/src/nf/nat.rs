//! Port-translating NAT with one external address.
//!
//! Outbound flows (source inside `internal_net`) get an external port from
//! the pool on first sight; inbound packets addressed to the external IP are
//! translated back through the reverse map. Expired mappings are reclaimed
//! lazily, when a lookup touches them or when the pool runs dry.

use std::collections::{HashMap, VecDeque};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::{DropReason, NetworkFunction, NfVerdict};
use crate::error::{Error, Result};
use crate::packet::Packet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowKey {
    pub src_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_ip: Ipv4Addr,
    pub dst_port: u16,
    pub protocol: u8,
}

impl FlowKey {
    pub fn of(p: &Packet) -> Self {
        let h = &p.headers;
        FlowKey {
            src_ip: h.ip_src,
            src_port: h.l4_src_port,
            dst_ip: h.ip_dst,
            dst_port: h.l4_dst_port,
            protocol: h.protocol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NatConfig {
    pub service_ns: u64,
    /// CIDR, e.g. "10.0.0.0/8".
    pub internal_net: String,
    pub external_ip: Ipv4Addr,
    pub port_min: u16,
    pub port_max: u16,
    pub timeout_s: f64,
}

impl Default for NatConfig {
    fn default() -> Self {
        NatConfig {
            service_ns: 85,
            internal_net: "10.0.0.0/8".into(),
            external_ip: Ipv4Addr::new(203, 0, 113, 1),
            port_min: 1024,
            port_max: 65535,
            timeout_s: 60.0,
        }
    }
}

fn parse_cidr(s: &str) -> Result<(u32, u32)> {
    let (addr, len) = s
        .split_once('/')
        .ok_or_else(|| Error::config(format!("nat.internal_net {s:?} is not CIDR")))?;
    let addr: Ipv4Addr = addr
        .parse()
        .map_err(|_| Error::config(format!("nat.internal_net {s:?}: bad address")))?;
    let len: u32 = len
        .parse()
        .ok()
        .filter(|l| *l <= 32)
        .ok_or_else(|| Error::config(format!("nat.internal_net {s:?}: bad prefix length")))?;
    let mask = if len == 0 { 0 } else { u32::MAX << (32 - len) };
    Ok((u32::from(addr) & mask, mask))
}

impl NatConfig {
    pub fn validate(&self) -> Result<()> {
        parse_cidr(&self.internal_net)?;
        if self.port_min == 0 || self.port_min > self.port_max {
            return Err(Error::config("nat port range must be non-empty and exclude 0"));
        }
        if self.timeout_s.is_nan() || self.timeout_s <= 0.0 {
            return Err(Error::config("nat.timeout_s must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Mapping {
    internal: FlowKey,
    last_seen_ns: u64,
}

#[derive(Clone, Debug)]
pub struct NatState {
    net: u32,
    mask: u32,
    external_ip: Ipv4Addr,
    timeout_ns: u64,
    forward: HashMap<FlowKey, u16>,
    reverse: HashMap<u16, Mapping>,
    free: VecDeque<u16>,
}

impl NatState {
    pub fn new(cfg: &NatConfig) -> Result<Self> {
        cfg.validate()?;
        let (net, mask) = parse_cidr(&cfg.internal_net)?;
        Ok(NatState {
            net,
            mask,
            external_ip: cfg.external_ip,
            timeout_ns: (cfg.timeout_s * 1e9) as u64,
            forward: HashMap::new(),
            reverse: HashMap::new(),
            free: (cfg.port_min..=cfg.port_max).collect(),
        })
    }

    pub fn is_internal(&self, ip: Ipv4Addr) -> bool {
        u32::from(ip) & self.mask == self.net
    }

    pub fn live_flows(&self) -> usize {
        self.forward.len()
    }

    pub fn free_ports(&self) -> usize {
        self.free.len()
    }

    pub fn external_port(&self, key: &FlowKey) -> Option<u16> {
        self.forward.get(key).copied()
    }

    fn expired(&self, m: &Mapping, now_ns: u64) -> bool {
        now_ns.saturating_sub(m.last_seen_ns) > self.timeout_ns
    }

    fn release(&mut self, port: u16) {
        if let Some(m) = self.reverse.remove(&port) {
            self.forward.remove(&m.internal);
            self.free.push_back(port);
        }
    }

    fn reclaim_expired(&mut self, now_ns: u64) {
        let mut stale: Vec<u16> = self
            .reverse
            .iter()
            .filter(|(_, m)| self.expired(m, now_ns))
            .map(|(&port, _)| port)
            .collect();
        stale.sort_unstable();
        for port in stale {
            self.release(port);
        }
    }

    fn outbound(&mut self, mut p: Packet, now_ns: u64) -> std::result::Result<Packet, DropReason> {
        let key = FlowKey::of(&p);
        let mut port = self.forward.get(&key).copied();
        if let Some(existing) = port {
            if self.expired(&self.reverse[&existing], now_ns) {
                self.release(existing);
                port = None;
            }
        }
        let port = match port {
            Some(port) => port,
            None => {
                if self.free.is_empty() {
                    self.reclaim_expired(now_ns);
                }
                let port = self.free.pop_front().ok_or(DropReason::NatPoolExhausted)?;
                self.forward.insert(key, port);
                port
            }
        };
        self.reverse.insert(
            port,
            Mapping {
                internal: key,
                last_seen_ns: now_ns,
            },
        );
        p.headers.set_ip_src(self.external_ip);
        p.headers.set_src_port(port);
        Ok(p)
    }

    fn inbound(&mut self, mut p: Packet, now_ns: u64) -> std::result::Result<Packet, DropReason> {
        let port = p.headers.l4_dst_port;
        let m = *self.reverse.get(&port).ok_or(DropReason::NatNoMapping)?;
        if self.expired(&m, now_ns) {
            self.release(port);
            return Err(DropReason::NatNoMapping);
        }
        let h = &p.headers;
        if h.ip_src != m.internal.dst_ip || h.l4_src_port != m.internal.dst_port || h.protocol != m.internal.protocol {
            return Err(DropReason::NatNoMapping);
        }
        self.reverse.get_mut(&port).expect("checked above").last_seen_ns = now_ns;
        p.headers.set_ip_dst(m.internal.src_ip);
        p.headers.set_dst_port(m.internal.src_port);
        Ok(p)
    }

    pub fn translate(&mut self, p: Packet, now_ns: u64) -> std::result::Result<Packet, DropReason> {
        if self.is_internal(p.headers.ip_src) {
            self.outbound(p, now_ns)
        } else if p.headers.ip_dst == self.external_ip {
            self.inbound(p, now_ns)
        } else {
            Err(DropReason::NatNoMapping)
        }
    }

    /// Forward and reverse maps are inverse bijections and no port is both
    /// mapped and free.
    pub fn is_consistent(&self) -> bool {
        self.forward.len() == self.reverse.len()
            && self
                .forward
                .iter()
                .all(|(k, port)| self.reverse.get(port).is_some_and(|m| m.internal == *k))
            && self.free.iter().all(|p| !self.reverse.contains_key(p))
    }
}

pub struct Nat {
    state: NatState,
    service_ns: u64,
}

impl Nat {
    pub fn from_config(cfg: &NatConfig) -> Result<Self> {
        Ok(Nat {
            state: NatState::new(cfg)?,
            service_ns: cfg.service_ns,
        })
    }

    pub fn state(&self) -> &NatState {
        &self.state
    }
}

impl NetworkFunction for Nat {
    fn name(&self) -> &'static str {
        "nat"
    }

    fn service_ns(&self) -> u64 {
        self.service_ns
    }

    fn process(&mut self, p: Packet, now_ns: u64) -> NfVerdict {
        match self.state.translate(p, now_ns) {
            Ok(p) => NfVerdict::forward(p, self.service_ns),
            Err(reason) => NfVerdict::drop(reason, self.service_ns),
        }
    }
}

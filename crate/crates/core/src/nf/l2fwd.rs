use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{NetworkFunction, NfVerdict};
use crate::error::Result;
use crate::packet::{MacAddr, Packet};

/// Rewrite applied to frames whose destination MAC matches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct L2Route {
    pub match_dst: MacAddr,
    pub new_src: MacAddr,
    pub new_dst: MacAddr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct L2fwdConfig {
    pub service_ns: u64,
    pub port_mac: MacAddr,
    pub routes: Vec<L2Route>,
}

impl Default for L2fwdConfig {
    fn default() -> Self {
        L2fwdConfig {
            service_ns: 40,
            port_mac: MacAddr([0x02, 0, 0, 0, 0, 0x01]),
            routes: Vec::new(),
        }
    }
}

impl L2fwdConfig {
    pub fn validate(&self) -> Result<()> {
        Ok(())
    }
}

pub struct L2Forwarder {
    table: HashMap<MacAddr, L2Route>,
    port_mac: MacAddr,
    service_ns: u64,
}

impl L2Forwarder {
    pub fn new(routes: impl IntoIterator<Item = L2Route>, port_mac: MacAddr, service_ns: u64) -> Self {
        L2Forwarder {
            table: routes.into_iter().map(|r| (r.match_dst, r)).collect(),
            port_mac,
            service_ns,
        }
    }

    pub fn from_config(cfg: &L2fwdConfig) -> Result<Self> {
        Ok(Self::new(cfg.routes.iter().copied(), cfg.port_mac, cfg.service_ns))
    }
}

impl NetworkFunction for L2Forwarder {
    fn name(&self) -> &'static str {
        "l2fwd"
    }

    fn service_ns(&self) -> u64 {
        self.service_ns
    }

    fn process(&mut self, mut p: Packet, _now_ns: u64) -> NfVerdict {
        match self.table.get(&p.headers.eth_dst) {
            Some(route) => {
                p.headers.eth_src = route.new_src;
                p.headers.eth_dst = route.new_dst;
            }
            None => {
                // Unknown destination: flood rather than drop.
                p.headers.eth_src = self.port_mac;
                p.headers.eth_dst = MacAddr::BROADCAST;
            }
        }
        NfVerdict::forward(p, self.service_ns)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nf::NfAction;
    use crate::packet::{Headers, StreamId};
    use bytes::Bytes;

    fn mac(last: u8) -> MacAddr {
        MacAddr([0x02, 0, 0, 0, 0, last])
    }

    fn fwd() -> L2Forwarder {
        let route = L2Route {
            match_dst: mac(1),
            new_src: mac(1),
            new_dst: mac(9),
        };
        L2Forwarder::new([route], mac(1), 40)
    }

    fn packet_to(dst: MacAddr) -> Packet {
        let h = Headers {
            eth_src: mac(7),
            eth_dst: dst,
            ..Headers::default()
        };
        Packet::new(h, Bytes::from_static(&[1, 2, 3, 4]), StreamId::Load).unwrap()
    }

    #[test]
    fn known_destination_rewritten() {
        let v = fwd().process(packet_to(mac(1)), 0);
        let NfAction::Forward(p) = v.action else { panic!() };
        assert_eq!(p.headers.eth_src, mac(1));
        assert_eq!(p.headers.eth_dst, mac(9));
        assert_eq!(p.payload().as_ref(), &[1, 2, 3, 4]);
        assert_eq!(v.service_ns, 40);
    }

    #[test]
    fn unknown_destination_flooded() {
        let v = fwd().process(packet_to(mac(3)), 0);
        let NfAction::Forward(p) = v.action else { panic!() };
        assert_eq!(p.headers.eth_dst, MacAddr::BROADCAST);
        assert_eq!(p.headers.eth_src, mac(1));
    }
}

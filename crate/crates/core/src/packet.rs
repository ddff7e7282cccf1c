//! In-memory packet model and the bit-level pieces of the slicing protocol:
//! the sliced-packet DSCP marker and the 64-bit token extension.

use std::fmt;
use std::net::Ipv4Addr;

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ETH_HEADER_LEN: usize = 14;
pub const IPV4_HEADER_LEN: usize = 20;
pub const UDP_HEADER_LEN: usize = 8;
pub const L2_L4_HEADER_LEN: usize = ETH_HEADER_LEN + IPV4_HEADER_LEN + UDP_HEADER_LEN;
pub const TOKEN_LEN: usize = 8;

/// Fixed per-frame bytes on top of the L2-L4 headers (FCS plus the slot the
/// token occupies when present). Headers plus this overhead equal one
/// 64-byte cache block, so a fully sliced frame is exactly 64 bytes and an
/// unsliced frame with the largest payload is exactly 1518 bytes.
pub const FRAMING_OVERHEAD: usize = 22;
pub const MIN_FRAME: usize = 64;
pub const MAX_FRAME: usize = 1518;
pub const MAX_PAYLOAD: usize = MAX_FRAME - L2_L4_HEADER_LEN - FRAMING_OVERHEAD;

pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const IPPROTO_UDP: u8 = 17;

/// DSCP value that marks a packet as sliced.
pub const DSCP_SLICED: Dscp = Dscp(0b11_1111);

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    pub const BROADCAST: MacAddr = MacAddr([0xff; 6]);
}

impl fmt::Debug for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            m[0], m[1], m[2], m[3], m[4], m[5]
        )
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl std::str::FromStr for MacAddr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("invalid MAC address {s:?}"));
        let mut out = [0u8; 6];
        let mut parts = s.split(':');
        for byte in &mut out {
            let part = parts.next().ok_or_else(bad)?;
            if part.len() != 2 {
                return Err(bad());
            }
            *byte = u8::from_str_radix(part, 16).map_err(|_| bad())?;
        }
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(MacAddr(out))
    }
}

impl From<MacAddr> for String {
    fn from(m: MacAddr) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for MacAddr {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// 6-bit Differentiated Services code point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Dscp(u8);

impl Dscp {
    pub fn new(value: u8) -> Result<Self> {
        if value > 0b11_1111 {
            return Err(Error::InvalidDscp(value));
        }
        Ok(Dscp(value))
    }

    /// Keeps the low six bits.
    pub const fn from_bits_truncate(value: u8) -> Self {
        Dscp(value & 0b11_1111)
    }

    pub const fn value(self) -> u8 {
        self.0
    }

    pub fn is_sliced_marker(self) -> bool {
        self == DSCP_SLICED
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamId {
    Load,
    Measuring,
}

/// L2-L4 header fields. These are the only fields a shallow NF may touch.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Headers {
    pub eth_src: MacAddr,
    pub eth_dst: MacAddr,
    pub eth_type: u16,
    pub ip_src: Ipv4Addr,
    pub ip_dst: Ipv4Addr,
    pub dscp: Dscp,
    pub protocol: u8,
    pub l4_src_port: u16,
    pub l4_dst_port: u16,
    /// Set whenever an IPv4/L4 field changes; the checksum itself is not
    /// modeled.
    pub checksum_stale: bool,
}

impl Default for Headers {
    fn default() -> Self {
        Headers {
            eth_src: MacAddr::default(),
            eth_dst: MacAddr::default(),
            eth_type: ETHERTYPE_IPV4,
            ip_src: Ipv4Addr::UNSPECIFIED,
            ip_dst: Ipv4Addr::UNSPECIFIED,
            dscp: Dscp::default(),
            protocol: IPPROTO_UDP,
            l4_src_port: 0,
            l4_dst_port: 0,
            checksum_stale: false,
        }
    }
}

impl Headers {
    pub fn set_ip_src(&mut self, ip: Ipv4Addr) {
        self.ip_src = ip;
        self.checksum_stale = true;
    }

    pub fn set_ip_dst(&mut self, ip: Ipv4Addr) {
        self.ip_dst = ip;
        self.checksum_stale = true;
    }

    pub fn set_src_port(&mut self, port: u16) {
        self.l4_src_port = port;
        self.checksum_stale = true;
    }

    pub fn set_dst_port(&mut self, port: u16) {
        self.l4_dst_port = port;
        self.checksum_stale = true;
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packet {
    pub headers: Headers,
    payload: Bytes,
    token: Option<u64>,
    pub stream: StreamId,
    pub ingress_ts: u64,
    pub egress_ts: u64,
}

impl Packet {
    pub fn new(headers: Headers, payload: Bytes, stream: StreamId) -> Result<Self> {
        if payload.len() > MAX_PAYLOAD {
            return Err(Error::PayloadTooLarge(payload.len()));
        }
        Ok(Packet {
            headers,
            payload,
            token: None,
            stream,
            ingress_ts: 0,
            egress_ts: 0,
        })
    }

    /// Builds a packet whose unsliced wire size is `frame_size`.
    pub fn with_frame_size(headers: Headers, frame_size: usize, fill: &Bytes, stream: StreamId) -> Result<Self> {
        let len = payload_len_for_frame(frame_size)?;
        if fill.len() < len {
            return Err(Error::PayloadTooLarge(len));
        }
        Packet::new(headers, fill.slice(..len), stream)
    }

    pub fn payload(&self) -> &Bytes {
        &self.payload
    }

    /// Raw token word carried in the header extension, if any.
    pub fn token_word(&self) -> Option<u64> {
        self.token
    }

    pub fn is_marked_sliced(&self) -> bool {
        self.headers.dscp.is_sliced_marker()
    }

    pub fn wire_size(&self) -> usize {
        wire_size(self)
    }
}

/// Payload length of an unsliced frame of `frame_size` bytes on the wire.
pub fn payload_len_for_frame(frame_size: usize) -> Result<usize> {
    if !(MIN_FRAME..=MAX_FRAME).contains(&frame_size) {
        return Err(Error::InvalidFrameSize(frame_size));
    }
    Ok(frame_size - MIN_FRAME)
}

/// Header and framing bytes plus payload, floored at the minimum frame.
///
/// The 8-byte token lives inside the framing allowance, so token presence
/// does not change the size.
pub fn wire_size(p: &Packet) -> usize {
    const _: () = assert!(TOKEN_LEN <= FRAMING_OVERHEAD);
    (L2_L4_HEADER_LEN + FRAMING_OVERHEAD + p.payload.len()).max(MIN_FRAME)
}

/// Payload index plus per-entry generation number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SliceToken {
    pub payload_index: u64,
    pub generation: u64,
}

fn index_bits(n_entries: u64) -> Result<u32> {
    if n_entries == 0 || !n_entries.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n_entries));
    }
    Ok(n_entries.trailing_zeros())
}

/// Mask for the generation field for a table of `n_entries`.
pub fn generation_mask(n_entries: u64) -> Result<u64> {
    let bits = index_bits(n_entries)?;
    Ok(if bits == 0 { u64::MAX } else { u64::MAX >> bits })
}

/// Low log2(N) bits carry the index, the rest carry the generation
/// (truncated to fit).
pub fn encode_token(t: SliceToken, n_entries: u64) -> Result<u64> {
    let bits = index_bits(n_entries)?;
    if t.payload_index >= n_entries {
        return Err(Error::InvalidToken {
            index: t.payload_index,
            entries: n_entries,
        });
    }
    let generation = t.generation & generation_mask(n_entries)?;
    let high = if bits == 64 { 0 } else { generation << bits };
    Ok(high | t.payload_index)
}

pub fn decode_token(word: u64, n_entries: u64) -> Result<SliceToken> {
    let bits = index_bits(n_entries)?;
    let index_mask = n_entries - 1;
    Ok(SliceToken {
        payload_index: word & index_mask,
        generation: if bits == 64 { 0 } else { word >> bits },
    })
}

/// What slicing removed from a packet; the engine keeps this until splice.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlicedParts {
    pub packet: Packet,
    pub removed: Bytes,
    pub original_dscp: Dscp,
}

/// Removes the whole payload, sets the sliced DSCP marker and attaches the
/// token word.
pub fn mark_sliced(p: Packet, token_word: u64) -> Result<SlicedParts> {
    let len = p.payload.len();
    mark_sliced_tail(p, token_word, len)
}

/// Like [`mark_sliced`] but removes only the trailing `tail` payload bytes.
pub fn mark_sliced_tail(mut p: Packet, token_word: u64, tail: usize) -> Result<SlicedParts> {
    if p.token.is_some() {
        return Err(Error::ProtocolViolation("packet already carries a slice token"));
    }
    if tail > p.payload.len() {
        return Err(Error::ProtocolViolation("slice length exceeds payload"));
    }
    let keep = p.payload.len() - tail;
    let removed = p.payload.split_off(keep);
    let original_dscp = p.headers.dscp;
    p.headers.dscp = DSCP_SLICED;
    p.token = Some(token_word);
    Ok(SlicedParts {
        packet: p,
        removed,
        original_dscp,
    })
}

/// Inverse of [`mark_sliced_tail`]: strips the token, appends `tail` to the
/// remaining payload and restores the DSCP.
pub fn restore_sliced(mut p: Packet, tail: &Bytes, original_dscp: Dscp) -> Result<Packet> {
    if p.token.take().is_none() {
        return Err(Error::ProtocolViolation("packet carries no slice token"));
    }
    if p.payload.len() + tail.len() > MAX_PAYLOAD {
        return Err(Error::PayloadTooLarge(p.payload.len() + tail.len()));
    }
    if !tail.is_empty() {
        if p.payload.is_empty() {
            p.payload = tail.clone();
        } else {
            let mut joined = Vec::with_capacity(p.payload.len() + tail.len());
            joined.extend_from_slice(&p.payload);
            joined.extend_from_slice(tail);
            p.payload = Bytes::from(joined);
        }
    }
    p.headers.dscp = original_dscp;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pkt(len: usize) -> Packet {
        let fill = Bytes::from((0..MAX_PAYLOAD).map(|i| i as u8).collect::<Vec<_>>());
        Packet::new(Headers::default(), fill.slice(..len), StreamId::Load).unwrap()
    }

    // Independent bit-shift oracle: index in the low log2(N) bits.
    fn oracle_encode(index: u64, generation: u64, log2n: u32) -> u64 {
        let mut word = 0u64;
        for bit in 0..64u32 {
            let v = if bit < log2n {
                (index >> bit) & 1
            } else {
                (generation >> (bit - log2n)) & 1
            };
            word |= v << bit;
        }
        word
    }

    #[test]
    fn encode_examples() {
        let t = |i, g| SliceToken {
            payload_index: i,
            generation: g,
        };
        assert_eq!(encode_token(t(0, 0), 256).unwrap(), 0);
        assert_eq!(encode_token(t(5, 1), 256).unwrap(), 0x105);
        assert_eq!(oracle_encode(5, 1, 8), 0x105);
        let max_gen = (1u64 << 56) - 1;
        assert_eq!(encode_token(t(255, max_gen), 256).unwrap(), u64::MAX);
        assert_eq!(oracle_encode(255, max_gen, 8), u64::MAX);
    }

    #[test]
    fn encode_rejects_bad_input() {
        let t = SliceToken {
            payload_index: 256,
            generation: 0,
        };
        assert!(matches!(encode_token(t, 256), Err(Error::InvalidToken { .. })));
        let t = SliceToken {
            payload_index: 0,
            generation: 0,
        };
        assert!(matches!(encode_token(t, 250), Err(Error::NotPowerOfTwo(250))));
    }

    #[test]
    fn decode_examples() {
        assert_eq!(
            decode_token(0x105, 256).unwrap(),
            SliceToken {
                payload_index: 5,
                generation: 1
            }
        );
        assert_eq!(
            decode_token(0, 256).unwrap(),
            SliceToken {
                payload_index: 0,
                generation: 0
            }
        );
    }

    #[test]
    fn generation_is_truncated_to_field_width() {
        let t = SliceToken {
            payload_index: 3,
            generation: u64::MAX,
        };
        let w = encode_token(t, 1 << 20).unwrap();
        assert_eq!(w, oracle_encode(3, u64::MAX, 20));
        assert_eq!(decode_token(w, 1 << 20).unwrap().generation, u64::MAX >> 20);
    }

    #[test]
    fn wire_size_examples() {
        assert_eq!(wire_size(&pkt(MAX_PAYLOAD)), 1518);
        assert_eq!(L2_L4_HEADER_LEN + MAX_PAYLOAD, 1496);
        assert_eq!(wire_size(&pkt(0)), 64);
        let sliced = mark_sliced(pkt(0), 1).unwrap();
        assert_eq!(wire_size(&sliced.packet), 64);
    }

    #[test]
    fn mark_sliced_shrinks_to_min_frame() {
        for frame in [1518, 512] {
            let mut p = pkt(payload_len_for_frame(frame).unwrap());
            p.headers.dscp = Dscp::new(0b10_1110).unwrap();
            assert_eq!(p.wire_size(), frame);
            let parts = mark_sliced(p, 0x105).unwrap();
            assert_eq!(parts.packet.wire_size(), 64);
            assert_eq!(parts.packet.headers.dscp, DSCP_SLICED);
            assert_eq!(parts.packet.token_word(), Some(0x105));
            assert_eq!(parts.original_dscp.value(), 0b10_1110);
            assert_eq!(parts.removed.len(), frame - 64);
        }
    }

    #[test]
    fn mark_sliced_twice_is_a_protocol_violation() {
        let parts = mark_sliced(pkt(100), 7).unwrap();
        assert!(matches!(mark_sliced(parts.packet, 8), Err(Error::ProtocolViolation(_))));
    }

    #[test]
    fn restore_is_byte_exact() {
        let mut p = pkt(900);
        p.headers.dscp = Dscp::new(12).unwrap();
        let original = p.clone();
        let parts = mark_sliced_tail(p, 9, 300).unwrap();
        assert_eq!(parts.packet.payload().len(), 600);
        let back = restore_sliced(parts.packet, &parts.removed, parts.original_dscp).unwrap();
        assert_eq!(back, original);
    }

    #[test]
    fn oversized_payload_rejected() {
        let big = Bytes::from(vec![0u8; MAX_PAYLOAD + 1]);
        assert!(Packet::new(Headers::default(), big, StreamId::Load).is_err());
        assert!(Dscp::new(64).is_err());
        assert!(payload_len_for_frame(63).is_err());
        assert!(payload_len_for_frame(1519).is_err());
    }
}

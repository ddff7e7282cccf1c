use std::collections::BTreeMap;
use std::hash::Hasher;

use fnv::FnvHasher;

use super::{EngineStats, Occupancy, SliceOutcome, SliceTables, SpliceOutcome, TableConfig};
use crate::error::{Error, Result};
use crate::packet::Packet;

/// Symmetric flow hash: both directions of a flow land on the same shard.
///
/// FNV-1a over the two (ip, port) endpoints in sorted order, then protocol.
/// The shard comes from the high 32 bits: FNV's low bits only see the low
/// bits of each input byte.
pub fn shard_for(p: &Packet, n_shards: usize) -> usize {
    if n_shards <= 1 {
        return 0;
    }
    let h = &p.headers;
    let a = (h.ip_src.octets(), h.l4_src_port);
    let b = (h.ip_dst.octets(), h.l4_dst_port);
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let mut hasher = FnvHasher::default();
    hasher.write(&lo.0);
    hasher.write(&lo.1.to_be_bytes());
    hasher.write(&hi.0);
    hasher.write(&hi.1.to_be_bytes());
    hasher.write_u8(h.protocol);
    (((hasher.finish() >> 32) * n_shards as u64) >> 32) as usize
}

/// Independent per-core tables; a packet always goes to the shard its flow
/// hashes to, on ingress and egress alike.
#[derive(Clone, Debug)]
pub struct ShardedEngine {
    shards: Vec<SliceTables>,
}

impl ShardedEngine {
    pub fn new(n_shards: usize, config: TableConfig) -> Result<Self> {
        if n_shards == 0 {
            return Err(Error::config("at least one shard is required"));
        }
        let shards = (0..n_shards)
            .map(|_| SliceTables::new(config.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(ShardedEngine { shards })
    }

    pub fn n_shards(&self) -> usize {
        self.shards.len()
    }

    pub fn shard(&self, i: usize) -> &SliceTables {
        &self.shards[i]
    }

    pub fn shard_mut(&mut self, i: usize) -> &mut SliceTables {
        &mut self.shards[i]
    }

    pub fn slice(&mut self, p: Packet) -> SliceOutcome {
        let s = shard_for(&p, self.shards.len());
        self.shards[s].slice(p)
    }

    pub fn splice(&mut self, p: Packet) -> SpliceOutcome {
        let s = shard_for(&p, self.shards.len());
        self.shards[s].splice(p)
    }

    pub fn stats(&self) -> EngineStats {
        let mut total = EngineStats::default();
        for s in &self.shards {
            total.merge(s.stats());
        }
        total
    }

    pub fn occupancy(&self) -> Occupancy {
        self.shards
            .iter()
            .map(SliceTables::occupancy)
            .fold(Occupancy::default(), |a, b| Occupancy {
                entries_used: a.entries_used + b.entries_used,
                bytes_used: a.bytes_used + b.bytes_used,
            })
    }

    pub fn snapshot(&self) -> BTreeMap<String, u64> {
        self.stats().snapshot(self.occupancy())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::{Headers, StreamId};
    use bytes::Bytes;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::net::Ipv4Addr;

    fn flow(src: [u8; 4], sport: u16, dst: [u8; 4], dport: u16) -> Packet {
        let h = Headers {
            ip_src: Ipv4Addr::from(src),
            ip_dst: Ipv4Addr::from(dst),
            l4_src_port: sport,
            l4_dst_port: dport,
            ..Headers::default()
        };
        Packet::new(h, Bytes::new(), StreamId::Load).unwrap()
    }

    #[test]
    fn symmetric() {
        let ab = flow([10, 0, 0, 1], 1234, [192, 168, 1, 9], 80);
        let ba = flow([192, 168, 1, 9], 80, [10, 0, 0, 1], 1234);
        for n in 1..17 {
            assert_eq!(shard_for(&ab, n), shard_for(&ba, n));
        }
    }

    #[test]
    fn single_shard_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let p = flow(rng.random(), rng.random(), rng.random(), rng.random());
            assert_eq!(shard_for(&p, 1), 0);
        }
    }

    #[test]
    fn balanced_over_four_shards() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0u64; 4];
        let n = 100_000;
        for _ in 0..n {
            let p = flow(rng.random(), rng.random(), rng.random(), rng.random());
            counts[shard_for(&p, 4)] += 1;
        }
        let expected = n as f64 / 4.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 3 degrees of freedom, p = 0.001 critical value.
        assert!(chi2 < 16.27, "chi2 = {chi2}, counts = {counts:?}");
        for c in counts {
            let share = c as f64 / n as f64;
            assert!((0.20..=0.30).contains(&share), "{counts:?}");
        }
    }

    /// Sequential flows whose address and port step together.
    #[test]
    fn balanced_for_correlated_fields() {
        let mut counts = [0u64; 4];
        for i in 0..1024u32 {
            let p = flow(
                [10, 0, (i >> 8) as u8, i as u8],
                1024 + i as u16,
                [192, 168, 1, 1],
                5001,
            );
            counts[shard_for(&p, 4)] += 1;
        }
        assert!(counts.iter().all(|&c| (200..=312).contains(&c)), "{counts:?}");
    }
}

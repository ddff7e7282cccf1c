//! The slice/splice state machine.
//!
//! Each shard owns a payload table and a metadata table of `N` entries and a
//! FIFO cursor. Ingress packets at or above the size threshold have their
//! payload parked at the cursor and are replaced by a 64-byte frame carrying
//! a token (index + generation). Egress packets carrying the sliced DSCP
//! marker get their payload back if the token's generation still matches.
//!
//! Entries of packets the server never sends back are reclaimed by TTL: each
//! time the cursor lands on an occupied entry, its TTL is decremented and the
//! arriving packet goes through unsliced.

mod shard;

use std::collections::BTreeMap;

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::packet::{
    decode_token, encode_token, generation_mask, mark_sliced_tail, restore_sliced, wire_size, Dscp, Packet, SliceToken,
    MAX_PAYLOAD,
};

pub use shard::{shard_for, ShardedEngine};

pub const DEFAULT_ENTRIES: u64 = 256;
pub const DEFAULT_THRESHOLD: usize = 500;
pub const DEFAULT_TTL: u8 = 10;

/// How much of a slice-worthy packet's payload is parked on the NIC.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceMode {
    Full,
    /// Fraction of the payload, rounded to whole bytes.
    Fraction(f64),
    /// Up to this many trailing payload bytes.
    Bytes(usize),
}

impl SliceMode {
    pub fn slice_len(self, payload_len: usize) -> usize {
        match self {
            SliceMode::Full => payload_len,
            SliceMode::Fraction(f) => ((payload_len as f64) * f).round().min(payload_len as f64) as usize,
            SliceMode::Bytes(k) => k.min(payload_len),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableConfig {
    pub entries: u64,
    pub thr_bytes: usize,
    pub ttl_init: u8,
    pub mode: SliceMode,
}

impl Default for TableConfig {
    fn default() -> Self {
        TableConfig {
            entries: DEFAULT_ENTRIES,
            thr_bytes: DEFAULT_THRESHOLD,
            ttl_init: DEFAULT_TTL,
            mode: SliceMode::Full,
        }
    }
}

impl TableConfig {
    pub fn validate(&self) -> Result<()> {
        if self.entries == 0 || !self.entries.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(self.entries));
        }
        if self.entries > 1 << 32 {
            return Err(Error::config("table entries must be at most 2^32"));
        }
        if self.ttl_init == 0 {
            return Err(Error::config("ttl must be at least 1"));
        }
        if let SliceMode::Fraction(f) = self.mode {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::config(format!("slice fraction {f} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct PayloadEntry {
    pub size: usize,
    pub original_dscp: Dscp,
    pub data: Bytes,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MetadataEntry {
    pub generation: u64,
    /// Zero means the entry is free.
    pub ttl: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassthroughReason {
    BelowThreshold,
    TableOccupied,
    DscpCollision,
    /// Partial slicing selected zero bytes.
    NothingToSlice,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SliceOutcome {
    Sliced(Packet),
    Passthrough(Packet, PassthroughReason),
}

impl SliceOutcome {
    pub fn into_packet(self) -> Packet {
        match self {
            SliceOutcome::Sliced(p) | SliceOutcome::Passthrough(p, _) => p,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpliceDropReason {
    StaleGeneration,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SpliceOutcome {
    Reconstructed(Packet),
    Passthrough(Packet),
    Dropped(SpliceDropReason),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occupancy {
    pub entries_used: u64,
    pub bytes_used: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineStats {
    pub slices: u64,
    pub splices: u64,
    pub passthrough_below_threshold: u64,
    pub passthrough_table_occupied: u64,
    pub passthrough_dscp_collision: u64,
    pub passthrough_nothing_to_slice: u64,
    pub egress_passthrough: u64,
    pub drops_stale_generation: u64,
    pub ttl_evictions: u64,
}

impl EngineStats {
    pub fn merge(&mut self, other: &EngineStats) {
        self.slices += other.slices;
        self.splices += other.splices;
        self.passthrough_below_threshold += other.passthrough_below_threshold;
        self.passthrough_table_occupied += other.passthrough_table_occupied;
        self.passthrough_dscp_collision += other.passthrough_dscp_collision;
        self.passthrough_nothing_to_slice += other.passthrough_nothing_to_slice;
        self.egress_passthrough += other.egress_passthrough;
        self.drops_stale_generation += other.drops_stale_generation;
        self.ttl_evictions += other.ttl_evictions;
    }

    pub fn passthroughs(&self) -> u64 {
        self.passthrough_below_threshold
            + self.passthrough_table_occupied
            + self.passthrough_dscp_collision
            + self.passthrough_nothing_to_slice
    }

    /// Flat key/value view used by the simulator report, CLI and FFI.
    pub fn snapshot(&self, occupancy: Occupancy) -> BTreeMap<String, u64> {
        [
            ("entries_used", occupancy.entries_used),
            ("bytes_used", occupancy.bytes_used),
            ("slices", self.slices),
            ("splices", self.splices),
            ("passthrough_below_threshold", self.passthrough_below_threshold),
            ("passthrough_table_occupied", self.passthrough_table_occupied),
            ("passthrough_dscp_collision", self.passthrough_dscp_collision),
            ("passthrough_nothing_to_slice", self.passthrough_nothing_to_slice),
            ("egress_passthrough", self.egress_passthrough),
            ("drops_stale_generation", self.drops_stale_generation),
            ("ttl_evictions", self.ttl_evictions),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// One shard's payload and metadata tables.
#[derive(Clone, Debug)]
pub struct SliceTables {
    payloads: Vec<PayloadEntry>,
    metadata: Vec<MetadataEntry>,
    index: usize,
    config: TableConfig,
    generation_mask: u64,
    stats: EngineStats,
}

impl SliceTables {
    pub fn new(config: TableConfig) -> Result<Self> {
        config.validate()?;
        let n = config.entries as usize;
        Ok(SliceTables {
            payloads: vec![PayloadEntry::default(); n],
            metadata: vec![MetadataEntry::default(); n],
            index: 0,
            generation_mask: generation_mask(config.entries)?,
            config,
            stats: EngineStats::default(),
        })
    }

    pub fn config(&self) -> &TableConfig {
        &self.config
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn metadata(&self, i: usize) -> MetadataEntry {
        self.metadata[i]
    }

    pub fn payload(&self, i: usize) -> &PayloadEntry {
        &self.payloads[i]
    }

    pub fn stats(&self) -> &EngineStats {
        &self.stats
    }

    /// Overwrites an entry's metadata. Used to stage table states in tests
    /// and tools.
    pub fn set_metadata(&mut self, i: usize, entry: MetadataEntry) {
        self.metadata[i] = entry;
        if entry.ttl == 0 {
            self.payloads[i] = PayloadEntry::default();
        }
    }

    fn advance(&mut self) {
        self.index = (self.index + 1) & (self.config.entries as usize - 1);
    }

    pub fn slice(&mut self, p: Packet) -> SliceOutcome {
        let pass = |stats: &mut EngineStats, p, reason| {
            match reason {
                PassthroughReason::BelowThreshold => stats.passthrough_below_threshold += 1,
                PassthroughReason::TableOccupied => stats.passthrough_table_occupied += 1,
                PassthroughReason::DscpCollision => stats.passthrough_dscp_collision += 1,
                PassthroughReason::NothingToSlice => stats.passthrough_nothing_to_slice += 1,
            }
            SliceOutcome::Passthrough(p, reason)
        };

        if p.is_marked_sliced() || p.token_word().is_some() {
            return pass(&mut self.stats, p, PassthroughReason::DscpCollision);
        }
        if wire_size(&p) < self.config.thr_bytes {
            return pass(&mut self.stats, p, PassthroughReason::BelowThreshold);
        }
        let tail = self.config.mode.slice_len(p.payload().len());
        if tail == 0 {
            return pass(&mut self.stats, p, PassthroughReason::NothingToSlice);
        }

        let idx = self.index;
        let meta = &mut self.metadata[idx];
        if meta.ttl > 0 {
            // The arriving packet stays unsliced even when this visit frees
            // the entry.
            meta.ttl -= 1;
            if meta.ttl == 0 {
                self.payloads[idx] = PayloadEntry::default();
                self.stats.ttl_evictions += 1;
            }
            self.advance();
            return pass(&mut self.stats, p, PassthroughReason::TableOccupied);
        }

        meta.generation = meta.generation.wrapping_add(1);
        meta.ttl = self.config.ttl_init;
        let token = SliceToken {
            payload_index: idx as u64,
            generation: meta.generation & self.generation_mask,
        };
        let word = encode_token(token, self.config.entries).expect("cursor is always in range");
        let parts = mark_sliced_tail(p, word, tail).expect("unsliced packet with enough payload");
        debug_assert!(parts.removed.len() <= MAX_PAYLOAD);
        self.payloads[idx] = PayloadEntry {
            size: parts.removed.len(),
            original_dscp: parts.original_dscp,
            data: parts.removed,
        };
        self.advance();
        self.stats.slices += 1;
        SliceOutcome::Sliced(parts.packet)
    }

    pub fn splice(&mut self, p: Packet) -> SpliceOutcome {
        if !p.is_marked_sliced() {
            self.stats.egress_passthrough += 1;
            return SpliceOutcome::Passthrough(p);
        }
        let Some(word) = p.token_word() else {
            // Marker collision on a packet that was never sliced.
            self.stats.egress_passthrough += 1;
            return SpliceOutcome::Passthrough(p);
        };
        let token = decode_token(word, self.config.entries).expect("entries validated at construction");
        let idx = token.payload_index as usize;
        let meta = self.metadata[idx];
        if meta.ttl == 0 || meta.generation & self.generation_mask != token.generation {
            self.stats.drops_stale_generation += 1;
            return SpliceOutcome::Dropped(SpliceDropReason::StaleGeneration);
        }
        let entry = std::mem::take(&mut self.payloads[idx]);
        self.metadata[idx].ttl = 0;
        let packet = restore_sliced(p, &entry.data, entry.original_dscp).expect("sliced packet carries a token");
        self.stats.splices += 1;
        SpliceOutcome::Reconstructed(packet)
    }

    pub fn occupancy(&self) -> Occupancy {
        self.metadata
            .iter()
            .zip(&self.payloads)
            .filter(|(m, _)| m.ttl > 0)
            .fold(Occupancy::default(), |acc, (_, p)| Occupancy {
                entries_used: acc.entries_used + 1,
                bytes_used: acc.bytes_used + p.size as u64,
            })
    }

    pub fn snapshot(&self) -> BTreeMap<String, u64> {
        self.stats.snapshot(self.occupancy())
    }
}

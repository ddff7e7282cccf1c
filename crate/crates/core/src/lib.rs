//! Payload slicing for shallow network functions.
//!
//! A NIC-side engine strips payloads from large packets before they cross
//! PCIe, parks them in on-NIC tables, and splices them back on egress. The
//! crate contains the protocol engine ([`engine`]), header-only NFs
//! ([`nf`]), a discrete-event NIC/PCIe/core simulator ([`sim`]), and
//! closed-form sizing helpers ([`sizing`]).

pub mod engine;
pub mod error;
pub mod nf;
pub mod packet;
pub mod sim;
pub mod sizing;

pub use engine::{ShardedEngine, SliceMode, SliceOutcome, SliceTables, SpliceOutcome, TableConfig};
pub use error::{Error, Result};
pub use packet::{Headers, MacAddr, Packet, SliceToken, StreamId};

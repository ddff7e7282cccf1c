//! C ABI over the nfslicer engine, token codec, sizing helpers, and
//! simulator.
//!
//! Handles are opaque and owned by the caller once returned; free them with
//! the matching `*_free` function. Every fallible call returns an
//! [`NfsStatus`]; on failure [`nfs_last_error`] describes the cause.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::net::Ipv4Addr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nfslicer::engine::{
    shard_for, PassthroughReason, ShardedEngine, SliceMode, SliceOutcome, SpliceOutcome, TableConfig,
};
use nfslicer::packet::{decode_token, encode_token, Dscp, Headers, MacAddr, Packet, SliceToken, StreamId};
use nfslicer::sim::SimConfig;
use nfslicer::sizing::{self, SizingInput};
use nfslicer::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NfsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidToken = 3,
    NotPowerOfTwo = 4,
    Config = 5,
    /// The packet handle was consumed by a dropping splice.
    PacketConsumed = 6,
    Internal = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NfsSliceResult {
    Sliced = 0,
    BelowThreshold = 1,
    TableOccupied = 2,
    DscpCollision = 3,
    NothingToSlice = 4,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NfsSpliceResult {
    Reconstructed = 0,
    Passthrough = 1,
    /// The packet is gone; the handle must still be freed.
    DroppedStaleGeneration = 2,
}

/// L2-L4 header fields. Addresses and ports are in host byte order.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct NfsHeaders {
    pub eth_src: [u8; 6],
    pub eth_dst: [u8; 6],
    pub ip_src: u32,
    pub ip_dst: u32,
    pub dscp: u8,
    pub protocol: u8,
    pub src_port: u16,
    pub dst_port: u16,
}

pub struct NfsEngine(ShardedEngine);

pub struct NfsPacket(Option<Packet>);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn fail(status: NfsStatus, msg: impl Into<String>) -> NfsStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> NfsStatus {
    let status = match e {
        Error::InvalidToken { .. } => NfsStatus::InvalidToken,
        Error::NotPowerOfTwo(_) => NfsStatus::NotPowerOfTwo,
        Error::Config(_) => NfsStatus::Config,
        _ => NfsStatus::InvalidArgument,
    };
    fail(status, e.to_string())
}

/// Runs `f`, converting a panic into [`NfsStatus::Internal`].
fn guard(f: impl FnOnce() -> NfsStatus) -> NfsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == NfsStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => fail(NfsStatus::Internal, "internal panic"),
    }
}

macro_rules! deref {
    ($p:expr) => {
        match unsafe { $p.as_ref() } {
            Some(v) => v,
            None => return fail(NfsStatus::NullPointer, concat!(stringify!($p), " is null")),
        }
    };
}

macro_rules! deref_mut {
    ($p:expr) => {
        match unsafe { $p.as_mut() } {
            Some(v) => v,
            None => return fail(NfsStatus::NullPointer, concat!(stringify!($p), " is null")),
        }
    };
}

/// Message for the most recent failure on this thread; empty after a
/// success. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn nfs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn nfs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// `slice_bytes` of 0 parks the whole payload; otherwise up to that many
/// trailing payload bytes.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn nfs_engine_new(
    shards: u32,
    entries: u64,
    thr_bytes: u32,
    ttl: u8,
    slice_bytes: u32,
    out: *mut *mut NfsEngine,
) -> NfsStatus {
    guard(|| {
        let out = deref_mut!(out);
        let cfg = TableConfig {
            entries,
            thr_bytes: thr_bytes as usize,
            ttl_init: ttl,
            mode: match slice_bytes {
                0 => SliceMode::Full,
                n => SliceMode::Bytes(n as usize),
            },
        };
        if let Err(e) = cfg.validate() {
            return from_error(e);
        }
        match ShardedEngine::new(shards as usize, cfg) {
            Ok(e) => {
                *out = Box::into_raw(Box::new(NfsEngine(e)));
                NfsStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `engine` must come from [`nfs_engine_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nfs_engine_free(engine: *mut NfsEngine) {
    if !engine.is_null() {
        drop(unsafe { Box::from_raw(engine) });
    }
}

fn to_headers(h: &NfsHeaders) -> Result<Headers, NfsStatus> {
    let dscp = Dscp::new(h.dscp).map_err(from_error)?;
    Ok(Headers {
        eth_src: MacAddr(h.eth_src),
        eth_dst: MacAddr(h.eth_dst),
        ip_src: Ipv4Addr::from(h.ip_src),
        ip_dst: Ipv4Addr::from(h.ip_dst),
        dscp,
        protocol: h.protocol,
        l4_src_port: h.src_port,
        l4_dst_port: h.dst_port,
        ..Headers::default()
    })
}

fn from_headers(h: &Headers) -> NfsHeaders {
    NfsHeaders {
        eth_src: h.eth_src.0,
        eth_dst: h.eth_dst.0,
        ip_src: h.ip_src.into(),
        ip_dst: h.ip_dst.into(),
        dscp: h.dscp.value(),
        protocol: h.protocol,
        src_port: h.l4_src_port,
        dst_port: h.l4_dst_port,
    }
}

/// Copies `len` payload bytes into a new packet.
///
/// # Safety
/// `headers` must be readable, `payload` readable for `len` bytes (or null
/// when `len` is 0), and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nfs_packet_new(
    headers: *const NfsHeaders,
    payload: *const u8,
    len: usize,
    out: *mut *mut NfsPacket,
) -> NfsStatus {
    guard(|| {
        let h = deref!(headers);
        let out = deref_mut!(out);
        let bytes = if len == 0 {
            Vec::new()
        } else if payload.is_null() {
            return fail(NfsStatus::NullPointer, "payload is null");
        } else {
            unsafe { std::slice::from_raw_parts(payload, len) }.to_vec()
        };
        let headers = match to_headers(h) {
            Ok(h) => h,
            Err(s) => return s,
        };
        match Packet::new(headers, bytes.into(), StreamId::Load) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(NfsPacket(Some(p))));
                NfsStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `packet` must come from [`nfs_packet_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nfs_packet_free(packet: *mut NfsPacket) {
    if !packet.is_null() {
        drop(unsafe { Box::from_raw(packet) });
    }
}

fn live(p: &NfsPacket) -> Result<&Packet, NfsStatus> {
    p.0.as_ref()
        .ok_or_else(|| fail(NfsStatus::PacketConsumed, "packet was dropped by splice"))
}

macro_rules! live {
    ($p:expr) => {
        match live($p) {
            Ok(p) => p,
            Err(s) => return s,
        }
    };
}

/// Borrows the payload; the pointer is valid until the packet is modified
/// or freed.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nfs_packet_payload(
    packet: *const NfsPacket,
    out_ptr: *mut *const u8,
    out_len: *mut usize,
) -> NfsStatus {
    guard(|| {
        let p = live!(deref!(packet));
        let (out_ptr, out_len) = (deref_mut!(out_ptr), deref_mut!(out_len));
        *out_ptr = p.payload().as_ptr();
        *out_len = p.payload().len();
        NfsStatus::Ok
    })
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nfs_packet_headers(packet: *const NfsPacket, out: *mut NfsHeaders) -> NfsStatus {
    guard(|| {
        let p = live!(deref!(packet));
        *deref_mut!(out) = from_headers(&p.headers);
        NfsStatus::Ok
    })
}

/// Overwrites header fields, as an NF would. The slice marker and token are
/// kept when `headers->dscp` equals the current value.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nfs_packet_set_headers(packet: *mut NfsPacket, headers: *const NfsHeaders) -> NfsStatus {
    guard(|| {
        let h = deref!(headers);
        let slot = deref_mut!(packet);
        let Some(p) = slot.0.as_mut() else {
            return fail(NfsStatus::PacketConsumed, "packet was dropped by splice");
        };
        let new = match to_headers(h) {
            Ok(h) => h,
            Err(s) => return s,
        };
        p.headers.eth_src = new.eth_src;
        p.headers.eth_dst = new.eth_dst;
        p.headers.set_ip_src(new.ip_src);
        p.headers.set_ip_dst(new.ip_dst);
        p.headers.dscp = new.dscp;
        p.headers.protocol = new.protocol;
        p.headers.set_src_port(new.l4_src_port);
        p.headers.set_dst_port(new.l4_dst_port);
        NfsStatus::Ok
    })
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nfs_packet_wire_size(packet: *const NfsPacket, out: *mut usize) -> NfsStatus {
    guard(|| {
        let p = live!(deref!(packet));
        *deref_mut!(out) = p.wire_size();
        NfsStatus::Ok
    })
}

/// Token word carried by a sliced packet; `*has_token` is false otherwise.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nfs_packet_token(packet: *const NfsPacket, has_token: *mut bool, word: *mut u64) -> NfsStatus {
    guard(|| {
        let p = live!(deref!(packet));
        let (has, w) = (deref_mut!(has_token), deref_mut!(word));
        *has = p.token_word().is_some();
        *w = p.token_word().unwrap_or(0);
        NfsStatus::Ok
    })
}

/// Shard a packet's flow maps to. Use the ingress value for the matching
/// splice, since NFs may rewrite the fields it hashes.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nfs_engine_shard_for(
    engine: *const NfsEngine,
    packet: *const NfsPacket,
    out: *mut u32,
) -> NfsStatus {
    guard(|| {
        let e = deref!(engine);
        let p = live!(deref!(packet));
        *deref_mut!(out) = shard_for(p, e.0.n_shards()) as u32;
        NfsStatus::Ok
    })
}

fn check_shard(e: &NfsEngine, shard: u32) -> Result<usize, NfsStatus> {
    let n = e.0.n_shards();
    if (shard as usize) < n {
        Ok(shard as usize)
    } else {
        Err(fail(
            NfsStatus::InvalidArgument,
            format!("shard {shard} out of range for {n} shards"),
        ))
    }
}

/// Slices `packet` in place on `shard`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nfs_engine_slice(
    engine: *mut NfsEngine,
    shard: u32,
    packet: *mut NfsPacket,
    out: *mut NfsSliceResult,
) -> NfsStatus {
    guard(|| {
        let e = deref_mut!(engine);
        let slot = deref_mut!(packet);
        let out = deref_mut!(out);
        let shard = match check_shard(e, shard) {
            Ok(s) => s,
            Err(s) => return s,
        };
        let Some(p) = slot.0.take() else {
            return fail(NfsStatus::PacketConsumed, "packet was dropped by splice");
        };
        let (p, result) = match e.0.shard_mut(shard).slice(p) {
            SliceOutcome::Sliced(p) => (p, NfsSliceResult::Sliced),
            SliceOutcome::Passthrough(p, r) => (
                p,
                match r {
                    PassthroughReason::BelowThreshold => NfsSliceResult::BelowThreshold,
                    PassthroughReason::TableOccupied => NfsSliceResult::TableOccupied,
                    PassthroughReason::DscpCollision => NfsSliceResult::DscpCollision,
                    PassthroughReason::NothingToSlice => NfsSliceResult::NothingToSlice,
                },
            ),
        };
        slot.0 = Some(p);
        *out = result;
        NfsStatus::Ok
    })
}

/// Splices `packet` in place on `shard`. After
/// `NFS_SPLICE_RESULT_DROPPED_STALE_GENERATION` the handle holds no packet.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nfs_engine_splice(
    engine: *mut NfsEngine,
    shard: u32,
    packet: *mut NfsPacket,
    out: *mut NfsSpliceResult,
) -> NfsStatus {
    guard(|| {
        let e = deref_mut!(engine);
        let slot = deref_mut!(packet);
        let out = deref_mut!(out);
        let shard = match check_shard(e, shard) {
            Ok(s) => s,
            Err(s) => return s,
        };
        let Some(p) = slot.0.take() else {
            return fail(NfsStatus::PacketConsumed, "packet was dropped by splice");
        };
        *out = match e.0.shard_mut(shard).splice(p) {
            SpliceOutcome::Reconstructed(p) => {
                slot.0 = Some(p);
                NfsSpliceResult::Reconstructed
            }
            SpliceOutcome::Passthrough(p) => {
                slot.0 = Some(p);
                NfsSpliceResult::Passthrough
            }
            SpliceOutcome::Dropped(_) => NfsSpliceResult::DroppedStaleGeneration,
        };
        NfsStatus::Ok
    })
}

/// Payload table entries in use across all shards.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nfs_engine_occupancy(
    engine: *const NfsEngine,
    entries_used: *mut u64,
    bytes_used: *mut u64,
) -> NfsStatus {
    guard(|| {
        let e = deref!(engine);
        let occ = e.0.occupancy();
        *deref_mut!(entries_used) = occ.entries_used;
        *deref_mut!(bytes_used) = occ.bytes_used;
        NfsStatus::Ok
    })
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn nfs_token_encode(
    payload_index: u64,
    generation: u64,
    entries: u64,
    out: *mut u64,
) -> NfsStatus {
    guard(|| {
        let out = deref_mut!(out);
        let t = SliceToken {
            payload_index,
            generation,
        };
        match encode_token(t, entries) {
            Ok(w) => {
                *out = w;
                NfsStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// Output pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn nfs_token_decode(
    word: u64,
    entries: u64,
    payload_index: *mut u64,
    generation: *mut u64,
) -> NfsStatus {
    guard(|| {
        let (idx, generation) = (deref_mut!(payload_index), deref_mut!(generation));
        match decode_token(word, entries) {
            Ok(t) => {
                *idx = t.payload_index;
                *generation = t.generation;
                NfsStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Payload table entries for a line rate, threshold, and residency time.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn nfs_provision_entries(
    line_rate_bps: u64,
    thr_bytes: u64,
    service_time_ps: u64,
    out: *mut u64,
) -> NfsStatus {
    guard(|| {
        let out = deref_mut!(out);
        match sizing::provision_entries(&SizingInput::new(line_rate_bps, thr_bytes, service_time_ps)) {
            Ok(n) => {
                *out = n;
                NfsStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

#[no_mangle]
pub extern "C" fn nfs_sram_bytes(entries: u64, max_payload_bytes: u64) -> u64 {
    entries.saturating_mul(max_payload_bytes)
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn nfs_line_rate_gbps(width_bits: u64, cycle_ps: u64, out: *mut f64) -> NfsStatus {
    guard(|| {
        let out = deref_mut!(out);
        match sizing::line_rate_gbps(width_bits, cycle_ps) {
            Ok(g) => {
                *out = g;
                NfsStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Runs a simulation described by a TOML document and returns the report as
/// JSON. Free the result with [`nfs_string_free`].
///
/// # Safety
/// `config_toml` must be a nul-terminated string and `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn nfs_simulate_json(config_toml: *const c_char, out_json: *mut *mut c_char) -> NfsStatus {
    guard(|| {
        if config_toml.is_null() {
            return fail(NfsStatus::NullPointer, "config_toml is null");
        }
        let out = deref_mut!(out_json);
        *out = ptr::null_mut();
        let Ok(text) = unsafe { CStr::from_ptr(config_toml) }.to_str() else {
            return fail(NfsStatus::InvalidArgument, "config is not UTF-8");
        };
        let cfg = match SimConfig::from_toml(text) {
            Ok(c) => c,
            Err(e) => return from_error(e),
        };
        if let Some(s) = cfg.saturation().first() {
            return fail(NfsStatus::Config, format!("saturated: {s}"));
        }
        match nfslicer::sim::run(&cfg) {
            Ok(r) => {
                *out = CString::new(r.to_json()).expect("JSON has no nul bytes").into_raw();
                NfsStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

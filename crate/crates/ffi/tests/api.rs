use std::ffi::{CStr, CString};
use std::ptr;

use nfslicer_ffi::*;

fn headers() -> NfsHeaders {
    NfsHeaders {
        eth_src: [2, 0, 0, 0, 0, 1],
        eth_dst: [2, 0, 0, 0, 0, 2],
        ip_src: u32::from_be_bytes([10, 0, 0, 1]),
        ip_dst: u32::from_be_bytes([192, 168, 1, 1]),
        dscp: 46,
        protocol: 17,
        src_port: 1234,
        dst_port: 5001,
    }
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(nfs_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn engine(shards: u32, entries: u64, ttl: u8) -> *mut NfsEngine {
    let mut e = ptr::null_mut();
    assert_eq!(
        unsafe { nfs_engine_new(shards, entries, 500, ttl, 0, &mut e) },
        NfsStatus::Ok
    );
    e
}

fn packet(payload: &[u8]) -> *mut NfsPacket {
    let mut p = ptr::null_mut();
    let h = headers();
    assert_eq!(
        unsafe { nfs_packet_new(&h, payload.as_ptr(), payload.len(), &mut p) },
        NfsStatus::Ok
    );
    p
}

fn payload_of(p: *const NfsPacket) -> Vec<u8> {
    let (mut ptr, mut len) = (ptr::null(), 0usize);
    assert_eq!(unsafe { nfs_packet_payload(p, &mut ptr, &mut len) }, NfsStatus::Ok);
    unsafe { std::slice::from_raw_parts(ptr, len) }.to_vec()
}

#[test]
fn slice_mutate_splice_roundtrip() {
    let e = engine(2, 16, 10);
    let data: Vec<u8> = (0..1000u32).map(|i| (i * 31) as u8).collect();
    let p = packet(&data);
    let mut shard = 0;
    let mut sr = NfsSliceResult::BelowThreshold;
    unsafe {
        assert_eq!(nfs_engine_shard_for(e, p, &mut shard), NfsStatus::Ok);
        assert_eq!(nfs_engine_slice(e, shard, p, &mut sr), NfsStatus::Ok);
    }
    assert_eq!(sr, NfsSliceResult::Sliced);
    assert!(payload_of(p).is_empty());
    let (mut has, mut word) = (false, 0);
    assert_eq!(unsafe { nfs_packet_token(p, &mut has, &mut word) }, NfsStatus::Ok);
    assert!(has);

    let mut h = NfsHeaders::default();
    unsafe { nfs_packet_headers(p, &mut h) };
    assert_eq!(h.dscp, 0b11_1111);
    h.dst_port = 8080;
    assert_eq!(unsafe { nfs_packet_set_headers(p, &h) }, NfsStatus::Ok);

    let mut sp = NfsSpliceResult::Passthrough;
    assert_eq!(unsafe { nfs_engine_splice(e, shard, p, &mut sp) }, NfsStatus::Ok);
    assert_eq!(sp, NfsSpliceResult::Reconstructed);
    assert_eq!(payload_of(p), data);
    unsafe { nfs_packet_headers(p, &mut h) };
    assert_eq!((h.dscp, h.dst_port), (46, 8080));
    let (mut used, mut bytes) = (1, 1);
    unsafe { nfs_engine_occupancy(e, &mut used, &mut bytes) };
    assert_eq!((used, bytes), (0, 0));
    unsafe {
        nfs_packet_free(p);
        nfs_engine_free(e);
    }
}

#[test]
fn stale_splice_consumes_packet() {
    // One entry, TTL 1: the second slice attempt evicts the first payload.
    let e = engine(1, 1, 1);
    let first = packet(&[7u8; 800]);
    let second = packet(&[9u8; 800]);
    let mut sr = NfsSliceResult::Sliced;
    unsafe {
        nfs_engine_slice(e, 0, first, &mut sr);
        assert_eq!(sr, NfsSliceResult::Sliced);
        nfs_engine_slice(e, 0, second, &mut sr);
        assert_eq!(sr, NfsSliceResult::TableOccupied);
        nfs_engine_slice(e, 0, second, &mut sr);
        assert_eq!(sr, NfsSliceResult::Sliced);
    }
    let mut sp = NfsSpliceResult::Reconstructed;
    assert_eq!(unsafe { nfs_engine_splice(e, 0, first, &mut sp) }, NfsStatus::Ok);
    assert_eq!(sp, NfsSpliceResult::DroppedStaleGeneration);
    let mut h = NfsHeaders::default();
    assert_eq!(unsafe { nfs_packet_headers(first, &mut h) }, NfsStatus::PacketConsumed);
    assert!(last_error().contains("dropped"));
    assert_eq!(unsafe { nfs_engine_splice(e, 0, second, &mut sp) }, NfsStatus::Ok);
    assert_eq!(sp, NfsSpliceResult::Reconstructed);
    assert_eq!(payload_of(second), vec![9u8; 800]);
    unsafe {
        nfs_packet_free(first);
        nfs_packet_free(second);
        nfs_engine_free(e);
    }
}

#[test]
fn error_codes() {
    let mut e = ptr::null_mut();
    unsafe {
        assert_eq!(nfs_engine_new(1, 0, 500, 10, 0, &mut e), NfsStatus::NotPowerOfTwo);
        assert_eq!(nfs_engine_new(0, 16, 500, 10, 0, &mut e), NfsStatus::Config);
        assert_eq!(
            nfs_engine_new(1, 16, 500, 10, 0, ptr::null_mut()),
            NfsStatus::NullPointer
        );
    }
    let mut w = 0;
    assert_eq!(unsafe { nfs_token_encode(16, 0, 16, &mut w) }, NfsStatus::InvalidToken);
    assert!(last_error().contains("out of range"));
    let mut h = headers();
    h.dscp = 64;
    let mut p = ptr::null_mut();
    assert_eq!(
        unsafe { nfs_packet_new(&h, ptr::null(), 0, &mut p) },
        NfsStatus::InvalidArgument
    );
    let big = vec![0u8; 1455];
    assert_eq!(
        unsafe { nfs_packet_new(&headers(), big.as_ptr(), big.len(), &mut p) },
        NfsStatus::InvalidArgument
    );
    let e = engine(2, 16, 10);
    let p = packet(&[1u8; 600]);
    let mut sr = NfsSliceResult::Sliced;
    assert_eq!(
        unsafe { nfs_engine_slice(e, 2, p, &mut sr) },
        NfsStatus::InvalidArgument
    );
    let mut sh = 0;
    assert_eq!(unsafe { nfs_engine_shard_for(e, p, &mut sh) }, NfsStatus::Ok);
    assert_eq!(last_error(), "");
    unsafe {
        nfs_packet_free(p);
        nfs_engine_free(e);
        nfs_packet_free(ptr::null_mut());
        nfs_engine_free(ptr::null_mut());
        nfs_string_free(ptr::null_mut());
    }
}

#[test]
fn token_codec_matches_core() {
    for (idx, generation, n) in [(0u64, 0u64, 1u64), (5, 3, 256), (255, u64::MAX, 256), (1, 7, 2)] {
        let mut w = 0;
        assert_eq!(unsafe { nfs_token_encode(idx, generation, n, &mut w) }, NfsStatus::Ok);
        let expect = nfslicer::packet::encode_token(
            nfslicer::SliceToken {
                payload_index: idx,
                generation,
            },
            n,
        )
        .unwrap();
        assert_eq!(w, expect);
        let (mut i, mut g) = (0, 0);
        assert_eq!(unsafe { nfs_token_decode(w, n, &mut i, &mut g) }, NfsStatus::Ok);
        assert_eq!(i, idx);
    }
}

#[test]
fn sizing_helpers() {
    let mut n = 0;
    assert_eq!(
        unsafe { nfs_provision_entries(100_000_000_000, 500, 10_000_000, &mut n) },
        NfsStatus::Ok
    );
    assert_eq!(n, 250);
    assert_eq!(nfs_sram_bytes(250, 1454), 363_500);
    let mut g = 0.0;
    assert_eq!(unsafe { nfs_line_rate_gbps(256, 2560, &mut g) }, NfsStatus::Ok);
    assert_eq!(g, 100.0);
}

#[test]
fn simulate_json_and_errors() {
    let cfg = CString::new("[sim]\nduration_s = 0.002\nwarmup_s = 0.0\n[streams.load]\nrate_pps = 1e5\n").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { nfs_simulate_json(cfg.as_ptr(), &mut out) }, NfsStatus::Ok);
    let json: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(out) }.to_str().unwrap()).unwrap();
    assert!(json["load"]["injected"].as_u64().unwrap() > 0);
    unsafe { nfs_string_free(out) };

    let bad = CString::new("[sim]\nbogus = 1\n").unwrap();
    assert_eq!(unsafe { nfs_simulate_json(bad.as_ptr(), &mut out) }, NfsStatus::Config);
    assert!(out.is_null());
    let sat = CString::new("[streams.load]\nrate_pps = 2e8\nsize = 1518\n").unwrap();
    assert_eq!(unsafe { nfs_simulate_json(sat.as_ptr(), &mut out) }, NfsStatus::Config);
    assert!(last_error().starts_with("saturated"));
}

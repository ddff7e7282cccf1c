#ifndef NFSLICER_H
#define NFSLICER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NfsStatus {
  NFS_STATUS_OK = 0,
  NFS_STATUS_NULL_POINTER = 1,
  NFS_STATUS_INVALID_ARGUMENT = 2,
  NFS_STATUS_INVALID_TOKEN = 3,
  NFS_STATUS_NOT_POWER_OF_TWO = 4,
  NFS_STATUS_CONFIG = 5,
  /**
   * The packet handle was consumed by a dropping splice.
   */
  NFS_STATUS_PACKET_CONSUMED = 6,
  NFS_STATUS_INTERNAL = 7,
} NfsStatus;

typedef enum NfsSliceResult {
  NFS_SLICE_RESULT_SLICED = 0,
  NFS_SLICE_RESULT_BELOW_THRESHOLD = 1,
  NFS_SLICE_RESULT_TABLE_OCCUPIED = 2,
  NFS_SLICE_RESULT_DSCP_COLLISION = 3,
  NFS_SLICE_RESULT_NOTHING_TO_SLICE = 4,
} NfsSliceResult;

typedef enum NfsSpliceResult {
  NFS_SPLICE_RESULT_RECONSTRUCTED = 0,
  NFS_SPLICE_RESULT_PASSTHROUGH = 1,
  /**
   * The packet is gone; the handle must still be freed.
   */
  NFS_SPLICE_RESULT_DROPPED_STALE_GENERATION = 2,
} NfsSpliceResult;

typedef struct NfsEngine NfsEngine;

typedef struct NfsPacket NfsPacket;

/**
 * L2-L4 header fields. Addresses and ports are in host byte order.
 */
typedef struct NfsHeaders {
  uint8_t eth_src[6];
  uint8_t eth_dst[6];
  uint32_t ip_src;
  uint32_t ip_dst;
  uint8_t dscp;
  uint8_t protocol;
  uint16_t src_port;
  uint16_t dst_port;
} NfsHeaders;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread; empty after a
 * success. Valid until the next call on the same thread.
 */
const char *nfs_last_error(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void nfs_string_free(char *s);

/**
 * `slice_bytes` of 0 parks the whole payload; otherwise up to that many
 * trailing payload bytes.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum NfsStatus nfs_engine_new(uint32_t shards,
                              uint64_t entries,
                              uint32_t thr_bytes,
                              uint8_t ttl,
                              uint32_t slice_bytes,
                              struct NfsEngine **out);

/**
 * # Safety
 * `engine` must come from [`nfs_engine_new`] and not be used afterwards.
 */
void nfs_engine_free(struct NfsEngine *engine);

/**
 * Copies `len` payload bytes into a new packet.
 *
 * # Safety
 * `headers` must be readable, `payload` readable for `len` bytes (or null
 * when `len` is 0), and `out` writable.
 */
enum NfsStatus nfs_packet_new(const struct NfsHeaders *headers,
                              const uint8_t *payload,
                              size_t len,
                              struct NfsPacket **out);

/**
 * # Safety
 * `packet` must come from [`nfs_packet_new`] and not be used afterwards.
 */
void nfs_packet_free(struct NfsPacket *packet);

/**
 * Borrows the payload; the pointer is valid until the packet is modified
 * or freed.
 *
 * # Safety
 * All pointers must be valid.
 */
enum NfsStatus nfs_packet_payload(const struct NfsPacket *packet,
                                  const uint8_t **out_ptr,
                                  size_t *out_len);

/**
 * # Safety
 * All pointers must be valid.
 */
enum NfsStatus nfs_packet_headers(const struct NfsPacket *packet, struct NfsHeaders *out);

/**
 * Overwrites header fields, as an NF would. The slice marker and token are
 * kept when `headers->dscp` equals the current value.
 *
 * # Safety
 * All pointers must be valid.
 */
enum NfsStatus nfs_packet_set_headers(struct NfsPacket *packet, const struct NfsHeaders *headers);

/**
 * # Safety
 * All pointers must be valid.
 */
enum NfsStatus nfs_packet_wire_size(const struct NfsPacket *packet, size_t *out);

/**
 * Token word carried by a sliced packet; `*has_token` is false otherwise.
 *
 * # Safety
 * All pointers must be valid.
 */
enum NfsStatus nfs_packet_token(const struct NfsPacket *packet, bool *has_token, uint64_t *word);

/**
 * Shard a packet's flow maps to. Use the ingress value for the matching
 * splice, since NFs may rewrite the fields it hashes.
 *
 * # Safety
 * All pointers must be valid.
 */
enum NfsStatus nfs_engine_shard_for(const struct NfsEngine *engine,
                                    const struct NfsPacket *packet,
                                    uint32_t *out);

/**
 * Slices `packet` in place on `shard`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum NfsStatus nfs_engine_slice(struct NfsEngine *engine,
                                uint32_t shard,
                                struct NfsPacket *packet,
                                enum NfsSliceResult *out);

/**
 * Splices `packet` in place on `shard`. After
 * `NFS_SPLICE_RESULT_DROPPED_STALE_GENERATION` the handle holds no packet.
 *
 * # Safety
 * All pointers must be valid.
 */
enum NfsStatus nfs_engine_splice(struct NfsEngine *engine,
                                 uint32_t shard,
                                 struct NfsPacket *packet,
                                 enum NfsSpliceResult *out);

/**
 * Payload table entries in use across all shards.
 *
 * # Safety
 * All pointers must be valid.
 */
enum NfsStatus nfs_engine_occupancy(const struct NfsEngine *engine,
                                    uint64_t *entries_used,
                                    uint64_t *bytes_used);

/**
 * # Safety
 * `out` must be valid for writes.
 */
enum NfsStatus nfs_token_encode(uint64_t payload_index,
                                uint64_t generation,
                                uint64_t entries,
                                uint64_t *out);

/**
 * # Safety
 * Output pointers must be valid for writes.
 */
enum NfsStatus nfs_token_decode(uint64_t word,
                                uint64_t entries,
                                uint64_t *payload_index,
                                uint64_t *generation);

/**
 * Payload table entries for a line rate, threshold, and residency time.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum NfsStatus nfs_provision_entries(uint64_t line_rate_bps,
                                     uint64_t thr_bytes,
                                     uint64_t service_time_ps,
                                     uint64_t *out);

uint64_t nfs_sram_bytes(uint64_t entries, uint64_t max_payload_bytes);

/**
 * # Safety
 * `out` must be valid for writes.
 */
enum NfsStatus nfs_line_rate_gbps(uint64_t width_bits, uint64_t cycle_ps, double *out);

/**
 * Runs a simulation described by a TOML document and returns the report as
 * JSON. Free the result with [`nfs_string_free`].
 *
 * # Safety
 * `config_toml` must be a nul-terminated string and `out_json` writable.
 */
enum NfsStatus nfs_simulate_json(const char *config_toml, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NFSLICER_H */

#ifndef PVRAN_H
#define PVRAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum PvStatus {
  PV_STATUS_OK = 0,
  PV_STATUS_NULL_POINTER = 1,
  PV_STATUS_INVALID_ARGUMENT = 2,
  PV_STATUS_NOT_FOUND = 3,
  PV_STATUS_IN_USE = 4,
  PV_STATUS_CONFLICT = 5,
  PV_STATUS_CLOSED = 6,
  PV_STATUS_TIMEOUT = 7,
  PV_STATUS_REJECTED = 8,
  PV_STATUS_PROTOCOL = 9,
  PV_STATUS_IO = 10,
  PV_STATUS_BUFFER_TOO_SMALL = 11,
  PV_STATUS_PANIC = 12,
} PvStatus;

// Which setting [`pv_device_set`] changes.
typedef enum PvSetting {
  PV_SETTING_RX_FREQ_HZ = 0,
  PV_SETTING_TX_FREQ_HZ = 1,
  PV_SETTING_RX_GAIN_DB = 2,
  PV_SETTING_TX_GAIN_DB = 3,
  PV_SETTING_RATE_SPS = 4,
} PvSetting;

// One end of a shared-memory byte channel.
typedef struct PvChannel PvChannel;

// A remote radio device as seen from a slice.
typedef struct PvDevice PvDevice;

// A set of slice band assignments.
typedef struct PvPlan PvPlan;

// Rendezvous store: where channels are published and looked up.
typedef struct PvStore PvStore;

// Interleaved complex sample, I then Q.
typedef struct PvSample {
  int16_t i;
  int16_t q;
} PvSample;

// One slice's band assignment.
typedef struct PvSliceBands {
  uint32_t slice_id;
  uint32_t prbs;
  uint64_t dl_freq_hz;
  uint64_t ul_freq_hz;
  uint32_t radio_channel;
} PvSliceBands;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` (NUL
// terminated, truncated to fit). Returns the full message length.
size_t pv_last_error(char *buf, size_t len);

// Static name of a status code.
const char *pv_status_name(enum PvStatus status);

// Samples per 1 ms subframe for a PRB count, or 0 if unsupported.
uint64_t pv_samples_per_subframe(uint32_t prbs);

// Bytes per subframe on the wire, or 0 if unsupported.
uint64_t pv_bytes_per_subframe(uint32_t prbs);

// Default distance in samples between an RX tick and its TX tick, or 0.
uint64_t pv_tx_offset(uint32_t prbs);

// Opens (creating if needed) a store rooted at `dir`, acting as `domain`.
enum PvStatus pv_store_open(const char *dir, uint32_t domain, struct PvStore **out);

// The same store seen from another domain.
enum PvStatus pv_store_as_domain(const struct PvStore *store,
                                 uint32_t domain,
                                 struct PvStore **out);

void pv_store_free(struct PvStore *store);

// Creates and publishes a channel at `path`. `read_cap` bytes flow toward
// this end, `write_cap` away from it; both powers of two.
enum PvStatus pv_channel_create(const struct PvStore *store,
                                const char *path,
                                uint32_t read_cap,
                                uint32_t write_cap,
                                bool blocking,
                                struct PvChannel **out);

// Connects to the channel `server_domain` published at `path`.
enum PvStatus pv_channel_connect(const struct PvStore *store,
                                 uint32_t server_domain,
                                 const char *path,
                                 bool blocking,
                                 struct PvChannel **out);

// Writes up to `len` bytes; `*written` gets the count accepted. Blocking
// channels wait for all of it.
enum PvStatus pv_channel_write(struct PvChannel *ch,
                               const uint8_t *buf,
                               size_t len,
                               size_t *written);

// Reads up to `len` bytes into `buf`; `*read` gets the count (0 when a
// non-blocking channel is empty).
enum PvStatus pv_channel_read(struct PvChannel *ch, uint8_t *buf, size_t len, size_t *read);

// Bytes readable right now, or 0 for a null handle.
size_t pv_channel_data_ready(const struct PvChannel *ch);

// Closes and releases a channel; a server end withdraws its publication.
void pv_channel_free(struct PvChannel *ch);

// Connects to slice `slice_toml`'s control channel on `server_domain`,
// waiting up to `timeout_ms`. Call [`pv_device_find`] before streaming.
enum PvStatus pv_device_connect(const struct PvStore *store,
                                uint32_t server_domain,
                                const char *slice_toml,
                                uint32_t timeout_ms,
                                struct PvDevice **out);

// Establishes the device. The reported type is copied into `type_buf`.
enum PvStatus pv_device_find(struct PvDevice *dev, char *type_buf, size_t len);

// Applies a setting; `*actual` gets the value the radio settled on.
enum PvStatus pv_device_set(struct PvDevice *dev,
                            enum PvSetting what,
                            int64_t value,
                            int64_t *actual);

// Receives `n` samples; `*tick` gets the device time of the first one.
enum PvStatus pv_device_recv(struct PvDevice *dev,
                             struct PvSample *samples,
                             size_t n,
                             uint64_t *tick);

// Transmits `n` samples at device time `at`.
enum PvStatus pv_device_send(struct PvDevice *dev,
                             const struct PvSample *samples,
                             size_t n,
                             uint64_t at);

// Shuts the device down and releases it. Null is ignored.
void pv_device_free(struct PvDevice *dev);

enum PvStatus pv_plan_new(struct PvPlan **out);

// Adds or replaces a slice's entry.
enum PvStatus pv_plan_insert(struct PvPlan *plan, const struct PvSliceBands *bands);

// Removes a slice's entry; `NotFound` if it had none.
enum PvStatus pv_plan_remove(struct PvPlan *plan, uint32_t slice_id);

// Validates the plan. On `Conflict`, up to `cap` distinct slice ids
// involved in any conflict are written to `ids` and `*n_ids` gets the
// total.
enum PvStatus pv_plan_validate(const struct PvPlan *plan, uint32_t *ids, size_t cap, size_t *n_ids);

void pv_plan_free(struct PvPlan *plan);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PVRAN_H */

#ifndef XANE_H
#define XANE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Number of regression outputs written by [`xane_model_predict`].
#define XANE_REGRESSION_OUTPUTS 11

// Mel bands per feature frame.
#define XANE_MEL_BANDS 80

typedef enum XaneStatus {
  XANE_STATUS_OK = 0,
  XANE_STATUS_NULL_POINTER = 1,
  XANE_STATUS_INVALID_ARGUMENT = 2,
  XANE_STATUS_BUFFER_TOO_SMALL = 3,
  XANE_STATUS_IO = 4,
  XANE_STATUS_FORMAT = 5,
  XANE_STATUS_PANIC = 6,
} XaneStatus;

// Loaded model checkpoint.
typedef struct XaneModel XaneModel;

// Simulated room impulse response.
typedef struct XaneRir XaneRir;

typedef struct XaneRoom {
  double length_m;
  double width_m;
  double height_m;
  double reflection_coeff;
  // Metres per second; 0 selects 343.
  double speed_of_sound;
} XaneRoom;

typedef struct XaneReverbLabels {
  double c50_db;
  double c5_db;
  double drr_db;
  double t60_ms;
  double room_volume_m3;
  double reflection_coeff;
} XaneReverbLabels;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the last failed call on this thread; empty after a
// successful call. Valid until the next call on the same thread.
const char *xane_last_error(void);

// Schema version of the checkpoint format this library reads.
uint32_t xane_checkpoint_version(void);

// Frames produced by [`xane_melfb`] for `len` samples.
size_t xane_frame_count(size_t len);

// Log-mel features of 16 kHz mono samples, row-major
// `frames x XANE_MEL_BANDS` into `out` (capacity `out_len` values).
//
// # Safety
// `samples` must point to `len` floats and `out` to `out_len` doubles.
enum XaneStatus xane_melfb(const float *samples,
                           size_t len,
                           double *out,
                           size_t out_len,
                           size_t *frames);

// Loads a checkpoint into `*out`.
//
// # Safety
// `path` must be a nul-terminated UTF-8 string and `out` writable.
enum XaneStatus xane_model_load(const char *path, struct XaneModel **out);

// Embedding dimension of a loaded model, 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle from [`xane_model_load`].
size_t xane_model_embed_dim(const struct XaneModel *model);

// Utterance embedding: mean over the one-second chunks of `samples`.
//
// # Safety
// `model` must be a live handle, `samples` must point to `len` floats and
// `out` to `out_len` doubles.
enum XaneStatus xane_model_embed(const struct XaneModel *model,
                                 const float *samples,
                                 size_t len,
                                 double *out,
                                 size_t out_len);

// Predictions for one chunk of `rows x cols` row-major log-mel features.
// `regression` receives [`XANE_REGRESSION_OUTPUTS`] values in original
// units (NaN for disabled heads); `classes` receives the predicted noise,
// codec and overlap classes (-1 for disabled heads).
//
// # Safety
// `model` must be a live handle, `features` must point to `rows * cols`
// doubles, `regression` to 11 doubles and `classes` to 3 ints.
enum XaneStatus xane_model_predict(const struct XaneModel *model,
                                   const double *features,
                                   size_t rows,
                                   size_t cols,
                                   double *regression,
                                   int32_t *classes);

// # Safety
// `model` must be null or a handle from [`xane_model_load`] not yet freed.
void xane_model_free(struct XaneModel *model);

// Image-source impulse response of a shoebox room. `max_order` < 0
// selects the order at which reflections fall below -80 dB.
//
// # Safety
// `room` must be readable, `source` and `mic` must point to 3 doubles and
// `out` must be writable.
enum XaneStatus xane_rir_simulate(const struct XaneRoom *room,
                                  const double *source,
                                  const double *mic,
                                  int32_t max_order,
                                  double duration_s,
                                  struct XaneRir **out);

// Number of taps, 0 for a null handle.
//
// # Safety
// `rir` must be null or a live handle.
size_t xane_rir_len(const struct XaneRir *rir);

// Index of the direct-path tap.
//
// # Safety
// `rir` must be null or a live handle.
size_t xane_rir_direct_index(const struct XaneRir *rir);

// Copies `min(len, xane_rir_len)` taps into `out`.
//
// # Safety
// `rir` must be a live handle and `out` must point to `len` doubles.
enum XaneStatus xane_rir_taps(const struct XaneRir *rir, double *out, size_t len);

// Reverberation labels of a simulated response.
//
// # Safety
// `rir` must be a live handle and `out` writable.
enum XaneStatus xane_rir_labels(const struct XaneRir *rir, struct XaneReverbLabels *out);

// # Safety
// `rir` must be null or a handle from [`xane_rir_simulate`] not yet freed.
void xane_rir_free(struct XaneRir *rir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* XANE_H */

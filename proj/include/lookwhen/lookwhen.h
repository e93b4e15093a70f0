/* C interface to the lookwhen library. Every fallible call returns an
 * lw_status; on failure lw_last_error() describes the problem until the next
 * call on the same thread. Objects returned through out-pointers are owned by
 * the caller and released with the matching *_free function. */
#ifndef LOOKWHEN_LOOKWHEN_H
#define LOOKWHEN_LOOKWHEN_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(LOOKWHEN_BUILDING)
#    define LW_API __declspec(dllexport)
#  else
#    define LW_API __declspec(dllimport)
#  endif
#else
#  define LW_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum lw_status {
  LW_OK = 0,
  LW_ERR_INVALID_ARGUMENT = 1, /* bad argument, config or shape */
  LW_ERR_DATA = 2,             /* missing or malformed file */
  LW_ERR_NUMERIC = 3,          /* NaN/Inf during a computation */
  LW_ERR_INTERNAL = 4
} lw_status;

typedef enum lw_dtype { LW_FLOAT32 = 0, LW_FLOAT64 = 1 } lw_dtype;

typedef struct lw_tensor lw_tensor;
typedef struct lw_model lw_model;

LW_API const char* lw_last_error(void);
LW_API const char* lw_version(void);

/* Tensors: dense row-major doubles. `data` may be NULL for zeros; ndim 0 is a
 * scalar. */
LW_API lw_status lw_tensor_create(const size_t* shape, size_t ndim, const double* data, lw_tensor** out);
LW_API void lw_tensor_free(lw_tensor* t);
LW_API size_t lw_tensor_ndim(const lw_tensor* t);
LW_API size_t lw_tensor_dim(const lw_tensor* t, size_t axis); /* 0 when out of range */
LW_API size_t lw_tensor_numel(const lw_tensor* t);
LW_API const double* lw_tensor_data(const lw_tensor* t);
LW_API lw_status lw_tensor_read(const char* path, lw_tensor** out);
LW_API lw_status lw_tensor_write(const lw_tensor* t, const char* path, lw_dtype dtype);

/* Rank-normalized selection target from an input grid. `method` is one of
 * top1, topk:<k>, kcenter-feat, kcenter-pix, attn, dattn, random. */
LW_API lw_status lw_targets(const lw_tensor* input, const char* method, uint64_t seed, lw_tensor** out);

/* Same, picking the right input (features, attention or pixels) from clip
 * `clip_id` of a dataset; NULL picks the first clip. */
LW_API lw_status lw_targets_for_clip(const char* data_path, const char* clip_id, const char* method,
                                     uint64_t seed, lw_tensor** out);

/* Models. `config_json` is a run config ({"model": {...}, ...}) or NULL for
 * defaults. */
LW_API lw_status lw_model_create(const char* config_json, uint64_t seed, lw_model** out);
LW_API lw_status lw_model_load(const char* path, lw_model** out);
LW_API lw_status lw_model_save(const lw_model* m, const char* path);
LW_API void lw_model_free(lw_model* m);
LW_API size_t lw_model_param_count(const lw_model* m);
LW_API size_t lw_model_steps(const lw_model* m);

/* Selector pass on a [T x R x R x 3] video. `map_logits` receives the
 * [T x N x N] logits (optional, may be NULL). Up to `capacity` kept flat
 * indices are written to `indices` in ascending order; `count` receives K. */
LW_API lw_status lw_model_select(const lw_model* m, const lw_tensor* video, double sparsity, lw_tensor** map_logits,
                                 size_t* indices, size_t capacity, size_t* count);

typedef struct lw_loss {
  double map, video, frame, patch, total;
} lw_loss;

/* Return nonzero to stop training early. */
typedef int (*lw_step_callback)(void* user, size_t step, const lw_loss* loss);

/* Pre-trains from `init` (NULL: fresh init from the config and seed) on a
 * dataset directory or manifest. The trained model is returned in `out`. */
LW_API lw_status lw_train(const char* config_json, const char* data_path, const lw_model* init, uint64_t seed,
                          lw_step_callback cb, void* user, lw_model** out, lw_loss* last);

typedef enum lw_eval_mode { LW_EVAL_PROBE = 0, LW_EVAL_FINETUNE = 1 } lw_eval_mode;

typedef struct lw_eval_result {
  double probe_accuracy;
  double probe_train_accuracy;
  double finetune_accuracy; /* only for LW_EVAL_FINETUNE */
  size_t train_clips;
  size_t eval_clips;
  int selector_unchanged;   /* 1 when fine-tuning left selector params bit-identical */
} lw_eval_result;

/* Splits the labelled clips (first train_fraction for training), trains a
 * linear probe on frozen video tokens and, for LW_EVAL_FINETUNE, fine-tunes
 * the extractor from the probe head. */
LW_API lw_status lw_eval(const lw_model* m, const char* data_path, const char* config_json, lw_eval_mode mode,
                         uint64_t seed, lw_eval_result* out);

typedef enum lw_flop_convention { LW_FLOPS_MAC = 0, LW_FLOPS_TWO_PER_MAC = 1 } lw_flop_convention;

typedef struct lw_cost_report {
  double selector_flops, extractor_flops, heads_flops, total_flops;
  double dense_flops; /* dense ViT over every patch token */
  size_t selector_tokens, extractor_tokens, kept_patches, total_patches;
  double sparsity;
  size_t frames, resolution, patch, width, depth_sel, depth_ext, registers;
} lw_cost_report;

/* Preset "vitb-224-16" or "desk". */
LW_API lw_status lw_flops(const char* preset, double sparsity, lw_flop_convention conv, lw_cost_report* out);
LW_API lw_status lw_model_flops(const lw_model* m, double sparsity, lw_flop_convention conv, lw_cost_report* out);

/* Synthetic moving-blob dataset with teacher tensors and a manifest. */
LW_API lw_status lw_synth(const char* out_dir, size_t clips, uint64_t seed);

/* One PGM per frame of a [T x N x N] map. With `logits` nonzero values pass
 * through a sigmoid; otherwise they are taken as [0, 1] scores. */
LW_API lw_status lw_dump_map(const lw_tensor* map, int logits, const char* out_dir, size_t scale,
                             size_t* frames_written);

#ifdef __cplusplus
}
#endif

#endif

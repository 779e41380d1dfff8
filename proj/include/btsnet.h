/*
 * C interface to the pathway-attention video classifier library.
 *
 * Every fallible call returns a bts_status; on failure bts_last_error() holds
 * a thread-local description of what went wrong. Objects returned through
 * out-parameters are owned by the caller and released with the matching
 * *_free function. Strings returned through out-parameters are released with
 * bts_string_free.
 */
#ifndef BTSNET_H
#define BTSNET_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum bts_status {
    BTS_OK = 0,
    BTS_ERR_NULL_ARGUMENT = 1,
    BTS_ERR_INVALID_ARGUMENT = 2,
    BTS_ERR_RUNTIME = 3
} bts_status;

/* Message for the most recent failure on the calling thread; never NULL. */
const char* bts_last_error(void);

void bts_string_free(char* s);

/* --------------------------------------------------------------- tensors */

typedef struct bts_tensor bts_tensor;

/* data is copied; pass NULL for zeros. extents must be positive. */
bts_status bts_tensor_create(const int32_t* extents, int32_t rank, const double* data,
                             bts_tensor** out);
/* Binary format: "BTSC" magic, u32 LE rank, rank u32 LE extents, f32 LE
 * values in row-major order. */
bts_status bts_tensor_read(const char* path, bts_tensor** out);
bts_status bts_tensor_write(const bts_tensor* t, const char* path);
int32_t bts_tensor_rank(const bts_tensor* t);
bts_status bts_tensor_extents(const bts_tensor* t, int32_t* out, int32_t capacity);
/* Borrowed pointer, valid until the tensor is freed. */
const double* bts_tensor_data(const bts_tensor* t);
uint64_t bts_tensor_size(const bts_tensor* t);
void bts_tensor_free(bts_tensor* t);

/* --------------------------------------------------------- dilation sets */

/* rf_option is "o1" (cubes (i,i,i), any m >= 1) or "o2" (the fixed table,
 * m in 1..4). out receives m triples (dT,dH,dW), 3*m ints. */
bts_status bts_build_dilation_set(int32_t m, const char* rf_option, int32_t* out);

/* ---------------------------------------------------------------- network */

typedef struct bts_network bts_network;

typedef struct bts_network_config {
    int32_t depth;          /* 26 | 50 | 101 */
    int32_t cardinality;    /* 16 | 32; ignored when tiny (tiny uses 4) */
    int32_t pathways;       /* M */
    const char* rf_option;  /* "o1" | "o2" */
    const char* fuse_type;  /* "tc" | "c" */
    int32_t num_classes;
    int32_t input_channels;
    int32_t tiny;           /* nonzero: desk-scale widths {8,16,32,64} */
    uint64_t seed;
} bts_network_config;

bts_status bts_network_create(const bts_network_config* cfg, bts_network** out);
/* Checkpoint directory: manifest.json plus one tensor file per parameter. */
bts_status bts_network_load(const char* dir, bts_network** out);
bts_status bts_network_save(bts_network* net, const char* dir);
int32_t bts_network_num_classes(const bts_network* net);
bts_status bts_network_param_total(bts_network* net, uint64_t* out);
/* CSV "name,shape,count" rows followed by a TOTAL row. */
bts_status bts_network_param_table(bts_network* net, char** out_csv);
/* Published full-scale totals in millions, for side-by-side reporting;
 * 0 when the (depth, cardinality) pair has no published figure. */
double bts_reference_param_count_millions(int32_t depth, int32_t cardinality);
void bts_network_free(bts_network* net);

/* --------------------------------------------------------- synthetic clips */

typedef struct bts_clips bts_clips;

/* Four motion classes (slow/fast x horizontal/vertical), n_per_class clips
 * each, frame size hw x hw, t frames. first_index offsets the per-clip
 * random streams so separate splits share no clips. */
bts_status bts_clips_generate(int32_t t, int32_t hw, int32_t n_per_class, uint64_t seed,
                              uint64_t first_index, bts_clips** out);
bts_status bts_clips_save(const bts_clips* c, const char* clips_path, const char* labels_path);
bts_status bts_clips_load(const char* clips_path, const char* labels_path, bts_clips** out);
/* out_shape receives N, C, T, H, W. */
bts_status bts_clips_shape(const bts_clips* c, int32_t out_shape[5]);
/* Highest label + 1. */
bts_status bts_clips_num_classes(const bts_clips* c, int32_t* out);
void bts_clips_free(bts_clips* c);

/* --------------------------------------------------- training & evaluation */

typedef struct bts_train_options {
    double lr;
    double momentum;        /* typically 0.9 */
    double weight_decay;    /* typically 1e-4 */
    int32_t epochs;
    int32_t batch_size;
    uint64_t seed;
} bts_train_options;

typedef void (*bts_epoch_fn)(int32_t epoch, double train_loss, double val_accuracy, void* user);

/* SGD with momentum, constant lr; on_epoch (may be NULL) fires once per
 * epoch. Fails if the loss becomes non-finite. */
bts_status bts_train(bts_network* net, const bts_clips* train_clips, const bts_clips* val_clips,
                     const bts_train_options* opts, bts_epoch_fn on_epoch, void* user);

/* per_class may be NULL; otherwise it receives min(capacity, num_classes)
 * per-class accuracies. Ties in the argmax go to the lowest class index. */
bts_status bts_evaluate(bts_network* net, const bts_clips* data, double* accuracy,
                        double* mean_loss, double* per_class, int32_t per_class_capacity);

/* Writes attention.json, attention.csv and attention_summary.csv. */
bts_status bts_export_attention(bts_network* net, const bts_clips* data, const char* out_dir);

typedef struct bts_attention_stats {
    int32_t pathway;        /* largest-temporal-dilation pathway index */
    int32_t dilation[3];
    int32_t n_fast;
    int32_t n_slow;
    double mean_fast;       /* per-clip summary weight of that pathway */
    double mean_slow;
    double t_stat;          /* two-sample t (unequal variances) */
    double df;
    double p_two_sided;
} bts_attention_stats;

bts_status bts_attention_discrimination(bts_network* net, const bts_clips* data,
                                        bts_attention_stats* out);

/* --------------------------------------------------------- receptive fields */

typedef struct bts_layer_spec {
    int32_t kernel[3];      /* (T, H, W) */
    int32_t stride[3];
    int32_t dilation[3];
    int32_t padding[3];
    int32_t input_sampling_rate;   /* frame subsampling ahead of the layer */
} bts_layer_spec;

/* Receptive field and output-grid jump per axis in original-frame units. */
bts_status bts_rf_analytic(const bts_layer_spec* stack, int32_t count, int64_t out_rf[3],
                           int64_t out_jump[3]);
/* Gradient-support measurement; probe extents must exceed the analytic rf. */
bts_status bts_rf_empirical(const bts_layer_spec* stack, int32_t count, const int32_t probe[3],
                            int32_t out_rf[3]);
/* CSV report (axis,layer_index,rf,jump,rf_original_frames[,stack]);
 * stack_b may be NULL for a single-stack report. */
bts_status bts_rf_write_report(const bts_layer_spec* stack_a, int32_t count_a,
                               const bts_layer_spec* stack_b, int32_t count_b, const char* path);

#ifdef __cplusplus
}
#endif

#endif /* BTSNET_H */

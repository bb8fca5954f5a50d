/* C interface to the SSCM reference-guided MRI super-resolution library.
 *
 * All handles are opaque. Functions return an sscm_status; on failure
 * sscm_last_error() describes the problem (thread-local, valid until the next
 * call on the same thread). Strings returned through char** are owned by the
 * caller and released with sscm_string_free(). Tensors are float32, row-major.
 */
#ifndef SSCM_SSCM_H
#define SSCM_SSCM_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SSCM_API __declspec(dllexport)
#else
#define SSCM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sscm_status {
    SSCM_OK = 0,
    SSCM_ERR_INVALID_ARGUMENT = 1,
    SSCM_ERR_SHAPE = 2,
    SSCM_ERR_CONFIG = 3,
    SSCM_ERR_UNSUPPORTED_SIZE = 4,
    SSCM_ERR_IO = 5,
    SSCM_ERR_FORMAT = 6,
    SSCM_ERR_NUMERIC = 7, /* non-finite loss or gradient */
    SSCM_ERR_GRADCHECK = 8,
    SSCM_ERR_INTERNAL = 9
} sscm_status;

typedef struct sscm_tensor sscm_tensor;
typedef struct sscm_model sscm_model;

typedef struct sscm_metrics {
    double psnr_db; /* +inf for identical images */
    double ssim;
    double rmse; /* x100 */
} sscm_metrics;

typedef struct sscm_train_summary {
    size_t iterations;
    double initial_loss;
    double final_loss;
    double seconds;
    int has_heldout; /* the metric fields below are set only when 1 */
    sscm_metrics heldout;
    sscm_metrics zero_padding;
} sscm_train_summary;

typedef void (*sscm_progress_fn)(size_t iteration, double loss, void* user);
typedef void (*sscm_log_fn)(const char* line, void* user);

SSCM_API const char* sscm_last_error(void);
SSCM_API const char* sscm_status_string(sscm_status status);
SSCM_API void sscm_string_free(char* s);

/* Tensors */
SSCM_API sscm_status sscm_tensor_create(const size_t* shape, size_t ndim, const float* data, sscm_tensor** out);
SSCM_API sscm_status sscm_tensor_load(const char* path, sscm_tensor** out); /* SSCT, either dtype */
SSCM_API sscm_status sscm_tensor_save(const sscm_tensor* t, const char* path);
SSCM_API sscm_status sscm_tensor_load_pgm(const char* path, sscm_tensor** out);
SSCM_API sscm_status sscm_tensor_save_pgm(const sscm_tensor* t, const char* path, unsigned maxval);
SSCM_API size_t sscm_tensor_ndim(const sscm_tensor* t);
SSCM_API size_t sscm_tensor_dim(const sscm_tensor* t, size_t axis);
SSCM_API size_t sscm_tensor_numel(const sscm_tensor* t);
SSCM_API const float* sscm_tensor_data(const sscm_tensor* t);
SSCM_API void sscm_tensor_free(sscm_tensor* t);

/* Data pipeline */
SSCM_API sscm_status sscm_degrade(const sscm_tensor* hr, size_t scale, sscm_tensor** out);
SSCM_API sscm_status sscm_psnr(const sscm_tensor* x, const sscm_tensor* y, double max_val, double* out);
/* Metrics after normalising both images by the ground-truth maximum. */
SSCM_API sscm_status sscm_evaluate(const sscm_tensor* pred, const sscm_tensor* gt, sscm_metrics* out);
/* Writes pair_<i>_tar.ssct and pair_<i>_ref.ssct (high resolution) for i < count. */
SSCM_API sscm_status sscm_make_phantoms(size_t count, size_t size, uint64_t seed, double offset_x, double offset_y,
                                        const char* out_dir);

/* Configuration. `config_json` may be NULL for the defaults. Overrides are
 * "section.key=value" strings; SSCM_SEED is applied last. */
SSCM_API sscm_status sscm_config_resolve(const char* config_json, const char* const* overrides, size_t n_overrides,
                                         char** resolved_json);

/* Models */
SSCM_API sscm_status sscm_model_create(const char* config_json, sscm_model** out);
SSCM_API sscm_status sscm_model_load(const char* checkpoint_path, sscm_model** out);
SSCM_API sscm_status sscm_model_save(const sscm_model* model, const char* checkpoint_path);
SSCM_API sscm_status sscm_model_param_count(const sscm_model* model, size_t* out);
/* Clamped prediction. `displacement` ([2,H,W]) and `group_maps` ([blocks,H,W],
 * NULL result when grouping is disabled) are optional outputs. */
SSCM_API sscm_status sscm_infer(sscm_model* model, const sscm_tensor* tar_lr, const sscm_tensor* ref_hr,
                                sscm_tensor** out, sscm_tensor** displacement, sscm_tensor** group_maps);
SSCM_API void sscm_model_free(sscm_model* model);

/* Training. With data_dir NULL the synthetic phantom split from the config is
 * used and held-out metrics are reported. out_checkpoint and loss_csv may be
 * NULL. */
SSCM_API sscm_status sscm_train(const char* config_json, const char* data_dir, const char* out_checkpoint,
                                const char* loss_csv, sscm_progress_fn progress, void* user,
                                sscm_train_summary* summary);
/* Five-row component ablation; writes `dswm,satab,sffb,psnr,ssim`.
 * ordering_ok receives 1 when full >= single removals >= baseline (0.05 dB ties). */
SSCM_API sscm_status sscm_ablate(const char* config_json, const char* data_dir, const char* csv_path,
                                 sscm_log_fn log, void* user, int* ordering_ok);

/* Finite-difference gradient check of every op and the tiny model. Returns
 * SSCM_ERR_GRADCHECK when any entry exceeds the tolerance; the report is set
 * either way. */
SSCM_API sscm_status sscm_gradcheck(int include_model, char** report);

/* Parameter count of a run config, or of a {"conv2d": {"in", "out", "kernel"}}
 * fragment. The breakdown is a JSON document. */
SSCM_API sscm_status sscm_param_count(const char* config_json, size_t* total, char** breakdown_json);

#ifdef __cplusplus
}
#endif

#endif /* SSCM_SSCM_H */

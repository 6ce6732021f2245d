/* C interface to xaikit. All functions return an xai_status; on failure the
 * message is available from xai_last_error() on the calling thread. */
#ifndef XAIKIT_H
#define XAIKIT_H

#include <stddef.h>
#include <stdint.h>

#if defined(XAIKIT_BUILDING_LIBRARY)
#define XAI_API __attribute__((visibility("default")))
#else
#define XAI_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum xai_status {
  XAI_OK = 0,
  XAI_ERR_INPUT = 1,
  XAI_ERR_INDEX = 2,
  XAI_ERR_LOOKUP = 3,
  XAI_ERR_MODEL = 4,
  XAI_ERR_UNSUPPORTED_LAYER = 5,
  XAI_ERR_FIT = 6,
  XAI_ERR_INGEST = 7,
  XAI_ERR_CONFIG = 8,
  XAI_ERR_IO = 9,
  XAI_ERR_CELL = 10,
  XAI_ERR_INTERNAL = 11
} xai_status;

typedef struct xai_model xai_model;
typedef struct xai_image xai_image;
typedef struct xai_map xai_map;

XAI_API const char* xai_version(void);
XAI_API const char* xai_last_error(void);
XAI_API const char* xai_status_name(xai_status status);

/* Models */
XAI_API xai_status xai_model_micro_net(uint64_t seed, int num_classes, int height, int width,
                                       int channels, int bias, xai_model** out);
XAI_API xai_status xai_model_load(const char* checkpoint_path, xai_model** out);
XAI_API xai_status xai_model_save(const xai_model* model, const char* checkpoint_path);
XAI_API void xai_model_free(xai_model* model);
XAI_API int xai_model_num_classes(const xai_model* model);
XAI_API void xai_model_input_shape(const xai_model* model, int* height, int* width, int* channels);
XAI_API int xai_model_layer_count(const xai_model* model);
/* Returned pointer stays valid while the model lives. */
XAI_API const char* xai_model_layer_name(const xai_model* model, int index);
XAI_API const char* xai_model_class_name(const xai_model* model, int index);

/* Images (HWC, channel-fastest doubles in model space) */
XAI_API xai_status xai_image_create(int height, int width, int channels, const double* data,
                                    xai_image** out);
/* Decodes and preprocesses a file with the model's preprocessing. */
XAI_API xai_status xai_image_load(const xai_model* model, const char* path, xai_image** out);
XAI_API void xai_image_free(xai_image* image);
XAI_API void xai_image_shape(const xai_image* image, int* height, int* width, int* channels);
XAI_API const double* xai_image_data(const xai_image* image);

/* Inference */
XAI_API xai_status xai_predict(const xai_model* model, const xai_image* image, double* probs,
                               size_t n_probs, int* predicted);
/* grad has height*width*channels entries; gradient of the class logit. */
XAI_API xai_status xai_input_gradient(const xai_model* model, const xai_image* image, int class_idx,
                                      double* grad, size_t n);

/* Explanations. params_json may be NULL. class_idx < 0 explains the
 * predicted class. */
XAI_API xai_status xai_explain(const xai_model* model, const xai_image* image, const char* method,
                               const char* params_json, int class_idx, uint64_t seed, xai_map** out);
XAI_API void xai_map_free(xai_map* map);
XAI_API void xai_map_shape(const xai_map* map, int* height, int* width);
XAI_API const double* xai_map_data(const xai_map* map);
XAI_API int xai_map_class(const xai_map* map);
XAI_API const char* xai_map_method(const xai_map* map);
/* Writes the map as JSON (scores, shape, method, class, meta). */
XAI_API xai_status xai_map_save_json(const xai_map* map, const char* path);

/* Evaluation. fill is "mean" | "blur" | "zero" | "constant". */
XAI_API xai_status xai_fidelity(const xai_model* model, const xai_image* image, const xai_map* map,
                                double q_preserved, const char* fill, double* f,
                                double* c_original, double* c_adversarial);
/* Writes a PNG overlay of the map on the de-normalized image. */
XAI_API xai_status xai_render_overlay(const xai_model* model, const xai_image* image,
                                      const xai_map* map, double alpha, const char* colormap,
                                      const char* png_path);

/* Metrics. counts is n_classes*n_classes, row = true class. */
XAI_API xai_status xai_confusion_matrix(const int* y_true, const int* y_pred, size_t n,
                                        int n_classes, int64_t* counts);
XAI_API xai_status xai_metrics(const int* y_true, const int* y_pred, size_t n, int n_classes,
                               int macro, double* accuracy, double* precision, double* recall,
                               double* f1);

/* Experiments. only may be NULL ("dataset=a,model=b,method=c"). exit_code
 * receives 0 (success) or 2 (some cells failed). */
XAI_API xai_status xai_run_experiment(const char* config_path, int resume, const char* only,
                                      int verbose, int* exit_code);
/* formats: comma-separated subset of "csv,json". */
XAI_API xai_status xai_report(const char* bundle_dir, const char* formats);

#ifdef __cplusplus
}
#endif

#endif

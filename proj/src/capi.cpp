#include "xaikit/xaikit.h"

#include <cstring>
#include <sstream>
#include <string>

#include "xaikit/error.hpp"
#include "xaikit/evaluator.hpp"
#include "xaikit/metrics.hpp"
#include "xaikit/report.hpp"

using nlohmann::json;

struct xai_model {
  xai::Checkpoint ckpt;
  std::vector<std::string> layer_names;
};

struct xai_image {
  xai::Tensor3 tensor;
};

struct xai_map {
  xai::AttributionMap map;
};

namespace {

thread_local std::string g_last_error;

xai_status status_of(xai::ErrorKind k) {
  using xai::ErrorKind;
  switch (k) {
    case ErrorKind::Input: return XAI_ERR_INPUT;
    case ErrorKind::Index: return XAI_ERR_INDEX;
    case ErrorKind::Lookup: return XAI_ERR_LOOKUP;
    case ErrorKind::Model: return XAI_ERR_MODEL;
    case ErrorKind::UnsupportedLayer: return XAI_ERR_UNSUPPORTED_LAYER;
    case ErrorKind::Fit: return XAI_ERR_FIT;
    case ErrorKind::Ingest: return XAI_ERR_INGEST;
    case ErrorKind::Config: return XAI_ERR_CONFIG;
    case ErrorKind::Io: return XAI_ERR_IO;
    case ErrorKind::Cell: return XAI_ERR_CELL;
  }
  return XAI_ERR_INTERNAL;
}

template <typename F>
xai_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return XAI_OK;
  } catch (const xai::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return XAI_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return XAI_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) xai::fail(xai::ErrorKind::Input, std::string(what) + " is null");
}

void refresh_names(xai_model* m) { m->layer_names = m->ckpt.model.layer_names(); }

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

}  // namespace

extern "C" {

const char* xai_version(void) { return xai::kVersion; }

const char* xai_last_error(void) { return g_last_error.c_str(); }

const char* xai_status_name(xai_status status) {
  switch (status) {
    case XAI_OK: return "ok";
    case XAI_ERR_INPUT: return "input error";
    case XAI_ERR_INDEX: return "index error";
    case XAI_ERR_LOOKUP: return "lookup error";
    case XAI_ERR_MODEL: return "model error";
    case XAI_ERR_UNSUPPORTED_LAYER: return "unsupported layer";
    case XAI_ERR_FIT: return "fit error";
    case XAI_ERR_INGEST: return "ingest error";
    case XAI_ERR_CONFIG: return "configuration error";
    case XAI_ERR_IO: return "i/o error";
    case XAI_ERR_CELL: return "cell error";
    case XAI_ERR_INTERNAL: return "internal error";
  }
  return "unknown";
}

xai_status xai_model_micro_net(uint64_t seed, int num_classes, int height, int width, int channels,
                               int bias, xai_model** out) {
  return guarded([&] {
    require(out, "out");
    auto m = std::make_unique<xai_model>();
    xai::MicroNetOptions o;
    o.input_shape = {height, width, channels};
    o.bias = bias != 0;
    m->ckpt.model = xai::build_micro_net(seed, num_classes, o);
    m->ckpt.preprocess.height = height;
    m->ckpt.preprocess.width = width;
    m->ckpt.preprocess.channels = channels;
    m->ckpt.preprocess.mean.assign(static_cast<std::size_t>(channels), 0.0);
    m->ckpt.preprocess.std.assign(static_cast<std::size_t>(channels), 1.0);
    for (int c = 0; c < num_classes; ++c) m->ckpt.class_names.push_back("class_" + std::to_string(c));
    refresh_names(m.get());
    *out = m.release();
  });
}

xai_status xai_model_load(const char* checkpoint_path, xai_model** out) {
  return guarded([&] {
    require(checkpoint_path, "checkpoint_path");
    require(out, "out");
    auto m = std::make_unique<xai_model>();
    m->ckpt = xai::load_checkpoint(checkpoint_path);
    refresh_names(m.get());
    *out = m.release();
  });
}

xai_status xai_model_save(const xai_model* model, const char* checkpoint_path) {
  return guarded([&] {
    require(model, "model");
    require(checkpoint_path, "checkpoint_path");
    xai::save_checkpoint(checkpoint_path, model->ckpt);
  });
}

void xai_model_free(xai_model* model) { delete model; }

int xai_model_num_classes(const xai_model* model) { return model ? model->ckpt.model.num_classes() : 0; }

void xai_model_input_shape(const xai_model* model, int* height, int* width, int* channels) {
  const xai::Shape3 s = model ? model->ckpt.model.input_shape() : xai::Shape3{};
  if (height) *height = s.height;
  if (width) *width = s.width;
  if (channels) *channels = s.channels;
}

int xai_model_layer_count(const xai_model* model) {
  return model ? static_cast<int>(model->layer_names.size()) : 0;
}

const char* xai_model_layer_name(const xai_model* model, int index) {
  if (!model || index < 0 || index >= static_cast<int>(model->layer_names.size())) return nullptr;
  return model->layer_names[static_cast<std::size_t>(index)].c_str();
}

const char* xai_model_class_name(const xai_model* model, int index) {
  if (!model || index < 0 || index >= static_cast<int>(model->ckpt.class_names.size())) return nullptr;
  return model->ckpt.class_names[static_cast<std::size_t>(index)].c_str();
}

xai_status xai_image_create(int height, int width, int channels, const double* data, xai_image** out) {
  return guarded([&] {
    require(out, "out");
    if (height < 1 || width < 1 || channels < 1) xai::fail(xai::ErrorKind::Input, "image dimensions must be positive");
    auto img = std::make_unique<xai_image>();
    img->tensor = xai::Tensor3(height, width, channels);
    if (data) std::memcpy(img->tensor.values().data(), data, img->tensor.size() * sizeof(double));
    *out = img.release();
  });
}

xai_status xai_image_load(const xai_model* model, const char* path, xai_image** out) {
  return guarded([&] {
    require(model, "model");
    require(path, "path");
    require(out, "out");
    auto img = std::make_unique<xai_image>();
    img->tensor = xai::preprocess(path, model->ckpt.preprocess);
    *out = img.release();
  });
}

void xai_image_free(xai_image* image) { delete image; }

void xai_image_shape(const xai_image* image, int* height, int* width, int* channels) {
  const xai::Shape3 s = image ? image->tensor.shape() : xai::Shape3{};
  if (height) *height = s.height;
  if (width) *width = s.width;
  if (channels) *channels = s.channels;
}

const double* xai_image_data(const xai_image* image) {
  return image ? image->tensor.values().data() : nullptr;
}

xai_status xai_predict(const xai_model* model, const xai_image* image, double* probs, size_t n_probs,
                       int* predicted) {
  return guarded([&] {
    require(model, "model");
    require(image, "image");
    const xai::Probabilities p = xai::predict(model->ckpt.model, image->tensor);
    if (probs) {
      if (n_probs < p.values.size()) xai::fail(xai::ErrorKind::Input, "probability buffer too small");
      std::copy(p.values.begin(), p.values.end(), probs);
    }
    if (predicted) *predicted = p.argmax();
  });
}

xai_status xai_input_gradient(const xai_model* model, const xai_image* image, int class_idx, double* grad,
                              size_t n) {
  return guarded([&] {
    require(model, "model");
    require(image, "image");
    require(grad, "grad");
    const xai::Tensor3 g = xai::input_gradient(model->ckpt.model, image->tensor, class_idx);
    if (n < g.size()) xai::fail(xai::ErrorKind::Input, "gradient buffer too small");
    std::copy(g.values().begin(), g.values().end(), grad);
  });
}

xai_status xai_explain(const xai_model* model, const xai_image* image, const char* method,
                       const char* params_json, int class_idx, uint64_t seed, xai_map** out) {
  return guarded([&] {
    require(model, "model");
    require(image, "image");
    require(method, "method");
    require(out, "out");
    json params = json::object();
    if (params_json && *params_json) {
      try {
        params = json::parse(params_json);
      } catch (const json::parse_error& e) {
        xai::fail(xai::ErrorKind::Input, std::string("params are not valid JSON: ") + e.what());
      }
    }
    xai::FillPolicy fill;
    fill.values = model->ckpt.fill_mean;
    const xai::Explainer explain = xai::make_explainer({method, params}, fill);
    const int cls = class_idx < 0 ? xai::predict(model->ckpt.model, image->tensor).argmax() : class_idx;
    auto m = std::make_unique<xai_map>();
    m->map = explain(model->ckpt.model, image->tensor, cls, seed);
    *out = m.release();
  });
}

void xai_map_free(xai_map* map) { delete map; }

void xai_map_shape(const xai_map* map, int* height, int* width) {
  if (height) *height = map ? map->map.scores.height() : 0;
  if (width) *width = map ? map->map.scores.width() : 0;
}

const double* xai_map_data(const xai_map* map) { return map ? map->map.scores.data().data() : nullptr; }

int xai_map_class(const xai_map* map) { return map ? map->map.class_idx : -1; }

const char* xai_map_method(const xai_map* map) { return map ? map->map.method.c_str() : nullptr; }

xai_status xai_map_save_json(const xai_map* map, const char* path) {
  return guarded([&] {
    require(map, "map");
    require(path, "path");
    const auto& m = map->map;
    const auto s = m.scores.data();
    json j{{"method", m.method},
           {"class_idx", m.class_idx},
           {"height", m.scores.height()},
           {"width", m.scores.width()},
           {"scores", std::vector<double>(s.begin(), s.end())},
           {"meta", m.meta}};
    xai::write_file_atomic(path, j.dump());
  });
}

xai_status xai_fidelity(const xai_model* model, const xai_image* image, const xai_map* map,
                        double q_preserved, const char* fill, double* f, double* c_original,
                        double* c_adversarial) {
  return guarded([&] {
    require(model, "model");
    require(image, "image");
    require(map, "map");
    xai::FillPolicy policy = xai::parse_fill_policy(fill ? fill : "mean");
    if (policy.kind == xai::FillPolicy::Kind::Mean) policy.values = model->ckpt.fill_mean;
    const auto r = xai::fidelity_score(model->ckpt.model, image->tensor, map->map.scores, q_preserved, policy);
    if (f) *f = r.f;
    if (c_original) *c_original = r.c_original;
    if (c_adversarial) *c_adversarial = r.c_adversarial;
  });
}

xai_status xai_render_overlay(const xai_model* model, const xai_image* image, const xai_map* map,
                              double alpha, const char* colormap, const char* png_path) {
  return guarded([&] {
    require(model, "model");
    require(image, "image");
    require(map, "map");
    require(png_path, "png_path");
    const xai::Tensor3 overlay = xai::render_overlay(image->tensor, model->ckpt.preprocess, map->map.scores,
                                                     alpha, colormap ? colormap : "jet");
    xai::save_image(png_path, overlay);
  });
}

xai_status xai_confusion_matrix(const int* y_true, const int* y_pred, size_t n, int n_classes,
                                int64_t* counts) {
  return guarded([&] {
    require(counts, "counts");
    if (n > 0) {
      require(y_true, "y_true");
      require(y_pred, "y_pred");
    }
    const auto cm = xai::confusion_matrix({y_true, n}, {y_pred, n}, n_classes);
    for (int t = 0; t < n_classes; ++t)
      for (int p = 0; p < n_classes; ++p) counts[t * n_classes + p] = cm.counts[t][p];
  });
}

xai_status xai_metrics(const int* y_true, const int* y_pred, size_t n, int n_classes, int macro,
                       double* accuracy, double* precision, double* recall, double* f1) {
  return guarded([&] {
    if (n > 0) {
      require(y_true, "y_true");
      require(y_pred, "y_pred");
    }
    const auto cm = xai::confusion_matrix({y_true, n}, {y_pred, n}, n_classes);
    const auto m = xai::classification_metrics(cm, macro ? xai::Averaging::Macro : xai::Averaging::Weighted);
    if (accuracy) *accuracy = m.accuracy;
    if (precision) *precision = m.precision;
    if (recall) *recall = m.recall;
    if (f1) *f1 = m.f1;
  });
}

xai_status xai_run_experiment(const char* config_path, int resume, const char* only, int verbose,
                              int* exit_code) {
  return guarded([&] {
    require(config_path, "config_path");
    const xai::ExperimentConfig cfg = xai::load_experiment_config(config_path);
    xai::RunOptions opts;
    opts.resume = resume != 0;
    opts.verbose = verbose != 0;
    if (only) opts.only = xai::parse_cell_filter(only);
    const xai::RunSummary s = xai::run_experiment(cfg, opts);
    if (exit_code) *exit_code = s.exit_code();
  });
}

xai_status xai_report(const char* bundle_dir, const char* formats) {
  return guarded([&] {
    require(bundle_dir, "bundle_dir");
    const auto fmts = split_commas(formats ? formats : "csv,json");
    xai::export_tables(bundle_dir, fmts);
    xai::write_plots(bundle_dir);
  });
}

}  // extern "C"

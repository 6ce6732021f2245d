#include "xaikit/explainers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xaikit/error.hpp"
#include "xaikit/network.hpp"

namespace xai {

// ---------------------------------------------------------------------------
// Masks and fill

void SegmentMask::validate() const {
  if (height <= 0 || width <= 0) fail(ErrorKind::Input, "segment mask has empty shape");
  if (labels.size() != static_cast<std::size_t>(height) * width) {
    fail(ErrorKind::Input, "segment mask label count does not match its shape");
  }
  if (n_segments < 1) fail(ErrorKind::Input, "segment mask needs at least one segment");
  std::vector<std::size_t> sizes(static_cast<std::size_t>(n_segments), 0);
  for (int l : labels) {
    if (l < 0 || l >= n_segments) fail(ErrorKind::Input, "segment label out of range");
    ++sizes[static_cast<std::size_t>(l)];
  }
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    if (sizes[s] == 0) fail(ErrorKind::Input, "segment " + std::to_string(s) + " is empty");
  }
}

std::vector<std::size_t> SegmentMask::segment_sizes() const {
  std::vector<std::size_t> sizes(static_cast<std::size_t>(n_segments), 0);
  for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
  return sizes;
}

SegmentMask make_mask(int height, int width, std::vector<int> labels) {
  SegmentMask m;
  m.height = height;
  m.width = width;
  m.n_segments = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  m.labels = std::move(labels);
  m.validate();
  return m;
}

std::string to_string(FillPolicy::Kind kind) {
  switch (kind) {
    case FillPolicy::Kind::Mean: return "mean";
    case FillPolicy::Kind::Blur: return "blur";
    case FillPolicy::Kind::Zero: return "zero";
    case FillPolicy::Kind::Constant: return "constant";
  }
  return "mean";
}

FillPolicy parse_fill_policy(const std::string& kind, std::vector<double> values) {
  FillPolicy f;
  if (kind == "mean") f.kind = FillPolicy::Kind::Mean;
  else if (kind == "blur") f.kind = FillPolicy::Kind::Blur;
  else if (kind == "zero") f.kind = FillPolicy::Kind::Zero;
  else if (kind == "constant") f.kind = FillPolicy::Kind::Constant;
  else fail(ErrorKind::Input, "unknown fill policy '" + kind + "'");
  if (f.kind == FillPolicy::Kind::Constant && values.empty()) {
    fail(ErrorKind::Input, "constant fill needs a value");
  }
  f.values = std::move(values);
  return f;
}

namespace {

std::vector<double> channel_values(const std::vector<double>& v, int channels,
                                   const char* what) {
  if (v.size() == 1) return std::vector<double>(static_cast<std::size_t>(channels), v[0]);
  if (static_cast<int>(v.size()) != channels) {
    fail(ErrorKind::Input, std::string(what) + " fill has " + std::to_string(v.size()) +
                               " values for " + std::to_string(channels) + " channels");
  }
  return v;
}

Tensor3 gaussian_blur(const Tensor3& src, double sigma) {
  if (sigma <= 0) return src;
  const int r = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double total = 0;
  for (int i = -r; i <= r; ++i) total += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= total;
  auto clampi = [](int v, int n) { return std::clamp(v, 0, n - 1); };
  Tensor3 tmp(src.shape()), out(src.shape());
  for (int y = 0; y < src.height(); ++y)
    for (int x = 0; x < src.width(); ++x)
      for (int c = 0; c < src.channels(); ++c) {
        double s = 0;
        for (int i = -r; i <= r; ++i) s += k[i + r] * src.at(y, clampi(x + i, src.width()), c);
        tmp.at(y, x, c) = s;
      }
  for (int y = 0; y < src.height(); ++y)
    for (int x = 0; x < src.width(); ++x)
      for (int c = 0; c < src.channels(); ++c) {
        double s = 0;
        for (int i = -r; i <= r; ++i) s += k[i + r] * tmp.at(clampi(y + i, src.height()), x, c);
        out.at(y, x, c) = s;
      }
  return out;
}

}  // namespace

Tensor3 fill_image(const Tensor3& image, const FillPolicy& fill) {
  const int C = image.channels();
  switch (fill.kind) {
    case FillPolicy::Kind::Zero: return Tensor3(image.shape(), 0.0);
    case FillPolicy::Kind::Blur: return gaussian_blur(image, fill.blur_sigma);
    case FillPolicy::Kind::Constant:
    case FillPolicy::Kind::Mean: {
      std::vector<double> v;
      if (fill.kind == FillPolicy::Kind::Mean && fill.values.empty()) {
        v.assign(static_cast<std::size_t>(C), 0.0);
        const double n = static_cast<double>(image.height()) * image.width();
        for (std::size_t i = 0; i < image.size(); ++i) v[i % C] += image[i] / n;
      } else {
        v = channel_values(fill.values, C, to_string(fill.kind).c_str());
      }
      Tensor3 out(image.shape());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i % C];
      return out;
    }
  }
  return Tensor3(image.shape(), 0.0);
}

Tensor3 compose(const Tensor3& image, const Tensor3& fill, const std::vector<bool>& keep_pixel) {
  if (fill.shape() != image.shape() ||
      keep_pixel.size() != static_cast<std::size_t>(image.height()) * image.width()) {
    fail(ErrorKind::Input, "fill or keep mask does not match image shape");
  }
  Tensor3 out = image;
  const int C = image.channels();
  for (std::size_t p = 0; p < keep_pixel.size(); ++p) {
    if (keep_pixel[p]) continue;
    for (int c = 0; c < C; ++c) out[p * C + c] = fill[p * C + c];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient methods

AttributionMap saliency(const Classifier& model, const Tensor3& image, int class_idx) {
  const Tensor3 g = input_gradient(model, image, class_idx);
  return {channel_max_abs(g), "saliency", class_idx, {}};
}

Tensor3 integrated_gradients_full(const Classifier& model, const Tensor3& image, int class_idx,
                                  const IgOptions& options) {
  check_input(model, image);
  check_class(model, class_idx);
  if (options.steps < 1) fail(ErrorKind::Input, "integrated gradients needs steps >= 1");
  const Tensor3 baseline =
      options.baseline.empty() ? Tensor3(image.shape(), 0.0) : options.baseline;
  if (baseline.shape() != image.shape()) {
    fail(ErrorKind::Input, "baseline shape does not match image");
  }
  Tensor3 diff(image.shape());
  for (std::size_t i = 0; i < image.size(); ++i) diff[i] = image[i] - baseline[i];

  Tensor3 attr(image.shape());
  if (std::all_of(diff.data().begin(), diff.data().end(), [](double d) { return d == 0.0; })) {
    return attr;
  }
  Tensor3 point(image.shape());
  for (int k = 0; k < options.steps; ++k) {
    const double alpha = (k + 0.5) / options.steps;
    for (std::size_t i = 0; i < image.size(); ++i) point[i] = baseline[i] + alpha * diff[i];
    const Tensor3 g = input_gradient(model, point, class_idx);
    for (std::size_t i = 0; i < image.size(); ++i) attr[i] += g[i];
  }
  for (std::size_t i = 0; i < image.size(); ++i) attr[i] *= diff[i] / options.steps;
  return attr;
}

AttributionMap integrated_gradients(const Classifier& model, const Tensor3& image,
                                    int class_idx, const IgOptions& options) {
  AttributionMap m{channel_sum(integrated_gradients_full(model, image, class_idx, options)),
                   "integrated_gradients", class_idx, {}};
  m.meta["steps"] = options.steps;
  return m;
}

GradCamResult grad_cam_full(const Classifier& model, const Tensor3& image, int class_idx,
                            const std::string& layer_name) {
  std::string layer = layer_name;
  if (layer.empty()) {
    if (const Sequential* seq = model.as_sequential()) layer = seq->last_conv_layer();
    if (layer.empty()) fail(ErrorKind::UnsupportedLayer, "model has no convolutional layer");
  }
  const auto names = model.layer_names();
  if (std::find(names.begin(), names.end(), layer) == names.end()) {
    fail(ErrorKind::Lookup, "unknown layer '" + layer + "'");
  }
  if (!model.is_conv_layer(layer)) {
    fail(ErrorKind::UnsupportedLayer, "grad-cam needs a convolutional layer, '" + layer +
                                          "' is not one");
  }
  const LayerTensors lt = layer_tensors(model, image, layer, class_idx);
  const Tensor3& A = lt.activations;
  const Tensor3& G = lt.gradients;
  const int h = A.height(), w = A.width(), K = A.channels();

  GradCamResult r;
  r.weights.assign(static_cast<std::size_t>(K), 0.0);
  const double inv = 1.0 / (static_cast<double>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < K; ++k) r.weights[k] += G.at(y, x, k) * inv;

  r.layer_map = Grid2(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int k = 0; k < K; ++k) s += r.weights[k] * A.at(y, x, k);
      r.layer_map.at(y, x) = std::max(s, 0.0);
    }

  Grid2 up = resize_bilinear(r.layer_map, image.height(), image.width());
  const double peak = up.max();
  if (peak > 0.0) {
    for (double& v : up.data()) v = std::max(v / peak, 0.0);
  } else {
    std::fill(up.data().begin(), up.data().end(), 0.0);
  }
  r.map = {std::move(up), "grad_cam", class_idx, {}};
  return r;
}

AttributionMap grad_cam(const Classifier& model, const Tensor3& image, int class_idx,
                        const std::string& layer) {
  return grad_cam_full(model, image, class_idx, layer).map;
}

// ---------------------------------------------------------------------------
// LRP

LrpResult lrp_epsilon_full(const Classifier& model, const Tensor3& image, int class_idx,
                           double epsilon) {
  check_input(model, image);
  check_class(model, class_idx);
  if (!(epsilon > 0.0)) fail(ErrorKind::Input, "epsilon must be positive");
  const Sequential* net = model.as_sequential();
  if (!net) {
    fail(ErrorKind::UnsupportedLayer, "relevance propagation needs a layered model");
  }
  for (std::size_t i = 0; i < net->layer_count(); ++i) {
    const Layer& l = net->layer(i);
    if (!l.is_affine() && l.kind() != LayerKind::ReLU) {
      fail(ErrorKind::UnsupportedLayer, "layer '" + l.name() + "' (" + to_string(l.kind()) +
                                            ") is not supported by epsilon-LRP");
    }
  }

  const auto acts = net->forward_all(image);
  LrpResult res;
  Tensor3 R(acts.back().shape());
  R[static_cast<std::size_t>(class_idx)] = acts.back()[static_cast<std::size_t>(class_idx)];
  res.layer_totals.emplace_back("output", R.sum());

  for (std::size_t i = net->layer_count(); i-- > 0;) {
    const Layer& l = net->layer(i);
    if (l.is_affine()) {
      const Tensor3& a = acts[i];
      const Tensor3& z = acts[i + 1];
      Tensor3 s(z.shape());
      for (std::size_t j = 0; j < z.size(); ++j) {
        const double denom = z[j] + (z[j] >= 0.0 ? epsilon : -epsilon);
        s[j] = R[j] / denom;
      }
      // The input-gradient of an affine map is its transposed linear part.
      Tensor3 c = l.backward(a, z, s, nullptr);
      for (std::size_t j = 0; j < c.size(); ++j) c[j] *= a[j];
      R = std::move(c);
    }
    res.layer_totals.emplace_back(l.name(), R.sum());
  }
  res.map = {channel_sum(R), "lrp_epsilon", class_idx, {{"epsilon", epsilon}}};
  res.input_relevance = std::move(R);
  return res;
}

AttributionMap lrp_epsilon(const Classifier& model, const Tensor3& image, int class_idx,
                           double epsilon) {
  return lrp_epsilon_full(model, image, class_idx, epsilon).map;
}

// ---------------------------------------------------------------------------
// Activation maximization

AmResult activation_maximization(const Classifier& model, const UnitRef& unit,
                                 const AmOptions& options) {
  if (options.steps < 0) fail(ErrorKind::Input, "steps must be non-negative");
  if (!(options.step_size > 0.0)) fail(ErrorKind::Input, "step size must be positive");
  if (options.l2_penalty < 0.0) fail(ErrorKind::Input, "l2 penalty must be non-negative");
  if (unit.layer.empty()) check_class(model, unit.index);

  Rng rng(options.seed);
  Tensor3 x(model.input_shape());
  for (double& v : x.data()) {
    v = std::clamp(options.init_std * rng.normal(), options.clip_lo, options.clip_hi);
  }
  AmResult r;
  r.activation_trace.reserve(static_cast<std::size_t>(options.steps) + 1);
  for (int t = 0; t < options.steps; ++t) {
    const UnitResponse resp = model.unit_response(x, unit);
    r.activation_trace.push_back(resp.value);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double g = resp.input_gradient[i] - 2.0 * options.l2_penalty * x[i];
      x[i] = std::clamp(x[i] + options.step_size * g, options.clip_lo, options.clip_hi);
    }
  }
  r.activation_trace.push_back(model.unit_response(x, unit).value);
  r.image = std::move(x);
  return r;
}

// ---------------------------------------------------------------------------
// ICE

IceCurveSet ice_curves(const RowPredictor& predictor,
                       const std::vector<std::vector<double>>& rows, int feature_index,
                       const std::vector<double>& grid) {
  if (rows.empty()) fail(ErrorKind::Input, "ice_curves needs at least one row");
  if (grid.empty()) fail(ErrorKind::Input, "ice_curves needs a non-empty grid");
  for (std::size_t j = 1; j < grid.size(); ++j) {
    if (!(grid[j] > grid[j - 1])) fail(ErrorKind::Input, "grid must be strictly increasing");
  }
  IceCurveSet out{grid, {}, feature_index};
  out.curves.reserve(rows.size());
  for (const auto& row : rows) {
    if (feature_index < 0 || feature_index >= static_cast<int>(row.size())) {
      fail(ErrorKind::Input, "feature index out of range for row");
    }
    std::vector<double> x = row;
    std::vector<double> curve;
    curve.reserve(grid.size());
    for (double g : grid) {
      x[static_cast<std::size_t>(feature_index)] = g;
      curve.push_back(predictor(x));
    }
    out.curves.push_back(std::move(curve));
  }
  return out;
}

}  // namespace xai

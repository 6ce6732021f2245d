#include "xaikit/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "xaikit/error.hpp"

namespace xai {

const char* to_string(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::ReLU: return "relu";
    case LayerKind::AvgPool2d: return "avgpool2d";
    case LayerKind::MaxPool2d: return "maxpool2d";
    case LayerKind::Dense: return "dense";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, int kernel, bool bias)
    : Layer(std::move(name)), in_(in_channels), out_(out_channels), k_(kernel) {
  if (in_ < 1 || out_ < 1 || k_ < 1 || k_ % 2 == 0) {
    fail(ErrorKind::Input, "conv2d '" + this->name() + "': bad channel counts or even kernel");
  }
  weights_.assign(static_cast<std::size_t>(out_) * k_ * k_ * in_, 0.0);
  if (bias) bias_.assign(static_cast<std::size_t>(out_), 0.0);
}

Shape3 Conv2d::output_shape(Shape3 in) const {
  if (in.channels != in_) {
    fail(ErrorKind::Input, "conv2d '" + name() + "' expects " + std::to_string(in_) +
                               " input channels, got " + std::to_string(in.channels));
  }
  return {in.height, in.width, out_};
}

Tensor3 Conv2d::forward(const Tensor3& in) const {
  const Shape3 os = output_shape(in.shape());
  const int H = in.height(), W = in.width(), pad = k_ / 2;
  Tensor3 out(os);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double* dst = out.ptr(y, x);
      for (int o = 0; o < out_; ++o) dst[o] = bias_.empty() ? 0.0 : bias_[o];
      for (int ky = 0; ky < k_; ++ky) {
        const int sy = y + ky - pad;
        if (sy < 0 || sy >= H) continue;
        for (int kx = 0; kx < k_; ++kx) {
          const int sx = x + kx - pad;
          if (sx < 0 || sx >= W) continue;
          const double* src = in.ptr(sy, sx);
          for (int o = 0; o < out_; ++o) {
            const double* w = &weights_[((static_cast<std::size_t>(o) * k_ + ky) * k_ + kx) * in_];
            double acc = 0.0;
            for (int i = 0; i < in_; ++i) acc += w[i] * src[i];
            dst[o] += acc;
          }
        }
      }
    }
  }
  return out;
}

Tensor3 Conv2d::backward(const Tensor3& in, const Tensor3&, const Tensor3& grad_out,
                         ParamGrads* grads) const {
  const int H = in.height(), W = in.width(), pad = k_ / 2;
  Tensor3 grad_in(in.shape());
  double* gw = grads ? (*grads)[0].data() : nullptr;
  double* gb = (grads && !bias_.empty()) ? (*grads)[1].data() : nullptr;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double* g = grad_out.ptr(y, x);
      if (gb) {
        for (int o = 0; o < out_; ++o) gb[o] += g[o];
      }
      for (int ky = 0; ky < k_; ++ky) {
        const int sy = y + ky - pad;
        if (sy < 0 || sy >= H) continue;
        for (int kx = 0; kx < k_; ++kx) {
          const int sx = x + kx - pad;
          if (sx < 0 || sx >= W) continue;
          const double* src = in.ptr(sy, sx);
          double* gi = grad_in.ptr(sy, sx);
          for (int o = 0; o < out_; ++o) {
            const double go = g[o];
            if (go == 0.0) continue;
            const std::size_t base = ((static_cast<std::size_t>(o) * k_ + ky) * k_ + kx) * in_;
            const double* w = &weights_[base];
            for (int i = 0; i < in_; ++i) gi[i] += w[i] * go;
            if (gw) {
              for (int i = 0; i < in_; ++i) gw[base + i] += src[i] * go;
            }
          }
        }
      }
    }
  }
  return grad_in;
}

std::vector<ParamBlock> Conv2d::parameters() {
  std::vector<ParamBlock> p{{name() + ".weight", weights_}};
  if (!bias_.empty()) p.push_back({name() + ".bias", bias_});
  return p;
}

// ---------------------------------------------------------------------------
// Dense

Dense::Dense(std::string name, int in_features, int out_features, bool bias)
    : Layer(std::move(name)), in_(in_features), out_(out_features) {
  if (in_ < 1 || out_ < 1) fail(ErrorKind::Input, "dense '" + this->name() + "': bad sizes");
  weights_.assign(static_cast<std::size_t>(out_) * in_, 0.0);
  if (bias) bias_.assign(static_cast<std::size_t>(out_), 0.0);
}

Shape3 Dense::output_shape(Shape3 in) const {
  if (static_cast<int>(in.size()) != in_) {
    fail(ErrorKind::Input, "dense '" + name() + "' expects " + std::to_string(in_) +
                               " inputs, got " + std::to_string(in.size()));
  }
  return {1, 1, out_};
}

Tensor3 Dense::forward(const Tensor3& in) const {
  output_shape(in.shape());
  Tensor3 out(1, 1, out_);
  const double* x = in.data().data();
  for (int o = 0; o < out_; ++o) {
    const double* w = &weights_[static_cast<std::size_t>(o) * in_];
    double acc = bias_.empty() ? 0.0 : bias_[o];
    for (int i = 0; i < in_; ++i) acc += w[i] * x[i];
    out[o] = acc;
  }
  return out;
}

Tensor3 Dense::backward(const Tensor3& in, const Tensor3&, const Tensor3& grad_out,
                        ParamGrads* grads) const {
  Tensor3 grad_in(in.shape());
  const double* x = in.data().data();
  double* gi = grad_in.data().data();
  for (int o = 0; o < out_; ++o) {
    const double go = grad_out[o];
    if (go == 0.0) continue;
    const double* w = &weights_[static_cast<std::size_t>(o) * in_];
    for (int i = 0; i < in_; ++i) gi[i] += w[i] * go;
    if (grads) {
      double* gw = &(*grads)[0][static_cast<std::size_t>(o) * in_];
      for (int i = 0; i < in_; ++i) gw[i] += x[i] * go;
      if (!bias_.empty()) (*grads)[1][o] += go;
    }
  }
  return grad_in;
}

std::vector<ParamBlock> Dense::parameters() {
  std::vector<ParamBlock> p{{name() + ".weight", weights_}};
  if (!bias_.empty()) p.push_back({name() + ".bias", bias_});
  return p;
}

// ---------------------------------------------------------------------------
// ReLU

Tensor3 ReLU::forward(const Tensor3& in) const {
  Tensor3 out = in;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor3 ReLU::backward(const Tensor3& in, const Tensor3&, const Tensor3& grad_out,
                       ParamGrads*) const {
  Tensor3 g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(in[i] > 0.0)) g[i] = 0.0;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Pooling

namespace {

Shape3 pooled_shape(const std::string& name, Shape3 in, int size) {
  if (size < 1 || in.height < size || in.width < size) {
    fail(ErrorKind::Input, "pooling '" + name + "': input smaller than window");
  }
  return {in.height / size, in.width / size, in.channels};
}

}  // namespace

Shape3 AvgPool2d::output_shape(Shape3 in) const { return pooled_shape(name(), in, size_); }

Tensor3 AvgPool2d::forward(const Tensor3& in) const {
  Tensor3 out(output_shape(in.shape()));
  const double inv = 1.0 / (size_ * size_);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      for (int c = 0; c < out.channels(); ++c) {
        double s = 0.0;
        for (int dy = 0; dy < size_; ++dy)
          for (int dx = 0; dx < size_; ++dx) s += in.at(y * size_ + dy, x * size_ + dx, c);
        out.at(y, x, c) = s * inv;
      }
  return out;
}

Tensor3 AvgPool2d::backward(const Tensor3& in, const Tensor3& out, const Tensor3& grad_out,
                            ParamGrads*) const {
  Tensor3 g(in.shape());
  const double inv = 1.0 / (size_ * size_);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      for (int c = 0; c < out.channels(); ++c) {
        const double v = grad_out.at(y, x, c) * inv;
        for (int dy = 0; dy < size_; ++dy)
          for (int dx = 0; dx < size_; ++dx) g.at(y * size_ + dy, x * size_ + dx, c) += v;
      }
  return g;
}

Shape3 MaxPool2d::output_shape(Shape3 in) const { return pooled_shape(name(), in, size_); }

Tensor3 MaxPool2d::forward(const Tensor3& in) const {
  Tensor3 out(output_shape(in.shape()));
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      for (int c = 0; c < out.channels(); ++c) {
        double m = -std::numeric_limits<double>::infinity();
        for (int dy = 0; dy < size_; ++dy)
          for (int dx = 0; dx < size_; ++dx)
            m = std::max(m, in.at(y * size_ + dy, x * size_ + dx, c));
        out.at(y, x, c) = m;
      }
  return out;
}

Tensor3 MaxPool2d::backward(const Tensor3& in, const Tensor3& out, const Tensor3& grad_out,
                            ParamGrads*) const {
  Tensor3 g(in.shape());
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      for (int c = 0; c < out.channels(); ++c) {
        // First maximal element in row-major window order receives the gradient.
        int by = y * size_, bx = x * size_;
        double best = in.at(by, bx, c);
        for (int dy = 0; dy < size_; ++dy)
          for (int dx = 0; dx < size_; ++dx) {
            const double v = in.at(y * size_ + dy, x * size_ + dx, c);
            if (v > best) {
              best = v;
              by = y * size_ + dy;
              bx = x * size_ + dx;
            }
          }
        g.at(by, bx, c) += grad_out.at(y, x, c);
      }
  return g;
}

// ---------------------------------------------------------------------------
// Sequential

Sequential::Sequential(const Sequential& other)
    : Classifier(other), input_shape_(other.input_shape_), shapes_(other.shapes_) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
  if (this != &other) {
    Sequential copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Sequential& Sequential::add(std::unique_ptr<Layer> layer) {
  for (const auto& l : layers_) {
    if (l->name() == layer->name()) {
      fail(ErrorKind::Input, "duplicate layer name '" + layer->name() + "'");
    }
  }
  shapes_.push_back(layer->output_shape(shapes_.back()));
  layers_.push_back(std::move(layer));
  return *this;
}

std::size_t Sequential::layer_index(std::string_view name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i]->name() == name) return i;
  }
  fail(ErrorKind::Lookup, "unknown layer '" + std::string(name) + "'");
}

int Sequential::num_classes() const { return static_cast<int>(shapes_.back().size()); }

std::vector<std::string> Sequential::layer_names() const {
  std::vector<std::string> names;
  names.reserve(layers_.size());
  for (const auto& l : layers_) names.push_back(l->name());
  return names;
}

std::vector<Tensor3> Sequential::forward_all(const Tensor3& image) const {
  if (image.shape() != input_shape_) fail(ErrorKind::Input, "image shape does not match model");
  std::vector<Tensor3> acts;
  acts.reserve(layers_.size() + 1);
  acts.push_back(image);
  for (const auto& l : layers_) acts.push_back(l->forward(acts.back()));
  return acts;
}

std::vector<double> Sequential::logits(const Tensor3& image) const {
  Tensor3 x = image;
  if (x.shape() != input_shape_) fail(ErrorKind::Input, "image shape does not match model");
  for (const auto& l : layers_) x = l->forward(x);
  return x.values();
}

Tensor3 Sequential::backward_from(const std::vector<Tensor3>& acts, std::size_t from,
                                  Tensor3 grad, std::vector<ParamGrads>* grads) const {
  for (std::size_t i = from + 1; i-- > 0;) {
    ParamGrads* pg = grads ? &(*grads)[i] : nullptr;
    grad = layers_[i]->backward(acts[i], acts[i + 1], grad, pg);
  }
  return grad;
}

Tensor3 Sequential::logit_gradient(const Tensor3& image, int class_idx) const {
  if (layers_.empty()) fail(ErrorKind::Model, "empty network");
  const auto acts = forward_all(image);
  Tensor3 seed(acts.back().shape());
  seed[static_cast<std::size_t>(class_idx)] = 1.0;
  return backward_from(acts, layers_.size() - 1, std::move(seed));
}

LayerTensors Sequential::layer_tensors(const Tensor3& image, std::string_view layer,
                                       int class_idx) const {
  const std::size_t li = layer_index(layer);
  const auto acts = forward_all(image);
  // Gradient flows from the logit down to the output of layer `li`.
  Tensor3 grad(acts.back().shape());
  grad[static_cast<std::size_t>(class_idx)] = 1.0;
  for (std::size_t i = layers_.size(); i-- > li + 1;) {
    grad = layers_[i]->backward(acts[i], acts[i + 1], grad, nullptr);
  }
  return {acts[li + 1], std::move(grad)};
}

UnitResponse Sequential::unit_response(const Tensor3& image, const UnitRef& unit) const {
  if (unit.layer.empty()) return Classifier::unit_response(image, unit);
  const std::size_t li = layer_index(unit.layer);
  const Shape3 s = shapes_[li + 1];
  const bool spatial = s.height * s.width > 1;
  const int limit = spatial ? s.channels : static_cast<int>(s.size());
  if (unit.index < 0 || unit.index >= limit) {
    fail(ErrorKind::Index, "unit index " + std::to_string(unit.index) + " out of range for layer '" +
                               unit.layer + "'");
  }
  const auto acts = forward_all(image);
  const Tensor3& a = acts[li + 1];
  Tensor3 seed(s);
  double value = 0.0;
  if (spatial) {
    const double inv = 1.0 / (s.height * s.width);
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) {
        value += a.at(y, x, unit.index) * inv;
        seed.at(y, x, unit.index) = inv;
      }
  } else {
    value = a[static_cast<std::size_t>(unit.index)];
    seed[static_cast<std::size_t>(unit.index)] = 1.0;
  }
  return {value, backward_from(acts, li, std::move(seed))};
}

bool Sequential::is_conv_layer(std::string_view layer) const {
  return layers_[layer_index(layer)]->kind() == LayerKind::Conv2d;
}

std::vector<ParamGrads> Sequential::zero_grads() const {
  std::vector<ParamGrads> g(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (const auto& block : const_cast<Layer&>(*layers_[i]).parameters()) {
      g[i].emplace_back(block.values.size(), 0.0);
    }
  }
  return g;
}

std::vector<ParamBlock> Sequential::parameters() {
  std::vector<ParamBlock> all;
  for (auto& l : layers_) {
    for (auto& b : l->parameters()) all.push_back(b);
  }
  return all;
}

std::size_t Sequential::parameter_count() const {
  std::size_t n = 0;
  for (auto& b : const_cast<Sequential*>(this)->parameters()) n += b.values.size();
  return n;
}

void Sequential::fill_parameters(double value) {
  for (auto& b : parameters()) std::fill(b.values.begin(), b.values.end(), value);
}

std::string Sequential::last_conv_layer() const {
  for (std::size_t i = layers_.size(); i-- > 0;) {
    if (layers_[i]->kind() == LayerKind::Conv2d) return layers_[i]->name();
  }
  return {};
}

void init_parameters(Sequential& model, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    Layer& l = model.layer(i);
    double fan_in = 1.0;
    if (auto* c = dynamic_cast<Conv2d*>(&l)) {
      fan_in = static_cast<double>(c->in_channels()) * c->kernel() * c->kernel();
    } else if (auto* d = dynamic_cast<Dense*>(&l)) {
      fan_in = d->in_features();
    } else {
      continue;
    }
    const double std_w = std::sqrt(2.0 / fan_in);
    auto blocks = l.parameters();
    for (double& w : blocks[0].values) w = std_w * rng.normal();
    if (blocks.size() > 1) {
      for (double& b : blocks[1].values) b = 0.01 * rng.normal();
    }
  }
}

Sequential build_micro_net(std::uint64_t seed, int num_classes, const MicroNetOptions& options) {
  if (num_classes < 2) fail(ErrorKind::Input, "micro-net needs at least 2 classes");
  const Shape3 in = options.input_shape;
  if (in.channels != 1 && in.channels != 3) fail(ErrorKind::Input, "channels must be 1 or 3");
  if (in.height < 8 || in.width < 8) fail(ErrorKind::Input, "spatial dims must be >= 8");
  Sequential net(in);
  net.emplace<Conv2d>("conv1", in.channels, 8, 3, options.bias);
  net.emplace<ReLU>("relu1");
  net.emplace<Conv2d>("conv2", 8, 8, 3, options.bias);
  net.emplace<ReLU>("relu2");
  net.emplace<AvgPool2d>("pool", 2);
  const int flat = static_cast<int>(net.layer_output_shape(4).size());
  net.emplace<Dense>("fc", flat, num_classes, options.bias);
  init_parameters(net, seed);
  return net;
}

}  // namespace xai

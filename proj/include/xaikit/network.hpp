#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xaikit/classifier.hpp"
#include "xaikit/tensor.hpp"

namespace xai {

enum class LayerKind { Conv2d, ReLU, AvgPool2d, MaxPool2d, Dense };

const char* to_string(LayerKind kind) noexcept;

/// Flat view of one parameter block (weights or bias) of a layer.
struct ParamBlock {
  std::string name;
  std::span<double> values;
};

/// Gradient buffers laid out exactly like the layer's ParamBlocks.
using ParamGrads = std::vector<std::vector<double>>;

class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;

  const std::string& name() const { return name_; }
  virtual LayerKind kind() const = 0;
  virtual Shape3 output_shape(Shape3 in) const = 0;
  virtual Tensor3 forward(const Tensor3& in) const = 0;

  /// Gradient with respect to the layer input. When `grads` is non-null the
  /// parameter gradients are accumulated into it.
  virtual Tensor3 backward(const Tensor3& in, const Tensor3& out, const Tensor3& grad_out,
                           ParamGrads* grads) const = 0;

  virtual std::vector<ParamBlock> parameters() { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;

  /// Affine map of its input (conv, dense, average pooling).
  bool is_affine() const {
    return kind() == LayerKind::Conv2d || kind() == LayerKind::Dense ||
           kind() == LayerKind::AvgPool2d;
  }

 private:
  std::string name_;
};

/// Square-kernel convolution, stride 1, zero "same" padding (k/2).
class Conv2d final : public Layer {
 public:
  Conv2d(std::string name, int in_channels, int out_channels, int kernel, bool bias = true);

  LayerKind kind() const override { return LayerKind::Conv2d; }
  Shape3 output_shape(Shape3 in) const override;
  Tensor3 forward(const Tensor3& in) const override;
  Tensor3 backward(const Tensor3& in, const Tensor3& out, const Tensor3& grad_out,
                   ParamGrads* grads) const override;
  std::vector<ParamBlock> parameters() override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return k_; }
  bool has_bias() const { return !bias_.empty(); }

  /// Weight layout is [out][ky][kx][in].
  double& weight(int o, int ky, int kx, int i) {
    return weights_[((static_cast<std::size_t>(o) * k_ + ky) * k_ + kx) * in_ + i];
  }
  double weight(int o, int ky, int kx, int i) const {
    return weights_[((static_cast<std::size_t>(o) * k_ + ky) * k_ + kx) * in_ + i];
  }
  std::vector<double>& weights() { return weights_; }
  const std::vector<double>& weights() const { return weights_; }
  std::vector<double>& bias() { return bias_; }
  const std::vector<double>& bias() const { return bias_; }

 private:
  int in_, out_, k_;
  std::vector<double> weights_;
  std::vector<double> bias_;
};

/// Fully connected layer over the flattened (HWC order) input; emits 1x1xN.
class Dense final : public Layer {
 public:
  Dense(std::string name, int in_features, int out_features, bool bias = true);

  LayerKind kind() const override { return LayerKind::Dense; }
  Shape3 output_shape(Shape3 in) const override;
  Tensor3 forward(const Tensor3& in) const override;
  Tensor3 backward(const Tensor3& in, const Tensor3& out, const Tensor3& grad_out,
                   ParamGrads* grads) const override;
  std::vector<ParamBlock> parameters() override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }

  int in_features() const { return in_; }
  int out_features() const { return out_; }
  bool has_bias() const { return !bias_.empty(); }

  /// Weight layout is [out][in].
  double& weight(int o, int i) { return weights_[static_cast<std::size_t>(o) * in_ + i]; }
  double weight(int o, int i) const { return weights_[static_cast<std::size_t>(o) * in_ + i]; }
  std::vector<double>& weights() { return weights_; }
  const std::vector<double>& weights() const { return weights_; }
  std::vector<double>& bias() { return bias_; }
  const std::vector<double>& bias() const { return bias_; }

 private:
  int in_, out_;
  std::vector<double> weights_;
  std::vector<double> bias_;
};

class ReLU final : public Layer {
 public:
  using Layer::Layer;
  LayerKind kind() const override { return LayerKind::ReLU; }
  Shape3 output_shape(Shape3 in) const override { return in; }
  Tensor3 forward(const Tensor3& in) const override;
  Tensor3 backward(const Tensor3& in, const Tensor3& out, const Tensor3& grad_out,
                   ParamGrads* grads) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLU>(*this); }
};

/// Non-overlapping pooling with window = stride = `size`; trailing rows and
/// columns that do not fill a window are dropped.
class AvgPool2d final : public Layer {
 public:
  AvgPool2d(std::string name, int size = 2) : Layer(std::move(name)), size_(size) {}
  LayerKind kind() const override { return LayerKind::AvgPool2d; }
  Shape3 output_shape(Shape3 in) const override;
  Tensor3 forward(const Tensor3& in) const override;
  Tensor3 backward(const Tensor3& in, const Tensor3& out, const Tensor3& grad_out,
                   ParamGrads* grads) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<AvgPool2d>(*this); }
  int size() const { return size_; }

 private:
  int size_;
};

class MaxPool2d final : public Layer {
 public:
  MaxPool2d(std::string name, int size = 2) : Layer(std::move(name)), size_(size) {}
  LayerKind kind() const override { return LayerKind::MaxPool2d; }
  Shape3 output_shape(Shape3 in) const override;
  Tensor3 forward(const Tensor3& in) const override;
  Tensor3 backward(const Tensor3& in, const Tensor3& out, const Tensor3& grad_out,
                   ParamGrads* grads) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2d>(*this); }
  int size() const { return size_; }

 private:
  int size_;
};

/// A feed-forward stack of layers ending in class logits.
class Sequential final : public Classifier {
 public:
  explicit Sequential(Shape3 input_shape) : input_shape_(input_shape) {}
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  /// Appends a layer; its input shape must be compatible with the stack so far.
  Sequential& add(std::unique_ptr<Layer> layer);

  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    add(std::move(layer));
    return ref;
  }

  std::size_t layer_count() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }
  const Layer& layer(std::size_t i) const { return *layers_[i]; }
  std::size_t layer_index(std::string_view name) const;  // Lookup error if absent
  Shape3 layer_output_shape(std::size_t i) const { return shapes_[i + 1]; }

  // Classifier
  int num_classes() const override;
  Shape3 input_shape() const override { return input_shape_; }
  std::vector<std::string> layer_names() const override;
  std::vector<double> logits(const Tensor3& image) const override;
  Tensor3 logit_gradient(const Tensor3& image, int class_idx) const override;
  LayerTensors layer_tensors(const Tensor3& image, std::string_view layer,
                             int class_idx) const override;
  UnitResponse unit_response(const Tensor3& image, const UnitRef& unit) const override;
  bool is_conv_layer(std::string_view layer) const override;
  const Sequential* as_sequential() const override { return this; }

  /// activations[0] is the input; activations[i + 1] is the output of layer i.
  std::vector<Tensor3> forward_all(const Tensor3& image) const;

  /// Backpropagates `grad` (w.r.t. the output of layer `from`) down to the
  /// input. Accumulates parameter gradients when `grads` is non-null; it must
  /// then hold one ParamGrads per layer.
  Tensor3 backward_from(const std::vector<Tensor3>& activations, std::size_t from,
                        Tensor3 grad, std::vector<ParamGrads>* grads = nullptr) const;

  std::vector<ParamGrads> zero_grads() const;
  std::vector<ParamBlock> parameters();
  std::size_t parameter_count() const;
  void fill_parameters(double value);

  /// Name of the last convolutional layer, or empty.
  std::string last_conv_layer() const;

 private:
  Shape3 input_shape_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<Shape3> shapes_{input_shape_};
};

struct MicroNetOptions {
  Shape3 input_shape{32, 32, 3};
  bool bias = true;
};

/// Deterministic reference network: conv 3x3 (C->8), ReLU, conv 3x3 (8->8),
/// ReLU, 2x2 average pooling, dense -> num_classes. Layer names are
/// conv1, relu1, conv2, relu2, pool, fc. Weights are He-normal and biases
/// N(0, 0.01^2), drawn from `seed`.
Sequential build_micro_net(std::uint64_t seed, int num_classes,
                           const MicroNetOptions& options = {});

/// Reinitializes every parameter of `model` from `seed` using the same scheme.
void init_parameters(Sequential& model, std::uint64_t seed);

}  // namespace xai

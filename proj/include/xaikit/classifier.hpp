#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "xaikit/tensor.hpp"

namespace xai {

class Sequential;

/// Softmax output of a classifier. Entries lie in [0,1] and sum to 1.
struct Probabilities {
  std::vector<double> values;

  int argmax() const;
  double max() const;
};

/// Forward activations at a named layer together with the gradient of one
/// class logit with respect to those activations.
struct LayerTensors {
  Tensor3 activations;
  Tensor3 gradients;
};

/// Value of a chosen unit and its gradient with respect to the input image.
struct UnitResponse {
  double value = 0.0;
  Tensor3 input_gradient;
};

/// Reference to a unit whose response can be maximized or inspected.
/// An empty layer selects the class logit `index`; otherwise `index` is a
/// channel of a spatial layer (spatially averaged) or an element of a flat one.
struct UnitRef {
  std::string layer;
  int index = 0;
};

/// The contract every classifier satisfies. Explainers and evaluators only see
/// this interface. Gradients are always taken with respect to pre-softmax
/// logits. Implementations are not required to be safe for concurrent calls.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual int num_classes() const = 0;
  virtual Shape3 input_shape() const = 0;
  virtual std::vector<std::string> layer_names() const { return {}; }

  virtual std::vector<double> logits(const Tensor3& image) const = 0;

  /// d logit[class_idx] / d image.
  virtual Tensor3 logit_gradient(const Tensor3& image, int class_idx) const;
  virtual LayerTensors layer_tensors(const Tensor3& image, std::string_view layer,
                                     int class_idx) const;
  virtual UnitResponse unit_response(const Tensor3& image, const UnitRef& unit) const;

  /// True when `layer` produces a convolutional feature map.
  virtual bool is_conv_layer(std::string_view layer) const;

  /// Layered access for rule-based propagation; null for black-box models.
  virtual const Sequential* as_sequential() const { return nullptr; }
};

/// Wraps an arbitrary logit function. Gradient-based operations are not
/// available and fail with a model error.
class FunctionClassifier final : public Classifier {
 public:
  using LogitFn = std::function<std::vector<double>(const Tensor3&)>;

  FunctionClassifier(Shape3 input_shape, int num_classes, LogitFn fn);

  int num_classes() const override { return num_classes_; }
  Shape3 input_shape() const override { return shape_; }
  std::vector<double> logits(const Tensor3& image) const override;

 private:
  Shape3 shape_;
  int num_classes_;
  LogitFn fn_;
};

std::vector<double> softmax(const std::vector<double>& logits);

/// Checks image shape and finiteness against the model's expected input.
void check_input(const Classifier& model, const Tensor3& image);
void check_class(const Classifier& model, int class_idx);

/// Validated adapter operations.
Probabilities predict(const Classifier& model, const Tensor3& image);
std::vector<double> logits(const Classifier& model, const Tensor3& image);
Tensor3 input_gradient(const Classifier& model, const Tensor3& image, int class_idx);
LayerTensors layer_tensors(const Classifier& model, const Tensor3& image,
                           std::string_view layer, int class_idx);

}  // namespace xai

#include "xaikit/classifier.hpp"

#include <algorithm>
#include <cmath>

#include "xaikit/error.hpp"

namespace xai {

int Probabilities::argmax() const {
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

double Probabilities::max() const {
  return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
}

Tensor3 Classifier::logit_gradient(const Tensor3&, int) const {
  fail(ErrorKind::Model, "classifier does not provide input gradients");
}

LayerTensors Classifier::layer_tensors(const Tensor3&, std::string_view layer, int) const {
  fail(ErrorKind::Lookup, "unknown layer '" + std::string(layer) + "'");
}

UnitResponse Classifier::unit_response(const Tensor3& image, const UnitRef& unit) const {
  if (!unit.layer.empty()) {
    fail(ErrorKind::Lookup, "unknown layer '" + unit.layer + "'");
  }
  check_class(*this, unit.index);
  return {logits(image)[static_cast<std::size_t>(unit.index)],
          logit_gradient(image, unit.index)};
}

bool Classifier::is_conv_layer(std::string_view) const { return false; }

FunctionClassifier::FunctionClassifier(Shape3 input_shape, int num_classes, LogitFn fn)
    : shape_(input_shape), num_classes_(num_classes), fn_(std::move(fn)) {
  if (num_classes_ < 2) fail(ErrorKind::Input, "classifier needs at least 2 classes");
}

std::vector<double> FunctionClassifier::logits(const Tensor3& image) const {
  return fn_(image);
}

std::vector<double> softmax(const std::vector<double>& logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

void check_input(const Classifier& model, const Tensor3& image) {
  const Shape3 want = model.input_shape();
  if (image.shape() != want) {
    fail(ErrorKind::Input, "image shape " + std::to_string(image.height()) + "x" +
                               std::to_string(image.width()) + "x" +
                               std::to_string(image.channels()) + " does not match model input " +
                               std::to_string(want.height) + "x" + std::to_string(want.width) +
                               "x" + std::to_string(want.channels));
  }
  if (!image.all_finite()) fail(ErrorKind::Input, "image contains non-finite values");
}

void check_class(const Classifier& model, int class_idx) {
  if (class_idx < 0 || class_idx >= model.num_classes()) {
    fail(ErrorKind::Index, "class index " + std::to_string(class_idx) + " out of range [0, " +
                               std::to_string(model.num_classes()) + ")");
  }
}

std::vector<double> logits(const Classifier& model, const Tensor3& image) {
  check_input(model, image);
  auto z = model.logits(image);
  if (static_cast<int>(z.size()) != model.num_classes()) {
    fail(ErrorKind::Model, "model returned " + std::to_string(z.size()) + " logits, expected " +
                               std::to_string(model.num_classes()));
  }
  for (double v : z) {
    if (!std::isfinite(v)) fail(ErrorKind::Model, "model produced a non-finite logit");
  }
  return z;
}

Probabilities predict(const Classifier& model, const Tensor3& image) {
  return {softmax(logits(model, image))};
}

Tensor3 input_gradient(const Classifier& model, const Tensor3& image, int class_idx) {
  check_input(model, image);
  check_class(model, class_idx);
  Tensor3 g = model.logit_gradient(image, class_idx);
  if (!g.all_finite()) fail(ErrorKind::Model, "non-finite input gradient");
  return g;
}

LayerTensors layer_tensors(const Classifier& model, const Tensor3& image,
                           std::string_view layer, int class_idx) {
  check_input(model, image);
  check_class(model, class_idx);
  const auto names = model.layer_names();
  if (std::find(names.begin(), names.end(), layer) == names.end()) {
    fail(ErrorKind::Lookup, "unknown layer '" + std::string(layer) + "'");
  }
  return model.layer_tensors(image, layer, class_idx);
}

}  // namespace xai

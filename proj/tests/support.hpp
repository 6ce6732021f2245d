#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xaikit/classifier.hpp"
#include "xaikit/error.hpp"
#include "xaikit/network.hpp"
#include "xaikit/tensor.hpp"

namespace xai::test {

inline Tensor3 random_image(Shape3 s, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor3 t(s);
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

inline Tensor3 checkerboard(Shape3 s, int cell = 4) {
  Tensor3 t(s);
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x)
      for (int c = 0; c < s.channels; ++c)
        t.at(y, x, c) = ((y / cell + x / cell) % 2 == 0 ? 1.0 : -1.0) * (1.0 + 0.1 * c);
  return t;
}

/// Single dense layer without bias: logit_k = w_k . x
inline Sequential linear_model(Shape3 s, int classes, std::uint64_t seed) {
  Sequential m(s);
  auto& d = m.emplace<Dense>("fc", static_cast<int>(s.size()), classes, false);
  Rng rng(seed);
  for (double& w : d.weights()) w = rng.normal();
  return m;
}

/// Relative error with an absolute floor so that vanishing gradients compare sanely.
inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central difference of f along coordinate i of x.
template <typename F>
double central_diff(F&& f, Tensor3 x, std::size_t i, double h) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double fp = f(x);
  x[i] = x0 - h;
  const double fm = f(x);
  return (fp - fm) / (2 * h);
}

/// True when the one-sided differences disagree, i.e. a ReLU kink lies
/// within h of x along coordinate i and the central difference is not a
/// derivative estimate there.
template <typename F>
bool straddles_kink(F&& f, Tensor3 x, std::size_t i, double h) {
  const double f0 = f(x);
  const double x0 = x[i];
  x[i] = x0 + h;
  const double fp = f(x);
  x[i] = x0 - h;
  const double fm = f(x);
  const double right = (fp - f0) / h, left = (f0 - fm) / h;
  return std::abs(right - left) > 1e-4 * std::max({std::abs(right), std::abs(left), 1e-6});
}

/// Kind of the xai::Error thrown by f, or nullopt when nothing is thrown.
template <typename F>
std::optional<ErrorKind> error_kind(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

inline std::filesystem::path temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
  auto p = std::filesystem::temp_directory_path() /
           ("xaikit_" + tag + "_" + std::to_string(stamp) + "_" + std::to_string(counter++));
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace xai::test

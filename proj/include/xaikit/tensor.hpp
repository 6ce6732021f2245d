#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace xai {

struct Shape3 {
  int height = 0;
  int width = 0;
  int channels = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(height) * width * channels;
  }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

/// Dense height x width x channels array, channel-fastest (HWC) layout.
/// Used for images, feature maps, and their gradients.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(int height, int width, int channels, double fill = 0.0);
  explicit Tensor3(Shape3 shape, double fill = 0.0)
      : Tensor3(shape.height, shape.width, shape.channels, fill) {}
  Tensor3(Shape3 shape, std::vector<double> data);

  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  int channels() const { return shape_.channels; }
  const Shape3& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int y, int x, int c) {
    return data_[(static_cast<std::size_t>(y) * shape_.width + x) * shape_.channels + c];
  }
  double at(int y, int x, int c) const {
    return data_[(static_cast<std::size_t>(y) * shape_.width + x) * shape_.channels + c];
  }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  /// Channel vector of pixel (y, x).
  double* ptr(int y, int x) {
    return data_.data() + (static_cast<std::size_t>(y) * shape_.width + x) * shape_.channels;
  }
  const double* ptr(int y, int x) const {
    return data_.data() + (static_cast<std::size_t>(y) * shape_.width + x) * shape_.channels;
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool all_finite() const;
  double sum() const;

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  Shape3 shape_{};
  std::vector<double> data_;
};

/// Row-major height x width real array; the spatial grid of attribution maps.
class Grid2 {
 public:
  Grid2() = default;
  Grid2(int height, int width, double fill = 0.0)
      : height_(height), width_(width),
        data_(static_cast<std::size_t>(height) * width, fill) {}

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }

  double& at(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  double at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool all_finite() const;
  double sum() const;
  double max() const;
  double min() const;

  friend bool operator==(const Grid2&, const Grid2&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

/// Bilinear resize with half-pixel centers and edge clamping.
Tensor3 resize_bilinear(const Tensor3& src, int height, int width);
Grid2 resize_bilinear(const Grid2& src, int height, int width);

/// Channel reductions used to turn 3-D attributions into spatial maps.
Grid2 channel_sum(const Tensor3& t);
Grid2 channel_max_abs(const Tensor3& t);

/// Deterministic RNG. The engine is standardized; the derived draws are
/// implemented here so results do not depend on the standard library vendor.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  std::uint64_t next_u64();
  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);   // [lo, hi)
  double normal();                        // standard normal
  std::size_t below(std::size_t n);       // [0, n)
  bool coin(double p_true = 0.5) { return uniform() < p_true; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Mixes several integers into one seed; used to derive per-item streams.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0);

}  // namespace xai

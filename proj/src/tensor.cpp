#include "xaikit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "xaikit/error.hpp"

namespace xai {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Input: return "input error";
    case ErrorKind::Index: return "index error";
    case ErrorKind::Lookup: return "lookup error";
    case ErrorKind::Model: return "model error";
    case ErrorKind::UnsupportedLayer: return "unsupported-layer error";
    case ErrorKind::Fit: return "fit error";
    case ErrorKind::Ingest: return "ingest error";
    case ErrorKind::Config: return "configuration error";
    case ErrorKind::Io: return "io error";
    case ErrorKind::Cell: return "cell error";
  }
  return "error";
}

Tensor3::Tensor3(int height, int width, int channels, double fill)
    : shape_{height, width, channels} {
  if (height < 0 || width < 0 || channels < 0) {
    fail(ErrorKind::Input, "negative tensor dimension");
  }
  data_.assign(shape_.size(), fill);
}

Tensor3::Tensor3(Shape3 shape, std::vector<double> data)
    : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.size()) {
    fail(ErrorKind::Input, "tensor data length does not match shape");
  }
}

bool Tensor3::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor3::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

bool Grid2::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Grid2::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Grid2::max() const {
  return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end());
}

double Grid2::min() const {
  return data_.empty() ? 0.0 : *std::min_element(data_.begin(), data_.end());
}

namespace {

struct Tap {
  int i0, i1;
  double w1;
};

// Source taps for one output coordinate under half-pixel alignment.
std::vector<Tap> make_taps(int src, int dst) {
  std::vector<Tap> taps(static_cast<std::size_t>(dst));
  const double scale = static_cast<double>(src) / dst;
  for (int o = 0; o < dst; ++o) {
    double pos = (o + 0.5) * scale - 0.5;
    pos = std::clamp(pos, 0.0, static_cast<double>(src - 1));
    int i0 = static_cast<int>(std::floor(pos));
    int i1 = std::min(i0 + 1, src - 1);
    taps[o] = {i0, i1, pos - i0};
  }
  return taps;
}

}  // namespace

Tensor3 resize_bilinear(const Tensor3& src, int height, int width) {
  if (height <= 0 || width <= 0 || src.empty()) {
    fail(ErrorKind::Input, "resize_bilinear: empty source or target");
  }
  if (src.height() == height && src.width() == width) return src;
  const auto ty = make_taps(src.height(), height);
  const auto tx = make_taps(src.width(), width);
  Tensor3 out(height, width, src.channels());
  for (int y = 0; y < height; ++y) {
    const Tap& a = ty[y];
    for (int x = 0; x < width; ++x) {
      const Tap& b = tx[x];
      for (int c = 0; c < src.channels(); ++c) {
        double top = src.at(a.i0, b.i0, c) * (1 - b.w1) + src.at(a.i0, b.i1, c) * b.w1;
        double bot = src.at(a.i1, b.i0, c) * (1 - b.w1) + src.at(a.i1, b.i1, c) * b.w1;
        out.at(y, x, c) = top * (1 - a.w1) + bot * a.w1;
      }
    }
  }
  return out;
}

Grid2 resize_bilinear(const Grid2& src, int height, int width) {
  Tensor3 t(src.height(), src.width(), 1);
  std::copy(src.data().begin(), src.data().end(), t.data().begin());
  Tensor3 r = resize_bilinear(t, height, width);
  Grid2 out(height, width);
  std::copy(r.data().begin(), r.data().end(), out.data().begin());
  return out;
}

Grid2 channel_sum(const Tensor3& t) {
  Grid2 g(t.height(), t.width());
  for (int y = 0; y < t.height(); ++y)
    for (int x = 0; x < t.width(); ++x) {
      double s = 0.0;
      for (int c = 0; c < t.channels(); ++c) s += t.at(y, x, c);
      g.at(y, x) = s;
    }
  return g;
}

Grid2 channel_max_abs(const Tensor3& t) {
  Grid2 g(t.height(), t.width());
  for (int y = 0; y < t.height(); ++y)
    for (int x = 0; x < t.width(); ++x) {
      double m = 0.0;
      for (int c = 0; c < t.channels(); ++c) m = std::max(m, std::abs(t.at(y, x, c)));
      g.at(y, x) = m;
    }
  return g;
}

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= std::numeric_limits<double>::min());
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) return 0;
  // Rejection sampling for an unbiased draw.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return static_cast<std::size_t>(v % n);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  auto splitmix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  return splitmix(splitmix(splitmix(a) ^ b) ^ c);
}

}  // namespace xai

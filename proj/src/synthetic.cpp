#include <algorithm>
#include <cmath>
#include <cstdio>

#include "xaikit/error.hpp"
#include "xaikit/trainer.hpp"

namespace fs = std::filesystem;

namespace xai {

namespace {

constexpr const char* kShapeNames[] = {"disk", "square", "cross", "ring"};

bool inside(int shape, double dx, double dy, double r) {
  const double d = std::hypot(dx, dy);
  switch (shape) {
    case 0: return d <= r;
    case 1: return std::abs(dx) <= r && std::abs(dy) <= r;
    case 2:
      return (std::abs(dx) <= 0.3 * r && std::abs(dy) <= r) ||
             (std::abs(dy) <= 0.3 * r && std::abs(dx) <= r);
    default: return d <= r && d >= 0.6 * r;
  }
}

}  // namespace

SyntheticSet make_synthetic_shapes(int n_per_class, int n_classes, int image_size,
                                   std::uint64_t seed) {
  if (n_classes < 2 || n_classes > 4) fail(ErrorKind::Input, "synthetic shapes: 2..4 classes");
  if (image_size < 16) fail(ErrorKind::Input, "synthetic shapes: image_size must be >= 16");
  if (n_per_class < 1) fail(ErrorKind::Input, "synthetic shapes: n_per_class must be >= 1");

  SyntheticSet set;
  for (int c = 0; c < n_classes; ++c) set.class_names.emplace_back(kShapeNames[c]);
  const int S = image_size;
  const int total = n_per_class * n_classes;
  for (int i = 0; i < total; ++i) {
    const int cls = i % n_classes;
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i), 0x5a9e));
    const double bg = rng.uniform(0.0, 0.3);
    double color[3];
    for (double& v : color) v = rng.uniform(0.6, 1.0);
    const double cx = rng.uniform(0.35, 0.65) * S, cy = rng.uniform(0.35, 0.65) * S;
    const double r = rng.uniform(0.18, 0.3) * S;

    Tensor3 img(S, S, 3);
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        const bool on = inside(cls, x + 0.5 - cx, y + 0.5 - cy, r);
        for (int c = 0; c < 3; ++c) {
          const double v = (on ? color[c] : bg) + 0.05 * rng.normal();
          img.at(y, x, c) = std::clamp(v, 0.0, 1.0);
        }
      }
    set.data.images.push_back(std::move(img));
    set.data.labels.push_back(cls);
    char id[64];
    std::snprintf(id, sizeof id, "%s/%s_%04d.png", kShapeNames[cls], kShapeNames[cls], i / n_classes);
    set.data.ids.emplace_back(id);
  }
  return set;
}

void write_synthetic_dataset(const SyntheticSet& set, const fs::path& root) {
  std::error_code ec;
  for (const auto& name : set.class_names) {
    fs::create_directories(root / name, ec);
    if (ec) fail(ErrorKind::Io, "cannot create " + (root / name).string());
  }
  for (std::size_t i = 0; i < set.data.size(); ++i) {
    save_image(root / set.data.ids[i], set.data.images[i]);
  }
}

}  // namespace xai

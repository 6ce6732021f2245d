#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

#include "xaikit/error.hpp"
#include "xaikit/explainers.hpp"

namespace xai {

namespace {

struct Center {
  double y, x;
  std::vector<double> color;
};

// Labels every 4-connected component; returns component id per pixel.
std::vector<int> components(const std::vector<int>& labels, int H, int W, int& count) {
  std::vector<int> comp(labels.size(), -1);
  count = 0;
  std::vector<int> stack;
  for (int start = 0; start < H * W; ++start) {
    if (comp[start] >= 0) continue;
    comp[start] = count;
    stack.push_back(start);
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      const int y = p / W, x = p % W;
      const int nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& n : nb) {
        if (n[0] < 0 || n[0] >= H || n[1] < 0 || n[1] >= W) continue;
        const int q = n[0] * W + n[1];
        if (comp[q] < 0 && labels[q] == labels[p]) {
          comp[q] = count;
          stack.push_back(q);
        }
      }
    }
    ++count;
  }
  return comp;
}

}  // namespace

SegmentMask segment_image(const Tensor3& image, int n_segments, std::uint64_t seed,
                          const SlicOptions& options) {
  const int H = image.height(), W = image.width(), C = image.channels();
  const int N = H * W;
  if (n_segments < 1) fail(ErrorKind::Input, "n_segments must be >= 1");
  if (n_segments > N) fail(ErrorKind::Input, "n_segments exceeds pixel count");
  if (!image.all_finite()) fail(ErrorKind::Input, "image contains non-finite values");

  SegmentMask mask;
  mask.height = H;
  mask.width = W;
  if (n_segments == 1) {
    mask.n_segments = 1;
    mask.labels.assign(static_cast<std::size_t>(N), 0);
    return mask;
  }

  // Grid of initial centers: rows x cols close to n_segments with cells of
  // roughly the image aspect ratio.
  int rows = std::max(1, static_cast<int>(std::lround(std::sqrt(n_segments * double(H) / W))));
  rows = std::min(rows, n_segments);
  int cols = std::max(1, (n_segments + rows - 1) / rows);
  while (rows * cols < n_segments) ++cols;
  const double cell_h = double(H) / rows, cell_w = double(W) / cols;
  const double step = std::sqrt(double(N) / n_segments);

  Rng rng(seed);
  std::vector<Center> centers;
  for (int r = 0; r < rows && static_cast<int>(centers.size()) < n_segments; ++r) {
    for (int c = 0; c < cols && static_cast<int>(centers.size()) < n_segments; ++c) {
      // Seeded jitter within the central half of each cell.
      const double cy = (r + 0.5 + 0.25 * rng.uniform(-1, 1)) * cell_h;
      const double cx = (c + 0.5 + 0.25 * rng.uniform(-1, 1)) * cell_w;
      const int py = std::clamp(static_cast<int>(cy), 0, H - 1);
      const int px = std::clamp(static_cast<int>(cx), 0, W - 1);
      Center ctr{cy, cx, std::vector<double>(static_cast<std::size_t>(C))};
      for (int k = 0; k < C; ++k) ctr.color[k] = image.at(py, px, k);
      centers.push_back(std::move(ctr));
    }
  }
  const int K = static_cast<int>(centers.size());

  // Color range normalizes the compactness trade-off across input scalings.
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : image.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double color_scale = hi > lo ? 1.0 / (hi - lo) : 1.0;
  const double spatial_w = options.compactness / 10.0 / step;

  std::vector<int> labels(static_cast<std::size_t>(N), 0);
  std::vector<double> dist(static_cast<std::size_t>(N));
  const int window = static_cast<int>(std::ceil(2 * std::max(cell_h, cell_w)));
  for (int it = 0; it < std::max(1, options.iterations); ++it) {
    std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    for (int k = 0; k < K; ++k) {
      const Center& ct = centers[k];
      const int y0 = std::max(0, static_cast<int>(ct.y) - window);
      const int y1 = std::min(H - 1, static_cast<int>(ct.y) + window);
      const int x0 = std::max(0, static_cast<int>(ct.x) - window);
      const int x1 = std::min(W - 1, static_cast<int>(ct.x) + window);
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          double dc = 0;
          for (int c = 0; c < C; ++c) {
            const double d = (image.at(y, x, c) - ct.color[c]) * color_scale;
            dc += d * d;
          }
          const double dy = (y + 0.5 - ct.y) * spatial_w, dx = (x + 0.5 - ct.x) * spatial_w;
          const double d = dc + dy * dy + dx * dx;
          const std::size_t p = static_cast<std::size_t>(y) * W + x;
          if (d < dist[p]) {
            dist[p] = d;
            labels[p] = k;
          }
        }
    }
    // Pixels outside every window fall back to the nearest center spatially.
    for (int p = 0; p < N; ++p) {
      if (std::isfinite(dist[p])) continue;
      const int y = p / W, x = p % W;
      double best = std::numeric_limits<double>::infinity();
      for (int k = 0; k < K; ++k) {
        const double d = std::hypot(y + 0.5 - centers[k].y, x + 0.5 - centers[k].x);
        if (d < best) {
          best = d;
          labels[p] = k;
        }
      }
    }
    std::vector<Center> acc(static_cast<std::size_t>(K),
                            Center{0, 0, std::vector<double>(static_cast<std::size_t>(C), 0.0)});
    std::vector<int> count(static_cast<std::size_t>(K), 0);
    for (int p = 0; p < N; ++p) {
      const int k = labels[p];
      const int y = p / W, x = p % W;
      acc[k].y += y + 0.5;
      acc[k].x += x + 0.5;
      for (int c = 0; c < C; ++c) acc[k].color[c] += image.at(y, x, c);
      ++count[k];
    }
    for (int k = 0; k < K; ++k) {
      if (count[k] == 0) continue;
      centers[k].y = acc[k].y / count[k];
      centers[k].x = acc[k].x / count[k];
      for (int c = 0; c < C; ++c) centers[k].color[c] = acc[k].color[c] / count[k];
    }
  }

  // Connectivity: each label keeps its largest component; stray fragments
  // merge into the neighboring segment they share the longest border with.
  int ncomp = 0;
  std::vector<int> comp = components(labels, H, W, ncomp);
  std::vector<int> comp_size(static_cast<std::size_t>(ncomp), 0), comp_label(static_cast<std::size_t>(ncomp));
  for (int p = 0; p < N; ++p) {
    ++comp_size[comp[p]];
    comp_label[comp[p]] = labels[p];
  }
  std::vector<int> keeper(static_cast<std::size_t>(K), -1);
  for (int c = 0; c < ncomp; ++c) {
    int& kc = keeper[comp_label[c]];
    if (kc < 0 || comp_size[c] > comp_size[kc]) kc = c;
  }
  bool changed = true;
  while (changed) {
    changed = false;
    for (int c = 0; c < ncomp; ++c) {
      if (keeper[comp_label[c]] == c) continue;
      // Border counts with neighboring labels.
      std::vector<int> border(static_cast<std::size_t>(K), 0);
      for (int p = 0; p < N; ++p) {
        if (comp[p] != c) continue;
        const int y = p / W, x = p % W;
        const int nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
        for (const auto& n : nb) {
          if (n[0] < 0 || n[0] >= H || n[1] < 0 || n[1] >= W) continue;
          const int q = n[0] * W + n[1];
          if (comp[q] != c) ++border[labels[q]];
        }
      }
      const int target = static_cast<int>(std::max_element(border.begin(), border.end()) - border.begin());
      if (border[target] == 0) continue;
      for (int p = 0; p < N; ++p) {
        if (comp[p] == c) labels[p] = target;
      }
      changed = true;
    }
    if (changed) {
      comp = components(labels, H, W, ncomp);
      comp_size.assign(static_cast<std::size_t>(ncomp), 0);
      comp_label.assign(static_cast<std::size_t>(ncomp), 0);
      for (int p = 0; p < N; ++p) {
        ++comp_size[comp[p]];
        comp_label[comp[p]] = labels[p];
      }
      keeper.assign(static_cast<std::size_t>(K), -1);
      for (int c = 0; c < ncomp; ++c) {
        int& kc = keeper[comp_label[c]];
        if (kc < 0 || comp_size[c] > comp_size[kc]) kc = c;
      }
    }
  }

  // Compact relabel in order of first appearance (row-major).
  std::vector<int> remap(static_cast<std::size_t>(K), -1);
  int next = 0;
  mask.labels.resize(static_cast<std::size_t>(N));
  for (int p = 0; p < N; ++p) {
    int& r = remap[labels[p]];
    if (r < 0) r = next++;
    mask.labels[p] = r;
  }
  mask.n_segments = next;
  return mask;
}

}  // namespace xai

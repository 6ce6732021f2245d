#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xaikit/classifier.hpp"
#include "xaikit/tensor.hpp"

namespace xai {

/// Per-pixel relevance scores aligned to the input's spatial grid.
struct AttributionMap {
  Grid2 scores;
  std::string method;
  int class_idx = 0;
  std::map<std::string, double> meta;
};

/// Partition of the pixel grid into `n_segments` non-empty labeled regions.
struct SegmentMask {
  int height = 0;
  int width = 0;
  int n_segments = 0;
  std::vector<int> labels;  // row-major

  int at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  /// Throws an input error unless labels cover [0, n_segments) with no gaps.
  void validate() const;
  std::vector<std::size_t> segment_sizes() const;
};

/// Builds a mask from explicit labels and validates it.
SegmentMask make_mask(int height, int width, std::vector<int> labels);

/// How pixels of absent segments (or non-preserved pixels) are replaced.
struct FillPolicy {
  enum class Kind { Mean, Blur, Zero, Constant };
  Kind kind = Kind::Mean;
  /// Mean: per-channel dataset mean (falls back to the image's own channel
  /// mean when empty). Constant: one value per channel, or a single value
  /// broadcast to all channels.
  std::vector<double> values;
  double blur_sigma = 4.0;
};

FillPolicy parse_fill_policy(const std::string& kind, std::vector<double> values = {});
std::string to_string(FillPolicy::Kind kind);

/// Image of replacement values with the same shape as `image`.
Tensor3 fill_image(const Tensor3& image, const FillPolicy& fill);

/// Composes `image` where `keep` is true and `fill` elsewhere (spatial mask).
Tensor3 compose(const Tensor3& image, const Tensor3& fill, const std::vector<bool>& keep_pixel);

// ---------------------------------------------------------------------------
// Gradient methods

/// Channel-max of |d logit / d input|.
AttributionMap saliency(const Classifier& model, const Tensor3& image, int class_idx);

struct IgOptions {
  Tensor3 baseline;  // empty: all zeros
  int steps = 50;
};

/// Straight-line path integral of gradients (midpoint Riemann sum), before the
/// channel reduction.
Tensor3 integrated_gradients_full(const Classifier& model, const Tensor3& image, int class_idx,
                                  const IgOptions& options = {});
/// Channel-summed integrated gradients.
AttributionMap integrated_gradients(const Classifier& model, const Tensor3& image,
                                    int class_idx, const IgOptions& options = {});

struct GradCamResult {
  AttributionMap map;          // upsampled, max-normalized
  Grid2 layer_map;             // ReLU(sum_k w_k A_k) at layer resolution
  std::vector<double> weights;  // per-channel spatial mean of gradients
};

/// Gradient-weighted class activation map. An empty layer picks the last
/// convolutional layer.
GradCamResult grad_cam_full(const Classifier& model, const Tensor3& image, int class_idx,
                            const std::string& layer = {});
AttributionMap grad_cam(const Classifier& model, const Tensor3& image, int class_idx,
                        const std::string& layer = {});

// ---------------------------------------------------------------------------
// Superpixel methods

struct SlicOptions {
  double compactness = 10.0;
  int iterations = 10;
};

/// SLIC-style clustering on (color, position); enforces connected segments.
SegmentMask segment_image(const Tensor3& image, int n_segments, std::uint64_t seed,
                          const SlicOptions& options = {});

/// Weighted ridge-regularized linear surrogate over binary presence vectors.
struct SurrogateFit {
  std::vector<double> weights;
  double intercept = 0.0;
  double r_squared = 0.0;
  double kernel_width = 0.25;
  int n_samples = 0;
};

/// Binary presence samples (rows) and their model responses.
struct PerturbationSet {
  std::vector<std::vector<std::uint8_t>> presence;
  std::vector<double> responses;
};

/// Fits the surrogate. Sample weights are exp(-d^2 / width^2) with d the
/// cosine distance between the presence row and the all-present vector.
SurrogateFit fit_surrogate(const PerturbationSet& samples, double kernel_width, double ridge);

struct LimeOptions {
  int n_samples = 1000;
  double kernel_width = 0.25;
  double ridge = 1.0;
  FillPolicy fill;
  std::uint64_t seed = 0;
  /// Use every one of the 2^n coalitions instead of random sampling.
  bool enumerate = false;
};

struct LimeResult {
  AttributionMap map;
  SurrogateFit fit;
};

LimeResult lime_image(const Classifier& model, const Tensor3& image, int class_idx,
                      const SegmentMask& mask, const LimeOptions& options = {});

/// Coalition value function: presence flags -> model output.
using CoalitionGame = std::function<double(const std::vector<bool>&)>;

struct ShapleyEstimate {
  std::vector<double> phi;
  double base_value = 0.0;  // all absent
  double full_value = 0.0;  // all present
  bool exact = false;
  int evaluations = 0;
};

constexpr int kShapExactMaxPlayers = 12;

/// Default coalition budget for `players` features (2*M + 2048).
int default_shap_samples(int players);

/// Kernel SHAP: constrained weighted least squares over coalitions. All
/// coalitions are enumerated (exact Shapley values) when players <= 12 and
/// n_samples >= 2^players - 2; otherwise coalitions are sampled by the
/// kernel's size distribution with complement pairing.
ShapleyEstimate kernel_shap(const CoalitionGame& game, int players, int n_samples,
                            std::uint64_t seed);

struct ShapOptions {
  int n_samples = 0;  // 0: default_shap_samples(n_segments)
  FillPolicy fill;
  std::uint64_t seed = 0;
};

struct ShapResult {
  AttributionMap map;
  ShapleyEstimate values;
};

ShapResult kernel_shap_image(const Classifier& model, const Tensor3& image, int class_idx,
                             const SegmentMask& mask, const ShapOptions& options = {});

// ---------------------------------------------------------------------------
// Rule-based propagation

struct LrpResult {
  AttributionMap map;
  /// Total relevance at the input of each layer, from the last layer down;
  /// the first entry is the output relevance (the logit).
  std::vector<std::pair<std::string, double>> layer_totals;
  Tensor3 input_relevance;
};

/// Relevance absorbed by the stabilizer grows linearly with epsilon.
constexpr double kLrpDefaultEpsilon = 1e-9;

/// Epsilon-stabilized relevance propagation from the class logit to the
/// input. Supports conv, dense, ReLU and average pooling.
LrpResult lrp_epsilon_full(const Classifier& model, const Tensor3& image, int class_idx,
                           double epsilon);
AttributionMap lrp_epsilon(const Classifier& model, const Tensor3& image, int class_idx,
                           double epsilon);

// ---------------------------------------------------------------------------
// Activation maximization

struct AmOptions {
  int steps = 200;
  double step_size = 0.1;
  double l2_penalty = 1e-4;
  std::uint64_t seed = 0;
  double init_std = 0.1;
  double clip_lo = -3.0;
  double clip_hi = 3.0;
};

struct AmResult {
  Tensor3 image;
  std::vector<double> activation_trace;  // steps + 1 entries
};

/// Projected gradient ascent on unit(x) - l2 * |x|^2 from seeded noise.
AmResult activation_maximization(const Classifier& model, const UnitRef& unit,
                                 const AmOptions& options = {});

// ---------------------------------------------------------------------------
// Individual conditional expectation

using RowPredictor = std::function<double(std::span<const double>)>;

struct IceCurveSet {
  std::vector<double> grid;
  std::vector<std::vector<double>> curves;
  int feature_index = 0;
};

IceCurveSet ice_curves(const RowPredictor& predictor,
                       const std::vector<std::vector<double>>& rows, int feature_index,
                       const std::vector<double>& grid);

}  // namespace xai

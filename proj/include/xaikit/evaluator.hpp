#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "xaikit/classifier.hpp"
#include "xaikit/explainers.hpp"

namespace xai {

struct FidelityResult {
  double f = 1.0;
  double c_original = 0.0;
  double c_adversarial = 0.0;
  double q_preserved = 1.0;
  int predicted_class = 0;
};

struct TimingStats {
  double mean_seconds = 0.0;
  double std_seconds = 0.0;
  int n = 0;
  int warmup_excluded = 0;
  std::vector<double> durations;  // timed calls only
};

/// Pixel indices ordered by attribution, highest first; ties by row-major index.
std::vector<std::size_t> rank_pixels(const Grid2& attribution);

/// Number of pixels kept for fraction `q` of `n` pixels (floor, tolerant of
/// binary representation error).
std::size_t fraction_count(double q, std::size_t n);

/// Keeps the top `q_preserved` fraction of pixels by attribution and replaces
/// all others with the fill.
Tensor3 preserve_perturb(const Tensor3& image, const Grid2& attribution, double q_preserved,
                         const FillPolicy& fill);

/// Replaces the top `q_removed` fraction of pixels by attribution with the fill.
Tensor3 delete_perturb(const Tensor3& image, const Grid2& attribution, double q_removed,
                       const FillPolicy& fill);

/// F = C_a / C_o where C_o is the top softmax probability on the original
/// image and C_a the same class's probability on the preserve-perturbed image,
/// clamped to [0, C_o].
FidelityResult fidelity_score(const Classifier& model, const Tensor3& image,
                              const Grid2& attribution, double q_preserved,
                              const FillPolicy& fill);

/// Mean and sample (n - 1) standard deviation.
double mean_of(std::span<const double> v);
double sample_std(std::span<const double> v);

TimingStats timing_from_durations(std::vector<double> durations, int warmup_excluded);

using Clock = std::function<double()>;  // monotonic seconds
Clock steady_clock_seconds();

using TimedCall = std::function<void(const Classifier&, const Tensor3&)>;

/// Times one call per image; the first `warmup` calls are made but not timed.
TimingStats time_explainer(const TimedCall& explainer, const Classifier& model,
                           const std::vector<Tensor3>& images, int warmup,
                           const Clock& clock = steady_clock_seconds());

// ---------------------------------------------------------------------------
// Method registry

struct MethodSpec {
  std::string method;
  nlohmann::json params = nlohmann::json::object();
};

/// Canonical method identifier; accepts common aliases (ig, gradcam, shap, lrp).
std::string canonical_method(const std::string& name);
std::vector<std::string> known_methods();

/// Produces an attribution map for (model, image, class) with a per-image seed.
using Explainer =
    std::function<AttributionMap(const Classifier&, const Tensor3&, int, std::uint64_t)>;

/// Validates parameters eagerly (unknown method -> lookup error, bad params
/// -> input error). `default_fill` applies to LIME/SHAP unless overridden.
Explainer make_explainer(const MethodSpec& spec, const FillPolicy& default_fill);

// ---------------------------------------------------------------------------
// Cells

struct EvalConfig {
  double q_preserved = 0.2;
  FillPolicy fill;
  int sample_size = 100;
  int warmup = 1;
  std::uint64_t seed = 0;
};

struct EvalImage {
  std::string id;
  Tensor3 image;
};

struct ImageLog {
  std::string image_id, method, model, dataset;
  double c_original = 0.0, c_adversarial = 0.0, fidelity = 0.0, seconds = 0.0;
  std::string status = "ok";
};

struct EvalRecord {
  std::string method, model_name, dataset_name;
  double fidelity_mean = 0.0;
  double fidelity_std = 0.0;
  TimingStats timing;
  int n_images = 0;
  int n_failed = 0;
};

struct CellResult {
  EvalRecord record;
  std::vector<ImageLog> logs;
  std::vector<AttributionMap> maps;  // successful images, in order
};

/// Runs the explainer on every image (serially), computing fidelity and
/// wall-clock time per image. Failures are logged per image and excluded;
/// more than half failing raises a cell error.
CellResult evaluate_cell(const Classifier& model, const std::vector<EvalImage>& images,
                         const MethodSpec& method, const EvalConfig& config,
                         const std::string& model_name, const std::string& dataset_name,
                         const Clock& clock = steady_clock_seconds());

/// Recomputes an EvalRecord's statistics from per-image logs.
EvalRecord record_from_logs(const std::vector<ImageLog>& logs, int warmup_excluded = 0);

void write_image_logs_csv(const std::filesystem::path& path, const std::vector<ImageLog>& logs);
std::vector<ImageLog> read_image_logs_csv(const std::filesystem::path& path);

nlohmann::json to_json(const EvalRecord& r);
EvalRecord eval_record_from_json(const nlohmann::json& j);

}  // namespace xai

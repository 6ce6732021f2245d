#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "xaikit/data.hpp"
#include "xaikit/evaluator.hpp"
#include "xaikit/metrics.hpp"
#include "xaikit/trainer.hpp"

namespace xai {

constexpr const char* kVersion = "0.1.0";
constexpr int kExperimentSchemaVersion = 1;
/// Environment variable that relocates relative output directories.
constexpr const char* kOutputRootEnv = "XAIKIT_OUTPUT_ROOT";

struct DatasetConfig {
  std::string name;
  std::string kind = "directory";  // "directory" | "synthetic"
  std::string root;                // directory datasets; optional for synthetic
  std::string split_policy = "fresh_70_10_20";
  std::uint64_t seed = 0;
  // synthetic generator
  int n_per_class = 200;
  int n_classes = 3;
  int image_size = 32;
  std::optional<PreprocessSpec> preprocess;  // default depends on kind

  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct ModelConfig {
  std::string name;
  std::string architecture = "micro_net";  // ignored when checkpoint is set
  std::string checkpoint;
  std::uint64_t seed = 0;
  TrainConfig train;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ExplainerConfig {
  std::string name;  // defaults to the canonical method id
  std::string method;
  nlohmann::json params = nlohmann::json::object();

  friend bool operator==(const ExplainerConfig&, const ExplainerConfig&) = default;
};

struct EvaluatorConfig {
  double q_preserved = 0.2;
  std::string fill = "mean";
  std::vector<double> fill_values;  // constant fill, or explicit mean
  int sample_size = 100;
  int warmup = 1;
  std::uint64_t seed = 0;

  friend bool operator==(const EvaluatorConfig&, const EvaluatorConfig&) = default;
};

struct OutputConfig {
  std::string dir = "xaikit_out";
  std::vector<std::string> formats{"csv", "json"};
  int overlays_per_cell = 2;
  double overlay_alpha = 0.5;
  std::string colormap = "jet";

  friend bool operator==(const OutputConfig&, const OutputConfig&) = default;
};

struct ExperimentConfig {
  std::vector<DatasetConfig> datasets;
  std::vector<ModelConfig> models;
  std::vector<ExplainerConfig> explainers;
  EvaluatorConfig evaluator;
  OutputConfig outputs;
  int workers = 1;
  /// Relative paths are resolved against this directory (not serialized).
  std::filesystem::path base_dir;

  friend bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
    return a.datasets == b.datasets && a.models == b.models && a.explainers == b.explainers &&
           a.evaluator == b.evaluator && a.outputs == b.outputs && a.workers == b.workers;
  }
};

nlohmann::json to_json(const ExperimentConfig& c);
/// Parses and checks structure; unknown keys raise a configuration error.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Checks semantic validity: unique names, known methods and parameters,
/// resolvable paths. Throws a configuration error on the first problem.
void validate_config(const ExperimentConfig& c);

/// SHA-256 (hex) of the canonical JSON of everything except outputs and runtime.
std::string config_hash(const ExperimentConfig& c);
std::string sha256_hex(const std::string& text);

/// Output directory after applying the environment override.
std::filesystem::path resolve_output_dir(const ExperimentConfig& c);

struct CellFilter {
  std::string dataset, model, method;
  bool matches(const std::string& d, const std::string& m, const std::string& x) const;
};
/// Parses "dataset=a,model=b,method=c" (any subset).
CellFilter parse_cell_filter(const std::string& text);

struct RunOptions {
  bool resume = false;
  CellFilter only;
  bool verbose = true;
};

struct CellFailure {
  std::string dataset, model, method, stage, message;
};

struct RunSummary {
  std::filesystem::path bundle_dir;
  std::string config_hash;
  int cells_completed = 0;
  int cells_skipped = 0;  // reused on resume
  std::vector<CellFailure> failures;
  double wall_seconds = 0.0;

  int exit_code() const { return failures.empty() ? 0 : 2; }
};

/// Trains or loads every model, scores it on the test split, evaluates every
/// explainer cell and writes the report bundle. Per-cell failures are
/// recorded; configuration errors are raised before any compute.
RunSummary run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

// ---------------------------------------------------------------------------
// Bundle artifacts

/// Fraction as a percentage with 2 decimals, rounding half to even on the
/// shortest decimal representation of the value (0.98775 -> "98.78").
std::string format_percent(double fraction);

struct MetricsRow {
  std::string dataset, model;
  double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;  // fractions
};

/// Rebuilds tables/metrics.* and tables/evaluation.* from the bundle's model
/// and cell directories. Returns the written paths.
std::vector<std::filesystem::path> export_tables(const std::filesystem::path& bundle,
                                                 const std::vector<std::string>& formats);

/// Per-dataset fidelity and time bar charts under `plots/`.
std::vector<std::filesystem::path> write_plots(const std::filesystem::path& bundle);

std::vector<MetricsRow> collect_metrics(const std::filesystem::path& bundle);
std::vector<EvalRecord> collect_records(const std::filesystem::path& bundle);

/// Min-max normalized attribution, colormapped and alpha-blended onto a [0,1]
/// image. An all-zero map leaves the image untouched; a constant non-zero map
/// renders at mid-scale. Returns a 3-channel [0,1] image of the same size.
Tensor3 render_overlay(const Tensor3& image01, const Grid2& attribution, double alpha,
                       const std::string& colormap = "jet");
/// Same, for a model-space image that is first de-normalized with `spec`.
Tensor3 render_overlay(const Tensor3& image, const PreprocessSpec& spec,
                       const Grid2& attribution, double alpha,
                       const std::string& colormap = "jet");

bool known_colormap(const std::string& name);

enum class PlotQuantity { Fidelity, Time };

/// Grouped bar chart (one group per method, one bar per model) with +-1
/// sample-std error bars. Writes `path` and `path + ".values.json"`; returns
/// the sidecar content.
nlohmann::json plot_bars(const std::vector<EvalRecord>& records, PlotQuantity quantity,
                         const std::filesystem::path& path);

/// Annotated confusion-matrix image plus `.values.json` sidecar.
nlohmann::json plot_confusion_matrix(const ConfusionMatrix& cm, const std::filesystem::path& path);

nlohmann::json to_json(const ConfusionMatrix& cm);
nlohmann::json to_json(const MetricsReport& m);

}  // namespace xai

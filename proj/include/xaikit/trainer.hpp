#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "xaikit/data.hpp"
#include "xaikit/network.hpp"

namespace xai {

struct EarlyStop {
  int patience = 5;
  std::string metric = "val_acc";  // or "val_loss"

  friend bool operator==(const EarlyStop&, const EarlyStop&) = default;
};

/// Defaults are the fine-tuning configuration used for the published results:
/// batch 32, 100 epochs, Adam at lr 0.001, cross-entropy loss.
struct TrainConfig {
  int batch_size = 32;
  int epochs = 100;
  double learning_rate = 0.001;
  std::string optimizer = "adam";
  std::string loss = "cross_entropy";
  std::uint64_t seed = 0;
  std::optional<EarlyStop> early_stop;
  /// Reinitialize the final dense layer when its width differs from the
  /// dataset's class count.
  bool replace_head = false;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct LabeledSet {
  std::vector<Tensor3> images;
  std::vector<int> labels;
  std::vector<std::string> ids;  // optional; same length as images when set

  std::size_t size() const { return images.size(); }
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<double> val_acc;
  int best_epoch = 0;  // 0-based index into the vectors
  double initial_batch_loss = 0.0;

  friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

struct TrainResult {
  Sequential model;
  TrainHistory history;
};

struct EvalSummary {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<int> predictions;
};

/// Mean cross-entropy, accuracy and argmax predictions over a set.
EvalSummary evaluate_model(const Classifier& model, const LabeledSet& data);

using EpochCallback = std::function<void(int epoch, const TrainHistory&)>;

/// Full fine-tuning with minibatch Adam on mean cross-entropy. Returns the
/// weights from the epoch with the highest validation accuracy (earliest on
/// ties).
TrainResult train_classifier(const Sequential& model, const LabeledSet& train,
                             const LabeledSet& val, const TrainConfig& config,
                             int n_classes = 0, const EpochCallback& on_epoch = {});

void write_history_csv(const std::filesystem::path& path, const TrainHistory& h);

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticSet {
  std::vector<std::string> class_names;
  LabeledSet data;  // [0,1] RGB images
};

/// Geometric shapes (disk, square, cross, ring) at random positions and
/// scales with pixel noise, balanced across classes, class-interleaved order.
SyntheticSet make_synthetic_shapes(int n_per_class, int n_classes, int image_size,
                                   std::uint64_t seed);

/// Writes `root/<class>/<class>_<nnnn>.png`.
void write_synthetic_dataset(const SyntheticSet& set, const std::filesystem::path& root);

// ---------------------------------------------------------------------------
// Checkpoints

constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  Sequential model{Shape3{}};
  std::vector<std::string> class_names;
  PreprocessSpec preprocess;
  std::vector<double> fill_mean;  // per-channel training mean, normalized space
  std::string config_hash;
  nlohmann::json metadata = nlohmann::json::object();
};

nlohmann::json architecture_to_json(const Sequential& model);
Sequential architecture_from_json(const nlohmann::json& j);

/// JSON checkpoint (architecture, weights, preprocessing, config hash);
/// written atomically.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Writes `text` to `path` via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_file(const std::filesystem::path& path);

}  // namespace xai

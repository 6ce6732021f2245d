#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace xai {

/// counts[t][p]: samples with true class t predicted as p.
struct ConfusionMatrix {
  std::vector<std::vector<std::int64_t>> counts;
  std::vector<std::string> class_names;

  int n_classes() const { return static_cast<int>(counts.size()); }
  std::int64_t total() const;
  std::int64_t trace() const;
};

ConfusionMatrix confusion_matrix(std::span<const int> y_true, std::span<const int> y_pred,
                                 int n_classes, std::vector<std::string> class_names = {});

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t support = 0;
};

enum class Averaging { Weighted, Macro };

struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  Averaging averaging = Averaging::Weighted;
  std::vector<ClassMetrics> per_class;
  /// Human-readable notes about 0/0 cases that were defined as 0.
  std::vector<std::string> warnings;
};

/// One-vs-rest precision/recall/F1 per class and their support-weighted (or
/// macro) averages; accuracy is trace / total.
MetricsReport classification_metrics(const ConfusionMatrix& cm,
                                     Averaging averaging = Averaging::Weighted);

}  // namespace xai

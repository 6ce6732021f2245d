#include "xaikit/metrics.hpp"

#include "xaikit/error.hpp"

namespace xai {

std::int64_t ConfusionMatrix::total() const {
  std::int64_t t = 0;
  for (const auto& row : counts)
    for (auto v : row) t += v;
  return t;
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t t = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) t += counts[i][i];
  return t;
}

ConfusionMatrix confusion_matrix(std::span<const int> y_true, std::span<const int> y_pred,
                                 int n_classes, std::vector<std::string> class_names) {
  if (n_classes < 1) fail(ErrorKind::Input, "n_classes must be positive");
  if (y_true.size() != y_pred.size()) {
    fail(ErrorKind::Input, "y_true and y_pred differ in length (" +
                               std::to_string(y_true.size()) + " vs " +
                               std::to_string(y_pred.size()) + ")");
  }
  if (!class_names.empty() && static_cast<int>(class_names.size()) != n_classes) {
    fail(ErrorKind::Input, "class_names length does not match n_classes");
  }
  ConfusionMatrix cm;
  cm.counts.assign(static_cast<std::size_t>(n_classes),
                   std::vector<std::int64_t>(static_cast<std::size_t>(n_classes), 0));
  for (std::size_t k = 0; k < y_true.size(); ++k) {
    const int t = y_true[k], p = y_pred[k];
    if (t < 0 || t >= n_classes || p < 0 || p >= n_classes) {
      fail(ErrorKind::Input, "label out of range at position " + std::to_string(k));
    }
    ++cm.counts[t][p];
  }
  if (class_names.empty()) {
    for (int i = 0; i < n_classes; ++i) class_names.push_back(std::to_string(i));
  }
  cm.class_names = std::move(class_names);
  return cm;
}

MetricsReport classification_metrics(const ConfusionMatrix& cm, Averaging averaging) {
  const int n = cm.n_classes();
  const std::int64_t total = cm.total();
  if (n == 0 || total <= 0) fail(ErrorKind::Input, "confusion matrix is empty");
  for (const auto& row : cm.counts) {
    if (static_cast<int>(row.size()) != n) fail(ErrorKind::Input, "confusion matrix not square");
    for (auto v : row) {
      if (v < 0) fail(ErrorKind::Input, "confusion matrix has negative counts");
    }
  }
  auto name = [&](int c) {
    return c < static_cast<int>(cm.class_names.size()) ? cm.class_names[c] : std::to_string(c);
  };

  MetricsReport r;
  r.averaging = averaging;
  r.per_class.resize(static_cast<std::size_t>(n));
  for (int c = 0; c < n; ++c) {
    std::int64_t tp = cm.counts[c][c], col = 0, row = 0;
    for (int k = 0; k < n; ++k) {
      col += cm.counts[k][c];
      row += cm.counts[c][k];
    }
    ClassMetrics& m = r.per_class[c];
    m.support = row;
    if (col > 0) {
      m.precision = double(tp) / double(col);
    } else {
      r.warnings.push_back("precision of class '" + name(c) + "' is 0/0 (never predicted); set to 0");
    }
    if (row > 0) {
      m.recall = double(tp) / double(row);
    } else {
      r.warnings.push_back("class '" + name(c) + "' has zero support; metrics set to 0");
    }
    m.f1 = (m.precision + m.recall) > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall)
                                        : 0.0;
  }
  for (int c = 0; c < n; ++c) {
    const double w = averaging == Averaging::Weighted
                         ? double(r.per_class[c].support) / double(total)
                         : 1.0 / n;
    r.precision += w * r.per_class[c].precision;
    r.recall += w * r.per_class[c].recall;
    r.f1 += w * r.per_class[c].f1;
  }
  r.accuracy = double(cm.trace()) / double(total);
  return r;
}

}  // namespace xai

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>

#include "xaikit/error.hpp"
#include "xaikit/explainers.hpp"

namespace xai {

namespace {

double log_binomial(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

// Shapley kernel weight of one coalition of size s among M players.
double kernel_weight(int M, int s) {
  return std::exp(std::log(M - 1.0) - log_binomial(M, s) - std::log(double(s)) -
                  std::log(double(M - s)));
}

struct Coalitions {
  std::vector<std::vector<bool>> z;
  std::vector<double> weight;
};

Coalitions enumerate_all(int M) {
  Coalitions c;
  const std::uint64_t total = std::uint64_t{1} << M;
  for (std::uint64_t mask = 1; mask + 1 < total; ++mask) {
    std::vector<bool> z(static_cast<std::size_t>(M));
    int s = 0;
    for (int i = 0; i < M; ++i) {
      z[i] = (mask >> i) & 1u;
      s += z[i];
    }
    c.z.push_back(std::move(z));
    c.weight.push_back(kernel_weight(M, s));
  }
  return c;
}

Coalitions sample_paired(int M, int n_samples, std::uint64_t seed) {
  // Size distribution proportional to the total kernel mass per size.
  std::vector<double> size_p(static_cast<std::size_t>(M), 0.0);
  double total = 0.0;
  for (int s = 1; s < M; ++s) total += size_p[s] = (M - 1.0) / (double(s) * (M - s));
  Rng rng(seed);
  std::map<std::vector<bool>, double> counts;
  std::vector<int> order(static_cast<std::size_t>(M));
  int drawn = 0;
  while (drawn < n_samples) {
    double u = rng.uniform() * total;
    int s = 1;
    for (; s < M - 1; ++s) {
      if (u < size_p[s]) break;
      u -= size_p[s];
    }
    for (int i = 0; i < M; ++i) order[i] = i;
    // Partial Fisher-Yates picks `s` players uniformly.
    std::vector<bool> z(static_cast<std::size_t>(M), false);
    for (int i = 0; i < s; ++i) {
      const int j = i + static_cast<int>(rng.below(static_cast<std::size_t>(M - i)));
      std::swap(order[i], order[j]);
      z[order[i]] = true;
    }
    std::vector<bool> comp(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) comp[i] = !z[i];
    counts[z] += 1.0;
    ++drawn;
    if (drawn < n_samples) {
      counts[comp] += 1.0;
      ++drawn;
    }
  }
  Coalitions c;
  for (auto& [z, w] : counts) {
    c.z.push_back(z);
    c.weight.push_back(w);
  }
  return c;
}

}  // namespace

int default_shap_samples(int players) { return 2 * players + 2048; }

ShapleyEstimate kernel_shap(const CoalitionGame& game, int players, int n_samples,
                            std::uint64_t seed) {
  const int M = players;
  if (M < 2) fail(ErrorKind::Input, "kernel SHAP needs at least 2 features");
  if (n_samples < 2 * M) {
    fail(ErrorKind::Input, "kernel SHAP needs n_samples >= 2 * n_features (" +
                               std::to_string(2 * M) + ")");
  }
  ShapleyEstimate est;
  est.base_value = game(std::vector<bool>(static_cast<std::size_t>(M), false));
  est.full_value = game(std::vector<bool>(static_cast<std::size_t>(M), true));
  const double delta = est.full_value - est.base_value;

  const bool exact = M <= kShapExactMaxPlayers &&
                     static_cast<double>(n_samples) >= std::ldexp(1.0, M) - 2.0;
  const Coalitions co = exact ? enumerate_all(M) : sample_paired(M, n_samples, seed);
  est.exact = exact;
  est.evaluations = static_cast<int>(co.z.size()) + 2;

  // Eliminate the last player through the efficiency constraint.
  const int P = M - 1;
  const auto rows = static_cast<Eigen::Index>(co.z.size());
  Eigen::MatrixXd X(rows, P);
  Eigen::VectorXd y(rows), w(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& z = co.z[static_cast<std::size_t>(r)];
    const double zl = z[P] ? 1.0 : 0.0;
    for (int i = 0; i < P; ++i) X(r, i) = (z[i] ? 1.0 : 0.0) - zl;
    y(r) = game(z) - est.base_value - zl * delta;
    w(r) = co.weight[static_cast<std::size_t>(r)];
  }
  Eigen::MatrixXd A = X.transpose() * w.asDiagonal() * X;
  Eigen::VectorXd b = X.transpose() * (w.asDiagonal() * y);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
  if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-12) {
    // Some players never vary in the sample; a tiny ridge keeps them at zero.
    A.diagonal().array() += 1e-9 * std::max(1.0, A.trace() / P);
    ldlt.compute(A);
  }
  const Eigen::VectorXd phi = ldlt.solve(b);
  est.phi.assign(static_cast<std::size_t>(M), 0.0);
  double partial = 0.0;
  for (int i = 0; i < P; ++i) {
    est.phi[i] = phi(i);
    partial += phi(i);
  }
  est.phi[P] = delta - partial;
  for (double v : est.phi) {
    if (!std::isfinite(v)) fail(ErrorKind::Fit, "kernel SHAP produced non-finite values");
  }
  return est;
}

ShapResult kernel_shap_image(const Classifier& model, const Tensor3& image, int class_idx,
                             const SegmentMask& mask, const ShapOptions& options) {
  check_input(model, image);
  check_class(model, class_idx);
  mask.validate();
  if (mask.height != image.height() || mask.width != image.width()) {
    fail(ErrorKind::Input, "segment mask does not match image shape");
  }
  const Tensor3 fill = fill_image(image, options.fill);
  if (fill.shape() != image.shape()) fail(ErrorKind::Input, "fill image shape mismatch");
  const int M = mask.n_segments;
  const int n = options.n_samples > 0 ? options.n_samples : default_shap_samples(M);

  std::vector<bool> keep(mask.labels.size());
  const CoalitionGame game = [&](const std::vector<bool>& z) {
    for (std::size_t p = 0; p < keep.size(); ++p) keep[p] = z[static_cast<std::size_t>(mask.labels[p])];
    return logits(model, compose(image, fill, keep))[static_cast<std::size_t>(class_idx)];
  };
  ShapResult r;
  r.values = kernel_shap(game, M, n, options.seed);
  Grid2 scores(image.height(), image.width());
  for (std::size_t p = 0; p < mask.labels.size(); ++p) {
    scores[p] = r.values.phi[static_cast<std::size_t>(mask.labels[p])];
  }
  r.map = {std::move(scores), "kernel_shap", class_idx,
           {{"n_segments", M}, {"n_samples", n}, {"exact", r.values.exact ? 1.0 : 0.0}}};
  return r;
}

}  // namespace xai

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "xaikit/error.hpp"
#include "xaikit/explainers.hpp"

namespace xai {

SurrogateFit fit_surrogate(const PerturbationSet& samples, double kernel_width, double ridge) {
  if (!(kernel_width > 0.0)) fail(ErrorKind::Input, "kernel width must be positive");
  if (ridge < 0.0) fail(ErrorKind::Input, "ridge penalty must be non-negative");
  const std::size_t n = samples.presence.size();
  if (n < 2 || samples.responses.size() != n) {
    fail(ErrorKind::Fit, "surrogate fit needs >= 2 samples with one response each");
  }
  const std::size_t M = samples.presence.front().size();
  if (M == 0) fail(ErrorKind::Fit, "surrogate fit needs at least one feature");

  Eigen::MatrixXd X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(M));
  Eigen::VectorXd y(static_cast<Eigen::Index>(n)), w(static_cast<Eigen::Index>(n));
  for (std::size_t r = 0; r < n; ++r) {
    const auto& z = samples.presence[r];
    if (z.size() != M) fail(ErrorKind::Fit, "presence rows have inconsistent lengths");
    int on = 0;
    for (std::size_t j = 0; j < M; ++j) {
      X(r, j) = z[j] ? 1.0 : 0.0;
      on += z[j] ? 1 : 0;
    }
    // Cosine distance to the all-present vector.
    const double d = on == 0 ? 1.0 : 1.0 - std::sqrt(double(on) / double(M));
    w(r) = std::exp(-d * d / (kernel_width * kernel_width));
    y(r) = samples.responses[r];
    if (!std::isfinite(y(r))) fail(ErrorKind::Fit, "non-finite model response in sample set");
  }
  const double wsum = w.sum();
  if (!(wsum > 0.0) || !std::isfinite(wsum)) {
    fail(ErrorKind::Fit, "all sample weights vanished (kernel width " +
                             std::to_string(kernel_width) + " too small?)");
  }
  const Eigen::RowVectorXd xbar = (w.transpose() * X) / wsum;
  const double ybar = w.dot(y) / wsum;
  const Eigen::MatrixXd Xc = X.rowwise() - xbar;
  const Eigen::VectorXd yc = y.array() - ybar;
  if ((Xc.array().abs() > 0).count() == 0) {
    fail(ErrorKind::Fit, "degenerate design matrix: every presence sample is identical (" +
                             std::to_string(n) + " samples, " + std::to_string(M) + " segments)");
  }
  Eigen::MatrixXd A = Xc.transpose() * w.asDiagonal() * Xc;
  A.diagonal().array() += ridge;
  const Eigen::VectorXd b = Xc.transpose() * (w.asDiagonal() * yc);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
  if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-14) {
    fail(ErrorKind::Fit, "degenerate design matrix: normal equations are singular (rcond " +
                             std::to_string(ldlt.rcond()) + "); add ridge or samples");
  }
  const Eigen::VectorXd coef = ldlt.solve(b);

  SurrogateFit fit;
  fit.weights.assign(coef.data(), coef.data() + coef.size());
  fit.intercept = ybar - xbar.dot(coef);
  fit.kernel_width = kernel_width;
  fit.n_samples = static_cast<int>(n);
  const Eigen::VectorXd resid = yc - Xc * coef;
  const double ss_res = (w.array() * resid.array().square()).sum();
  const double ss_tot = (w.array() * yc.array().square()).sum();
  fit.r_squared = ss_tot > 1e-300 ? std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0) : 1.0;
  for (double v : fit.weights) {
    if (!std::isfinite(v)) fail(ErrorKind::Fit, "surrogate produced non-finite weights");
  }
  return fit;
}

LimeResult lime_image(const Classifier& model, const Tensor3& image, int class_idx,
                      const SegmentMask& mask, const LimeOptions& options) {
  check_input(model, image);
  check_class(model, class_idx);
  mask.validate();
  if (mask.height != image.height() || mask.width != image.width()) {
    fail(ErrorKind::Input, "segment mask does not match image shape");
  }
  const int M = mask.n_segments;
  PerturbationSet set;
  if (options.enumerate) {
    if (M > 20) fail(ErrorKind::Input, "coalition enumeration limited to 20 segments");
    for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << M); ++bits) {
      std::vector<std::uint8_t> z(static_cast<std::size_t>(M));
      for (int i = 0; i < M; ++i) z[i] = static_cast<std::uint8_t>((bits >> i) & 1u);
      set.presence.push_back(std::move(z));
    }
  } else {
    if (options.n_samples < M + 1) {
      fail(ErrorKind::Input, "LIME needs n_samples >= n_segments + 1 (" + std::to_string(M + 1) +
                                 ")");
    }
    Rng rng(options.seed);
    set.presence.emplace_back(static_cast<std::size_t>(M), std::uint8_t{1});
    for (int s = 1; s < options.n_samples; ++s) {
      std::vector<std::uint8_t> z(static_cast<std::size_t>(M));
      for (auto& v : z) v = rng.coin() ? 1 : 0;
      set.presence.push_back(std::move(z));
    }
  }
  const Tensor3 fill = fill_image(image, options.fill);
  std::vector<bool> keep(mask.labels.size());
  set.responses.reserve(set.presence.size());
  for (const auto& z : set.presence) {
    for (std::size_t p = 0; p < keep.size(); ++p) keep[p] = z[static_cast<std::size_t>(mask.labels[p])] != 0;
    set.responses.push_back(
        logits(model, compose(image, fill, keep))[static_cast<std::size_t>(class_idx)]);
  }

  LimeResult r;
  r.fit = fit_surrogate(set, options.kernel_width, options.ridge);
  Grid2 scores(image.height(), image.width());
  for (std::size_t p = 0; p < mask.labels.size(); ++p) {
    scores[p] = r.fit.weights[static_cast<std::size_t>(mask.labels[p])];
  }
  r.map = {std::move(scores), "lime", class_idx,
           {{"n_segments", M},
            {"n_samples", static_cast<double>(set.presence.size())},
            {"kernel_width", options.kernel_width},
            {"r_squared", r.fit.r_squared}}};
  return r;
}

}  // namespace xai

#include <doctest.h>

#include <cmath>
#include <set>

#include "oracles.hpp"
#include "support.hpp"
#include "xaikit/evaluator.hpp"
#include "xaikit/explainers.hpp"

using namespace xai;
using namespace xai::test;

namespace {

const Shape3 kMicro{32, 32, 3};

Sequential zero_net() {
  Sequential net = build_micro_net(7, 4);
  net.fill_parameters(0.0);
  return net;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST_SUITE("saliency") {
  TEST_CASE("linear model: channel max of |w|") {
    const Shape3 s{6, 5, 3};
    const Sequential m = linear_model(s, 2, 3);
    const auto& fc = dynamic_cast<const Dense&>(m.layer(0));
    const AttributionMap map = saliency(m, random_image(s, 1), 1);
    REQUIRE(map.scores.height() == 6);
    REQUIRE(map.scores.width() == 5);
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 5; ++x) {
        double best = 0;
        for (int c = 0; c < 3; ++c) best = std::max(best, std::abs(fc.weight(1, (y * 5 + x) * 3 + c)));
        CHECK(map.scores.at(y, x) == best);
      }
  }

  TEST_CASE("constant model gives an all-zero map") {
    const AttributionMap map = saliency(zero_net(), random_image(kMicro, 2), 0);
    for (double v : map.scores.data()) CHECK(v == 0.0);
  }

  TEST_CASE("micro-net map matches finite-difference gradients") {
    const Sequential net = build_micro_net(7, 4);
    const Tensor3 img = random_image(kMicro, 31);
    const int cls = 3;
    const AttributionMap map = saliency(net, img, cls);
    auto f = [&](const Tensor3& x) { return net.logits(x)[cls]; };
    Rng rng(5);
    int checked = 0;
    double worst = 0;
    while (checked < 100) {
      const int y = static_cast<int>(rng.below(32)), x = static_cast<int>(rng.below(32));
      double fd = 0;
      bool kink = false;
      for (int c = 0; c < 3 && !kink; ++c) {
        const std::size_t i = (static_cast<std::size_t>(y) * 32 + x) * 3 + c;
        kink = straddles_kink(f, img, i, 1e-3);
        fd = std::max(fd, std::abs(central_diff(f, img, i, 1e-3)));
      }
      if (kink) continue;
      worst = std::max(worst, rel_err(map.scores.at(y, x), fd));
      ++checked;
    }
    CHECK(worst <= 1e-3);
  }
}

TEST_SUITE("integrated gradients") {
  TEST_CASE("linear logit with zero baseline gives w * x for any step count") {
    const Shape3 s{4, 4, 3};
    const Sequential m = linear_model(s, 3, 9);
    const auto& fc = dynamic_cast<const Dense&>(m.layer(0));
    const Tensor3 img = random_image(s, 4);
    for (int steps : {1, 7, 50}) {
      const Tensor3 full = integrated_gradients_full(m, img, 0, {Tensor3{}, steps});
      for (std::size_t i = 0; i < img.size(); ++i) {
        CHECK(full[i] == doctest::Approx(fc.weight(0, static_cast<int>(i)) * img[i]).epsilon(1e-12));
      }
      const AttributionMap map = integrated_gradients(m, img, 0, {Tensor3{}, steps});
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
          double want = 0;
          for (int c = 0; c < 3; ++c) {
            const int i = (y * 4 + x) * 3 + c;
            want += fc.weight(0, i) * img[static_cast<std::size_t>(i)];
          }
          CHECK(map.scores.at(y, x) == doctest::Approx(want).epsilon(1e-12));
        }
    }
  }

  TEST_CASE("baseline equal to the image gives exactly zero") {
    const Sequential net = build_micro_net(7, 4);
    const Tensor3 img = random_image(kMicro, 8);
    const AttributionMap map = integrated_gradients(net, img, 1, {img, 20});
    for (double v : map.scores.data()) CHECK(v == 0.0);
  }

  TEST_CASE("completeness on the micro-net with 200 steps") {
    const Sequential net = build_micro_net(7, 4);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Tensor3 img = random_image(kMicro, 100 + seed);
      const int cls = static_cast<int>(seed % 4);
      const AttributionMap map = integrated_gradients(net, img, cls, {Tensor3{}, 200});
      const double delta = net.logits(img)[cls] - net.logits(Tensor3(kMicro))[cls];
      CHECK(std::abs(map.scores.sum() - delta) <= 0.01 * std::abs(delta));
    }
  }

  TEST_CASE("argument errors") {
    const Sequential net = build_micro_net(7, 4);
    const Tensor3 img = random_image(kMicro, 8);
    CHECK(error_kind([&] { integrated_gradients(net, img, 0, {Tensor3(8, 8, 3), 10}); }) ==
          ErrorKind::Input);
    CHECK(error_kind([&] { integrated_gradients(net, img, 0, {Tensor3{}, 0}); }) == ErrorKind::Input);
  }
}

TEST_SUITE("grad-cam") {
  // conv (1x1, identity, 1 channel) -> dense with every weight = s.
  Sequential one_channel(double s) {
    Sequential m({6, 6, 1});
    m.emplace<Conv2d>("conv", 1, 1, 1, false).weight(0, 0, 0, 0) = 1.0;
    auto& d = m.emplace<Dense>("fc", 36, 2, false);
    for (double& w : d.weights()) w = s;
    return m;
  }

  TEST_CASE("single channel with uniform positive gradient reproduces the activation") {
    const Sequential m = one_channel(0.5);
    Tensor3 img = random_image({6, 6, 1}, 3);
    for (double& v : img.values()) v = std::abs(v);
    const GradCamResult r = grad_cam_full(m, img, 0);
    const double peak = *std::max_element(img.values().begin(), img.values().end());
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) CHECK(r.map.scores.at(y, x) == doctest::Approx(img.at(y, x, 0) / peak));
  }

  TEST_CASE("negative weighted sum clamps to zero") {
    const Sequential m = one_channel(-0.5);
    Tensor3 img = random_image({6, 6, 1}, 3);
    for (double& v : img.values()) v = std::abs(v);
    const AttributionMap map = grad_cam(m, img, 0);
    for (double v : map.scores.data()) CHECK(v == 0.0);
  }

  TEST_CASE("micro-net matches explicit-loop weights and weighted sum") {
    const Sequential net = build_micro_net(7, 4);
    const Tensor3 img = random_image(kMicro, 12);
    const int cls = 2;
    const GradCamResult r = grad_cam_full(net, img, cls);

    Vol a = conv_oracle(to_vol(img), dynamic_cast<const Conv2d&>(net.layer(0)));
    relu_oracle(a);
    const Vol A = conv_oracle(a, dynamic_cast<const Conv2d&>(net.layer(2)));
    const auto& fc = dynamic_cast<const Dense&>(net.layer(5));
    const int K = 8, H = 32, W = 32;
    std::vector<double> omega(K, 0.0);
    for (int k = 0; k < K; ++k)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          if (A[k][y][x] <= 0) continue;
          omega[k] += fc.weight(cls, ((y / 2) * (W / 2) + x / 2) * K + k) / 4.0 / (H * W);
        }
    for (int k = 0; k < K; ++k) CHECK(std::abs(r.weights[k] - omega[k]) <= 1e-5);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double s = 0;
        for (int k = 0; k < K; ++k) s += omega[k] * A[k][y][x];
        CHECK(std::abs(r.layer_map.at(y, x) - std::max(s, 0.0)) <= 1e-5);
      }
  }

  TEST_CASE("maps are non-negative, at most one, and input-sized") {
    const Sequential net = build_micro_net(4, 3);
    for (std::uint64_t s = 0; s < 10; ++s) {
      const AttributionMap map = grad_cam(net, random_image(kMicro, s, 2.0), static_cast<int>(s % 3));
      CHECK(map.scores.height() == 32);
      CHECK(map.scores.width() == 32);
      for (double v : map.scores.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
  }

  TEST_CASE("non-convolutional layer is rejected") {
    const Sequential net = build_micro_net(7, 4);
    const Tensor3 img = random_image(kMicro, 1);
    CHECK(error_kind([&] { grad_cam(net, img, 0, "relu2"); }) == ErrorKind::UnsupportedLayer);
    CHECK(error_kind([&] { grad_cam(net, img, 0, "nope"); }) == ErrorKind::Lookup);
    CHECK(error_kind([&] { grad_cam(linear_model(kMicro, 2, 1), img, 0); }) == ErrorKind::UnsupportedLayer);
  }
}

TEST_SUITE("segmentation") {
  TEST_CASE("one segment covers everything") {
    const SegmentMask m = segment_image(random_image({20, 20, 3}, 1), 1, 0);
    CHECK(m.n_segments == 1);
    for (int l : m.labels) CHECK(l == 0);
  }

  TEST_CASE("uniform image splits into compact covering segments") {
    const SegmentMask m = segment_image(Tensor3(32, 32, 3, 0.5), 4, 3);
    CHECK(m.n_segments == 4);
    CHECK_NOTHROW(m.validate());
    const auto sizes = m.segment_sizes();
    for (std::size_t s : sizes) {
      CHECK(s >= 32 * 32 / 8);
      CHECK(s <= 32 * 32 / 2);
    }
    // Bounding boxes of compact quarters stay well inside the image.
    for (int s = 0; s < 4; ++s) {
      int y0 = 32, y1 = -1, x0 = 32, x1 = -1;
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
          if (m.at(y, x) == s) {
            y0 = std::min(y0, y), y1 = std::max(y1, y), x0 = std::min(x0, x), x1 = std::max(x1, x);
          }
      CHECK((y1 - y0 + 1) * (x1 - x0 + 1) <= 2 * static_cast<int>(sizes[s]));
    }
  }

  TEST_CASE("deterministic for fixed inputs") {
    const Tensor3 img = random_image({24, 24, 3}, 6);
    CHECK(segment_image(img, 9, 2).labels == segment_image(img, 9, 2).labels);
  }

  TEST_CASE("argument errors") {
    const Tensor3 img = random_image({4, 4, 3}, 6);
    CHECK(error_kind([&] { segment_image(img, 0, 0); }) == ErrorKind::Input);
    CHECK(error_kind([&] { segment_image(img, 17, 0); }) == ErrorKind::Input);
    CHECK(error_kind([] { make_mask(2, 2, {0, 0, 2, 2}); }) == ErrorKind::Input);
  }
}

TEST_SUITE("activation maximization") {
  TEST_CASE("zero steps returns the seeded start image") {
    const Sequential net = build_micro_net(7, 4);
    AmOptions o;
    o.steps = 0;
    o.seed = 42;
    const AmResult a = activation_maximization(net, {"", 1}, o);
    Rng rng(42);
    for (std::size_t i = 0; i < a.image.size(); ++i) CHECK(a.image[i] == o.init_std * rng.normal());
    CHECK(a.activation_trace.size() == 1);
  }

  TEST_CASE("linear logit ascent aligns with w and never decreases") {
    const Shape3 s{8, 8, 3};
    const Sequential m = linear_model(s, 2, 17);
    AmOptions o;
    o.steps = 500;
    o.clip_lo = -1e3;  // keep the box inactive so the optimum is along w
    o.clip_hi = 1e3;
    const AmResult a = activation_maximization(m, {"", 0}, o);
    const auto& w = dynamic_cast<const Dense&>(m.layer(0)).weights();
    const std::vector<double> w0(w.begin(), w.begin() + static_cast<long>(s.size()));
    CHECK(cosine(a.image.values(), w0) >= 0.99);
    CHECK(a.activation_trace.back() >= a.activation_trace.front());
    for (std::size_t t = 1; t < a.activation_trace.size(); ++t)
      CHECK(a.activation_trace[t] >= a.activation_trace[t - 1]);
  }

  TEST_CASE("result stays inside the clip box") {
    const Sequential net = build_micro_net(7, 4);
    AmOptions o;
    o.steps = 50;
    o.step_size = 5.0;
    const AmResult a = activation_maximization(net, {"conv2", 3}, o);
    for (double v : a.image.values()) {
      CHECK(v >= o.clip_lo);
      CHECK(v <= o.clip_hi);
    }
  }
}

TEST_SUITE("ice") {
  TEST_CASE("additive predictor gives parallel unit-slope curves") {
    const RowPredictor f = [](std::span<const double> r) { return r[0] + r[1]; };
    const std::vector<std::vector<double>> rows{{5, 1}, {-2, 3}, {0, 0}};
    const IceCurveSet s = ice_curves(f, rows, 0, {0, 1, 2});
    REQUIRE(s.curves.size() == 3);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double c = rows[i][1];
      CHECK(s.curves[i] == std::vector<double>{c, c + 1, c + 2});
    }
  }

  TEST_CASE("constant predictor gives flat curves") {
    const IceCurveSet s = ice_curves([](std::span<const double>) { return 4.0; }, {{1, 2}, {3, 4}}, 1,
                                     {-1, 0, 1, 5});
    for (const auto& c : s.curves)
      for (double v : c) CHECK(v == 4.0);
  }

  TEST_CASE("spot values equal direct predictor calls") {
    const RowPredictor f = [](std::span<const double> r) { return std::sin(r[0]) * r[1] + r[2] * r[2]; };
    Rng rng(3);
    std::vector<std::vector<double>> rows(6, std::vector<double>(3));
    for (auto& r : rows)
      for (double& v : r) v = rng.normal();
    const std::vector<double> grid{-2, -0.5, 0.25, 3};
    const IceCurveSet s = ice_curves(f, rows, 1, grid);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto r = rows[i];
      r[1] = grid.back();
      CHECK(s.curves[i].back() == f(r));
      r[1] = grid.front();
      CHECK(s.curves[i].front() == f(r));
    }
  }

  TEST_CASE("argument errors") {
    const RowPredictor f = [](std::span<const double> r) { return r[0]; };
    CHECK(error_kind([&] { ice_curves(f, {}, 0, {0, 1}); }) == ErrorKind::Input);
    CHECK(error_kind([&] { ice_curves(f, {{1}}, 0, {1, 1}); }) == ErrorKind::Input);
    CHECK(error_kind([&] { ice_curves(f, {{1}}, 2, {0, 1}); }) == ErrorKind::Input);
  }
}

TEST_SUITE("maps") {
  TEST_CASE("every method yields finite input-sized maps on fuzzed inputs") {
    const Sequential net = build_micro_net(7, 3);
    const FillPolicy fill = parse_fill_policy("zero");
    for (const std::string& method : known_methods()) {
      if (method == "activation_maximization" || method == "ice") continue;
      const Explainer ex = make_explainer({method, {}}, fill);
      for (std::uint64_t s = 0; s < 3; ++s) {
        CAPTURE(method);
        const Tensor3 img = random_image(kMicro, 500 + s, 1.0 + static_cast<double>(s));
        const AttributionMap map = ex(net, img, static_cast<int>(s % 3), s);
        CHECK(map.scores.height() == 32);
        CHECK(map.scores.width() == 32);
        CHECK(map.scores.all_finite());
      }
    }
  }

  TEST_CASE("method aliases and unknown methods") {
    CHECK(canonical_method("ig") == canonical_method("integrated_gradients"));
    CHECK(canonical_method("gradcam") == "grad_cam");
    CHECK(error_kind([] { make_explainer({"nope", {}}, {}); }) == ErrorKind::Lookup);
    CHECK(error_kind([] { make_explainer({"ig", {{"steps", 0}}}, {}); }) == ErrorKind::Input);
    const auto names = known_methods();
    const std::set<std::string> known(names.begin(), names.end());
    for (const char* m : {"saliency", "grad_cam", "kernel_shap", "lime"}) CHECK(known.count(m) == 1);
  }
}

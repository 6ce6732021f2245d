#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "xaikit/evaluator.hpp"

using namespace xai;
using namespace xai::test;

namespace {

Grid2 random_grid(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Grid2 g(h, w);
  for (double& v : g.data()) v = rng.normal();
  return g;
}

/// Clock that advances by the given steps on successive reads: reads come in
/// (start, stop) pairs, so steps {1, 2, 3} produce durations 1, 2, 3.
Clock scripted_clock(std::vector<double> durations) {
  auto state = std::make_shared<std::pair<std::size_t, double>>(0, 0.0);
  return [state, durations]() {
    const std::size_t read = state->first++;
    if (read % 2 == 1) state->second += durations[(read / 2) % durations.size()];
    return state->second;
  };
}

FunctionClassifier constant_model(Shape3 s) {
  return FunctionClassifier(s, 3, [](const Tensor3&) { return std::vector<double>{0.2, 1.5, -0.4}; });
}

}  // namespace

TEST_SUITE("perturbation") {
  TEST_CASE("q = 1 keeps the image") {
    const Tensor3 img = random_image({10, 12, 3}, 1);
    CHECK(preserve_perturb(img, random_grid(10, 12, 2), 1.0, parse_fill_policy("zero")) == img);
  }

  TEST_CASE("tiny q replaces every pixel with the constant") {
    const Tensor3 img = random_image({10, 12, 3}, 1);
    const Tensor3 out = preserve_perturb(img, random_grid(10, 12, 2), 1e-4, parse_fill_policy("constant", {0.7}));
    for (double v : out.values()) CHECK(v == 0.7);
  }

  TEST_CASE("kept set equals the independently ranked top 20 percent") {
    const int h = 15, w = 20;
    const Tensor3 img = random_image({h, w, 2}, 3);
    Grid2 a = random_grid(h, w, 4);
    for (std::size_t i = 0; i < a.size(); i += 7) a[i] = 0.5;  // force ties
    const Tensor3 out = preserve_perturb(img, a, 0.2, parse_fill_policy("constant", {1e6}));
    const std::size_t n = a.size(), k = n / 5;
    std::size_t kept_count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      // Rank by counting: pixels strictly above, plus equal ones earlier in row-major order.
      std::size_t ahead = 0;
      for (std::size_t j = 0; j < n; ++j) ahead += a[j] > a[i] || (a[j] == a[i] && j < i);
      const bool expect_kept = ahead < k;
      const bool kept = out[2 * i] != 1e6;
      CHECK(kept == expect_kept);
      if (kept) {
        CHECK(out[2 * i] == img[2 * i]);
        CHECK(out[2 * i + 1] == img[2 * i + 1]);
      }
      kept_count += kept;
    }
    CHECK(kept_count == k);
  }

  TEST_CASE("deletion removes exactly the top fraction") {
    const Tensor3 img(8, 8, 1, 1.0);
    Grid2 a(8, 8);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<double>(i);
    const Tensor3 out = delete_perturb(img, a, 0.25, parse_fill_policy("zero"));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(out[i] == (i >= 48 ? 0.0 : 1.0));
  }

  TEST_CASE("monotone rescaling leaves the perturbation unchanged") {
    const Tensor3 img = random_image({16, 16, 3}, 5);
    const Grid2 a = random_grid(16, 16, 6);
    Grid2 b = a, c = a;
    for (double& v : b.data()) v = 3.0 * v + 1.0;
    for (double& v : c.data()) v = std::exp(v);
    const FillPolicy fill = parse_fill_policy("mean");
    for (double q : {0.1, 0.2, 0.5}) {
      const Tensor3 pa = preserve_perturb(img, a, q, fill);
      CHECK(preserve_perturb(img, b, q, fill) == pa);
      CHECK(preserve_perturb(img, c, q, fill) == pa);
    }
  }

  TEST_CASE("argument errors") {
    const Tensor3 img = random_image({8, 8, 3}, 1);
    const FillPolicy fill;
    CHECK(error_kind([&] { preserve_perturb(img, Grid2(8, 8), 0.0, fill); }) == ErrorKind::Input);
    CHECK(error_kind([&] { preserve_perturb(img, Grid2(8, 8), 1.5, fill); }) == ErrorKind::Input);
    CHECK(error_kind([&] { preserve_perturb(img, Grid2(4, 8), 0.5, fill); }) == ErrorKind::Input);
    CHECK(error_kind([] { parse_fill_policy("paint"); }) == ErrorKind::Input);
    CHECK(error_kind([] { parse_fill_policy("constant"); }) == ErrorKind::Input);
  }

  TEST_CASE("fill policies") {
    const Tensor3 img = random_image({6, 6, 3}, 2);
    const std::vector<double> mean{0.1, 0.2, 0.3};
    const Tensor3 m = fill_image(img, parse_fill_policy("mean", mean));
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x)
        for (int c = 0; c < 3; ++c) CHECK(m.at(y, x, c) == mean[static_cast<std::size_t>(c)]);
    const Tensor3 own = fill_image(img, parse_fill_policy("mean"));
    for (int c = 0; c < 3; ++c) {
      double s = 0;
      for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x) s += img.at(y, x, c);
      CHECK(own.at(3, 4, c) == doctest::Approx(s / 36));
    }
    CHECK(fill_image(img, parse_fill_policy("blur")).shape() == img.shape());
    CHECK(error_kind([&] { fill_image(img, parse_fill_policy("constant", {1, 2})); }) == ErrorKind::Input);
  }
}

TEST_SUITE("fidelity") {
  TEST_CASE("constant model scores exactly one") {
    const auto model = constant_model({8, 8, 3});
    for (std::uint64_t s = 0; s < 20; ++s) {
      const FidelityResult r =
          fidelity_score(model, random_image({8, 8, 3}, s), random_grid(8, 8, s + 1), 0.2, parse_fill_policy("zero"));
      CHECK(r.f == 1.0);
      CHECK(r.c_adversarial == r.c_original);
      CHECK(r.predicted_class == 1);
    }
  }

  TEST_CASE("confidence rising after perturbation is clamped") {
    // Class 0 confidence grows as the image darkens; the zero fill darkens it.
    FunctionClassifier model({8, 8, 1}, 2, [](const Tensor3& x) { return std::vector<double>{1.0 - x.sum() / 64, 0.0}; });
    const Tensor3 img(8, 8, 1, 0.5);
    const FidelityResult r = fidelity_score(model, img, random_grid(8, 8, 1), 0.2, parse_fill_policy("zero"));
    CHECK(r.predicted_class == 0);
    CHECK(r.f == 1.0);
    CHECK(r.c_adversarial == r.c_original);
  }

  TEST_CASE("scores stay in the unit interval on fuzzed pairs") {
    const Sequential net = build_micro_net(7, 4);
    for (std::uint64_t s = 0; s < 100; ++s) {
      const FidelityResult r = fidelity_score(net, random_image({32, 32, 3}, s, 1.0 + s % 3),
                                              random_grid(32, 32, 1000 + s), 0.05 + 0.009 * s,
                                              parse_fill_policy(s % 2 ? "mean" : "blur"));
      CHECK(r.f >= 0.0);
      CHECK(r.f <= 1.0);
    }
  }
}

TEST_SUITE("timing") {
  TEST_CASE("injected durations 1, 2, 3 give mean 2 and std 1") {
    const auto model = constant_model({4, 4, 1});
    const std::vector<Tensor3> images(3, Tensor3(4, 4, 1));
    const TimingStats t = time_explainer([](const Classifier&, const Tensor3&) {}, model, images, 0,
                                         scripted_clock({1, 2, 3}));
    CHECK(t.mean_seconds == 2.0);
    CHECK(t.std_seconds == 1.0);
    CHECK(t.n == 3);
    CHECK(t.durations == std::vector<double>{1, 2, 3});
  }

  TEST_CASE("warm-up calls run but are not timed") {
    const auto model = constant_model({4, 4, 1});
    const std::vector<Tensor3> images(4, Tensor3(4, 4, 1));
    int calls = 0;
    const TimingStats t = time_explainer([&](const Classifier&, const Tensor3&) { ++calls; }, model, images,
                                         3, scripted_clock({5}));
    CHECK(calls == 4);
    CHECK(t.n == 1);
    CHECK(t.warmup_excluded == 3);
    CHECK(t.mean_seconds == 5.0);
    CHECK(t.std_seconds == 0.0);
  }

  TEST_CASE("nothing left to time is an input error") {
    const auto model = constant_model({4, 4, 1});
    const auto noop = [](const Classifier&, const Tensor3&) {};
    CHECK(error_kind([&] { time_explainer(noop, model, {}, 0); }) == ErrorKind::Input);
    CHECK(error_kind([&] { time_explainer(noop, model, {Tensor3(4, 4, 1)}, 1); }) == ErrorKind::Input);
  }

  TEST_CASE("statistics recompute from the duration log") {
    Rng rng(3);
    std::vector<double> d(17);
    for (double& v : d) v = rng.uniform(0.01, 0.2);
    const TimingStats t = timing_from_durations(d, 1);
    CHECK(timing_from_durations(t.durations, 1).mean_seconds == t.mean_seconds);
    double m = 0;
    for (double v : d) m += v;
    m /= 17;
    double ss = 0;
    for (double v : d) ss += (v - m) * (v - m);
    CHECK(t.mean_seconds == doctest::Approx(m).epsilon(1e-14));
    CHECK(t.std_seconds == doctest::Approx(std::sqrt(ss / 16)).epsilon(1e-14));
  }
}

TEST_SUITE("cells") {
  std::vector<EvalImage> sample(int n, bool duplicate) {
    std::vector<EvalImage> v;
    for (int i = 0; i < n; ++i) {
      v.push_back({"img" + std::to_string(i), random_image({32, 32, 3}, duplicate ? 9 : 50 + i)});
    }
    return v;
  }

  TEST_CASE("single image gives zero spreads") {
    const Sequential net = build_micro_net(7, 3);
    EvalConfig cfg;
    cfg.warmup = 0;
    const CellResult r = evaluate_cell(net, sample(1, false), {"saliency", {}}, cfg, "m", "d");
    CHECK(r.record.n_images == 1);
    CHECK(r.record.fidelity_std == 0.0);
    CHECK(r.record.timing.std_seconds == 0.0);
    CHECK(r.maps.size() == 1);
  }

  TEST_CASE("duplicated image with a deterministic method has zero fidelity spread") {
    const Sequential net = build_micro_net(7, 3);
    const CellResult r = evaluate_cell(net, sample(10, true), {"grad_cam", {}}, {}, "m", "d");
    CHECK(r.record.n_images == 10);
    CHECK(r.record.fidelity_std == 0.0);
  }

  TEST_CASE("record means recompute from the per-image CSV") {
    const Sequential net = build_micro_net(7, 3);
    EvalConfig cfg;
    cfg.sample_size = 6;
    const CellResult r = evaluate_cell(net, sample(8, false), {"ig", {{"steps", 10}}}, cfg, "micro", "shapes");
    CHECK(r.logs.size() == 6);
    CHECK(r.record.method == "integrated_gradients");
    const auto dir = temp_dir("cell");
    write_image_logs_csv(dir / "per_image.csv", r.logs);
    const auto logs = read_image_logs_csv(dir / "per_image.csv");
    const EvalRecord again = record_from_logs(logs, cfg.warmup);
    CHECK(again.fidelity_mean == r.record.fidelity_mean);
    CHECK(again.fidelity_std == r.record.fidelity_std);
    CHECK(again.timing.mean_seconds == r.record.timing.mean_seconds);
    CHECK(again.timing.std_seconds == r.record.timing.std_seconds);

    std::vector<double> f;
    for (const auto& l : logs) f.push_back(l.fidelity);
    CHECK(again.fidelity_mean == mean_of(f));

    const EvalRecord back = eval_record_from_json(to_json(r.record));
    CHECK(back.fidelity_mean == r.record.fidelity_mean);
    CHECK(back.timing.durations == r.record.timing.durations);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("failing images are logged and excluded, majority failure is a cell error") {
    // Gradients are unavailable on a black-box model, so saliency always fails.
    const FunctionClassifier box({32, 32, 3}, 3, [](const Tensor3& x) { return std::vector<double>{x[0], 0, 0}; });
    CHECK(error_kind([&] { evaluate_cell(box, sample(4, false), {"saliency", {}}, {}, "m", "d"); }) ==
          ErrorKind::Cell);

    // One wrongly shaped image fails, the rest succeed.
    const Sequential net = build_micro_net(7, 3);
    auto images = sample(5, false);
    images[0].image = Tensor3(16, 16, 3);
    EvalConfig cfg;
    cfg.warmup = 0;
    const CellResult r = evaluate_cell(net, images, {"saliency", {}}, cfg, "m", "d");
    CHECK(r.record.n_failed == 1);
    CHECK(r.record.n_images == 4);
    CHECK(r.logs[0].status.rfind("failed", 0) == 0);
  }

  TEST_CASE("cells are deterministic given seeds") {
    const Sequential net = build_micro_net(7, 3);
    EvalConfig cfg;
    cfg.seed = 4;
    const MethodSpec m{"kernel_shap", {{"n_segments", 8}, {"n_samples", 64}}};
    const CellResult a = evaluate_cell(net, sample(3, false), m, cfg, "m", "d");
    const CellResult b = evaluate_cell(net, sample(3, false), m, cfg, "m", "d");
    CHECK(a.record.fidelity_mean == b.record.fidelity_mean);
    for (std::size_t i = 0; i < a.maps.size(); ++i) CHECK(a.maps[i].scores == b.maps[i].scores);
  }
}

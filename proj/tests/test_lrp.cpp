#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "xaikit/explainers.hpp"

using namespace xai;
using namespace xai::test;

namespace {

Sequential bias_free_micro_net(std::uint64_t seed) {
  MicroNetOptions o;
  o.bias = false;
  return build_micro_net(seed, 4, o);
}

}  // namespace

TEST_SUITE("lrp epsilon") {
  TEST_CASE("single dense layer: relevance proportional to w * x") {
    const Shape3 s{5, 5, 2};
    Sequential m(s);
    auto& d = m.emplace<Dense>("fc", 50, 2, false);
    Rng rng(4);
    for (double& w : d.weights()) w = rng.uniform(0.1, 1.0);
    Tensor3 img(s);
    for (double& v : img.values()) v = rng.uniform(0.1, 1.0);
    const LrpResult r = lrp_epsilon_full(m, img, 1, 1e-6);
    const double ratio = r.input_relevance[0] / (d.weight(1, 0) * img[0]);
    for (std::size_t i = 0; i < img.size(); ++i) {
      CHECK(r.input_relevance[i] == doctest::Approx(ratio * d.weight(1, static_cast<int>(i)) * img[i]).epsilon(1e-12));
    }
    CHECK(ratio == doctest::Approx(1.0).epsilon(1e-6));
  }

  TEST_CASE("zero input through a bias-free network gives zero relevance") {
    const AttributionMap map = lrp_epsilon(bias_free_micro_net(7), Tensor3(32, 32, 3), 0, 1e-6);
    for (double v : map.scores.data()) CHECK(v == 0.0);
  }

  TEST_CASE("bias-free micro-net conserves relevance at every layer") {
    const Sequential net = bias_free_micro_net(7);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Tensor3 img = random_image({32, 32, 3}, 300 + seed);
      const int cls = static_cast<int>(seed % 4);
      const LrpResult r = lrp_epsilon_full(net, img, cls, kLrpDefaultEpsilon);
      REQUIRE(r.layer_totals.size() == net.layer_count() + 1);
      const double out = r.layer_totals.front().second;
      CHECK(out == doctest::Approx(net.logits(img)[cls]));
      for (const auto& [name, total] : r.layer_totals) {
        CAPTURE(name);
        CHECK(std::abs(total - out) <= 1e-4 * std::abs(out));
      }
      CHECK(std::abs(r.input_relevance.sum() - out) <= 1e-4 * std::abs(out));
      CHECK(r.map.scores.sum() == doctest::Approx(r.input_relevance.sum()));
    }
  }

  TEST_CASE("unsupported layers are named") {
    Sequential m({8, 8, 1});
    m.emplace<Conv2d>("conv", 1, 2, 3);
    m.emplace<MaxPool2d>("maxpool", 2);
    m.emplace<Dense>("fc", 32, 2);
    try {
      lrp_epsilon(m, random_image({8, 8, 1}, 1), 0, 1e-6);
      FAIL("expected unsupported-layer error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::UnsupportedLayer);
      CHECK(std::string(e.what()).find("maxpool") != std::string::npos);
    }
    FunctionClassifier f({8, 8, 1}, 2, [](const Tensor3&) { return std::vector<double>{0, 1}; });
    CHECK(error_kind([&] { lrp_epsilon(f, Tensor3(8, 8, 1), 0, 1e-6); }) == ErrorKind::UnsupportedLayer);
    CHECK(error_kind([&] { lrp_epsilon(bias_free_micro_net(1), Tensor3(32, 32, 3), 0, 0.0); }) ==
          ErrorKind::Input);
  }
}

#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "xaikit/trainer.hpp"

using namespace xai;
using namespace xai::test;
namespace fs = std::filesystem;

namespace {

struct Splits {
  LabeledSet train, val;
};

Splits shapes(int n_per_class, int n_classes, std::uint64_t seed) {
  const SyntheticSet s = make_synthetic_shapes(n_per_class, n_classes, 32, seed);
  Splits out;
  for (std::size_t i = 0; i < s.data.size(); ++i) {
    LabeledSet& dst = i % 5 == 4 ? out.val : out.train;
    dst.images.push_back(s.data.images[i]);
    dst.labels.push_back(s.data.labels[i]);
  }
  return out;
}

double max_abs_diff(Sequential a, Sequential b) {
  double d = 0;
  auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t k = 0; k < pa.size(); ++k)
    for (std::size_t i = 0; i < pa[k].values.size(); ++i) d = std::max(d, std::abs(pa[k].values[i] - pb[k].values[i]));
  return d;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("zero learning rate is a fixed point") {
    const Splits s = shapes(10, 2, 1);
    const Sequential init = build_micro_net(3, 2);
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    const TrainResult r = train_classifier(init, s.train, s.val, cfg);
    CHECK(max_abs_diff(r.model, init) <= 1e-9);
    CHECK(r.history.train_loss.size() == 2);
  }

  TEST_CASE("linearly separable two-class set reaches 0.9 validation accuracy in five epochs") {
    // Dim versus bright noise images: the pixel sum separates the classes.
    Splits s;
    Rng rng(12);
    for (int i = 0; i < 200; ++i) {
      Tensor3 img(32, 32, 3);
      const int label = i % 2;
      for (double& v : img.values()) v = std::clamp((label ? 0.6 : 0.4) + 0.15 * rng.normal(), 0.0, 1.0);
      LabeledSet& dst = i % 5 == 4 ? s.val : s.train;
      dst.images.push_back(std::move(img));
      dst.labels.push_back(label);
    }
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.seed = 1;
    const TrainResult r = train_classifier(build_micro_net(1, 2), s.train, s.val, cfg);
    const double best = r.history.val_acc[static_cast<std::size_t>(r.history.best_epoch)];
    CHECK(best >= 0.9);
    CHECK(evaluate_model(r.model, s.val).accuracy == doctest::Approx(best));
    CHECK(r.history.train_loss.back() < r.history.initial_batch_loss);
  }

  TEST_CASE("two shape classes are learnable in five epochs") {
    const Splits s = shapes(500, 2, 2);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.learning_rate = 0.003;
    cfg.seed = 1;
    const TrainResult r = train_classifier(build_micro_net(1, 2), s.train, s.val, cfg);
    const double best = r.history.val_acc[static_cast<std::size_t>(r.history.best_epoch)];
    MESSAGE("best val accuracy " << best);
    CHECK(best >= 0.9);
  }

  TEST_CASE("same seed, same history") {
    const Splits s = shapes(15, 3, 3);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.seed = 9;
    const TrainResult a = train_classifier(build_micro_net(2, 3), s.train, s.val, cfg);
    const TrainResult b = train_classifier(build_micro_net(2, 3), s.train, s.val, cfg);
    CHECK(a.history == b.history);
    CHECK(max_abs_diff(a.model, b.model) == 0.0);
  }

  TEST_CASE("best epoch is the earliest with the highest validation accuracy") {
    const Splits s = shapes(15, 2, 4);
    TrainConfig cfg;
    cfg.epochs = 4;
    int calls = 0;
    const TrainResult r =
        train_classifier(build_micro_net(2, 2), s.train, s.val, cfg, 0, [&](int, const TrainHistory&) { ++calls; });
    CHECK(calls == 4);
    const auto& acc = r.history.val_acc;
    const auto it = std::max_element(acc.begin(), acc.end());
    CHECK(r.history.best_epoch == static_cast<int>(it - acc.begin()));
  }

  TEST_CASE("early stopping ends training after the patience runs out") {
    const Splits s = shapes(10, 2, 5);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.learning_rate = 0.0;
    cfg.early_stop = EarlyStop{2, "val_acc"};
    const TrainResult r = train_classifier(build_micro_net(2, 2), s.train, s.val, cfg);
    CHECK(r.history.val_acc.size() == 3);
  }

  TEST_CASE("class-count mismatch needs head replacement") {
    const Splits s = shapes(6, 3, 6);
    TrainConfig cfg;
    cfg.epochs = 1;
    CHECK(error_kind([&] { train_classifier(build_micro_net(2, 2), s.train, s.val, cfg, 3); }) ==
          ErrorKind::Config);
    cfg.replace_head = true;
    const TrainResult r = train_classifier(build_micro_net(2, 2), s.train, s.val, cfg, 3);
    CHECK(r.model.num_classes() == 3);
    cfg.optimizer = "sgd";
    CHECK(error_kind([&] { train_classifier(build_micro_net(2, 3), s.train, s.val, cfg); }) == ErrorKind::Config);
  }

  TEST_CASE("config JSON round trip") {
    TrainConfig c;
    c.epochs = 7;
    c.learning_rate = 0.0125;
    c.early_stop = EarlyStop{3, "val_loss"};
    CHECK(train_config_from_json(to_json(c)) == c);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("save and load reproduce predictions exactly") {
    const auto dir = temp_dir("ckpt");
    Checkpoint c;
    c.model = build_micro_net(11, 3);
    c.class_names = {"disk", "ring", "square"};
    c.preprocess = PreprocessSpec::identity(32);
    c.fill_mean = {0.1, 0.2, 0.3};
    c.config_hash = "abc";
    save_checkpoint(dir / "m.json", c);
    const Checkpoint d = load_checkpoint(dir / "m.json");
    CHECK(d.class_names == c.class_names);
    CHECK(d.preprocess == c.preprocess);
    CHECK(d.fill_mean == c.fill_mean);
    CHECK(d.config_hash == "abc");
    CHECK(d.model.layer_names() == c.model.layer_names());
    for (std::uint64_t s = 0; s < 3; ++s) {
      const Tensor3 img = random_image({32, 32, 3}, s);
      CHECK(d.model.logits(img) == c.model.logits(img));
    }
    CHECK_FALSE(fs::exists(dir / "m.json.tmp"));
    fs::remove_all(dir);
  }

  TEST_CASE("corrupt checkpoints are model errors") {
    const auto dir = temp_dir("badckpt");
    write_file_atomic(dir / "a.json", "{not json");
    write_file_atomic(dir / "b.json", R"({"format": "something-else"})");
    CHECK(error_kind([&] { load_checkpoint(dir / "a.json"); }) == ErrorKind::Model);
    CHECK(error_kind([&] { load_checkpoint(dir / "b.json"); }) == ErrorKind::Model);

    Checkpoint c;
    c.model = build_micro_net(1, 2);
    c.class_names = {"a", "b"};
    save_checkpoint(dir / "c.json", c);
    auto j = nlohmann::json::parse(read_file(dir / "c.json"));
    j["weights"].erase(j["weights"].begin());
    write_file_atomic(dir / "c.json", j.dump());
    CHECK(error_kind([&] { load_checkpoint(dir / "c.json"); }) == ErrorKind::Model);
    fs::remove_all(dir);
  }

  TEST_CASE("architecture JSON round trip") {
    const Sequential m = build_micro_net(1, 4);
    const Sequential n = architecture_from_json(architecture_to_json(m));
    CHECK(n.layer_names() == m.layer_names());
    CHECK(n.input_shape() == m.input_shape());
    CHECK(n.parameter_count() == m.parameter_count());
  }
}

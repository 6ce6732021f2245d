#include "xaikit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "xaikit/error.hpp"

namespace xai {

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j{{"batch_size", c.batch_size},
                   {"epochs", c.epochs},
                   {"learning_rate", c.learning_rate},
                   {"optimizer", c.optimizer},
                   {"loss", c.loss},
                   {"seed", c.seed},
                   {"replace_head", c.replace_head},
                   {"beta1", c.beta1},
                   {"beta2", c.beta2},
                   {"adam_epsilon", c.adam_epsilon}};
  if (c.early_stop) {
    j["early_stop"] = {{"patience", c.early_stop->patience}, {"metric", c.early_stop->metric}};
  } else {
    j["early_stop"] = nullptr;
  }
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.optimizer = j.value("optimizer", c.optimizer);
  c.loss = j.value("loss", c.loss);
  c.seed = j.value("seed", c.seed);
  c.replace_head = j.value("replace_head", c.replace_head);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
  if (j.contains("early_stop") && !j.at("early_stop").is_null()) {
    const auto& e = j.at("early_stop");
    c.early_stop = EarlyStop{e.value("patience", 5), e.value("metric", std::string("val_acc"))};
  }
  return c;
}

EvalSummary evaluate_model(const Classifier& model, const LabeledSet& data) {
  EvalSummary s;
  if (data.size() == 0) return s;
  double loss = 0.0;
  int correct = 0;
  s.predictions.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto p = softmax(model.logits(data.images[i]));
    const int y = data.labels[i];
    loss -= std::log(std::max(p[static_cast<std::size_t>(y)], 1e-300));
    const int pred = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    s.predictions.push_back(pred);
    correct += pred == y;
  }
  s.loss = loss / static_cast<double>(data.size());
  s.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return s;
}

namespace {

void check_set(const LabeledSet& s, int n_classes, const char* what) {
  if (s.size() == 0) fail(ErrorKind::Input, std::string(what) + " split is empty");
  if (s.labels.size() != s.images.size()) {
    fail(ErrorKind::Input, std::string(what) + " split has mismatched labels");
  }
  for (int y : s.labels) {
    if (y < 0 || y >= n_classes) fail(ErrorKind::Input, std::string(what) + " label out of range");
  }
}

struct AdamState {
  std::vector<std::vector<double>> m, v;
  long step = 0;
};

}  // namespace

TrainResult train_classifier(const Sequential& initial, const LabeledSet& train,
                             const LabeledSet& val, const TrainConfig& config, int n_classes,
                             const EpochCallback& on_epoch) {
  if (config.optimizer != "adam") fail(ErrorKind::Config, "unsupported optimizer " + config.optimizer);
  if (config.loss != "cross_entropy") fail(ErrorKind::Config, "unsupported loss " + config.loss);
  if (config.batch_size < 1 || config.epochs < 1) {
    fail(ErrorKind::Config, "batch_size and epochs must be positive");
  }
  if (!(config.learning_rate >= 0.0)) fail(ErrorKind::Config, "learning_rate must be >= 0");
  if (n_classes <= 0) {
    for (int y : train.labels) n_classes = std::max(n_classes, y + 1);
    for (int y : val.labels) n_classes = std::max(n_classes, y + 1);
  }

  Sequential model = initial;
  if (model.num_classes() != n_classes) {
    if (!config.replace_head) {
      fail(ErrorKind::Config, "model outputs " + std::to_string(model.num_classes()) +
                                  " classes but the dataset has " + std::to_string(n_classes) +
                                  " (enable replace_head)");
    }
    const std::size_t last = model.layer_count() - 1;
    const auto* head = dynamic_cast<const Dense*>(&model.layer(last));
    if (!head) fail(ErrorKind::Config, "cannot replace head: last layer is not dense");
    Sequential rebuilt(model.input_shape());
    for (std::size_t i = 0; i < last; ++i) rebuilt.add(model.layer(i).clone());
    Dense& fresh = rebuilt.emplace<Dense>(head->name(), head->in_features(), n_classes,
                                          head->has_bias());
    Rng rng(mix_seed(config.seed, 0xbead));
    const double sd = std::sqrt(2.0 / head->in_features());
    for (double& w : fresh.weights()) w = sd * rng.normal();
    model = std::move(rebuilt);
  }
  check_set(train, n_classes, "train");
  check_set(val, n_classes, "val");

  AdamState adam;
  for (auto& b : model.parameters()) {
    adam.m.emplace_back(b.values.size(), 0.0);
    adam.v.emplace_back(b.values.size(), 0.0);
  }

  TrainResult result{model, {}};
  TrainHistory& h = result.history;
  double best_acc = -1.0, best_loss = std::numeric_limits<double>::infinity();
  int since_improve = 0;
  bool first_batch = true;

  std::vector<std::size_t> order(train.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(epoch), 0x5eed));
    rng.shuffle(order);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      auto grads = model.zero_grads();
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        const auto acts = model.forward_all(train.images[idx]);
        const auto p = softmax(acts.back().values());
        const int y = train.labels[idx];
        batch_loss -= std::log(std::max(p[static_cast<std::size_t>(y)], 1e-300));
        Tensor3 g(acts.back().shape());
        for (std::size_t c = 0; c < p.size(); ++c) g[c] = p[c] - (static_cast<int>(c) == y ? 1.0 : 0.0);
        model.backward_from(acts, model.layer_count() - 1, std::move(g), &grads);
      }
      const double count = static_cast<double>(end - start);
      epoch_loss += batch_loss;
      if (first_batch) {
        h.initial_batch_loss = batch_loss / count;
        first_batch = false;
      }

      ++adam.step;
      const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(adam.step));
      const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(adam.step));
      auto params = model.parameters();
      std::size_t block = 0;
      for (std::size_t li = 0; li < grads.size(); ++li) {
        for (const auto& g : grads[li]) {
          auto w = params[block].values;
          auto& m = adam.m[block];
          auto& v = adam.v[block];
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double gi = g[i] / count;
            m[i] = config.beta1 * m[i] + (1 - config.beta1) * gi;
            v[i] = config.beta2 * v[i] + (1 - config.beta2) * gi * gi;
            w[i] -= config.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.adam_epsilon);
          }
          ++block;
        }
      }
    }
    const EvalSummary vs = evaluate_model(model, val);
    h.train_loss.push_back(epoch_loss / static_cast<double>(train.size()));
    h.val_loss.push_back(vs.loss);
    h.val_acc.push_back(vs.accuracy);

    if (vs.accuracy > best_acc) {
      best_acc = vs.accuracy;
      h.best_epoch = epoch;
      result.model = model;
    }
    bool improved = false;
    if (config.early_stop && config.early_stop->metric == "val_loss") {
      improved = vs.loss < best_loss;
    } else {
      improved = vs.accuracy >= best_acc && h.best_epoch == epoch;
    }
    best_loss = std::min(best_loss, vs.loss);
    since_improve = improved ? 0 : since_improve + 1;
    if (on_epoch) on_epoch(epoch, h);
    if (config.early_stop && since_improve >= config.early_stop->patience) break;
  }
  return result;
}

void write_history_csv(const std::filesystem::path& path, const TrainHistory& h) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "epoch,train_loss,val_loss,val_acc\n";
  char buf[128];
  for (std::size_t e = 0; e < h.train_loss.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", e + 1, h.train_loss[e],
                  h.val_loss[e], h.val_acc[e]);
    out << buf;
  }
  if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

}  // namespace xai

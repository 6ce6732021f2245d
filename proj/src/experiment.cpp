#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>

#include <opencv2/core/version.hpp>

#include "xaikit/error.hpp"
#include "xaikit/report.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace xai {

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  if (path.is_relative() && !base.empty()) path = base / path;
  return path;
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string safe_file_name(const std::string& id) {
  std::string s = id;
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '.') c = '_';
  }
  return s;
}

class Runner {
 public:
  Runner(const ExperimentConfig& config, const RunOptions& options)
      : cfg_(config), opt_(options), out_(resolve_output_dir(config)) {}

  RunSummary run();

 private:
  struct PreparedDataset {
    DatasetManifest manifest;
    SplitAssignment splits;
    PreprocessSpec spec;
  };

  void log(const std::string& msg) {
    if (!opt_.verbose) return;
    std::lock_guard lock(mu_);
    std::cerr << "[xaikit] " << msg << "\n";
  }
  void add_failure(CellFailure f) {
    log("FAILED " + f.dataset + "/" + f.model + "/" + f.method + " (" + f.stage + "): " + f.message);
    std::lock_guard lock(mu_);
    summary_.failures.push_back(std::move(f));
  }
  void add_status(const std::string& d, const std::string& m, const std::string& x, const std::string& s) {
    std::lock_guard lock(mu_);
    cells_.push_back({{"dataset", d}, {"model", m}, {"method", x}, {"status", s}});
    if (s == "completed") ++summary_.cells_completed;
    if (s == "reused") ++summary_.cells_skipped;
  }
  bool model_selected(const ModelConfig& m) const {
    return opt_.only.model.empty() || opt_.only.model == m.name;
  }
  void fail_remaining(const DatasetConfig& d, const ModelConfig* m, const std::string& stage,
                      const std::string& msg) {
    for (const auto& mc : cfg_.models) {
      if (m && &mc != m) continue;
      for (const auto& e : cfg_.explainers) {
        if (!opt_.only.matches(d.name, mc.name, e.name)) continue;
        add_failure({d.name, mc.name, e.name, stage, msg});
        add_status(d.name, mc.name, e.name, "failed");
      }
    }
  }

  PreparedDataset prepare_dataset(const DatasetConfig& d);
  std::vector<Tensor3> load_images(const PreparedDataset& p, const std::vector<std::string>& ids,
                                   const PreprocessSpec& spec);
  void run_dataset(const DatasetConfig& d);
  void run_model(const DatasetConfig& d, const PreparedDataset& p, const ModelConfig& m);

  const ExperimentConfig& cfg_;
  RunOptions opt_;
  fs::path out_;
  std::mutex mu_;
  RunSummary summary_;
  json cells_ = json::array();
};

Runner::PreparedDataset Runner::prepare_dataset(const DatasetConfig& d) {
  PreparedDataset p;
  const fs::path ds_dir = out_ / "datasets" / d.name;
  fs::path root;
  if (d.kind == "synthetic") {
    root = d.root.empty() ? ds_dir / "images" : resolve(cfg_.base_dir, d.root);
    const SyntheticSet set = make_synthetic_shapes(d.n_per_class, d.n_classes, d.image_size, d.seed);
    write_synthetic_dataset(set, root);
    p.spec = d.preprocess.value_or(PreprocessSpec::identity(d.image_size));
  } else {
    root = resolve(cfg_.base_dir, d.root);
    p.spec = d.preprocess.value_or(PreprocessSpec{});
  }
  p.manifest = scan_dataset(root, d.name);
  p.splits = make_splits(p.manifest, parse_split_policy(d.split_policy), d.seed);
  write_file_atomic(ds_dir / "manifest.json", to_json(p.manifest).dump(2));
  write_file_atomic(ds_dir / "splits.json", to_json(p.splits).dump(2));
  log("dataset " + d.name + ": " + std::to_string(p.manifest.items.size()) + " images, " +
      std::to_string(p.manifest.classes.size()) + " classes, train/val/test " +
      std::to_string(p.splits.count(Split::Train)) + "/" + std::to_string(p.splits.count(Split::Val)) +
      "/" + std::to_string(p.splits.count(Split::Test)));
  return p;
}

std::vector<Tensor3> Runner::load_images(const PreparedDataset& p, const std::vector<std::string>& ids,
                                         const PreprocessSpec& spec) {
  std::map<std::string, const DatasetItem*> by_id;
  for (const auto& item : p.manifest.items) by_id[item.id] = &item;
  std::vector<Tensor3> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(preprocess(by_id.at(id)->path, spec));
  return out;
}

void Runner::run_dataset(const DatasetConfig& d) {
  bool wanted = false;
  for (const auto& m : cfg_.models)
    for (const auto& e : cfg_.explainers) wanted = wanted || opt_.only.matches(d.name, m.name, e.name);
  if (!wanted) return;

  PreparedDataset p;
  try {
    p = prepare_dataset(d);
  } catch (const std::exception& e) {
    fail_remaining(d, nullptr, "dataset", e.what());
    return;
  }
  for (const auto& m : cfg_.models) {
    if (!model_selected(m)) continue;
    try {
      run_model(d, p, m);
    } catch (const std::exception& e) {
      fail_remaining(d, &m, "model", e.what());
    }
  }
}

void Runner::run_model(const DatasetConfig& d, const PreparedDataset& p, const ModelConfig& m) {
  const fs::path model_dir = out_ / "models" / (d.name + "__" + m.name);
  const int n_classes = static_cast<int>(p.manifest.classes.size());
  const std::string model_hash = sha256_hex(
      json{{"schema", kExperimentSchemaVersion}, {"dataset", to_json(cfg_).at("datasets")[&d - cfg_.datasets.data()]},
           {"model", to_json(cfg_).at("models")[&m - cfg_.models.data()]}}
          .dump());

  const auto train_ids = p.splits.ids(Split::Train);
  const auto val_ids = p.splits.ids(Split::Val);
  const auto test_ids = p.splits.ids(Split::Test);
  std::map<std::string, int> label_of;
  for (const auto& item : p.manifest.items) label_of[item.id] = item.label;
  auto labels = [&](const std::vector<std::string>& ids) {
    std::vector<int> y;
    for (const auto& id : ids) y.push_back(label_of.at(id));
    return y;
  };

  fs::create_directories(model_dir);
  Checkpoint ck;
  bool have = false;
  const fs::path ck_path = model_dir / "checkpoint.json";
  if (opt_.resume && fs::exists(ck_path)) {
    try {
      ck = load_checkpoint(ck_path);
      have = ck.config_hash == model_hash;
    } catch (const Error&) {
      have = false;
    }
    if (have) log("model " + d.name + "/" + m.name + ": reusing checkpoint");
  }
  if (!have) {
    if (!m.checkpoint.empty()) {
      ck = load_checkpoint(resolve(cfg_.base_dir, m.checkpoint));
      if (ck.model.num_classes() != n_classes) {
        fail(ErrorKind::Config, "checkpoint has " + std::to_string(ck.model.num_classes()) +
                                    " classes, dataset " + d.name + " has " + std::to_string(n_classes));
      }
      log("model " + d.name + "/" + m.name + ": loaded " + m.checkpoint);
    } else {
      const PreprocessSpec& spec = p.spec;
      LabeledSet train{load_images(p, train_ids, spec), labels(train_ids), train_ids};
      LabeledSet val{load_images(p, val_ids, spec), labels(val_ids), val_ids};
      MicroNetOptions mo;
      mo.input_shape = {spec.height, spec.width, spec.channels};
      const Sequential init = build_micro_net(m.seed, n_classes, mo);
      log("model " + d.name + "/" + m.name + ": training on " + std::to_string(train.size()) + " images");
      TrainResult tr = train_classifier(init, train, val, m.train, n_classes, [&](int epoch, const TrainHistory& h) {
        log("  epoch " + std::to_string(epoch + 1) + " train_loss " + std::to_string(h.train_loss.back()) +
            " val_acc " + std::to_string(h.val_acc.back()));
      });
      ck.model = std::move(tr.model);
      ck.preprocess = spec;
      ck.fill_mean.assign(static_cast<std::size_t>(spec.channels), 0.0);
      std::size_t count = 0;
      for (const auto& img : train.images) {
        for (std::size_t i = 0; i < img.size(); ++i) ck.fill_mean[i % spec.channels] += img[i];
        count += img.size() / spec.channels;
      }
      for (double& v : ck.fill_mean) v /= static_cast<double>(count);
      ck.metadata = {{"dataset", d.name},
                     {"model", m.name},
                     {"best_epoch", tr.history.best_epoch + 1},
                     {"epochs_run", tr.history.train_loss.size()},
                     {"initial_batch_loss", tr.history.initial_batch_loss}};
      write_history_csv(model_dir / "history.csv", tr.history);
    }
    ck.class_names = p.manifest.classes;
    ck.config_hash = model_hash;
    save_checkpoint(ck_path, ck);
  }

  const auto test_images = load_images(p, test_ids, ck.preprocess);
  const LabeledSet test{test_images, labels(test_ids), test_ids};
  const EvalSummary es = evaluate_model(ck.model, test);
  const ConfusionMatrix cm = confusion_matrix(test.labels, es.predictions, n_classes, p.manifest.classes);
  const MetricsReport mr = classification_metrics(cm);
  plot_confusion_matrix(cm, model_dir / "confusion_matrix.png");
  write_file_atomic(model_dir / "metrics.json",
                    json{{"dataset", d.name},
                         {"model", m.name},
                         {"n_test", test.size()},
                         {"test_loss", es.loss},
                         {"metrics", to_json(mr)},
                         {"confusion_matrix", to_json(cm)}}
                        .dump(2));
  log("model " + d.name + "/" + m.name + ": test accuracy " + format_percent(mr.accuracy) + "%");

  // Evaluation sample: a seeded draw from the test split, shared by all methods.
  std::vector<std::size_t> order(test_ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(cfg_.evaluator.seed, 0xe7a1));
  rng.shuffle(order);
  order.resize(std::min(order.size(), static_cast<std::size_t>(cfg_.evaluator.sample_size)));
  std::vector<EvalImage> sample;
  for (std::size_t i : order) sample.push_back({test_ids[i], test_images[i]});

  EvalConfig ec;
  ec.q_preserved = cfg_.evaluator.q_preserved;
  ec.fill = parse_fill_policy(cfg_.evaluator.fill, cfg_.evaluator.fill_values);
  if (ec.fill.kind == FillPolicy::Kind::Mean && ec.fill.values.empty()) ec.fill.values = ck.fill_mean;
  ec.sample_size = cfg_.evaluator.sample_size;
  ec.warmup = cfg_.evaluator.warmup;
  ec.seed = cfg_.evaluator.seed;

  for (const auto& e : cfg_.explainers) {
    if (!opt_.only.matches(d.name, m.name, e.name)) continue;
    const fs::path cell_dir = out_ / "cells" / (d.name + "__" + m.name + "__" + e.name);
    const json ev = to_json(cfg_).at("evaluator");
    const std::string cell_hash = sha256_hex(
        json{{"model", model_hash}, {"method", e.method}, {"params", e.params}, {"evaluator", ev}}.dump());
    if (opt_.resume && fs::exists(cell_dir / "record.json") && fs::exists(cell_dir / "per_image.csv")) {
      try {
        const json rec = json::parse(read_file(cell_dir / "record.json"));
        if (rec.value("cell_hash", std::string()) == cell_hash) {
          log("cell " + cell_dir.filename().string() + ": reusing");
          add_status(d.name, m.name, e.name, "reused");
          continue;
        }
      } catch (const std::exception&) {
      }
    }
    std::error_code rm;
    fs::remove(cell_dir / "record.json", rm);
    try {
      log("cell " + cell_dir.filename().string() + ": explaining " + std::to_string(sample.size()) + " images");
      CellResult res = evaluate_cell(ck.model, sample, MethodSpec{e.method, e.params}, ec, m.name, d.name);
      res.record.method = e.name;
      for (auto& l : res.logs) l.method = e.name;
      fs::create_directories(cell_dir / "overlays");
      std::size_t k = 0;
      int written = 0;
      for (std::size_t i = 0; i < res.logs.size() && written < cfg_.outputs.overlays_per_cell; ++i) {
        if (res.logs[i].status != "ok") continue;
        const Tensor3 overlay = render_overlay(sample[i].image, ck.preprocess, res.maps[k++].scores,
                                               cfg_.outputs.overlay_alpha, cfg_.outputs.colormap);
        const std::string stem = safe_file_name(fs::path(sample[i].id).stem().string());
        save_image(cell_dir / "overlays" / (std::to_string(i) + "_" + stem + ".png"), overlay);
        ++written;
      }
      write_image_logs_csv(cell_dir / "per_image.csv", res.logs);
      write_file_atomic(cell_dir / "record.json",
                        json{{"cell_hash", cell_hash},
                             {"method", e.method},
                             {"params", e.params},
                             {"q_preserved", ec.q_preserved},
                             {"fill", to_string(ec.fill.kind)},
                             {"fill_values", ec.fill.values},
                             {"record", to_json(res.record)}}
                            .dump(2));
      log("cell " + cell_dir.filename().string() + ": fidelity " + std::to_string(res.record.fidelity_mean) +
          ", " + std::to_string(res.record.timing.mean_seconds) + " s/image");
      add_status(d.name, m.name, e.name, "completed");
    } catch (const std::exception& ex) {
      add_failure({d.name, m.name, e.name, "cell", ex.what()});
      add_status(d.name, m.name, e.name, "failed");
    }
  }
}

RunSummary Runner::run() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string started = utc_now();
  summary_.bundle_dir = out_;
  summary_.config_hash = config_hash(cfg_);
  std::error_code ec;
  fs::create_directories(out_, ec);
  if (ec) fail(ErrorKind::Io, "cannot create output directory " + out_.string() + ": " + ec.message());
  write_file_atomic(out_ / "config.json", to_json(cfg_).dump(2));

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < cfg_.datasets.size();) run_dataset(cfg_.datasets[i]);
  };
  const auto n_workers = std::min<std::size_t>(static_cast<std::size_t>(cfg_.workers), cfg_.datasets.size());
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  export_tables(out_, cfg_.outputs.formats);
  write_plots(out_);

  json failures = json::array();
  for (const auto& f : summary_.failures) {
    failures.push_back({{"dataset", f.dataset}, {"model", f.model}, {"method", f.method},
                        {"stage", f.stage}, {"message", f.message}});
  }
  write_file_atomic(out_ / "failures.json", failures.dump(2));

  summary_.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json meta{{"config_hash", summary_.config_hash},
            {"xaikit_version", kVersion},
            {"opencv_version", CV_VERSION},
            {"compiler", __VERSION__},
            {"started_utc", started},
            {"wall_seconds", summary_.wall_seconds},
            {"resume", opt_.resume},
            {"only", {{"dataset", opt_.only.dataset}, {"model", opt_.only.model}, {"method", opt_.only.method}}},
            {"cells", cells_},
            {"cells_completed", summary_.cells_completed},
            {"cells_reused", summary_.cells_skipped},
            {"cells_failed", summary_.failures.size()}};
  write_file_atomic(out_ / "run_metadata.json", meta.dump(2));
  return summary_;
}

}  // namespace

RunSummary run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  validate_config(config);
  Runner runner(config, options);
  return runner.run();
}

}  // namespace xai

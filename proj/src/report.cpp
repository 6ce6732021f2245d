#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "xaikit/error.hpp"
#include "xaikit/report.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace xai {

namespace {

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) fail(ErrorKind::Config, where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      fail(ErrorKind::Config, where + ": unknown key '" + key + "'");
    }
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::Config, where + "." + key + " has the wrong type");
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  if (path.is_relative() && !base.empty()) path = base / path;
  return path;
}

json dataset_json(const DatasetConfig& d) {
  json j{{"name", d.name},
         {"kind", d.kind},
         {"root", d.root},
         {"split_policy", d.split_policy},
         {"seed", d.seed}};
  if (d.kind == "synthetic") {
    j["n_per_class"] = d.n_per_class;
    j["n_classes"] = d.n_classes;
    j["image_size"] = d.image_size;
  }
  if (d.preprocess) j["preprocess"] = to_json(*d.preprocess);
  return j;
}

json model_json(const ModelConfig& m) {
  json j{{"name", m.name}, {"seed", m.seed}, {"train", to_json(m.train)}};
  if (m.checkpoint.empty()) {
    j["architecture"] = m.architecture;
  } else {
    j["checkpoint"] = m.checkpoint;
  }
  return j;
}

json explainer_json(const ExplainerConfig& e) {
  return {{"name", e.name}, {"method", e.method}, {"params", e.params}};
}

json evaluator_json(const EvaluatorConfig& e) {
  return {{"q_preserved", e.q_preserved}, {"fill", e.fill},          {"fill_values", e.fill_values},
          {"sample_size", e.sample_size}, {"warmup", e.warmup},      {"seed", e.seed}};
}

const std::regex kNamePattern("[A-Za-z0-9][A-Za-z0-9_.-]*");

void check_name(const std::string& what, const std::string& name) {
  if (!std::regex_match(name, kNamePattern) || name.find("__") != std::string::npos) {
    fail(ErrorKind::Config, what + " name '" + name +
                                "' must match [A-Za-z0-9][A-Za-z0-9_.-]* without '__'");
  }
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string num17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<fs::path> sorted_subdirs(const fs::path& dir) {
  std::vector<fs::path> out;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

json to_json(const ExperimentConfig& c) {
  json ds = json::array(), ms = json::array(), xs = json::array();
  for (const auto& d : c.datasets) ds.push_back(dataset_json(d));
  for (const auto& m : c.models) ms.push_back(model_json(m));
  for (const auto& e : c.explainers) xs.push_back(explainer_json(e));
  return {{"schema_version", kExperimentSchemaVersion},
          {"datasets", std::move(ds)},
          {"models", std::move(ms)},
          {"explainers", std::move(xs)},
          {"evaluator", evaluator_json(c.evaluator)},
          {"outputs",
           {{"dir", c.outputs.dir},
            {"formats", c.outputs.formats},
            {"overlays_per_cell", c.outputs.overlays_per_cell},
            {"overlay_alpha", c.outputs.overlay_alpha},
            {"colormap", c.outputs.colormap}}},
          {"runtime", {{"workers", c.workers}}}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
  check_keys(j, "config",
             {"schema_version", "datasets", "models", "explainers", "evaluator", "outputs", "runtime"});
  const int version = get_or(j, "schema_version", kExperimentSchemaVersion, "config");
  if (version != kExperimentSchemaVersion) {
    fail(ErrorKind::Config, "unsupported schema_version " + std::to_string(version));
  }
  for (const char* key : {"datasets", "models", "explainers"}) {
    if (!j.contains(key) || !j.at(key).is_array()) {
      fail(ErrorKind::Config, std::string("config.") + key + " must be a list");
    }
  }

  ExperimentConfig c;
  for (const auto& d : j.at("datasets")) {
    const std::string w = "datasets[" + std::to_string(c.datasets.size()) + "]";
    check_keys(d, w, {"name", "kind", "root", "split_policy", "seed", "n_per_class", "n_classes",
                      "image_size", "preprocess"});
    DatasetConfig x;
    x.name = get_or<std::string>(d, "name", "", w);
    x.kind = get_or<std::string>(d, "kind", x.kind, w);
    x.root = get_or<std::string>(d, "root", "", w);
    x.split_policy = get_or<std::string>(d, "split_policy", x.split_policy, w);
    x.seed = get_or<std::uint64_t>(d, "seed", 0, w);
    x.n_per_class = get_or(d, "n_per_class", x.n_per_class, w);
    x.n_classes = get_or(d, "n_classes", x.n_classes, w);
    x.image_size = get_or(d, "image_size", x.image_size, w);
    if (d.contains("preprocess")) {
      try {
        x.preprocess = preprocess_from_json(d.at("preprocess"));
      } catch (const json::exception& ex) {
        fail(ErrorKind::Config, w + ".preprocess: " + ex.what());
      }
    }
    c.datasets.push_back(std::move(x));
  }
  for (const auto& m : j.at("models")) {
    const std::string w = "models[" + std::to_string(c.models.size()) + "]";
    check_keys(m, w, {"name", "architecture", "checkpoint", "seed", "train"});
    ModelConfig x;
    x.name = get_or<std::string>(m, "name", "", w);
    x.architecture = get_or<std::string>(m, "architecture", x.architecture, w);
    x.checkpoint = get_or<std::string>(m, "checkpoint", "", w);
    x.seed = get_or<std::uint64_t>(m, "seed", 0, w);
    if (m.contains("train")) {
      check_keys(m.at("train"), w + ".train",
                 {"batch_size", "epochs", "learning_rate", "optimizer", "loss", "seed", "early_stop",
                  "replace_head", "beta1", "beta2", "adam_epsilon"});
      try {
        x.train = train_config_from_json(m.at("train"));
      } catch (const json::exception& ex) {
        fail(ErrorKind::Config, w + ".train: " + ex.what());
      }
    }
    c.models.push_back(std::move(x));
  }
  for (const auto& e : j.at("explainers")) {
    const std::string w = "explainers[" + std::to_string(c.explainers.size()) + "]";
    check_keys(e, w, {"name", "method", "params"});
    ExplainerConfig x;
    x.method = get_or<std::string>(e, "method", "", w);
    x.name = get_or<std::string>(e, "name", "", w);
    if (e.contains("params")) x.params = e.at("params");
    if (x.name.empty()) {
      try {
        x.name = canonical_method(x.method);
      } catch (const Error&) {
        x.name = x.method;
      }
    }
    c.explainers.push_back(std::move(x));
  }
  if (j.contains("evaluator")) {
    const auto& e = j.at("evaluator");
    check_keys(e, "evaluator", {"q_preserved", "fill", "fill_values", "sample_size", "warmup", "seed"});
    auto& x = c.evaluator;
    x.q_preserved = get_or(e, "q_preserved", x.q_preserved, "evaluator");
    x.fill = get_or(e, "fill", x.fill, "evaluator");
    x.fill_values = get_or(e, "fill_values", x.fill_values, "evaluator");
    x.sample_size = get_or(e, "sample_size", x.sample_size, "evaluator");
    x.warmup = get_or(e, "warmup", x.warmup, "evaluator");
    x.seed = get_or(e, "seed", x.seed, "evaluator");
  }
  if (j.contains("outputs")) {
    const auto& o = j.at("outputs");
    check_keys(o, "outputs", {"dir", "formats", "overlays_per_cell", "overlay_alpha", "colormap"});
    auto& x = c.outputs;
    x.dir = get_or(o, "dir", x.dir, "outputs");
    x.formats = get_or(o, "formats", x.formats, "outputs");
    x.overlays_per_cell = get_or(o, "overlays_per_cell", x.overlays_per_cell, "outputs");
    x.overlay_alpha = get_or(o, "overlay_alpha", x.overlay_alpha, "outputs");
    x.colormap = get_or(o, "colormap", x.colormap, "outputs");
  }
  if (j.contains("runtime")) {
    check_keys(j.at("runtime"), "runtime", {"workers"});
    c.workers = get_or(j.at("runtime"), "workers", c.workers, "runtime");
  }
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    fail(ErrorKind::Config, e.what());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& ex) {
    fail(ErrorKind::Config, path.string() + ": " + ex.what());
  }
  ExperimentConfig c = experiment_config_from_json(j);
  c.base_dir = fs::absolute(path).parent_path();
  return c;
}

void validate_config(const ExperimentConfig& c) {
  if (c.datasets.empty()) fail(ErrorKind::Config, "no datasets configured");
  if (c.models.empty()) fail(ErrorKind::Config, "no models configured");
  if (c.explainers.empty()) fail(ErrorKind::Config, "no explainers configured");

  std::set<std::string> seen;
  for (const auto& d : c.datasets) {
    check_name("dataset", d.name);
    if (!seen.insert(d.name).second) fail(ErrorKind::Config, "duplicate dataset name '" + d.name + "'");
    try {
      parse_split_policy(d.split_policy);
    } catch (const Error& e) {
      fail(ErrorKind::Config, "dataset " + d.name + ": " + e.what());
    }
    if (d.kind == "directory") {
      if (d.root.empty()) fail(ErrorKind::Config, "dataset " + d.name + ": root is required");
      const fs::path root = resolve(c.base_dir, d.root);
      if (!fs::is_directory(root)) {
        fail(ErrorKind::Config, "dataset " + d.name + ": root " + root.string() + " is not a directory");
      }
    } else if (d.kind == "synthetic") {
      if (d.n_classes < 2 || d.n_classes > 4) fail(ErrorKind::Config, "dataset " + d.name + ": n_classes must be 2..4");
      if (d.image_size < 16) fail(ErrorKind::Config, "dataset " + d.name + ": image_size must be >= 16");
      if (d.n_per_class < 1) fail(ErrorKind::Config, "dataset " + d.name + ": n_per_class must be >= 1");
    } else {
      fail(ErrorKind::Config, "dataset " + d.name + ": unknown kind '" + d.kind + "'");
    }
    if (d.preprocess) {
      const auto& p = *d.preprocess;
      if (p.height < 1 || p.width < 1 || (p.channels != 1 && p.channels != 3) ||
          static_cast<int>(p.mean.size()) != p.channels || static_cast<int>(p.std.size()) != p.channels ||
          std::any_of(p.std.begin(), p.std.end(), [](double s) { return !(s > 0.0); })) {
        fail(ErrorKind::Config, "dataset " + d.name + ": invalid preprocess spec");
      }
    }
  }

  seen.clear();
  for (const auto& m : c.models) {
    check_name("model", m.name);
    if (!seen.insert(m.name).second) fail(ErrorKind::Config, "duplicate model name '" + m.name + "'");
    if (!m.checkpoint.empty()) {
      const fs::path p = resolve(c.base_dir, m.checkpoint);
      if (!fs::is_regular_file(p)) {
        fail(ErrorKind::Config, "model " + m.name + ": checkpoint " + p.string() + " not found");
      }
    } else if (m.architecture != "micro_net") {
      fail(ErrorKind::Config, "model " + m.name + ": unknown architecture '" + m.architecture +
                                  "' (available: micro_net, or a checkpoint path)");
    }
    const auto& t = m.train;
    if (t.optimizer != "adam") fail(ErrorKind::Config, "model " + m.name + ": unsupported optimizer " + t.optimizer);
    if (t.loss != "cross_entropy") fail(ErrorKind::Config, "model " + m.name + ": unsupported loss " + t.loss);
    if (t.batch_size < 1 || t.epochs < 1) {
      fail(ErrorKind::Config, "model " + m.name + ": batch_size and epochs must be positive");
    }
    if (!(t.learning_rate >= 0.0)) fail(ErrorKind::Config, "model " + m.name + ": learning_rate must be >= 0");
    if (t.early_stop && t.early_stop->metric != "val_acc" && t.early_stop->metric != "val_loss") {
      fail(ErrorKind::Config, "model " + m.name + ": early_stop.metric must be val_acc or val_loss");
    }
    if (t.early_stop && t.early_stop->patience < 1) {
      fail(ErrorKind::Config, "model " + m.name + ": early_stop.patience must be >= 1");
    }
  }

  seen.clear();
  FillPolicy fill;
  try {
    fill = parse_fill_policy(c.evaluator.fill, c.evaluator.fill_values);
  } catch (const Error& e) {
    fail(ErrorKind::Config, std::string("evaluator: ") + e.what());
  }
  for (const auto& e : c.explainers) {
    check_name("explainer", e.name);
    if (!seen.insert(e.name).second) fail(ErrorKind::Config, "duplicate explainer name '" + e.name + "'");
    try {
      make_explainer(MethodSpec{e.method, e.params}, fill);
    } catch (const Error& err) {
      fail(ErrorKind::Config, "explainer " + e.name + ": " + err.what());
    }
  }

  const auto& ev = c.evaluator;
  if (!(ev.q_preserved > 0.0 && ev.q_preserved <= 1.0)) {
    fail(ErrorKind::Config, "evaluator.q_preserved must be in (0, 1]");
  }
  if (ev.sample_size < 1) fail(ErrorKind::Config, "evaluator.sample_size must be >= 1");
  if (ev.warmup < 0) fail(ErrorKind::Config, "evaluator.warmup must be >= 0");

  const auto& o = c.outputs;
  if (o.dir.empty()) fail(ErrorKind::Config, "outputs.dir is empty");
  if (o.formats.empty()) fail(ErrorKind::Config, "outputs.formats is empty");
  for (const auto& f : o.formats) {
    if (f != "csv" && f != "json") fail(ErrorKind::Config, "outputs.formats: unknown format '" + f + "'");
  }
  if (o.overlays_per_cell < 0) fail(ErrorKind::Config, "outputs.overlays_per_cell must be >= 0");
  if (!(o.overlay_alpha >= 0.0 && o.overlay_alpha <= 1.0)) {
    fail(ErrorKind::Config, "outputs.overlay_alpha must be in [0, 1]");
  }
  if (!known_colormap(o.colormap)) fail(ErrorKind::Config, "outputs.colormap: unknown '" + o.colormap + "'");
  if (c.workers < 1) fail(ErrorKind::Config, "runtime.workers must be >= 1");
}

std::string sha256_hex(const std::string& text) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    fail(ErrorKind::Io, "sha256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string config_hash(const ExperimentConfig& c) {
  json j = to_json(c);
  j.erase("outputs");
  j.erase("runtime");
  return sha256_hex(j.dump());
}

fs::path resolve_output_dir(const ExperimentConfig& c) {
  fs::path dir(c.outputs.dir);
  if (dir.is_absolute()) return dir;
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) return fs::path(root) / dir;
  return c.base_dir.empty() ? dir : c.base_dir / dir;
}

bool CellFilter::matches(const std::string& d, const std::string& m, const std::string& x) const {
  return (dataset.empty() || dataset == d) && (model.empty() || model == m) &&
         (method.empty() || method == x);
}

CellFilter parse_cell_filter(const std::string& text) {
  CellFilter f;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    const auto eq = part.find('=');
    if (eq == std::string::npos) fail(ErrorKind::Config, "--only expects key=value, got '" + part + "'");
    const std::string key = part.substr(0, eq), value = part.substr(eq + 1);
    if (key == "dataset") {
      f.dataset = value;
    } else if (key == "model") {
      f.model = value;
    } else if (key == "method") {
      f.method = value;
    } else {
      fail(ErrorKind::Config, "--only: unknown key '" + key + "'");
    }
  }
  return f;
}

std::string format_percent(double fraction) {
  if (!std::isfinite(fraction)) return fraction != fraction ? "nan" : (fraction > 0 ? "inf" : "-inf");
  char buf[512];
  const auto res = std::to_chars(buf, buf + sizeof buf, fraction, std::chars_format::fixed);
  std::string s(buf, res.ptr);
  bool negative = false;
  if (s[0] == '-') {
    negative = true;
    s.erase(0, 1);
  }
  const auto dot = s.find('.');
  std::string ip = dot == std::string::npos ? s : s.substr(0, dot);
  std::string fp = dot == std::string::npos ? "" : s.substr(dot + 1);
  // shift two places for the percentage, keep two decimals
  while (fp.size() < 4) fp += '0';
  std::string digits = ip + fp.substr(0, 4);  // value * 10^4 as an integer string
  const std::string tail = fp.substr(4);
  bool up = false;
  if (!tail.empty() && tail[0] > '5') {
    up = true;
  } else if (!tail.empty() && tail[0] == '5') {
    const bool rest_zero = tail.find_first_not_of('0', 1) == std::string::npos;
    up = !rest_zero || ((digits.back() - '0') % 2 == 1);
  }
  if (up) {
    int i = static_cast<int>(digits.size()) - 1;
    while (i >= 0 && digits[i] == '9') digits[i--] = '0';
    if (i < 0) {
      digits.insert(digits.begin(), '1');
    } else {
      ++digits[i];
    }
  }
  std::string int_part = digits.substr(0, digits.size() - 2);
  const std::string dec = digits.substr(digits.size() - 2);
  const auto nz = int_part.find_first_not_of('0');
  int_part = nz == std::string::npos ? "0" : int_part.substr(nz);
  const bool zero = int_part == "0" && dec == "00";
  return (negative && !zero ? "-" : "") + int_part + "." + dec;
}

std::vector<MetricsRow> collect_metrics(const fs::path& bundle) {
  std::vector<MetricsRow> rows;
  for (const auto& dir : sorted_subdirs(bundle / "models")) {
    const fs::path p = dir / "metrics.json";
    if (!fs::exists(p)) continue;
    const json j = json::parse(read_file(p));
    MetricsRow r;
    r.dataset = j.at("dataset").get<std::string>();
    r.model = j.at("model").get<std::string>();
    const auto& m = j.at("metrics");
    r.accuracy = m.at("accuracy");
    r.precision = m.at("precision");
    r.recall = m.at("recall");
    r.f1 = m.at("f1");
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<EvalRecord> collect_records(const fs::path& bundle) {
  std::vector<EvalRecord> out;
  for (const auto& dir : sorted_subdirs(bundle / "cells")) {
    const fs::path p = dir / "record.json";
    if (!fs::exists(p)) continue;
    out.push_back(eval_record_from_json(json::parse(read_file(p)).at("record")));
  }
  return out;
}

std::vector<fs::path> export_tables(const fs::path& bundle, const std::vector<std::string>& formats) {
  const auto metrics = collect_metrics(bundle);
  const auto records = collect_records(bundle);
  const fs::path dir = bundle / "tables";
  std::vector<fs::path> written;
  const bool csv = std::find(formats.begin(), formats.end(), "csv") != formats.end();
  const bool js = std::find(formats.begin(), formats.end(), "json") != formats.end();
  for (const auto& f : formats) {
    if (f != "csv" && f != "json") fail(ErrorKind::Input, "unknown table format '" + f + "'");
  }

  if (csv) {
    std::string text = "dataset,model,accuracy,precision,recall,f1\n";
    for (const auto& r : metrics) {
      text += csv_field(r.dataset) + "," + csv_field(r.model) + "," + format_percent(r.accuracy) + "," +
              format_percent(r.precision) + "," + format_percent(r.recall) + "," + format_percent(r.f1) + "\n";
    }
    write_file_atomic(dir / "metrics.csv", text);
    written.push_back(dir / "metrics.csv");

    text = "method,model,dataset,fidelity_mean,fidelity_std,time_mean,time_std,n_images,n_failed\n";
    for (const auto& r : records) {
      text += csv_field(r.method) + "," + csv_field(r.model_name) + "," + csv_field(r.dataset_name) + "," +
              num17(r.fidelity_mean) + "," + num17(r.fidelity_std) + "," + num17(r.timing.mean_seconds) +
              "," + num17(r.timing.std_seconds) + "," + std::to_string(r.n_images) + "," +
              std::to_string(r.n_failed) + "\n";
    }
    write_file_atomic(dir / "evaluation.csv", text);
    written.push_back(dir / "evaluation.csv");
  }
  if (js) {
    json rows = json::array();
    for (const auto& r : metrics) {
      rows.push_back({{"dataset", r.dataset},
                      {"model", r.model},
                      {"accuracy", std::stod(format_percent(r.accuracy))},
                      {"precision", std::stod(format_percent(r.precision))},
                      {"recall", std::stod(format_percent(r.recall))},
                      {"f1", std::stod(format_percent(r.f1))}});
    }
    write_file_atomic(dir / "metrics.json", json{{"unit", "percent"}, {"rows", rows}}.dump(2));
    written.push_back(dir / "metrics.json");

    json evals = json::array();
    for (const auto& r : records) {
      evals.push_back({{"method", r.method},
                       {"model", r.model_name},
                       {"dataset", r.dataset_name},
                       {"fidelity_mean", r.fidelity_mean},
                       {"fidelity_std", r.fidelity_std},
                       {"time_mean", r.timing.mean_seconds},
                       {"time_std", r.timing.std_seconds},
                       {"n_images", r.n_images},
                       {"n_failed", r.n_failed}});
    }
    write_file_atomic(dir / "evaluation.json", json{{"time_unit", "seconds"}, {"rows", evals}}.dump(2));
    written.push_back(dir / "evaluation.json");
  }
  return written;
}

std::vector<fs::path> write_plots(const fs::path& bundle) {
  const auto records = collect_records(bundle);
  std::map<std::string, std::vector<EvalRecord>> by_dataset;
  for (const auto& r : records) by_dataset[r.dataset_name].push_back(r);
  std::vector<fs::path> written;
  for (const auto& [name, recs] : by_dataset) {
    written.push_back(bundle / "plots" / (name + "_fidelity.png"));
    plot_bars(recs, PlotQuantity::Fidelity, written.back());
    written.push_back(bundle / "plots" / (name + "_time.png"));
    plot_bars(recs, PlotQuantity::Time, written.back());
  }
  return written;
}

}  // namespace xai

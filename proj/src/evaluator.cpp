#include "xaikit/evaluator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "xaikit/error.hpp"
#include "xaikit/network.hpp"

namespace xai {

std::vector<std::size_t> rank_pixels(const Grid2& attribution) {
  std::vector<std::size_t> order(attribution.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return attribution[a] > attribution[b];
  });
  return order;
}

std::size_t fraction_count(double q, std::size_t n) {
  return static_cast<std::size_t>(std::floor(q * static_cast<double>(n) + 1e-9));
}

namespace {

void check_attribution(const Tensor3& image, const Grid2& attribution) {
  if (attribution.height() != image.height() || attribution.width() != image.width()) {
    fail(ErrorKind::Input, "attribution shape does not match image spatial shape");
  }
  if (!attribution.all_finite()) fail(ErrorKind::Input, "attribution has non-finite entries");
}

}  // namespace

Tensor3 preserve_perturb(const Tensor3& image, const Grid2& attribution, double q_preserved,
                         const FillPolicy& fill) {
  check_attribution(image, attribution);
  if (!(q_preserved > 0.0 && q_preserved <= 1.0)) {
    fail(ErrorKind::Input, "q_preserved must lie in (0, 1]");
  }
  const auto order = rank_pixels(attribution);
  const std::size_t k = fraction_count(q_preserved, order.size());
  std::vector<bool> keep(order.size(), false);
  for (std::size_t i = 0; i < k; ++i) keep[order[i]] = true;
  return compose(image, fill_image(image, fill), keep);
}

Tensor3 delete_perturb(const Tensor3& image, const Grid2& attribution, double q_removed,
                       const FillPolicy& fill) {
  check_attribution(image, attribution);
  if (!(q_removed >= 0.0 && q_removed <= 1.0)) {
    fail(ErrorKind::Input, "q_removed must lie in [0, 1]");
  }
  const auto order = rank_pixels(attribution);
  const std::size_t k = fraction_count(q_removed, order.size());
  std::vector<bool> keep(order.size(), true);
  for (std::size_t i = 0; i < k; ++i) keep[order[i]] = false;
  return compose(image, fill_image(image, fill), keep);
}

FidelityResult fidelity_score(const Classifier& model, const Tensor3& image,
                              const Grid2& attribution, double q_preserved,
                              const FillPolicy& fill) {
  const Probabilities original = predict(model, image);
  FidelityResult r;
  r.q_preserved = q_preserved;
  r.predicted_class = original.argmax();
  r.c_original = original.values[static_cast<std::size_t>(r.predicted_class)];
  if (!(r.c_original > 0.0)) fail(ErrorKind::Model, "original confidence is zero");
  const Tensor3 perturbed = preserve_perturb(image, attribution, q_preserved, fill);
  const Probabilities after = predict(model, perturbed);
  r.c_adversarial = std::clamp(after.values[static_cast<std::size_t>(r.predicted_class)], 0.0,
                               r.c_original);
  r.f = r.c_adversarial / r.c_original;
  return r;
}

double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

TimingStats timing_from_durations(std::vector<double> durations, int warmup_excluded) {
  if (durations.empty()) fail(ErrorKind::Input, "no timed calls");
  TimingStats t;
  t.mean_seconds = mean_of(durations);
  t.std_seconds = sample_std(durations);
  t.n = static_cast<int>(durations.size());
  t.warmup_excluded = warmup_excluded;
  t.durations = std::move(durations);
  return t;
}

Clock steady_clock_seconds() {
  return [] {
    using namespace std::chrono;
    return duration<double>(steady_clock::now().time_since_epoch()).count();
  };
}

TimingStats time_explainer(const TimedCall& explainer, const Classifier& model,
                           const std::vector<Tensor3>& images, int warmup, const Clock& clock) {
  if (warmup < 0) fail(ErrorKind::Input, "warmup must be non-negative");
  if (images.empty() || static_cast<std::size_t>(warmup) >= images.size()) {
    fail(ErrorKind::Input, "timing needs at least one call after " + std::to_string(warmup) +
                               " warmup call(s)");
  }
  std::vector<double> durations;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (i < static_cast<std::size_t>(warmup)) {
      explainer(model, images[i]);
      continue;
    }
    const double t0 = clock();
    explainer(model, images[i]);
    durations.push_back(clock() - t0);
  }
  return timing_from_durations(std::move(durations), warmup);
}

// ---------------------------------------------------------------------------
// Method registry

std::string canonical_method(const std::string& name) {
  if (name == "saliency" || name == "vanilla_gradient") return "saliency";
  if (name == "integrated_gradients" || name == "ig") return "integrated_gradients";
  if (name == "grad_cam" || name == "gradcam") return "grad_cam";
  if (name == "kernel_shap" || name == "shap") return "kernel_shap";
  if (name == "lime") return "lime";
  if (name == "lrp_epsilon" || name == "lrp") return "lrp_epsilon";
  if (name == "random") return "random";
  fail(ErrorKind::Lookup, "unknown explanation method '" + name + "'");
}

std::vector<std::string> known_methods() {
  return {"saliency", "integrated_gradients", "grad_cam", "lime", "kernel_shap", "lrp_epsilon",
          "random"};
}

namespace {

class Params {
 public:
  Params(const nlohmann::json& j, std::string method) : j_(j), method_(std::move(method)) {
    if (!j_.is_null() && !j_.is_object()) {
      fail(ErrorKind::Input, method_ + ": params must be an object");
    }
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    used_.insert(key);
    if (j_.is_null() || !j_.contains(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      fail(ErrorKind::Input, method_ + ": parameter '" + key + "' has the wrong type");
    }
  }

  void finish() const {
    if (j_.is_null()) return;
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) {
        fail(ErrorKind::Input, method_ + ": unknown parameter '" + it.key() + "'");
      }
    }
  }

 private:
  const nlohmann::json& j_;
  std::string method_;
  std::set<std::string> used_;
};

FillPolicy fill_override(Params& p, const FillPolicy& fallback) {
  const std::string kind = p.get<std::string>("fill", "");
  auto values = p.get<std::vector<double>>("fill_values", {});
  if (kind.empty()) return fallback;
  if (kind == "mean" && values.empty()) values = fallback.values;
  return parse_fill_policy(kind, std::move(values));
}

}  // namespace

Explainer make_explainer(const MethodSpec& spec, const FillPolicy& default_fill) {
  const std::string method = canonical_method(spec.method);
  Params p(spec.params, method);
  Explainer fn;
  if (method == "saliency") {
    fn = [](const Classifier& m, const Tensor3& x, int c, std::uint64_t) {
      return saliency(m, x, c);
    };
  } else if (method == "integrated_gradients") {
    const int steps = p.get<int>("steps", 50);
    if (steps < 1) fail(ErrorKind::Input, "integrated_gradients: steps must be >= 1");
    fn = [steps](const Classifier& m, const Tensor3& x, int c, std::uint64_t) {
      return integrated_gradients(m, x, c, IgOptions{{}, steps});
    };
  } else if (method == "grad_cam") {
    const std::string layer = p.get<std::string>("layer", "");
    fn = [layer](const Classifier& m, const Tensor3& x, int c, std::uint64_t) {
      return grad_cam(m, x, c, layer);
    };
  } else if (method == "lime" || method == "kernel_shap") {
    const int n_segments = p.get<int>("n_segments", 50);
    const double compactness = p.get<double>("compactness", 10.0);
    const FillPolicy fill = fill_override(p, default_fill);
    if (n_segments < 1) fail(ErrorKind::Input, method + ": n_segments must be >= 1");
    if (method == "lime") {
      LimeOptions o;
      o.n_samples = p.get<int>("n_samples", 1000);
      o.kernel_width = p.get<double>("kernel_width", 0.25);
      o.ridge = p.get<double>("ridge", 1.0);
      o.fill = fill;
      fn = [o, n_segments, compactness](const Classifier& m, const Tensor3& x, int c,
                                        std::uint64_t seed) {
        LimeOptions opt = o;
        opt.seed = mix_seed(seed, 2);
        const SegmentMask mask = segment_image(x, n_segments, mix_seed(seed, 1), {compactness, 10});
        return lime_image(m, x, c, mask, opt).map;
      };
    } else {
      ShapOptions o;
      o.n_samples = p.get<int>("n_samples", 0);
      o.fill = fill;
      fn = [o, n_segments, compactness](const Classifier& m, const Tensor3& x, int c,
                                        std::uint64_t seed) {
        ShapOptions opt = o;
        opt.seed = mix_seed(seed, 2);
        const SegmentMask mask = segment_image(x, n_segments, mix_seed(seed, 1), {compactness, 10});
        return kernel_shap_image(m, x, c, mask, opt).map;
      };
    }
  } else if (method == "lrp_epsilon") {
    const double eps = p.get<double>("epsilon", kLrpDefaultEpsilon);
    if (!(eps > 0)) fail(ErrorKind::Input, "lrp_epsilon: epsilon must be positive");
    fn = [eps](const Classifier& m, const Tensor3& x, int c, std::uint64_t) {
      return lrp_epsilon(m, x, c, eps);
    };
  } else if (method == "random") {
    fn = [](const Classifier& m, const Tensor3& x, int c, std::uint64_t seed) {
      check_input(m, x);
      Rng rng(mix_seed(seed, 3));
      Grid2 g(x.height(), x.width());
      for (double& v : g.data()) v = rng.uniform();
      return AttributionMap{std::move(g), "random", c, {}};
    };
  }
  p.finish();
  return fn;
}

// ---------------------------------------------------------------------------
// Cells

CellResult evaluate_cell(const Classifier& model, const std::vector<EvalImage>& images,
                         const MethodSpec& method, const EvalConfig& config,
                         const std::string& model_name, const std::string& dataset_name,
                         const Clock& clock) {
  if (images.empty()) fail(ErrorKind::Input, "evaluation sample is empty");
  const Explainer explain = make_explainer(method, config.fill);
  const std::string method_id = canonical_method(method.method);
  std::size_t n = images.size();
  if (config.sample_size > 0) n = std::min(n, static_cast<std::size_t>(config.sample_size));

  // Untimed warm-up calls on the first image.
  for (int w = 0; w < config.warmup; ++w) {
    try {
      const int cls = predict(model, images[0].image).argmax();
      explain(model, images[0].image, cls, mix_seed(config.seed, 0));
    } catch (const std::exception&) {
    }
  }

  CellResult out;
  for (std::size_t i = 0; i < n; ++i) {
    ImageLog log{images[i].id, method_id, model_name, dataset_name};
    try {
      const int cls = predict(model, images[i].image).argmax();
      const double t0 = clock();
      AttributionMap map = explain(model, images[i].image, cls, mix_seed(config.seed, i));
      log.seconds = clock() - t0;
      const FidelityResult fr =
          fidelity_score(model, images[i].image, map.scores, config.q_preserved, config.fill);
      log.c_original = fr.c_original;
      log.c_adversarial = fr.c_adversarial;
      log.fidelity = fr.f;
      out.maps.push_back(std::move(map));
    } catch (const std::exception& e) {
      std::string msg = e.what();
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      log.status = "failed: " + msg;
    }
    out.logs.push_back(std::move(log));
  }
  const auto failed = std::count_if(out.logs.begin(), out.logs.end(),
                                    [](const ImageLog& l) { return l.status != "ok"; });
  if (2 * static_cast<std::size_t>(failed) > n) {
    const auto first = std::find_if(out.logs.begin(), out.logs.end(),
                                    [](const ImageLog& l) { return l.status != "ok"; });
    fail(ErrorKind::Cell, method_id + " failed on " + std::to_string(failed) + " of " +
                              std::to_string(n) + " images; first: " + first->status);
  }
  out.record = record_from_logs(out.logs, config.warmup);
  out.record.method = method_id;
  out.record.model_name = model_name;
  out.record.dataset_name = dataset_name;
  return out;
}

EvalRecord record_from_logs(const std::vector<ImageLog>& logs, int warmup_excluded) {
  EvalRecord r;
  std::vector<double> fid, secs;
  for (const auto& l : logs) {
    if (r.method.empty()) {
      r.method = l.method;
      r.model_name = l.model;
      r.dataset_name = l.dataset;
    }
    if (l.status != "ok") {
      ++r.n_failed;
      continue;
    }
    fid.push_back(l.fidelity);
    secs.push_back(l.seconds);
  }
  r.n_images = static_cast<int>(fid.size());
  r.fidelity_mean = mean_of(fid);
  r.fidelity_std = sample_std(fid);
  if (!secs.empty()) r.timing = timing_from_durations(std::move(secs), warmup_excluded);
  return r;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

}  // namespace

void write_image_logs_csv(const std::filesystem::path& path, const std::vector<ImageLog>& logs) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "image_id,method,model,dataset,c_original,c_adversarial,fidelity,seconds,status\n";
  for (const auto& l : logs) {
    out << csv_field(l.image_id) << ',' << csv_field(l.method) << ',' << csv_field(l.model) << ','
        << csv_field(l.dataset) << ',' << num(l.c_original) << ',' << num(l.c_adversarial) << ','
        << num(l.fidelity) << ',' << num(l.seconds) << ',' << csv_field(l.status) << '\n';
  }
  if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

std::vector<ImageLog> read_image_logs_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<ImageLog> logs;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 9) fail(ErrorKind::Io, "malformed log row in " + path.string());
    ImageLog l{f[0], f[1], f[2], f[3]};
    l.c_original = std::stod(f[4]);
    l.c_adversarial = std::stod(f[5]);
    l.fidelity = std::stod(f[6]);
    l.seconds = std::stod(f[7]);
    l.status = f[8];
    logs.push_back(std::move(l));
  }
  return logs;
}

nlohmann::json to_json(const EvalRecord& r) {
  return {{"method", r.method},
          {"model", r.model_name},
          {"dataset", r.dataset_name},
          {"fidelity_mean", r.fidelity_mean},
          {"fidelity_std", r.fidelity_std},
          {"time_mean", r.timing.mean_seconds},
          {"time_std", r.timing.std_seconds},
          {"time_n", r.timing.n},
          {"warmup_excluded", r.timing.warmup_excluded},
          {"durations", r.timing.durations},
          {"n_images", r.n_images},
          {"n_failed", r.n_failed}};
}

EvalRecord eval_record_from_json(const nlohmann::json& j) {
  EvalRecord r;
  r.method = j.at("method").get<std::string>();
  r.model_name = j.at("model").get<std::string>();
  r.dataset_name = j.at("dataset").get<std::string>();
  r.fidelity_mean = j.at("fidelity_mean").get<double>();
  r.fidelity_std = j.at("fidelity_std").get<double>();
  r.timing.mean_seconds = j.at("time_mean").get<double>();
  r.timing.std_seconds = j.at("time_std").get<double>();
  r.timing.n = j.at("time_n").get<int>();
  r.timing.warmup_excluded = j.value("warmup_excluded", 0);
  r.timing.durations = j.value("durations", std::vector<double>{});
  r.n_images = j.at("n_images").get<int>();
  r.n_failed = j.value("n_failed", 0);
  return r;
}

}  // namespace xai

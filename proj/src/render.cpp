#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "xaikit/error.hpp"
#include "xaikit/report.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace xai {

namespace {

const std::map<std::string, int>& colormaps() {
  static const std::map<std::string, int> maps{
      {"jet", cv::COLORMAP_JET},         {"hot", cv::COLORMAP_HOT},
      {"viridis", cv::COLORMAP_VIRIDIS}, {"inferno", cv::COLORMAP_INFERNO},
      {"magma", cv::COLORMAP_MAGMA},     {"turbo", cv::COLORMAP_TURBO},
      {"bone", cv::COLORMAP_BONE}};
  return maps;
}

int colormap_id(const std::string& name) {
  auto it = colormaps().find(name);
  if (it == colormaps().end()) fail(ErrorKind::Input, "unknown colormap '" + name + "'");
  return it->second;
}

void write_png(const fs::path& path, const cv::Mat& bgr) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  fs::path tmp = path;
  tmp += ".tmp.png";
  if (!cv::imwrite(tmp.string(), bgr)) fail(ErrorKind::Io, "cannot write " + path.string());
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::Io, "cannot write " + path.string() + ": " + ec.message());
}

void put_text(cv::Mat& img, const std::string& text, cv::Point at, double scale = 0.45,
              int thickness = 1, cv::Scalar color = {30, 30, 30}) {
  cv::putText(img, text, at, cv::FONT_HERSHEY_SIMPLEX, scale, color, thickness, cv::LINE_AA);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

const cv::Scalar kPalette[] = {{180, 119, 31}, {14, 127, 255}, {44, 160, 44},  {40, 39, 214},
                               {189, 103, 148}, {75, 86, 140},  {194, 119, 227}, {127, 127, 127}};

}  // namespace

bool known_colormap(const std::string& name) { return colormaps().count(name) > 0; }

Tensor3 render_overlay(const Tensor3& image01, const Grid2& attribution, double alpha,
                       const std::string& colormap) {
  if (image01.empty()) fail(ErrorKind::Input, "render_overlay: empty image");
  if (attribution.height() != image01.height() || attribution.width() != image01.width()) {
    fail(ErrorKind::Input, "render_overlay: attribution is " + std::to_string(attribution.height()) +
                               "x" + std::to_string(attribution.width()) + " but image is " +
                               std::to_string(image01.height()) + "x" +
                               std::to_string(image01.width()));
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail(ErrorKind::Input, "render_overlay: alpha must be in [0,1]");
  if (image01.channels() != 1 && image01.channels() != 3) {
    fail(ErrorKind::Input, "render_overlay: image must have 1 or 3 channels");
  }
  const int cmap = colormap_id(colormap);
  const int H = image01.height(), W = image01.width();

  Tensor3 out(H, W, 3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = image01.at(y, x, image01.channels() == 1 ? 0 : c);

  const auto values = attribution.data();
  const bool all_zero = std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0; });
  if (all_zero || alpha == 0.0) return out;

  const double lo = attribution.min(), hi = attribution.max();
  cv::Mat gray(H, W, CV_8UC1);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double n = hi > lo ? (attribution.at(y, x) - lo) / (hi - lo) : 0.5;
      gray.at<std::uint8_t>(y, x) = cv::saturate_cast<std::uint8_t>(std::lround(n * 255.0));
    }
  cv::Mat colored;
  cv::applyColorMap(gray, colored, cmap);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const cv::Vec3b bgr = colored.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) {
        const double col = bgr[2 - c] / 255.0;
        out.at(y, x, c) = (1.0 - alpha) * out.at(y, x, c) + alpha * col;
      }
    }
  return out;
}

Tensor3 render_overlay(const Tensor3& image, const PreprocessSpec& spec, const Grid2& attribution,
                       double alpha, const std::string& colormap) {
  return render_overlay(denormalize_image(image, spec), attribution, alpha, colormap);
}

json plot_bars(const std::vector<EvalRecord>& records, PlotQuantity quantity, const fs::path& path) {
  if (records.empty()) fail(ErrorKind::Input, "plot_bars: no records");
  const bool fid = quantity == PlotQuantity::Fidelity;

  std::vector<std::string> methods, models;
  for (const auto& r : records) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    if (std::find(models.begin(), models.end(), r.model_name) == models.end()) models.push_back(r.model_name);
  }

  json groups = json::array();
  double ymax = 0.0;
  for (const auto& m : methods) {
    json bars = json::array();
    for (const auto& r : records) {
      if (r.method != m) continue;
      const double mean = fid ? r.fidelity_mean : r.timing.mean_seconds;
      const double sd = fid ? r.fidelity_std : r.timing.std_seconds;
      ymax = std::max(ymax, mean + sd);
      bars.push_back({{"model", r.model_name},
                      {"dataset", r.dataset_name},
                      {"mean", mean},
                      {"std", sd},
                      {"err_low", mean - sd},
                      {"err_high", mean + sd},
                      {"n", fid ? r.n_images : r.timing.n}});
    }
    groups.push_back({{"method", m}, {"bars", std::move(bars)}});
  }
  if (!(ymax > 0.0) || !std::isfinite(ymax)) ymax = 1.0;
  ymax *= 1.1;

  const std::string ylabel = fid ? "Fidelity F = C_a / C_o (ratio)" : "Execution time (seconds)";
  const std::string xlabel = "Explanation method";
  json sidecar{{"quantity", fid ? "fidelity" : "time"},
               {"unit", fid ? "ratio" : "seconds"},
               {"x_label", xlabel},
               {"y_label", ylabel},
               {"error_bars", "+-1 sample standard deviation"},
               {"y_max", ymax},
               {"groups", groups}};

  const int Wd = 160 + 140 * static_cast<int>(methods.size()), Ht = 460;
  const int left = 80, right = Wd - 140, top = 30, bottom = Ht - 70;
  cv::Mat img(Ht, Wd, CV_8UC3, cv::Scalar(255, 255, 255));
  cv::line(img, {left, top}, {left, bottom}, {0, 0, 0}, 1);
  cv::line(img, {left, bottom}, {right, bottom}, {0, 0, 0}, 1);
  auto ypix = [&](double v) {
    return bottom - static_cast<int>(std::lround((bottom - top) * std::clamp(v, 0.0, ymax) / ymax));
  };
  for (int t = 0; t <= 4; ++t) {
    const double v = ymax * t / 4.0;
    const int yp = ypix(v);
    cv::line(img, {left - 4, yp}, {left, yp}, {0, 0, 0}, 1);
    put_text(img, fmt(v), {8, yp + 4}, 0.4);
  }
  const int group_w = (right - left) / static_cast<int>(methods.size());
  const int bar_w = std::max(6, (group_w - 20) / static_cast<int>(models.size()));
  for (std::size_t g = 0; g < methods.size(); ++g) {
    const int gx = left + static_cast<int>(g) * group_w + 10;
    for (const auto& bar : groups[g]["bars"]) {
      const auto mi = static_cast<int>(
          std::find(models.begin(), models.end(), bar["model"].get<std::string>()) - models.begin());
      const int x0 = gx + mi * bar_w, x1 = x0 + bar_w - 4;
      const double mean = bar["mean"], sd = bar["std"];
      cv::rectangle(img, {x0, ypix(mean)}, {x1, bottom}, kPalette[mi % 8], cv::FILLED);
      const int xc = (x0 + x1) / 2;
      cv::line(img, {xc, ypix(mean - sd)}, {xc, ypix(mean + sd)}, {0, 0, 0}, 1);
      cv::line(img, {xc - 4, ypix(mean - sd)}, {xc + 4, ypix(mean - sd)}, {0, 0, 0}, 1);
      cv::line(img, {xc - 4, ypix(mean + sd)}, {xc + 4, ypix(mean + sd)}, {0, 0, 0}, 1);
    }
    put_text(img, methods[g], {gx, bottom + 18}, 0.4);
  }
  for (std::size_t m = 0; m < models.size(); ++m) {
    const int yl = top + 18 * static_cast<int>(m);
    cv::rectangle(img, {right + 10, yl}, {right + 22, yl + 12}, kPalette[m % 8], cv::FILLED);
    put_text(img, models[m], {right + 28, yl + 11}, 0.4);
  }
  put_text(img, xlabel, {left + (right - left) / 2 - 60, Ht - 20}, 0.5);
  put_text(img, ylabel, {left, top - 10}, 0.5);

  write_png(path, img);
  fs::path side = path;
  side += ".values.json";
  write_file_atomic(side, sidecar.dump(2));
  return sidecar;
}

json to_json(const ConfusionMatrix& cm) {
  return {{"class_names", cm.class_names}, {"counts", cm.counts}, {"total", cm.total()},
          {"trace", cm.trace()}};
}

json to_json(const MetricsReport& m) {
  json per = json::array();
  for (const auto& c : m.per_class) {
    per.push_back({{"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}, {"support", c.support}});
  }
  return {{"accuracy", m.accuracy},
          {"precision", m.precision},
          {"recall", m.recall},
          {"f1", m.f1},
          {"averaging", m.averaging == Averaging::Weighted ? "weighted" : "macro"},
          {"per_class", std::move(per)},
          {"warnings", m.warnings}};
}

json plot_confusion_matrix(const ConfusionMatrix& cm, const fs::path& path) {
  const int n = cm.n_classes();
  if (n == 0) fail(ErrorKind::Input, "plot_confusion_matrix: empty matrix");
  const int cell = 64, left = 120, top = 50;
  cv::Mat img(top + n * cell + 60, left + n * cell + 20, CV_8UC3, cv::Scalar(255, 255, 255));
  for (int t = 0; t < n; ++t) {
    std::int64_t row = 0;
    for (auto v : cm.counts[t]) row += v;
    for (int p = 0; p < n; ++p) {
      const std::int64_t v = cm.counts[t][p];
      const double frac = row > 0 ? static_cast<double>(v) / static_cast<double>(row) : 0.0;
      const int shade = static_cast<int>(std::lround(255 - 200 * frac));
      const cv::Point a{left + p * cell, top + t * cell};
      cv::rectangle(img, a, a + cv::Point(cell, cell), cv::Scalar(255, shade, shade), cv::FILLED);
      cv::rectangle(img, a, a + cv::Point(cell, cell), cv::Scalar(160, 160, 160), 1);
      put_text(img, std::to_string(v), a + cv::Point(8, cell / 2 + 5), 0.5,
               1, frac > 0.6 ? cv::Scalar(255, 255, 255) : cv::Scalar(20, 20, 20));
    }
    const std::string name = t < static_cast<int>(cm.class_names.size()) ? cm.class_names[t] : std::to_string(t);
    put_text(img, name, {6, top + t * cell + cell / 2 + 5}, 0.45);
    put_text(img, name, {left + t * cell + 4, top + n * cell + 18}, 0.4);
  }
  put_text(img, "Predicted label", {left, top + n * cell + 45}, 0.5);
  put_text(img, "True label (rows)", {6, 30}, 0.5);

  write_png(path, img);
  json sidecar = to_json(cm);
  fs::path side = path;
  side += ".values.json";
  write_file_atomic(side, sidecar.dump(2));
  return sidecar;
}

}  // namespace xai

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "support.hpp"
#include "xaikit/report.hpp"

using namespace xai;
using namespace xai::test;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  DatasetConfig d;
  d.name = "shapes";
  d.kind = "synthetic";
  d.n_per_class = 10;
  c.datasets.push_back(d);
  ModelConfig m;
  m.name = "net";
  c.models.push_back(m);
  c.explainers.push_back({"ig", "integrated_gradients", {{"steps", 16}}});
  c.explainers.push_back({"gradcam", "grad_cam", json::object()});
  return c;
}

EvalRecord record(const std::string& method, const std::string& model, double fid, double fid_sd) {
  EvalRecord r;
  r.method = method;
  r.model_name = model;
  r.dataset_name = "shapes";
  r.fidelity_mean = fid;
  r.fidelity_std = fid_sd;
  r.timing = timing_from_durations({0.01, 0.02, 0.03}, 1);
  r.n_images = 3;
  return r;
}

void write_json(const fs::path& p, const json& j) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << j.dump(2);
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(cell);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

TEST_SUITE("percent formatting") {
  TEST_CASE("half-even rounding of the shortest representation") {
    CHECK(format_percent(0.98775) == "98.78");
    CHECK(format_percent(0.98765) == "98.76");
    CHECK(format_percent(0.5) == "50.00");
    CHECK(format_percent(1.0) == "100.00");
    CHECK(format_percent(0.0) == "0.00");
    CHECK(format_percent(0.999999) == "100.00");
    CHECK(format_percent(0.00005) == "0.00");
    CHECK(format_percent(0.00015) == "0.02");
  }

  TEST_CASE("matches integer arithmetic on seven-digit fractions") {
    Rng rng(12);
    for (int trial = 0; trial < 5000; ++trial) {
      const std::uint64_t k = rng.below(10'000'000);
      const double v = static_cast<double>(k) / 1e7;
      // v * 1e4 = k / 1000; round half to even on the remainder
      std::uint64_t q = k / 1000;
      const std::uint64_t r = k % 1000;
      if (r > 500 || (r == 500 && q % 2 == 1)) ++q;
      char want[32];
      std::snprintf(want, sizeof want, "%llu.%02llu", static_cast<unsigned long long>(q / 100),
                    static_cast<unsigned long long>(q % 100));
      CAPTURE(k);
      CHECK(format_percent(v) == want);
    }
  }
}

TEST_SUITE("experiment config") {
  TEST_CASE("JSON round trip") {
    ExperimentConfig c = small_config();
    c.evaluator.q_preserved = 0.3;
    c.outputs.formats = {"csv"};
    const ExperimentConfig back = experiment_config_from_json(to_json(c));
    CHECK(back == c);
    CHECK(to_json(back) == to_json(c));
  }

  TEST_CASE("hash ignores outputs and runtime but not the experiment") {
    const ExperimentConfig c = small_config();
    const std::string h = config_hash(c);
    CHECK(h.size() == 64);
    CHECK(config_hash(c) == h);
    ExperimentConfig o = c;
    o.outputs.dir = "elsewhere";
    o.outputs.colormap = "viridis";
    o.workers = 4;
    CHECK(config_hash(o) == h);
    ExperimentConfig e = c;
    e.evaluator.seed = 1;
    CHECK(config_hash(e) != h);
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  }

  TEST_CASE("structural errors") {
    json j = to_json(small_config());
    j["surprise"] = 1;
    CHECK(error_kind([&] { experiment_config_from_json(j); }) == ErrorKind::Config);
    j = to_json(small_config());
    j["schema_version"] = 2;
    CHECK(error_kind([&] { experiment_config_from_json(j); }) == ErrorKind::Config);
    j = to_json(small_config());
    j["datasets"] = json::object();
    CHECK(error_kind([&] { experiment_config_from_json(j); }) == ErrorKind::Config);
    j = to_json(small_config());
    j["evaluator"]["q_preserved"] = "a lot";
    CHECK(error_kind([&] { experiment_config_from_json(j); }) == ErrorKind::Config);
  }

  TEST_CASE("semantic validation") {
    CHECK_NOTHROW(validate_config(small_config()));
    auto broken = [](auto edit) {
      ExperimentConfig c = small_config();
      edit(c);
      return error_kind([&] { validate_config(c); });
    };
    CHECK(broken([](ExperimentConfig& c) { c.explainers.clear(); }) == ErrorKind::Config);
    CHECK(broken([](ExperimentConfig& c) { c.models.push_back(c.models[0]); }) == ErrorKind::Config);
    CHECK(broken([](ExperimentConfig& c) { c.explainers[0].method = "telepathy"; }) == ErrorKind::Config);
    CHECK(broken([](ExperimentConfig& c) { c.evaluator.q_preserved = 0.0; }) == ErrorKind::Config);
    CHECK(broken([](ExperimentConfig& c) { c.outputs.formats = {"xlsx"}; }) == ErrorKind::Config);
    CHECK(broken([](ExperimentConfig& c) { c.outputs.overlay_alpha = 1.5; }) == ErrorKind::Config);
    CHECK(broken([](ExperimentConfig& c) { c.models[0].architecture = "resnet9000"; }) == ErrorKind::Config);
    CHECK(broken([](ExperimentConfig& c) { c.models[0].train.epochs = 0; }) == ErrorKind::Config);
    CHECK(broken([](ExperimentConfig& c) { c.models[0].checkpoint = "/nonexistent/ckpt"; }) ==
          ErrorKind::Config);
    CHECK(broken([](ExperimentConfig& c) {
            c.datasets[0].kind = "directory";
            c.datasets[0].root = "/nonexistent/data";
          }) == ErrorKind::Config);
    CHECK(broken([](ExperimentConfig& c) { c.datasets[0].name = "a__b"; }) == ErrorKind::Config);
  }

  TEST_CASE("cell filter") {
    const CellFilter f = parse_cell_filter("model=net,method=grad_cam");
    CHECK(f.matches("any", "net", "grad_cam"));
    CHECK_FALSE(f.matches("any", "net", "saliency"));
    CHECK(parse_cell_filter("").matches("a", "b", "c"));
    CHECK(error_kind([] { parse_cell_filter("colour=red"); }) == ErrorKind::Config);
    CHECK(error_kind([] { parse_cell_filter("model"); }) == ErrorKind::Config);
  }
}

TEST_SUITE("overlay") {
  TEST_CASE("zero alpha or an all-zero map returns the image") {
    const Tensor3 img = random_image({12, 10, 3}, 4, 0.2);
    Tensor3 clipped = img;
    for (double& v : clipped.values()) v = std::clamp(v + 0.5, 0.0, 1.0);
    Grid2 map(12, 10);
    CHECK(render_overlay(clipped, map, 0.7) == clipped);
    map.at(3, 3) = 1.0;
    CHECK(render_overlay(clipped, map, 0.0) == clipped);
  }

  TEST_CASE("a constant map tints uniformly and alpha one shows only the colormap") {
    const Tensor3 img(8, 8, 3, 0.25);
    const Tensor3 out = render_overlay(img, Grid2(8, 8, 3.0), 0.5);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x)
        for (int c = 0; c < 3; ++c) CHECK(out.at(y, x, c) == out.at(0, 0, c));

    Grid2 ramp(8, 8);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) ramp.at(y, x) = x;
    const Tensor3 a = render_overlay(Tensor3(8, 8, 3, 0.0), ramp, 1.0);
    const Tensor3 b = render_overlay(Tensor3(8, 8, 3, 1.0), ramp, 1.0);
    CHECK(a == b);
    CHECK(a.at(0, 0, 2) > a.at(0, 0, 0));  // jet: low end is blue
    CHECK(a.at(0, 7, 0) > a.at(0, 7, 2));  // high end is red
  }

  TEST_CASE("grayscale images gain three channels") {
    const Tensor3 out = render_overlay(Tensor3(5, 5, 1, 0.4), Grid2(5, 5), 0.5);
    CHECK(out.shape() == Shape3{5, 5, 3});
    for (double v : out.values()) CHECK(v == 0.4);
  }

  TEST_CASE("argument errors") {
    const Tensor3 img(8, 8, 3, 0.5);
    CHECK(error_kind([&] { render_overlay(img, Grid2(8, 9), 0.5); }) == ErrorKind::Input);
    CHECK(error_kind([&] { render_overlay(img, Grid2(8, 8), -0.1); }) == ErrorKind::Input);
    CHECK(error_kind([&] { render_overlay(img, Grid2(8, 8), 0.5, "sepia"); }) == ErrorKind::Input);
    CHECK(known_colormap("jet"));
    CHECK_FALSE(known_colormap("sepia"));
  }
}

TEST_SUITE("plots and tables") {
  TEST_CASE("bar sidecar reproduces the plotted statistics") {
    const auto dir = temp_dir("bars");
    const std::vector<EvalRecord> recs{record("ig", "a", 0.8, 0.1), record("ig", "b", 0.6, 0.0),
                                       record("shap", "a", 0.9, 0.05)};
    const json s = plot_bars(recs, PlotQuantity::Fidelity, dir / "f.png");
    CHECK(fs::exists(dir / "f.png"));
    CHECK(json::parse(read_file(dir / "f.png.values.json")) == s);
    REQUIRE(s["groups"].size() == 2);
    const auto& ig = s["groups"][0]["bars"];
    REQUIRE(ig.size() == 2);
    CHECK(ig[0]["mean"] == 0.8);
    CHECK(ig[0]["err_high"].get<double>() - ig[0]["err_low"].get<double>() == doctest::Approx(0.2));
    CHECK(ig[1]["err_low"] == ig[1]["err_high"]);
    CHECK(ig[0]["n"] == 3);

    const json t = plot_bars(recs, PlotQuantity::Time, dir / "t.png");
    CHECK(t["unit"] == "seconds");
    CHECK(t["groups"][0]["bars"][0]["mean"].get<double>() == doctest::Approx(0.02));
    CHECK(t["groups"][0]["bars"][0]["n"] == 3);
    CHECK(error_kind([&] { plot_bars({}, PlotQuantity::Time, dir / "x.png"); }) == ErrorKind::Input);
    fs::remove_all(dir);
  }

  TEST_CASE("confusion matrix sidecar carries the counts") {
    const auto dir = temp_dir("cm");
    ConfusionMatrix cm{{{3, 2}, {1, 2}}, {"cat", "dog"}};
    const json s = plot_confusion_matrix(cm, dir / "cm.png");
    CHECK(fs::exists(dir / "cm.png"));
    CHECK(s == to_json(cm));
    CHECK(s.dump().find("cat") != std::string::npos);
    fs::remove_all(dir);
  }

  TEST_CASE("exported tables agree across formats") {
    const auto bundle = temp_dir("tables");
    write_json(bundle / "models" / "shapes__net" / "metrics.json",
               {{"dataset", "shapes"},
                {"model", "net"},
                {"metrics", {{"accuracy", 0.98775}, {"precision", 0.5}, {"recall", 0.98775}, {"f1", 1.0 / 3}}}});
    write_json(bundle / "cells" / "c1" / "record.json", {{"record", to_json(record("ig", "net", 0.75, 0.125))}});
    write_json(bundle / "cells" / "c2" / "record.json",
               {{"record", to_json(record("shap", "net", 1.0 / 3, 0.0))}});

    const auto written = export_tables(bundle, {"csv", "json"});
    CHECK(written.size() == 4);
    const auto mcsv = read_csv(bundle / "tables" / "metrics.csv");
    REQUIRE(mcsv.size() == 2);
    CHECK(mcsv[1] == std::vector<std::string>{"shapes", "net", "98.78", "50.00", "98.78", "33.33"});
    const json mj = json::parse(read_file(bundle / "tables" / "metrics.json"));
    CHECK(mj["unit"] == "percent");
    CHECK(mj["rows"][0]["accuracy"] == 98.78);

    const auto ecsv = read_csv(bundle / "tables" / "evaluation.csv");
    const json ej = json::parse(read_file(bundle / "tables" / "evaluation.json"));
    REQUIRE(ecsv.size() == 3);
    REQUIRE(ej["rows"].size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
      const auto& row = ecsv[i + 1];
      const auto& r = ej["rows"][i];
      CHECK(row[0] == r["method"].get<std::string>());
      CHECK(std::stod(row[3]) == r["fidelity_mean"].get<double>());
      CHECK(std::stod(row[5]) == r["time_mean"].get<double>());
      CHECK(std::stoi(row[7]) == r["n_images"].get<int>());
    }
    CHECK(ej["rows"][1]["fidelity_mean"].get<double>() == 1.0 / 3);
    CHECK(collect_records(bundle).size() == 2);
    CHECK(error_kind([&] { export_tables(bundle, {"xlsx"}); }) == ErrorKind::Input);
    fs::remove_all(bundle);
  }
}

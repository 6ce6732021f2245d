// Command-line front end over the xaikit C API.
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "xaikit/xaikit.h"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitFatal = 3;

int report_error(const char* what, xai_status st) {
  std::fprintf(stderr, "xaikit: %s failed (%s): %s\n", what, xai_status_name(st), xai_last_error());
  return st == XAI_ERR_CONFIG || st == XAI_ERR_INPUT ? kExitValidation : kExitFatal;
}

int cmd_run(const std::string& config, bool resume, const std::vector<std::string>& only, bool quiet) {
  std::string filter;
  for (const auto& o : only) filter += (filter.empty() ? "" : ",") + o;
  int exit_code = 0;
  const xai_status st =
      xai_run_experiment(config.c_str(), resume ? 1 : 0, filter.empty() ? nullptr : filter.c_str(),
                         quiet ? 0 : 1, &exit_code);
  if (st != XAI_OK) return report_error("run", st);
  if (exit_code != 0) std::fprintf(stderr, "xaikit: some cells failed; see failures.json\n");
  return exit_code;
}

int cmd_explain(const std::string& model_path, const std::string& image_path, const std::string& method,
                const std::string& params, const std::string& out_dir, int class_idx, std::uint64_t seed,
                double alpha) {
  xai_model* model = nullptr;
  xai_image* image = nullptr;
  xai_map* map = nullptr;
  int rc = kExitOk;
  xai_status st = xai_model_load(model_path.c_str(), &model);
  if (st != XAI_OK) return report_error("loading model", st);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  const std::string stem = fs::path(image_path).stem().string() + "_" + method;
  const std::string map_path = (fs::path(out_dir) / (stem + ".json")).string();
  const std::string png_path = (fs::path(out_dir) / (stem + "_overlay.png")).string();
  std::vector<double> probs(static_cast<std::size_t>(xai_model_num_classes(model)));
  int predicted = -1;

  if ((st = xai_image_load(model, image_path.c_str(), &image)) != XAI_OK) {
    rc = report_error("loading image", st);
  } else if ((st = xai_predict(model, image, probs.data(), probs.size(), &predicted)) != XAI_OK) {
    rc = report_error("predict", st);
  } else if ((st = xai_explain(model, image, method.c_str(), params.c_str(), class_idx, seed, &map)) != XAI_OK) {
    rc = report_error("explain", st);
  } else if ((st = xai_map_save_json(map, map_path.c_str())) != XAI_OK) {
    rc = report_error("writing map", st);
  } else if ((st = xai_render_overlay(model, image, map, alpha, "jet", png_path.c_str())) != XAI_OK) {
    rc = report_error("rendering overlay", st);
  } else {
    const char* name = xai_model_class_name(model, predicted);
    std::printf("predicted %s (p=%.4f)\nexplained class %d with %s\nmap: %s\noverlay: %s\n",
                name ? name : "?", probs[static_cast<std::size_t>(predicted)], xai_map_class(map),
                xai_map_method(map), map_path.c_str(), png_path.c_str());
  }
  xai_map_free(map);
  xai_image_free(image);
  xai_model_free(model);
  return rc;
}

int cmd_report(const std::string& bundle, const std::string& formats) {
  const xai_status st = xai_report(bundle.c_str(), formats.c_str());
  if (st != XAI_OK) return report_error("report", st);
  std::printf("tables and plots written under %s\n", bundle.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xaikit: explanation benchmarking for image classifiers"};
  app.set_version_flag("--version", std::string(xai_version()));
  app.require_subcommand(1);

  std::string config;
  bool resume = false, quiet = false;
  std::vector<std::string> only;
  auto* run = app.add_subcommand("run", "Run an experiment from a JSON config");
  run->add_option("--config", config, "Experiment config file")->required()->check(CLI::ExistingFile);
  run->add_flag("--resume", resume, "Reuse completed models and cells");
  run->add_option("--only", only, "Restrict cells: dataset=...,model=...,method=...")->delimiter(',');
  run->add_flag("-q,--quiet", quiet, "Suppress progress output");

  std::string model, image, method, out_dir = ".", params = "{}";
  int class_idx = -1;
  std::uint64_t seed = 0;
  double alpha = 0.5;
  auto* explain = app.add_subcommand("explain", "Explain one image with a saved checkpoint");
  explain->add_option("--model", model, "Checkpoint file")->required()->check(CLI::ExistingFile);
  explain->add_option("--image", image, "Image file")->required()->check(CLI::ExistingFile);
  explain->add_option("--method", method, "Explanation method")->required();
  explain->add_option("--out", out_dir, "Output directory");
  explain->add_option("--params", params, "Method parameters as JSON");
  explain->add_option("--class", class_idx, "Class to explain (default: predicted)");
  explain->add_option("--seed", seed, "Seed for sampling methods");
  explain->add_option("--alpha", alpha, "Overlay opacity")->check(CLI::Range(0.0, 1.0));

  std::string bundle, formats = "csv,json";
  auto* report = app.add_subcommand("report", "Rebuild tables and plots of a bundle");
  report->add_option("--bundle", bundle, "Bundle directory")->required()->check(CLI::ExistingDirectory);
  report->add_option("--formats", formats, "Comma-separated: csv,json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }

  if (*run) return cmd_run(config, resume, only, quiet);
  if (*explain) return cmd_explain(model, image, method, params, out_dir, class_idx, seed, alpha);
  return cmd_report(bundle, formats);
}

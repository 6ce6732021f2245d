#include "xaikit/data.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "xaikit/error.hpp"

namespace fs = std::filesystem;

namespace xai {

const char* to_string(Split s) noexcept {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  fail(ErrorKind::Input, "unknown split '" + s + "'");
}

bool DatasetManifest::has_provided_splits() const {
  return std::any_of(items.begin(), items.end(),
                     [](const DatasetItem& i) { return !i.provided_split.empty(); });
}

namespace {

bool has_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

// Maps a top-level directory name to a split tag, or "" if it is not one.
std::string split_dir_tag(const std::string& name) {
  std::string n = name;
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::tolower(c); });
  if (n == "train" || n == "training") return "train";
  if (n == "val" || n == "valid" || n == "validation") return "val";
  if (n == "test" || n == "testing") return "test";
  return "";
}

std::vector<fs::path> sorted_subdirs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

DatasetManifest scan_dataset(const fs::path& root_in, const std::string& name) {
  std::error_code ec;
  const fs::path root = fs::weakly_canonical(root_in, ec);
  if (ec || !fs::is_directory(root)) {
    fail(ErrorKind::Ingest, "dataset root is not a directory: " + root_in.string());
  }
  DatasetManifest m;
  m.name = name;
  m.root = root.string();

  // (split tag, class dir) pairs to scan.
  std::vector<std::pair<std::string, fs::path>> class_dirs;
  const auto top = sorted_subdirs(root);
  const bool split_layout = std::any_of(top.begin(), top.end(), [](const fs::path& p) {
    return !split_dir_tag(p.filename().string()).empty();
  });
  if (split_layout) {
    for (const auto& d : top) {
      const std::string tag = split_dir_tag(d.filename().string());
      if (tag.empty()) {
        m.warnings.push_back("ignoring non-split directory '" + d.filename().string() + "'");
        continue;
      }
      for (const auto& c : sorted_subdirs(d)) class_dirs.emplace_back(tag, c);
    }
  } else {
    for (const auto& c : top) class_dirs.emplace_back("", c);
  }
  if (class_dirs.empty()) fail(ErrorKind::Ingest, "no class directories under " + m.root);

  std::vector<std::string> classes;
  for (const auto& [tag, dir] : class_dirs) classes.push_back(dir.filename().string());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  m.classes = classes;

  for (const auto& [tag, dir] : class_dirs) {
    const std::string cls = dir.filename().string();
    const int label = static_cast<int>(
        std::lower_bound(classes.begin(), classes.end(), cls) - classes.begin());
    int found = 0;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && has_image_extension(e.path())) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      if (!image_readable(f)) {
        ++m.skipped_unreadable;
        m.warnings.push_back("skipping unreadable image " + f.string());
        continue;
      }
      DatasetItem item;
      item.id = fs::relative(f, root).generic_string();
      item.path = f.string();
      item.label = label;
      item.provided_split = tag;
      m.items.push_back(std::move(item));
      ++found;
    }
    if (found == 0) {
      fail(ErrorKind::Ingest, "class '" + cls + "' has no readable images in " + dir.string());
    }
  }
  std::sort(m.items.begin(), m.items.end(),
            [](const DatasetItem& a, const DatasetItem& b) { return a.id < b.id; });
  return m;
}

nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& i : m.items) {
    nlohmann::json j{{"id", i.id}, {"path", i.path}, {"label", i.label}};
    if (!i.provided_split.empty()) j["provided_split"] = i.provided_split;
    items.push_back(std::move(j));
  }
  return {{"schema_version", kManifestSchemaVersion},
          {"name", m.name},
          {"root", m.root},
          {"classes", m.classes},
          {"skipped_unreadable", m.skipped_unreadable},
          {"items", std::move(items)}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  if (j.value("schema_version", 0) != kManifestSchemaVersion) {
    fail(ErrorKind::Config, "unsupported manifest schema version");
  }
  DatasetManifest m;
  m.name = j.at("name").get<std::string>();
  m.root = j.at("root").get<std::string>();
  m.classes = j.at("classes").get<std::vector<std::string>>();
  m.skipped_unreadable = j.value("skipped_unreadable", 0);
  for (const auto& it : j.at("items")) {
    DatasetItem i;
    i.id = it.at("id").get<std::string>();
    i.path = it.at("path").get<std::string>();
    i.label = it.at("label").get<int>();
    i.provided_split = it.value("provided_split", std::string{});
    m.items.push_back(std::move(i));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Splits

const char* to_string(SplitPolicy p) noexcept {
  switch (p) {
    case SplitPolicy::CarveValFromTrain: return "carve_val_from_train";
    case SplitPolicy::MergeThenCarve: return "merge_then_carve";
    case SplitPolicy::Fresh70_10_20: return "fresh_70_10_20";
  }
  return "fresh_70_10_20";
}

SplitPolicy parse_split_policy(const std::string& s) {
  if (s == "carve_val_from_train") return SplitPolicy::CarveValFromTrain;
  if (s == "merge_then_carve") return SplitPolicy::MergeThenCarve;
  if (s == "fresh_70_10_20") return SplitPolicy::Fresh70_10_20;
  fail(ErrorKind::Config, "unknown split policy '" + s + "'");
}

std::size_t SplitAssignment::count(Split s) const {
  return static_cast<std::size_t>(std::count_if(
      assignment.begin(), assignment.end(), [s](const auto& kv) { return kv.second == s; }));
}

std::vector<std::string> SplitAssignment::ids(Split s) const {
  std::vector<std::string> out;
  for (const auto& [id, sp] : assignment) {
    if (sp == s) out.push_back(id);
  }
  return out;
}

namespace {

std::size_t floor_fraction(double f, std::size_t n) {
  return static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9));
}

}  // namespace

SplitAssignment make_splits(const DatasetManifest& manifest, SplitPolicy policy,
                            std::uint64_t seed) {
  if (manifest.items.empty()) fail(ErrorKind::Config, "manifest has no items");
  const int n_classes = static_cast<int>(manifest.classes.size());
  bool has_train = false, has_val = false, has_test = false, untagged = false;
  for (const auto& i : manifest.items) {
    if (i.provided_split == "train") has_train = true;
    else if (i.provided_split == "val") has_val = true;
    else if (i.provided_split == "test") has_test = true;
    else untagged = true;
  }
  if (policy != SplitPolicy::Fresh70_10_20) {
    const std::string name = to_string(policy);
    if (!has_train || untagged) {
      fail(ErrorKind::Config, name + " needs a provided train split for every item");
    }
    if (!has_test) fail(ErrorKind::Config, name + " needs a provided test split");
    if (policy == SplitPolicy::CarveValFromTrain && has_val) {
      fail(ErrorKind::Config, "carve_val_from_train would discard the provided val split; use "
                              "merge_then_carve");
    }
  }

  SplitAssignment out;
  out.policy = policy;
  out.seed = seed;
  for (int c = 0; c < n_classes; ++c) {
    std::vector<std::string> pool;
    for (const auto& i : manifest.items) {
      if (i.label != c) continue;
      if (policy != SplitPolicy::Fresh70_10_20 && i.provided_split == "test") {
        out.assignment[i.id] = Split::Test;
      } else {
        pool.push_back(i.id);
      }
    }
    std::sort(pool.begin(), pool.end());
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(policy)));
    rng.shuffle(pool);
    std::size_t n_test = 0, n_val = 0;
    if (policy == SplitPolicy::Fresh70_10_20) {
      n_test = floor_fraction(0.2, pool.size());
      n_val = floor_fraction(0.1, pool.size());
    } else {
      n_val = floor_fraction(0.2, pool.size());
    }
    for (std::size_t k = 0; k < pool.size(); ++k) {
      Split s = Split::Train;
      if (k < n_test) s = Split::Test;
      else if (k < n_test + n_val) s = Split::Val;
      out.assignment[pool[k]] = s;
    }
  }
  if (out.assignment.size() != manifest.items.size()) {
    fail(ErrorKind::Config, "manifest ids are not unique");
  }
  return out;
}

nlohmann::json to_json(const SplitAssignment& s) {
  nlohmann::json a = nlohmann::json::object();
  for (const auto& [id, sp] : s.assignment) a[id] = to_string(sp);
  return {{"schema_version", kSplitSchemaVersion},
          {"policy", to_string(s.policy)},
          {"seed", s.seed},
          {"counts",
           {{"train", s.count(Split::Train)},
            {"val", s.count(Split::Val)},
            {"test", s.count(Split::Test)}}},
          {"assignment", std::move(a)}};
}

SplitAssignment split_from_json(const nlohmann::json& j) {
  if (j.value("schema_version", 0) != kSplitSchemaVersion) {
    fail(ErrorKind::Config, "unsupported split schema version");
  }
  SplitAssignment s;
  s.policy = parse_split_policy(j.at("policy").get<std::string>());
  s.seed = j.at("seed").get<std::uint64_t>();
  for (auto it = j.at("assignment").begin(); it != j.at("assignment").end(); ++it) {
    s.assignment[it.key()] = parse_split(it.value().get<std::string>());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Preprocessing

PreprocessSpec PreprocessSpec::identity(int size, int channels) {
  PreprocessSpec p;
  p.height = p.width = size;
  p.channels = channels;
  p.mean.assign(static_cast<std::size_t>(channels), 0.0);
  p.std.assign(static_cast<std::size_t>(channels), 1.0);
  return p;
}

nlohmann::json to_json(const PreprocessSpec& p) {
  return {{"height", p.height}, {"width", p.width}, {"channels", p.channels},
          {"mean", p.mean},     {"std", p.std}};
}

PreprocessSpec preprocess_from_json(const nlohmann::json& j) {
  PreprocessSpec p;
  if (j.contains("size")) p.height = p.width = j.at("size").get<int>();
  p.height = j.value("height", p.height);
  p.width = j.value("width", p.width);
  p.channels = j.value("channels", p.channels);
  if (p.channels == 1 && !j.contains("mean")) {
    p.mean = {0.449};
    p.std = {0.226};
  }
  p.mean = j.value("mean", p.mean);
  p.std = j.value("std", p.std);
  return p;
}

namespace {

void check_spec(const PreprocessSpec& s) {
  if (s.channels != 1 && s.channels != 3) fail(ErrorKind::Config, "channels must be 1 or 3");
  if (s.height < 8 || s.width < 8) fail(ErrorKind::Config, "preprocess size must be >= 8");
  if (static_cast<int>(s.mean.size()) != s.channels ||
      static_cast<int>(s.std.size()) != s.channels) {
    fail(ErrorKind::Config, "normalization mean/std need one value per channel");
  }
  for (double v : s.std) {
    if (!(v > 0)) fail(ErrorKind::Config, "normalization std must be positive");
  }
}

}  // namespace

bool image_readable(const fs::path& path) {
  try {
    return cv::haveImageReader(path.string());
  } catch (const cv::Exception&) {
    return false;
  }
}

Tensor3 load_image(const fs::path& path, int channels) {
  cv::Mat m;
  try {
    m = cv::imread(path.string(),
                   (channels == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR) | cv::IMREAD_ANYDEPTH);
  } catch (const cv::Exception& e) {
    fail(ErrorKind::Ingest, "cannot decode " + path.string() + ": " + e.what());
  }
  if (m.empty()) fail(ErrorKind::Ingest, "cannot decode image " + path.string());
  if (channels == 3) cv::cvtColor(m, m, cv::COLOR_BGR2RGB);
  const double scale = m.depth() == CV_16U ? 65535.0 : m.depth() == CV_8U ? 255.0 : 1.0;
  m.convertTo(m, CV_64F, 1.0 / scale);
  Tensor3 out(m.rows, m.cols, channels);
  for (int y = 0; y < m.rows; ++y) {
    const double* row = m.ptr<double>(y);
    std::copy(row, row + static_cast<std::ptrdiff_t>(m.cols) * channels, out.ptr(y, 0));
  }
  return out;
}

void save_image(const fs::path& path, const Tensor3& image01) {
  const int C = image01.channels();
  if (C != 1 && C != 3) fail(ErrorKind::Input, "save_image needs 1 or 3 channels");
  cv::Mat m(image01.height(), image01.width(), C == 1 ? CV_8UC1 : CV_8UC3);
  for (int y = 0; y < m.rows; ++y) {
    unsigned char* row = m.ptr<unsigned char>(y);
    for (int x = 0; x < m.cols; ++x)
      for (int c = 0; c < C; ++c) {
        const double v = std::clamp(image01.at(y, x, c), 0.0, 1.0);
        // OpenCV stores BGR.
        row[x * C + (C == 3 ? 2 - c : 0)] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
  }
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), m);
  } catch (const cv::Exception&) {
    ok = false;
  }
  if (!ok) fail(ErrorKind::Io, "cannot write image " + path.string());
}

Tensor3 normalize_image(const Tensor3& image01, const PreprocessSpec& spec) {
  check_spec(spec);
  if (image01.channels() != spec.channels) {
    fail(ErrorKind::Input, "image channel count does not match preprocessing spec");
  }
  Tensor3 r = resize_bilinear(image01, spec.height, spec.width);
  const int C = spec.channels;
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = (r[i] - spec.mean[i % C]) / spec.std[i % C];
  return r;
}

Tensor3 denormalize_image(const Tensor3& image, const PreprocessSpec& spec) {
  check_spec(spec);
  if (image.channels() != spec.channels) {
    fail(ErrorKind::Input, "image channel count does not match preprocessing spec");
  }
  Tensor3 r = image;
  const int C = spec.channels;
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = r[i] * spec.std[i % C] + spec.mean[i % C];
  return r;
}

Tensor3 preprocess(const fs::path& path, const PreprocessSpec& spec) {
  check_spec(spec);
  return normalize_image(load_image(path, spec.channels), spec);
}

}  // namespace xai

#include <fstream>
#include <sstream>
#include <system_error>

#include "xaikit/error.hpp"
#include "xaikit/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace xai {

namespace {

constexpr const char* kFormat = "xaikit-checkpoint";

json shape_json(Shape3 s) { return json::array({s.height, s.width, s.channels}); }

Shape3 shape_from(const json& j) {
  if (!j.is_array() || j.size() != 3) fail(ErrorKind::Config, "shape must be [height, width, channels]");
  return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

}  // namespace

json architecture_to_json(const Sequential& model) {
  json layers = json::array();
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    const Layer& l = model.layer(i);
    json e{{"type", to_string(l.kind())}, {"name", l.name()}};
    if (const auto* c = dynamic_cast<const Conv2d*>(&l)) {
      e["in"] = c->in_channels();
      e["out"] = c->out_channels();
      e["kernel"] = c->kernel();
      e["bias"] = c->has_bias();
    } else if (const auto* d = dynamic_cast<const Dense*>(&l)) {
      e["in"] = d->in_features();
      e["out"] = d->out_features();
      e["bias"] = d->has_bias();
    } else if (const auto* p = dynamic_cast<const AvgPool2d*>(&l)) {
      e["size"] = p->size();
    } else if (const auto* p = dynamic_cast<const MaxPool2d*>(&l)) {
      e["size"] = p->size();
    }
    layers.push_back(std::move(e));
  }
  return {{"input_shape", shape_json(model.input_shape())}, {"layers", std::move(layers)}};
}

Sequential architecture_from_json(const json& j) {
  try {
    Sequential model(shape_from(j.at("input_shape")));
    for (const auto& e : j.at("layers")) {
      const std::string type = e.at("type").get<std::string>();
      const std::string name = e.at("name").get<std::string>();
      if (type == "conv2d") {
        model.emplace<Conv2d>(name, e.at("in").get<int>(), e.at("out").get<int>(),
                              e.at("kernel").get<int>(), e.value("bias", true));
      } else if (type == "dense") {
        model.emplace<Dense>(name, e.at("in").get<int>(), e.at("out").get<int>(),
                             e.value("bias", true));
      } else if (type == "relu") {
        model.emplace<ReLU>(name);
      } else if (type == "avgpool2d") {
        model.emplace<AvgPool2d>(name, e.value("size", 2));
      } else if (type == "maxpool2d") {
        model.emplace<MaxPool2d>(name, e.value("size", 2));
      } else {
        fail(ErrorKind::Config, "unknown layer type '" + type + "'");
      }
    }
    return model;
  } catch (const json::exception& ex) {
    fail(ErrorKind::Config, std::string("malformed architecture: ") + ex.what());
  }
}

void write_file_atomic(const fs::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + tmp.string());
    out << text;
    out.flush();
    if (!out) fail(ErrorKind::Io, "write failed: " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::Io, "cannot rename " + tmp.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  Sequential model = ckpt.model;
  json weights = json::object();
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    for (const auto& block : model.layer(i).parameters()) {
      weights[block.name] =
          std::vector<double>(block.values.begin(), block.values.end());
    }
  }
  json j{{"format", kFormat},
         {"version", kCheckpointVersion},
         {"architecture", architecture_to_json(model)},
         {"weights", std::move(weights)},
         {"class_names", ckpt.class_names},
         {"preprocess", to_json(ckpt.preprocess)},
         {"fill_mean", ckpt.fill_mean},
         {"config_hash", ckpt.config_hash},
         {"metadata", ckpt.metadata}};
  write_file_atomic(path, j.dump());
}

Checkpoint load_checkpoint(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& ex) {
    fail(ErrorKind::Model, "checkpoint " + path.string() + " is not valid JSON: " + ex.what());
  }
  if (j.value("format", std::string()) != kFormat) {
    fail(ErrorKind::Model, path.string() + " is not an xaikit checkpoint");
  }
  if (j.value("version", 0) != kCheckpointVersion) {
    fail(ErrorKind::Model, "unsupported checkpoint version " + j.value("version", json()).dump());
  }
  try {
    Checkpoint c;
    c.model = architecture_from_json(j.at("architecture"));
    const json& weights = j.at("weights");
    for (std::size_t i = 0; i < c.model.layer_count(); ++i) {
      for (auto& block : c.model.layer(i).parameters()) {
        const std::string key = block.name;
        if (!weights.contains(key)) fail(ErrorKind::Model, "checkpoint is missing weights " + key);
        const auto values = weights.at(key).get<std::vector<double>>();
        if (values.size() != block.values.size()) {
          fail(ErrorKind::Model, "weights " + key + " have " + std::to_string(values.size()) +
                                     " values, expected " + std::to_string(block.values.size()));
        }
        std::copy(values.begin(), values.end(), block.values.begin());
      }
    }
    c.class_names = j.at("class_names").get<std::vector<std::string>>();
    if (static_cast<int>(c.class_names.size()) != c.model.num_classes()) {
      fail(ErrorKind::Model, "class_names length does not match the model output");
    }
    c.preprocess = preprocess_from_json(j.at("preprocess"));
    c.fill_mean = j.value("fill_mean", std::vector<double>{});
    c.config_hash = j.value("config_hash", std::string());
    c.metadata = j.value("metadata", json::object());
    return c;
  } catch (const json::exception& ex) {
    fail(ErrorKind::Model, "malformed checkpoint " + path.string() + ": " + ex.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Model) throw;
    fail(ErrorKind::Model, "invalid checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace xai

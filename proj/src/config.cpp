#include "gradprobe/config.hpp"

#include <cstdlib>
#include <json.hpp>
#include <set>

#include "gradprobe/io.hpp"
#include "gradprobe/rng.hpp"

namespace gradprobe {

using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::string& path, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.contains(key)) throw ConfigError(path + "." + key + ": unknown field");
}

template <typename T>
T get(const json& obj, const std::string& path, const std::string& key) {
  if (!obj.contains(key)) throw ConfigError(path + "." + key + ": missing");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(path + "." + key + ": wrong type");
  }
}

template <typename T>
T get_or(const json& obj, const std::string& path, const std::string& key, T fallback) {
  return obj.contains(key) ? get<T>(obj, path, key) : fallback;
}

std::size_t positive(const json& obj, const std::string& path, const std::string& key,
                     std::size_t fallback) {
  if (obj.contains(key) && (!obj.at(key).is_number_integer() || obj.at(key).get<long long>() < 1))
    throw ConfigError(path + "." + key + ": must be a positive integer");
  return get_or<std::size_t>(obj, path, key, fallback);
}

OptimizerConfig parse_optimizer(const json& j, const std::string& path, OptimizerConfig base) {
  base.eta = get_or<double>(j, path, "eta", base.eta);
  if (!(base.eta > 0.0)) throw ConfigError(path + ".eta: must be > 0");
  base.epochs = positive(j, path, "epochs", base.epochs);
  base.batch_size = positive(j, path, "batch_size", base.batch_size);
  return base;
}

Shape parse_shape(const json& j, const std::string& path) {
  Shape s;
  try {
    s = j.get<Shape>();
  } catch (const json::exception&) {
    throw ConfigError(path + ": expected an array of positive integers");
  }
  if (s.size() != 3 || shape_size(s) == 0) throw ConfigError(path + ": expected [c, h, w]");
  return s;
}

std::filesystem::path required_file(const json& obj, const std::string& path,
                                    const std::string& key) {
  const auto p = std::filesystem::path(get<std::string>(obj, path, key));
  const auto resolved = resolve_data_path(p);
  if (!std::filesystem::exists(resolved))
    throw ConfigError(path + "." + key + ": file not found: " + resolved.string());
  return p;
}

LayerSpec parse_layer(const json& j, const std::string& path) {
  check_keys(j, path, {"kind", "units", "channels", "kernel", "stride", "padding"});
  const auto kind = get<std::string>(j, path, "kind");
  if (kind == "relu") return LayerSpec::relu();
  if (kind == "flatten") return LayerSpec::flatten();
  if (kind == "dense") return LayerSpec::dense(positive(j, path, "units", 0));
  if (kind == "conv2d") {
    const auto padding = get_or<std::string>(j, path, "padding", "valid");
    if (padding != "valid" && padding != "same")
      throw ConfigError(path + ".padding: must be valid or same");
    return LayerSpec::conv(positive(j, path, "channels", 0), positive(j, path, "kernel", 3),
                           positive(j, path, "stride", 1),
                           padding == "same" ? kernels::Padding::same : kernels::Padding::valid);
  }
  throw ConfigError(path + ".kind: unknown layer kind '" + kind + "'");
}

}  // namespace

std::filesystem::path resolve_data_path(const std::filesystem::path& p) {
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("GRADPROBE_DATA_DIR"); root && *root)
    return std::filesystem::path(root) / p;
  return p;
}

std::size_t RunConfig::classes() const { return in_distribution.classes; }

Shape RunConfig::input_shape() const { return in_distribution.shape; }

ModelSpec RunConfig::model_spec() const {
  if (!layers) return ModelSpec::reference(input_shape(), classes());
  ModelSpec spec;
  spec.input_shape = input_shape();
  spec.classes = classes();
  spec.layers = *layers;
  return spec;
}

ConfoundingLabel RunConfig::confounding_label() const {
  return ConfoundingLabel::make(classes(), confounding.ones.value_or(classes()),
                                confounding.positions);
}

std::uint64_t RunConfig::stage_seed(std::string_view stage) const {
  return derive_seed(seed, stage);
}

RunConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  check_keys(root, "config",
             {"experiment", "seed", "output_dir", "in_distribution", "unfamiliar", "corruptions",
              "model", "classifier", "detector", "confounding_label"});
  RunConfig cfg;
  cfg.experiment = get<std::string>(root, "config", "experiment");
  if (!root.contains("seed") || !root["seed"].is_number_unsigned())
    throw ConfigError("config.seed: required non-negative integer");
  cfg.seed = root["seed"].get<std::uint64_t>();
  cfg.output_dir = get_or<std::string>(root, "config", "output_dir", "runs/" + cfg.experiment);
  if (cfg.output_dir.is_relative() && !base_dir.empty()) cfg.output_dir = base_dir / cfg.output_dir;

  // in_distribution
  {
    const std::string path = "config.in_distribution";
    if (!root.contains("in_distribution")) throw ConfigError(path + ": missing");
    const json& j = root["in_distribution"];
    check_keys(j, path,
               {"name", "kind", "classes", "train_per_class", "test_per_class", "shape",
                "train_images", "train_labels", "test_images", "test_labels", "train_limit",
                "test_limit"});
    auto& d = cfg.in_distribution;
    d.kind = get_or<std::string>(j, path, "kind", "synth_blobs");
    d.name = get_or<std::string>(j, path, "name", d.kind == "idx" ? "mnist" : "blobs");
    if (d.kind == "synth_blobs") {
      d.classes = positive(j, path, "classes", d.classes);
      if (d.classes < 2) throw ConfigError(path + ".classes: need at least 2");
      d.train_per_class = positive(j, path, "train_per_class", d.train_per_class);
      d.test_per_class = positive(j, path, "test_per_class", d.test_per_class);
      if (j.contains("shape")) d.shape = parse_shape(j["shape"], path + ".shape");
    } else if (d.kind == "idx") {
      d.train_images = required_file(j, path, "train_images");
      d.train_labels = required_file(j, path, "train_labels");
      d.test_images = required_file(j, path, "test_images");
      d.test_labels = required_file(j, path, "test_labels");
      d.classes = positive(j, path, "classes", 10);
      d.train_limit = get_or<std::size_t>(j, path, "train_limit", 0);
      d.test_limit = get_or<std::size_t>(j, path, "test_limit", 0);
      if (!j.contains("shape")) throw ConfigError(path + ".shape: required for idx data");
      d.shape = parse_shape(j["shape"], path + ".shape");
      if (d.shape[0] != 1) throw ConfigError(path + ".shape: IDX images have 1 channel");
    } else {
      throw ConfigError(path + ".kind: unknown dataset kind '" + d.kind + "'");
    }
  }

  std::set<std::string> names = {cfg.in_distribution.name + "_test"};
  if (root.contains("unfamiliar")) {
    if (!root["unfamiliar"].is_array()) throw ConfigError("config.unfamiliar: expected an array");
    for (std::size_t i = 0; i < root["unfamiliar"].size(); ++i) {
      const std::string path = "config.unfamiliar[" + std::to_string(i) + "]";
      const json& j = root["unfamiliar"][i];
      check_keys(j, path, {"name", "kind", "count"});
      UnfamiliarSpec u;
      const auto kind = get<std::string>(j, path, "kind");
      try {
        u.kind = parse_unfamiliar_kind(kind);
      } catch (const Error& e) {
        throw ConfigError(path + ".kind: " + e.what());
      }
      u.name = get_or<std::string>(j, path, "name", kind);
      u.count = positive(j, path, "count", u.count);
      if (u.count < 5) throw ConfigError(path + ".count: need at least 5 samples");
      if (!names.insert(u.name).second) throw ConfigError(path + ".name: duplicate '" + u.name + "'");
      cfg.unfamiliar.push_back(u);
    }
  }

  if (root.contains("corruptions")) {
    const std::string path = "config.corruptions";
    const json& j = root["corruptions"];
    check_keys(j, path, {"kinds", "severities"});
    for (const auto& k : get<std::vector<std::string>>(j, path, "kinds")) {
      try {
        cfg.corruption_kinds.push_back(parse_corruption_kind(k));
      } catch (const Error& e) {
        throw ConfigError(path + ".kinds: " + e.what());
      }
    }
    cfg.corruption_severities = get_or<std::vector<int>>(j, path, "severities", {1, 2, 3, 4, 5});
    for (int s : cfg.corruption_severities)
      if (s < 1 || s > 5) throw ConfigError(path + ".severities: " + std::to_string(s) + " outside [1,5]");
  }

  if (root.contains("model")) {
    const std::string path = "config.model";
    check_keys(root["model"], path, {"layers"});
    const json& layers = root["model"]["layers"];
    if (!layers.is_array()) throw ConfigError(path + ".layers: expected an array");
    std::vector<LayerSpec> specs;
    for (std::size_t i = 0; i < layers.size(); ++i)
      specs.push_back(parse_layer(layers[i], path + ".layers[" + std::to_string(i) + "]"));
    cfg.layers = specs;
  }
  try {
    Model::build(cfg.model_spec(), 0);
  } catch (const Error& e) {
    throw ConfigError(std::string("config.model: ") + e.what());
  }

  if (root.contains("classifier")) {
    check_keys(root["classifier"], "config.classifier", {"eta", "epochs", "batch_size"});
    cfg.classifier = parse_optimizer(root["classifier"], "config.classifier", cfg.classifier);
  }
  if (root.contains("detector")) {
    const std::string path = "config.detector";
    check_keys(root["detector"], path, {"eta", "epochs", "batch_size", "hidden"});
    cfg.detector.optimizer = parse_optimizer(root["detector"], path, cfg.detector.optimizer);
    cfg.detector.hidden = positive(root["detector"], path, "hidden", cfg.detector.hidden);
  }

  if (root.contains("confounding_label")) {
    const std::string path = "config.confounding_label";
    const json& j = root["confounding_label"];
    check_keys(j, path, {"ones", "positions"});
    if (j.contains("ones") && !(j["ones"].is_string() && j["ones"] == "all"))
      cfg.confounding.ones = get<std::size_t>(j, path, "ones");
    if (j.contains("positions"))
      cfg.confounding.positions = get<std::vector<std::size_t>>(j, path, "positions");
  }
  try {
    cfg.confounding_label();
  } catch (const Error& e) {
    throw ConfigError(std::string("config.confounding_label: ") + e.what());
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return parse_config(text, path.parent_path());
}

}  // namespace gradprobe

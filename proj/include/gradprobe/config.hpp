#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gradprobe/datasets.hpp"
#include "gradprobe/detector.hpp"
#include "gradprobe/model.hpp"
#include "gradprobe/training.hpp"

namespace gradprobe {

/// Validation failure; the message starts with the offending field path.
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct InDistributionSpec {
  std::string name = "blobs";
  std::string kind = "synth_blobs";  // synth_blobs | idx
  // synth_blobs
  std::size_t classes = 4;
  std::size_t train_per_class = 500;
  std::size_t test_per_class = 150;
  Shape shape = {3, 16, 16};
  // idx; relative paths resolve against GRADPROBE_DATA_DIR
  std::filesystem::path train_images, train_labels, test_images, test_labels;
  std::size_t train_limit = 0;  // 0 keeps everything
  std::size_t test_limit = 0;
};

struct UnfamiliarSpec {
  std::string name;
  UnfamiliarKind kind = UnfamiliarKind::uniform_noise;
  std::size_t count = 600;
};

struct ConfoundingSpec {
  std::optional<std::size_t> ones;  // empty means all classes
  std::optional<std::vector<std::size_t>> positions;
};

struct RunConfig {
  std::string experiment;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  InDistributionSpec in_distribution;
  std::vector<UnfamiliarSpec> unfamiliar;
  std::vector<CorruptionKind> corruption_kinds;
  std::vector<int> corruption_severities;
  std::optional<std::vector<LayerSpec>> layers;  // empty means the reference model
  OptimizerConfig classifier{0.05, 5, 32, 0};
  DetectorConfig detector;
  ConfoundingSpec confounding;

  std::size_t classes() const;
  Shape input_shape() const;
  ModelSpec model_spec() const;
  ConfoundingLabel confounding_label() const;
  std::uint64_t stage_seed(std::string_view stage) const;
};

/// Parses and validates; `base_dir` anchors a relative output_dir.
RunConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

/// Resolves a dataset path against GRADPROBE_DATA_DIR when relative.
std::filesystem::path resolve_data_path(const std::filesystem::path& p);

}  // namespace gradprobe

#pragma once

// Gradient-based uncertainty features.
//
// A frozen classifier sees an input together with a confounding label, a
// multi-hot (or empty) target that no training example ever carried. The
// sigmoid BCE between the logits and that label is backpropagated, and the
// squared L2 norm of the gradient of every parameter set becomes one feature
// coordinate. Familiar inputs need small parameter updates to fit such a
// label; unfamiliar inputs need large ones.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gradprobe/model.hpp"
#include "gradprobe/training.hpp"

namespace gradprobe {

class ConfoundingLabel {
 public:
  /// Length-`classes` 0/1 vector with `ones` ones, at `positions` when given,
  /// otherwise at the first `ones` indices. A single one would be an ordinary
  /// one-hot label and is rejected.
  static ConfoundingLabel make(std::size_t classes, std::size_t ones,
                               std::optional<std::vector<std::size_t>> positions = std::nullopt);
  static ConfoundingLabel all_ones(std::size_t classes) { return make(classes, classes); }

  std::size_t classes() const { return bits_.size(); }
  std::size_t ones() const { return ones_; }
  const Tensor& bits() const { return bits_; }

 private:
  Tensor bits_;
  std::size_t ones_ = 0;
};

/// −(1/C) Σ_i [y_i log σ(z_i) + (1 − y_i) log(1 − σ(z_i))] in the fused
/// max(z,0) − z·y + log(1 + e^{−|z|}) form.
Var bce_with_logits(Tape& tape, Var logits, const ConfoundingLabel& label);
LossValue bce_with_logits(const Tensor& logits, const ConfoundingLabel& label);

struct GradientFeature {
  std::vector<double> values;  // one squared norm per parameter set
  double loss = 0.0;
  std::size_t sample_id = 0;
  std::string source_label;
};

/// Forward on a fresh tape, BCE against `label`, backward, then Σ g² per
/// parameter set. The model is only read.
GradientFeature extract_gradient_feature(const Model& model, const Tensor& input,
                                         const ConfoundingLabel& label, std::size_t sample_id = 0,
                                         std::string source_label = {});

/// Features for every input, ordered by sample id (the input index). `tags`
/// supplies source labels and may be empty. Runs on `workers` OpenMP threads;
/// the result does not depend on the worker count.
std::vector<GradientFeature> extract_features(const Model& model, std::span<const Tensor> inputs,
                                              const ConfoundingLabel& label,
                                              const std::vector<std::string>& tags = {},
                                              int workers = 1);

/// Single-threaded reference for extract_features.
std::vector<GradientFeature> extract_features_serial(const Model& model,
                                                     std::span<const Tensor> inputs,
                                                     const ConfoundingLabel& label,
                                                     const std::vector<std::string>& tags = {});

struct ClassAverage {
  std::size_t count = 0;
  std::vector<double> mean_values;
  double mean_loss = 0.0;
};

struct ClassAverages {
  std::map<std::size_t, ClassAverage> by_class;
  std::vector<std::string> warnings;  // one per class in [0, classes) with no samples
};

/// Per-class mean of every feature coordinate and of the loss.
ClassAverages per_class_average_norms(const std::vector<GradientFeature>& features,
                                      const std::vector<std::size_t>& class_of,
                                      std::size_t classes);

// Feature CSV: sample_id,source_label,loss,<one column per parameter set>.
struct FeatureTable {
  std::vector<std::string> parameter_names;
  std::vector<GradientFeature> rows;
};

std::string feature_csv(const FeatureTable& table);
/// Throws Error naming the line number of the first malformed row.
FeatureTable parse_feature_csv(const std::string& text);

}  // namespace gradprobe

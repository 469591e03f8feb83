#include "gradprobe/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <set>

#include "gradprobe/format.hpp"

namespace gradprobe {

ConfoundingLabel ConfoundingLabel::make(std::size_t classes, std::size_t ones,
                                        std::optional<std::vector<std::size_t>> positions) {
  if (classes == 0) throw Error("confounding label needs at least one class");
  if (ones > classes)
    throw Error("confounding label asks for " + std::to_string(ones) + " ones out of " +
                std::to_string(classes) + " classes");
  if (ones == 1)
    throw Error("confounding label with exactly one positive class is an ordinary one-hot label; "
                "use 0 or 2..C ones");
  ConfoundingLabel label;
  label.bits_ = Tensor({classes});
  label.ones_ = ones;
  if (positions) {
    const std::set<std::size_t> unique(positions->begin(), positions->end());
    if (positions->size() != ones || unique.size() != ones)
      throw Error("confounding label needs " + std::to_string(ones) + " distinct positions, got " +
                  std::to_string(positions->size()));
    for (std::size_t p : unique) {
      if (p >= classes)
        throw Error("confounding label position " + std::to_string(p) + " out of range");
      label.bits_[p] = 1.0;
    }
  } else {
    for (std::size_t i = 0; i < ones; ++i) label.bits_[i] = 1.0;
  }
  return label;
}

Var bce_with_logits(Tape& tape, Var logits, const ConfoundingLabel& label) {
  if (tape.value(logits).size() != label.classes())
    throw ShapeError("bce_with_logits: " + std::to_string(tape.value(logits).size()) +
                     " logits for a " + std::to_string(label.classes()) + "-class label");
  return ad::bce_with_logits(tape, logits, label.bits());
}

LossValue bce_with_logits(const Tensor& logits, const ConfoundingLabel& label) {
  Tape tape;
  return {tape.value(bce_with_logits(tape, tape.leaf(logits), label))[0]};
}

GradientFeature extract_gradient_feature(const Model& model, const Tensor& input,
                                         const ConfoundingLabel& label, std::size_t sample_id,
                                         std::string source_label) {
  if (!input.all_finite())
    throw Error("non-finite input pixel at sample " + std::to_string(sample_id));
  Tape tape;
  const Var logits = model.forward(tape, tape.leaf(input));
  const Var loss = bce_with_logits(tape, logits, label);
  const Gradients grads = tape.backward(loss);

  GradientFeature feature;
  feature.sample_id = sample_id;
  feature.source_label = std::move(source_label);
  feature.loss = tape.value(loss)[0];
  feature.values.reserve(model.parameter_sets().size());
  for (const auto& set : model.parameter_sets()) {
    double sq = 0.0;
    for (double g : grads.parameters().at(set.name).data()) sq += g * g;
    if (!std::isfinite(sq))
      throw Error("non-finite gradient for '" + set.name + "' at sample " +
                  std::to_string(sample_id));
    feature.values.push_back(sq);
  }
  return feature;
}

std::vector<GradientFeature> extract_features(const Model& model, std::span<const Tensor> inputs,
                                              const ConfoundingLabel& label,
                                              const std::vector<std::string>& tags, int workers) {
  if (!tags.empty() && tags.size() != inputs.size())
    throw Error("extract_features: " + std::to_string(tags.size()) + " tags for " +
                std::to_string(inputs.size()) + " inputs");
  std::vector<GradientFeature> out(inputs.size());
  std::vector<std::exception_ptr> errors(inputs.size());
  const auto n = static_cast<std::ptrdiff_t>(inputs.size());
#pragma omp parallel for schedule(dynamic, 8) num_threads(std::max(1, workers))
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      out[k] = extract_gradient_feature(model, inputs[k], label, k, tags.empty() ? "" : tags[k]);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

std::vector<GradientFeature> extract_features_serial(const Model& model,
                                                     std::span<const Tensor> inputs,
                                                     const ConfoundingLabel& label,
                                                     const std::vector<std::string>& tags) {
  if (!tags.empty() && tags.size() != inputs.size())
    throw Error("extract_features: " + std::to_string(tags.size()) + " tags for " +
                std::to_string(inputs.size()) + " inputs");
  std::vector<GradientFeature> out;
  out.reserve(inputs.size());
  for (std::size_t k = 0; k < inputs.size(); ++k)
    out.push_back(extract_gradient_feature(model, inputs[k], label, k, tags.empty() ? "" : tags[k]));
  return out;
}

ClassAverages per_class_average_norms(const std::vector<GradientFeature>& features,
                                      const std::vector<std::size_t>& class_of,
                                      std::size_t classes) {
  if (class_of.size() != features.size())
    throw Error("per_class_average_norms: " + std::to_string(class_of.size()) +
                " class assignments for " + std::to_string(features.size()) + " features");
  ClassAverages out;
  for (std::size_t i = 0; i < features.size(); ++i) {
    ClassAverage& avg = out.by_class[class_of[i]];
    if (avg.mean_values.empty()) avg.mean_values.assign(features[i].values.size(), 0.0);
    if (avg.mean_values.size() != features[i].values.size())
      throw ShapeError("feature " + std::to_string(i) + " has inconsistent length");
    for (std::size_t j = 0; j < avg.mean_values.size(); ++j) avg.mean_values[j] += features[i].values[j];
    avg.mean_loss += features[i].loss;
    ++avg.count;
  }
  for (auto& [cls, avg] : out.by_class) {
    const auto n = static_cast<double>(avg.count);
    for (double& v : avg.mean_values) v /= n;
    avg.mean_loss /= n;
  }
  for (std::size_t c = 0; c < classes; ++c)
    if (!out.by_class.contains(c))
      out.warnings.push_back("class " + std::to_string(c) + " has no samples; skipped");
  return out;
}

std::string feature_csv(const FeatureTable& table) {
  std::string out = "sample_id,source_label,loss";
  for (const auto& name : table.parameter_names) out += "," + name;
  out += "\n";
  for (const auto& row : table.rows) {
    if (row.values.size() != table.parameter_names.size())
      throw ShapeError("feature row " + std::to_string(row.sample_id) + " has " +
                       std::to_string(row.values.size()) + " values for " +
                       std::to_string(table.parameter_names.size()) + " columns");
    out += std::to_string(row.sample_id) + "," + row.source_label + "," + format_double(row.loss);
    for (double v : row.values) out += "," + format_double(v);
    out += "\n";
  }
  return out;
}

FeatureTable parse_feature_csv(const std::string& text) {
  const auto lines = split_lines(text);
  if (lines.empty()) throw Error("feature CSV is empty (line 1)");
  const auto header = split_csv(lines[0]);
  if (header.size() < 3 || header[0] != "sample_id" || header[1] != "source_label" ||
      header[2] != "loss")
    throw Error("feature CSV line 1: header must start with sample_id,source_label,loss");
  FeatureTable table;
  table.parameter_names.assign(header.begin() + 3, header.end());
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    const auto fields = split_csv(lines[ln]);
    const std::string where = "feature CSV line " + std::to_string(ln + 1);
    if (fields.size() != header.size())
      throw Error(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                  std::to_string(fields.size()));
    GradientFeature row;
    try {
      row.sample_id = static_cast<std::size_t>(std::stoull(fields[0]));
      row.source_label = fields[1];
      row.loss = parse_double(fields[2]);
      for (std::size_t j = 3; j < fields.size(); ++j) row.values.push_back(parse_double(fields[j]));
    } catch (const std::exception& e) {
      throw Error(where + ": " + e.what());
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace gradprobe

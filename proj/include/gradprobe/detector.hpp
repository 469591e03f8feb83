#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gradprobe/model.hpp"
#include "gradprobe/training.hpp"
#include "gradprobe/uncertainty.hpp"

namespace gradprobe {

/// Feature rows with binary labels: 0 familiar, 1 unfamiliar.
struct DetectionData {
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;

  std::size_t size() const { return rows.size(); }
  std::size_t dim() const { return rows.empty() ? 0 : rows.front().size(); }

  /// Familiar rows first, then unfamiliar rows, each in input order.
  static DetectionData from_features(const std::vector<GradientFeature>& familiar,
                                     const std::vector<GradientFeature>& unfamiliar);
};

enum class SplitRole { train, validation, test };

struct SplitAssignment {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;

  std::vector<SplitRole> roles(std::size_t n) const;
};

/// Stratified 40/40/20 split, each class shuffled and cut separately.
/// Throws Error when a class has fewer than 5 samples.
SplitAssignment split_40_40_20(const std::vector<int>& labels, std::uint64_t seed);

std::string split_json(const SplitAssignment& split);

struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stddev;  // floored at 1e-8

  static Standardizer fit(const DetectionData& data, const std::vector<std::size_t>& rows);
  std::vector<double> apply(std::span<const double> row) const;
};

struct DetectorConfig {
  OptimizerConfig optimizer{0.5, 100, 32, 0};
  std::size_t hidden = 64;
};

/// dense(d→h) → relu → dense(h→1) over standardized features.
struct Detector {
  Model net;
  Standardizer standardizer;
  double validation_auroc = 0.0;
  std::size_t best_epoch = 0;

  double logit(std::span<const double> features) const;
  /// σ(logit), higher means more unfamiliar.
  double score(std::span<const double> features) const;
  std::vector<double> scores(const DetectionData& data, const std::vector<std::size_t>& rows) const;
};

ModelSpec detector_spec(std::size_t dim, std::size_t hidden);

/// Sigmoid-BCE training on the train split with the standardizer fit on the
/// train split only. Keeps the epoch with the highest validation AUROC. Rows
/// in the test split are never read.
Detector train_detector(const DetectionData& data, const SplitAssignment& split,
                        const DetectorConfig& cfg);

double detector_score(const Detector& det, const GradientFeature& feature);

/// 1 − max softmax probability of the classifier.
double msp_score(const Model& model, const Tensor& input);
double msp_from_logits(const Tensor& logits);

/// The stored confounding-label loss.
double loss_score(const GradientFeature& feature);

/// GPRB1 checkpoint for the network plus "<stem>.standardization.csv"
/// (feature,mean,std) next to it.
void save_detector(const Detector& det, const std::filesystem::path& checkpoint);
Detector load_detector(const std::filesystem::path& checkpoint);

}  // namespace gradprobe

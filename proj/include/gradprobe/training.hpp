#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gradprobe/datasets.hpp"
#include "gradprobe/model.hpp"

namespace gradprobe {

struct OptimizerConfig {
  double eta = 0.05;
  std::size_t epochs = 5;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;

  /// Throws Error unless eta >= 0 (0 is a no-op run), epochs >= 1 and batch_size >= 1.
  void validate() const;
};

struct LossValue {
  double value = 0.0;
};

/// Raised when a training loss turns non-finite.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Mean over rows of −log softmax(logits)[label] (log-sum-exp form). Logits are n×C.
LossValue cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels);

/// θ ← θ − η·g for every parameter set. Every set needs a same-shaped gradient.
void sgd_step(Model& model, const std::map<std::string, Tensor>& gradients, double eta);

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
};

struct TrainingResult {
  std::vector<EpochLog> log;
  double final_accuracy = 0.0;
};

/// n×C logits for the whole dataset, evaluated in chunks.
Tensor dataset_logits(const Model& model, const LabeledDataset& data);
/// Argmax class per sample.
std::vector<std::size_t> predict(const Model& model, const LabeledDataset& data);

/// Fraction of samples whose argmax logit equals the label.
double accuracy(const Model& model, const LabeledDataset& data);

/// Mini-batch SGD on softmax cross-entropy. Batches are drawn from a shuffle
/// seeded by cfg.seed; the batch gradient is the mean over the batch.
TrainingResult train_classifier(Model& model, const LabeledDataset& data,
                                const OptimizerConfig& cfg);

/// "epoch,mean_loss,train_accuracy" CSV.
std::string training_log_csv(const std::vector<EpochLog>& log);

}  // namespace gradprobe

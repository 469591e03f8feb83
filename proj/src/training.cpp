#include "gradprobe/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gradprobe/format.hpp"
#include "gradprobe/rng.hpp"

namespace gradprobe {

void OptimizerConfig::validate() const {
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw Error("optimizer eta must be finite and >= 0");
  if (epochs < 1) throw Error("optimizer epochs must be >= 1");
  if (batch_size < 1) throw Error("optimizer batch_size must be >= 1");
}

LossValue cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
  Tape tape;
  return {tape.value(ad::softmax_cross_entropy(tape, tape.leaf(logits), labels))[0]};
}

void sgd_step(Model& model, const std::map<std::string, Tensor>& gradients, double eta) {
  auto& sets = model.parameter_sets();
  for (const auto& set : sets) {
    const auto it = gradients.find(set.name);
    if (it == gradients.end()) throw Error("sgd_step: no gradient for '" + set.name + "'");
    if (it->second.shape() != set.values.shape())
      throw ShapeError("sgd_step: gradient for '" + set.name + "' has shape " +
                       shape_string(it->second.shape()) + ", parameter has " +
                       shape_string(set.values.shape()));
  }
  for (auto& set : sets) {
    const auto g = gradients.at(set.name).data();
    auto v = set.values.data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= eta * g[i];
  }
}

Tensor dataset_logits(const Model& model, const LabeledDataset& data) {
  if (data.empty()) throw Error("dataset '" + data.name + "' is empty");
  constexpr std::size_t kChunk = 256;
  Tensor out;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    idx.resize(std::min(kChunk, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor logits = model.forward(data.batch(idx));
    if (start == 0) out = Tensor({data.size(), logits.dim(1)});
    std::copy(logits.data().begin(), logits.data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(start * logits.dim(1)));
  }
  return out;
}

std::vector<std::size_t> predict(const Model& model, const LabeledDataset& data) {
  const Tensor logits = dataset_logits(model, data);
  const std::size_t classes = logits.dim(1);
  std::vector<std::size_t> out(data.size());
  for (std::size_t r = 0; r < out.size(); ++r) {
    const auto row = logits.data().subspan(r * classes, classes);
    out[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

double accuracy(const Model& model, const LabeledDataset& data) {
  if (data.empty()) return 0.0;
  const auto predicted = predict(model, data);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    if (predicted[i] == data.labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainingResult train_classifier(Model& model, const LabeledDataset& data,
                                const OptimizerConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw Error("train_classifier: dataset '" + data.name + "' is empty");
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  TrainingResult result;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<std::size_t> labels;
      labels.reserve(idx.size());
      for (std::size_t i : idx) labels.push_back(data.labels[i]);

      Tape tape;
      const Var logits = model.forward(tape, tape.leaf(data.batch(idx)));
      const Var loss = ad::softmax_cross_entropy(tape, logits, labels);
      const double value = tape.value(loss)[0];
      if (!std::isfinite(value))
        throw DivergenceError("training diverged: non-finite loss at epoch " +
                              std::to_string(epoch) + ", batch starting at " +
                              std::to_string(start) + "; lower eta");
      loss_sum += value * static_cast<double>(idx.size());
      sgd_step(model, tape.backward(loss).parameters(), cfg.eta);
    }
    result.log.push_back(
        {epoch, loss_sum / static_cast<double>(data.size()), accuracy(model, data)});
  }
  result.final_accuracy = result.log.back().train_accuracy;
  return result;
}

std::string training_log_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,mean_loss,train_accuracy\n";
  for (const auto& e : log)
    out += std::to_string(e.epoch) + "," + format_double(e.mean_loss) + "," +
           format_double(e.train_accuracy) + "\n";
  return out;
}

}  // namespace gradprobe

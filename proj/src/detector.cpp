#include "gradprobe/detector.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>

#include "gradprobe/checkpoint.hpp"
#include "gradprobe/format.hpp"
#include "gradprobe/io.hpp"
#include "gradprobe/metrics.hpp"
#include "gradprobe/rng.hpp"

namespace gradprobe {

DetectionData DetectionData::from_features(const std::vector<GradientFeature>& familiar,
                                           const std::vector<GradientFeature>& unfamiliar) {
  DetectionData data;
  for (const auto& f : familiar) {
    data.rows.push_back(f.values);
    data.labels.push_back(0);
  }
  for (const auto& f : unfamiliar) {
    data.rows.push_back(f.values);
    data.labels.push_back(1);
  }
  const std::size_t d = data.dim();
  for (const auto& r : data.rows)
    if (r.size() != d)
      throw ShapeError("feature dimension mismatch: " + std::to_string(r.size()) + " vs " +
                       std::to_string(d));
  return data;
}

std::vector<SplitRole> SplitAssignment::roles(std::size_t n) const {
  std::vector<SplitRole> out(n, SplitRole::test);
  for (std::size_t i : train) out.at(i) = SplitRole::train;
  for (std::size_t i : validation) out.at(i) = SplitRole::validation;
  return out;
}

SplitAssignment split_40_40_20(const std::vector<int>& labels, std::uint64_t seed) {
  SplitAssignment split;
  for (int cls : {0, 1}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == cls) members.push_back(i);
    if (members.size() < 5)
      throw Error("split needs at least 5 samples per class; class " + std::to_string(cls) +
                  " has " + std::to_string(members.size()));
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(cls)));
    rng.shuffle(members);
    const std::size_t n = members.size();
    const std::size_t n_train = (4 * n + 5) / 10;  // round(0.4 n)
    const std::size_t n_val = n_train;
    auto cut = [&](std::size_t from, std::size_t to, std::vector<std::size_t>& dst) {
      dst.insert(dst.end(), members.begin() + static_cast<std::ptrdiff_t>(from),
                 members.begin() + static_cast<std::ptrdiff_t>(to));
    };
    cut(0, n_train, split.train);
    cut(n_train, n_train + n_val, split.validation);
    cut(n_train + n_val, n, split.test);
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

std::string split_json(const SplitAssignment& split) {
  nlohmann::ordered_json j;
  j["train"] = split.train;
  j["validation"] = split.validation;
  j["test"] = split.test;
  return j.dump(1) + "\n";
}

Standardizer Standardizer::fit(const DetectionData& data, const std::vector<std::size_t>& rows) {
  if (rows.empty()) throw Error("cannot fit a standardizer on zero rows");
  const std::size_t d = data.dim();
  Standardizer s;
  s.mean.assign(d, 0.0);
  s.stddev.assign(d, 0.0);
  for (std::size_t r : rows)
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += data.rows[r][j];
  for (double& m : s.mean) m /= static_cast<double>(rows.size());
  for (std::size_t r : rows)
    for (std::size_t j = 0; j < d; ++j) {
      const double dv = data.rows[r][j] - s.mean[j];
      s.stddev[j] += dv * dv;
    }
  for (double& v : s.stddev) v = std::max(std::sqrt(v / static_cast<double>(rows.size())), 1e-8);
  return s;
}

std::vector<double> Standardizer::apply(std::span<const double> row) const {
  if (row.size() != mean.size())
    throw ShapeError("feature has " + std::to_string(row.size()) + " values, detector expects " +
                     std::to_string(mean.size()));
  std::vector<double> out(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) out[j] = (row[j] - mean[j]) / stddev[j];
  return out;
}

ModelSpec detector_spec(std::size_t dim, std::size_t hidden) {
  ModelSpec spec;
  spec.input_shape = {dim};
  spec.classes = 1;
  spec.layers = {LayerSpec::dense(hidden), LayerSpec::relu(), LayerSpec::dense(1)};
  return spec;
}

namespace {

Tensor standardized_batch(const DetectionData& data, const Standardizer& s,
                          const std::vector<std::size_t>& rows) {
  const std::size_t d = data.dim();
  Tensor batch({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto z = s.apply(data.rows.at(rows[i]));
    std::copy(z.begin(), z.end(), batch.data().begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return batch;
}

std::vector<double> sigmoid_scores(const Model& net, const Tensor& batch) {
  const Tensor logits = net.forward(batch);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(logits[i]);
  return out;
}

double validation_auroc(const Model& net, const Tensor& batch, const std::vector<int>& labels) {
  const auto scores = sigmoid_scores(net, batch);
  DetectionScoreSet s;
  for (std::size_t i = 0; i < scores.size(); ++i)
    (labels[i] ? s.unfamiliar : s.familiar).push_back(scores[i]);
  return auroc(s);
}

}  // namespace

double Detector::logit(std::span<const double> features) const {
  const auto z = standardizer.apply(features);
  return net.forward(Tensor({z.size()}, z))[0];
}

double Detector::score(std::span<const double> features) const {
  return stable_sigmoid(logit(features));
}

std::vector<double> Detector::scores(const DetectionData& data,
                                     const std::vector<std::size_t>& rows) const {
  if (rows.empty()) return {};
  return sigmoid_scores(net, standardized_batch(data, standardizer, rows));
}

Detector train_detector(const DetectionData& data, const SplitAssignment& split,
                        const DetectorConfig& cfg) {
  cfg.optimizer.validate();
  if (data.labels.size() != data.rows.size()) throw Error("detector data: labels/rows mismatch");
  if (split.train.empty() || split.validation.empty())
    throw Error("detector needs non-empty train and validation splits");
  for (int l : data.labels)
    if (l != 0 && l != 1) throw Error("detector labels must be 0 or 1");

  Detector det{Model::build(detector_spec(data.dim(), cfg.hidden),
                            derive_seed(cfg.optimizer.seed, "detector-init")),
               Standardizer::fit(data, split.train)};

  const Tensor train_x = standardized_batch(data, det.standardizer, split.train);
  const Tensor val_x = standardized_batch(data, det.standardizer, split.validation);
  std::vector<int> val_labels;
  for (std::size_t r : split.validation) val_labels.push_back(data.labels[r]);

  const std::size_t d = data.dim();
  Rng rng(derive_seed(cfg.optimizer.seed, "detector-shuffle"));
  std::vector<std::size_t> order(split.train.size());
  std::iota(order.begin(), order.end(), 0);

  auto best_params = det.net.parameter_sets();
  double best_auroc = -1.0;
  for (std::size_t epoch = 1; epoch <= cfg.optimizer.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.optimizer.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.optimizer.batch_size);
      Tensor x({end - start, d});
      Tensor y({end - start, 1});
      for (std::size_t i = start; i < end; ++i) {
        std::copy_n(train_x.data().begin() + static_cast<std::ptrdiff_t>(order[i] * d), d,
                    x.data().begin() + static_cast<std::ptrdiff_t>((i - start) * d));
        y[i - start] = data.labels[split.train[order[i]]];
      }
      Tape tape;
      const Var loss = ad::bce_with_logits(tape, det.net.forward(tape, tape.leaf(x)), y);
      if (!std::isfinite(tape.value(loss)[0]))
        throw DivergenceError("detector training diverged at epoch " + std::to_string(epoch));
      sgd_step(det.net, tape.backward(loss).parameters(), cfg.optimizer.eta);
    }
    const double val = validation_auroc(det.net, val_x, val_labels);
    if (val > best_auroc) {
      best_auroc = val;
      best_params = det.net.parameter_sets();
      det.best_epoch = epoch;
    }
  }
  det.net.load_parameters(best_params);
  det.validation_auroc = best_auroc;
  return det;
}

double detector_score(const Detector& det, const GradientFeature& feature) {
  return det.score(feature.values);
}

double msp_from_logits(const Tensor& logits) {
  const Tensor p = softmax_rows(logits.reshaped({logits.size()}));
  return 1.0 - *std::max_element(p.data().begin(), p.data().end());
}

double msp_score(const Model& model, const Tensor& input) {
  return msp_from_logits(model.forward(input));
}

double loss_score(const GradientFeature& feature) { return feature.loss; }

namespace {

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p.replace_extension(".standardization.csv");
  return p;
}

}  // namespace

void save_detector(const Detector& det, const std::filesystem::path& checkpoint) {
  std::string csv = "feature,mean,std\n";
  for (std::size_t j = 0; j < det.standardizer.mean.size(); ++j)
    csv += std::to_string(j) + "," + format_double(det.standardizer.mean[j]) + "," +
           format_double(det.standardizer.stddev[j]) + "\n";
  write_file_atomic(sidecar_path(checkpoint), csv);
  save_checkpoint(checkpoint, det.net.parameter_sets());
}

Detector load_detector(const std::filesystem::path& checkpoint) {
  const auto sets = load_checkpoint(checkpoint);
  if (sets.size() != 4 || sets[0].values.rank() != 2)
    throw Error(checkpoint.string() + " is not a detector checkpoint");
  const std::size_t hidden = sets[0].values.dim(0), dim = sets[0].values.dim(1);
  Detector det{Model::build(detector_spec(dim, hidden), 0), {}};
  det.net.load_parameters(sets);

  const auto lines = split_lines(read_file(sidecar_path(checkpoint)));
  if (lines.size() != dim + 1 || lines[0] != "feature,mean,std")
    throw Error(sidecar_path(checkpoint).string() + ": expected header and " +
                std::to_string(dim) + " rows");
  for (std::size_t j = 1; j < lines.size(); ++j) {
    const auto f = split_csv(lines[j]);
    if (f.size() != 3)
      throw Error(sidecar_path(checkpoint).string() + " line " + std::to_string(j + 1) +
                  ": expected 3 fields");
    det.standardizer.mean.push_back(parse_double(f[1]));
    det.standardizer.stddev.push_back(parse_double(f[2]));
  }
  return det;
}

}  // namespace gradprobe

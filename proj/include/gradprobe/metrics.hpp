#pragma once

#include <string>
#include <vector>

namespace gradprobe {

/// Unfamiliar samples are the positive class; higher scores mean more unfamiliar.
struct DetectionScoreSet {
  std::vector<double> unfamiliar;
  std::vector<double> familiar;

  /// Throws Error when a side is empty or a score is not finite.
  void validate() const;
};

/// P(unfamiliar score > familiar score), ties counted one half. Rank-sum form.
double auroc(const DetectionScoreSet& s);

/// Step-wise area under precision-recall, Σ (R_k − R_{k−1})·P_k over a
/// descending sweep where tied scores form one step.
double aupr(const DetectionScoreSet& s);

/// max over thresholds t of ½(TPR + TNR), predicting unfamiliar when score ≥ t.
double detection_accuracy(const DetectionScoreSet& s);

struct MetricRow {
  std::string method;
  std::string in_dataset;
  std::string out_dataset;
  double detection_accuracy = 0.0;
  double auroc = 0.0;
  double aupr = 0.0;
};

MetricRow evaluate(std::string method, std::string in_dataset, std::string out_dataset,
                   const DetectionScoreSet& s);

std::string metrics_csv(const std::vector<MetricRow>& rows);
/// Aligned plain-text table, metrics shown as percentages.
std::string metrics_table(const std::vector<MetricRow>& rows);

}  // namespace gradprobe

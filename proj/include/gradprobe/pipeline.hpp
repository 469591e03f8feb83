#pragma once

// The five CLI stages. Each reads the artifacts of the earlier stages from
// the run directory, so stages can be rerun individually.
//
//   model.gprb, train_log.csv                       train
//   datasets/<name>.json, features/<name>.csv       extract
//   detectors/<pair>.{gprb,standardization.csv,split.json,scores.csv,json}
//                                                   fit-detector
//   metrics.csv, metrics.txt, corruption_auroc.csv  eval
//   summary.csv, histograms.csv                     summarize

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gradprobe/config.hpp"

namespace gradprobe {

struct RunOptions {
  int workers = 1;
  std::optional<std::filesystem::path> out;  // overrides the config's output_dir
};

enum class DatasetRole { familiar, unfamiliar, corrupted };

/// One evaluation dataset, regenerated from the config on demand.
struct EvalDataset {
  std::string name;
  DatasetRole role = DatasetRole::familiar;
  std::optional<CorruptionSpec> corruption;
  std::uint64_t seed = 0;
};

/// A familiar/unfamiliar dataset pair the detector is trained for.
struct DetectionPair {
  std::string name;
  std::string familiar;
  std::string unfamiliar;
  std::optional<CorruptionSpec> corruption;
};

std::filesystem::path run_dir(const RunConfig& cfg, const RunOptions& opts);

LabeledDataset load_train_set(const RunConfig& cfg);
LabeledDataset load_test_set(const RunConfig& cfg);
/// The in-distribution test set, every unfamiliar set, then the corruption grid.
std::vector<EvalDataset> eval_datasets(const RunConfig& cfg);
LabeledDataset materialize(const RunConfig& cfg, const EvalDataset& ds);
std::vector<DetectionPair> detection_pairs(const RunConfig& cfg);

void cmd_train(const RunConfig& cfg, const RunOptions& opts, std::ostream& log);

/// `datasets` selects by name; empty means all. `checkpoint` defaults to model.gprb.
void cmd_extract(const RunConfig& cfg, const RunOptions& opts,
                 const std::vector<std::string>& datasets,
                 const std::optional<std::filesystem::path>& checkpoint, std::ostream& log);

/// Trains one detector per pair, or a single detector for the explicit CSVs.
void cmd_fit_detector(const RunConfig& cfg, const RunOptions& opts,
                      const std::optional<std::filesystem::path>& familiar_csv,
                      const std::optional<std::filesystem::path>& unfamiliar_csv,
                      std::ostream& log);

void cmd_eval(const RunConfig& cfg, const RunOptions& opts, std::ostream& log);

/// Summarizes the given feature CSVs (all of features/ when empty) into
/// `out_dir`. `classes` of 0 infers the class count from the data.
void cmd_summarize(const std::vector<std::filesystem::path>& feature_csvs,
                   const std::filesystem::path& out_dir, std::size_t classes, std::ostream& log);

/// Per-dataset, per-class mean norms and loss, blocks in input order.
struct SummaryInput {
  std::string dataset;
  FeatureTable table;
};
std::string summary_csv(const std::vector<SummaryInput>& inputs, std::size_t classes,
                        std::vector<std::string>* warnings = nullptr);
/// Per-sample value histograms with bin edges shared across datasets.
std::string histogram_csv(const std::vector<SummaryInput>& inputs, std::size_t bins = 30);

/// "<dataset>:<class>" split at the last colon.
std::pair<std::string, std::size_t> parse_source_label(const std::string& tag);

}  // namespace gradprobe

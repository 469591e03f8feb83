#include "gradprobe/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <json.hpp>
#include <map>
#include <ostream>
#include <set>

#include "gradprobe/checkpoint.hpp"
#include "gradprobe/format.hpp"
#include "gradprobe/io.hpp"
#include "gradprobe/metrics.hpp"

namespace gradprobe {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

std::string corruption_tag(const CorruptionSpec& c) {
  return to_string(c.kind) + "-" + std::to_string(c.severity);
}

std::string test_name(const RunConfig& cfg) { return cfg.in_distribution.name + "_test"; }

LabeledDataset load_idx_split(const RunConfig& cfg, const fs::path& images, const fs::path& labels,
                              std::size_t limit, const std::string& name) {
  LabeledDataset d = read_idx(resolve_data_path(images), resolve_data_path(labels));
  if (limit > 0 && d.size() > limit) {
    d.images.resize(limit);
    d.labels.resize(limit);
  }
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.images[i].shape() != cfg.input_shape())
      throw ConfigError("config.in_distribution.shape: " + shape_string(cfg.input_shape()) +
                        " but " + images.string() + " holds " + shape_string(d.images[i].shape()));
    if (d.labels[i] >= cfg.classes())
      throw ConfigError("config.in_distribution.classes: " + labels.string() + " has label " +
                        std::to_string(d.labels[i]) + " at sample " + std::to_string(i));
  }
  d.name = name;
  return d;
}

void write_json(const fs::path& path, const ojson& j) { write_file_atomic(path, j.dump(1) + "\n"); }

ojson manifest(const RunConfig& cfg, const std::string& name, const std::string& role,
               const LabeledDataset& data, std::uint64_t seed,
               const std::optional<CorruptionSpec>& corruption) {
  ojson j;
  j["name"] = name;
  j["role"] = role;
  j["kind"] = role == "unfamiliar" ? "synth_unfamiliar" : cfg.in_distribution.kind;
  j["count"] = data.size();
  j["shape"] = cfg.input_shape();
  j["seed"] = seed;
  if (corruption) {
    j["corruption"] = {{"kind", to_string(corruption->kind)},
                       {"severity", corruption->severity},
                       {"strength", corruption_strength(corruption->kind, corruption->severity)}};
  } else {
    j["corruption"] = nullptr;
  }
  return j;
}

Model load_model(const RunConfig& cfg, const fs::path& checkpoint) {
  if (!fs::exists(checkpoint))
    throw Error("missing artifact " + checkpoint.string() + " (run train first)");
  Model model = Model::build(cfg.model_spec(), 0);
  try {
    model.load_parameters(load_checkpoint(checkpoint));
  } catch (const ShapeError& e) {
    throw Error(checkpoint.string() + " does not match the configured model: " + e.what());
  }
  return model;
}

FeatureTable read_features(const fs::path& path) {
  if (!fs::exists(path)) throw Error("missing artifact " + path.string());
  try {
    return parse_feature_csv(read_file(path));
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

DetectionData pair_data(const FeatureTable& familiar, const FeatureTable& unfamiliar,
                        const std::string& pair) {
  if (familiar.parameter_names != unfamiliar.parameter_names)
    throw ShapeError("pair " + pair + ": feature columns differ (" +
                     std::to_string(familiar.parameter_names.size()) + " vs " +
                     std::to_string(unfamiliar.parameter_names.size()) + " parameter sets)");
  return DetectionData::from_features(familiar.rows, unfamiliar.rows);
}

const char* role_name(SplitRole r) {
  switch (r) {
    case SplitRole::train: return "train";
    case SplitRole::validation: return "validation";
    case SplitRole::test: return "test";
  }
  return "?";
}

struct PairArtifacts {
  fs::path checkpoint, split, scores, record;
};

PairArtifacts pair_artifacts(const fs::path& dir, const std::string& pair) {
  const fs::path base = dir / "detectors";
  return {base / (pair + ".gprb"), base / (pair + ".split.json"), base / (pair + ".scores.csv"),
          base / (pair + ".json")};
}

void fit_pair(const RunConfig& cfg, const fs::path& dir, const std::string& pair,
              const std::string& familiar_name, const FeatureTable& familiar,
              const std::string& unfamiliar_name, const FeatureTable& unfamiliar,
              std::ostream& log) {
  const DetectionData data = pair_data(familiar, unfamiliar, pair);
  const SplitAssignment split = split_40_40_20(data.labels, cfg.stage_seed("split/" + pair));
  DetectorConfig dc = cfg.detector;
  dc.optimizer.seed = cfg.stage_seed("detector/" + pair);
  const Detector det = train_detector(data, split, dc);

  const auto art = pair_artifacts(dir, pair);
  save_detector(det, art.checkpoint);
  write_file_atomic(art.split, split_json(split));

  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto scores = det.scores(data, all);
  const auto roles = split.roles(data.size());
  std::string csv = "sample_id,source_label,score,split\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& f = i < familiar.rows.size() ? familiar.rows[i]
                                             : unfamiliar.rows[i - familiar.rows.size()];
    csv += std::to_string(f.sample_id) + "," + f.source_label + "," + format_double(scores[i]) +
           "," + role_name(roles[i]) + "\n";
  }
  write_file_atomic(art.scores, csv);

  ojson rec;
  rec["pair"] = pair;
  rec["familiar"] = familiar_name;
  rec["unfamiliar"] = unfamiliar_name;
  rec["feature_dim"] = data.dim();
  rec["train"] = split.train.size();
  rec["validation"] = split.validation.size();
  rec["test"] = split.test.size();
  rec["best_epoch"] = det.best_epoch;
  rec["validation_auroc"] = det.validation_auroc;
  write_json(art.record, rec);
  log << pair << ": validation AUROC " << format_double(det.validation_auroc) << " (epoch "
      << det.best_epoch << ")\n";
}

SplitAssignment read_split(const fs::path& path) {
  if (!fs::exists(path)) throw Error("missing artifact " + path.string());
  try {
    const auto j = nlohmann::json::parse(read_file(path));
    return {j.at("train").get<std::vector<std::size_t>>(),
            j.at("validation").get<std::vector<std::size_t>>(),
            j.at("test").get<std::vector<std::size_t>>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

}  // namespace

fs::path run_dir(const RunConfig& cfg, const RunOptions& opts) {
  return opts.out ? *opts.out : cfg.output_dir;
}

LabeledDataset load_train_set(const RunConfig& cfg) {
  const auto& d = cfg.in_distribution;
  if (d.kind == "idx")
    return load_idx_split(cfg, d.train_images, d.train_labels, d.train_limit, d.name + "_train");
  LabeledDataset out =
      synth_blobs(d.classes, d.train_per_class, d.shape, cfg.stage_seed("data/train"));
  out.name = d.name + "_train";
  return out;
}

LabeledDataset load_test_set(const RunConfig& cfg) {
  const auto& d = cfg.in_distribution;
  if (d.kind == "idx")
    return load_idx_split(cfg, d.test_images, d.test_labels, d.test_limit, test_name(cfg));
  LabeledDataset out = synth_blobs(d.classes, d.test_per_class, d.shape, cfg.stage_seed("data/test"));
  out.name = test_name(cfg);
  return out;
}

std::vector<EvalDataset> eval_datasets(const RunConfig& cfg) {
  std::vector<EvalDataset> out;
  out.push_back({test_name(cfg), DatasetRole::familiar, std::nullopt, cfg.stage_seed("data/test")});
  for (const auto& u : cfg.unfamiliar)
    out.push_back({u.name, DatasetRole::unfamiliar, std::nullopt,
                   cfg.stage_seed("data/unfamiliar/" + u.name)});
  for (CorruptionKind k : cfg.corruption_kinds)
    for (int s : cfg.corruption_severities) {
      const CorruptionSpec spec{k, s};
      out.push_back({test_name(cfg) + "@" + corruption_tag(spec), DatasetRole::corrupted, spec,
                     cfg.stage_seed("data/corrupt/" + corruption_tag(spec))});
    }
  return out;
}

LabeledDataset materialize(const RunConfig& cfg, const EvalDataset& ds) {
  switch (ds.role) {
    case DatasetRole::familiar:
      return load_test_set(cfg);
    case DatasetRole::corrupted:
      return corrupt(load_test_set(cfg), *ds.corruption, ds.seed);
    case DatasetRole::unfamiliar:
      break;
  }
  for (const auto& u : cfg.unfamiliar)
    if (u.name == ds.name) {
      LabeledDataset out = synth_unfamiliar(u.kind, u.count, cfg.input_shape(), ds.seed);
      out.name = u.name;
      return out;
    }
  throw Error("unknown unfamiliar dataset '" + ds.name + "'");
}

std::vector<DetectionPair> detection_pairs(const RunConfig& cfg) {
  std::vector<DetectionPair> out;
  const std::string fam = test_name(cfg);
  for (const auto& ds : eval_datasets(cfg))
    if (ds.role != DatasetRole::familiar)
      out.push_back({fam + "_vs_" + ds.name, fam, ds.name, ds.corruption});
  return out;
}

void cmd_train(const RunConfig& cfg, const RunOptions& opts, std::ostream& log) {
  const fs::path dir = run_dir(cfg, opts);
  const LabeledDataset train = load_train_set(cfg);
  Model model = Model::build(cfg.model_spec(), cfg.stage_seed("model-init"));
  OptimizerConfig oc = cfg.classifier;
  oc.seed = cfg.stage_seed("classifier");
  log << "training on " << train.size() << " samples of " << train.name << ", "
      << model.parameter_count() << " parameters\n";
  const TrainingResult result = train_classifier(model, train, oc);
  for (const auto& e : result.log)
    log << "epoch " << e.epoch << "  loss " << format_double(e.mean_loss) << "  accuracy "
        << format_double(e.train_accuracy) << "\n";

  write_json(dir / "datasets" / (train.name + ".json"),
             manifest(cfg, train.name, "train", train, cfg.stage_seed("data/train"), std::nullopt));
  write_file_atomic(dir / "train_log.csv", training_log_csv(result.log));
  save_checkpoint(dir / "model.gprb", model.parameter_sets());
  log << "final train accuracy " << format_double(result.final_accuracy) << "\n";
}

void cmd_extract(const RunConfig& cfg, const RunOptions& opts,
                 const std::vector<std::string>& datasets,
                 const std::optional<fs::path>& checkpoint, std::ostream& log) {
  const fs::path dir = run_dir(cfg, opts);
  const Model model = load_model(cfg, checkpoint.value_or(dir / "model.gprb"));
  const ConfoundingLabel label = cfg.confounding_label();
  const auto all = eval_datasets(cfg);

  std::vector<EvalDataset> selected;
  for (const auto& name : datasets) {
    const auto it = std::find_if(all.begin(), all.end(), [&](const auto& d) { return d.name == name; });
    if (it == all.end()) {
      std::string known;
      for (const auto& d : all) known += (known.empty() ? "" : ", ") + d.name;
      throw Error("unknown dataset '" + name + "'; configured: " + known);
    }
    selected.push_back(*it);
  }
  if (datasets.empty()) selected = all;

  for (const auto& ds : selected) {
    const auto t0 = std::chrono::steady_clock::now();
    const LabeledDataset data = materialize(cfg, ds);
    // Grouping class: true class where the dataset has one, predicted otherwise.
    const auto classes = ds.role == DatasetRole::unfamiliar ? predict(model, data) : data.labels;
    std::vector<std::string> tags(data.size());
    for (std::size_t i = 0; i < tags.size(); ++i) tags[i] = ds.name + ":" + std::to_string(classes[i]);

    FeatureTable table{model.parameter_names(),
                       extract_features(model, data.images, label, tags, opts.workers)};
    write_json(dir / "datasets" / (ds.name + ".json"),
               manifest(cfg, ds.name,
                        ds.role == DatasetRole::familiar     ? "familiar"
                        : ds.role == DatasetRole::unfamiliar ? "unfamiliar"
                                                             : "corrupted",
                        data, ds.seed, ds.corruption));
    write_file_atomic(dir / "features" / (ds.name + ".csv"), feature_csv(table));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log << ds.name << ": " << data.size() << " samples (" << std::lround(secs * 1000) << " ms)\n";
  }
}

void cmd_fit_detector(const RunConfig& cfg, const RunOptions& opts,
                      const std::optional<fs::path>& familiar_csv,
                      const std::optional<fs::path>& unfamiliar_csv, std::ostream& log) {
  const fs::path dir = run_dir(cfg, opts);
  if (familiar_csv.has_value() != unfamiliar_csv.has_value())
    throw Error("--familiar and --unfamiliar must be given together");
  if (familiar_csv) {
    const std::string fam = familiar_csv->stem().string(), unf = unfamiliar_csv->stem().string();
    fit_pair(cfg, dir, fam + "_vs_" + unf, fam, read_features(*familiar_csv), unf,
             read_features(*unfamiliar_csv), log);
    return;
  }
  const auto pairs = detection_pairs(cfg);
  if (pairs.empty()) throw Error("config defines no unfamiliar or corrupted datasets");
  const FeatureTable familiar = read_features(dir / "features" / (pairs[0].familiar + ".csv"));
  for (const auto& p : pairs)
    fit_pair(cfg, dir, p.name, p.familiar, familiar, p.unfamiliar,
             read_features(dir / "features" / (p.unfamiliar + ".csv")), log);
}

void cmd_eval(const RunConfig& cfg, const RunOptions& opts, std::ostream& log) {
  const fs::path dir = run_dir(cfg, opts);
  const auto pairs = detection_pairs(cfg);
  if (pairs.empty()) throw Error("config defines no unfamiliar or corrupted datasets");

  // Check every artifact up front so a missing one fails before any work.
  std::vector<fs::path> needed = {dir / "model.gprb"};
  for (const auto& ds : eval_datasets(cfg)) needed.push_back(dir / "features" / (ds.name + ".csv"));
  for (const auto& p : pairs) {
    const auto art = pair_artifacts(dir, p.name);
    needed.push_back(art.checkpoint);
    needed.push_back(art.split);
  }
  for (const auto& p : needed)
    if (!fs::exists(p)) throw Error("missing artifact " + p.string());

  const Model model = load_model(cfg, dir / "model.gprb");
  const auto msp_of = [&](const LabeledDataset& data) {
    const Tensor logits = dataset_logits(model, data);
    const std::size_t c = logits.dim(1);
    std::vector<double> out(data.size());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = msp_from_logits(Tensor({c}, std::vector<double>(logits.data().begin() + i * c,
                                                               logits.data().begin() + (i + 1) * c)));
    return out;
  };

  const std::string fam_name = pairs[0].familiar;
  const FeatureTable familiar = read_features(dir / "features" / (fam_name + ".csv"));
  const std::vector<double> familiar_msp = msp_of(load_test_set(cfg));
  const auto datasets = eval_datasets(cfg);

  std::vector<MetricRow> rows;
  std::map<std::string, std::map<std::pair<std::string, int>, double>> grid;  // method → cell
  for (const auto& p : pairs) {
    const FeatureTable unfamiliar = read_features(dir / "features" / (p.unfamiliar + ".csv"));
    const DetectionData data = pair_data(familiar, unfamiliar, p.name);
    const auto art = pair_artifacts(dir, p.name);
    const SplitAssignment split = read_split(art.split);
    for (std::size_t r : split.test)
      if (r >= data.size()) throw Error(art.split.string() + ": row " + std::to_string(r) + " out of range");
    const Detector det = load_detector(art.checkpoint);

    const auto ds = std::find_if(datasets.begin(), datasets.end(),
                                 [&](const auto& d) { return d.name == p.unfamiliar; });
    const std::vector<double> unfamiliar_msp = msp_of(materialize(cfg, *ds));
    if (unfamiliar_msp.size() != unfamiliar.rows.size() || familiar_msp.size() != familiar.rows.size())
      throw Error("pair " + p.name + ": feature CSV row count does not match the dataset");

    const std::vector<double> detector_scores = det.scores(data, split.test);
    DetectionScoreSet gradient, msp, loss;
    for (std::size_t i = 0; i < split.test.size(); ++i) {
      const std::size_t r = split.test[i];
      const bool unf = data.labels[r] == 1;
      const std::size_t k = unf ? r - familiar.rows.size() : r;
      const GradientFeature& f = unf ? unfamiliar.rows[k] : familiar.rows[k];
      (unf ? gradient.unfamiliar : gradient.familiar).push_back(detector_scores[i]);
      (unf ? msp.unfamiliar : msp.familiar).push_back(unf ? unfamiliar_msp[k] : familiar_msp[k]);
      (unf ? loss.unfamiliar : loss.familiar).push_back(loss_score(f));
    }
    for (const auto& [method, scores] :
         {std::pair{"gradient", &gradient}, std::pair{"msp", &msp}, std::pair{"loss", &loss}}) {
      rows.push_back(evaluate(method, p.familiar, p.unfamiliar, *scores));
      if (p.corruption)
        grid[method][{to_string(p.corruption->kind), p.corruption->severity}] = rows.back().auroc;
    }
  }

  write_file_atomic(dir / "metrics.csv", metrics_csv(rows));
  std::string text = metrics_table(rows);
  if (!cfg.corruption_kinds.empty()) {
    std::string csv = "method,corruption";
    for (int s : cfg.corruption_severities) csv += ",severity_" + std::to_string(s);
    csv += "\n";
    text += "\nAUROC (%) by corruption and severity\n";
    for (const char* method : {"gradient", "msp", "loss"}) {
      text += "\n" + std::string(method) + "\n" + std::string(16, ' ');
      for (int s : cfg.corruption_severities) text += "      " + std::to_string(s);
      text += "\n";
      for (CorruptionKind k : cfg.corruption_kinds) {
        csv += std::string(method) + "," + to_string(k);
        std::string line = to_string(k);
        line.resize(16, ' ');
        for (int s : cfg.corruption_severities) {
          const double v = grid[method].at({to_string(k), s});
          csv += "," + format_double(v);
          char cell[16];
          std::snprintf(cell, sizeof cell, "%7.2f", 100.0 * v);
          line += cell;
        }
        csv += "\n";
        text += line + "\n";
      }
    }
    write_file_atomic(dir / "corruption_auroc.csv", csv);
  }
  write_file_atomic(dir / "metrics.txt", text);
  log << text;
}

std::pair<std::string, std::size_t> parse_source_label(const std::string& tag) {
  const auto colon = tag.rfind(':');
  if (colon == std::string::npos || colon + 1 == tag.size())
    throw Error("source_label '" + tag + "' is not <dataset>:<class>");
  const std::string cls = tag.substr(colon + 1);
  if (!std::all_of(cls.begin(), cls.end(), [](char c) { return c >= '0' && c <= '9'; }))
    throw Error("source_label '" + tag + "' has a non-numeric class");
  return {tag.substr(0, colon), static_cast<std::size_t>(std::stoull(cls))};
}

namespace {

void check_same_columns(const std::vector<SummaryInput>& inputs) {
  for (const auto& in : inputs)
    if (in.table.parameter_names != inputs.front().table.parameter_names)
      throw ShapeError(in.dataset + ": feature columns differ from " + inputs.front().dataset);
}

}  // namespace

std::string summary_csv(const std::vector<SummaryInput>& inputs, std::size_t classes,
                        std::vector<std::string>* warnings) {
  if (inputs.empty()) throw Error("summarize: no feature tables");
  check_same_columns(inputs);
  std::string out = "dataset,class,count,mean_loss";
  for (const auto& name : inputs.front().table.parameter_names) out += "," + name;
  out += "\n";
  for (const auto& in : inputs) {
    std::vector<std::size_t> class_of;
    for (const auto& row : in.table.rows) class_of.push_back(parse_source_label(row.source_label).second);
    std::size_t n = classes;
    if (n == 0)
      for (std::size_t c : class_of) n = std::max(n, c + 1);
    const ClassAverages avg = per_class_average_norms(in.table.rows, class_of, n);
    if (warnings)
      for (const auto& w : avg.warnings) warnings->push_back(in.dataset + ": " + w);
    for (const auto& [cls, a] : avg.by_class) {
      out += in.dataset + "," + std::to_string(cls) + "," + std::to_string(a.count) + "," +
             format_double(a.mean_loss);
      for (double v : a.mean_values) out += "," + format_double(v);
      out += "\n";
    }
  }
  return out;
}

std::string histogram_csv(const std::vector<SummaryInput>& inputs, std::size_t bins) {
  if (inputs.empty()) throw Error("summarize: no feature tables");
  if (bins == 0) throw Error("histogram needs at least one bin");
  check_same_columns(inputs);
  std::vector<std::string> attributes = inputs.front().table.parameter_names;
  attributes.push_back("loss");
  const auto value = [&](const GradientFeature& f, std::size_t a) {
    return a < f.values.size() ? f.values[a] : f.loss;
  };

  std::string out = "attribute,dataset,bin,lower,upper,count\n";
  for (std::size_t a = 0; a < attributes.size(); ++a) {
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& in : inputs)
      for (const auto& f : in.table.rows) {
        lo = std::min(lo, value(f, a));
        hi = std::max(hi, value(f, a));
      }
    if (!(lo <= hi)) lo = hi = 0.0;
    const double width = hi > lo ? (hi - lo) / static_cast<double>(bins) : 1.0;
    for (const auto& in : inputs) {
      std::vector<std::size_t> counts(bins, 0);
      for (const auto& f : in.table.rows) {
        const auto b = static_cast<std::size_t>((value(f, a) - lo) / width);
        ++counts[std::min(b, bins - 1)];
      }
      for (std::size_t b = 0; b < bins; ++b)
        out += attributes[a] + "," + in.dataset + "," + std::to_string(b) + "," +
               format_double(lo + width * static_cast<double>(b)) + "," +
               format_double(lo + width * static_cast<double>(b + 1)) + "," +
               std::to_string(counts[b]) + "\n";
    }
  }
  return out;
}

void cmd_summarize(const std::vector<fs::path>& feature_csvs, const fs::path& out_dir,
                   std::size_t classes, std::ostream& log) {
  std::vector<fs::path> files = feature_csvs;
  if (files.empty()) {
    const fs::path features = out_dir / "features";
    if (!fs::is_directory(features)) throw Error("missing artifact " + features.string());
    for (const auto& e : fs::directory_iterator(features))
      if (e.path().extension() == ".csv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw Error("no feature CSVs in " + features.string());
  }
  std::vector<SummaryInput> inputs;
  for (const auto& f : files) inputs.push_back({f.stem().string(), read_features(f)});
  std::vector<std::string> warnings;
  write_file_atomic(out_dir / "summary.csv", summary_csv(inputs, classes, &warnings));
  write_file_atomic(out_dir / "histograms.csv", histogram_csv(inputs));
  for (const auto& w : warnings) log << "warning: " << w << "\n";
  log << "summarized " << inputs.size() << " feature tables into " << (out_dir / "summary.csv").string()
      << "\n";
}

}  // namespace gradprobe

// gradprobe train|extract|fit-detector|eval|summarize --config <path> [--workers N] [--out DIR]

#include <CLI11.hpp>
#include <iostream>

#include "gradprobe/pipeline.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"Gradient-norm uncertainty features for unfamiliar-input detection"};
  app.require_subcommand(1);

  std::string config_path;
  gradprobe::RunOptions opts;
  std::string out_dir;
  auto add_common = [&](CLI::App* cmd, bool config_required) {
    auto* opt = cmd->add_option("--config", config_path, "JSON run configuration");
    if (config_required) opt->required()->check(CLI::ExistingFile);
    cmd->add_option("--workers", opts.workers, "threads used for feature extraction")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--out", out_dir, "run directory (overrides output_dir)");
  };

  auto* train = app.add_subcommand("train", "train the classifier");
  add_common(train, true);

  auto* extract = app.add_subcommand("extract", "write gradient feature CSVs");
  add_common(extract, true);
  std::vector<std::string> datasets;
  std::string checkpoint;
  extract->add_option("--dataset", datasets, "dataset name (repeatable; default all)");
  extract->add_option("--checkpoint", checkpoint, "classifier checkpoint (default <out>/model.gprb)");

  auto* fit = app.add_subcommand("fit-detector", "train the binary detectors");
  add_common(fit, true);
  std::string familiar, unfamiliar;
  fit->add_option("--familiar", familiar, "familiar feature CSV")->check(CLI::ExistingFile);
  fit->add_option("--unfamiliar", unfamiliar, "unfamiliar feature CSV")->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "score every method on the test splits");
  add_common(eval, true);

  auto* summarize = app.add_subcommand("summarize", "per-class averages and histograms");
  add_common(summarize, false);
  std::vector<std::string> features;
  summarize->add_option("--features", features, "feature CSVs (default <out>/features/*.csv)")
      ->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  if (!out_dir.empty()) opts.out = fs::path(out_dir);

  try {
    std::optional<gradprobe::RunConfig> cfg;
    if (!config_path.empty()) cfg = gradprobe::load_config(config_path);

    if (train->parsed()) {
      gradprobe::cmd_train(*cfg, opts, std::cout);
    } else if (extract->parsed()) {
      std::optional<fs::path> ckpt;
      if (!checkpoint.empty()) ckpt = checkpoint;
      gradprobe::cmd_extract(*cfg, opts, datasets, ckpt, std::cout);
    } else if (fit->parsed()) {
      std::optional<fs::path> fam, unf;
      if (!familiar.empty()) fam = familiar;
      if (!unfamiliar.empty()) unf = unfamiliar;
      gradprobe::cmd_fit_detector(*cfg, opts, fam, unf, std::cout);
    } else if (eval->parsed()) {
      gradprobe::cmd_eval(*cfg, opts, std::cout);
    } else if (summarize->parsed()) {
      if (!cfg && !opts.out)
        throw gradprobe::Error("summarize needs --config or --out to locate the run directory");
      const fs::path dir = cfg ? gradprobe::run_dir(*cfg, opts) : *opts.out;
      gradprobe::cmd_summarize({features.begin(), features.end()}, dir, cfg ? cfg->classes() : 0,
                               std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "gradprobe: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

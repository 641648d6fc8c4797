// Command-line front end for the experiment pipeline. Subcommands map onto
// the drivers in pipeline.hpp; this file only parses flags, merges them
// over the config file, and translates failures into exit codes:
//   0  success
//   1  runtime failure (I/O, bad data, a run that could not finish)
//   2  usage or configuration error

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "metadapt/pipeline.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  long long seed = -1;
  int episodes = -1;
  std::string map_category;
  std::string checkpoint;
  std::string out;
  bool full_scale = false;
  std::vector<std::string> sets;
};

void add_common(CLI::App* sub, CommonFlags* f) {
  sub->add_option("--config", f->config_path, "key=value config file");
  sub->add_option("--seed", f->seed, "base RNG seed");
  sub->add_option("--episodes", f->episodes, "episodes (or runs) per category");
  sub->add_option("--map-category", f->map_category,
                  "terrain category, or `all`");
  sub->add_option("--checkpoint", f->checkpoint, "model checkpoint path");
  sub->add_option("--out", f->out, "output directory");
  sub->add_flag("--full-scale", f->full_scale,
                "full evaluation size instead of the desk-scale default");
  sub->add_option("--set", f->sets, "extra key=value overrides");
}

// config file first, then named flags, then --set pairs
metadapt::Config merge_config(const CommonFlags& f) {
  metadapt::Config cfg;
  if (!f.config_path.empty()) {
    try {
      cfg = metadapt::Config::load(f.config_path);
    } catch (const std::exception& e) {
      throw metadapt::UsageError(e.what());
    }
  }
  if (f.seed >= 0) cfg.set("seed", std::to_string(f.seed));
  if (f.episodes >= 0) cfg.set("episodes", std::to_string(f.episodes));
  if (!f.map_category.empty()) cfg.set("map_category", f.map_category);
  if (!f.checkpoint.empty()) cfg.set("checkpoint", f.checkpoint);
  if (!f.out.empty()) cfg.set("out", f.out);
  if (f.full_scale) cfg.set("full_scale", "true");
  for (const auto& kv : f.sets) {
    try {
      cfg.set_kv(kv);
    } catch (const std::exception& e) {
      throw metadapt::UsageError(e.what());
    }
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"terrain-adaptive rover experiment driver"};
  app.require_subcommand(1);

  CommonFlags f;
  std::string configuration;
  std::string dataset;
  std::vector<std::string> report_dirs;

  CLI::App* gen = app.add_subcommand("gen-maps", "write terrain map files");
  add_common(gen, &f);

  CLI::App* collect = app.add_subcommand(
      "collect", "log training runs on the data-generation physics");
  add_common(collect, &f);

  CLI::App* train =
      app.add_subcommand("train", "fit a checkpoint from logged runs");
  add_common(train, &f);
  train->add_option("--dataset", dataset, "directory of run-*.jsonl logs");

  CLI::App* evaluate =
      app.add_subcommand("evaluate", "run one configuration over the courses");
  add_common(evaluate, &f);
  evaluate->add_option("--configuration", configuration,
                       "baseline | sliding-lsq | adaptation | meta-adaptation");

  CLI::App* compare =
      app.add_subcommand("compare", "side-by-side tables from saved reports");
  add_common(compare, &f);
  compare->add_option("reports", report_dirs, "evaluate output directories");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exit 0
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    metadapt::Config cfg = merge_config(f);
    if (!configuration.empty()) cfg.set("configuration", configuration);
    if (!dataset.empty()) cfg.set("dataset", dataset);
    if (gen->parsed()) {
      metadapt::cmd_gen_maps(cfg, std::cout);
    } else if (collect->parsed()) {
      metadapt::cmd_collect(cfg, std::cout);
    } else if (train->parsed()) {
      metadapt::cmd_train(cfg, std::cout);
    } else if (evaluate->parsed()) {
      metadapt::cmd_evaluate(cfg, std::cout);
    } else if (compare->parsed()) {
      metadapt::cmd_compare(report_dirs, cfg, std::cout);
    }
  } catch (const metadapt::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

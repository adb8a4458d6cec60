// Command-line front end: preprocess | train | evaluate | augment-demo |
// ablate, each driven by a JSON run config with flag overrides.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "eclseq/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"eclseq: sequential recommender with equivariant contrastive training"};
  app.require_subcommand(1);

  std::string config_path, mode, output;
  uint64_t seed = 0;
  bool json = false;
  std::vector<int> items;

  auto add_common = [&](CLI::App* sub, bool with_json) {
    sub->add_option("--config", config_path, "JSON run config file");
    sub->add_option("--seed", seed, "override train.seed");
    sub->add_option("--mode", mode, "override train.mode");
    sub->add_option("--output", output, "override output_dir");
    if (with_json) sub->add_flag("--json", json, "emit one JSON document");
  };

  CLI::App* pre = app.add_subcommand("preprocess", "ingest, k-core filter, split, and cache");
  add_common(pre, false);
  CLI::App* train = app.add_subcommand("train", "train one mode on the cached split");
  add_common(train, false);
  CLI::App* eval = app.add_subcommand("evaluate", "rank held-out targets with the checkpoint");
  add_common(eval, true);
  CLI::App* demo = app.add_subcommand("augment-demo", "print operator before/after views");
  add_common(demo, true);
  demo->add_option("items", items, "inline item id list")->required()->expected(-2);
  CLI::App* ablate = app.add_subcommand("ablate", "run all six modes and tabulate");
  add_common(ablate, false);

  CLI11_PARSE(app, argc, argv);

  try {
    eclseq::RunConfig config =
        config_path.empty() ? eclseq::RunConfig{} : eclseq::load_config(config_path);
    for (CLI::App* sub : app.get_subcommands()) {
      if (sub->count("--seed")) config.train.seed = seed;
      if (sub->count("--mode")) config.train.mode = eclseq::mode_from_string(mode);
      if (sub->count("--output")) config.output_dir = output;
    }
    if (pre->parsed()) return eclseq::cmd_preprocess(config, std::cout);
    if (train->parsed()) return eclseq::cmd_train(config, std::cout);
    if (eval->parsed()) return eclseq::cmd_evaluate(config, json, std::cout);
    if (demo->parsed())
      return eclseq::cmd_augment_demo(config, items, config.train.seed, json, std::cout);
    if (ablate->parsed()) return eclseq::cmd_ablate(config, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

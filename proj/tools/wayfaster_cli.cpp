#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "wayfaster/scenario.hpp"

using namespace wayfaster;

namespace {

enum Exit { kOk = 0, kFailure = 1, kInvalidConfig = 2 };

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string model;
  std::string dataset;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Options& o, bool needs_dataset, bool takes_model) {
  cmd->add_option("--config", o.config, "Scenario JSON file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Overrides the config seed");
  cmd->add_option("--out", o.out, "Output directory")->required();
  cmd->add_flag("--quiet", o.quiet, "Suppress the summary line");
  if (takes_model) cmd->add_option("--model", o.model, "Model stem or directory of model_<variant> files");
  if (needs_dataset) cmd->add_option("--dataset", o.dataset, "Dataset directory written by collect")->required();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Traversability learning and navigation in simulation"};
  app.require_subcommand(1);
  Options o;
  auto* collect = app.add_subcommand("collect", "Scripted teleoperation, self-supervised labeling and dataset export");
  auto* train = app.add_subcommand("train", "Train one stand-in model per configured variant");
  auto* navigate = app.add_subcommand("navigate", "Closed-loop navigation run");
  auto* eval = app.add_subcommand("eval", "Mean absolute traversability error of models on a dataset");
  auto* worldgen = app.add_subcommand("worldgen", "Generate a world and write its truth maps");
  add_common(collect, o, false, false);
  add_common(train, o, true, false);
  add_common(navigate, o, false, true);
  add_common(eval, o, true, true);
  add_common(worldgen, o, false, false);
  eval->get_option("--model")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kInvalidConfig;
  }

  ScenarioConfig cfg;
  try {
    cfg = o.config.empty() ? scenario_config_from_json(nlohmann::json::object()) : load_scenario_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
  } catch (const std::exception& e) {
    std::cerr << "invalid configuration: " << e.what() << '\n';
    return kInvalidConfig;
  }

  try {
    CommandResult r;
    if (*collect) {
      r = cmd_collect(cfg, o.out);
    } else if (*train) {
      r = cmd_train(cfg, o.dataset, o.out);
    } else if (*navigate) {
      r = cmd_navigate(cfg, o.model.empty() ? std::nullopt : std::optional<std::filesystem::path>(o.model), o.out);
    } else if (*eval) {
      r = cmd_eval(cfg, o.dataset, find_models(o.model), o.out);
    } else {
      r = cmd_worldgen(cfg, o.out);
    }
    if (!o.quiet) std::cout << r.message << '\n';
    return r.exit_code;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kInvalidConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}

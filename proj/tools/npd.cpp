#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "npd/pipeline.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kRuntime = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"npd: sentiment, opinion and word-graph pipeline for airline tweets"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;

  const std::vector<std::pair<const char*, const char*>> commands = {
      {"ingest", "parse the dataset, tokenize, and split"},
      {"embed", "build document embeddings"},
      {"train", "train the configured model"},
      {"tune", "random hyperparameter search for the forest"},
      {"evaluate", "score the trained model on the test split"},
      {"graph", "build word graphs and rank clusters"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "run configuration (JSON)")->required();
    sub->add_option("--set", overrides, "override a config field, e.g. --set brf.n_trees=200");
    sub->add_option("--seed", seed, "override the run seed");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const auto config = npd::pipeline::load_config(config_path, overrides, seed);
    npd::pipeline::run_command(command, config);
  } catch (const npd::pipeline::ValidationError& e) {
    std::cerr << "npd " << command << ": " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "npd " << command << ": " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "arblab/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Long-tail loss experiments: training runs, paired comparisons, gradient checks"};
  app.require_subcommand(1);

  std::string target;
  std::uint64_t seed = 0;
  std::string out;
  bool quiet = false;

  auto add_overrides = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Override the config seed");
    sub->add_option("--out", out, "Override output.directory");
    sub->add_flag("--quiet", quiet, "Suppress progress output");
  };

  auto* run = app.add_subcommand("run", "Train one configuration and write its artifacts");
  run->add_option("config", target, "INI or JSON config")->required();
  add_overrides(run);

  auto* compare = app.add_subcommand("compare", "Train CE and ARB on identical data and seed");
  compare->add_option("config", target, "INI or JSON config")->required();
  add_overrides(compare);

  auto* props = app.add_subcommand("check-propositions", "Run the gradient-balance checkers");
  props->add_option("config", target, "INI or JSON config")->required();
  add_overrides(props);

  auto* metrics = app.add_subcommand("metrics", "Balance metrics of a saved classifier");
  metrics->add_option("checkpoint", target, "checkpoint.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  CLI::App* chosen = app.get_subcommands().front();
  arblab::RunOverrides overrides;
  if (chosen != metrics) {
    if (chosen->count("--seed") > 0) overrides.seed = seed;
    if (chosen->count("--out") > 0) overrides.out = out;
    overrides.quiet = quiet;
  }
  return arblab::dispatch(chosen->get_name(), target, overrides, std::cout, std::cerr);
}

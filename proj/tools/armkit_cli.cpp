#include <cstdio>
#include <exception>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "armkit/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"armkit: activation redistribution toolkit"};
  app.require_subcommand(1, 1);

  std::string config_path, preset, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<double> tol;
  std::size_t parallel = 1;
  bool no_timestamp = false;

  app.add_option("--config", config_path, "Experiment config file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Top-level seed (overrides run.seed)");
  app.add_option("--out", out_dir, "Output directory (overrides run.output_dir)");
  app.add_option("--preset", preset, "ARM hyperparameter preset");
  app.add_option("--parallel", parallel, "Worker threads for Monte-Carlo trials")->check(CLI::PositiveNumber);
  app.add_flag("--no-timestamp", no_timestamp, "Omit timestamps from the run manifest");
  app.add_option("--tol", tol, "Override every theory check tolerance");

  const std::map<std::string, std::string> about = {
      {"init-model", "Write seeded weights (model.json + model.bin)"},
      {"forward", "Run one forward pass and dump logits"},
      {"decode", "Greedy or sampled generation, with n-gram diversity"},
      {"mless", "Insert filler tokens and fit the affine attention model"},
      {"analyze", "Activation metrics, histogram and token-class profile"},
      {"verify-theory", "Numerical checks of the variance propagation claims"},
      {"bench-overhead", "Time ARM against the full MLP"},
  };
  for (const auto& name : armkit::command_names()) app.add_subcommand(name, about.at(name));
  app.add_subcommand("presets", "List ARM presets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  const std::string command = app.get_subcommands().front()->get_name();

  if (command == "presets") {
    for (const auto& p : armkit::kPresets) std::printf("%-16s %s\n", std::string(p.name).c_str(), std::string(p.note).c_str());
    return 0;
  }

  try {
    armkit::ExperimentConfig cfg;
    if (!preset.empty()) armkit::apply_preset(cfg, preset);
    if (!config_path.empty()) cfg = armkit::load_config_file(config_path, cfg);
    if (seed) cfg.seed = *seed;
    if (!out_dir.empty()) cfg.output_dir = out_dir;

    armkit::RunOptions opt;
    opt.out_dir = cfg.output_dir;
    opt.timestamps = !no_timestamp;
    opt.threads = parallel;
    opt.tol = tol;
    const int rc = armkit::run_command(command, cfg, opt);
    std::printf("%s: %s (%s)\n", command.c_str(), rc == 0 ? "ok" : "failed", opt.out_dir.string().c_str());
    return rc;
  } catch (const armkit::ConfigError& e) {
    std::fprintf(stderr, "armkit %s: config error: %s\n", command.c_str(), e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "armkit %s: error: %s\n", command.c_str(), e.what());
    return 1;
  }
}

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "canfp/error.hpp"
#include "canfp/pipeline.hpp"

namespace {

struct Overrides {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  int duration = 0;
  std::size_t k = 0;
  std::size_t jobs = 0;
};

canfp::PipelineConfig resolve(const Overrides& o, const CLI::App& app) {
  canfp::PipelineConfig cfg = o.config.empty() ? canfp::PipelineConfig{} : canfp::load_config(o.config);
  if (app.count("--out")) cfg.out_dir = o.out;
  if (app.count("--seed")) cfg.seed = o.seed;
  if (app.count("--duration")) cfg.split.sample_duration_s = o.duration;
  if (app.count("--k")) cfg.mixture.k = o.k;
  if (app.count("--jobs")) cfg.jobs = o.jobs;
  if (cfg.seed) cfg.split.seed = *cfg.seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Driver re-identification from CAN bus logs"};
  app.require_subcommand(1, 0);
  Overrides o;
  app.add_option("--config", o.config, "Pipeline config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--out", o.out, "Output directory");
  app.add_option("--seed", o.seed, "Global seed");
  app.add_option("--duration", o.duration, "Sample duration in seconds")->check(CLI::IsMember({20, 60, 120}));
  app.add_option("--k", o.k, "Number of experts in the mixture")->check(CLI::PositiveNumber);
  app.add_option("--jobs", o.jobs, "Parallel ITS training jobs")->check(CLI::PositiveNumber);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort of CAN logs");
  auto* extract = app.add_subcommand("extract", "Extract, filter and resample byte channels");
  auto* split = app.add_subcommand("split", "Build the train/validation/test regions");
  auto* train_its = app.add_subcommand("train-its", "Train one classifier per channel and rank them");
  auto* train_mix = app.add_subcommand("train-mixture", "Train the all-vs-all mixture over the top-K experts");
  auto* eval = app.add_subcommand("eval", "Run the configured scenarios and write reports");
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  for (auto* sub : {synth, extract, split, train_its, train_mix, eval, gradcheck}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  canfp::PipelineConfig cfg;
  try {
    cfg = resolve(o, app);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  }

  try {
    if (*synth) canfp::cmd_synth(cfg);
    if (*extract) canfp::cmd_extract(cfg);
    if (*split) canfp::cmd_split(cfg);
    if (*train_its) canfp::cmd_train_its(cfg);
    if (*train_mix) canfp::cmd_train_mixture(cfg);
    if (*eval) canfp::cmd_eval(cfg);
    if (*gradcheck) {
      for (const auto& r : canfp::cmd_gradcheck(cfg)) {
        if (!r.passed) return 3;
      }
    }
  } catch (const canfp::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return canfp::exit_code_for(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "canfp/pipeline.hpp"

namespace fixtures {

namespace fs = std::filesystem;

inline fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("canfp_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

struct DeskRun {
  std::size_t drivers = 5;
  double duration_s = 1789.0;
  double separation = 1.0;
  int sample_s = 20;
  double shift_s = 2.0;
  double validation_fraction = 0.25;
  std::size_t k = 2;
  int its_epochs = 8;
  int mixture_epochs = 30;
  std::string layout_file;  // empty for the default layout
};

// Small ITS so a whole cohort trains in seconds on one core.
inline nlohmann::json desk_config(const fs::path& out, std::uint64_t seed, const DeskRun& r) {
  nlohmann::json synth{{"drivers", r.drivers}, {"duration_s", r.duration_s}, {"separation", r.separation}};
  if (!r.layout_file.empty()) synth["layout"] = r.layout_file;
  return nlohmann::json{
      {"seed", seed},
      {"out_dir", out.string()},
      {"synth", synth},
      {"split",
       {{"sample_duration_s", r.sample_s},
        {"window_shift_s", r.shift_s},
        {"validation_fraction", r.validation_fraction}}},
      {"its",
       {{"seg_len_s", 2},
        {"kernel_s", 0.3},
        {"conv_stride_s", 0.1},
        {"filters1", 8},
        {"filters2", 8},
        {"pool", 2},
        {"fc_units", 16},
        {"lstm_hidden", 8},
        {"batch_size", 16},
        {"max_epochs", r.its_epochs},
        {"patience", 3}}},
      {"optimizer", {{"learning_rate", 0.001}}},
      {"mixture", {{"k", r.k}, {"batch_size", 16}, {"max_epochs", r.mixture_epochs}, {"patience", 5}}},
      {"scenarios", nlohmann::json::array({{{"kind", "one_vs_all"}}, {{"kind", "all_vs_all"}}})}};
}

struct DeskResult {
  std::vector<canfp::RankEntry> ranking;
  std::vector<canfp::EvalReport> reports;

  const canfp::EvalReport& scenario(const std::string& name) const {
    for (const auto& r : reports) {
      if (r.scenario == name) return r;
    }
    throw canfp::Error(canfp::Errc::invalid_argument, "no report for " + name);
  }
};

inline DeskResult run_desk(const canfp::PipelineConfig& cfg) {
  canfp::cmd_synth(cfg);
  canfp::cmd_extract(cfg);
  canfp::cmd_split(cfg);
  DeskResult res;
  res.ranking = canfp::cmd_train_its(cfg);
  canfp::cmd_train_mixture(cfg);
  res.reports = canfp::cmd_eval(cfg);
  return res;
}

}  // namespace fixtures

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "canfp/channels.hpp"
#include "canfp/evaluation.hpp"
#include "canfp/gradcheck.hpp"
#include "canfp/its_model.hpp"
#include "canfp/mixture.hpp"
#include "canfp/sampling.hpp"
#include "canfp/synthetic.hpp"

namespace canfp {

struct SynthConfig {
  std::size_t drivers = 5;
  double duration_s = 1789.0;  // 29.81 min
  double separation = 1.0;
  std::optional<std::filesystem::path> layout;  // default_layout() when unset
};

/// Single JSON document driving every command. Unset optional paths fall
/// back to locations inside out_dir.
struct PipelineConfig {
  std::optional<std::uint64_t> seed;
  std::filesystem::path out_dir = "canfp_out";
  SynthConfig synth;
  std::map<std::string, std::filesystem::path> logs;  // driver -> log file
  FilterConfig filter;
  SplitSpec split;
  ItsConfig its;
  TrainConfig its_train;
  MixtureConfig mixture;
  TrainConfig mixture_train;
  std::vector<ScenarioSpec> scenarios{{ScenarioKind::one_vs_all, 2, 1}, {ScenarioKind::all_vs_all, 0, 1}};
  std::optional<std::filesystem::path> metadata;
  std::size_t jobs = 1;

  /// Throws invalid_argument when the seed is missing.
  std::uint64_t require_seed() const;
};

/// Unknown keys are rejected (bad_format) so typos do not pass silently.
PipelineConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PipelineConfig& cfg);
PipelineConfig load_config(const std::filesystem::path& path);

/// Maps an error code to the CLI exit status: 1 user error, 2 data error,
/// 3 internal invariant violation.
int exit_code_for(Errc code);

/// Destination of key=value progress records (stderr by default, nullptr
/// silences them).
void set_progress_stream(std::ostream* out);
void progress(const std::string& stage, const std::vector<std::pair<std::string, std::string>>& fields);

// ---- stored artifacts --------------------------------------------------------

struct ChannelManifest {
  std::vector<std::string> drivers;
  struct Entry {
    ChannelId id;
    double rate_hz = 0.0;
    std::size_t n_points = 0;  // shortest series over the drivers
  };
  std::vector<Entry> channels;
};

void write_series(const TimeSeries& ts, std::ostream& out);
TimeSeries read_series(std::istream& in);
std::string series_file_name(const ChannelId& id);  // "00c4_0.txt"

void write_channel_manifest(const ChannelManifest& m, std::ostream& out);
ChannelManifest read_channel_manifest(std::istream& in);

/// Drivers in manifest order with every listed channel loaded.
std::vector<DriverSeries> load_channels(const std::filesystem::path& out_dir);
SplitResult load_split(const std::filesystem::path& out_dir, SplitSpec* spec_out = nullptr);
std::vector<RankEntry> read_ranking(const std::filesystem::path& path);
std::vector<DriverMeta> load_metadata(const std::filesystem::path& path);

// ---- commands ----------------------------------------------------------------

/// Synthetic cohort: logs/<driver>.log, layout.json, drivers.json.
void cmd_synth(const PipelineConfig& cfg);
/// Parses, filters and resamples every driver's log into channels/.
/// Fails before writing anything when a log is missing or unreadable.
ChannelManifest cmd_extract(const PipelineConfig& cfg);
/// Region boundaries for every driver in split.manifest.
SplitResult cmd_split(const PipelineConfig& cfg);
/// One multiclass ITS model per retained channel plus models/ranking.txt.
std::vector<RankEntry> cmd_train_its(const PipelineConfig& cfg);
/// All-vs-all mixture over the top-K experts in models/mixture_all.json.
MixtureModel cmd_train_mixture(const PipelineConfig& cfg);
/// Runs the configured scenarios and writes reports/<scenario>_<dur>s.{json,csv}.
std::vector<EvalReport> cmd_eval(const PipelineConfig& cfg);
/// Layer gradient checks; writes reports/gradcheck.json when out_dir exists.
std::vector<GradcheckReport> cmd_gradcheck(const PipelineConfig& cfg);

}  // namespace canfp

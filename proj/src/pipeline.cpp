#include "canfp/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "canfp/error.hpp"
#include "canfp/gradcheck.hpp"

namespace canfp {

using nlohmann::json;
namespace fs = std::filesystem;

// ---- progress ------------------------------------------------------------------

namespace {

std::ostream* g_progress = &std::cerr;
std::mutex g_progress_mutex;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

void set_progress_stream(std::ostream* out) {
  std::lock_guard lock(g_progress_mutex);
  g_progress = out;
}

void progress(const std::string& stage, const std::vector<std::pair<std::string, std::string>>& fields) {
  std::lock_guard lock(g_progress_mutex);
  if (g_progress == nullptr) return;
  std::string line = "stage=" + stage;
  for (const auto& [k, v] : fields) line += " " + k + "=" + v;
  *g_progress << line << '\n';
  g_progress->flush();
}

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::io_failure:
    case Errc::config_infeasible:
    case Errc::invalid_argument:
    case Errc::not_enough_subsets:
    case Errc::missing_meta:
      return 1;
    case Errc::malformed_line:
    case Errc::length_mismatch:
    case Errc::id_out_of_range:
    case Errc::empty_intersection:
    case Errc::too_few_points:
    case Errc::window_too_long:
    case Errc::sample_too_short:
    case Errc::trace_too_short:
    case Errc::empty_class:
    case Errc::empty_dataset:
    case Errc::missing_channel:
    case Errc::empty_input:
    case Errc::hash_mismatch:
    case Errc::bad_format:
    case Errc::inconsistent_experts:
      return 2;
    case Errc::filter_too_long:
    case Errc::shape_mismatch:
    case Errc::degenerate_batch:
    case Errc::label_out_of_range:
    case Errc::non_finite_value:
      return 3;
  }
  return 3;
}

// ---- config --------------------------------------------------------------------

std::uint64_t PipelineConfig::require_seed() const {
  if (!seed) throw Error(Errc::invalid_argument, "a global seed is required (config \"seed\" or --seed)");
  return *seed;
}

namespace {

void check_keys(const json& j, const char* section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw Error(Errc::bad_format, std::string("config section '") + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw Error(Errc::bad_format, std::string("unknown config key '") + section + "." + key + "'");
    }
  }
}

template <class T>
void read(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

void read_train(const json& j, TrainConfig& t) {
  read(j, "batch_size", t.batch_size);
  read(j, "max_epochs", t.max_epochs);
  read(j, "patience", t.patience);
}

json train_json(const TrainConfig& t) {
  return json{{"batch_size", t.batch_size}, {"max_epochs", t.max_epochs}, {"patience", t.patience}};
}

}  // namespace

PipelineConfig config_from_json(const json& j) {
  PipelineConfig c;
  try {
    check_keys(j, "root",
               {"seed", "out_dir", "synth", "logs", "filter", "split", "its", "optimizer", "mixture", "scenarios",
                "metadata", "jobs"});
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("synth")) {
      const auto& s = j.at("synth");
      check_keys(s, "synth", {"drivers", "duration_s", "separation", "layout"});
      read(s, "drivers", c.synth.drivers);
      read(s, "duration_s", c.synth.duration_s);
      read(s, "separation", c.synth.separation);
      if (s.contains("layout")) c.synth.layout = s.at("layout").get<std::string>();
    }
    if (j.contains("logs")) {
      for (const auto& [driver, path] : j.at("logs").items()) c.logs[driver] = path.get<std::string>();
    }
    if (j.contains("filter")) {
      const auto& f = j.at("filter");
      check_keys(f, "filter", {"min_points", "counter_fraction"});
      read(f, "min_points", c.filter.min_points);
      read(f, "counter_fraction", c.filter.counter_fraction);
    }
    if (j.contains("split")) {
      const auto& s = j.at("split");
      check_keys(s, "split", {"train_fraction", "validation_fraction", "window_shift_s", "sample_duration_s"});
      read(s, "train_fraction", c.split.train_fraction);
      read(s, "validation_fraction", c.split.validation_fraction);
      read(s, "window_shift_s", c.split.window_shift_s);
      read(s, "sample_duration_s", c.split.sample_duration_s);
    }
    if (j.contains("its")) {
      const auto& s = j.at("its");
      check_keys(s, "its",
                 {"seg_len_s", "kernel_s", "conv_stride_s", "filters1", "filters2", "pool", "fc_units", "lstm_hidden",
                  "dropout_rate", "batch_size", "max_epochs", "patience"});
      json arch = s;
      for (const char* k : {"batch_size", "max_epochs", "patience"}) arch.erase(k);
      c.its = its_config_from_json(arch);
      read_train(s, c.its_train);
    }
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      check_keys(o, "optimizer", {"learning_rate", "rho", "epsilon"});
      OptimizerConfig opt;
      read(o, "learning_rate", opt.learning_rate);
      read(o, "rho", opt.rho);
      read(o, "epsilon", opt.epsilon);
      c.its_train.optimizer = opt;
      c.mixture_train.optimizer = opt;
    }
    if (j.contains("mixture")) {
      const auto& m = j.at("mixture");
      check_keys(m, "mixture", {"k", "dropout_rate", "batch_size", "max_epochs", "patience"});
      read(m, "k", c.mixture.k);
      read(m, "dropout_rate", c.mixture.dropout_rate);
      read_train(m, c.mixture_train);
    }
    if (j.contains("scenarios")) {
      c.scenarios.clear();
      for (const auto& s : j.at("scenarios")) {
        check_keys(s, "scenarios[]", {"kind", "group_size", "trials"});
        ScenarioSpec spec;
        spec.kind = parse_scenario_kind(s.at("kind").get<std::string>());
        read(s, "group_size", spec.group_size);
        read(s, "trials", spec.trials);
        c.scenarios.push_back(spec);
      }
    }
    if (j.contains("metadata")) c.metadata = j.at("metadata").get<std::string>();
    read(j, "jobs", c.jobs);
  } catch (const json::exception& e) {
    throw Error(Errc::bad_format, std::string("config: ") + e.what());
  }
  if (c.seed) c.split.seed = *c.seed;
  if (c.jobs == 0) throw Error(Errc::invalid_argument, "jobs must be >= 1");
  if (c.mixture.k == 0) throw Error(Errc::invalid_argument, "k must be >= 1");
  return c;
}

json to_json(const PipelineConfig& c) {
  json its = to_json(c.its);
  its.erase("head");
  for (auto& [k, v] : train_json(c.its_train).items()) its[k] = v;
  json mixture{{"k", c.mixture.k}, {"dropout_rate", c.mixture.dropout_rate}};
  for (auto& [k, v] : train_json(c.mixture_train).items()) mixture[k] = v;
  json scenarios = json::array();
  for (const auto& s : c.scenarios) {
    scenarios.push_back({{"kind", to_string(s.kind)}, {"group_size", s.group_size}, {"trials", s.trials}});
  }
  json logs = json::object();
  for (const auto& [d, p] : c.logs) logs[d] = p.string();
  json synth{{"drivers", c.synth.drivers}, {"duration_s", c.synth.duration_s}, {"separation", c.synth.separation}};
  if (c.synth.layout) synth["layout"] = c.synth.layout->string();
  json j{{"out_dir", c.out_dir.string()},
         {"synth", synth},
         {"logs", logs},
         {"filter", {{"min_points", c.filter.min_points}, {"counter_fraction", c.filter.counter_fraction}}},
         {"split",
          {{"train_fraction", c.split.train_fraction},
           {"validation_fraction", c.split.validation_fraction},
           {"window_shift_s", c.split.window_shift_s},
           {"sample_duration_s", c.split.sample_duration_s}}},
         {"its", its},
         {"optimizer",
          {{"learning_rate", c.its_train.optimizer.learning_rate},
           {"rho", c.its_train.optimizer.rho},
           {"epsilon", c.its_train.optimizer.epsilon}}},
         {"mixture", mixture},
         {"scenarios", scenarios},
         {"jobs", c.jobs}};
  if (c.seed) j["seed"] = *c.seed;
  if (c.metadata) j["metadata"] = c.metadata->string();
  return j;
}

PipelineConfig load_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw Error(Errc::bad_format, path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

// ---- artifacts --------------------------------------------------------------------

std::string series_file_name(const ChannelId& id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04x_%u.txt", id.can_id, static_cast<unsigned>(id.byte_offset));
  return buf;
}

void write_series(const TimeSeries& ts, std::ostream& out) {
  out << "# canfp series v1\n";
  out << "channel " << ts.id.can_id << ' ' << static_cast<unsigned>(ts.id.byte_offset) << '\n';
  out << "rate_hz " << json(ts.rate_hz).dump() << '\n';
  out << "t0_us " << ts.t0_us << '\n';
  out << "n " << ts.values.size() << '\n';
  for (double v : ts.values) out << std::lround(v * 255.0) << '\n';
}

TimeSeries read_series(std::istream& in) {
  TimeSeries ts;
  std::string line, key;
  if (!std::getline(in, line) || line != "# canfp series v1") throw Error(Errc::bad_format, "not a series file");
  std::size_t n = 0;
  unsigned offset = 0;
  if (!(in >> key >> ts.id.can_id >> offset) || key != "channel") throw Error(Errc::bad_format, "series channel line");
  ts.id.byte_offset = static_cast<std::uint8_t>(offset);
  if (!(in >> key >> ts.rate_hz) || key != "rate_hz") throw Error(Errc::bad_format, "series rate line");
  if (!(in >> key >> ts.t0_us) || key != "t0_us") throw Error(Errc::bad_format, "series t0 line");
  if (!(in >> key >> n) || key != "n") throw Error(Errc::bad_format, "series length line");
  ts.values.resize(n);
  for (auto& v : ts.values) {
    int b = 0;
    if (!(in >> b) || b < 0 || b > 255) throw Error(Errc::bad_format, "series value");
    v = static_cast<double>(b) / 255.0;
  }
  return ts;
}

void write_channel_manifest(const ChannelManifest& m, std::ostream& out) {
  out << "# canfp channel manifest v1\n";
  out << "drivers";
  for (const auto& d : m.drivers) out << ' ' << d;
  out << '\n';
  char buf[96];
  for (const auto& e : m.channels) {
    std::snprintf(buf, sizeof buf, "0x%04x %u %s %zu\n", e.id.can_id, static_cast<unsigned>(e.id.byte_offset),
                  json(e.rate_hz).dump().c_str(), e.n_points);
    out << buf;
  }
}

ChannelManifest read_channel_manifest(std::istream& in) {
  ChannelManifest m;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string first;
    ls >> first;
    if (first == "drivers") {
      for (std::string d; ls >> d;) m.drivers.push_back(d);
      continue;
    }
    ChannelManifest::Entry e;
    unsigned offset = 0;
    try {
      e.id.can_id = static_cast<std::uint32_t>(std::stoul(first, nullptr, 16));
    } catch (const std::logic_error&) {
      throw Error(Errc::bad_format, "manifest line '" + line + "'");
    }
    if (!(ls >> offset >> e.rate_hz >> e.n_points)) throw Error(Errc::bad_format, "manifest line '" + line + "'");
    e.id.byte_offset = static_cast<std::uint8_t>(offset);
    m.channels.push_back(e);
  }
  if (m.drivers.empty() || m.channels.empty()) throw Error(Errc::bad_format, "channel manifest lists no drivers or channels");
  return m;
}

namespace {

fs::path channels_dir(const PipelineConfig& c) { return c.out_dir / "channels"; }
fs::path models_dir(const fs::path& out) { return out / "models"; }

std::ifstream open_in(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(Errc::io_failure, "cannot open " + p.string());
  return in;
}

}  // namespace

std::vector<DriverSeries> load_channels(const fs::path& out_dir) {
  auto in = open_in(out_dir / "channels" / "manifest.txt");
  const auto manifest = read_channel_manifest(in);
  std::vector<DriverSeries> drivers;
  for (const auto& name : manifest.drivers) {
    DriverSeries d;
    d.driver = name;
    for (const auto& e : manifest.channels) {
      auto sin = open_in(out_dir / "channels" / name / series_file_name(e.id));
      auto ts = read_series(sin);
      if (ts.id != e.id) throw Error(Errc::bad_format, "series file holds " + to_string(ts.id));
      d.series.emplace(e.id, std::move(ts));
    }
    drivers.push_back(std::move(d));
  }
  return drivers;
}

SplitResult load_split(const fs::path& out_dir, SplitSpec* spec_out) {
  auto in = open_in(out_dir / "split.manifest");
  SplitSpec spec;
  const auto regions = read_split_manifest(in, &spec);
  if (spec_out) *spec_out = spec;
  return windows_from_regions(regions, spec);
}

std::vector<RankEntry> read_ranking(const fs::path& path) {
  auto in = open_in(path);
  std::vector<RankEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string id;
    unsigned offset = 0;
    RankEntry e;
    if (!(ls >> id >> offset >> e.val_accuracy)) throw Error(Errc::bad_format, "ranking line '" + line + "'");
    e.channel = {static_cast<std::uint32_t>(std::stoul(id, nullptr, 16)), static_cast<std::uint8_t>(offset)};
    out.push_back(e);
  }
  if (out.empty()) throw Error(Errc::bad_format, path.string() + " lists no experts");
  return out;
}

std::vector<DriverMeta> load_metadata(const fs::path& path) {
  try {
    const json j = json::parse(read_text_file(path));
    std::vector<DriverMeta> out;
    for (const auto& d : j.at("drivers")) out.push_back(driver_meta_from_json(d.contains("meta") ? d.at("meta") : d));
    return out;
  } catch (const json::exception& e) {
    throw Error(Errc::bad_format, path.string() + ": " + e.what());
  }
}

// ---- commands -----------------------------------------------------------------------

void cmd_synth(const PipelineConfig& cfg) {
  const auto seed = cfg.require_seed();
  const BusLayout layout =
      cfg.synth.layout ? bus_layout_from_json(json::parse(read_text_file(*cfg.synth.layout))) : default_layout();
  progress("synth", {{"drivers", std::to_string(cfg.synth.drivers)},
                     {"duration_s", fmt(cfg.synth.duration_s)},
                     {"separation", fmt(cfg.synth.separation)}});
  const Cohort cohort = gen_cohort(cfg.synth.drivers, layout, cfg.synth.duration_s, seed, cfg.synth.separation);
  json drivers = json::array();
  for (std::size_t i = 0; i < cohort.logs.size(); ++i) {
    const auto& name = cohort.profiles[i].driver;
    write_text_file(cfg.out_dir / "logs" / (name + ".log"), write_log(cohort.logs[i]));
    drivers.push_back({{"meta", to_json(cohort.metas[i])}, {"profile", to_json(cohort.profiles[i])}});
    progress("synth", {{"driver", name}, {"frames", std::to_string(cohort.logs[i].frames.size())}});
  }
  write_text_file(cfg.out_dir / "layout.json", to_json(layout).dump(2) + "\n");
  write_text_file(cfg.out_dir / "drivers.json", json{{"drivers", drivers}}.dump(2) + "\n");
}

namespace {

std::map<std::string, fs::path> input_logs(const PipelineConfig& cfg) {
  if (!cfg.logs.empty()) return cfg.logs;
  std::map<std::string, fs::path> out;
  const fs::path dir = cfg.out_dir / "logs";
  if (fs::is_directory(dir)) {
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.path().extension() == ".log") out[e.path().stem().string()] = e.path();
    }
  }
  if (out.empty()) throw Error(Errc::invalid_argument, "no input logs configured and none found in " + dir.string());
  return out;
}

double mode_rate(const std::vector<double>& rates) {
  std::map<double, int> count;
  for (double r : rates) ++count[r];
  double best = 0.0;
  int n = 0;
  for (const auto& [r, c] : count) {
    if (c > n) best = r, n = c;
  }
  return best;
}

}  // namespace

ChannelManifest cmd_extract(const PipelineConfig& cfg) {
  const auto logs = input_logs(cfg);
  if (logs.size() < 2) throw Error(Errc::invalid_argument, "at least two drivers are required");

  std::vector<std::string> names;
  std::vector<ChannelSet> kept;
  std::vector<std::string> failures;
  Errc first_code = Errc::io_failure;
  for (const auto& [driver, path] : logs) {
    try {
      std::ifstream in(path);
      if (!in) throw Error(Errc::io_failure, "cannot open " + path.string());
      const auto parsed = parse_log(in, driver);
      if (parsed.log.frames.empty()) throw Error(Errc::empty_input, path.string() + " holds no frames");
      const auto channels = extract_channels(parsed.log);
      auto filtered = filter_channels(channels, cfg.filter);
      progress("extract", {{"driver", driver},
                           {"frames", std::to_string(parsed.log.frames.size())},
                           {"bad_lines", std::to_string(parsed.errors.size())},
                           {"channels", std::to_string(channels.size())},
                           {"kept", std::to_string(filtered.size())}});
      names.push_back(driver);
      kept.push_back(std::move(filtered));
    } catch (const Error& e) {
      if (failures.empty()) first_code = e.code();
      failures.push_back(driver + ": " + e.what());
      progress("extract", {{"driver", driver}, {"status", "failed"}, {"error", std::string(errc_name(e.code()))}});
    }
  }
  if (!failures.empty()) {
    std::string summary = std::to_string(failures.size()) + " of " + std::to_string(logs.size()) +
                          " drivers failed; nothing was written";
    for (const auto& f : failures) summary += "\n  " + f;
    throw Error(first_code, summary);
  }

  std::vector<std::set<ChannelId>> ids;
  for (const auto& k : kept) ids.push_back(channel_ids(k));
  const auto common = intersect_common(ids);

  ChannelManifest manifest;
  manifest.drivers = names;
  for (const auto& id : common) {
    std::vector<double> rates;
    for (const auto& k : kept) rates.push_back(estimate_rate(k.at(id)));
    manifest.channels.push_back({id, mode_rate(rates), 0});
  }

  const fs::path dir = channels_dir(cfg);
  fs::create_directories(dir);
  for (std::size_t d = 0; d < names.size(); ++d) {
    const fs::path tmp = dir / (".tmp_" + names[d]);
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    for (auto& e : manifest.channels) {
      const auto ts = resample(kept[d].at(e.id), e.rate_hz);
      e.n_points = d == 0 ? ts.size() : std::min(e.n_points, ts.size());
      std::ostringstream out;
      write_series(ts, out);
      write_text_file(tmp / series_file_name(e.id), out.str());
    }
    fs::remove_all(dir / names[d]);
    fs::rename(tmp, dir / names[d]);
  }
  std::ostringstream mout;
  write_channel_manifest(manifest, mout);
  write_text_file(dir / "manifest.txt", mout.str());
  progress("extract", {{"drivers", std::to_string(names.size())}, {"common_channels", std::to_string(common.size())}});
  return manifest;
}

SplitResult cmd_split(const PipelineConfig& cfg) {
  SplitSpec spec = cfg.split;
  spec.seed = cfg.require_seed();
  const auto drivers = load_channels(cfg.out_dir);
  auto split = split_traces(drivers, spec);
  std::ostringstream out;
  write_split_manifest(split.regions, spec, out);
  write_text_file(cfg.out_dir / "split.manifest", out.str());
  progress("split", {{"train", std::to_string(split.train.size())},
                     {"validation", std::to_string(split.validation.size())},
                     {"test", std::to_string(split.test.size())}});
  return split;
}

namespace {

std::uint64_t channel_seed(std::uint64_t seed, const ChannelId& id) {
  return mix_seed(seed, (static_cast<std::uint64_t>(id.can_id) << 8) | id.byte_offset);
}

// Runs job(i) for i in [0, n) on up to `jobs` threads; the first failure in
// index order is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& job) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto threads = std::min(jobs, n);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void check_split_matches(const SplitSpec& stored, const PipelineConfig& cfg) {
  if (stored.sample_duration_s != cfg.split.sample_duration_s) {
    throw Error(Errc::invalid_argument, "split.manifest was built for " + fmt(stored.sample_duration_s) +
                                            " s samples; rerun split for " + fmt(cfg.split.sample_duration_s) + " s");
  }
}

std::vector<ItsModel> load_experts(const fs::path& out_dir, std::size_t k) {
  const auto ranking = read_ranking(models_dir(out_dir) / "ranking.txt");
  std::vector<ItsModel> experts;
  for (const auto& ch : top_k(ranking, k)) experts.push_back(load_its(models_dir(out_dir) / expert_file_name(ch)));
  return experts;
}

std::vector<std::size_t> all_drivers(std::size_t n) {
  std::vector<std::size_t> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = i;
  return g;
}

}  // namespace

std::vector<RankEntry> cmd_train_its(const PipelineConfig& cfg) {
  const auto seed = cfg.require_seed();
  const auto drivers = load_channels(cfg.out_dir);
  SplitSpec spec;
  const auto split = load_split(cfg.out_dir, &spec);
  check_split_matches(spec, cfg);
  const auto n = drivers.size();
  const auto train = balance(split.train, mix_seed(seed, 21));
  const auto validation = balance(split.validation, mix_seed(seed, 22));

  std::vector<ChannelId> channels;
  for (const auto& [id, ts] : drivers.front().series) channels.push_back(id);
  std::vector<RankEntry> entries(channels.size());

  progress("train-its", {{"channels", std::to_string(channels.size())},
                         {"train", std::to_string(train.size())},
                         {"validation", std::to_string(validation.size())},
                         {"jobs", std::to_string(cfg.jobs)}});
  parallel_for(channels.size(), cfg.jobs, [&](std::size_t i) {
    const auto& ch = channels[i];
    const ChannelData data{&drivers, ch, spec.sample_duration_s, cfg.its.seg_len_s};
    ItsConfig ic = cfg.its;
    ic.head = Head::multiclass(n);
    const auto cs = channel_seed(seed, ch);
    ItsModel model(ic, ch, data.rate_hz(), spec.sample_duration_s, cs);
    TrainConfig tc = cfg.its_train;
    tc.seed = mix_seed(cs, 1);
    const auto fit = train_its(model, data, train, validation, tc);
    save_its(model, models_dir(cfg.out_dir) / expert_file_name(ch));
    entries[i] = {ch, fit.best_val_accuracy};
    progress("train-its", {{"channel", to_string(ch)},
                           {"rate_hz", fmt(data.rate_hz())},
                           {"epochs", std::to_string(fit.epochs_run)},
                           {"val_accuracy", fmt(fit.best_val_accuracy)}});
  });

  const auto ranking = rank_experts(entries);
  std::ostringstream out;
  out << "# can_id byte_offset val_accuracy\n";
  char buf[64];
  for (const auto& e : ranking) {
    std::snprintf(buf, sizeof buf, "0x%04x %u ", e.channel.can_id, static_cast<unsigned>(e.channel.byte_offset));
    out << buf << json(e.val_accuracy).dump() << '\n';
  }
  write_text_file(models_dir(cfg.out_dir) / "ranking.txt", out.str());
  return ranking;
}

MixtureModel cmd_train_mixture(const PipelineConfig& cfg) {
  const auto seed = cfg.require_seed();
  const auto drivers = load_channels(cfg.out_dir);
  SplitSpec spec;
  const auto split = load_split(cfg.out_dir, &spec);
  check_split_matches(spec, cfg);
  const auto experts = load_experts(cfg.out_dir, cfg.mixture.k);
  std::vector<std::string> before;
  for (const auto& e : experts) before.push_back(read_text_file(models_dir(cfg.out_dir) / expert_file_name(e.channel())));

  ExpertBundle bundle(experts);
  const auto n = drivers.size();
  const auto labeled = group_split(split, all_drivers(n), n, mix_seed(seed, 31));
  std::vector<SampleRef> pool(labeled.train);
  pool.insert(pool.end(), labeled.validation.begin(), labeled.validation.end());
  const FeatureCache cache(bundle, drivers, pool);

  auto model = build_mixture(bundle, labeled.head, cfg.mixture.dropout_rate, mix_seed(seed, 32));
  TrainConfig tc = cfg.mixture_train;
  tc.seed = mix_seed(seed, 33);
  const auto fit = train_mixture(model, cache, labeled.train, labeled.validation, tc);

  // The experts must come out of mixture training exactly as they went in.
  for (std::size_t i = 0; i < experts.size(); ++i) {
    const auto file = models_dir(cfg.out_dir) / expert_file_name(experts[i].channel());
    if (bundle.expert(i).serialize() != before[i] || read_text_file(file) != before[i]) {
      throw Error(Errc::hash_mismatch, "expert " + to_string(experts[i].channel()) + " changed during mixture training");
    }
  }
  save_mixture(model, models_dir(cfg.out_dir) / "mixture_all.json");
  progress("train-mixture", {{"k", std::to_string(experts.size())},
                             {"epochs", std::to_string(fit.epochs_run)},
                             {"val_accuracy", fmt(fit.best_val_accuracy)}});
  return model;
}

std::vector<EvalReport> cmd_eval(const PipelineConfig& cfg) {
  const auto seed = cfg.require_seed();
  const auto drivers = load_channels(cfg.out_dir);
  SplitSpec spec;
  const auto split = load_split(cfg.out_dir, &spec);
  check_split_matches(spec, cfg);
  const auto experts = load_experts(cfg.out_dir, cfg.mixture.k);
  ExpertBundle bundle(experts);

  std::vector<SampleRef> pool(split.train);
  pool.insert(pool.end(), split.validation.begin(), split.validation.end());
  pool.insert(pool.end(), split.test.begin(), split.test.end());
  progress("eval", {{"k", std::to_string(experts.size())}, {"cached_samples", std::to_string(pool.size())}});
  const FeatureCache cache(bundle, drivers, pool);

  EvalContext ctx;
  ctx.drivers = &drivers;
  ctx.split = &split;
  ctx.duration_s = spec.sample_duration_s;
  ctx.cache = &cache;
  ctx.experts = bundle.channels();
  ctx.feature_size = bundle.feature_size();
  ctx.dropout_rate = cfg.mixture.dropout_rate;
  ctx.train = cfg.mixture_train;
  ctx.seed = seed;

  std::vector<std::string> names;
  for (const auto& d : drivers) names.push_back(d.driver);
  std::optional<std::vector<DriverMeta>> metas;
  const fs::path meta_path = cfg.metadata ? *cfg.metadata : cfg.out_dir / "drivers.json";
  if (cfg.metadata || fs::exists(meta_path)) metas = load_metadata(meta_path);

  const auto dur_tag = std::to_string(static_cast<long long>(std::llround(spec.sample_duration_s))) + "s";
  std::vector<EvalReport> reports;
  for (const auto& sc : cfg.scenarios) {
    EvalReport rep;
    std::string file;
    switch (sc.kind) {
      case ScenarioKind::one_vs_all:
        rep = run_one_vs_all(ctx);
        if (metas) rep.attributes = attribute_report(rep, *metas, names);
        file = "one_vs_all_" + dur_tag;
        break;
      case ScenarioKind::many_vs_all:
        rep = run_many_vs_all(ctx, sc.group_size, sc.trials);
        file = "many_vs_all_m" + std::to_string(sc.group_size) + "_" + dur_tag;
        break;
      case ScenarioKind::all_vs_all: {
        const auto loaded = load_mixture(models_dir(cfg.out_dir) / "mixture_all.json");
        if (loaded.model.experts() != ctx.experts) {
          throw Error(Errc::inconsistent_experts, "mixture_all.json was trained on a different expert set");
        }
        auto model = loaded.model;
        const auto labeled = group_split(split, all_drivers(drivers.size()), drivers.size(), mix_seed(seed, 31));
        const auto preds = predict_labels(predict(model, cache, labeled.test), labeled.head.kind);
        std::vector<int> labels;
        for (const auto& r : labeled.test) labels.push_back(r.label);
        rep.scenario = "all_vs_all";
        rep.duration_s = spec.sample_duration_s;
        rep.seed = seed;
        rep.k = experts.size();
        rep.models.push_back({"all", accuracy(preds, labels), all_drivers(drivers.size())});
        rep.overall = aggregate(std::vector<double>{rep.models.front().accuracy});
        file = "all_vs_all_" + dur_tag;
        break;
      }
    }
    write_text_file(cfg.out_dir / "reports" / (file + ".json"), to_json(rep).dump(2) + "\n");
    std::ostringstream csv;
    write_csv(rep, csv);
    write_text_file(cfg.out_dir / "reports" / (file + ".csv"), csv.str());
    progress("eval", {{"scenario", rep.scenario},
                      {"models", std::to_string(rep.models.size())},
                      {"mean", fmt(rep.overall.mean)},
                      {"std", fmt(rep.overall.std)},
                      {"min", fmt(rep.overall.min)},
                      {"max", fmt(rep.overall.max)}});
    reports.push_back(std::move(rep));
  }
  return reports;
}

std::vector<GradcheckReport> cmd_gradcheck(const PipelineConfig& cfg) {
  const auto reports = run_layer_gradchecks(cfg.seed.value_or(1));
  json out = json::array();
  for (const auto& r : reports) {
    progress("gradcheck", {{"name", r.name},
                           {"entries", std::to_string(r.entries_checked)},
                           {"max_rel_error", json(r.max_rel_error).dump()},
                           {"tolerance", json(r.tolerance).dump()},
                           {"status", r.passed ? "pass" : "fail"}});
    out.push_back({{"name", r.name},
                   {"entries", r.entries_checked},
                   {"max_rel_error", r.max_rel_error},
                   {"worst_entry", r.worst_entry},
                   {"tolerance", r.tolerance},
                   {"passed", r.passed}});
  }
  if (fs::is_directory(cfg.out_dir)) write_text_file(cfg.out_dir / "reports" / "gradcheck.json", out.dump(2) + "\n");
  return reports;
}

}  // namespace canfp

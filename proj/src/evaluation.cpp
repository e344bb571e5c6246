#include "canfp/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <set>

#include "canfp/error.hpp"

namespace canfp {

using nlohmann::json;

Aggregate aggregate(std::span<const double> values) {
  if (values.empty()) throw Error(Errc::empty_input, "aggregate of no values");
  Aggregate a;
  a.count = values.size();
  a.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - a.mean) * (v - a.mean);
  a.std = std::sqrt(ss / static_cast<double>(values.size()));
  a.max = *std::max_element(values.begin(), values.end());
  a.min = *std::min_element(values.begin(), values.end());
  return a;
}

// ---- metadata ----------------------------------------------------------------

std::string to_string(Gender g) { return g == Gender::male ? "male" : "female"; }

std::string to_string(AgeBracket a) {
  switch (a) {
    case AgeBracket::a20_25: return "20-25";
    case AgeBracket::a25_30: return "25-30";
    case AgeBracket::a30_40: return "30-40";
    case AgeBracket::a40_70: return "40-70";
  }
  return "?";
}

std::string to_string(Experience e) {
  switch (e) {
    case Experience::low: return "low";
    case Experience::average: return "average";
    case Experience::high: return "high";
  }
  return "?";
}

Gender parse_gender(const std::string& s) {
  if (s == "male") return Gender::male;
  if (s == "female") return Gender::female;
  throw Error(Errc::bad_format, "unknown gender '" + s + "'");
}

AgeBracket parse_age(const std::string& s) {
  for (auto a : {AgeBracket::a20_25, AgeBracket::a25_30, AgeBracket::a30_40, AgeBracket::a40_70}) {
    if (to_string(a) == s) return a;
  }
  throw Error(Errc::bad_format, "unknown age bracket '" + s + "'");
}

Experience parse_experience(const std::string& s) {
  for (auto e : {Experience::low, Experience::average, Experience::high}) {
    if (to_string(e) == s) return e;
  }
  throw Error(Errc::bad_format, "unknown experience level '" + s + "'");
}

json to_json(const DriverMeta& m) {
  return json{{"driver", m.driver}, {"gender", to_string(m.gender)}, {"age", to_string(m.age)},
              {"experience", to_string(m.experience)}};
}

DriverMeta driver_meta_from_json(const json& j) {
  return DriverMeta{j.at("driver").get<std::string>(), parse_gender(j.at("gender").get<std::string>()),
                    parse_age(j.at("age").get<std::string>()),
                    parse_experience(j.at("experience").get<std::string>())};
}

// ---- scenarios -----------------------------------------------------------------

std::string to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::one_vs_all: return "one_vs_all";
    case ScenarioKind::many_vs_all: return "many_vs_all";
    case ScenarioKind::all_vs_all: return "all_vs_all";
  }
  return "?";
}

ScenarioKind parse_scenario_kind(const std::string& s) {
  for (auto k : {ScenarioKind::one_vs_all, ScenarioKind::many_vs_all, ScenarioKind::all_vs_all}) {
    if (to_string(k) == s) return k;
  }
  throw Error(Errc::bad_format, "unknown scenario '" + s + "'");
}

std::size_t binomial(std::size_t n, std::size_t m) {
  if (m > n) return 0;
  m = std::min(m, n - m);
  std::size_t c = 1;
  for (std::size_t i = 1; i <= m; ++i) {
    const std::size_t num = n - m + i;
    if (c > std::numeric_limits<std::size_t>::max() / num) return std::numeric_limits<std::size_t>::max();
    c = c * num / i;  // exact: c * num is divisible by i at every step
  }
  return c;
}

std::vector<std::vector<std::size_t>> choose_groups(std::size_t n, std::size_t m, std::size_t trials,
                                                    std::uint64_t seed) {
  if (m < 1 || m > n) {
    throw Error(Errc::invalid_argument, "group size " + std::to_string(m) + " outside 1.." + std::to_string(n));
  }
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (m == n) return {all};
  if (trials == 0) throw Error(Errc::invalid_argument, "at least one trial is required");
  const auto available = binomial(n, m);
  if (trials > available) {
    throw Error(Errc::not_enough_subsets, std::to_string(trials) + " trials requested but only " +
                                              std::to_string(available) + " groups of " + std::to_string(m) + " exist");
  }
  Rng rng(seed);
  std::set<std::vector<std::size_t>> seen;
  std::vector<std::vector<std::size_t>> out;
  while (out.size() < trials) {
    std::shuffle(all.begin(), all.end(), rng);
    std::vector<std::size_t> g(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(m));
    std::sort(g.begin(), g.end());
    if (seen.insert(g).second) out.push_back(std::move(g));
  }
  return out;
}

namespace {

// Training and validation pools are balanced; the test pool keeps every
// available window so its class proportions match the data.
LabeledSplit balanced(std::vector<SampleRef> train, std::vector<SampleRef> val, std::vector<SampleRef> test, Head head,
                      std::uint64_t seed) {
  return LabeledSplit{balance(train, mix_seed(seed, 1)), balance(val, mix_seed(seed, 2)), std::move(test), head};
}

void check_test_isolation(const SplitResult& split, std::span<const SampleRef> test, double duration_s) {
  const auto dur = static_cast<std::int64_t>(std::llround(duration_s * 1e6));
  for (const auto& r : test) {
    const auto& reg = split.regions.at(r.driver);
    if (r.t_start_us < reg.test_start || r.t_start_us + dur > reg.trace_end) {
      throw Error(Errc::invalid_argument, "test sample of " + reg.driver + " at " + std::to_string(r.t_start_us) +
                                              " us lies outside the test region");
    }
  }
}

std::vector<int> labels_of(std::span<const SampleRef> refs) {
  std::vector<int> out;
  for (const auto& r : refs) out.push_back(r.label);
  return out;
}

EvalReport new_report(const EvalContext& ctx, ScenarioKind kind) {
  EvalReport r;
  r.scenario = to_string(kind);
  r.duration_s = ctx.duration_s;
  r.seed = ctx.seed;
  r.k = ctx.experts.size();
  return r;
}

void finish(EvalReport& r) {
  std::vector<double> acc;
  for (const auto& m : r.models) acc.push_back(m.accuracy);
  r.overall = aggregate(acc);
}

}  // namespace

LabeledSplit one_vs_all_split(const SplitResult& split, std::size_t target, std::uint64_t seed) {
  return balanced(relabel_one_vs_all(split.train, target), relabel_one_vs_all(split.validation, target),
                  relabel_one_vs_all(split.test, target), Head::binary(), seed);
}

LabeledSplit group_split(const SplitResult& split, const std::vector<std::size_t>& group, std::size_t n_drivers,
                         std::uint64_t seed) {
  const std::size_t classes = group.size() == n_drivers ? group.size() : group.size() + 1;
  return balanced(relabel_group(split.train, group, n_drivers), relabel_group(split.validation, group, n_drivers),
                  relabel_group(split.test, group, n_drivers), Head::multiclass(classes), seed);
}

ScenarioOutcome run_scenario(const EvalContext& ctx, const LabeledSplit& labeled, std::uint64_t seed) {
  check_test_isolation(*ctx.split, labeled.test, ctx.duration_s);
  if (labeled.test.empty()) throw Error(Errc::empty_dataset, "scenario has no test samples");
  MixtureModel model(ctx.experts, ctx.feature_size, labeled.head, ctx.dropout_rate, mix_seed(seed, 11));
  TrainConfig tc = ctx.train;
  tc.seed = mix_seed(seed, 12);
  auto fit = train_mixture(model, *ctx.cache, labeled.train, labeled.validation, tc);
  const auto preds = predict_labels(predict(model, *ctx.cache, labeled.test), labeled.head.kind);
  const double acc = accuracy(preds, labels_of(labeled.test));
  return ScenarioOutcome{std::move(model), std::move(fit), acc};
}

EvalReport run_one_vs_all(const EvalContext& ctx) {
  const auto n = ctx.drivers->size();
  if (n < 2) throw Error(Errc::invalid_argument, "1-vs-all needs at least two drivers");
  EvalReport rep = new_report(ctx, ScenarioKind::one_vs_all);
  for (std::size_t t = 0; t < n; ++t) {
    const auto seed = mix_seed(ctx.seed, 1000 + t);
    const auto out = run_scenario(ctx, one_vs_all_split(*ctx.split, t, seed), seed);
    rep.models.push_back({(*ctx.drivers)[t].driver, out.test_accuracy, {t}});
  }
  finish(rep);
  return rep;
}

EvalReport run_many_vs_all(const EvalContext& ctx, std::size_t group_size, std::size_t trials) {
  const auto n = ctx.drivers->size();
  const auto groups = choose_groups(n, group_size, trials, mix_seed(ctx.seed, 77));
  EvalReport rep = new_report(ctx, group_size == n ? ScenarioKind::all_vs_all : ScenarioKind::many_vs_all);
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto seed = mix_seed(ctx.seed, 5000 + i);
    const auto out = run_scenario(ctx, group_split(*ctx.split, groups[i], n, seed), seed);
    std::string id = "group";
    for (auto d : groups[i]) id += "_" + (*ctx.drivers)[d].driver;
    rep.models.push_back({group_size == n ? "all" : id, out.test_accuracy, groups[i]});
  }
  finish(rep);
  return rep;
}

std::vector<AttributeRow> attribute_report(const EvalReport& one_vs_all, const std::vector<DriverMeta>& metas,
                                           const std::vector<std::string>& driver_names) {
  std::map<std::string, const DriverMeta*> by_name;
  for (const auto& m : metas) by_name[m.driver] = &m;
  // Rows come out in the fixed bracket order.
  std::vector<std::pair<std::string, std::vector<std::string>>> order{
      {"gender", {"male", "female"}},
      {"age", {"20-25", "25-30", "30-40", "40-70"}},
      {"experience", {"low", "average", "high"}}};
  std::map<std::pair<std::string, std::string>, std::vector<double>> groups;
  for (const auto& m : one_vs_all.models) {
    if (m.group.size() != 1 || m.group[0] >= driver_names.size()) {
      throw Error(Errc::invalid_argument, "attribute breakdown needs a per-driver report");
    }
    const auto& name = driver_names[m.group[0]];
    auto it = by_name.find(name);
    if (it == by_name.end()) throw Error(Errc::missing_meta, "no metadata for driver " + name);
    groups[{"gender", to_string(it->second->gender)}].push_back(m.accuracy);
    groups[{"age", to_string(it->second->age)}].push_back(m.accuracy);
    groups[{"experience", to_string(it->second->experience)}].push_back(m.accuracy);
  }
  std::vector<AttributeRow> rows;
  for (const auto& [attr, values] : order) {
    for (const auto& v : values) {
      auto it = groups.find({attr, v});
      if (it != groups.end()) rows.push_back({attr, v, aggregate(it->second)});
    }
  }
  return rows;
}

json to_json(const Aggregate& a) {
  return json{{"mean", a.mean}, {"std", a.std}, {"max", a.max}, {"min", a.min}, {"count", a.count}};
}

json to_json(const EvalReport& r) {
  json models = json::array();
  for (const auto& m : r.models) models.push_back({{"model_id", m.model_id}, {"accuracy", m.accuracy}, {"group", m.group}});
  json attrs = json::array();
  for (const auto& a : r.attributes) {
    json row = to_json(a.stats);
    row["attribute"] = a.attribute;
    row["value"] = a.value;
    attrs.push_back(std::move(row));
  }
  json j{{"scenario", r.scenario}, {"duration_s", r.duration_s}, {"seed", r.seed},       {"k", r.k},
         {"models", models},       {"aggregate", to_json(r.overall)}, {"attributes", attrs}};
  if (r.scenario == "one_vs_all") {
    if (auto pub = published_one_vs_all(r.duration_s)) {
      j["published_reference"] = {{"aggregate", to_json(*pub)},
                                  {"note", "full-scale result on a private 33-driver dataset; not reproducible here"}};
    }
  }
  return j;
}

void write_csv(const EvalReport& r, std::ostream& out) {
  out << "model_id,accuracy\n";
  for (const auto& m : r.models) out << m.model_id << ',' << json(m.accuracy).dump() << '\n';
}

// ---- published results -----------------------------------------------------------

namespace {

constexpr std::array<PublishedRow, 9> kAttributeRows{{
    {"gender", "male", 28, 0.814, 0.140, 0.995, 0.436},
    {"gender", "female", 5, 0.911, 0.099, 0.968, 0.734},
    {"age", "20-25", 11, 0.840, 0.106, 0.939, 0.573},
    {"age", "25-30", 8, 0.788, 0.184, 0.973, 0.436},
    {"age", "30-40", 7, 0.892, 0.143, 0.995, 0.606},
    {"age", "40-70", 7, 0.806, 0.126, 0.969, 0.586},
    {"experience", "low", 12, 0.834, 0.108, 0.968, 0.573},
    {"experience", "average", 11, 0.799, 0.172, 0.964, 0.436},
    {"experience", "high", 10, 0.860, 0.135, 0.995, 0.586},
}};

}  // namespace

std::optional<Aggregate> published_one_vs_all(double duration_s) {
  if (duration_s == 20.0) return Aggregate{0.758, 0.017, 0.949, 0.432, kPublishedDrivers};
  if (duration_s == 60.0) return Aggregate{0.829, 0.019, 0.995, 0.436, kPublishedDrivers};
  if (duration_s == 120.0) return Aggregate{0.847, 0.025, 1.000, 0.465, kPublishedDrivers};
  return std::nullopt;
}

std::span<const PublishedRow> published_attribute_rows() { return kAttributeRows; }

}  // namespace canfp

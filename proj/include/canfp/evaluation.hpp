#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "canfp/mixture.hpp"
#include "canfp/sampling.hpp"

namespace canfp {

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  double max = 0.0;
  double min = 0.0;
  std::size_t count = 0;
};

/// Throws empty_input for an empty list.
Aggregate aggregate(std::span<const double> values);

// ---- driver metadata -------------------------------------------------------

enum class Gender { male, female };
enum class AgeBracket { a20_25, a25_30, a30_40, a40_70 };
enum class Experience { low, average, high };

struct DriverMeta {
  std::string driver;
  Gender gender = Gender::male;
  AgeBracket age = AgeBracket::a20_25;
  Experience experience = Experience::low;
};

std::string to_string(Gender g);
std::string to_string(AgeBracket a);
std::string to_string(Experience e);
Gender parse_gender(const std::string& s);
AgeBracket parse_age(const std::string& s);
Experience parse_experience(const std::string& s);

nlohmann::json to_json(const DriverMeta& m);
DriverMeta driver_meta_from_json(const nlohmann::json& j);

// ---- scenarios -------------------------------------------------------------

enum class ScenarioKind { one_vs_all, many_vs_all, all_vs_all };
std::string to_string(ScenarioKind k);
ScenarioKind parse_scenario_kind(const std::string& s);

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::one_vs_all;
  std::size_t group_size = 2;  // many_vs_all only
  std::size_t trials = 1;      // many_vs_all only
};

/// Distinct sorted m-subsets of 0..n-1, seeded. m == n yields the single
/// full group regardless of `trials`. Throws not_enough_subsets when more
/// trials are requested than C(n, m), invalid_argument for m outside 1..n.
std::vector<std::vector<std::size_t>> choose_groups(std::size_t n, std::size_t m, std::size_t trials,
                                                    std::uint64_t seed);

/// Number of m-subsets of n items, saturating at SIZE_MAX.
std::size_t binomial(std::size_t n, std::size_t m);

struct ModelResult {
  std::string model_id;
  double accuracy = 0.0;
  std::vector<std::size_t> group;  // driver indices (target for 1-vs-all)
};

struct AttributeRow {
  std::string attribute;  // gender / age / experience
  std::string value;
  Aggregate stats;
};

struct EvalReport {
  std::string scenario;
  double duration_s = 0.0;
  std::uint64_t seed = 0;
  std::size_t k = 0;
  std::vector<ModelResult> models;
  Aggregate overall;
  std::vector<AttributeRow> attributes;
};

/// Everything a scenario needs: the split, the frozen experts and a feature
/// cache over every train/validation/test sample.
struct EvalContext {
  const std::vector<DriverSeries>* drivers = nullptr;
  const SplitResult* split = nullptr;
  double duration_s = 0.0;
  const FeatureCache* cache = nullptr;
  std::vector<ChannelId> experts;
  std::size_t feature_size = 0;
  double dropout_rate = 0.25;
  TrainConfig train;
  std::uint64_t seed = 0;
};

/// One labeled scenario instance: balanced train/validation pools and the
/// full test pool.
struct LabeledSplit {
  std::vector<SampleRef> train;
  std::vector<SampleRef> validation;
  std::vector<SampleRef> test;
  Head head;
};

LabeledSplit one_vs_all_split(const SplitResult& split, std::size_t target, std::uint64_t seed);
LabeledSplit group_split(const SplitResult& split, const std::vector<std::size_t>& group, std::size_t n_drivers,
                         std::uint64_t seed);

struct ScenarioOutcome {
  MixtureModel model;
  FitResult fit;
  double test_accuracy = 0.0;
};

/// Trains a mixture on the labeled split and scores it on the test pool.
/// Throws invalid_argument when a test sample leaves its driver's test region.
ScenarioOutcome run_scenario(const EvalContext& ctx, const LabeledSplit& labeled, std::uint64_t seed);

EvalReport run_one_vs_all(const EvalContext& ctx);
EvalReport run_many_vs_all(const EvalContext& ctx, std::size_t group_size, std::size_t trials);

/// Groups per-driver accuracies of a 1-vs-all report by attribute value.
/// Throws missing_meta when a driver has no metadata.
std::vector<AttributeRow> attribute_report(const EvalReport& one_vs_all, const std::vector<DriverMeta>& metas,
                                           const std::vector<std::string>& driver_names);

nlohmann::json to_json(const Aggregate& a);
nlohmann::json to_json(const EvalReport& r);
/// Flat "model_id,accuracy" table.
void write_csv(const EvalReport& r, std::ostream& out);

// ---- published full-scale results -------------------------------------------
//
// Results reported for the original 33-driver dataset. That data is private,
// so these numbers cannot be reproduced here; they are kept only so reports
// can be laid out next to them.

struct PublishedRow {
  const char* attribute;
  const char* value;
  std::size_t persons;
  double mean, std, max, min;
};

/// 1-vs-all aggregate for a 20, 60 or 120 s sample duration.
std::optional<Aggregate> published_one_vs_all(double duration_s);
/// Per-attribute 1-vs-all breakdown at 60 s.
std::span<const PublishedRow> published_attribute_rows();
inline constexpr std::size_t kPublishedDrivers = 33;
inline constexpr double kPublishedMeanTraceMinutes = 29.81;

}  // namespace canfp

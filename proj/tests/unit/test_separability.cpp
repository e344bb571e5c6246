#include <doctest.h>

#include <iostream>

#include "canfp/pipeline.hpp"
#include "pipelines.hpp"

using namespace canfp;

namespace {

double mean_one_vs_all(double separation, std::uint64_t seed) {
  fixtures::DeskRun run;
  run.separation = separation;
  const auto dir = fixtures::scratch_dir("separability");
  const auto cfg = config_from_json(fixtures::desk_config(dir, seed, run));
  const auto res = fixtures::run_desk(cfg);
  std::filesystem::remove_all(dir);
  return res.scenario("one_vs_all").overall.mean;
}

}  // namespace

// The generator's spread saturates accuracy well before separation 1, so the
// middle level sits in the transition region.
TEST_CASE("1-vs-all accuracy grows with profile separation") {
  set_progress_stream(nullptr);
  const std::vector<double> levels{0.0, 0.03, 1.0};
  constexpr int kSeeds = 5;
  std::vector<double> means;
  for (double level : levels) {
    double sum = 0.0;
    for (int seed = 1; seed <= kSeeds; ++seed) sum += mean_one_vs_all(level, seed);
    means.push_back(sum / kSeeds);
    MESSAGE("separation " << level << " mean 1-vs-all " << means.back());
  }
  for (std::size_t i = 1; i < means.size(); ++i) CHECK(means[i] > means[i - 1]);
  set_progress_stream(&std::cerr);
}

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "canfp/mixture.hpp"
#include "canfp/pipeline.hpp"

using namespace canfp;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run(const std::string& args, const fs::path& err_file = {}) {
  std::string cmd = std::string(CANFP_CLI) + " " + args;
  cmd += err_file.empty() ? " 2>/dev/null" : " 2>" + err_file.string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("canfp_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

fs::path write_config(const fs::path& dir, const json& j) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

// Three drivers on a 10 Hz planted layout with two noise bytes.
json small_config(const fs::path& dir) {
  std::ofstream(dir / "planted.json") << to_json(planted_layout(2, 0.1)).dump();
  return json{{"seed", 5},
              {"out_dir", (dir / "out").string()},
              {"synth", {{"drivers", 3}, {"duration_s", 300}, {"layout", (dir / "planted.json").string()}}},
              {"filter", {{"min_points", 1000}}},
              {"split", {{"sample_duration_s", 20}, {"window_shift_s", 2}}},
              {"its",
               {{"seg_len_s", 2},
                {"kernel_s", 0.3},
                {"conv_stride_s", 0.1},
                {"filters1", 4},
                {"filters2", 4},
                {"pool", 2},
                {"fc_units", 8},
                {"lstm_hidden", 4},
                {"batch_size", 16},
                {"max_epochs", 4}}},
              {"optimizer", {{"learning_rate", 0.005}}},
              {"mixture", {{"k", 2}, {"batch_size", 16}, {"max_epochs", 8}}},
              {"scenarios", json::array({{{"kind", "one_vs_all"}}, {{"kind", "all_vs_all"}}})}};
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) {
    if (!l.empty() && l[0] != '#') out.push_back(l);
  }
  return out;
}

}  // namespace

TEST_CASE("synth writes parseable, reproducible logs") {
  const auto dir = fresh_dir("synth");
  auto cfg = json{{"seed", 1}, {"out_dir", (dir / "a").string()}, {"synth", {{"drivers", 5}, {"duration_s", 60}}}};
  const auto path = write_config(dir, cfg);
  REQUIRE(run("--config " + path.string() + " synth") == 0);
  REQUIRE(run("--config " + path.string() + " --out " + (dir / "b").string() + " synth") == 0);
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir / "a" / "logs")) {
    ++n;
    const auto text = read_text_file(e.path());
    CHECK(text == read_text_file(dir / "b" / "logs" / e.path().filename()));
    const auto parsed = parse_log(text, "x");
    CHECK(parsed.errors.empty());
    CHECK_FALSE(parsed.log.frames.empty());
  }
  CHECK(n == 5);
}

TEST_CASE("config and flag errors are user errors") {
  const auto dir = fresh_dir("errors");
  CHECK(run("--config " + write_config(dir, json{{"sed", 1}}).string() + " synth") == 1);
  CHECK(run("--config " + write_config(dir, json{{"out_dir", (dir / "o").string()}}).string() + " synth") == 1);
  CHECK(run("--duration 45 synth") == 1);
  CHECK(run("--config /nonexistent/config.json synth") == 1);
  CHECK(run("") == 1);
}

TEST_CASE("a missing log fails extraction for that driver") {
  const auto dir = fresh_dir("missing");
  auto cfg = json{{"seed", 1}, {"out_dir", (dir / "o").string()}, {"synth", {{"drivers", 2}, {"duration_s", 60}}}};
  REQUIRE(run("--config " + write_config(dir, cfg).string() + " synth") == 0);
  cfg["logs"] = {{"driver_01", (dir / "o" / "logs" / "driver_01.log").string()},
                 {"ghost", (dir / "nope.log").string()}};
  const fs::path err = dir / "err.txt";
  CHECK(run("--config " + write_config(dir, cfg).string() + " extract", err) != 0);
  CHECK(read_text_file(err).find("ghost") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "o" / "channels" / "manifest.txt"));
}

TEST_CASE("gradcheck subcommand passes") {
  const auto dir = fresh_dir("gradcheck");
  const auto cfg = write_config(dir, json{{"seed", 2}, {"out_dir", dir.string()}});
  CHECK(run("--config " + cfg.string() + " gradcheck") == 0);
  const auto report = json::parse(read_text_file(dir / "reports" / "gradcheck.json"));
  for (const auto& r : report) CHECK(r.at("passed") == true);
}

TEST_CASE("small pipeline end to end") {
  const auto dir = fresh_dir("pipeline");
  const auto cfg = write_config(dir, small_config(dir));
  const fs::path out = dir / "out";
  REQUIRE(run("--config " + cfg.string() + " synth extract split") == 0);

  // Manifest lists exactly the layout's surviving channels.
  const auto layout = bus_layout_from_json(json::parse(read_text_file(out / "layout.json")));
  std::ifstream mf(out / "channels" / "manifest.txt");
  const auto manifest = read_channel_manifest(mf);
  std::set<ChannelId> listed;
  for (const auto& e : manifest.channels) listed.insert(e.id);
  CHECK(listed == expected_retained(layout));
  const auto manifest_text = read_text_file(out / "channels" / "manifest.txt");
  REQUIRE(run("--config " + cfg.string() + " extract") == 0);
  CHECK(read_text_file(out / "channels" / "manifest.txt") == manifest_text);

  REQUIRE(run("--config " + cfg.string() + " train-its") == 0);
  const auto ranking = lines(out / "models" / "ranking.txt");
  CHECK(ranking.size() == 3);
  std::size_t models = 0;
  for (const auto& e : fs::directory_iterator(out / "models")) models += e.path().filename().string().rfind("its_", 0) == 0;
  CHECK(models == 3);
  const auto ranked = read_ranking(out / "models" / "ranking.txt");
  for (std::size_t i = 1; i < ranked.size(); ++i) CHECK(ranked[i - 1].val_accuracy >= ranked[i].val_accuracy);
  CHECK(ranked.front().channel == ChannelId{0x100, 0});

  REQUIRE(run("--config " + cfg.string() + " train-mixture eval") == 0);
  const auto one = json::parse(read_text_file(out / "reports" / "one_vs_all_20s.json"));
  CHECK(one.at("models").size() == 3);
  CHECK(fs::exists(out / "reports" / "one_vs_all_20s.csv"));
  CHECK(fs::exists(out / "reports" / "all_vs_all_20s.json"));

  // Rerunning eval reproduces the reports byte for byte.
  const auto before = read_text_file(out / "reports" / "one_vs_all_20s.json");
  REQUIRE(run("--config " + cfg.string() + " eval") == 0);
  CHECK(read_text_file(out / "reports" / "one_vs_all_20s.json") == before);

  // A tampered expert is caught when the mixture is loaded.
  const auto expert = out / "models" / expert_file_name(ranked.front().channel);
  const auto original = read_text_file(expert);
  write_text_file(expert, original + " ");
  CHECK(run("--config " + cfg.string() + " eval") == 2);
  write_text_file(expert, original);
}

#include <doctest.h>

#include <filesystem>

#include "canfp/mixture.hpp"
#include "fixtures.hpp"

using namespace canfp;
namespace fs = std::filesystem;

namespace {

const ChannelId kA{0x100, 0}, kB{0x100, 1}, kN{0x101, 0};

// Three drivers: channel A separates them by square-wave period, channel B
// by level, channel N carries no information.
std::vector<DriverSeries> three_drivers() {
  const double periods[] = {0.4, 0.8, 1.6};
  const double levels[] = {0.3, 0.5, 0.7};
  std::vector<DriverSeries> out;
  for (int i = 0; i < 3; ++i) {
    DriverSeries d;
    d.driver = "d" + std::to_string(i);
    d.series[kA] = fixtures::make_series(kA, 10.0, 400.0, fixtures::square(periods[i]), 10 + i);
    d.series[kB] = fixtures::make_series(kB, 10.0, 400.0, fixtures::flat(levels[i]), 20 + i);
    d.series[kN] = fixtures::make_series(kN, 10.0, 400.0, fixtures::noise(), 30 + i);
    out.push_back(std::move(d));
  }
  return out;
}

struct Trained {
  std::vector<DriverSeries> drivers = three_drivers();
  SplitResult split;
  std::vector<SampleRef> train, val;
  std::vector<ItsModel> models;
};

const Trained& trained() {
  static const Trained t = [] {
    Trained t;
    t.split = split_traces(t.drivers, fixtures::small_split());
    t.train = balance(t.split.train, 1);
    t.val = balance(t.split.validation, 2);
    TrainConfig tc;
    tc.optimizer.learning_rate = 0.005;
    tc.batch_size = 32;
    tc.max_epochs = 3;
    tc.patience = 3;
    std::uint64_t seed = 40;
    for (auto ch : {kA, kB, kN}) {
      ItsModel m(fixtures::tiny_its(Head::multiclass(3)), ch, 10.0, 10.0, ++seed);
      tc.seed = seed;
      train_its(m, ChannelData{&t.drivers, ch, 10.0, 1.0}, t.train, t.val, tc);
      t.models.push_back(std::move(m));
    }
    return t;
  }();
  return t;
}

TrainConfig mixture_train() {
  TrainConfig tc;
  tc.optimizer.learning_rate = 0.005;
  tc.batch_size = 16;
  tc.max_epochs = 15;
  tc.patience = 4;
  tc.seed = 5;
  return tc;
}

}  // namespace

TEST_CASE("ranking") {
  std::vector<RankEntry> e{{{1, 0}, 0.9}, {{2, 0}, 0.5}, {{3, 0}, 0.7}};
  const auto r = rank_experts(e);
  CHECK(top_k(r, 2) == std::vector<ChannelId>{{1, 0}, {3, 0}});
  CHECK(top_k(r, 10).size() == 3);
  CHECK(MixtureConfig{}.k == 10);

  // Ties resolve by channel id, independent of input order.
  std::vector<RankEntry> tie{{{9, 1}, 0.8}, {{2, 3}, 0.8}, {{5, 0}, 0.1}};
  const auto t1 = rank_experts(tie);
  std::reverse(tie.begin(), tie.end());
  const auto t2 = rank_experts(tie);
  CHECK(top_k(t1, 3) == top_k(t2, 3));
  CHECK(t1.front().channel == ChannelId{2, 3});
}

TEST_CASE("mixture layer shape at full scale") {
  MixtureModel m(std::vector<ChannelId>(10, ChannelId{}), 64, Head::multiclass(33), 0.25, 1);
  CHECK(m.layer().weight.value.shape() == Shape{33, 640});
  CHECK(m.layer().bias.value.shape() == Shape{33});
  CHECK(m.input_size() == 640);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  Tensor x({4, 640});
  for (auto& v : x.values()) v = u(rng);
  const Tensor p = m.forward(x, Mode::infer);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 33; ++c) s += p.at(r, c);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("feature extractor equals the penultimate activation") {
  const auto& t = trained();
  const auto before = t.models[0].serialize();
  auto ex = strip_head(t.models[0]);
  CHECK(ex.output_size() == 8);
  ItsModel copy = t.models[0];
  const Tensor x = ChannelData{&t.drivers, kA, 10.0, 1.0}.batch(std::span(t.val).first(5));
  CHECK(ex(x) == copy.features(x, Mode::infer));
  CHECK(ex(x).shape() == Shape{5, 8});
  CHECK(t.models[0].serialize() == before);
}

TEST_CASE("bundle consistency") {
  const auto& t = trained();
  CHECK_THROWS_AS(ExpertBundle(std::vector<ItsModel>{}), Error);
  CHECK_THROWS_AS(ExpertBundle({t.models[0], t.models[0]}), Error);
  ItsModel other(fixtures::tiny_its(Head::multiclass(3)), kB, 10.0, 20.0, 1);
  CHECK_THROWS_AS(ExpertBundle({t.models[0], other}), Error);
  auto wide_cfg = fixtures::tiny_its(Head::multiclass(3));
  wide_cfg.fc_units = 5;
  CHECK_THROWS_AS(ExpertBundle({t.models[0], ItsModel(wide_cfg, kB, 10.0, 10.0, 1)}), Error);

  ExpertBundle b({t.models[0], t.models[1]});
  CHECK(b.width() == 16);
  std::vector<DriverSeries> missing = t.drivers;
  missing[1].series.erase(kB);
  try {
    b.features(missing, t.val);
    FAIL("expected missing_channel");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::missing_channel);
  }
}

TEST_CASE("mixture training keeps experts frozen and matches the best expert") {
  const auto& t = trained();
  const auto ranking = rank_experts(t.models);
  CHECK(ranking.back().channel == kN);
  std::vector<ItsModel> top;
  for (const auto& ch : top_k(ranking, 2)) {
    for (const auto& m : t.models) {
      if (m.channel() == ch) top.push_back(m);
    }
  }
  std::vector<std::string> before;
  for (const auto& m : top) before.push_back(m.serialize());

  ExpertBundle bundle(top);
  std::vector<SampleRef> all = t.train;
  all.insert(all.end(), t.val.begin(), t.val.end());
  const FeatureCache cache(bundle, t.drivers, all);
  CHECK(cache.rows() == all.size());
  CHECK(cache.contains(t.val.front()));
  CHECK_FALSE(cache.contains(t.split.test.front()));

  auto mix = build_mixture(bundle, Head::multiclass(3), 0.25, 9);
  const auto fit = train_mixture(mix, cache, t.train, t.val, mixture_train());
  const double best_expert = ranking.front().val_accuracy;
  CHECK(fit.best_val_accuracy >= best_expert - 0.02);

  for (std::size_t i = 0; i < top.size(); ++i) {
    CHECK(top[i].serialize() == before[i]);
    CHECK(bundle.expert(i).serialize() == before[i]);
  }

  // The on-the-fly overload agrees with the cached one.
  auto mix2 = build_mixture(bundle, Head::multiclass(3), 0.25, 9);
  const auto fit2 = train_mixture(mix2, bundle, t.drivers, t.train, t.val, mixture_train());
  CHECK(fit2.best_val_accuracy == fit.best_val_accuracy);
  CHECK(mix2.layer().weight.value == mix.layer().weight.value);
}

TEST_CASE("a single binary expert is a retrained head") {
  const auto& t = trained();
  ExpertBundle bundle({t.models[0]});
  const auto train = balance(relabel_one_vs_all(t.split.train, 0), 3);
  const auto val = balance(relabel_one_vs_all(t.split.validation, 0), 4);
  const auto test = relabel_one_vs_all(t.split.test, 0);
  std::vector<SampleRef> all = train;
  all.insert(all.end(), val.begin(), val.end());
  all.insert(all.end(), test.begin(), test.end());
  const FeatureCache cache(bundle, t.drivers, all);
  auto mix = build_mixture(bundle, Head::binary(), 0.25, 2);
  CHECK(mix.layer().weight.value.shape() == Shape{1, 8});
  train_mixture(mix, cache, train, val, mixture_train());

  // Reference: the expert's own multiclass decision collapsed to "is driver 0".
  ItsModel expert = t.models[0];
  const auto expert_pred = predict_labels(predict(expert, ChannelData{&t.drivers, kA, 10.0, 1.0}, test),
                                          HeadKind::multiclass);
  const auto mix_pred = predict_labels(predict(mix, cache, test), HeadKind::binary);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < test.size(); ++i) agree += (expert_pred[i] == 0) == (mix_pred[i] == 1);
  CHECK(static_cast<double>(agree) / static_cast<double>(test.size()) >= 0.95);
}

TEST_CASE("files and hashes") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(expert_file_name({0x00c4, 0}) == "its_00c4_0.json");

  const auto& t = trained();
  const fs::path dir = fs::temp_directory_path() / "canfp_mixture_test";
  fs::remove_all(dir);
  for (const auto& m : {t.models[0], t.models[1]}) save_its(m, dir / expert_file_name(m.channel()));
  ExpertBundle bundle({t.models[0], t.models[1]});
  auto mix = build_mixture(bundle, Head::multiclass(3), 0.25, 1);
  save_mixture(mix, dir / "mixture.json");

  const auto loaded = load_mixture(dir / "mixture.json");
  CHECK(loaded.experts.size() == 2);
  CHECK(loaded.experts[1].serialize() == t.models[1].serialize());
  CHECK(loaded.model.layer().weight.value == mix.layer().weight.value);
  CHECK(load_its(dir / expert_file_name(kA)).serialize() == t.models[0].serialize());

  write_text_file(dir / expert_file_name(kB), t.models[2].serialize());
  try {
    load_mixture(dir / "mixture.json");
    FAIL("expected hash_mismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::hash_mismatch);
  }
  fs::remove_all(dir);
}

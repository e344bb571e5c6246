#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "canfp/error.hpp"
#include "canfp/gradcheck.hpp"
#include "canfp/nn.hpp"
#include "canfp/training.hpp"
#include "oracles.hpp"

using namespace canfp;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

Tensor random_tensor(Shape s, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(s));
  std::normal_distribution<double> n(0.0, scale);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  t.at(1, 2) = 4.0;
  CHECK(t[5] == 4.0);
  CHECK(t.reshaped({3, 2}).dim(0) == 3);
  CHECK_THROWS_AS(t.reshaped({4, 2}), Error);
}

TEST_CASE("conv1d: neighbor differences and identity") {
  const std::vector<double> t{1, 3, 6};
  CHECK(conv1d(t, std::vector<double>{1, -1}) == std::vector<double>{2, 3});
  CHECK(conv1d(t, std::vector<double>{1}) == t);
  CHECK_THROWS_AS(conv1d(t, std::vector<double>{1, 1, 1, 1}), Error);
}

TEST_CASE("conv1d matches the double-loop oracle") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + rng() % 9;
    const std::size_t len = n + rng() % 60;
    const std::size_t stride = 1 + rng() % 6;
    const auto t = random_vec(len, rng);
    const auto f = random_vec(n, rng);
    const auto got = conv1d(t, f, stride);
    const auto want = oracle::conv1d(t, f, stride);
    REQUIRE(got.size() == want.size());
    for (std::size_t j = 0; j < got.size(); ++j) REQUIRE(std::abs(got[j] - want[j]) <= 1e-12);
  }
}

TEST_CASE("conv1d backward") {
  const std::vector<double> t{2, -1, 4, 0.5};
  auto g = conv1d_backward(std::vector<double>(4, 1.0), t, std::vector<double>{1.0});
  CHECK(g.d_series == std::vector<double>(4, 1.0));
  g = conv1d_backward(std::vector<double>{3.0}, std::vector<double>{2.0}, std::vector<double>{5.0});
  CHECK(g.d_filter == std::vector<double>{6.0});
  CHECK(g.d_bias == 3.0);

  // Finite differences on a random case.
  std::mt19937_64 rng(4);
  auto series = random_vec(50, rng);
  auto filter = random_vec(5, rng);
  const auto up = random_vec(oracle::conv1d(series, filter, 5).size(), rng);
  auto loss = [&] {
    const auto y = conv1d(series, filter, 5);
    return std::inner_product(y.begin(), y.end(), up.begin(), 0.0);
  };
  const auto grads = conv1d_backward(up, series, filter, 5);
  const double h = 1e-5;
  for (std::size_t i = 0; i < filter.size(); ++i) {
    const double s = filter[i];
    filter[i] = s + h;
    const double a = loss();
    filter[i] = s - h;
    const double b = loss();
    filter[i] = s;
    const double num = (a - b) / (2 * h);
    CHECK(std::abs(num - grads.d_filter[i]) <= 1e-4 * std::max({std::abs(num), std::abs(grads.d_filter[i]), 1e-6}));
  }
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double s = series[i];
    series[i] = s + h;
    const double a = loss();
    series[i] = s - h;
    const double b = loss();
    series[i] = s;
    const double num = (a - b) / (2 * h);
    CHECK(std::abs(num - grads.d_series[i]) <= 1e-4 * std::max({std::abs(num), std::abs(grads.d_series[i]), 1e-6}));
  }
}

TEST_CASE("multi-channel conv layer equals summed single-channel oracle") {
  std::mt19937_64 rng(8);
  Conv1d conv("c", 3, 4, 5, 2);
  Rng init(3);
  conv.init(init);
  for (auto& b : conv.bias.value.values()) b = 0.1;
  const Tensor x = random_tensor({2, 3, 31}, rng);
  const Tensor y = conv.forward(x);
  REQUIRE(y.shape() == Shape{2, 4, Conv1d::output_length(31, 5, 2)});
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t o = 0; o < 4; ++o) {
      std::vector<double> acc(y.dim(2), 0.1);
      for (std::size_t c = 0; c < 3; ++c) {
        std::vector<double> series(x.data() + (n * 3 + c) * 31, x.data() + (n * 3 + c + 1) * 31);
        std::vector<double> f(conv.weight.value.data() + (o * 3 + c) * 5, conv.weight.value.data() + (o * 3 + c + 1) * 5);
        const auto part = oracle::conv1d(series, f, 2);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += part[i];
      }
      for (std::size_t i = 0; i < acc.size(); ++i) REQUIRE(std::abs(y.at(n, o, i) - acc[i]) <= 1e-12);
    }
  }
}

TEST_CASE("max pooling") {
  MaxPool1d pool(5);
  CHECK(pool.forward(Tensor({1, 1, 5}, {1, 5, 2, 4, 3})).storage() == std::vector<double>{5});
  MaxPool1d one(1);
  const Tensor x({1, 1, 4}, {3, -1, 2, 7});
  CHECK(one.forward(x) == x);

  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    const std::size_t len = 1 + rng() % 40;
    const std::size_t p = 1 + rng() % 7;
    const auto v = random_vec(len, rng);
    MaxPool1d mp(p);
    CHECK(mp.forward(Tensor({1, 1, len}, v)).storage() == oracle::maxpool(v, p));
  }
}

TEST_CASE("batch norm") {
  BatchNorm1d bn("bn", 2);
  Tensor c({4, 2, 3}, 0.7);
  const Tensor zeros = bn.forward(c, Mode::train);
  for (double v : zeros.values()) CHECK(v == doctest::Approx(0.0));
  bn.beta.value.fill(5.0);
  const Tensor fives = bn.forward(c, Mode::train);
  for (double v : fives.values()) CHECK(v == doctest::Approx(5.0));

  BatchNorm1d fresh("bn", 3);
  std::mt19937_64 rng(6);
  const Tensor x = random_tensor({16, 3, 20}, rng, 10.0);
  const Tensor y = fresh.forward(x, Mode::train);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    std::vector<double> vals;
    for (std::size_t n = 0; n < 16; ++n) {
      for (std::size_t l = 0; l < 20; ++l) vals.push_back(y.at(n, ch, l));
    }
    const auto [m, s] = oracle::mean_std(vals);
    CHECK(std::abs(m) <= 1e-6);
    CHECK(std::abs(s * s - 1.0) <= 1e-6);
  }
}

TEST_CASE("dense layer") {
  Dense d("d", 3, 3, Activation::none);
  d.weight.value = Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor x({2, 3}, {1, 2, 3, -4, 5, -6});
  CHECK(d.forward(x) == x);

  Dense t("t", 2, 2, Activation::tanh);
  Rng rng(1);
  t.init(rng);
  t.bias.value = Tensor({2}, {0.3, -1.2});
  const Tensor y = t.forward(Tensor({1, 2}, 0.0));
  CHECK(y[0] == doctest::Approx(std::tanh(0.3)));
  CHECK(y[1] == doctest::Approx(std::tanh(-1.2)));
}

TEST_CASE("lstm cell") {
  Lstm zero("l", 3, 4);
  const auto s = zero.cell(std::vector<double>{0.5, -1, 2}, {std::vector<double>(4, 0.0), std::vector<double>(4, 0.0)});
  for (double v : s.h) CHECK(v == 0.0);
  for (double v : s.c) CHECK(v == 0.0);

  Lstm sat("l", 2, 2);
  for (std::size_t j = 0; j < 2; ++j) {
    sat.bias.value[j] = -50.0;     // input gate closed
    sat.bias.value[2 + j] = 50.0;  // forget gate open
  }
  const std::vector<double> c_prev{0.4, -0.9};
  const auto next = sat.cell(std::vector<double>{0.3, 0.1}, {std::vector<double>{0.2, 0.2}, c_prev});
  CHECK(next.c[0] == doctest::Approx(c_prev[0]).epsilon(1e-12));
  CHECK(next.c[1] == doctest::Approx(c_prev[1]).epsilon(1e-12));
}

TEST_CASE("lstm unroll equals repeated cell steps") {
  Lstm lstm("l", 3, 4);
  Rng init(5);
  lstm.init(init);
  std::mt19937_64 rng(7);
  const Tensor x = random_tensor({2, 5, 3}, rng);
  const Tensor h = lstm.forward(x);
  for (std::size_t b = 0; b < 2; ++b) {
    LstmState st{std::vector<double>(4, 0.0), std::vector<double>(4, 0.0)};
    for (std::size_t t = 0; t < 5; ++t) {
      std::vector<double> xt(x.data() + (b * 5 + t) * 3, x.data() + (b * 5 + t + 1) * 3);
      st = lstm.cell(xt, st);
      for (std::size_t j = 0; j < 4; ++j) REQUIRE(h.at(b, t, j) == doctest::Approx(st.h[j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("attention pooling") {
  Attention att("a", 3);
  Rng init(2);
  att.init(init);
  Tensor h({1, 4, 3});
  for (std::size_t t = 0; t < 4; ++t) {
    h.at(0, t, 0) = 0.2;
    h.at(0, t, 1) = -0.5;
    h.at(0, t, 2) = 0.9;
  }
  const Tensor a = att.forward(h);
  for (std::size_t t = 0; t < 4; ++t) CHECK(att.weights()[t] == doctest::Approx(0.25));
  CHECK(a[0] == doctest::Approx(0.2));
  CHECK(a[2] == doctest::Approx(0.9));

  const Tensor single = att.forward(Tensor({1, 1, 3}, {1, 2, 3}));
  CHECK(att.weights()[0] == 1.0);
  CHECK(single.storage() == std::vector<double>{1, 2, 3});

  std::mt19937_64 rng(10);
  att.forward(random_tensor({5, 7, 3}, rng));
  for (std::size_t b = 0; b < 5; ++b) {
    double sum = 0.0;
    for (std::size_t t = 0; t < 7; ++t) sum += att.weights().at(b, t);
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("heads and losses") {
  CHECK(softmax(std::vector<double>{0, 0}) == std::vector<double>{0.5, 0.5});
  CHECK(sigmoid(0.0) == 0.5);
  const auto p = softmax(std::vector<double>{1000, 0});
  CHECK(p[0] == 1.0);
  CHECK(p[1] == 0.0);
  CHECK(std::isfinite(sigmoid(-1000.0)));

  CHECK(cross_entropy(std::vector<double>{0, 1, 0}, 1, HeadKind::multiclass) == 0.0);
  CHECK(cross_entropy(std::vector<double>{0.25, 0.25, 0.25, 0.25}, 2, HeadKind::multiclass) ==
        doctest::Approx(std::log(4.0)));
  CHECK(cross_entropy(std::vector<double>{0.5}, 1, HeadKind::binary) == doctest::Approx(std::log(2.0)));
  CHECK(std::isfinite(cross_entropy(std::vector<double>{0, 1}, 0, HeadKind::multiclass)));

  const Tensor logits({2, 1}, {0.0, 3.0});
  const auto lr = cross_entropy(logits, std::vector<int>{1, 0}, HeadKind::binary);
  CHECK(lr.loss == doctest::Approx(0.5 * (std::log(2.0) - std::log(1.0 - oracle::sigmoid(3.0)))));
  CHECK(lr.d_logits[1] == doctest::Approx(0.5 * oracle::sigmoid(3.0)));
  CHECK_THROWS_AS(cross_entropy(logits, std::vector<int>{1, 2}, HeadKind::binary), Error);

  CHECK(predict_labels(Tensor({2, 1}, {0.7, 0.2}), HeadKind::binary) == std::vector<int>{1, 0});
  CHECK(predict_labels(Tensor({1, 3}, {0.2, 0.5, 0.3}), HeadKind::multiclass) == std::vector<int>{1});
}

TEST_CASE("dropout") {
  const Tensor x({1000}, 1.0);
  CHECK(dropout(x, 0.0, Mode::train, 1) == x);
  CHECK(dropout(x, 0.9, Mode::infer, 1) == x);
  const Tensor big({100000}, 1.0);
  const Tensor y = dropout(big, 0.5, Mode::train, 77);
  std::size_t alive = 0;
  for (double v : y.values()) alive += v != 0.0;
  CHECK(std::abs(static_cast<double>(alive) / 1e5 - 0.5) <= 0.01);
  CHECK(dropout(big, 0.5, Mode::train, 77) == y);
}

TEST_CASE("rmsprop") {
  OptimizerConfig cfg;
  Parameter p("p", {1});
  p.value[0] = 1.0;
  p.grad[0] = 1.0;
  Parameter* ps[] = {&p};
  rmsprop_step(ps, cfg);
  CHECK(p.rms_cache[0] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(p.value[0] == doctest::Approx(0.9968377).epsilon(1e-7));

  oracle::Rms o{1.0, 0.0};
  o.step(1.0, 0.001, 0.9, 1e-7);
  o.step(0.5, 0.001, 0.9, 1e-7);
  p.grad[0] = 0.5;
  rmsprop_step(ps, cfg);
  CHECK(p.value[0] == doctest::Approx(o.theta).epsilon(1e-14));
  CHECK(p.rms_cache[0] == doctest::Approx(o.cache).epsilon(1e-14));

  const double before = p.value[0];
  p.grad[0] = 0.0;
  rmsprop_step(ps, cfg);
  CHECK(p.value[0] == before);

  OptimizerConfig bad;
  bad.rho = 1.5;
  CHECK_THROWS_AS(validate(bad), Error);
}

TEST_CASE("layer gradient checks") {
  const auto reports = run_layer_gradchecks(3);
  CHECK(reports.size() >= 12);
  for (const auto& r : reports) {
    INFO(r.name << " max_rel_error=" << r.max_rel_error << " at " << r.worst_entry);
    CHECK(r.passed);
    CHECK(r.entries_checked > 0);
    CHECK(r.tolerance <= (r.name == "its_model" ? 1e-3 : 1e-4));
  }
}

TEST_CASE("a corrupted backward fails the check") {
  Dense d("d", 4, 3, Activation::tanh);
  Rng init(9);
  d.init(init);
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({2, 4}, rng);
  const Tensor r = random_tensor({2, 3}, rng);
  auto loss = [&] {
    const Tensor y = d.forward(x);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
    return s;
  };
  Tensor dx;
  auto analytic = [&] {
    d.weight.zero_grad();
    d.bias.zero_grad();
    d.forward(x);
    dx = d.backward(r);
    d.weight.grad[0] *= 1.5;  // sabotage
  };
  const auto rep = gradcheck("broken", loss, analytic, {{"x", &x, &dx}, {"w", &d.weight.value, &d.weight.grad}});
  CHECK_FALSE(rep.passed);
  CHECK(rep.worst_entry == "w[0]");
}

TEST_CASE("accuracy and early stopping") {
  CHECK(accuracy(std::vector<int>{1, 1, 1, 0, 0, 1, 1, 1, 0, 0}, std::vector<int>{1, 1, 1, 0, 0, 0, 0, 0, 1, 1}) == 0.5);
  CHECK(accuracy(std::vector<int>{0, 2, 0}, std::vector<int>{0, 2, 2}) == doctest::Approx(2.0 / 3.0));
  CHECK_THROWS_AS(accuracy(std::vector<int>{}, std::vector<int>{}), Error);

  int epochs = 0, snaps = 0, restores = 0;
  const auto fit = fit_with_early_stopping(
      10, 1, [&](int) { ++epochs; }, [] { return ValScore{0.5, 0.7}; }, [&] { ++snaps; }, [&] { ++restores; });
  CHECK(fit.epochs_run == 2);
  CHECK(epochs == 2);
  CHECK(snaps == 1);
  CHECK(restores == 1);
  CHECK(fit.best_epoch == 1);

  std::vector<ValScore> stream{{0.5, 1}, {0.6, 1}, {0.55, 1}, {0.7, 1}, {0.6, 1}, {0.6, 1}};
  std::size_t i = 0;
  const auto fit2 = fit_with_early_stopping(
      10, 2, [](int) {}, [&] { return stream[i++]; }, [] {}, [] {});
  CHECK(fit2.epochs_run == 6);
  CHECK(fit2.best_epoch == 4);
  CHECK(fit2.best_val_accuracy == 0.7);

  // Equal accuracy with a lower loss is progress; a higher loss is not.
  std::vector<ValScore> ties{{1.0, 0.5}, {1.0, 0.3}, {1.0, 0.4}, {1.0, 0.35}};
  i = 0;
  const auto fit3 = fit_with_early_stopping(
      10, 2, [](int) {}, [&] { return ties[i++]; }, [] {}, [] {});
  CHECK(fit3.best_epoch == 2);
  CHECK(fit3.epochs_run == 4);
  CHECK(fit3.best_val_loss == 0.3);
}

TEST_CASE("batches cover every index once") {
  Rng rng(4);
  const auto batches = make_batches(103, 16, rng);
  CHECK(batches.size() == 7);
  std::vector<int> seen(103, 0);
  for (const auto& b : batches) {
    for (auto j : b) ++seen[j];
  }
  for (int s : seen) CHECK(s == 1);
}

#pragma once

// Independent reference implementations used only by the tests. They follow
// the textbook definitions directly and share no code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

namespace oracle {

// Convolution without padding: out[i] = sum_j f[n-1-j] * T[i*s + j].
inline std::vector<double> conv1d(const std::vector<double>& t, const std::vector<double>& f, std::size_t stride) {
  std::vector<double> out;
  const std::size_t n = f.size();
  for (std::size_t i = 0; i * stride + n <= t.size(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += f[n - 1 - j] * t[i * stride + j];
    out.push_back(acc);
  }
  return out;
}

// Non-overlapping max over blocks; a short tail block is kept.
inline std::vector<double> maxpool(const std::vector<double>& x, std::size_t pool) {
  std::vector<double> out;
  for (std::size_t b = 0; b < x.size(); b += pool) {
    double m = x[b];
    for (std::size_t j = b; j < std::min(x.size(), b + pool); ++j) m = std::max(m, x[j]);
    out.push_back(m);
  }
  return out;
}

// Every 1-based start s with s + n - 1 <= n_total and (s - 1) divisible by shift,
// found by scanning all positions.
inline std::vector<std::size_t> window_starts(std::size_t n_total, std::size_t n, std::size_t shift) {
  std::vector<std::size_t> out;
  for (std::size_t s = 1; s <= n_total; ++s) {
    if ((s - 1) % shift == 0 && s + n - 1 <= n_total) out.push_back(s);
  }
  return out;
}

// Grid construction: t0 + i/rate for i = 0.. while within the rounded span.
inline std::size_t grid_length(std::int64_t t0_us, std::int64_t t_end_us, double rate_hz) {
  const double span = static_cast<double>(t_end_us - t0_us) * 1e-6;
  return static_cast<std::size_t>(std::floor(span * rate_hz + 0.5)) + 1;
}

// Median by full sort.
inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Two-sample Kolmogorov-Smirnov statistic by evaluating both empirical CDFs
// at every observed value.
inline double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<double> pts = a;
  pts.insert(pts.end(), b.begin(), b.end());
  double d = 0.0;
  for (double x : pts) {
    const double fa = static_cast<double>(std::upper_bound(a.begin(), a.end(), x) - a.begin()) / a.size();
    const double fb = static_cast<double>(std::upper_bound(b.begin(), b.end(), x) - b.begin()) / b.size();
    d = std::max(d, std::abs(fa - fb));
  }
  return d;
}

// RMSprop by hand: cache = rho*cache + (1-rho) g^2, theta -= lr g / (sqrt(cache) + eps).
struct Rms {
  double theta, cache;
  void step(double g, double lr, double rho, double eps) {
    cache = rho * cache + (1.0 - rho) * g * g;
    theta -= lr * g / (std::sqrt(cache) + eps);
  }
};

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Population mean and standard deviation.
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size()))};
}

// Class counts.
template <class Refs>
std::map<int, std::size_t> class_counts(const Refs& refs) {
  std::map<int, std::size_t> c;
  for (const auto& r : refs) ++c[r.label];
  return c;
}

}  // namespace oracle

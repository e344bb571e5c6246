#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "canfp/its_model.hpp"
#include "canfp/sampling.hpp"

namespace fixtures {

using Signal = std::function<double(double t, std::mt19937_64& rng)>;

inline canfp::TimeSeries make_series(canfp::ChannelId id, double rate_hz, double duration_s, const Signal& f,
                                     std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  canfp::TimeSeries ts;
  ts.id = id;
  ts.rate_hz = rate_hz;
  ts.t0_us = 0;
  const auto n = static_cast<std::size_t>(std::llround(duration_s * rate_hz)) + 1;
  ts.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ts.values[i] = std::clamp(f(static_cast<double>(i) / rate_hz, rng), 0.0, 1.0);
  }
  return ts;
}

inline Signal square(double period_s, double phase_s = 0.0) {
  return [=](double t, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 0.05);
    return (std::fmod(t + phase_s, period_s) < period_s / 2 ? 0.8 : 0.2) + n(rng);
  };
}

inline Signal flat(double level) {
  return [=](double, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 0.05);
    return level + n(rng);
  };
}

inline Signal noise() {
  return [](double, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    return u(rng);
  };
}

/// Tiny ITS dimensions for 10 Hz channels.
inline canfp::ItsConfig tiny_its(canfp::Head head) {
  canfp::ItsConfig c;
  c.seg_len_s = 1.0;
  c.kernel_s = 0.3;
  c.conv_stride_s = 0.1;
  c.filters1 = 4;
  c.filters2 = 4;
  c.pool = 2;
  c.fc_units = 8;
  c.lstm_hidden = 4;
  c.dropout_rate = 0.1;
  c.head = head;
  return c;
}

inline canfp::SplitSpec small_split(double duration_s = 10.0, double shift_s = 1.0) {
  canfp::SplitSpec s;
  s.sample_duration_s = duration_s;
  s.window_shift_s = shift_s;
  return s;
}

inline std::vector<canfp::SampleRef> shuffled_labels(std::vector<canfp::SampleRef> refs, std::uint64_t seed) {
  std::vector<int> labels;
  for (const auto& r : refs) labels.push_back(r.label);
  std::mt19937_64 rng(seed);
  std::shuffle(labels.begin(), labels.end(), rng);
  for (std::size_t i = 0; i < refs.size(); ++i) refs[i].label = labels[i];
  return refs;
}

}  // namespace fixtures

#include "canfp/channels.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

namespace canfp {

std::string to_string(const ChannelId& id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "0x%04x:%u", id.can_id, static_cast<unsigned>(id.byte_offset));
  return buf;
}

std::int64_t TimeSeries::end_us() const {
  if (values.empty()) return t0_us;
  return t0_us + static_cast<std::int64_t>(std::llround(static_cast<double>(values.size() - 1) * 1e6 / rate_hz));
}

ChannelSet extract_channels(const CanLog& log) {
  ChannelSet out;
  for (const auto& f : log.frames) {
    for (std::size_t off = 0; off < f.data.size(); ++off) {
      const ChannelId id{f.can_id, static_cast<std::uint8_t>(off)};
      auto& ch = out[id];
      ch.id = id;
      ch.timestamps_us.push_back(f.timestamp_us);
      ch.values.push_back(f.data[off]);
    }
  }
  return out;
}

bool is_constant(const RawChannel& ch) {
  return std::adjacent_find(ch.values.begin(), ch.values.end(), std::not_equal_to<>()) == ch.values.end();
}

bool is_counter(const RawChannel& ch, double counter_fraction) {
  if (ch.values.size() < 2) return false;
  std::array<std::size_t, 256> hist{};
  for (std::size_t i = 1; i < ch.values.size(); ++i) {
    const auto delta = static_cast<std::uint8_t>(ch.values[i] - ch.values[i - 1]);
    ++hist[delta];
  }
  // Step 0 means "unchanged" and never counts as a counter step.
  const auto best = *std::max_element(hist.begin() + 1, hist.end());
  const auto n_deltas = static_cast<double>(ch.values.size() - 1);
  return static_cast<double>(best) >= counter_fraction * n_deltas;
}

DropReason classify_channel(const RawChannel& ch, const FilterConfig& cfg) {
  if (is_constant(ch)) return DropReason::constant;
  if (ch.size() < cfg.min_points) return DropReason::too_short;
  if (is_counter(ch, cfg.counter_fraction)) return DropReason::counter;
  return DropReason::kept;
}

ChannelSet filter_channels(const ChannelSet& channels, const FilterConfig& cfg) {
  ChannelSet out;
  for (const auto& [id, ch] : channels) {
    if (classify_channel(ch, cfg) == DropReason::kept) out.emplace(id, ch);
  }
  return out;
}

std::set<ChannelId> channel_ids(const ChannelSet& channels) {
  std::set<ChannelId> ids;
  for (const auto& [id, ch] : channels) ids.insert(id);
  return ids;
}

std::set<ChannelId> intersect_common(const std::vector<std::set<ChannelId>>& per_driver) {
  if (per_driver.empty()) throw Error(Errc::invalid_argument, "intersect_common needs at least one driver");
  std::set<ChannelId> acc = per_driver.front();
  for (std::size_t i = 1; i < per_driver.size(); ++i) {
    std::set<ChannelId> next;
    std::set_intersection(acc.begin(), acc.end(), per_driver[i].begin(), per_driver[i].end(),
                          std::inserter(next, next.end()));
    acc = std::move(next);
  }
  if (acc.empty()) throw Error(Errc::empty_intersection, "no channel is shared by every driver");
  return acc;
}

std::size_t seconds_to_points(double seconds, double rate_hz) {
  const double x = seconds * rate_hz;
  if (!(x >= 0.0)) return 0;
  // The epsilon absorbs binary-representation error, e.g. 0.05 * 10.
  return static_cast<std::size_t>(std::floor(x + 0.5 + 1e-9));
}

double estimate_rate(const RawChannel& ch) {
  if (ch.size() < 2) throw Error(Errc::too_few_points, "estimate_rate needs >= 2 points on " + to_string(ch.id));
  std::vector<std::int64_t> gaps;
  gaps.reserve(ch.size() - 1);
  for (std::size_t i = 1; i < ch.size(); ++i) gaps.push_back(ch.timestamps_us[i] - ch.timestamps_us[i - 1]);
  const auto mid = gaps.begin() + static_cast<std::ptrdiff_t>(gaps.size() / 2);
  std::nth_element(gaps.begin(), mid, gaps.end());
  double median = static_cast<double>(*mid);
  if (gaps.size() % 2 == 0) {
    const auto lower = *std::max_element(gaps.begin(), mid);
    median = 0.5 * (median + static_cast<double>(lower));
  }
  if (median <= 0.0) throw Error(Errc::too_few_points, "median inter-arrival is zero on " + to_string(ch.id));
  const double hz = std::round(1e6 / median);
  return std::max(hz, 1.0);
}

TimeSeries resample(const RawChannel& ch, double rate_hz) {
  if (ch.size() < 2) throw Error(Errc::too_few_points, "resample needs >= 2 points on " + to_string(ch.id));
  if (!(rate_hz > 0.0)) throw Error(Errc::invalid_argument, "rate must be positive");
  TimeSeries ts;
  ts.id = ch.id;
  ts.rate_hz = rate_hz;
  ts.t0_us = ch.timestamps_us.front();
  const double span_s = static_cast<double>(ch.timestamps_us.back() - ts.t0_us) * 1e-6;
  const auto n = static_cast<std::size_t>(std::llround(span_s * rate_hz)) + 1;
  ts.values.resize(n);
  std::size_t j = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto grid_us = ts.t0_us + static_cast<std::int64_t>(std::llround(static_cast<double>(i) * 1e6 / rate_hz));
    while (j + 1 < ch.size() && ch.timestamps_us[j + 1] <= grid_us) ++j;
    ts.values[i] = static_cast<double>(ch.values[j]) / 255.0;
  }
  return ts;
}

}  // namespace canfp

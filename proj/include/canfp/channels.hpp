#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "canfp/can_log.hpp"

namespace canfp {

/// One byte position of one message ID.
struct ChannelId {
  std::uint32_t can_id = 0;
  std::uint8_t byte_offset = 0;

  auto operator<=>(const ChannelId&) const = default;
  bool operator==(const ChannelId&) const = default;
};

/// "0x02c4:3" style label used in logs, file names and reports.
std::string to_string(const ChannelId& id);

struct RawChannel {
  ChannelId id;
  std::vector<std::int64_t> timestamps_us;  // nondecreasing
  std::vector<std::uint8_t> values;

  std::size_t size() const { return values.size(); }
};

using ChannelSet = std::map<ChannelId, RawChannel>;

/// Uniformly sampled channel, values normalized into [0, 1].
struct TimeSeries {
  ChannelId id;
  double rate_hz = 0.0;
  std::int64_t t0_us = 0;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  /// Time of the last grid point.
  std::int64_t end_us() const;
};

struct FilterConfig {
  std::size_t min_points = 1000;
  /// Share of consecutive deltas that must agree for a counter verdict.
  double counter_fraction = 0.95;
};

enum class DropReason { kept, constant, too_short, counter };

ChannelSet extract_channels(const CanLog& log);

bool is_constant(const RawChannel& ch);
/// True when at least cfg.counter_fraction of the consecutive byte deltas
/// (mod 256) equal a single non-zero step.
bool is_counter(const RawChannel& ch, double counter_fraction = 0.95);
DropReason classify_channel(const RawChannel& ch, const FilterConfig& cfg);

ChannelSet filter_channels(const ChannelSet& channels, const FilterConfig& cfg);

/// Intersection of all drivers' ChannelIds. Throws empty_intersection when
/// nothing is shared and invalid_argument for an empty input.
std::set<ChannelId> intersect_common(const std::vector<std::set<ChannelId>>& per_driver);

std::set<ChannelId> channel_ids(const ChannelSet& channels);

/// Seconds to point count at `rate_hz`, rounding half up.
std::size_t seconds_to_points(double seconds, double rate_hz);

/// 1 / median inter-arrival time, rounded to whole Hz.
double estimate_rate(const RawChannel& ch);

/// Zero-order-hold resampling onto t0, t0 + 1/rate, ..., with
/// round((t_end - t0) * rate) + 1 points; bytes are scaled by 1/255.
TimeSeries resample(const RawChannel& ch, double rate_hz);

}  // namespace canfp

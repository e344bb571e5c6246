#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "canfp/can_log.hpp"
#include "canfp/channels.hpp"
#include "canfp/evaluation.hpp"

namespace canfp {

/// Behavioural knobs of a simulated driver.
struct DriverProfile {
  std::string driver;
  double accel_aggression = 0.5;     // 0..1
  double brake_sharpness = 0.5;      // 0..1
  double pedal_jitter_hz = 1.0;      // 0.2..3.0
  double steering_smoothness = 0.5;  // 0..1
  double reaction_lag_s = 0.5;       // 0.1..1.5
};

struct ProfileRange {
  double lo;
  double hi;
};
inline constexpr ProfileRange kAggressionRange{0.0, 1.0};
inline constexpr ProfileRange kSharpnessRange{0.0, 1.0};
inline constexpr ProfileRange kJitterRange{0.2, 3.0};
inline constexpr ProfileRange kSmoothnessRange{0.0, 1.0};
inline constexpr ProfileRange kLagRange{0.1, 1.5};

/// Throws invalid_argument when a parameter leaves its range.
void validate(const DriverProfile& p);

enum class ByteRole { signal, constant, counter, noise, checksum };

/// Signals: accel_pedal, brake_pedal, steering, speed, planted.
struct ByteSpec {
  ByteRole role = ByteRole::noise;
  std::string signal;       // signal role
  std::uint8_t value = 0;   // constant role
  std::uint8_t step = 1;    // counter role
};

struct MessageSpec {
  std::uint32_t can_id = 0;
  double period_s = 0.01;
  std::vector<ByteSpec> bytes;  // 1..8 entries
};

struct BusLayout {
  std::vector<MessageSpec> messages;
};

/// Throws invalid_argument for empty messages, bad periods, duplicate IDs
/// or unknown signal names.
void validate(const BusLayout& layout);

/// Eight IDs at 10 ms and 100 ms with three driving signals, four constant
/// bytes, two counters and four noise bytes.
BusLayout default_layout();
/// One square-wave signal byte at the driver's jitter frequency plus
/// `noise_channels` noise bytes spread over further IDs, all at one period.
BusLayout planted_layout(std::size_t noise_channels, double period_s = 0.01);

nlohmann::json to_json(const BusLayout& layout);
BusLayout bus_layout_from_json(const nlohmann::json& j);

/// Channels that survive constant/counter filtering: every signal, noise
/// and checksum byte.
std::set<ChannelId> expected_retained(const BusLayout& layout);
std::set<ChannelId> expected_dropped(const BusLayout& layout);

/// Start of driver i's trace, in microseconds.
std::int64_t synthetic_epoch_us(std::size_t driver_index);

/// Deterministic trace of `duration_s` (>= 60) seconds.
CanLog gen_trace(const DriverProfile& profile, const BusLayout& layout, double duration_s, std::uint64_t seed,
                 std::int64_t start_us = synthetic_epoch_us(0));

struct Cohort {
  std::vector<DriverProfile> profiles;
  std::vector<DriverMeta> metas;
  std::vector<CanLog> logs;
};

/// n profiles spread by a rotated Halton sequence around the centre of the
/// parameter box; separation scales the spread (0 gives identical profiles).
std::vector<DriverProfile> cohort_profiles(std::size_t n, std::uint64_t seed, double separation);

/// n >= 2 drivers named driver_01.. with round-robin metadata.
Cohort gen_cohort(std::size_t n, const BusLayout& layout, double duration_s, std::uint64_t seed,
                  double separation = 1.0);

nlohmann::json to_json(const DriverProfile& p);
DriverProfile driver_profile_from_json(const nlohmann::json& j);

}  // namespace canfp

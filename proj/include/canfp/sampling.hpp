#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "canfp/channels.hpp"

namespace canfp {

/// 1-based inclusive index range [start, end].
struct Window {
  std::size_t start = 0;
  std::size_t end = 0;
  bool operator==(const Window&) const = default;
};

/// All fixed-length windows of length n stepped by `shift` over 1..n_total.
std::vector<Window> make_windows(std::size_t n_total, std::size_t n, std::size_t shift);

/// Resampled common channels of one driver's trace.
struct DriverSeries {
  std::string driver;
  std::map<ChannelId, TimeSeries> series;

  /// Latest first grid time over all channels.
  std::int64_t common_start_us() const;
  /// Earliest time at which every channel still has a full grid point.
  std::int64_t common_end_us() const;
};

/// Start index of the window beginning at t_start_us and its point count.
struct IndexSpan {
  std::size_t start = 0;
  std::size_t count = 0;
};
IndexSpan window_span(const TimeSeries& ts, std::int64_t t_start_us, double duration_s);

struct Sample {
  int label = 0;
  std::int64_t t_start_us = 0;
  double duration_s = 0.0;
  std::map<ChannelId, std::vector<double>> windows;
};

struct SegmentedSample {
  int label = 0;
  std::size_t k = 0;
  std::size_t seg_points(const ChannelId& id) const { return segments.at(id).front().size(); }
  std::map<ChannelId, std::vector<std::vector<double>>> segments;
};

Sample cut_sample(const DriverSeries& d, std::int64_t t_start_us, double duration_s, int label);

/// k = floor(duration / seg_len) contiguous segments; the tail remainder is dropped.
SegmentedSample segment(const Sample& sample, double seg_len_s);

/// Number of segments for a sample duration; throws sample_too_short.
std::size_t segment_count(double duration_s, double seg_len_s);

/// Writes the k segments of one channel window straight into `out`
/// (k * seg_points values, row-major).
void fill_segments(const TimeSeries& ts, std::int64_t t_start_us, double duration_s, double seg_len_s,
                   double* out);

struct SplitSpec {
  double train_fraction = 0.8;
  double validation_fraction = 0.1;
  double window_shift_s = 0.1;
  double sample_duration_s = 60.0;
  std::uint64_t seed = 0;
};

void validate(const SplitSpec& spec);

/// Lightweight handle to one window of one driver.
struct SampleRef {
  std::size_t driver = 0;
  std::int64_t t_start_us = 0;
  int label = 0;
  bool operator==(const SampleRef&) const = default;
};

/// Region boundaries of one driver's trace, all in absolute microseconds.
/// Training windows live in [trace_start, train_end), validation windows in
/// [train_end, val_end) and test windows in [test_start, trace_end).
struct Regions {
  std::string driver;
  std::int64_t trace_start = 0;
  std::int64_t train_end = 0;
  std::int64_t val_end = 0;
  std::int64_t test_start = 0;
  std::int64_t trace_end = 0;
  bool operator==(const Regions&) const = default;
};

struct SplitResult {
  std::vector<Regions> regions;
  std::vector<SampleRef> train;
  std::vector<SampleRef> validation;
  std::vector<SampleRef> test;
};

Regions compute_regions(const DriverSeries& d, const SplitSpec& spec);

/// Windows whose full span lies inside [begin, end), stepped by the shift.
std::vector<std::int64_t> region_window_starts(std::int64_t begin, std::int64_t end, const SplitSpec& spec);

/// Per-driver train/validation/test pools; labels are driver indices.
SplitResult split_traces(const std::vector<DriverSeries>& drivers, const SplitSpec& spec);
/// Same pools rebuilt from stored region boundaries.
SplitResult windows_from_regions(const std::vector<Regions>& regions, const SplitSpec& spec);

/// Uniform subsample without replacement to the smallest class size.
/// Output keeps the input order.
std::vector<SampleRef> balance(const std::vector<SampleRef>& pool, std::uint64_t seed);

/// Positive (1) for the target driver, 0 for everyone else.
std::vector<SampleRef> relabel_one_vs_all(const std::vector<SampleRef>& pool, std::size_t target);
/// Group member i gets label i; everyone else gets label group.size()
/// unless the group already covers every driver.
std::vector<SampleRef> relabel_group(const std::vector<SampleRef>& pool, const std::vector<std::size_t>& group,
                                     std::size_t n_drivers);

void write_split_manifest(const std::vector<Regions>& regions, const SplitSpec& spec, std::ostream& out);
std::vector<Regions> read_split_manifest(std::istream& in, SplitSpec* spec_out = nullptr);

}  // namespace canfp

#include "canfp/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

namespace canfp {
namespace {

std::int64_t seconds_to_us(double s) { return static_cast<std::int64_t>(std::llround(s * 1e6)); }

std::string format_us(std::int64_t us) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%lld.%06lld", static_cast<long long>(us / 1'000'000),
                static_cast<long long>(us % 1'000'000));
  return buf;
}

std::int64_t parse_us(const std::string& tok) {
  const auto dot = tok.find('.');
  if (dot == std::string::npos) throw Error(Errc::bad_format, "bad time '" + tok + "'");
  const auto secs = std::stoll(tok.substr(0, dot));
  auto frac = tok.substr(dot + 1);
  frac.resize(6, '0');
  return secs * 1'000'000 + std::stoll(frac);
}

}  // namespace

std::vector<Window> make_windows(std::size_t n_total, std::size_t n, std::size_t shift) {
  if (n < 1 || shift < 1) throw Error(Errc::invalid_argument, "window length and shift must be >= 1");
  if (n > n_total) {
    throw Error(Errc::window_too_long,
                "window of " + std::to_string(n) + " exceeds series of " + std::to_string(n_total));
  }
  std::vector<Window> out;
  out.reserve((n_total - n) / shift + 1);
  for (std::size_t start = 1; start + n - 1 <= n_total; start += shift) out.push_back({start, start + n - 1});
  return out;
}

std::int64_t DriverSeries::common_start_us() const {
  std::int64_t t = std::numeric_limits<std::int64_t>::min();
  for (const auto& [id, ts] : series) t = std::max(t, ts.t0_us);
  return t;
}

std::int64_t DriverSeries::common_end_us() const {
  std::int64_t t = std::numeric_limits<std::int64_t>::max();
  for (const auto& [id, ts] : series) t = std::min(t, ts.end_us());
  return t;
}

IndexSpan window_span(const TimeSeries& ts, std::int64_t t_start_us, double duration_s) {
  IndexSpan span;
  const double offset = static_cast<double>(t_start_us - ts.t0_us) * 1e-6 * ts.rate_hz;
  if (offset < -0.5) throw Error(Errc::invalid_argument, "window starts before " + to_string(ts.id));
  span.start = static_cast<std::size_t>(std::llround(std::max(0.0, offset)));
  span.count = seconds_to_points(duration_s, ts.rate_hz);
  if (span.start + span.count > ts.size()) {
    // Rounding both the start and the length up can overshoot by one point.
    if (span.start + span.count == ts.size() + 1 && span.start > 0) {
      --span.start;
    } else {
      throw Error(Errc::invalid_argument, "window runs past the end of " + to_string(ts.id));
    }
  }
  return span;
}

Sample cut_sample(const DriverSeries& d, std::int64_t t_start_us, double duration_s, int label) {
  Sample s;
  s.label = label;
  s.t_start_us = t_start_us;
  s.duration_s = duration_s;
  for (const auto& [id, ts] : d.series) {
    const auto span = window_span(ts, t_start_us, duration_s);
    s.windows.emplace(id, std::vector<double>(ts.values.begin() + static_cast<std::ptrdiff_t>(span.start),
                                              ts.values.begin() + static_cast<std::ptrdiff_t>(span.start + span.count)));
  }
  return s;
}

std::size_t segment_count(double duration_s, double seg_len_s) {
  if (!(seg_len_s > 0.0)) throw Error(Errc::invalid_argument, "segment length must be positive");
  const auto k = static_cast<std::size_t>(std::floor(duration_s / seg_len_s + 1e-9));
  if (k < 1) throw Error(Errc::sample_too_short, "sample shorter than one segment");
  return k;
}

SegmentedSample segment(const Sample& sample, double seg_len_s) {
  SegmentedSample out;
  out.label = sample.label;
  out.k = segment_count(sample.duration_s, seg_len_s);
  for (const auto& [id, window] : sample.windows) {
    const double rate = static_cast<double>(window.size()) / sample.duration_s;
    const auto seg_pts = seconds_to_points(seg_len_s, rate);
    if (seg_pts == 0 || seg_pts * out.k > window.size()) {
      throw Error(Errc::sample_too_short, "window of " + to_string(id) + " too short for segmentation");
    }
    auto& segs = out.segments[id];
    for (std::size_t i = 0; i < out.k; ++i) {
      segs.emplace_back(window.begin() + static_cast<std::ptrdiff_t>(i * seg_pts),
                        window.begin() + static_cast<std::ptrdiff_t>((i + 1) * seg_pts));
    }
  }
  return out;
}

void fill_segments(const TimeSeries& ts, std::int64_t t_start_us, double duration_s, double seg_len_s,
                   double* out) {
  const auto span = window_span(ts, t_start_us, duration_s);
  const auto k = segment_count(duration_s, seg_len_s);
  const auto seg_pts = seconds_to_points(seg_len_s, ts.rate_hz);
  if (seg_pts * k > span.count) throw Error(Errc::sample_too_short, "window too short for segmentation");
  std::copy_n(ts.values.begin() + static_cast<std::ptrdiff_t>(span.start), seg_pts * k, out);
}

void validate(const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw Error(Errc::invalid_argument, "train_fraction must lie in (0,1)");
  }
  if (!(spec.validation_fraction >= 0.0 && spec.validation_fraction < 1.0)) {
    throw Error(Errc::invalid_argument, "validation_fraction must lie in [0,1)");
  }
  if (!(spec.window_shift_s > 0.0)) throw Error(Errc::invalid_argument, "window shift must be positive");
  if (!(spec.sample_duration_s > 0.0)) throw Error(Errc::invalid_argument, "sample duration must be positive");
}

Regions compute_regions(const DriverSeries& d, const SplitSpec& spec) {
  validate(spec);
  Regions r;
  r.driver = d.driver;
  r.trace_start = d.common_start_us();
  r.trace_end = d.common_end_us();
  if (r.trace_end <= r.trace_start) throw Error(Errc::trace_too_short, d.driver + ": channels do not overlap in time");
  const double span = static_cast<double>(r.trace_end - r.trace_start);
  const auto dur = seconds_to_us(spec.sample_duration_s);

  r.val_end = r.trace_start + static_cast<std::int64_t>(std::llround(span * spec.train_fraction));
  const double train_side = static_cast<double>(r.val_end - r.trace_start);
  r.train_end = r.trace_start + static_cast<std::int64_t>(std::llround(train_side * (1.0 - spec.validation_fraction)));
  // Without a validation region the test pool steps one sample length away
  // from the training pool.
  r.test_start = spec.validation_fraction > 0.0 ? r.val_end : r.val_end + dur;

  auto check = [&](std::int64_t b, std::int64_t e, const char* name) {
    if (e - b < dur) {
      throw Error(Errc::trace_too_short, d.driver + ": " + name + " region of " + format_us(std::max<std::int64_t>(e - b, 0)) +
                                             " s is shorter than the " + format_us(dur) + " s sample duration");
    }
  };
  check(r.trace_start, r.train_end, "training");
  if (spec.validation_fraction > 0.0) check(r.train_end, r.val_end, "validation");
  check(r.test_start, r.trace_end, "test");
  return r;
}

std::vector<std::int64_t> region_window_starts(std::int64_t begin, std::int64_t end, const SplitSpec& spec) {
  const auto dur = seconds_to_us(spec.sample_duration_s);
  const auto shift = seconds_to_us(spec.window_shift_s);
  std::vector<std::int64_t> starts;
  if (end - begin < dur) return starts;
  for (const auto& w : make_windows(static_cast<std::size_t>(end - begin), static_cast<std::size_t>(dur),
                                    static_cast<std::size_t>(shift))) {
    starts.push_back(begin + static_cast<std::int64_t>(w.start - 1));
  }
  return starts;
}

SplitResult windows_from_regions(const std::vector<Regions>& regions, const SplitSpec& spec) {
  validate(spec);
  SplitResult out;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const auto& r = regions[i];
    const int label = static_cast<int>(i);
    for (auto t : region_window_starts(r.trace_start, r.train_end, spec)) out.train.push_back({i, t, label});
    if (spec.validation_fraction > 0.0) {
      for (auto t : region_window_starts(r.train_end, r.val_end, spec)) out.validation.push_back({i, t, label});
    }
    for (auto t : region_window_starts(r.test_start, r.trace_end, spec)) out.test.push_back({i, t, label});
    out.regions.push_back(r);
  }
  return out;
}

SplitResult split_traces(const std::vector<DriverSeries>& drivers, const SplitSpec& spec) {
  std::vector<Regions> regions;
  for (const auto& d : drivers) regions.push_back(compute_regions(d, spec));
  return windows_from_regions(regions, spec);
}

std::vector<SampleRef> balance(const std::vector<SampleRef>& pool, std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < pool.size(); ++i) by_class[pool[i].label].push_back(i);
  if (by_class.empty()) throw Error(Errc::empty_class, "cannot balance an empty pool");
  std::size_t m = std::numeric_limits<std::size_t>::max();
  for (const auto& [label, idx] : by_class) m = std::min(m, idx.size());

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> keep;
  for (auto& [label, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(m));
  }
  std::sort(keep.begin(), keep.end());
  std::vector<SampleRef> out;
  out.reserve(keep.size());
  for (auto i : keep) out.push_back(pool[i]);
  return out;
}

std::vector<SampleRef> relabel_one_vs_all(const std::vector<SampleRef>& pool, std::size_t target) {
  auto out = pool;
  for (auto& s : out) s.label = s.driver == target ? 1 : 0;
  return out;
}

std::vector<SampleRef> relabel_group(const std::vector<SampleRef>& pool, const std::vector<std::size_t>& group,
                                     std::size_t n_drivers) {
  std::vector<int> label_of(n_drivers, static_cast<int>(group.size()));
  for (std::size_t i = 0; i < group.size(); ++i) label_of.at(group[i]) = static_cast<int>(i);
  auto out = pool;
  for (auto& s : out) s.label = label_of.at(s.driver);
  return out;
}

void write_split_manifest(const std::vector<Regions>& regions, const SplitSpec& spec, std::ostream& out) {
  char buf[256];
  out << "# canfp split manifest v1\n";
  std::snprintf(buf, sizeof buf,
                "spec train_fraction=%.17g validation_fraction=%.17g window_shift_s=%.17g sample_duration_s=%.17g "
                "seed=%llu\n",
                spec.train_fraction, spec.validation_fraction, spec.window_shift_s, spec.sample_duration_s,
                static_cast<unsigned long long>(spec.seed));
  out << buf;
  out << "# driver trace_start train_end val_end test_start trace_end\n";
  for (const auto& r : regions) {
    out << "region " << r.driver << ' ' << format_us(r.trace_start) << ' ' << format_us(r.train_end) << ' '
        << format_us(r.val_end) << ' ' << format_us(r.test_start) << ' ' << format_us(r.trace_end) << '\n';
  }
}

std::vector<Regions> read_split_manifest(std::istream& in, SplitSpec* spec_out) {
  std::vector<Regions> regions;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "spec") {
      SplitSpec spec;
      std::string kv;
      while (ls >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw Error(Errc::bad_format, "bad spec entry '" + kv + "'");
        const auto key = kv.substr(0, eq);
        const auto val = kv.substr(eq + 1);
        if (key == "train_fraction") spec.train_fraction = std::stod(val);
        else if (key == "validation_fraction") spec.validation_fraction = std::stod(val);
        else if (key == "window_shift_s") spec.window_shift_s = std::stod(val);
        else if (key == "sample_duration_s") spec.sample_duration_s = std::stod(val);
        else if (key == "seed") spec.seed = std::stoull(val);
        else throw Error(Errc::bad_format, "unknown spec key '" + key + "'");
      }
      if (spec_out) *spec_out = spec;
    } else if (kind == "region") {
      Regions r;
      std::string a, b, c, d, e;
      if (!(ls >> r.driver >> a >> b >> c >> d >> e)) throw Error(Errc::bad_format, "bad region line: " + line);
      r.trace_start = parse_us(a);
      r.train_end = parse_us(b);
      r.val_end = parse_us(c);
      r.test_start = parse_us(d);
      r.trace_end = parse_us(e);
      regions.push_back(r);
    } else {
      throw Error(Errc::bad_format, "unknown manifest line: " + line);
    }
  }
  return regions;
}

}  // namespace canfp

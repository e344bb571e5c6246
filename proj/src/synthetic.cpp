#include "canfp/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "canfp/error.hpp"
#include "canfp/nn.hpp"
#include "canfp/training.hpp"

namespace canfp {

using nlohmann::json;

namespace {

constexpr double kDt = 0.01;
constexpr std::int64_t kEpochUs = 1481492674LL * 1000000LL;
constexpr std::int64_t kDayUs = 86400LL * 1000000LL;
const std::array<const char*, 5> kSignals{"accel_pedal", "brake_pedal", "steering", "speed", "planted"};

void check_range(double v, ProfileRange r, const char* name) {
  if (!(v >= r.lo && v <= r.hi)) {
    throw Error(Errc::invalid_argument, std::string(name) + " = " + std::to_string(v) + " outside [" +
                                            std::to_string(r.lo) + ", " + std::to_string(r.hi) + "]");
  }
}

std::uint8_t to_byte(double unit) { return static_cast<std::uint8_t>(std::lround(std::clamp(unit, 0.0, 1.0) * 255.0)); }

ByteSpec signal(const char* name) { return ByteSpec{ByteRole::signal, name, 0, 1}; }
ByteSpec constant(std::uint8_t v) { return ByteSpec{ByteRole::constant, "", v, 1}; }
ByteSpec counter(std::uint8_t step) { return ByteSpec{ByteRole::counter, "", 0, step}; }
ByteSpec noise() { return ByteSpec{ByteRole::noise, "", 0, 1}; }

const char* role_name(ByteRole r) {
  switch (r) {
    case ByteRole::signal: return "signal";
    case ByteRole::constant: return "constant";
    case ByteRole::counter: return "counter";
    case ByteRole::noise: return "noise";
    case ByteRole::checksum: return "checksum";
  }
  return "?";
}

// Simulated driving signals on a fixed 100 Hz grid, each in [0, 1].
struct Simulation {
  std::vector<double> accel, brake, steering, speed, planted;

  const std::vector<double>& get(const std::string& name) const {
    if (name == "accel_pedal") return accel;
    if (name == "brake_pedal") return brake;
    if (name == "steering") return steering;
    if (name == "speed") return speed;
    return planted;
  }
};

Simulation simulate(const DriverProfile& p, double duration_s, Rng& rng) {
  const auto n = static_cast<std::size_t>(std::ceil(duration_s / kDt)) + 1;
  Simulation s;
  s.accel.resize(n);
  s.brake.resize(n);
  s.steering.resize(n);
  s.speed.resize(n);
  s.planted.resize(n);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::exponential_distribution<double> next_event(1.0 / 15.0);

  const double aggr = p.accel_aggression, sharp = p.brake_sharpness, smooth = p.steering_smoothness;
  const double accel_gain = 0.05 + 0.25 * aggr, accel_level = 0.35 + 0.65 * aggr;
  const double brake_gain = 0.05 + 0.30 * sharp, brake_level = 0.30 + 0.70 * sharp;
  const double tau_accel = 0.9 - 0.7 * aggr, tau_brake = 0.8 - 0.65 * sharp;
  const double steer_theta = 0.3 + 1.5 * (1.0 - smooth), steer_sigma = 0.15 + 0.6 * (1.0 - smooth);
  const double omega = 2.0 * std::numbers::pi * p.pedal_jitter_hz;
  const double phase = 2.0 * std::numbers::pi * unit(rng);
  const auto lag_steps = static_cast<std::size_t>(std::lround(p.reaction_lag_s / kDt));
  const double sq_dt = std::sqrt(kDt);

  std::vector<double> target(n);
  double t_event = next_event(rng), current = 15.0;
  double v = 0.0, pedal = 0.0, brake = 0.0, steer = 0.0, ou_a = 0.0, ou_b = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * kDt;
    while (t >= t_event) {
      current = unit(rng) < 0.25 ? 0.0 : 35.0 * unit(rng);
      t_event += next_event(rng);
    }
    target[i] = current;
    const double seen = target[i >= lag_steps ? i - lag_steps : 0];
    const double err = seen - v;
    const double a_cmd = err > 0.5 ? std::min(1.0, err * accel_gain) * accel_level : 0.0;
    const double b_cmd = err < -0.5 ? std::min(1.0, -err * brake_gain) * brake_level : 0.0;
    pedal += (a_cmd - pedal) * kDt / tau_accel;
    brake += (b_cmd - brake) * kDt / tau_brake;
    v = std::max(0.0, v + (4.0 * pedal - 9.0 * brake - 0.02 * v - (v > 0.0 ? 0.15 : 0.0)) * kDt);
    ou_a += -ou_a * kDt + 0.02 * sq_dt * gauss(rng);
    ou_b += -ou_b * kDt + 0.01 * sq_dt * gauss(rng);
    steer += -steer_theta * steer * kDt + steer_sigma * sq_dt * gauss(rng);

    const double wave = std::sin(omega * t + phase);
    s.accel[i] = pedal + 0.03 + 0.10 * aggr + (0.01 + 0.04 * aggr) * wave + ou_a;
    s.brake[i] = brake > 0.01 ? brake + ou_b : 0.0;
    s.steering[i] = 0.5 + 0.25 * steer;
    s.speed[i] = v / 40.0;
    s.planted[i] = 0.5 + (wave >= 0.0 ? 0.35 : -0.35) + 0.03 * gauss(rng);
  }
  return s;
}

double halton(std::size_t index, unsigned base) {
  double f = 1.0, r = 0.0;
  while (index > 0) {
    f /= base;
    r += f * static_cast<double>(index % base);
    index /= base;
  }
  return r;
}

}  // namespace

void validate(const DriverProfile& p) {
  check_range(p.accel_aggression, kAggressionRange, "accel_aggression");
  check_range(p.brake_sharpness, kSharpnessRange, "brake_sharpness");
  check_range(p.pedal_jitter_hz, kJitterRange, "pedal_jitter_hz");
  check_range(p.steering_smoothness, kSmoothnessRange, "steering_smoothness");
  check_range(p.reaction_lag_s, kLagRange, "reaction_lag_s");
}

void validate(const BusLayout& layout) {
  if (layout.messages.empty()) throw Error(Errc::invalid_argument, "layout has no messages");
  std::set<std::uint32_t> ids;
  for (const auto& m : layout.messages) {
    if (m.can_id > 0x7ff) throw Error(Errc::id_out_of_range, "layout ID above 0x7ff");
    if (!ids.insert(m.can_id).second) throw Error(Errc::invalid_argument, "duplicate layout ID " + std::to_string(m.can_id));
    if (!(m.period_s > 0.0)) throw Error(Errc::invalid_argument, "message period must be positive");
    if (m.bytes.empty() || m.bytes.size() > 8) throw Error(Errc::invalid_argument, "messages carry 1..8 bytes");
    for (const auto& b : m.bytes) {
      if (b.role == ByteRole::signal &&
          std::find(kSignals.begin(), kSignals.end(), b.signal) == kSignals.end()) {
        throw Error(Errc::invalid_argument, "unknown signal '" + b.signal + "'");
      }
      if (b.role == ByteRole::counter && b.step == 0) throw Error(Errc::invalid_argument, "counter step must be non-zero");
    }
  }
}

BusLayout default_layout() {
  return BusLayout{{
      {0x0c4, 0.01, {signal("accel_pedal"), signal("brake_pedal"), counter(1)}},
      {0x0d0, 0.01, {signal("steering"), constant(0x3c)}},
      {0x1a0, 0.10, {constant(0x82), noise()}},
      {0x1f1, 0.10, {constant(0x0f)}},
      {0x208, 0.01, {noise()}},
      {0x2c4, 0.10, {constant(0x92), counter(16)}},
      {0x3e9, 0.10, {noise()}},
      {0x4f0, 0.01, {noise()}},
  }};
}

BusLayout planted_layout(std::size_t noise_channels, double period_s) {
  BusLayout layout;
  MessageSpec first{0x100, period_s, {signal("planted")}};
  std::size_t left = noise_channels;
  while (left > 0 && first.bytes.size() < 8) {
    first.bytes.push_back(noise());
    --left;
  }
  layout.messages.push_back(first);
  for (std::uint32_t id = 0x101; left > 0; ++id) {
    MessageSpec m{id, period_s, {}};
    while (left > 0 && m.bytes.size() < 8) {
      m.bytes.push_back(noise());
      --left;
    }
    layout.messages.push_back(m);
  }
  return layout;
}

json to_json(const BusLayout& layout) {
  json msgs = json::array();
  for (const auto& m : layout.messages) {
    json bytes = json::array();
    for (const auto& b : m.bytes) {
      json e{{"role", role_name(b.role)}};
      if (b.role == ByteRole::signal) e["signal"] = b.signal;
      if (b.role == ByteRole::constant) e["value"] = b.value;
      if (b.role == ByteRole::counter) e["step"] = b.step;
      bytes.push_back(std::move(e));
    }
    char id[8];
    std::snprintf(id, sizeof id, "0x%03x", m.can_id);
    msgs.push_back({{"can_id", id}, {"period_s", m.period_s}, {"bytes", bytes}});
  }
  return json{{"messages", msgs}};
}

BusLayout bus_layout_from_json(const json& j) {
  BusLayout layout;
  try {
    for (const auto& m : j.at("messages")) {
      MessageSpec spec;
      const auto& id = m.at("can_id");
      spec.can_id = id.is_string() ? static_cast<std::uint32_t>(std::stoul(id.get<std::string>(), nullptr, 0))
                                   : id.get<std::uint32_t>();
      spec.period_s = m.at("period_s").get<double>();
      for (const auto& b : m.at("bytes")) {
        const auto role = b.at("role").get<std::string>();
        if (role == "signal") spec.bytes.push_back(signal(b.at("signal").get<std::string>().c_str()));
        else if (role == "constant") spec.bytes.push_back(constant(b.at("value").get<std::uint8_t>()));
        else if (role == "counter") spec.bytes.push_back(counter(b.value("step", std::uint8_t{1})));
        else if (role == "noise") spec.bytes.push_back(noise());
        else if (role == "checksum") spec.bytes.push_back(ByteSpec{ByteRole::checksum, "", 0, 1});
        else throw Error(Errc::bad_format, "unknown byte role '" + role + "'");
      }
      layout.messages.push_back(std::move(spec));
    }
  } catch (const json::exception& e) {
    throw Error(Errc::bad_format, std::string("layout: ") + e.what());
  } catch (const std::logic_error& e) {
    throw Error(Errc::bad_format, std::string("layout: ") + e.what());
  }
  validate(layout);
  return layout;
}

std::set<ChannelId> expected_retained(const BusLayout& layout) {
  std::set<ChannelId> out;
  for (const auto& m : layout.messages) {
    for (std::size_t b = 0; b < m.bytes.size(); ++b) {
      const auto r = m.bytes[b].role;
      if (r != ByteRole::constant && r != ByteRole::counter) out.insert({m.can_id, static_cast<std::uint8_t>(b)});
    }
  }
  return out;
}

std::set<ChannelId> expected_dropped(const BusLayout& layout) {
  std::set<ChannelId> out;
  for (const auto& m : layout.messages) {
    for (std::size_t b = 0; b < m.bytes.size(); ++b) {
      const auto r = m.bytes[b].role;
      if (r == ByteRole::constant || r == ByteRole::counter) out.insert({m.can_id, static_cast<std::uint8_t>(b)});
    }
  }
  return out;
}

std::int64_t synthetic_epoch_us(std::size_t driver_index) {
  return kEpochUs + static_cast<std::int64_t>(driver_index) * kDayUs;
}

CanLog gen_trace(const DriverProfile& profile, const BusLayout& layout, double duration_s, std::uint64_t seed,
                 std::int64_t start_us) {
  validate(profile);
  validate(layout);
  if (!(duration_s >= 60.0)) throw Error(Errc::invalid_argument, "synthetic traces last at least 60 s");
  Rng sim_rng(mix_seed(seed, 1));
  const Simulation sim = simulate(profile, duration_s, sim_rng);
  const auto last = sim.accel.size() - 1;

  CanLog log;
  log.source_label = profile.driver;
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  std::uniform_int_distribution<int> byte(0, 255);
  for (std::size_t mi = 0; mi < layout.messages.size(); ++mi) {
    const auto& m = layout.messages[mi];
    Rng rng(mix_seed(seed, 100 + mi));
    std::vector<std::uint8_t> counters(m.bytes.size(), 0);
    for (double t = m.period_s * (0.5 + jitter(rng)); t < duration_s; t += m.period_s * (1.0 + jitter(rng))) {
      const auto step = std::min(last, static_cast<std::size_t>(t / kDt));
      CanFrame f;
      f.timestamp_us = start_us + std::llround(t * 1e6);
      f.can_id = m.can_id;
      f.data.resize(m.bytes.size());
      for (std::size_t b = 0; b < m.bytes.size(); ++b) {
        const auto& spec = m.bytes[b];
        switch (spec.role) {
          case ByteRole::signal: f.data[b] = to_byte(sim.get(spec.signal)[step]); break;
          case ByteRole::constant: f.data[b] = spec.value; break;
          case ByteRole::counter:
            f.data[b] = counters[b];
            counters[b] = static_cast<std::uint8_t>(counters[b] + spec.step);
            break;
          case ByteRole::noise: f.data[b] = static_cast<std::uint8_t>(byte(rng)); break;
          case ByteRole::checksum: break;
        }
      }
      for (std::size_t b = 0; b < m.bytes.size(); ++b) {
        if (m.bytes[b].role != ByteRole::checksum) continue;
        unsigned sum = 0;
        for (std::size_t o = 0; o < m.bytes.size(); ++o) {
          if (m.bytes[o].role != ByteRole::checksum) sum += f.data[o];
        }
        f.data[b] = static_cast<std::uint8_t>((sum & 0xff) ^ 0xff);
      }
      log.frames.push_back(std::move(f));
    }
  }
  sort_frames(log.frames);
  return log;
}

std::vector<DriverProfile> cohort_profiles(std::size_t n, std::uint64_t seed, double separation) {
  if (!(separation >= 0.0 && separation <= 1.0)) throw Error(Errc::invalid_argument, "separation must lie in [0,1]");
  constexpr std::array<unsigned, 5> bases{2, 3, 5, 7, 11};
  constexpr std::array<ProfileRange, 5> ranges{kAggressionRange, kSharpnessRange, kJitterRange, kSmoothnessRange,
                                               kLagRange};
  Rng rng(mix_seed(seed, 9));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::array<double, 5> shift{};
  for (auto& s : shift) s = unit(rng);

  std::vector<DriverProfile> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::array<double, 5> v{};
    for (std::size_t d = 0; d < 5; ++d) {
      double u = halton(i + 1, bases[d]) + shift[d];
      u -= std::floor(u);
      v[d] = ranges[d].lo + (ranges[d].hi - ranges[d].lo) * (0.5 + separation * (u - 0.5));
    }
    char name[32];
    std::snprintf(name, sizeof name, "driver_%02zu", i + 1);
    out.push_back(DriverProfile{name, v[0], v[1], v[2], v[3], v[4]});
  }
  return out;
}

Cohort gen_cohort(std::size_t n, const BusLayout& layout, double duration_s, std::uint64_t seed, double separation) {
  if (n < 2) throw Error(Errc::invalid_argument, "a cohort needs at least two drivers");
  Cohort c;
  c.profiles = cohort_profiles(n, seed, separation);
  constexpr std::array<AgeBracket, 4> ages{AgeBracket::a20_25, AgeBracket::a25_30, AgeBracket::a30_40,
                                           AgeBracket::a40_70};
  constexpr std::array<Experience, 3> levels{Experience::low, Experience::average, Experience::high};
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = c.profiles[i];
    c.metas.push_back(DriverMeta{p.driver, i % 2 == 0 ? Gender::male : Gender::female, ages[i % 4], levels[i % 3]});
    c.logs.push_back(gen_trace(p, layout, duration_s, mix_seed(seed, 1000 + i), synthetic_epoch_us(i)));
  }
  return c;
}

json to_json(const DriverProfile& p) {
  return json{{"driver", p.driver},
              {"accel_aggression", p.accel_aggression},
              {"brake_sharpness", p.brake_sharpness},
              {"pedal_jitter_hz", p.pedal_jitter_hz},
              {"steering_smoothness", p.steering_smoothness},
              {"reaction_lag_s", p.reaction_lag_s}};
}

DriverProfile driver_profile_from_json(const json& j) {
  DriverProfile p{j.at("driver").get<std::string>(),       j.at("accel_aggression").get<double>(),
                  j.at("brake_sharpness").get<double>(),   j.at("pedal_jitter_hz").get<double>(),
                  j.at("steering_smoothness").get<double>(), j.at("reaction_lag_s").get<double>()};
  validate(p);
  return p;
}

}  // namespace canfp

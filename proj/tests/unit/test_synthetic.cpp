#include <doctest.h>

#include <map>

#include "canfp/channels.hpp"
#include "canfp/synthetic.hpp"
#include "oracles.hpp"

using namespace canfp;

TEST_CASE("profile ranges") {
  DriverProfile p;
  CHECK_NOTHROW(validate(p));
  p.pedal_jitter_hz = 0.1;
  CHECK_THROWS_AS(validate(p), Error);
  p = DriverProfile{};
  p.reaction_lag_s = 2.0;
  CHECK_THROWS_AS(validate(p), Error);
  const auto back = driver_profile_from_json(to_json(DriverProfile{"x", 0.1, 0.2, 0.3, 0.4, 0.5}));
  CHECK(back.driver == "x");
  CHECK(back.reaction_lag_s == 0.5);
}

TEST_CASE("layout checks and JSON round trip") {
  const auto layout = default_layout();
  CHECK(layout.messages.size() == 8);
  std::map<ByteRole, int> roles;
  for (const auto& m : layout.messages) {
    for (const auto& b : m.bytes) ++roles[b.role];
  }
  CHECK(roles[ByteRole::signal] == 3);
  CHECK(roles[ByteRole::constant] == 4);
  CHECK(roles[ByteRole::counter] == 2);
  CHECK(roles[ByteRole::noise] >= 1);

  const auto back = bus_layout_from_json(to_json(layout));
  CHECK(to_json(back) == to_json(layout));

  BusLayout bad = layout;
  bad.messages[1].can_id = bad.messages[0].can_id;
  CHECK_THROWS_AS(validate(bad), Error);
  bad = layout;
  bad.messages[0].period_s = 0.0;
  CHECK_THROWS_AS(validate(bad), Error);
  bad = layout;
  bad.messages[0].bytes.resize(9);
  CHECK_THROWS_AS(validate(bad), Error);
  CHECK_THROWS_AS(bus_layout_from_json(nlohmann::json::parse(
                      R"({"messages":[{"can_id":"0x10","period_s":0.1,"bytes":[{"role":"weird"}]}]})")),
                  Error);

  const auto planted = planted_layout(12);
  CHECK(expected_retained(planted).size() == 13);
  CHECK(expected_dropped(planted).empty());
}

TEST_CASE("generation is deterministic and follows the layout") {
  const auto layout = default_layout();
  const DriverProfile p{"d", 0.6, 0.3, 1.2, 0.7, 0.4};
  const auto a = gen_trace(p, layout, 90.0, 5);
  const auto b = gen_trace(p, layout, 90.0, 5);
  CHECK(a == b);
  CHECK_FALSE(gen_trace(p, layout, 90.0, 6) == a);
  CHECK_THROWS_AS(gen_trace(p, layout, 30.0, 5), Error);

  std::map<std::uint32_t, std::size_t> len_of;
  for (const auto& m : layout.messages) len_of[m.can_id] = m.bytes.size();
  std::map<std::uint32_t, std::size_t> count;
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    const auto& f = a.frames[i];
    REQUIRE(len_of.count(f.can_id) == 1);
    REQUIRE(f.len() == len_of[f.can_id]);
    if (i) REQUIRE(a.frames[i - 1].timestamp_us <= f.timestamp_us);
    ++count[f.can_id];
  }
  // Roughly one frame per period, within the timing jitter.
  for (const auto& m : layout.messages) {
    const double expected = 90.0 / m.period_s;
    CHECK(std::abs(static_cast<double>(count[m.can_id]) - expected) <= 0.06 * expected + 2);
  }
}

TEST_CASE("constant and counter bytes are filtered, the rest is kept") {
  const auto layout = default_layout();
  const auto log = gen_trace(DriverProfile{}, layout, 300.0, 2);
  const auto all = extract_channels(log);
  const auto kept = filter_channels(all, FilterConfig{});
  CHECK(channel_ids(kept) == expected_retained(layout));
  for (const auto& id : expected_dropped(layout)) {
    const auto reason = classify_channel(all.at(id), FilterConfig{});
    CHECK((reason == DropReason::constant || reason == DropReason::counter));
  }
  CHECK(channel_ids(filter_channels(kept, FilterConfig{})) == channel_ids(kept));
}

TEST_CASE("checksum bytes") {
  BusLayout layout{{{0x123, 0.01, {ByteSpec{ByteRole::noise}, ByteSpec{ByteRole::noise}, ByteSpec{ByteRole::checksum}}}}};
  const auto log = gen_trace(DriverProfile{}, layout, 60.0, 1);
  for (const auto& f : log.frames) {
    REQUIRE(f.data[2] == static_cast<std::uint8_t>(((f.data[0] + f.data[1]) & 0xff) ^ 0xff));
  }
}

TEST_CASE("accelerator distribution follows aggression") {
  const auto layout = default_layout();
  auto values = [&](double aggression) {
    const DriverProfile p{"d", aggression, 0.5, 1.0, 0.5, 0.5};
    const auto chans = extract_channels(gen_trace(p, layout, 600.0, 77));
    std::vector<double> v;
    for (auto b : chans.at({0x0c4, 0}).values) v.push_back(b);
    return v;
  };
  CHECK(oracle::ks_statistic(values(0.2), values(0.9)) > 0.2);
}

TEST_CASE("cohorts") {
  const auto layout = default_layout();
  const auto c = gen_cohort(5, layout, 60.0, 3);
  CHECK(c.logs.size() == 5);
  CHECK(c.metas.size() == 5);
  CHECK(c.profiles[0].driver == "driver_01");
  std::set<std::set<ChannelId>> universes;
  for (const auto& log : c.logs) universes.insert(channel_ids(extract_channels(log)));
  CHECK(universes.size() == 1);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = i + 1; j < 5; ++j) CHECK(c.profiles[i].accel_aggression != c.profiles[j].accel_aggression);
    CHECK(c.logs[i].frames.front().timestamp_us >= synthetic_epoch_us(i));
  }
  CHECK(c.metas[0].gender == Gender::male);
  CHECK(c.metas[1].gender == Gender::female);
  CHECK(c.metas[4].age == AgeBracket::a20_25);

  const auto same = cohort_profiles(4, 1, 0.0);
  for (const auto& p : same) {
    CHECK(p.accel_aggression == same[0].accel_aggression);
    CHECK(p.reaction_lag_s == same[0].reaction_lag_s);
  }
  for (const auto& p : cohort_profiles(33, 9, 1.0)) CHECK_NOTHROW(validate(p));
  CHECK_THROWS_AS(gen_cohort(1, layout, 60.0, 1), Error);
}

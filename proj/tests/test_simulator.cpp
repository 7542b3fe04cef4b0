#include <catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "micromotion/presets.hpp"
#include "micromotion/simulator.hpp"

using namespace micromotion;
using Catch::Approx;

namespace {

struct Setup {
  Preset preset = surface_trap_preset();
  Apparatus app = Apparatus::from_preset(surface_trap_preset());
  ScanPlan plan;
  StrayFieldModel stray;

  Setup() {
    plan.voltages = linear_grid(0.4, 0.6, 20);
    plan.pulse_time = preset.pi_time();
    stray.constant = -preset.trap.field_gain * 0.5;
  }
};

}  // namespace

TEST_CASE("linear grid", "[simulator]") {
  const auto grid = linear_grid(-1.0, 1.0, 5);
  REQUIRE(grid.size() == 5);
  CHECK(grid.front() == -1.0);
  CHECK(grid.back() == 1.0);
  CHECK(grid[2] == Approx(0.0).margin(1e-15));
}

TEST_CASE("simulated scans are reproducible per seed", "[simulator]") {
  Setup s;
  const auto a = simulate_scan(s.plan, s.app, s.stray, s.preset.thermal, std::nullopt, 7);
  const auto b = simulate_scan(s.plan, s.app, s.stray, s.preset.thermal, std::nullopt, 7);
  const auto c = simulate_scan(s.plan, s.app, s.stray, s.preset.thermal, std::nullopt, 8);
  REQUIRE(a.size() == 20);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].successes == b[i].successes);
    CHECK(a[i].timestamp == b[i].timestamp);
    differs |= a[i].successes != c[i].successes;
  }
  CHECK(differs);
}

TEST_CASE("each point draws from its own stream", "[simulator]") {
  // Reordering the grid moves each voltage's draw with its index only.
  Setup s;
  const auto full = simulate_scan(s.plan, s.app, s.stray, s.preset.thermal, std::nullopt, 99);
  ScanPlan shorter = s.plan;
  shorter.voltages.resize(10);
  const auto part = simulate_scan(shorter, s.app, s.stray, s.preset.thermal, std::nullopt, 99);
  for (std::size_t i = 0; i < part.size(); ++i) CHECK(part[i].successes == full[i].successes);
}

TEST_CASE("timestamps follow shots times per-shot time", "[simulator]") {
  Setup s;
  const auto rec = simulate_scan(s.plan, s.app, s.stray, s.preset.thermal, std::nullopt, 1, 100.0);
  const double dt = 100 * (s.plan.pulse_time + 10e-3);
  CHECK(point_duration(s.plan, nullptr) == Approx(dt).epsilon(1e-14));
  for (std::size_t i = 0; i < rec.size(); ++i) CHECK(rec[i].timestamp == Approx(100.0 + i * dt).epsilon(1e-14));
  // 20 points at the default overhead take about 20 s: three scans a minute.
  CHECK(scan_duration(s.plan, nullptr) == Approx(20.0).epsilon(0.01));
}

TEST_CASE("binomial draws match the expected probability", "[simulator][statistics]") {
  Setup s;
  s.plan.voltages.assign(1, 0.503);
  s.plan.shots_per_point = 200000;
  const ThermalProfile profile(s.preset.thermal);
  const double p = expected_signal(s.plan, s.app, 0.503, s.stray.at(0.0), profile, nullptr);
  const auto rec = simulate_scan(s.plan, s.app, s.stray, s.preset.thermal, std::nullopt, 3);
  const double sigma = std::sqrt(p * (1 - p) / s.plan.shots_per_point);
  CHECK(std::abs(rec[0].fraction() - p) < 5 * sigma);
}

TEST_CASE("expected signal peaks at the null for the carrier", "[simulator]") {
  Setup s;
  const ThermalProfile profile(s.preset.thermal);
  const double at_null = expected_signal(s.plan, s.app, 0.5, s.stray.at(0.0), profile, nullptr);
  CHECK(at_null == Approx(profile.population(s.app.rabi_frequency, s.plan.pulse_time)).epsilon(1e-12));
  CHECK(expected_signal(s.plan, s.app, 0.52, s.stray.at(0.0), profile, nullptr) < at_null);
  CHECK(expected_signal(s.plan, s.app, 0.48, s.stray.at(0.0), profile, nullptr) < at_null);
}

TEST_CASE("spam flips bias the fraction toward one half", "[simulator][statistics]") {
  Setup s;
  s.plan.voltages.assign(1, 0.5);
  s.plan.shots_per_point = 100000;
  s.plan.spam_flip = 0.1;
  const ThermalProfile profile(s.preset.thermal);
  const double p = expected_signal(s.plan, s.app, 0.5, s.stray.at(0.0), profile, nullptr);
  const double flipped = p * 0.9 + (1 - p) * 0.1;
  const auto rec = simulate_scan(s.plan, s.app, s.stray, s.preset.thermal, std::nullopt, 5);
  CHECK(std::abs(rec[0].fraction() - flipped) < 5 * std::sqrt(flipped * (1 - flipped) / 100000));
}

TEST_CASE("fluorescence mode draws Poisson counts", "[simulator][statistics]") {
  Setup s;
  s.plan.mode = ScanMode::fluorescence;
  s.plan.voltages.assign(1, 0.5);
  s.plan.shots_per_point = 1000;
  s.plan.dark_counts = 0.5;
  const FluorescenceConfig fluo{0.01, 1e5, 5e-3};
  const auto rec = simulate_scan(s.plan, s.app, s.stray, s.preset.thermal, fluo, 4);
  REQUIRE(rec[0].photon_counts);
  CHECK_FALSE(rec[0].successes);
  const double mean = (25.0 + 0.5) * 1000;
  CHECK(std::abs(static_cast<double>(*rec[0].photon_counts) - mean) < 5 * std::sqrt(mean));
  CHECK(point_duration(s.plan, &fluo) == Approx(1000 * (5e-3 + 10e-3)).epsilon(1e-14));
}

TEST_CASE("mode and fluorescence configuration must agree", "[simulator]") {
  Setup s;
  s.plan.mode = ScanMode::fluorescence;
  CHECK_THROWS_AS(simulate_scan(s.plan, s.app, s.stray, s.preset.thermal, std::nullopt, 1), ConfigError);
  s.plan.mode = ScanMode::raman;
  CHECK_THROWS_AS(
      simulate_scan(s.plan, s.app, s.stray, s.preset.thermal, FluorescenceConfig{0.01, 1e5, 1e-3}, 1), ConfigError);
  s.plan.shots_per_point = 0;
  CHECK_THROWS_AS(simulate_scan(s.plan, s.app, s.stray, s.preset.thermal, std::nullopt, 1), ConfigError);
  CHECK_THROWS_AS(scan_mode_from_string("laser"), ConfigError);
  CHECK(scan_mode_from_string("fluorescence") == ScanMode::fluorescence);
}

TEST_CASE("stray field model", "[simulator]") {
  StrayFieldModel m{10.0, 0.5, 20.0, 100.0};
  CHECK(m.at(0.0) == Approx(10.0));
  CHECK(m.at(100.0) == Approx(10.0 + 50.0 + 20.0 * (1.0 - std::exp(-1.0))).epsilon(1e-14));
  StrayFieldModel bad{0.0, 0.0, 5.0, 0.0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("drift series advances time across scans", "[simulator]") {
  Setup s;
  s.stray.linear_drift = 0.1;
  const auto series = simulate_drift_series(s.plan, s.app, s.stray, s.preset.thermal, std::nullopt, 4, 20.02, 3);
  REQUIRE(series.size() == 4);
  for (std::size_t i = 0; i < series.size(); ++i) {
    CHECK(series[i].timestamp == Approx(20.02 * i));
    CHECK(series[i].records.front().timestamp == Approx(20.02 * i));
  }
  CHECK_THROWS_AS(simulate_drift_series(s.plan, s.app, s.stray, s.preset.thermal, std::nullopt, 4, 5.0, 3),
                  ConfigError);
  CHECK_THROWS_AS(simulate_drift_series(s.plan, s.app, s.stray, s.preset.thermal, std::nullopt, 1, 30.0, 3),
                  ConfigError);
}

TEST_CASE("correlation histogram statistics", "[simulator][correlation]") {
  CorrelationConfig config;
  config.mean_rate = 1e5;
  config.duration = 10.0;
  config.doppler_gain = 2.0;
  CHECK(correlation_visibility(config, {0.1}) == Approx(0.2));
  CHECK(correlation_visibility(config, {-0.1}) == Approx(0.2));
  CHECK(correlation_visibility(config, {3.0}) == 1.0);

  const auto hist = simulate_correlation_histogram(config, {0.1}, 9);
  REQUIRE(hist.counts.size() == 32);
  CHECK(hist.phases.front() == Approx(2 * 3.14159265358979323846 * 0.5 / 32));
  const double total = static_cast<double>(hist.total());
  CHECK(std::abs(total - 1e6) < 5 * std::sqrt(1e6));

  const auto again = simulate_correlation_histogram(config, {0.1}, 9);
  CHECK(again.counts == hist.counts);
  config.phase_bins = 4;
  CHECK_THROWS_AS(simulate_correlation_histogram(config, {0.1}, 9), ConfigError);
}

TEST_CASE("correlation series tags voltages", "[simulator][correlation]") {
  Setup s;
  CorrelationConfig config;
  config.mean_rate = 1e4;
  config.duration = 1.0;
  const auto series = simulate_correlation_series({0.4, 0.5, 0.6}, config, s.app, s.stray.constant, 1);
  REQUIRE(series.size() == 3);
  CHECK(series[1].voltage == 0.5);
  CHECK(series[0].counts != series[2].counts);
}

#include "carbonopt/env.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace carbonopt::env;

namespace {

EnvConfig pinned_config() {
  EnvConfig c;
  c.reward_scale = 1e-4;
  return c;
}

NetworkState pinned_state() {
  NetworkState s;
  s.channel_gain = 7.5e-10;
  s.renewable_fraction = 0.35;
  s.grid_intensity = 1.6e-4;
  s.data_bits = 4.2e6;
  s.edge_cycles = 1.1e9;
  s.user_cycles = 3.3e8;
  return s;
}

}  // namespace

TEST(SampleState, DegenerateRangesYieldThatState) {
  EnvConfig c;
  c.channel_gain = {1e-9, 1e-9};
  c.renewable_fraction = {0.25, 0.25};
  c.grid_intensity = {1.5e-4, 1.5e-4};
  c.data_bits = {2e6, 2e6};
  c.edge_cycles = {1e9, 1e9};
  c.user_cycles = {2e8, 2e8};
  std::mt19937_64 rng(1);
  const NetworkState s = sample_state(c, rng);
  EXPECT_EQ(s.channel_gain, 1e-9);
  EXPECT_EQ(s.renewable_fraction, 0.25);
  EXPECT_EQ(s.grid_intensity, 1.5e-4);
  EXPECT_EQ(s.data_bits, 2e6);
  EXPECT_EQ(s.edge_cycles, 1e9);
  EXPECT_EQ(s.user_cycles, 2e8);
}

TEST(SampleState, SeedDeterministic) {
  EnvConfig c;
  std::mt19937_64 a(42), b(42);
  for (int i = 0; i < 10; ++i) {
    const NetworkState x = sample_state(c, a), y = sample_state(c, b);
    EXPECT_EQ(x.channel_gain, y.channel_gain);
    EXPECT_EQ(x.user_cycles, y.user_cycles);
  }
}

TEST(SampleState, UniformRenewableFractionMean) {
  EnvConfig c;
  std::mt19937_64 rng(5);
  double sum = 0;
  for (int i = 0; i < 10000; ++i) {
    const NetworkState s = sample_state(c, rng);
    ASSERT_GE(s.renewable_fraction, 0.0);
    ASSERT_LE(s.renewable_fraction, 1.0);
    sum += s.renewable_fraction;
  }
  EXPECT_NEAR(sum / 10000, 0.5, 0.02);
}

TEST(SampleState, InvalidRangeThrows) {
  EnvConfig c;
  c.data_bits = {5.0, 1.0};
  std::mt19937_64 rng(1);
  EXPECT_THROW(sample_state(c, rng), std::invalid_argument);
}

TEST(Evaluate, FullyRenewableAndCleanUserIsCarbonFree) {
  EnvConfig c = pinned_config();
  c.user_intensity = 0.0;
  NetworkState s = pinned_state();
  s.renewable_fraction = 1.0;
  for (double b : {c.bandwidth.min, 2e6, c.bandwidth.max}) {
    for (double p : {c.power.min, 0.4, c.power.max}) {
      EXPECT_EQ(evaluate(s, {b, p}, c).carbon_g, 0.0);
    }
  }
}

TEST(Evaluate, UnitSnrGivesRateEqualToBandwidth) {
  EnvConfig c = pinned_config();
  NetworkState s = pinned_state();
  const double b = 1e6, p = 0.5;
  s.channel_gain = c.noise_psd * b / p;  // p*g/(N0*b) == 1
  EXPECT_NEAR(evaluate(s, {b, p}, c).rate_bps, 1e6, 1e-6);
}

// Every formula recomputed by hand from the raw inputs.
TEST(Evaluate, MatchesStraightLineRecomputation) {
  const EnvConfig c = pinned_config();
  const NetworkState s = pinned_state();
  const Action a{3.2e6, 0.42};
  const Outcome o = evaluate(s, a, c);

  const double snr = 0.42 * 7.5e-10 / (1e-17 * 3.2e6);
  const double rate = 3.2e6 * std::log(1.0 + snr) / std::log(2.0);
  const double t_tx = 4.2e6 / rate;
  const double t_edge = 1.1e9 / 3e9;
  const double t_user = 3.3e8 / 1e9;
  const double e_tx = 0.42 * t_tx;
  const double e_edge = 1e-28 * 3e9 * 3e9 * 1.1e9;
  const double e_user = 1e-28 * 1e9 * 1e9 * 3.3e8;
  const double carbon = (1 - 0.35) * (e_edge + e_tx) * 1.6e-4 + e_user * 1.4e-4;
  const double violation = std::max(0.0, t_tx + t_edge + t_user - 1.5);
  const double reward = -(carbon + 2e-3 * violation) / 1e-4;

  EXPECT_NEAR(o.rate_bps, rate, 1e-9 * rate);
  EXPECT_NEAR(o.transmit_time, t_tx, 1e-9);
  EXPECT_NEAR(o.edge_compute_time, t_edge, 1e-9);
  EXPECT_NEAR(o.user_compute_time, t_user, 1e-9);
  EXPECT_NEAR(o.total_latency, t_tx + t_edge + t_user, 1e-9);
  EXPECT_NEAR(o.energy_tx, e_tx, 1e-9);
  EXPECT_NEAR(o.energy_edge, e_edge, 1e-9);
  EXPECT_NEAR(o.energy_user, e_user, 1e-9);
  EXPECT_NEAR(o.carbon_g, carbon, 1e-9);
  EXPECT_NEAR(o.latency_violation, violation, 1e-9);
  EXPECT_NEAR(o.reward, reward, 1e-9);
  EXPECT_EQ(o.feasible, violation == 0.0);
}

TEST(Evaluate, ZeroPowerIsInfeasibleWithRewardFloor) {
  EnvConfig c = pinned_config();
  c.power = {0.0, 1.0};
  const Outcome o = evaluate(pinned_state(), {1e6, 0.0}, c);
  EXPECT_FALSE(o.feasible);
  EXPECT_TRUE(std::isinf(o.transmit_time));
  EXPECT_EQ(o.reward, c.reward_floor);
  EXPECT_GE(o.carbon_g, 0.0);
}

TEST(Evaluate, OutOfBoundsActionRejected) {
  const EnvConfig c = pinned_config();
  EXPECT_THROW(evaluate(pinned_state(), {c.bandwidth.max * 2, 0.5}, c), std::invalid_argument);
  EXPECT_THROW(evaluate(pinned_state(), {1e6, 5.0}, c), std::invalid_argument);
}

TEST(Evaluate, OutcomeInvariantsAndPurity) {
  const EnvConfig c = pinned_config();
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> ub(c.bandwidth.min, c.bandwidth.max), up(c.power.min, c.power.max);
  for (int i = 0; i < 200; ++i) {
    const NetworkState s = sample_state(c, rng);
    const Action a{ub(rng), up(rng)};
    const Outcome o1 = evaluate(s, a, c), o2 = evaluate(s, a, c);
    EXPECT_EQ(o1.reward, o2.reward);
    EXPECT_EQ(o1.carbon_g, o2.carbon_g);
    EXPECT_EQ(o1.total_latency, o1.transmit_time + o1.edge_compute_time + o1.user_compute_time);
    EXPECT_GE(o1.carbon_g, 0.0);
    EXPECT_EQ(o1.feasible, o1.latency_violation == 0.0);
  }
}

TEST(Evaluate, CarbonNonIncreasingInRenewableFraction) {
  const EnvConfig c = pinned_config();
  NetworkState s = pinned_state();
  double previous = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 20; ++i) {
    s.renewable_fraction = i / 20.0;
    const double carbon = evaluate(s, {2e6, 0.3}, c).carbon_g;
    EXPECT_LE(carbon, previous);
    previous = carbon;
  }
}

TEST(Evaluate, RewardDecreasesWithCarbonAndViolation) {
  EnvConfig c = pinned_config();
  NetworkState s = pinned_state();
  // Feasible: more grid intensity means more carbon, same zero violation.
  const Outcome lo = evaluate(s, {4e6, 0.5}, c);
  s.grid_intensity *= 1.5;
  const Outcome hi = evaluate(s, {4e6, 0.5}, c);
  ASSERT_EQ(lo.latency_violation, 0.0);
  ASSERT_EQ(hi.latency_violation, 0.0);
  EXPECT_LT(hi.reward, lo.reward);

  // Same carbon, growing violation via a tighter budget.
  s = pinned_state();
  c.latency_budget = 0.5;
  const Outcome v1 = evaluate(s, {4e6, 0.5}, c);
  c.latency_budget = 0.3;
  const Outcome v2 = evaluate(s, {4e6, 0.5}, c);
  EXPECT_EQ(v1.carbon_g, v2.carbon_g);
  EXPECT_GT(v2.latency_violation, v1.latency_violation);
  EXPECT_LT(v2.reward, v1.reward);
}

TEST(Evaluate, RateIncreasesWithPowerAndBandwidth) {
  const EnvConfig c = pinned_config();
  const NetworkState s = pinned_state();
  for (int i = 0; i < 20; ++i) {
    const double b = grid_point(c.bandwidth, i, 20);
    for (int k = 0; k + 1 < 20; ++k) {
      const double p0 = grid_point(c.power, k, 20), p1 = grid_point(c.power, k + 1, 20);
      EXPECT_LT(evaluate(s, {b, p0}, c).rate_bps, evaluate(s, {b, p1}, c).rate_bps);
    }
  }
  for (int k = 0; k < 20; ++k) {
    const double p = grid_point(c.power, k, 20);
    for (int i = 0; i + 1 < 20; ++i) {
      const double b0 = grid_point(c.bandwidth, i, 20), b1 = grid_point(c.bandwidth, i + 1, 20);
      EXPECT_LT(evaluate(s, {b0, p}, c).rate_bps, evaluate(s, {b1, p}, c).rate_bps);
    }
  }
}

TEST(OracleBest, TwoByTwoGridByHand) {
  const EnvConfig c = pinned_config();
  const NetworkState s = pinned_state();
  const auto [action, outcome] = oracle_best(s, c, {2, 2});
  Action best{};
  double best_reward = -std::numeric_limits<double>::infinity();
  for (double b : {c.bandwidth.min, c.bandwidth.max}) {
    for (double p : {c.power.min, c.power.max}) {
      const double r = evaluate(s, {b, p}, c).reward;
      if (r > best_reward) {
        best_reward = r;
        best = {b, p};
      }
    }
  }
  EXPECT_EQ(action.bandwidth_hz, best.bandwidth_hz);
  EXPECT_EQ(action.power_w, best.power_w);
  EXPECT_EQ(outcome.reward, best_reward);
}

TEST(OracleBest, SlackRegimePicksMinimalPower) {
  EnvConfig c = pinned_config();
  c.latency_budget = 100.0;  // latency never binds
  const NetworkState s = pinned_state();
  const auto [action, outcome] = oracle_best(s, c, {11, 11});
  for (int i = 0; i < 11; ++i) {
    for (int k = 0; k < 11; ++k) {
      EXPECT_GE(outcome.reward, evaluate(s, {grid_point(c.bandwidth, i, 11), grid_point(c.power, k, 11)}, c).reward);
    }
  }
  EXPECT_EQ(action.power_w, c.power.min);
}

TEST(OracleBest, TiesGoToSmallerActions) {
  EnvConfig c = pinned_config();
  c.user_intensity = 0.0;
  c.latency_budget = 100.0;
  NetworkState s = pinned_state();
  s.renewable_fraction = 1.0;  // reward identically zero
  const auto [action, outcome] = oracle_best(s, c, {5, 5});
  EXPECT_EQ(outcome.reward, 0.0);
  EXPECT_EQ(action.bandwidth_hz, c.bandwidth.min);
  EXPECT_EQ(action.power_w, c.power.min);
}

TEST(OracleBest, RefiningNestedGridNeverHurts) {
  const EnvConfig c = pinned_config();
  std::mt19937_64 rng(31);
  for (int i = 0; i < 20; ++i) {
    const NetworkState s = sample_state(c, rng);
    EXPECT_GE(oracle_best(s, c, {101, 101}).second.reward, oracle_best(s, c, {11, 11}).second.reward);
  }
}

TEST(OracleBest, RejectsTinyGrid) {
  EXPECT_THROW(oracle_best(pinned_state(), pinned_config(), {1, 5}), std::invalid_argument);
}

TEST(Normalization, MidpointAndCorners) {
  const EnvConfig c;
  const Action mid = denormalize_action({0.0, 0.0}, c);
  EXPECT_DOUBLE_EQ(mid.bandwidth_hz, 0.5 * (c.bandwidth.min + c.bandwidth.max));
  EXPECT_DOUBLE_EQ(mid.power_w, 0.5 * (c.power.min + c.power.max));
  const Action lo = denormalize_action({-1.0, -1.0}, c), hi = denormalize_action({1.0, 1.0}, c);
  EXPECT_EQ(lo.bandwidth_hz, c.bandwidth.min);
  EXPECT_EQ(lo.power_w, c.power.min);
  EXPECT_EQ(hi.bandwidth_hz, c.bandwidth.max);
  EXPECT_EQ(hi.power_w, c.power.max);
}

TEST(Normalization, OutOfRangeInputsClamped) {
  const EnvConfig c;
  const Action a = denormalize_action({3.0, -7.0}, c);
  EXPECT_EQ(a.bandwidth_hz, c.bandwidth.max);
  EXPECT_EQ(a.power_w, c.power.min);
}

TEST(Normalization, RandomActionsRoundTrip) {
  const EnvConfig c;
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> ub(c.bandwidth.min, c.bandwidth.max), up(c.power.min, c.power.max);
  for (int i = 0; i < 100; ++i) {
    const Action a{ub(rng), up(rng)};
    const Action back = denormalize_action(normalize_action(a, c), c);
    EXPECT_NEAR(back.bandwidth_hz, a.bandwidth_hz, 1e-12 * c.bandwidth.max);
    EXPECT_NEAR(back.power_w, a.power_w, 1e-12);
  }
}

TEST(Normalization, StateMapsIntoUnitBox) {
  const EnvConfig c;
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    for (double v : normalize_state(sample_state(c, rng), c)) {
      EXPECT_GE(v, -1.0 - 1e-12);
      EXPECT_LE(v, 1.0 + 1e-12);
    }
  }
}

TEST(EnvConfigIo, JsonRoundTripAndValidation) {
  EnvConfig c;
  c.latency_budget = 2.25;
  c.power = {0.1, 0.9};
  const EnvConfig back = env_config_from_json(to_json(c));
  EXPECT_EQ(back.latency_budget, 2.25);
  EXPECT_EQ(back.power.min, 0.1);
  EXPECT_EQ(back.power.max, 0.9);
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(to_json(c).size(), env_config_keys().size());

  EnvConfig bad;
  bad.noise_psd = -1;
  bad.bandwidth = {0.0, 1e6};
  bad.data_bits = {9e6, 1e6};
  EXPECT_EQ(bad.validate().size(), 3u);
  EXPECT_TRUE(EnvConfig{}.validate().empty());
}

TEST(RewardScale, CalibrationIsMedianOracleCarbon) {
  EnvConfig c;
  const double scale = calibrate_reward_scale(c, 3, 9, {11, 11});
  EnvConfig unit = c;
  std::mt19937_64 rng(3);
  std::vector<double> carbon;
  for (int i = 0; i < 9; ++i) carbon.push_back(oracle_best(sample_state(unit, rng), unit, {11, 11}).second.carbon_g);
  std::sort(carbon.begin(), carbon.end());
  EXPECT_EQ(scale, carbon[4]);
}

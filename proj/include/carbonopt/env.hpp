#pragma once

// One user, one renewable-powered edge server. The edge server runs part of
// an AIGC task and sends the intermediate result to the user, who finishes it.
// The decision is the downlink bandwidth and transmit power; the objective is
// the task's carbon footprint under a latency budget.

#include <array>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace carbonopt::env {

struct Range {
  double min = 0.0;
  double max = 0.0;

  double width() const { return max - min; }
  bool valid() const { return min <= max; }
};

struct NetworkState {
  double channel_gain = 0.0;        // dimensionless power gain
  double renewable_fraction = 0.0;  // share of edge energy that is carbon-free
  double grid_intensity = 0.0;      // gCO2 per J drawn from the grid
  double data_bits = 0.0;           // intermediate result size
  double edge_cycles = 0.0;
  double user_cycles = 0.0;
};

inline constexpr std::size_t kStateDim = 6;
inline constexpr std::size_t kActionDim = 2;

struct Action {
  double bandwidth_hz = 0.0;
  double power_w = 0.0;
};

struct EnvConfig {
  double noise_psd = 1e-17;           // W/Hz
  double edge_frequency = 3e9;        // Hz
  double user_frequency = 1e9;        // Hz
  double edge_capacitance = 1e-28;
  double user_capacitance = 1e-28;
  double latency_budget = 1.5;        // s
  double penalty_weight = 2e-3;       // gCO2-equivalent per second of violation
  double user_intensity = 1.4e-4;     // gCO2/J
  double reward_scale = 1.0;
  double reward_floor = -10.0;

  Range bandwidth{0.5e6, 5e6};
  Range power{0.05, 1.0};

  Range channel_gain{2e-10, 2e-9};
  Range renewable_fraction{0.0, 1.0};
  Range grid_intensity{1e-4, 2e-4};
  Range data_bits{1e6, 8e6};
  Range edge_cycles{5e8, 2e9};
  Range user_cycles{1e8, 5e8};

  /// Every violated constraint, not just the first.
  std::vector<std::string> validate() const;
};

/// Flat key/value JSON. Ranges appear as `<name>_min` / `<name>_max`.
nlohmann::json to_json(const EnvConfig& config);
/// Keys absent from `j` keep their value from `base`. Unknown keys are ignored.
EnvConfig env_config_from_json(const nlohmann::json& j, EnvConfig base = {});
/// Names of every EnvConfig key in the flat JSON representation.
std::vector<std::string> env_config_keys();

struct Outcome {
  double rate_bps = 0.0;
  double transmit_time = 0.0;
  double edge_compute_time = 0.0;
  double user_compute_time = 0.0;
  double total_latency = 0.0;
  double energy_tx = 0.0;
  double energy_edge = 0.0;
  double energy_user = 0.0;
  double carbon_g = 0.0;
  double latency_violation = 0.0;
  double reward = 0.0;
  bool feasible = true;
};

NetworkState sample_state(const EnvConfig& config, std::mt19937_64& rng);

Outcome evaluate(const NetworkState& state, const Action& action, const EnvConfig& config);

struct GridSize {
  int bandwidth_points = 101;
  int power_points = 101;
};

/// Exhaustive search over a uniform grid spanning the action bounds.
/// Ties go to the smaller bandwidth, then the smaller power.
std::pair<Action, Outcome> oracle_best(const NetworkState& state, const EnvConfig& config,
                                       GridSize grid);

/// i-th of n uniformly spaced points on [range.min, range.max]. Endpoints are
/// exact and nested grids (n, k(n-1)+1) share their common points bit-for-bit.
double grid_point(const Range& range, int i, int n);

/// Each state field mapped affinely onto [-1, 1]; degenerate ranges map to 0.
std::array<double, kStateDim> normalize_state(const NetworkState& state, const EnvConfig& config);
std::array<double, kActionDim> normalize_action(const Action& action, const EnvConfig& config);
/// Inputs outside [-1, 1] are clamped.
Action denormalize_action(std::array<double, kActionDim> unit, const EnvConfig& config);

/// Median over `samples` sampled states of the oracle's |carbon|. Used as
/// reward_scale so that rewards are of order one.
double calibrate_reward_scale(const EnvConfig& config, std::uint64_t seed, int samples = 256,
                              GridSize grid = {});

}  // namespace carbonopt::env

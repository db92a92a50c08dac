#include "carbonopt/env.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace carbonopt::env {

namespace {

struct RangeField {
  const char* name;
  Range EnvConfig::*member;
};

struct ScalarField {
  const char* name;
  double EnvConfig::*member;
};

constexpr ScalarField kScalars[] = {
    {"noise_psd", &EnvConfig::noise_psd},
    {"edge_frequency", &EnvConfig::edge_frequency},
    {"user_frequency", &EnvConfig::user_frequency},
    {"edge_capacitance", &EnvConfig::edge_capacitance},
    {"user_capacitance", &EnvConfig::user_capacitance},
    {"latency_budget", &EnvConfig::latency_budget},
    {"penalty_weight", &EnvConfig::penalty_weight},
    {"user_intensity", &EnvConfig::user_intensity},
    {"reward_scale", &EnvConfig::reward_scale},
    {"reward_floor", &EnvConfig::reward_floor},
};

constexpr RangeField kRanges[] = {
    {"bandwidth", &EnvConfig::bandwidth},
    {"power", &EnvConfig::power},
    {"channel_gain", &EnvConfig::channel_gain},
    {"renewable_fraction", &EnvConfig::renewable_fraction},
    {"grid_intensity", &EnvConfig::grid_intensity},
    {"data_bits", &EnvConfig::data_bits},
    {"edge_cycles", &EnvConfig::edge_cycles},
    {"user_cycles", &EnvConfig::user_cycles},
};

double sample_uniform(const Range& r, std::mt19937_64& rng) {
  const double u = std::generate_canonical<double, 53>(rng);
  return std::lerp(r.min, r.max, u);
}

double to_unit(double value, const Range& r) {
  if (r.width() <= 0.0) return 0.0;
  return 2.0 * (value - r.min) / r.width() - 1.0;
}

double from_unit(double u, const Range& r) {
  const double clamped = std::clamp(u, -1.0, 1.0);
  return std::lerp(r.min, r.max, 0.5 * (clamped + 1.0));
}

}  // namespace

std::vector<std::string> EnvConfig::validate() const {
  std::vector<std::string> errors;
  auto positive = [&](const char* name, double v) {
    if (!(v > 0.0) || !std::isfinite(v)) errors.push_back(std::string(name) + " must be positive and finite");
  };
  positive("noise_psd", noise_psd);
  positive("edge_frequency", edge_frequency);
  positive("user_frequency", user_frequency);
  positive("edge_capacitance", edge_capacitance);
  positive("user_capacitance", user_capacitance);
  positive("latency_budget", latency_budget);
  positive("reward_scale", reward_scale);
  if (!(penalty_weight >= 0.0)) errors.emplace_back("penalty_weight must be non-negative");
  if (!(user_intensity >= 0.0)) errors.emplace_back("user_intensity must be non-negative");
  if (!std::isfinite(reward_floor)) errors.emplace_back("reward_floor must be finite");

  for (const auto& f : kRanges) {
    const Range& r = this->*f.member;
    if (!std::isfinite(r.min) || !std::isfinite(r.max)) {
      errors.push_back(std::string(f.name) + " range must be finite");
    } else if (!r.valid()) {
      errors.push_back(std::string(f.name) + "_min must not exceed " + f.name + "_max");
    }
  }
  if (!(bandwidth.min > 0.0)) errors.emplace_back("bandwidth_min must be positive");
  if (!(power.min >= 0.0)) errors.emplace_back("power_min must be non-negative");
  if (!(channel_gain.min > 0.0)) errors.emplace_back("channel_gain_min must be positive");
  if (!(renewable_fraction.min >= 0.0 && renewable_fraction.max <= 1.0)) {
    errors.emplace_back("renewable_fraction range must lie within [0, 1]");
  }
  if (!(grid_intensity.min >= 0.0)) errors.emplace_back("grid_intensity_min must be non-negative");
  if (!(data_bits.min > 0.0)) errors.emplace_back("data_bits_min must be positive");
  if (!(edge_cycles.min > 0.0)) errors.emplace_back("edge_cycles_min must be positive");
  if (!(user_cycles.min > 0.0)) errors.emplace_back("user_cycles_min must be positive");
  return errors;
}

nlohmann::json to_json(const EnvConfig& config) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : kScalars) j[f.name] = config.*f.member;
  for (const auto& f : kRanges) {
    j[std::string(f.name) + "_min"] = (config.*f.member).min;
    j[std::string(f.name) + "_max"] = (config.*f.member).max;
  }
  return j;
}

EnvConfig env_config_from_json(const nlohmann::json& j, EnvConfig base) {
  if (!j.is_object()) throw std::invalid_argument("environment config must be a JSON object");
  auto read = [&](const std::string& key, double& out) {
    auto it = j.find(key);
    if (it == j.end()) return;
    if (!it->is_number()) throw std::invalid_argument("config key '" + key + "' must be a number");
    out = it->get<double>();
  };
  for (const auto& f : kScalars) read(f.name, base.*f.member);
  for (const auto& f : kRanges) {
    read(std::string(f.name) + "_min", (base.*f.member).min);
    read(std::string(f.name) + "_max", (base.*f.member).max);
  }
  return base;
}

std::vector<std::string> env_config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : kScalars) keys.emplace_back(f.name);
  for (const auto& f : kRanges) {
    keys.push_back(std::string(f.name) + "_min");
    keys.push_back(std::string(f.name) + "_max");
  }
  return keys;
}

NetworkState sample_state(const EnvConfig& config, std::mt19937_64& rng) {
  for (const auto& f : kRanges) {
    if (!(config.*f.member).valid()) {
      throw std::invalid_argument(std::string("sample_state: invalid range for ") + f.name);
    }
  }
  NetworkState s;
  s.channel_gain = sample_uniform(config.channel_gain, rng);
  s.renewable_fraction = sample_uniform(config.renewable_fraction, rng);
  s.grid_intensity = sample_uniform(config.grid_intensity, rng);
  s.data_bits = sample_uniform(config.data_bits, rng);
  s.edge_cycles = sample_uniform(config.edge_cycles, rng);
  s.user_cycles = sample_uniform(config.user_cycles, rng);
  return s;
}

Outcome evaluate(const NetworkState& state, const Action& action, const EnvConfig& config) {
  if (!(action.bandwidth_hz >= config.bandwidth.min && action.bandwidth_hz <= config.bandwidth.max)) {
    throw std::invalid_argument("evaluate: bandwidth outside configured bounds");
  }
  if (!(action.power_w >= config.power.min && action.power_w <= config.power.max)) {
    throw std::invalid_argument("evaluate: transmit power outside configured bounds");
  }

  Outcome o;
  o.edge_compute_time = state.edge_cycles / config.edge_frequency;
  o.user_compute_time = state.user_cycles / config.user_frequency;
  o.energy_edge = config.edge_capacitance * config.edge_frequency * config.edge_frequency * state.edge_cycles;
  o.energy_user = config.user_capacitance * config.user_frequency * config.user_frequency * state.user_cycles;

  const double b = action.bandwidth_hz;
  const double p = action.power_w;
  if (p == 0.0 && state.data_bits > 0.0) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    o.rate_bps = 0.0;
    o.transmit_time = inf;
    o.total_latency = inf;
    o.energy_tx = 0.0;
    o.carbon_g = (1.0 - state.renewable_fraction) * o.energy_edge * state.grid_intensity +
                 o.energy_user * config.user_intensity;
    o.latency_violation = inf;
    o.feasible = false;
    o.reward = config.reward_floor;
    return o;
  }

  o.rate_bps = b * std::log2(1.0 + p * state.channel_gain / (config.noise_psd * b));
  o.transmit_time = state.data_bits / o.rate_bps;
  o.total_latency = o.transmit_time + o.edge_compute_time + o.user_compute_time;
  o.energy_tx = p * o.transmit_time;
  o.carbon_g = (1.0 - state.renewable_fraction) * (o.energy_edge + o.energy_tx) * state.grid_intensity +
               o.energy_user * config.user_intensity;
  o.latency_violation = std::max(0.0, o.total_latency - config.latency_budget);
  o.feasible = o.latency_violation == 0.0;
  o.reward = -(o.carbon_g + config.penalty_weight * o.latency_violation) / config.reward_scale;
  return o;
}

double grid_point(const Range& range, int i, int n) {
  if (n < 2) throw std::invalid_argument("grid_point: need at least two points");
  return std::lerp(range.min, range.max, static_cast<double>(i) / static_cast<double>(n - 1));
}

std::pair<Action, Outcome> oracle_best(const NetworkState& state, const EnvConfig& config, GridSize grid) {
  if (grid.bandwidth_points < 2 || grid.power_points < 2) {
    throw std::invalid_argument("oracle_best: grid needs at least 2 points per axis");
  }
  Action best_action;
  Outcome best_outcome;
  bool have = false;
  for (int i = 0; i < grid.bandwidth_points; ++i) {
    const double b = grid_point(config.bandwidth, i, grid.bandwidth_points);
    for (int k = 0; k < grid.power_points; ++k) {
      const Action a{b, grid_point(config.power, k, grid.power_points)};
      const Outcome o = evaluate(state, a, config);
      if (!have || o.reward > best_outcome.reward) {
        best_action = a;
        best_outcome = o;
        have = true;
      }
    }
  }
  return {best_action, best_outcome};
}

std::array<double, kStateDim> normalize_state(const NetworkState& s, const EnvConfig& c) {
  return {to_unit(s.channel_gain, c.channel_gain),   to_unit(s.renewable_fraction, c.renewable_fraction),
          to_unit(s.grid_intensity, c.grid_intensity), to_unit(s.data_bits, c.data_bits),
          to_unit(s.edge_cycles, c.edge_cycles),     to_unit(s.user_cycles, c.user_cycles)};
}

std::array<double, kActionDim> normalize_action(const Action& a, const EnvConfig& c) {
  return {to_unit(a.bandwidth_hz, c.bandwidth), to_unit(a.power_w, c.power)};
}

Action denormalize_action(std::array<double, kActionDim> unit, const EnvConfig& c) {
  return {from_unit(unit[0], c.bandwidth), from_unit(unit[1], c.power)};
}

double calibrate_reward_scale(const EnvConfig& config, std::uint64_t seed, int samples, GridSize grid) {
  if (samples < 1) throw std::invalid_argument("calibrate_reward_scale: need at least one sample");
  EnvConfig unit = config;
  unit.reward_scale = 1.0;
  std::mt19937_64 rng(seed);
  std::vector<double> carbon;
  carbon.reserve(static_cast<std::size_t>(samples));
  for (int i = 0; i < samples; ++i) {
    const NetworkState s = sample_state(unit, rng);
    carbon.push_back(std::abs(oracle_best(s, unit, grid).second.carbon_g));
  }
  std::sort(carbon.begin(), carbon.end());
  const std::size_t n = carbon.size();
  const double median = n % 2 ? carbon[n / 2] : 0.5 * (carbon[n / 2 - 1] + carbon[n / 2]);
  if (!(median > 0.0)) throw std::runtime_error("calibrate_reward_scale: median carbon is zero");
  return median;
}

}  // namespace carbonopt::env

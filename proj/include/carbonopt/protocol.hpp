#pragma once

// Held-out evaluation protocol shared by every optimizer, so that reward
// curves from different algorithms are comparable state-for-state.

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "carbonopt/env.hpp"

namespace carbonopt::protocol {

struct EvalPoint {
  std::int64_t epoch = 0;      // optimizer updates completed
  std::int64_t env_steps = 0;  // environment interactions consumed
  double mean_reward = 0.0;
  double mean_carbon_g = 0.0;
};

/// Training produced a non-finite loss or parameter.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<env::NetworkState> make_eval_states(const env::EnvConfig& config, std::uint64_t eval_seed,
                                                int count);

/// Fingerprint of the exact bytes of an evaluation set.
std::string eval_set_hash(const std::vector<env::NetworkState>& states);

/// Generator dedicated to the i-th evaluation state.
std::mt19937_64 eval_rng(std::uint64_t eval_seed, std::size_t index);

/// Order-stable mean reward/carbon of `policy` over `states`.
using DeterministicPolicy = std::function<env::Action(const env::NetworkState&, std::size_t index)>;
EvalPoint evaluate_policy(const env::EnvConfig& config, const std::vector<env::NetworkState>& states,
                          const DeterministicPolicy& policy);

}  // namespace carbonopt::protocol

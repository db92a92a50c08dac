#pragma once

// Clipped-surrogate PPO with a tanh-squashed Gaussian policy. The environment
// is single-step, so the advantage is simply reward minus the value estimate.

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "carbonopt/env.hpp"
#include "carbonopt/nn.hpp"
#include "carbonopt/protocol.hpp"

namespace carbonopt::ppo {

using nn::Matrix;
using nn::Vector;

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 1.0;

struct GaussianPolicy {
  nn::Mlp mean_net;  // state -> mean of the pre-squash Gaussian, tanh output
  Vector log_std;    // state-independent, clamped to [kLogStdMin, kLogStdMax]

  static GaussianPolicy create(const std::vector<int>& hidden, double initial_log_std, std::mt19937_64& rng);
  void clamp_log_std();
};

struct Sample {
  std::array<double, env::kActionDim> action{};      // tanh(u), in [-1, 1]
  std::array<double, env::kActionDim> pre_squash{};  // u
  double log_prob = 0.0;
};

/// log density of a = tanh(u) for u ~ Normal(mean, exp(log_std)), including
/// the change-of-variables term -sum log(1 - tanh(u)^2).
double squashed_log_prob(const Vector& mean, const Vector& log_std, const std::array<double, env::kActionDim>& u);

Sample ppo_sample(const GaussianPolicy& policy, const std::array<double, env::kStateDim>& state,
                  std::mt19937_64& rng);

/// Zero-noise action tanh(mean).
std::array<double, env::kActionDim> deterministic_normalized_action(const GaussianPolicy& policy,
                                                                    const std::array<double, env::kStateDim>& state);

/// Parallel per-sample arrays; column j of each matrix is sample j.
struct RolloutBatch {
  Matrix states;      // kStateDim x n
  Matrix actions;     // kActionDim x n, normalized
  Matrix pre_squash;  // kActionDim x n
  Vector log_probs;
  Vector rewards;
  Vector value_estimates;

  Eigen::Index size() const { return rewards.size(); }
  void validate() const;
};

struct PpoConfig {
  int rollouts = 312;
  int rollout_size = 512;
  int epochs = 4;
  int minibatch_size = 64;
  double clip = 0.2;
  double entropy_weight = 1e-3;
  double learning_rate = 3e-4;
  double initial_log_std = -0.5;
  std::vector<int> hidden{128, 128};
  int eval_interval = 500;
  std::uint64_t seed = 0;
};

struct PpoOptimizers {
  nn::AdamState mean;
  nn::AdamState log_std;
  nn::AdamState value;

  static PpoOptimizers create(const GaussianPolicy& policy, const nn::Mlp& value_net, double learning_rate);
};

/// mean over samples of min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A).
double clipped_surrogate(const Vector& ratios, const Vector& advantages, double clip);

struct PpoLosses {
  double surrogate = 0.0;   // full batch, before any update
  double value_loss = 0.0;  // full batch MSE, before any update
  double entropy = 0.0;     // pre-squash Gaussian entropy, before any update
  double final_policy_loss = 0.0;
  int gradient_steps = 0;
};

/// K epochs of shuffled minibatch Adam steps on the clipped surrogate (with
/// entropy bonus) and the value MSE.
PpoLosses ppo_update(GaussianPolicy& policy, nn::Mlp& value_net, PpoOptimizers& optimizers,
                     const RolloutBatch& batch, const PpoConfig& config, std::mt19937_64& rng);

struct TrainResult {
  GaussianPolicy policy;
  nn::Mlp value_net;
  std::vector<protocol::EvalPoint> curve;
};

env::Action deterministic_action(const GaussianPolicy& policy, const env::EnvConfig& config,
                                 const env::NetworkState& state);

protocol::EvalPoint evaluate_ppo(const GaussianPolicy& policy, const env::EnvConfig& config,
                                 const std::vector<env::NetworkState>& states);

TrainResult train_ppo(const env::EnvConfig& env_config, const PpoConfig& config,
                      const std::vector<env::NetworkState>& eval_states);

}  // namespace carbonopt::ppo

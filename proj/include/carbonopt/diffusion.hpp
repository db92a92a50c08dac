#pragma once

// Diffusion-model policy: a conditional DDPM reverse chain that turns Gaussian
// noise into a (bandwidth, power) decision for a given network state, trained
// against a learned reward critic by backpropagating through the whole chain.

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <vector>

#include "carbonopt/env.hpp"
#include "carbonopt/nn.hpp"
#include "carbonopt/protocol.hpp"

namespace carbonopt::diffusion {

using nn::Matrix;
using nn::Vector;

struct NoiseSchedule {
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  /// Betas spaced linearly from beta_start to beta_end (inclusive).
  static NoiseSchedule linear(int steps, double beta_start, double beta_end);
  static NoiseSchedule from_betas(std::vector<double> betas);

  int steps() const { return static_cast<int>(betas.size()); }
};

/// Denoiser input: normalized state, noisy action x_t, then t/N.
inline constexpr int kDenoiserInput = static_cast<int>(env::kStateDim + env::kActionDim + 1);
inline constexpr int kCriticInput = static_cast<int>(env::kStateDim + env::kActionDim);

struct DiffusionPolicy {
  nn::Mlp denoiser;
  NoiseSchedule schedule;

  static DiffusionPolicy create(const std::vector<int>& hidden, NoiseSchedule schedule, std::mt19937_64& rng,
                                nn::Activation activation = nn::Activation::mish);
};

/// Every random draw of one batched reverse chain. step_noise[t-1] is the z
/// used when going from x_t to x_{t-1}; it is zero for t == 1 and in
/// deterministic mode.
struct ChainNoise {
  Matrix initial;  // x_N, kActionDim x batch
  std::vector<Matrix> step_noise;
};

ChainNoise draw_chain_noise(const NoiseSchedule& schedule, Eigen::Index batch, std::mt19937_64& rng,
                            bool deterministic);

struct ChainTrace {
  std::vector<nn::ForwardCache> caches;  // caches[t-1] is the denoiser pass at step t
};

/// Runs x_N -> x_0. `states` holds normalized states column-wise.
Matrix run_chain(const DiffusionPolicy& policy, const Matrix& states, const ChainNoise& noise,
                 ChainTrace* trace = nullptr);

struct ChainGradients {
  Vector parameters;
  Matrix initial;  // dLoss/dx_N
};

ChainGradients chain_backward(const DiffusionPolicy& policy, const ChainTrace& trace, const Matrix& grad_x0);

/// Normalized action tanh(x_0) in [-1, 1]^2.
std::array<double, env::kActionDim> sample_normalized_action(const DiffusionPolicy& policy,
                                                             const std::array<double, env::kStateDim>& state,
                                                             std::mt19937_64& rng, bool deterministic);

env::Action sample_action(const DiffusionPolicy& policy, const env::NetworkState& state,
                          const env::EnvConfig& config, std::mt19937_64& rng, bool deterministic);

struct Critic {
  nn::Mlp q1;
  nn::Mlp q2;
  nn::Mlp target_q1;
  nn::Mlp target_q2;
  nn::AdamState optimizer1;
  nn::AdamState optimizer2;
  double tau = 0.005;

  static Critic create(const std::vector<int>& hidden, double learning_rate, double tau, std::mt19937_64& rng);
};

struct Transition {
  std::array<double, env::kStateDim> state{};
  std::array<double, env::kActionDim> action{};  // normalized
  double reward = 0.0;
};

/// Fixed-capacity FIFO of transitions.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(const Transition& t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& at(std::size_t i) const { return items_.at(i); }

  /// Uniform with replacement.
  std::vector<std::size_t> sample_indices(std::size_t batch, std::mt19937_64& rng) const;

 private:
  std::size_t capacity_;
  std::deque<Transition> items_;
};

/// Both Q networks regress onto the observed reward (no bootstrapping), then
/// the targets track them with rate tau. Returns the mean of the two MSEs
/// measured before the step.
double critic_update(Critic& critic, const Matrix& states, const Matrix& actions, const Vector& rewards);

/// Values Q(s, a) for a batch and dQ/da, both column-per-sample.
struct ActionValue {
  Eigen::RowVectorXd values;
  Matrix action_grads;
};
using ActionValueFn = std::function<ActionValue(const Matrix& states, const Matrix& actions)>;

ActionValueFn q1_objective(const Critic& critic);

/// loss = -mean Q(s, tanh(x_0)) over deterministic chains from fresh x_N,
/// differentiated through every reverse step into the denoiser; one Adam step.
/// Returns the loss before the step.
double policy_update(DiffusionPolicy& policy, nn::AdamState& optimizer, const ActionValueFn& objective,
                     const Matrix& states, std::mt19937_64& rng);

/// Gradient of the policy loss without applying it (exposed for testing).
Vector policy_loss_gradient(const DiffusionPolicy& policy, const ActionValueFn& objective, const Matrix& states,
                            const ChainNoise& noise, double* loss = nullptr);

struct GdmConfig {
  int iterations = 10000;
  int batch_size = 64;
  int buffer_capacity = 100000;
  double policy_lr = 3e-4;
  double critic_lr = 1e-3;
  double tau = 0.005;
  int denoising_steps = 6;
  double beta_start = 1e-4;
  double beta_end = 0.2;
  std::vector<int> denoiser_hidden{128, 128};
  std::vector<int> critic_hidden{128, 128};
  int eval_interval = 500;
  std::uint64_t seed = 0;
  /// Cosine-anneal both learning rates towards lr_floor * lr over the run.
  bool cosine_lr = false;
  double lr_floor = 0.0;
  /// Minibatch for the critic; the policy uses batch_size.
  int critic_batch_size = 256;
};

struct TrainResult {
  DiffusionPolicy policy;
  Critic critic;
  std::vector<protocol::EvalPoint> curve;
};

/// Deterministic evaluation of a diffusion policy on the held-out set.
protocol::EvalPoint evaluate_gdm(const DiffusionPolicy& policy, const env::EnvConfig& config,
                                 const std::vector<env::NetworkState>& states, std::uint64_t eval_seed);

env::Action deterministic_action(const DiffusionPolicy& policy, const env::EnvConfig& config,
                                 const env::NetworkState& state, std::uint64_t eval_seed, std::size_t index);

TrainResult train(const env::EnvConfig& env_config, const GdmConfig& config,
                  const std::vector<env::NetworkState>& eval_states, std::uint64_t eval_seed);

}  // namespace carbonopt::diffusion

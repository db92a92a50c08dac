#include "carbonopt/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace carbonopt::ppo {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2 pi)
constexpr Eigen::Index kStateRows = static_cast<Eigen::Index>(env::kStateDim);
constexpr Eigen::Index kActionRows = static_cast<Eigen::Index>(env::kActionDim);

// log(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u)), stable for large |u|.
double log_one_minus_tanh_sq(double u) {
  const double x = -2.0 * u;
  const double softplus = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  return 2.0 * (std::log(2.0) - u - softplus);
}

Matrix column(const std::array<double, env::kStateDim>& state) {
  Matrix s(kStateRows, 1);
  for (std::size_t i = 0; i < env::kStateDim; ++i) s(static_cast<Eigen::Index>(i), 0) = state[i];
  return s;
}

void check_finite(double value, const char* what) {
  if (!std::isfinite(value)) {
    std::ostringstream msg;
    msg << "PPO training diverged: " << what << " = " << value;
    throw protocol::TrainingDiverged(msg.str());
  }
}

}  // namespace

GaussianPolicy GaussianPolicy::create(const std::vector<int>& hidden, double initial_log_std, std::mt19937_64& rng) {
  std::vector<int> sizes{static_cast<int>(env::kStateDim)};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(static_cast<int>(env::kActionDim));
  GaussianPolicy p{nn::Mlp(sizes, nn::Activation::relu, nn::Activation::tanh, rng),
                   Vector::Constant(kActionRows, initial_log_std)};
  p.clamp_log_std();
  return p;
}

void GaussianPolicy::clamp_log_std() { log_std = log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax); }

double squashed_log_prob(const Vector& mean, const Vector& log_std, const std::array<double, env::kActionDim>& u) {
  double lp = 0.0;
  for (std::size_t d = 0; d < env::kActionDim; ++d) {
    const auto i = static_cast<Eigen::Index>(d);
    const double z = (u[d] - mean(i)) / std::exp(log_std(i));
    lp += -0.5 * z * z - log_std(i) - kHalfLog2Pi - log_one_minus_tanh_sq(u[d]);
  }
  return lp;
}

Sample ppo_sample(const GaussianPolicy& policy, const std::array<double, env::kStateDim>& state,
                  std::mt19937_64& rng) {
  const Vector mean = policy.mean_net.forward_batch(column(state)).col(0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Sample s;
  for (std::size_t d = 0; d < env::kActionDim; ++d) {
    const auto i = static_cast<Eigen::Index>(d);
    s.pre_squash[d] = mean(i) + std::exp(policy.log_std(i)) * normal(rng);
    s.action[d] = std::tanh(s.pre_squash[d]);
  }
  s.log_prob = squashed_log_prob(mean, policy.log_std, s.pre_squash);
  return s;
}

std::array<double, env::kActionDim> deterministic_normalized_action(const GaussianPolicy& policy,
                                                                    const std::array<double, env::kStateDim>& state) {
  const Vector mean = policy.mean_net.forward_batch(column(state)).col(0);
  return {std::tanh(mean(0)), std::tanh(mean(1))};
}

void RolloutBatch::validate() const {
  const Eigen::Index n = size();
  if (n == 0) throw std::invalid_argument("empty rollout batch");
  auto check = [n](Eigen::Index got, const char* what) {
    if (got != n) throw nn::ShapeError(std::string("rollout batch ") + what, static_cast<std::size_t>(n),
                                       static_cast<std::size_t>(got));
  };
  check(states.cols(), "states");
  check(actions.cols(), "actions");
  check(pre_squash.cols(), "pre_squash");
  check(log_probs.size(), "log_probs");
  check(value_estimates.size(), "value_estimates");
  if (states.rows() != kStateRows) {
    throw nn::ShapeError("rollout batch state rows", env::kStateDim, static_cast<std::size_t>(states.rows()));
  }
}

PpoOptimizers PpoOptimizers::create(const GaussianPolicy& policy, const nn::Mlp& value_net, double lr) {
  return {nn::AdamState(policy.mean_net.num_parameters(), lr),
          nn::AdamState(static_cast<std::size_t>(policy.log_std.size()), lr),
          nn::AdamState(value_net.num_parameters(), lr)};
}

double clipped_surrogate(const Vector& ratios, const Vector& advantages, double clip) {
  if (ratios.size() != advantages.size()) {
    throw nn::ShapeError("clipped_surrogate", static_cast<std::size_t>(ratios.size()),
                         static_cast<std::size_t>(advantages.size()));
  }
  if (ratios.size() == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < ratios.size(); ++i) {
    const double unclipped = ratios(i) * advantages(i);
    const double clipped = std::clamp(ratios(i), 1.0 - clip, 1.0 + clip) * advantages(i);
    total += std::min(unclipped, clipped);
  }
  return total / static_cast<double>(ratios.size());
}

namespace {

struct BatchView {
  Matrix states;
  Matrix pre_squash;
  Vector old_log_probs;
  Vector rewards;
  Vector advantages;
};

BatchView gather(const RolloutBatch& b, const Vector& advantages, const std::vector<Eigen::Index>& idx) {
  const auto n = static_cast<Eigen::Index>(idx.size());
  BatchView v{Matrix(kStateRows, n), Matrix(kActionRows, n), Vector(n), Vector(n), Vector(n)};
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Index k = idx[static_cast<std::size_t>(j)];
    v.states.col(j) = b.states.col(k);
    v.pre_squash.col(j) = b.pre_squash.col(k);
    v.old_log_probs(j) = b.log_probs(k);
    v.rewards(j) = b.rewards(k);
    v.advantages(j) = advantages(k);
  }
  return v;
}

Vector log_probs_of(const Matrix& means, const Vector& log_std, const Matrix& pre_squash) {
  Vector lp(means.cols());
  for (Eigen::Index j = 0; j < means.cols(); ++j) {
    lp(j) = squashed_log_prob(means.col(j), log_std, {pre_squash(0, j), pre_squash(1, j)});
  }
  return lp;
}

double gaussian_entropy(const Vector& log_std) {
  return (log_std.array() + 0.5 + kHalfLog2Pi).sum();
}

}  // namespace

PpoLosses ppo_update(GaussianPolicy& policy, nn::Mlp& value_net, PpoOptimizers& opt, const RolloutBatch& batch,
                     const PpoConfig& config, std::mt19937_64& rng) {
  batch.validate();
  if (config.epochs < 1 || config.minibatch_size < 1 || !(config.clip > 0.0)) {
    throw std::invalid_argument("invalid PPO update configuration");
  }
  const Eigen::Index n = batch.size();
  const Vector advantages = batch.rewards - batch.value_estimates;

  PpoLosses losses;
  {
    const Matrix means = policy.mean_net.forward_batch(batch.states);
    const Vector ratios = (log_probs_of(means, policy.log_std, batch.pre_squash) - batch.log_probs).array().exp();
    losses.surrogate = clipped_surrogate(ratios, advantages, config.clip);
    const Matrix values = value_net.forward_batch(batch.states);
    losses.value_loss = (values.row(0).transpose() - batch.rewards).squaredNorm() / static_cast<double>(n);
    losses.entropy = gaussian_entropy(policy.log_std);
    check_finite(losses.surrogate, "surrogate");
    check_finite(losses.value_loss, "value loss");
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < n; start += config.minibatch_size) {
      const Eigen::Index stop = std::min<Eigen::Index>(n, start + config.minibatch_size);
      const BatchView mb = gather(batch, advantages,
                                  std::vector<Eigen::Index>(order.begin() + start, order.begin() + stop));
      const auto m = static_cast<double>(mb.rewards.size());

      nn::ForwardCache cache;
      const Matrix means = policy.mean_net.forward_batch(mb.states, &cache);
      const Vector std_dev = policy.log_std.array().exp();
      const Vector ratios = (log_probs_of(means, policy.log_std, mb.pre_squash) - mb.old_log_probs).array().exp();

      Matrix grad_mean = Matrix::Zero(kActionRows, means.cols());
      Vector grad_log_std = Vector::Constant(kActionRows, -config.entropy_weight);
      for (Eigen::Index j = 0; j < means.cols(); ++j) {
        const double unclipped = ratios(j) * mb.advantages(j);
        const double clipped = std::clamp(ratios(j), 1.0 - config.clip, 1.0 + config.clip) * mb.advantages(j);
        if (unclipped > clipped) continue;  // clipped branch is constant in the parameters
        const double weight = -unclipped / m;  // dLoss/dlogp
        for (Eigen::Index d = 0; d < kActionRows; ++d) {
          const double z = (mb.pre_squash(d, j) - means(d, j)) / std_dev(d);
          grad_mean(d, j) = weight * z / std_dev(d);
          grad_log_std(d) += weight * (z * z - 1.0);
        }
      }
      losses.final_policy_loss =
          -clipped_surrogate(ratios, mb.advantages, config.clip) - config.entropy_weight * gaussian_entropy(policy.log_std);
      check_finite(losses.final_policy_loss, "policy loss");

      nn::adam_step(policy.mean_net, policy.mean_net.backward(cache, grad_mean).parameters, opt.mean);
      nn::adam_step(std::span<double>(policy.log_std.data(), static_cast<std::size_t>(policy.log_std.size())),
                    std::span<const double>(grad_log_std.data(), static_cast<std::size_t>(grad_log_std.size())),
                    opt.log_std);
      policy.clamp_log_std();

      nn::ForwardCache vcache;
      const Matrix values = value_net.forward_batch(mb.states, &vcache);
      const Matrix grad_v = (2.0 / m) * (values.row(0) - mb.rewards.transpose());
      nn::adam_step(value_net, value_net.backward(vcache, grad_v).parameters, opt.value);
      ++losses.gradient_steps;
    }
  }
  return losses;
}

env::Action deterministic_action(const GaussianPolicy& policy, const env::EnvConfig& config,
                                 const env::NetworkState& state) {
  return env::denormalize_action(deterministic_normalized_action(policy, env::normalize_state(state, config)),
                                 config);
}

protocol::EvalPoint evaluate_ppo(const GaussianPolicy& policy, const env::EnvConfig& config,
                                 const std::vector<env::NetworkState>& states) {
  return protocol::evaluate_policy(config, states, [&](const env::NetworkState& s, std::size_t) {
    return deterministic_action(policy, config, s);
  });
}

TrainResult train_ppo(const env::EnvConfig& env_config, const PpoConfig& config,
                      const std::vector<env::NetworkState>& eval_states) {
  if (config.rollouts < 0 || config.rollout_size < 1 || config.eval_interval < 1) {
    throw std::invalid_argument("invalid PPO training configuration");
  }
  std::mt19937_64 rng(config.seed);
  TrainResult result{GaussianPolicy::create(config.hidden, config.initial_log_std, rng), nn::Mlp(), {}};
  {
    std::vector<int> sizes{static_cast<int>(env::kStateDim)};
    sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
    sizes.push_back(1);
    result.value_net = nn::Mlp(sizes, nn::Activation::relu, nn::Activation::identity, rng);
  }
  PpoOptimizers opt = PpoOptimizers::create(result.policy, result.value_net, config.learning_rate);

  std::int64_t env_steps = 0;
  std::int64_t next_eval = config.eval_interval;
  auto record = [&](std::int64_t epoch) {
    protocol::EvalPoint p = evaluate_ppo(result.policy, env_config, eval_states);
    p.epoch = epoch;
    p.env_steps = env_steps;
    check_finite(p.mean_reward, "evaluation reward");
    result.curve.push_back(p);
  };
  record(0);

  const Eigen::Index n = config.rollout_size;
  RolloutBatch batch{Matrix(kStateRows, n), Matrix(kActionRows, n), Matrix(kActionRows, n),
                     Vector(n),             Vector(n),              Vector(n)};
  for (int rollout = 1; rollout <= config.rollouts; ++rollout) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const env::NetworkState s = env::sample_state(env_config, rng);
      const auto unit_state = env::normalize_state(s, env_config);
      const Sample smp = ppo_sample(result.policy, unit_state, rng);
      for (std::size_t i = 0; i < env::kStateDim; ++i) batch.states(static_cast<Eigen::Index>(i), j) = unit_state[i];
      for (std::size_t d = 0; d < env::kActionDim; ++d) {
        batch.actions(static_cast<Eigen::Index>(d), j) = smp.action[d];
        batch.pre_squash(static_cast<Eigen::Index>(d), j) = smp.pre_squash[d];
      }
      batch.log_probs(j) = smp.log_prob;
      batch.rewards(j) = env::evaluate(s, env::denormalize_action(smp.action, env_config), env_config).reward;
    }
    batch.value_estimates = result.value_net.forward_batch(batch.states).row(0).transpose();
    ppo_update(result.policy, result.value_net, opt, batch, config, rng);
    env_steps += n;
    if (env_steps >= next_eval || rollout == config.rollouts) {
      record(rollout);
      while (next_eval <= env_steps) next_eval += config.eval_interval;
    }
  }
  return result;
}

}  // namespace carbonopt::ppo

#include "carbonopt/diffusion.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace carbonopt::diffusion {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw std::invalid_argument("noise schedule needs at least one step");
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    betas[static_cast<std::size_t>(i)] = beta_start + (beta_end - beta_start) * frac;
  }
  return from_betas(std::move(betas));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  if (betas.empty()) throw std::invalid_argument("noise schedule needs at least one step");
  NoiseSchedule s;
  double running = 1.0;
  for (double beta : betas) {
    if (!(beta > 0.0 && beta < 1.0)) throw std::invalid_argument("noise schedule betas must lie in (0, 1)");
    s.alphas.push_back(1.0 - beta);
    running *= 1.0 - beta;
    s.alpha_bars.push_back(running);
  }
  s.betas = std::move(betas);
  return s;
}

DiffusionPolicy DiffusionPolicy::create(const std::vector<int>& hidden, NoiseSchedule schedule,
                                        std::mt19937_64& rng, nn::Activation activation) {
  std::vector<int> sizes{kDenoiserInput};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(static_cast<int>(env::kActionDim));
  return {nn::Mlp(sizes, activation, nn::Activation::identity, rng), std::move(schedule)};
}

ChainNoise draw_chain_noise(const NoiseSchedule& schedule, Eigen::Index batch, std::mt19937_64& rng,
                            bool deterministic) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto dim = static_cast<Eigen::Index>(env::kActionDim);
  ChainNoise noise;
  noise.initial.resize(dim, batch);
  for (Eigen::Index j = 0; j < batch; ++j) {
    for (Eigen::Index i = 0; i < dim; ++i) noise.initial(i, j) = normal(rng);
  }
  const int steps = schedule.steps();
  noise.step_noise.assign(static_cast<std::size_t>(steps), Matrix::Zero(dim, batch));
  if (!deterministic) {
    for (int t = steps; t >= 2; --t) {
      Matrix& z = noise.step_noise[static_cast<std::size_t>(t - 1)];
      for (Eigen::Index j = 0; j < batch; ++j) {
        for (Eigen::Index i = 0; i < dim; ++i) z(i, j) = normal(rng);
      }
    }
  }
  return noise;
}

namespace {

constexpr Eigen::Index kStateRows = static_cast<Eigen::Index>(env::kStateDim);
constexpr Eigen::Index kActionRows = static_cast<Eigen::Index>(env::kActionDim);

struct StepCoefficients {
  double inv_sqrt_alpha;
  double eps_scale;  // beta_t / sqrt(1 - alpha_bar_t)
  double sigma;
};

StepCoefficients coefficients(const NoiseSchedule& s, int t) {
  const auto i = static_cast<std::size_t>(t - 1);
  return {1.0 / std::sqrt(s.alphas[i]), s.betas[i] / std::sqrt(1.0 - s.alpha_bars[i]), std::sqrt(s.betas[i])};
}

}  // namespace

Matrix run_chain(const DiffusionPolicy& policy, const Matrix& states, const ChainNoise& noise, ChainTrace* trace) {
  const int steps = policy.schedule.steps();
  if (states.rows() != kStateRows) {
    throw nn::ShapeError("run_chain states", env::kStateDim, static_cast<std::size_t>(states.rows()));
  }
  if (noise.initial.rows() != kActionRows || noise.initial.cols() != states.cols()) {
    throw nn::ShapeError("run_chain initial noise", static_cast<std::size_t>(states.cols()),
                         static_cast<std::size_t>(noise.initial.cols()));
  }
  if (noise.step_noise.size() != static_cast<std::size_t>(steps)) {
    throw nn::ShapeError("run_chain step noise", static_cast<std::size_t>(steps), noise.step_noise.size());
  }
  if (trace) trace->caches.assign(static_cast<std::size_t>(steps), {});

  const Eigen::Index batch = states.cols();
  Matrix input(kDenoiserInput, batch);
  input.topRows(kStateRows) = states;
  Matrix x = noise.initial;
  for (int t = steps; t >= 1; --t) {
    input.middleRows(kStateRows, kActionRows) = x;
    input.row(kDenoiserInput - 1).setConstant(static_cast<double>(t) / steps);
    const Matrix eps =
        policy.denoiser.forward_batch(input, trace ? &trace->caches[static_cast<std::size_t>(t - 1)] : nullptr);
    const StepCoefficients c = coefficients(policy.schedule, t);
    x = (x - c.eps_scale * eps) * c.inv_sqrt_alpha;
    if (t > 1) x += c.sigma * noise.step_noise[static_cast<std::size_t>(t - 1)];
  }
  return x;
}

ChainGradients chain_backward(const DiffusionPolicy& policy, const ChainTrace& trace, const Matrix& grad_x0) {
  const int steps = policy.schedule.steps();
  if (trace.caches.size() != static_cast<std::size_t>(steps)) {
    throw nn::ShapeError("chain_backward trace", static_cast<std::size_t>(steps), trace.caches.size());
  }
  ChainGradients out;
  out.parameters = Vector::Zero(static_cast<Eigen::Index>(policy.denoiser.num_parameters()));
  Matrix g = grad_x0;  // dLoss/dx_{t-1}
  for (int t = 1; t <= steps; ++t) {
    const StepCoefficients c = coefficients(policy.schedule, t);
    const Matrix grad_eps = (-c.eps_scale * c.inv_sqrt_alpha) * g;
    const auto grads = policy.denoiser.backward(trace.caches[static_cast<std::size_t>(t - 1)], grad_eps);
    out.parameters += grads.parameters;
    g = c.inv_sqrt_alpha * g + grads.inputs.middleRows(kStateRows, kActionRows);
  }
  out.initial = std::move(g);
  return out;
}

std::array<double, env::kActionDim> sample_normalized_action(const DiffusionPolicy& policy,
                                                             const std::array<double, env::kStateDim>& state,
                                                             std::mt19937_64& rng, bool deterministic) {
  Matrix s(kStateRows, 1);
  for (std::size_t i = 0; i < env::kStateDim; ++i) s(static_cast<Eigen::Index>(i), 0) = state[i];
  const ChainNoise noise = draw_chain_noise(policy.schedule, 1, rng, deterministic);
  const Matrix x0 = run_chain(policy, s, noise);
  return {std::tanh(x0(0, 0)), std::tanh(x0(1, 0))};
}

env::Action sample_action(const DiffusionPolicy& policy, const env::NetworkState& state,
                          const env::EnvConfig& config, std::mt19937_64& rng, bool deterministic) {
  const auto unit = sample_normalized_action(policy, env::normalize_state(state, config), rng, deterministic);
  return env::denormalize_action(unit, config);
}

Critic Critic::create(const std::vector<int>& hidden, double learning_rate, double tau, std::mt19937_64& rng) {
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("critic tau must lie in (0, 1]");
  std::vector<int> sizes{kCriticInput};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  Critic c;
  c.q1 = nn::Mlp(sizes, nn::Activation::relu, nn::Activation::identity, rng);
  c.q2 = nn::Mlp(sizes, nn::Activation::relu, nn::Activation::identity, rng);
  c.target_q1 = c.q1;
  c.target_q2 = c.q2;
  c.optimizer1 = nn::AdamState(c.q1.num_parameters(), learning_rate);
  c.optimizer2 = nn::AdamState(c.q2.num_parameters(), learning_rate);
  c.tau = tau;
  return c;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay buffer capacity must be positive");
}

void ReplayBuffer::push(const Transition& t) {
  if (items_.size() == capacity_) items_.pop_front();
  items_.push_back(t);
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t batch, std::mt19937_64& rng) const {
  if (items_.empty()) throw std::logic_error("cannot sample from an empty replay buffer");
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<std::size_t> idx(batch);
  for (auto& i : idx) i = pick(rng);
  return idx;
}

namespace {

Matrix critic_input(const Matrix& states, const Matrix& actions) {
  Matrix input(kCriticInput, states.cols());
  input.topRows(kStateRows) = states;
  input.bottomRows(kActionRows) = actions;
  return input;
}

double regress(nn::Mlp& q, nn::AdamState& opt, const Matrix& input, const Vector& rewards) {
  nn::ForwardCache cache;
  const Matrix values = q.forward_batch(input, &cache);
  const Eigen::RowVectorXd diff = values.row(0) - rewards.transpose();
  const double n = static_cast<double>(rewards.size());
  const double loss = diff.squaredNorm() / n;
  const Matrix grad = (2.0 / n) * diff;
  nn::adam_step(q, q.backward(cache, grad).parameters, opt);
  return loss;
}

}  // namespace

double critic_update(Critic& critic, const Matrix& states, const Matrix& actions, const Vector& rewards) {
  if (rewards.size() == 0) throw std::invalid_argument("critic_update: empty batch");
  if (states.cols() != rewards.size() || actions.cols() != rewards.size()) {
    throw nn::ShapeError("critic_update batch", static_cast<std::size_t>(rewards.size()),
                         static_cast<std::size_t>(states.cols()));
  }
  const Matrix input = critic_input(states, actions);
  const double l1 = regress(critic.q1, critic.optimizer1, input, rewards);
  const double l2 = regress(critic.q2, critic.optimizer2, input, rewards);
  nn::soft_update(critic.target_q1, critic.q1, critic.tau);
  nn::soft_update(critic.target_q2, critic.q2, critic.tau);
  return 0.5 * (l1 + l2);
}

ActionValueFn q1_objective(const Critic& critic) {
  return [&critic](const Matrix& states, const Matrix& actions) {
    nn::ForwardCache cache;
    const Matrix values = critic.q1.forward_batch(critic_input(states, actions), &cache);
    const auto grads = critic.q1.backward(cache, Matrix::Ones(1, states.cols()));
    return ActionValue{values.row(0), grads.inputs.bottomRows(kActionRows)};
  };
}

Vector policy_loss_gradient(const DiffusionPolicy& policy, const ActionValueFn& objective, const Matrix& states,
                            const ChainNoise& noise, double* loss) {
  ChainTrace trace;
  const Matrix x0 = run_chain(policy, states, noise, &trace);
  const Matrix actions = x0.array().tanh().matrix();
  const ActionValue av = objective(states, actions);
  const double n = static_cast<double>(states.cols());
  if (loss) *loss = -av.values.sum() / n;
  const Matrix grad_actions = av.action_grads * (-1.0 / n);
  const Matrix grad_x0 = grad_actions.cwiseProduct((1.0 - actions.array().square()).matrix());
  return chain_backward(policy, trace, grad_x0).parameters;
}

double policy_update(DiffusionPolicy& policy, nn::AdamState& optimizer, const ActionValueFn& objective,
                     const Matrix& states, std::mt19937_64& rng) {
  const ChainNoise noise = draw_chain_noise(policy.schedule, states.cols(), rng, true);
  double loss = 0.0;
  const Vector grads = policy_loss_gradient(policy, objective, states, noise, &loss);
  nn::adam_step(policy.denoiser, grads, optimizer);
  return loss;
}

env::Action deterministic_action(const DiffusionPolicy& policy, const env::EnvConfig& config,
                                 const env::NetworkState& state, std::uint64_t eval_seed, std::size_t index) {
  auto rng = protocol::eval_rng(eval_seed, index);
  return sample_action(policy, state, config, rng, true);
}

protocol::EvalPoint evaluate_gdm(const DiffusionPolicy& policy, const env::EnvConfig& config,
                                 const std::vector<env::NetworkState>& states, std::uint64_t eval_seed) {
  return protocol::evaluate_policy(config, states, [&](const env::NetworkState& s, std::size_t i) {
    return deterministic_action(policy, config, s, eval_seed, i);
  });
}

namespace {

void check_finite(double value, const char* what, int iteration) {
  if (!std::isfinite(value)) {
    std::ostringstream msg;
    msg << "GDM training diverged: " << what << " = " << value << " at iteration " << iteration;
    throw protocol::TrainingDiverged(msg.str());
  }
}

}  // namespace

TrainResult train(const env::EnvConfig& env_config, const GdmConfig& config,
                  const std::vector<env::NetworkState>& eval_states, std::uint64_t eval_seed) {
  if (config.iterations < 0 || config.batch_size < 1 || config.buffer_capacity < 1 || config.eval_interval < 1) {
    throw std::invalid_argument("invalid GDM training configuration");
  }
  std::mt19937_64 rng(config.seed);
  TrainResult result{
      DiffusionPolicy::create(config.denoiser_hidden,
                              NoiseSchedule::linear(config.denoising_steps, config.beta_start, config.beta_end), rng),
      Critic::create(config.critic_hidden, config.critic_lr, config.tau, rng),
      {}};
  nn::AdamState policy_opt(result.policy.denoiser.num_parameters(), config.policy_lr);
  ReplayBuffer buffer(static_cast<std::size_t>(config.buffer_capacity));

  auto record = [&](int iteration) {
    protocol::EvalPoint p = evaluate_gdm(result.policy, env_config, eval_states, eval_seed);
    p.epoch = iteration;
    p.env_steps = iteration;
    check_finite(p.mean_reward, "evaluation reward", iteration);
    result.curve.push_back(p);
  };
  record(0);

  const auto batch = static_cast<std::size_t>(std::max(config.batch_size, config.critic_batch_size));
  const auto policy_batch = static_cast<Eigen::Index>(config.batch_size);
  const auto critic_batch = static_cast<Eigen::Index>(config.critic_batch_size);
  Matrix states(kStateRows, static_cast<Eigen::Index>(batch));
  Matrix actions(kActionRows, static_cast<Eigen::Index>(batch));
  Vector rewards(static_cast<Eigen::Index>(batch));
  const ActionValueFn objective = q1_objective(result.critic);

  for (int it = 1; it <= config.iterations; ++it) {
    const env::NetworkState s = env::sample_state(env_config, rng);
    Transition tr;
    tr.state = env::normalize_state(s, env_config);
    tr.action = sample_normalized_action(result.policy, tr.state, rng, false);
    tr.reward = env::evaluate(s, env::denormalize_action(tr.action, env_config), env_config).reward;
    buffer.push(tr);

    if (buffer.size() >= batch) {
      const auto idx = buffer.sample_indices(batch, rng);
      for (std::size_t j = 0; j < batch; ++j) {
        const Transition& t = buffer.at(idx[j]);
        const auto col = static_cast<Eigen::Index>(j);
        for (std::size_t i = 0; i < env::kStateDim; ++i) states(static_cast<Eigen::Index>(i), col) = t.state[i];
        for (std::size_t i = 0; i < env::kActionDim; ++i) actions(static_cast<Eigen::Index>(i), col) = t.action[i];
        rewards(col) = t.reward;
      }
      if (config.cosine_lr) {
        const double progress = static_cast<double>(it - 1) / std::max(1, config.iterations - 1);
        const double factor =
            config.lr_floor + (1.0 - config.lr_floor) * 0.5 * (1.0 + std::cos(3.141592653589793 * progress));
        policy_opt.learning_rate = config.policy_lr * factor;
        result.critic.optimizer1.learning_rate = config.critic_lr * factor;
        result.critic.optimizer2.learning_rate = config.critic_lr * factor;
      }
      check_finite(critic_update(result.critic, states.leftCols(critic_batch), actions.leftCols(critic_batch),
                                 rewards.head(critic_batch)),
                   "critic loss", it);
      check_finite(policy_update(result.policy, policy_opt, objective, states.leftCols(policy_batch), rng),
                   "policy loss", it);
    }
    if (it % config.eval_interval == 0 || it == config.iterations) record(it);
  }
  return result;
}

}  // namespace carbonopt::diffusion

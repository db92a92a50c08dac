#include "carbonopt/protocol.hpp"

#include "carbonopt/hash.hpp"

namespace carbonopt::protocol {

std::vector<env::NetworkState> make_eval_states(const env::EnvConfig& config, std::uint64_t eval_seed,
                                                int count) {
  if (count < 1) throw std::invalid_argument("make_eval_states: count must be positive");
  std::mt19937_64 rng(eval_seed);
  std::vector<env::NetworkState> states;
  states.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) states.push_back(env::sample_state(config, rng));
  return states;
}

std::string eval_set_hash(const std::vector<env::NetworkState>& states) {
  Fnv1a h;
  h.update(static_cast<std::uint64_t>(states.size()));
  for (const auto& s : states) {
    h.update(s.channel_gain)
        .update(s.renewable_fraction)
        .update(s.grid_intensity)
        .update(s.data_bits)
        .update(s.edge_cycles)
        .update(s.user_cycles);
  }
  return h.hex();
}

std::mt19937_64 eval_rng(std::uint64_t eval_seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(eval_seed), static_cast<std::uint32_t>(eval_seed >> 32),
                    static_cast<std::uint32_t>(index), 0x65766121u};
  return std::mt19937_64(seq);
}

EvalPoint evaluate_policy(const env::EnvConfig& config, const std::vector<env::NetworkState>& states,
                          const DeterministicPolicy& policy) {
  EvalPoint point;
  if (states.empty()) return point;
  double reward = 0.0;
  double carbon = 0.0;
  for (std::size_t i = 0; i < states.size(); ++i) {
    const env::Outcome o = env::evaluate(states[i], policy(states[i], i), config);
    reward += o.reward;
    carbon += o.carbon_g;
  }
  point.mean_reward = reward / static_cast<double>(states.size());
  point.mean_carbon_g = carbon / static_cast<double>(states.size());
  return point;
}

}  // namespace carbonopt::protocol

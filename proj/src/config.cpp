#include "carbonopt/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>

#include "carbonopt/hash.hpp"

namespace carbonopt::config {

using nlohmann::json;

namespace {

std::string join_errors(const std::vector<std::string>& errors) {
  std::string out = "invalid configuration:";
  for (const auto& e : errors) out += "\n  - " + e;
  return out;
}

struct Field {
  std::string key;
  std::function<json(const ExperimentConfig&)> get;
  // Returns an error message when the value has the wrong type.
  std::function<std::optional<std::string>(ExperimentConfig&, const json&)> set;
};

template <class T>
std::optional<std::string> convert(const json& v, T& out) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) return "must be true or false";
    out = v.get<bool>();
  } else if constexpr (std::is_same_v<T, int>) {
    if (!v.is_number_integer()) return "must be an integer";
    const auto x = v.get<long long>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) return "is out of range";
    out = static_cast<int>(x);
  } else if constexpr (std::is_same_v<T, std::uint64_t>) {
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
      return "must be a non-negative integer";
    }
    out = v.get<std::uint64_t>();
  } else if constexpr (std::is_same_v<T, double>) {
    if (!v.is_number()) return "must be a number";
    out = v.get<double>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) return "must be a string";
    out = v.get<std::string>();
  } else if constexpr (std::is_same_v<T, std::vector<int>>) {
    if (!v.is_array()) return "must be an array of integers";
    std::vector<int> xs;
    for (const auto& e : v) {
      if (!e.is_number_integer()) return "must be an array of integers";
      xs.push_back(e.get<int>());
    }
    out = std::move(xs);
  }
  return std::nullopt;
}

template <class T, class Access>
Field field(std::string key, Access access) {
  return {std::move(key),
          [access](const ExperimentConfig& c) { return json(access(const_cast<ExperimentConfig&>(c))); },
          [access](ExperimentConfig& c, const json& v) { return convert<T>(v, access(c)); }};
}

#define CARBONOPT_FIELD(T, key, expr) field<T>(key, [](ExperimentConfig& c) -> T& { return expr; })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f{
        CARBONOPT_FIELD(std::string, "algorithm", c.algorithm),
        CARBONOPT_FIELD(std::uint64_t, "train_seed", c.train_seed),
        CARBONOPT_FIELD(std::uint64_t, "eval_seed", c.eval_seed),
        CARBONOPT_FIELD(int, "eval_states", c.eval_states),
        CARBONOPT_FIELD(std::string, "output_dir", c.output_dir),
        CARBONOPT_FIELD(std::uint64_t, "calibration_seed", c.calibration_seed),
        CARBONOPT_FIELD(int, "calibration_samples", c.calibration_samples),
        CARBONOPT_FIELD(int, "oracle_bandwidth_points", c.oracle_bandwidth_points),
        CARBONOPT_FIELD(int, "oracle_power_points", c.oracle_power_points),
    };
    for (const auto& key : env::env_config_keys()) {
      f.push_back({key, [key](const ExperimentConfig& c) { return env::to_json(c.env).at(key); },
                   [key](ExperimentConfig& c, const json& v) -> std::optional<std::string> {
                     if (!v.is_number()) return "must be a number";
                     c.env = env::env_config_from_json(json{{key, v}}, c.env);
                     return std::nullopt;
                   }});
    }
    std::vector<Field> rest{
        CARBONOPT_FIELD(int, "gdm_iterations", c.gdm.iterations),
        CARBONOPT_FIELD(int, "gdm_batch_size", c.gdm.batch_size),
        CARBONOPT_FIELD(int, "gdm_critic_batch_size", c.gdm.critic_batch_size),
        CARBONOPT_FIELD(int, "gdm_buffer_capacity", c.gdm.buffer_capacity),
        CARBONOPT_FIELD(double, "gdm_policy_lr", c.gdm.policy_lr),
        CARBONOPT_FIELD(double, "gdm_critic_lr", c.gdm.critic_lr),
        CARBONOPT_FIELD(double, "gdm_tau", c.gdm.tau),
        CARBONOPT_FIELD(int, "gdm_denoising_steps", c.gdm.denoising_steps),
        CARBONOPT_FIELD(double, "gdm_beta_start", c.gdm.beta_start),
        CARBONOPT_FIELD(double, "gdm_beta_end", c.gdm.beta_end),
        CARBONOPT_FIELD(std::vector<int>, "gdm_denoiser_hidden", c.gdm.denoiser_hidden),
        CARBONOPT_FIELD(std::vector<int>, "gdm_critic_hidden", c.gdm.critic_hidden),
        CARBONOPT_FIELD(int, "gdm_eval_interval", c.gdm.eval_interval),
        CARBONOPT_FIELD(bool, "gdm_cosine_lr", c.gdm.cosine_lr),
        CARBONOPT_FIELD(double, "gdm_lr_floor", c.gdm.lr_floor),

        CARBONOPT_FIELD(int, "ppo_rollouts", c.ppo.rollouts),
        CARBONOPT_FIELD(int, "ppo_rollout_size", c.ppo.rollout_size),
        CARBONOPT_FIELD(int, "ppo_epochs", c.ppo.epochs),
        CARBONOPT_FIELD(int, "ppo_minibatch_size", c.ppo.minibatch_size),
        CARBONOPT_FIELD(double, "ppo_clip", c.ppo.clip),
        CARBONOPT_FIELD(double, "ppo_entropy_weight", c.ppo.entropy_weight),
        CARBONOPT_FIELD(double, "ppo_learning_rate", c.ppo.learning_rate),
        CARBONOPT_FIELD(double, "ppo_initial_log_std", c.ppo.initial_log_std),
        CARBONOPT_FIELD(std::vector<int>, "ppo_hidden", c.ppo.hidden),
        CARBONOPT_FIELD(int, "ppo_eval_interval", c.ppo.eval_interval),

        CARBONOPT_FIELD(double, "device_power_watts", c.device_power_watts),
        CARBONOPT_FIELD(double, "carbon_intensity_g_per_kwh", c.carbon_intensity_g_per_kwh),

        CARBONOPT_FIELD(std::string, "rag_corpus_dir", c.rag.corpus_dir),
        CARBONOPT_FIELD(std::string, "rag_index_path", c.rag.index_path),
        CARBONOPT_FIELD(std::string, "rag_memory_path", c.rag.memory_path),
        CARBONOPT_FIELD(std::string, "rag_preamble_path", c.rag.preamble_path),
        CARBONOPT_FIELD(int, "rag_chunk_size", c.rag.chunk_size),
        CARBONOPT_FIELD(int, "rag_chunk_overlap", c.rag.chunk_overlap),
        CARBONOPT_FIELD(int, "rag_top_k", c.rag.top_k),
        CARBONOPT_FIELD(int, "rag_memory_recall", c.rag.memory_recall),
        CARBONOPT_FIELD(int, "rag_token_budget", c.rag.token_budget),

        CARBONOPT_FIELD(std::string, "llm_backend", c.llm.backend),
        CARBONOPT_FIELD(std::string, "llm_endpoint_url", c.llm.endpoint_url),
        CARBONOPT_FIELD(std::string, "llm_api_key_env_var", c.llm.api_key_env_var),
        CARBONOPT_FIELD(double, "llm_timeout_seconds", c.llm.timeout_seconds),
        CARBONOPT_FIELD(int, "llm_max_retries", c.llm.max_retries),
        CARBONOPT_FIELD(double, "llm_backoff_base_seconds", c.llm.backoff_base_seconds),
        CARBONOPT_FIELD(std::string, "llm_model", c.llm_model),
        CARBONOPT_FIELD(double, "llm_temperature", c.llm_temperature),
        CARBONOPT_FIELD(int, "llm_max_tokens", c.llm_max_tokens),
        CARBONOPT_FIELD(std::string, "llm_fixtures_dir", c.llm_fixtures_dir),
    };
    f.insert(f.end(), std::make_move_iterator(rest.begin()), std::make_move_iterator(rest.end()));
    return f;
  }();
  return table;
}

#undef CARBONOPT_FIELD

const Field* find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

void check_hidden(const char* key, const std::vector<int>& sizes, std::vector<std::string>& errors) {
  if (sizes.empty()) errors.push_back(std::string(key) + " must list at least one layer width");
  for (int s : sizes) {
    if (s < 1) {
      errors.push_back(std::string(key) + " widths must be positive");
      break;
    }
  }
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> errors)
    : std::runtime_error(join_errors(errors)), errors_(std::move(errors)) {}

json to_json(const ExperimentConfig& config) {
  json j = json::object();
  for (const auto& f : fields()) j[f.key] = f.get(config);
  return j;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

ExperimentConfig from_json(const json& j, const ExperimentConfig& base) {
  if (!j.is_object()) throw ConfigError({"configuration must be a JSON object"});
  ExperimentConfig c = base;
  std::vector<std::string> errors;
  for (const auto& [key, value] : j.items()) {
    const Field* f = find_field(key);
    if (f == nullptr) {
      errors.push_back("unknown key '" + key + "'");
      continue;
    }
    if (auto err = f->set(c, value)) errors.push_back(key + " " + *err);
  }
  const auto semantic = validate(c);
  errors.insert(errors.end(), semantic.begin(), semantic.end());
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return c;
}

std::vector<std::string> validate(const ExperimentConfig& c) {
  std::vector<std::string> e;
  auto require = [&](bool ok, const std::string& message) {
    if (!ok) e.push_back(message);
  };

  require(c.algorithm == "gdm" || c.algorithm == "ppo" || c.algorithm == "oracle",
          "algorithm must be gdm, ppo or oracle (got '" + c.algorithm + "')");
  require(c.eval_states >= 1, "eval_states must be at least 1");
  require(!c.output_dir.empty(), "output_dir must not be empty");
  require(c.calibration_samples >= 1, "calibration_samples must be at least 1");
  require(c.oracle_bandwidth_points >= 2, "oracle_bandwidth_points must be at least 2");
  require(c.oracle_power_points >= 2, "oracle_power_points must be at least 2");

  env::EnvConfig env = c.env;
  if (env.reward_scale <= 0.0) env.reward_scale = 1.0;  // auto-calibrated later
  for (const auto& msg : env.validate()) e.push_back(msg);

  const auto& g = c.gdm;
  require(g.iterations >= 0, "gdm_iterations must be non-negative");
  require(g.batch_size >= 1, "gdm_batch_size must be at least 1");
  require(g.critic_batch_size >= 1, "gdm_critic_batch_size must be at least 1");
  require(g.buffer_capacity >= 1, "gdm_buffer_capacity must be at least 1");
  require(g.policy_lr > 0.0 && std::isfinite(g.policy_lr), "gdm_policy_lr must be positive");
  require(g.critic_lr > 0.0 && std::isfinite(g.critic_lr), "gdm_critic_lr must be positive");
  require(g.tau > 0.0 && g.tau <= 1.0, "gdm_tau must lie in (0, 1]");
  require(g.denoising_steps >= 1, "gdm_denoising_steps must be at least 1");
  require(g.beta_start > 0.0 && g.beta_start <= g.beta_end && g.beta_end < 1.0,
          "gdm betas must satisfy 0 < gdm_beta_start <= gdm_beta_end < 1");
  check_hidden("gdm_denoiser_hidden", g.denoiser_hidden, e);
  check_hidden("gdm_critic_hidden", g.critic_hidden, e);
  require(g.eval_interval >= 1, "gdm_eval_interval must be at least 1");
  require(g.lr_floor >= 0.0 && g.lr_floor <= 1.0, "gdm_lr_floor must lie in [0, 1]");

  const auto& p = c.ppo;
  require(p.rollouts >= 0, "ppo_rollouts must be non-negative");
  require(p.rollout_size >= 1, "ppo_rollout_size must be at least 1");
  require(p.epochs >= 1, "ppo_epochs must be at least 1");
  require(p.minibatch_size >= 1, "ppo_minibatch_size must be at least 1");
  require(p.clip > 0.0, "ppo_clip must be positive");
  require(p.entropy_weight >= 0.0, "ppo_entropy_weight must be non-negative");
  require(p.learning_rate > 0.0 && std::isfinite(p.learning_rate), "ppo_learning_rate must be positive");
  require(p.initial_log_std >= ppo::kLogStdMin && p.initial_log_std <= ppo::kLogStdMax,
          "ppo_initial_log_std must lie in [-5, 1]");
  check_hidden("ppo_hidden", p.hidden, e);
  require(p.eval_interval >= 1, "ppo_eval_interval must be at least 1");

  require(c.device_power_watts > 0.0 && std::isfinite(c.device_power_watts), "device_power_watts must be positive");
  require(c.carbon_intensity_g_per_kwh >= 0.0 && std::isfinite(c.carbon_intensity_g_per_kwh),
          "carbon_intensity_g_per_kwh must be non-negative");

  require(c.rag.chunk_size >= 1, "rag_chunk_size must be at least 1");
  require(c.rag.chunk_overlap >= 0 && c.rag.chunk_overlap < c.rag.chunk_size,
          "rag_chunk_overlap must lie in [0, rag_chunk_size)");
  require(c.rag.top_k >= 1, "rag_top_k must be at least 1");
  require(c.rag.memory_recall >= 0, "rag_memory_recall must be non-negative");
  require(c.rag.token_budget >= 1, "rag_token_budget must be at least 1");

  for (const auto& msg : llm::validate(c.llm)) e.push_back("llm: " + msg);
  require(!c.llm_model.empty(), "llm_model must not be empty");
  require(c.llm_temperature >= 0.0, "llm_temperature must be non-negative");
  require(c.llm_max_tokens >= 1, "llm_max_tokens must be at least 1");
  return e;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot read config file " + path});
  try {
    return json::parse(in);
  } catch (const json::exception& ex) {
    throw ConfigError({"config file " + path + " is not valid JSON: " + ex.what()});
  }
}

json parse_flag_value(const std::string& key, const std::string& text) {
  const Field* f = find_field(key);
  if (f == nullptr) throw ConfigError({"unknown key '" + key + "'"});
  if (f->get(ExperimentConfig{}).is_string()) return text;
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    throw ConfigError({"--" + key + ": cannot parse '" + text + "'"});
  }
}

std::string config_hash(const ExperimentConfig& config) { return fnv1a_hex(to_json(config).dump()); }

}  // namespace carbonopt::config

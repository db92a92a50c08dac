#pragma once

// Experiment configuration as one flat JSON object. Built-in defaults are
// overridden by a config file, which is overridden by command-line flags.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "carbonopt/diffusion.hpp"
#include "carbonopt/env.hpp"
#include "carbonopt/llm.hpp"
#include "carbonopt/ppo.hpp"
#include "carbonopt/telemetry.hpp"

namespace carbonopt::config {

/// Carries every problem found, not just the first.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> errors);
  const std::vector<std::string>& errors() const { return errors_; }

 private:
  std::vector<std::string> errors_;
};

struct RagSettings {
  std::string corpus_dir = "data/corpus";
  std::string index_path;   // empty: rebuild from the corpus every time
  std::string memory_path;  // empty: <output_dir>/memory.jsonl
  std::string preamble_path;  // empty: built-in preamble
  int chunk_size = 1000;
  int chunk_overlap = 200;
  int top_k = 4;
  int memory_recall = 2;
  int token_budget = 4000;
};

struct ExperimentConfig {
  std::string algorithm = "gdm";  // gdm | ppo | oracle
  std::uint64_t train_seed = 0;
  std::uint64_t eval_seed = 7;
  int eval_states = 64;
  std::string output_dir = "runs/default";

  env::EnvConfig env = default_env();
  std::uint64_t calibration_seed = 12345;
  int calibration_samples = 256;
  int oracle_bandwidth_points = 101;
  int oracle_power_points = 101;

  diffusion::GdmConfig gdm;
  ppo::PpoConfig ppo;

  double device_power_watts = 45.0;
  double carbon_intensity_g_per_kwh = telemetry::kDefaultCarbonIntensity;

  RagSettings rag;
  llm::ClientConfig llm;
  std::string llm_model = "gpt-4";
  double llm_temperature = 0.0;
  int llm_max_tokens = 1024;
  std::string llm_fixtures_dir = "data/fixtures";

  /// reward_scale <= 0 requests calibration from the oracle.
  static env::EnvConfig default_env() {
    env::EnvConfig e;
    e.reward_scale = 0.0;
    return e;
  }

  env::GridSize oracle_grid() const { return {oracle_bandwidth_points, oracle_power_points}; }
};

nlohmann::json to_json(const ExperimentConfig& config);

/// Every key, in the order flags are listed.
std::vector<std::string> config_keys();

/// Starts from `base`; rejects unknown keys and wrongly typed values, and then
/// runs validate(). All problems are reported together.
ExperimentConfig from_json(const nlohmann::json& j, const ExperimentConfig& base = {});

/// Semantic checks; empty when valid.
std::vector<std::string> validate(const ExperimentConfig& config);

/// Reads a flat JSON object from disk.
nlohmann::json read_json_file(const std::string& path);

/// Parses a command-line string into the JSON type the key expects.
nlohmann::json parse_flag_value(const std::string& key, const std::string& text);

/// FNV-1a of the canonical serialization.
std::string config_hash(const ExperimentConfig& config);

}  // namespace carbonopt::config

#pragma once

// Config-driven runs: train or evaluate an optimizer, compare it with the grid
// oracle on the held-out states, and write reward curves, strategy tables,
// checkpoints and a manifest. Also hosts the end-to-end RAG workflow.

#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "carbonopt/config.hpp"
#include "carbonopt/env.hpp"
#include "carbonopt/llm.hpp"
#include "carbonopt/protocol.hpp"
#include "carbonopt/rag.hpp"
#include "carbonopt/telemetry.hpp"

namespace carbonopt::experiment {

/// `git describe` of the source tree at build time.
std::string version_string();

// --- CSV ---------------------------------------------------------------------

/// Shortest form that still round-trips (printf "%.17g").
std::string format_double(double v);

extern const std::vector<std::string> kCurveColumns;
extern const std::vector<std::string> kStrategyColumns;
extern const std::vector<std::string> kReportColumns;

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

void write_csv(const std::filesystem::path& path, const CsvTable& table);
/// Plain comma-separated values without quoting, as written by write_csv.
CsvTable read_csv(const std::filesystem::path& path);

// --- strategy tables -----------------------------------------------------------

struct StrategyRow {
  std::size_t index = 0;
  env::NetworkState state;
  env::Action chosen;
  env::Outcome outcome;
  env::Action oracle;
  env::Outcome oracle_outcome;
};

std::vector<StrategyRow> strategy_table(const env::EnvConfig& env, const std::vector<env::NetworkState>& states,
                                        const protocol::DeterministicPolicy& policy, env::GridSize grid);

CsvTable curve_csv(const std::vector<protocol::EvalPoint>& curve);
CsvTable strategy_csv(const std::vector<StrategyRow>& rows);

/// |carbon - oracle carbon| <= tolerance * oracle carbon
bool carbon_within(const StrategyRow& row, double tolerance);

// --- runs ----------------------------------------------------------------------

/// Exclusive use of an output directory for the lifetime of the object. A
/// lock left behind by a dead process is taken over.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

  static std::filesystem::path lock_path(const std::filesystem::path& dir);

 private:
  std::filesystem::path path_;
};

class LockError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The configured reward_scale, or the oracle calibration when it is <= 0.
env::EnvConfig resolved_env(const config::ExperimentConfig& config);

struct RunOptions {
  std::ostream* log = nullptr;
};

struct RunSummary {
  std::string algorithm;
  std::string config_hash;
  std::string eval_set_hash;
  double reward_scale = 0.0;
  std::vector<protocol::EvalPoint> curve;
  protocol::EvalPoint final_point;
  double oracle_mean_reward = 0.0;
  double oracle_mean_carbon_g = 0.0;
  double table_mean_carbon_g = 0.0;
  int states_within_5pct = 0;
  int eval_states = 0;
  /// (oracle - final) / |oracle| * 100; positive means worse than the oracle.
  double gap_to_oracle_pct = 0.0;
  double wall_seconds = 0.0;
  double energy_joules = 0.0;
  telemetry::EmissionEstimate emissions;
  std::filesystem::path curve_csv;
  std::filesystem::path strategy_csv;
  std::filesystem::path manifest;
  std::filesystem::path checkpoint;
};

/// Trains config.algorithm (or runs the oracle), then writes
/// reward_curve_<alg>.csv, strategy_table_<alg>.csv, checkpoint_<alg>.json and
/// manifest_<alg>.json into config.output_dir.
RunSummary run_experiment(const config::ExperimentConfig& config, const RunOptions& options = {});

struct EvalSummary {
  std::string algorithm;
  protocol::EvalPoint point;
  double oracle_mean_reward = 0.0;
  int states_within_5pct = 0;
  int eval_states = 0;
  std::filesystem::path strategy_csv;
  std::filesystem::path summary_csv;
};

/// Reloads a checkpoint written by run_experiment and re-evaluates it on the
/// held-out states recorded in it. Writes eval_strategy_table_<alg>.csv and
/// eval_summary_<alg>.csv into config.output_dir.
EvalSummary evaluate_checkpoint(const config::ExperimentConfig& config,
                                const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

struct RagRun {
  std::string request;
  std::vector<rag::RetrievalResult> retrieved;
  rag::PromptContext prompt;
  llm::ChatRequest chat_request;
  llm::ChatResponse response;
  std::uint64_t memory_sequence = 0;
  std::filesystem::path transcript;
};

/// Index (or load) the corpus, retrieve, assemble the prompt with recalled
/// memory, call the configured backend, store the answer and write
/// rag_transcript_<sequence>.json.
RagRun run_rag(const config::ExperimentConfig& config, const std::string& request,
               std::shared_ptr<llm::Transport> transport);

struct ReportRow {
  std::string algorithm;
  std::uint64_t train_seed = 0;
  std::string eval_set_hash;
  double final_mean_reward = 0.0;
  double final_mean_carbon_g = 0.0;
  double oracle_mean_reward = 0.0;
  double gap_to_oracle_pct = 0.0;
  int states_within_5pct = 0;
  int eval_states = 0;
  double energy_wh = 0.0;
  double carbon_g = 0.0;
};

struct Report {
  std::vector<ReportRow> rows;
  /// (gdm - ppo) / |ppo| * 100 when both ran on the same evaluation set.
  std::optional<double> gdm_vs_ppo_gap_pct;
  std::filesystem::path csv;
  std::filesystem::path json;
};

/// Summarizes the manifests found in config.output_dir into report.csv and
/// report.json.
Report build_report(const config::ExperimentConfig& config);

}  // namespace carbonopt::experiment

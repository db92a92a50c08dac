#include "carbonopt/experiment.hpp"

#include <cerrno>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

#include <fcntl.h>
#include <unistd.h>

#include "carbonopt/diffusion.hpp"
#include "carbonopt/hash.hpp"
#include "carbonopt/ppo.hpp"

#ifndef CARBONOPT_GIT_VERSION
#define CARBONOPT_GIT_VERSION "unknown"
#endif

namespace carbonopt::experiment {

namespace fs = std::filesystem;
using nlohmann::json;

std::string version_string() { return CARBONOPT_GIT_VERSION; }

// --- CSV ---------------------------------------------------------------------

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const std::vector<std::string> kCurveColumns{"epoch", "env_steps", "mean_reward", "mean_carbon_g"};

const std::vector<std::string> kStrategyColumns{
    "state_index",      "channel_gain",       "renewable_fraction", "grid_intensity",  "data_bits",
    "edge_cycles",      "user_cycles",        "bandwidth_hz",       "power_w",         "carbon_g",
    "latency_s",        "reward",             "oracle_bandwidth_hz", "oracle_power_w", "oracle_carbon_g",
    "oracle_latency_s", "oracle_reward"};

const std::vector<std::string> kReportColumns{
    "algorithm",         "train_seed",         "eval_set_hash",      "final_mean_reward", "final_mean_carbon_g",
    "oracle_mean_reward", "gap_to_oracle_pct", "states_within_5pct", "eval_states"};

void write_csv(const fs::path& path, const CsvTable& table) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out << ',';
      out << cells[i];
    }
    out << '\n';
  };
  line(table.header);
  for (const auto& r : table.rows) line(r);
  if (!out.flush()) throw std::runtime_error("write failed for " + path.string());
}

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
  };
  CsvTable t;
  std::string line;
  if (std::getline(in, line)) t.header = split(line);
  while (std::getline(in, line)) {
    t.rows.push_back(split(line));
    if (t.rows.back().size() != t.header.size()) {
      throw std::runtime_error(path.string() + ": row " + std::to_string(t.rows.size()) + " has " +
                               std::to_string(t.rows.back().size()) + " cells, header has " +
                               std::to_string(t.header.size()));
    }
  }
  return t;
}

// --- strategy tables -----------------------------------------------------------

std::vector<StrategyRow> strategy_table(const env::EnvConfig& env, const std::vector<env::NetworkState>& states,
                                        const protocol::DeterministicPolicy& policy, env::GridSize grid) {
  std::vector<StrategyRow> rows;
  rows.reserve(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    StrategyRow r;
    r.index = i;
    r.state = states[i];
    r.chosen = policy(states[i], i);
    r.outcome = env::evaluate(states[i], r.chosen, env);
    std::tie(r.oracle, r.oracle_outcome) = env::oracle_best(states[i], env, grid);
    rows.push_back(r);
  }
  return rows;
}

CsvTable curve_csv(const std::vector<protocol::EvalPoint>& curve) {
  CsvTable t{kCurveColumns, {}};
  for (const auto& p : curve) {
    t.rows.push_back({std::to_string(p.epoch), std::to_string(p.env_steps), format_double(p.mean_reward),
                      format_double(p.mean_carbon_g)});
  }
  return t;
}

CsvTable strategy_csv(const std::vector<StrategyRow>& rows) {
  CsvTable t{kStrategyColumns, {}};
  for (const auto& r : rows) {
    const auto& s = r.state;
    t.rows.push_back({std::to_string(r.index), format_double(s.channel_gain), format_double(s.renewable_fraction),
                      format_double(s.grid_intensity), format_double(s.data_bits), format_double(s.edge_cycles),
                      format_double(s.user_cycles), format_double(r.chosen.bandwidth_hz),
                      format_double(r.chosen.power_w), format_double(r.outcome.carbon_g),
                      format_double(r.outcome.total_latency), format_double(r.outcome.reward),
                      format_double(r.oracle.bandwidth_hz), format_double(r.oracle.power_w),
                      format_double(r.oracle_outcome.carbon_g), format_double(r.oracle_outcome.total_latency),
                      format_double(r.oracle_outcome.reward)});
  }
  return t;
}

bool carbon_within(const StrategyRow& row, double tolerance) {
  return std::abs(row.outcome.carbon_g - row.oracle_outcome.carbon_g) <= tolerance * row.oracle_outcome.carbon_g;
}

// --- lock ------------------------------------------------------------------------

fs::path DirectoryLock::lock_path(const fs::path& dir) { return dir / ".carbonopt.lock"; }

DirectoryLock::DirectoryLock(const fs::path& dir) : path_(lock_path(dir)) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir.string() + ": " + ec.message());
  for (int attempt = 0; attempt < 2; ++attempt) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd >= 0) {
      const std::string pid = std::to_string(::getpid()) + "\n";
      const bool ok = ::write(fd, pid.data(), pid.size()) == static_cast<ssize_t>(pid.size());
      ::close(fd);
      if (!ok) throw std::runtime_error("cannot write lock file " + path_.string());
      return;
    }
    if (errno != EEXIST) {
      throw std::runtime_error("output directory " + dir.string() + " is not writable: " + std::strerror(errno));
    }
    long holder = 0;
    std::ifstream(path_) >> holder;
    const bool alive = holder > 0 && (::kill(static_cast<pid_t>(holder), 0) == 0 || errno == EPERM);
    if (alive) {
      throw LockError("output directory " + dir.string() + " is in use by process " + std::to_string(holder) +
                      " (lock file " + path_.string() + ")");
    }
    fs::remove(path_, ec);
  }
  throw LockError("cannot acquire lock " + path_.string());
}

DirectoryLock::~DirectoryLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

// --- runs ----------------------------------------------------------------------

env::EnvConfig resolved_env(const config::ExperimentConfig& config) {
  env::EnvConfig env = config.env;
  if (env.reward_scale <= 0.0) {
    env.reward_scale =
        env::calibrate_reward_scale(env, config.calibration_seed, config.calibration_samples, config.oracle_grid());
  }
  return env;
}

namespace {

std::string utc_now() { return rag::utc_timestamp(); }

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out.flush()) throw std::runtime_error("write failed for " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return json::parse(in);
}

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return fnv1a_hex(buf.str());
}

json mlp_to_json(const nn::Mlp& net) {
  const auto& p = net.parameters();
  return {{"layer_sizes", net.layer_sizes()},
          {"hidden_activation", nn::to_string(net.hidden_activation())},
          {"output_activation", nn::to_string(net.output_activation())},
          {"parameters", std::vector<double>(p.data(), p.data() + p.size())}};
}

nn::Mlp mlp_from_json(const json& j) {
  nn::Mlp net(j.at("layer_sizes").get<std::vector<int>>(),
              nn::activation_from_string(j.at("hidden_activation").get<std::string>()),
              nn::activation_from_string(j.at("output_activation").get<std::string>()));
  const auto params = j.at("parameters").get<std::vector<double>>();
  if (params.size() != net.num_parameters()) {
    throw nn::ShapeError("checkpoint parameter count", net.num_parameters(), params.size());
  }
  net.parameters() = Eigen::Map<const nn::Vector>(params.data(), static_cast<Eigen::Index>(params.size()));
  return net;
}

struct LoadedModel {
  std::string algorithm;
  config::ExperimentConfig config;
  env::EnvConfig env;
  std::optional<diffusion::DiffusionPolicy> gdm;
  std::optional<ppo::GaussianPolicy> ppo;
};

protocol::DeterministicPolicy make_policy(const LoadedModel& m) {
  if (m.algorithm == "gdm") {
    const auto& policy = *m.gdm;
    const env::EnvConfig env = m.env;
    const std::uint64_t eval_seed = m.config.eval_seed;
    return [&policy, env, eval_seed](const env::NetworkState& s, std::size_t i) {
      return diffusion::deterministic_action(policy, env, s, eval_seed, i);
    };
  }
  if (m.algorithm == "ppo") {
    const auto& policy = *m.ppo;
    const env::EnvConfig env = m.env;
    return [&policy, env](const env::NetworkState& s, std::size_t) { return ppo::deterministic_action(policy, env, s); };
  }
  const env::EnvConfig env = m.env;
  const env::GridSize grid = m.config.oracle_grid();
  return [env, grid](const env::NetworkState& s, std::size_t) { return env::oracle_best(s, env, grid).first; };
}

json checkpoint_json(const LoadedModel& m, const std::optional<diffusion::Critic>& critic,
                     const std::optional<nn::Mlp>& value_net) {
  json j{{"format", "carbonopt-checkpoint"},
         {"version", 1},
         {"algorithm", m.algorithm},
         {"config", config::to_json(m.config)},
         {"reward_scale", m.env.reward_scale}};
  if (m.gdm) {
    j["denoiser"] = mlp_to_json(m.gdm->denoiser);
    j["betas"] = m.gdm->schedule.betas;
  }
  if (critic) {
    j["critic_q1"] = mlp_to_json(critic->q1);
    j["critic_q2"] = mlp_to_json(critic->q2);
  }
  if (m.ppo) {
    j["mean_net"] = mlp_to_json(m.ppo->mean_net);
    j["log_std"] = std::vector<double>(m.ppo->log_std.data(), m.ppo->log_std.data() + m.ppo->log_std.size());
  }
  if (value_net) j["value_net"] = mlp_to_json(*value_net);
  return j;
}

LoadedModel load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw config::ConfigError({"checkpoint not found: " + path.string()});
  const json j = read_json(path);
  if (j.value("format", "") != "carbonopt-checkpoint" || j.value("version", 0) != 1) {
    throw std::runtime_error(path.string() + " is not a version 1 checkpoint");
  }
  LoadedModel m;
  m.algorithm = j.at("algorithm").get<std::string>();
  m.config = config::from_json(j.at("config"));
  m.env = m.config.env;
  m.env.reward_scale = j.at("reward_scale").get<double>();
  if (m.algorithm == "gdm") {
    m.gdm = diffusion::DiffusionPolicy{mlp_from_json(j.at("denoiser")),
                                       diffusion::NoiseSchedule::from_betas(j.at("betas").get<std::vector<double>>())};
  } else if (m.algorithm == "ppo") {
    const auto log_std = j.at("log_std").get<std::vector<double>>();
    m.ppo = ppo::GaussianPolicy{mlp_from_json(j.at("mean_net")),
                                Eigen::Map<const nn::Vector>(log_std.data(), static_cast<Eigen::Index>(log_std.size()))};
  }
  return m;
}

}  // namespace

RunSummary run_experiment(const config::ExperimentConfig& cfg, const RunOptions& options) {
  if (auto errors = config::validate(cfg); !errors.empty()) throw config::ConfigError(std::move(errors));
  auto log = [&](const std::string& msg) {
    if (options.log) *options.log << "[" << cfg.algorithm << "] " << msg << std::endl;
  };

  const fs::path dir(cfg.output_dir);
  DirectoryLock lock(dir);

  RunSummary s;
  s.algorithm = cfg.algorithm;
  s.config_hash = config::config_hash(cfg);

  telemetry::EnergyMeter meter(cfg.device_power_watts);
  meter.start();
  try {
    LoadedModel model;
    model.algorithm = cfg.algorithm;
    model.config = cfg;
    model.env = resolved_env(cfg);
    s.reward_scale = model.env.reward_scale;
    log("reward_scale " + format_double(s.reward_scale));

    const auto states = protocol::make_eval_states(model.env, cfg.eval_seed, cfg.eval_states);
    s.eval_set_hash = protocol::eval_set_hash(states);
    s.eval_states = cfg.eval_states;

    std::optional<diffusion::Critic> critic;
    std::optional<nn::Mlp> value_net;
    if (cfg.algorithm == "gdm") {
      diffusion::GdmConfig g = cfg.gdm;
      g.seed = cfg.train_seed;
      log("training diffusion policy for " + std::to_string(g.iterations) + " iterations");
      auto result = diffusion::train(model.env, g, states, cfg.eval_seed);
      s.curve = std::move(result.curve);
      model.gdm = std::move(result.policy);
      critic = std::move(result.critic);
    } else if (cfg.algorithm == "ppo") {
      ppo::PpoConfig p = cfg.ppo;
      p.seed = cfg.train_seed;
      log("training PPO for " + std::to_string(p.rollouts) + " rollouts of " + std::to_string(p.rollout_size));
      auto result = ppo::train_ppo(model.env, p, states);
      s.curve = std::move(result.curve);
      model.ppo = std::move(result.policy);
      value_net = std::move(result.value_net);
    }

    const auto rows = strategy_table(model.env, states, make_policy(model), cfg.oracle_grid());
    double oracle_reward = 0.0, oracle_carbon = 0.0, chosen_carbon = 0.0, chosen_reward = 0.0;
    for (const auto& r : rows) {
      oracle_reward += r.oracle_outcome.reward;
      oracle_carbon += r.oracle_outcome.carbon_g;
      chosen_reward += r.outcome.reward;
      chosen_carbon += r.outcome.carbon_g;
      s.states_within_5pct += carbon_within(r, 0.05) ? 1 : 0;
    }
    const double n = static_cast<double>(rows.size());
    s.oracle_mean_reward = oracle_reward / n;
    s.oracle_mean_carbon_g = oracle_carbon / n;
    s.table_mean_carbon_g = chosen_carbon / n;
    if (cfg.algorithm == "oracle") s.curve = {{0, 0, chosen_reward / n, chosen_carbon / n}};
    s.final_point = s.curve.back();
    s.gap_to_oracle_pct = (s.oracle_mean_reward - s.final_point.mean_reward) / std::abs(s.oracle_mean_reward) * 100.0;
    log("final mean reward " + format_double(s.final_point.mean_reward) + ", oracle " +
        format_double(s.oracle_mean_reward) + ", carbon within 5% in " + std::to_string(s.states_within_5pct) + "/" +
        std::to_string(rows.size()) + " states");

    s.curve_csv = dir / ("reward_curve_" + cfg.algorithm + ".csv");
    s.strategy_csv = dir / ("strategy_table_" + cfg.algorithm + ".csv");
    s.checkpoint = dir / ("checkpoint_" + cfg.algorithm + ".json");
    s.manifest = dir / ("manifest_" + cfg.algorithm + ".json");
    write_csv(s.curve_csv, curve_csv(s.curve));
    write_csv(s.strategy_csv, strategy_csv(rows));
    write_json(s.checkpoint, checkpoint_json(model, critic, value_net));
  } catch (...) {
    meter.stop();
    throw;
  }
  s.energy_joules = meter.stop();
  s.wall_seconds = meter.seconds();
  s.emissions = telemetry::estimate_emissions(s.energy_joules, cfg.carbon_intensity_g_per_kwh);

  json manifest{
      {"algorithm", cfg.algorithm},
      {"version", version_string()},
      {"created_at", utc_now()},
      {"config", config::to_json(cfg)},
      {"config_hash", s.config_hash},
      {"seeds", {{"train", cfg.train_seed}, {"eval", cfg.eval_seed}, {"calibration", cfg.calibration_seed}}},
      {"reward_scale", s.reward_scale},
      {"eval_set_hash", s.eval_set_hash},
      {"eval_states", s.eval_states},
      {"results",
       {{"final_epoch", s.final_point.epoch},
        {"final_env_steps", s.final_point.env_steps},
        {"final_mean_reward", s.final_point.mean_reward},
        {"final_mean_carbon_g", s.final_point.mean_carbon_g},
        {"oracle_mean_reward", s.oracle_mean_reward},
        {"oracle_mean_carbon_g", s.oracle_mean_carbon_g},
        {"table_mean_carbon_g", s.table_mean_carbon_g},
        {"gap_to_oracle_pct", s.gap_to_oracle_pct},
        {"states_within_5pct", s.states_within_5pct}}},
      {"telemetry",
       {{"device_power_watts", cfg.device_power_watts},
        {"wall_seconds", s.wall_seconds},
        {"energy_joules", s.energy_joules},
        {"energy_wh", s.emissions.energy_wh},
        {"carbon_g", s.emissions.carbon_g},
        {"carbon_intensity_g_per_kwh", s.emissions.intensity_g_per_kwh}}},
      {"files",
       {{s.curve_csv.filename().string(), file_hash(s.curve_csv)},
        {s.strategy_csv.filename().string(), file_hash(s.strategy_csv)},
        {s.checkpoint.filename().string(), file_hash(s.checkpoint)}}},
  };
  write_json(s.manifest, manifest);
  return s;
}

EvalSummary evaluate_checkpoint(const config::ExperimentConfig& cfg, const std::optional<fs::path>& checkpoint) {
  const fs::path dir(cfg.output_dir);
  const fs::path path = checkpoint ? *checkpoint : dir / ("checkpoint_" + cfg.algorithm + ".json");
  const LoadedModel model = load_checkpoint(path);
  DirectoryLock lock(dir);

  const auto states = protocol::make_eval_states(model.env, model.config.eval_seed, model.config.eval_states);
  const auto rows = strategy_table(model.env, states, make_policy(model), model.config.oracle_grid());
  EvalSummary s;
  s.algorithm = model.algorithm;
  s.eval_states = static_cast<int>(rows.size());
  double reward = 0.0, carbon = 0.0, oracle = 0.0;
  for (const auto& r : rows) {
    reward += r.outcome.reward;
    carbon += r.outcome.carbon_g;
    oracle += r.oracle_outcome.reward;
    s.states_within_5pct += carbon_within(r, 0.05) ? 1 : 0;
  }
  const double n = static_cast<double>(rows.size());
  s.point = {0, 0, reward / n, carbon / n};
  s.oracle_mean_reward = oracle / n;

  s.strategy_csv = dir / ("eval_strategy_table_" + model.algorithm + ".csv");
  s.summary_csv = dir / ("eval_summary_" + model.algorithm + ".csv");
  write_csv(s.strategy_csv, strategy_csv(rows));
  write_csv(s.summary_csv,
            {{"algorithm", "eval_set_hash", "mean_reward", "mean_carbon_g", "oracle_mean_reward", "states_within_5pct",
              "eval_states"},
             {{model.algorithm, protocol::eval_set_hash(states), format_double(s.point.mean_reward),
               format_double(s.point.mean_carbon_g), format_double(s.oracle_mean_reward),
               std::to_string(s.states_within_5pct), std::to_string(s.eval_states)}}});
  return s;
}

// --- RAG -------------------------------------------------------------------------

RagRun run_rag(const config::ExperimentConfig& cfg, const std::string& request,
               std::shared_ptr<llm::Transport> transport) {
  if (auto errors = config::validate(cfg); !errors.empty()) throw config::ConfigError(std::move(errors));
  std::vector<std::string> errors;
  if (request.empty()) errors.push_back("request text is empty");
  const bool have_index = !cfg.rag.index_path.empty() && fs::exists(cfg.rag.index_path);
  if (!have_index && !fs::is_directory(cfg.rag.corpus_dir)) {
    errors.push_back("rag_corpus_dir " + cfg.rag.corpus_dir + " does not exist");
  }
  if (!cfg.rag.preamble_path.empty() && !fs::exists(cfg.rag.preamble_path)) {
    errors.push_back("rag_preamble_path " + cfg.rag.preamble_path + " does not exist");
  }
  if (!errors.empty()) throw config::ConfigError(std::move(errors));

  const fs::path dir(cfg.output_dir);
  DirectoryLock lock(dir);

  rag::ChunkIndex index = [&] {
    if (have_index) return rag::ChunkIndex::load(cfg.rag.index_path);
    auto built = rag::ChunkIndex::build(rag::chunk_corpus(rag::load_corpus(cfg.rag.corpus_dir),
                                                          static_cast<std::size_t>(cfg.rag.chunk_size),
                                                          static_cast<std::size_t>(cfg.rag.chunk_overlap)));
    if (!cfg.rag.index_path.empty()) built.save(cfg.rag.index_path);
    return built;
  }();

  std::string preamble = rag::kDefaultPreamble;
  if (!cfg.rag.preamble_path.empty()) {
    std::ifstream in(cfg.rag.preamble_path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    preamble = buf.str();
  }

  rag::MemoryRepository memory(cfg.rag.memory_path.empty() ? dir / "memory.jsonl" : fs::path(cfg.rag.memory_path));

  RagRun run;
  run.request = request;
  run.retrieved = rag::retrieve(index, request, static_cast<std::size_t>(cfg.rag.top_k));
  const auto recalled = memory.recall(index, request, static_cast<std::size_t>(cfg.rag.memory_recall));
  run.prompt = rag::assemble_prompt(request, run.retrieved, index, recalled,
                                    static_cast<std::size_t>(cfg.rag.token_budget), preamble);

  run.chat_request.model_name = cfg.llm_model;
  run.chat_request.temperature = cfg.llm_temperature;
  run.chat_request.max_tokens = cfg.llm_max_tokens;
  run.chat_request.messages = {{"system", run.prompt.system_preamble}, {"user", run.prompt.user_message()}};

  std::map<std::string, std::string> fixtures;
  if (cfg.llm.backend == "mock" && fs::is_directory(cfg.llm_fixtures_dir)) {
    fixtures = llm::MockBackend::load_fixtures(cfg.llm_fixtures_dir);
  }
  auto backend = llm::make_backend(cfg.llm, std::move(transport), std::move(fixtures));
  run.response = backend->complete(run.chat_request);

  const rag::MemoryRecord& rec = memory.record(index, request, run.response.content);
  run.memory_sequence = rec.sequence;

  json retrieved = json::array();
  for (const auto& r : run.retrieved) {
    retrieved.push_back({{"chunk_id", r.chunk_id}, {"doc_id", index.chunk(r.chunk_id).doc_id}, {"score", r.score}});
  }
  json included = json::array();
  for (const auto& c : run.prompt.retrieved) included.push_back(c.chunk_id);
  json memory_used = json::array();
  for (const auto& m : run.prompt.memory_entries) {
    memory_used.push_back({{"sequence", m.sequence}, {"request", m.request}, {"timestamp", m.timestamp}});
  }
  const json transcript{
      {"request", request},
      {"retrieved", retrieved},
      {"included_chunk_ids", included},
      {"memory_used", memory_used},
      {"prompt",
       {{"system", run.prompt.system_preamble},
        {"user", run.prompt.user_message()},
        {"total_tokens", run.prompt.total_tokens()},
        {"token_budget", run.prompt.token_budget},
        {"prompt_hash", llm::prompt_hash(run.chat_request)}}},
      {"response",
       {{"content", run.response.content},
        {"backend_id", run.response.backend_id},
        {"prompt_tokens", run.response.prompt_tokens},
        {"completion_tokens", run.response.completion_tokens}}},
      {"memory_sequence", rec.sequence},
      {"timestamp", rec.timestamp},
  };
  char name[64];
  std::snprintf(name, sizeof name, "rag_transcript_%04llu.json", static_cast<unsigned long long>(rec.sequence));
  run.transcript = dir / name;
  write_json(run.transcript, transcript);
  return run;
}

// --- report ----------------------------------------------------------------------

Report build_report(const config::ExperimentConfig& cfg) {
  const fs::path dir(cfg.output_dir);
  if (!fs::is_directory(dir)) throw config::ConfigError({"output_dir " + cfg.output_dir + " does not exist"});
  DirectoryLock lock(dir);

  Report report;
  for (const char* alg : {"gdm", "ppo", "oracle"}) {
    const fs::path path = dir / (std::string("manifest_") + alg + ".json");
    if (!fs::exists(path)) continue;
    const json m = read_json(path);
    const json& res = m.at("results");
    ReportRow r;
    r.algorithm = alg;
    r.train_seed = m.at("seeds").at("train").get<std::uint64_t>();
    r.eval_set_hash = m.at("eval_set_hash").get<std::string>();
    r.final_mean_reward = res.at("final_mean_reward").get<double>();
    r.final_mean_carbon_g = res.at("final_mean_carbon_g").get<double>();
    r.oracle_mean_reward = res.at("oracle_mean_reward").get<double>();
    r.gap_to_oracle_pct = res.at("gap_to_oracle_pct").get<double>();
    r.states_within_5pct = res.at("states_within_5pct").get<int>();
    r.eval_states = m.at("eval_states").get<int>();
    r.energy_wh = m.at("telemetry").at("energy_wh").get<double>();
    r.carbon_g = m.at("telemetry").at("carbon_g").get<double>();
    report.rows.push_back(r);
  }
  if (report.rows.empty()) throw std::runtime_error("no manifests found in " + dir.string());

  const ReportRow* gdm = nullptr;
  const ReportRow* ppo = nullptr;
  for (const auto& r : report.rows) {
    if (r.algorithm == "gdm") gdm = &r;
    if (r.algorithm == "ppo") ppo = &r;
  }
  if (gdm && ppo && gdm->eval_set_hash == ppo->eval_set_hash) {
    report.gdm_vs_ppo_gap_pct = (gdm->final_mean_reward - ppo->final_mean_reward) / std::abs(ppo->final_mean_reward) * 100.0;
  }

  CsvTable t{kReportColumns, {}};
  json rows = json::array();
  for (const auto& r : report.rows) {
    t.rows.push_back({r.algorithm, std::to_string(r.train_seed), r.eval_set_hash, format_double(r.final_mean_reward),
                      format_double(r.final_mean_carbon_g), format_double(r.oracle_mean_reward),
                      format_double(r.gap_to_oracle_pct), std::to_string(r.states_within_5pct),
                      std::to_string(r.eval_states)});
    rows.push_back({{"algorithm", r.algorithm},
                    {"train_seed", r.train_seed},
                    {"eval_set_hash", r.eval_set_hash},
                    {"final_mean_reward", r.final_mean_reward},
                    {"final_mean_carbon_g", r.final_mean_carbon_g},
                    {"oracle_mean_reward", r.oracle_mean_reward},
                    {"gap_to_oracle_pct", r.gap_to_oracle_pct},
                    {"states_within_5pct", r.states_within_5pct},
                    {"eval_states", r.eval_states},
                    {"energy_wh", r.energy_wh},
                    {"carbon_g", r.carbon_g}});
  }
  report.csv = dir / "report.csv";
  report.json = dir / "report.json";
  write_csv(report.csv, t);
  json j{{"rows", rows}, {"version", version_string()}};
  j["gdm_vs_ppo_gap_pct"] = report.gdm_vs_ppo_gap_pct ? json(*report.gdm_vs_ppo_gap_pct) : json(nullptr);
  write_json(report.json, j);
  return report;
}

}  // namespace carbonopt::experiment

#include "cli.hpp"

#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "carbonopt/config.hpp"
#include "carbonopt/experiment.hpp"

namespace carbonopt::cli {

namespace {

std::string fmt(double v) { return experiment::format_double(v); }

config::ExperimentConfig load_config(const std::string& config_path,
                                     const std::map<std::string, std::string>& flags) {
  nlohmann::json merged = config::to_json(config::ExperimentConfig{});
  if (!config_path.empty()) {
    const nlohmann::json file = config::read_json_file(config_path);
    if (!file.is_object()) throw config::ConfigError({"config file " + config_path + " must hold a JSON object"});
    for (const auto& [k, v] : file.items()) merged[k] = v;
  }
  std::vector<std::string> errors;
  for (const auto& [key, text] : flags) {
    try {
      merged[key] = config::parse_flag_value(key, text);
    } catch (const config::ConfigError& e) {
      errors.insert(errors.end(), e.errors().begin(), e.errors().end());
    }
  }
  try {
    auto cfg = config::from_json(merged);
    if (errors.empty()) return cfg;
  } catch (const config::ConfigError& e) {
    errors.insert(errors.end(), e.errors().begin(), e.errors().end());
  }
  throw config::ConfigError(std::move(errors));
}

void print_run(std::ostream& out, const experiment::RunSummary& s) {
  out << "algorithm          " << s.algorithm << "\n"
      << "final mean reward  " << fmt(s.final_point.mean_reward) << "\n"
      << "oracle mean reward " << fmt(s.oracle_mean_reward) << "\n"
      << "gap to oracle      " << fmt(s.gap_to_oracle_pct) << " %\n"
      << "carbon within 5%   " << s.states_within_5pct << "/" << s.eval_states << " states\n"
      << "energy             " << fmt(s.emissions.energy_wh) << " Wh, " << fmt(s.emissions.carbon_g) << " g CO2\n"
      << "manifest           " << s.manifest.string() << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, Context& ctx) {
  CLI::App app{"Carbon-aware edge offloading: diffusion policy, PPO baseline, grid oracle and RAG assistant",
               "carbonopt"};
  app.require_subcommand(1);
  app.set_version_flag("--version", experiment::version_string());

  std::string config_path;
  app.add_option("--config", config_path, "Flat JSON config file (flags override its values)");

  std::map<std::string, std::string> flags;
  const auto defaults = config::to_json(config::ExperimentConfig{});
  for (const auto& key : config::config_keys()) {
    app.add_option_function<std::string>(
           "--" + key, [&flags, key](const std::string& v) { flags[key] = v; },
           "default: " + defaults.at(key).dump())
        ->group("Config keys");
  }

  auto* train = app.add_subcommand("train", "Train the configured algorithm (gdm or ppo) and write its artifacts");
  auto* eval = app.add_subcommand("eval", "Re-evaluate a saved checkpoint on its held-out states");
  std::string checkpoint;
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file (default: <output_dir>/checkpoint_<algorithm>.json)");
  auto* oracle = app.add_subcommand("oracle", "Grid-search every held-out state and write the oracle artifacts");
  auto* rag = app.add_subcommand("rag", "Formulate a problem from a designer request with retrieval and memory");
  std::string request, request_file;
  auto* req_opt = rag->add_option("--request", request, "Designer request text");
  rag->add_option("--request-file", request_file, "File holding the designer request")->excludes(req_opt);
  auto* report = app.add_subcommand("report", "Summarize the manifests in the output directory");
  for (auto* sub : {train, eval, oracle, rag, report}) sub->fallthrough();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    ctx.out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    ctx.out << experiment::version_string() << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    ctx.err << "error: " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    config::ExperimentConfig cfg = load_config(config_path, flags);
    if (*oracle) cfg.algorithm = "oracle";

    if (*train || *oracle) {
      if (*train && cfg.algorithm == "oracle") {
        throw config::ConfigError({"train needs algorithm gdm or ppo; use the oracle verb for the grid search"});
      }
      print_run(ctx.out, experiment::run_experiment(cfg, {&ctx.err}));
    } else if (*eval) {
      const auto s = experiment::evaluate_checkpoint(
          cfg, checkpoint.empty() ? std::nullopt : std::optional<std::filesystem::path>(checkpoint));
      ctx.out << "algorithm          " << s.algorithm << "\n"
              << "mean reward        " << fmt(s.point.mean_reward) << "\n"
              << "oracle mean reward " << fmt(s.oracle_mean_reward) << "\n"
              << "carbon within 5%   " << s.states_within_5pct << "/" << s.eval_states << " states\n"
              << "table              " << s.strategy_csv.string() << "\n";
    } else if (*rag) {
      if (!request_file.empty()) {
        std::ifstream in(request_file, std::ios::binary);
        if (!in) throw config::ConfigError({"cannot read request file " + request_file});
        std::ostringstream buf;
        buf << in.rdbuf();
        request = buf.str();
      }
      if (request.empty()) throw config::ConfigError({"rag needs --request or --request-file"});
      const auto r = experiment::run_rag(cfg, request, ctx.transport);
      ctx.out << r.response.content << "\n\n";
      ctx.out << "retrieved " << r.retrieved.size() << " chunks, " << r.prompt.memory_entries.size()
              << " memory entries, " << r.prompt.total_tokens() << "/" << r.prompt.token_budget << " tokens\n"
              << "transcript " << r.transcript.string() << "\n";
    } else if (*report) {
      const auto rep = experiment::build_report(cfg);
      for (const auto& row : rep.rows) {
        ctx.out << row.algorithm << ": final mean reward " << fmt(row.final_mean_reward) << ", gap to oracle "
                << fmt(row.gap_to_oracle_pct) << " %\n";
      }
      if (rep.gdm_vs_ppo_gap_pct) ctx.out << "gdm vs ppo: " << fmt(*rep.gdm_vs_ppo_gap_pct) << " %\n";
      ctx.out << "report " << rep.csv.string() << "\n";
    }
    return kExitOk;
  } catch (const config::ConfigError& e) {
    ctx.err << "configuration error:\n";
    for (const auto& msg : e.errors()) ctx.err << "  - " << msg << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    ctx.err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace carbonopt::cli

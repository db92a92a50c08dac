#include "carbonopt/experiment.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "scratch_dir.hpp"

using namespace carbonopt;
using namespace carbonopt::experiment;
using carbonopt::fixtures::ScratchDir;
using carbonopt::fixtures::tiny_config;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

const std::string kRequest =
    "Minimize the carbon emissions of offloading tasks to an edge server by choosing bandwidth and transmit power.";

}  // namespace

TEST(Csv, FormatDoubleRoundTrips) {
  for (double v : {0.1, -3.0e-17, 123456789.123456789, 1.0 / 3.0, 0.0}) {
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
}

TEST(Csv, WriteThenReadIsLossless) {
  ScratchDir dir("csv");
  CsvTable t{{"a", "b"}, {{"1", "x"}, {"2.5", "y"}}};
  write_csv(dir / "t.csv", t);
  const auto back = read_csv(dir / "t.csv");
  EXPECT_EQ(back.header, t.header);
  EXPECT_EQ(back.rows, t.rows);
  EXPECT_EQ(slurp(dir / "t.csv"), "a,b\n1,x\n2.5,y\n");
}

TEST(Csv, ReadRejectsRaggedRows) {
  ScratchDir dir("csv_bad");
  std::ofstream(dir / "bad.csv") << "a,b\n1\n";
  EXPECT_THROW(read_csv(dir / "bad.csv"), std::runtime_error);
}

TEST(Lock, SecondHolderIsRefused) {
  ScratchDir dir("lock");
  {
    DirectoryLock first(dir.path());
    EXPECT_TRUE(fs::exists(DirectoryLock::lock_path(dir.path())));
    EXPECT_THROW(DirectoryLock second(dir.path()), LockError);
  }
  EXPECT_FALSE(fs::exists(DirectoryLock::lock_path(dir.path())));
  EXPECT_NO_THROW(DirectoryLock again(dir.path()));
}

TEST(Lock, StaleLockIsTakenOver) {
  ScratchDir dir("stale");
  std::ofstream(DirectoryLock::lock_path(dir.path())) << "999999999\n";
  EXPECT_NO_THROW(DirectoryLock lock(dir.path()));
}

TEST(Lock, BusyDirectoryBlocksRuns) {
  ScratchDir dir("busy");
  DirectoryLock held(dir.path());
  EXPECT_THROW(run_experiment(tiny_config(dir.path(), "oracle")), LockError);
}

TEST(Run, OracleTableChoosesTheOracle) {
  ScratchDir dir("oracle");
  const auto s = run_experiment(tiny_config(dir.path(), "oracle"));
  EXPECT_EQ(s.states_within_5pct, s.eval_states);
  EXPECT_NEAR(s.gap_to_oracle_pct, 0.0, 1e-12);
  const auto table = read_csv(s.strategy_csv);
  EXPECT_EQ(table.header, kStrategyColumns);
  ASSERT_EQ(table.rows.size(), 6u);
  const auto col = [&](const std::string& name) {
    return static_cast<std::size_t>(std::find(table.header.begin(), table.header.end(), name) - table.header.begin());
  };
  for (const auto& row : table.rows) {
    EXPECT_EQ(row[col("bandwidth_hz")], row[col("oracle_bandwidth_hz")]);
    EXPECT_EQ(row[col("power_w")], row[col("oracle_power_w")]);
    EXPECT_EQ(row[col("carbon_g")], row[col("oracle_carbon_g")]);
  }
}

TEST(Run, WritesArtifactsAndManifest) {
  ScratchDir dir("gdm");
  const auto s = run_experiment(tiny_config(dir.path(), "gdm"));
  for (const auto& name : {"reward_curve_gdm.csv", "strategy_table_gdm.csv", "checkpoint_gdm.json", "manifest_gdm.json"})
    EXPECT_TRUE(fs::exists(dir / name)) << name;
  EXPECT_FALSE(fs::exists(DirectoryLock::lock_path(dir.path())));

  const auto curve = read_csv(s.curve_csv);
  EXPECT_EQ(curve.header, kCurveColumns);
  EXPECT_EQ(curve.rows.size(), s.curve.size());
  EXPECT_GE(s.curve.size(), 2u);

  const json m = read_json(s.manifest);
  EXPECT_EQ(m["algorithm"], "gdm");
  EXPECT_EQ(m["config_hash"], config::config_hash(tiny_config(dir.path(), "gdm")));
  EXPECT_EQ(m["eval_set_hash"], s.eval_set_hash);
  EXPECT_GT(m["telemetry"]["energy_joules"].get<double>(), 0.0);
  EXPECT_GT(m["telemetry"]["carbon_g"].get<double>(), 0.0);
  EXPECT_GT(m["reward_scale"].get<double>(), 0.0);
  EXPECT_EQ(m["files"].size(), 3u);
  EXPECT_EQ(m["results"]["states_within_5pct"].get<int>(), s.states_within_5pct);
}

TEST(Run, SameSeedGivesIdenticalFiles) {
  ScratchDir a("det_a"), b("det_b");
  for (const std::string alg : {"gdm", "ppo", "oracle"}) {
    const auto sa = run_experiment(tiny_config(a.path(), alg));
    const auto sb = run_experiment(tiny_config(b.path(), alg));
    EXPECT_EQ(slurp(sa.curve_csv), slurp(sb.curve_csv)) << alg;
    EXPECT_EQ(slurp(sa.strategy_csv), slurp(sb.strategy_csv)) << alg;
    auto ja = read_json(sa.checkpoint), jb = read_json(sb.checkpoint);
    ja["config"].erase("output_dir");
    jb["config"].erase("output_dir");
    EXPECT_EQ(ja, jb) << alg;
  }
}

TEST(Run, DifferentSeedChangesTraining) {
  ScratchDir a("seed_a"), b("seed_b");
  auto ca = tiny_config(a.path(), "gdm");
  auto cb = tiny_config(b.path(), "gdm");
  cb.train_seed = 1;
  EXPECT_NE(slurp(run_experiment(ca).strategy_csv), slurp(run_experiment(cb).strategy_csv));
}

TEST(Run, InvalidConfigIsRejectedBeforeAnyWork) {
  ScratchDir dir("invalid");
  auto c = tiny_config(dir.path(), "gdm");
  c.eval_states = 0;
  EXPECT_THROW(run_experiment(c), config::ConfigError);
  EXPECT_TRUE(fs::is_empty(dir.path()));
}

TEST(Eval, CheckpointReproducesTheStrategyTable) {
  ScratchDir dir("eval");
  for (const std::string alg : {"gdm", "ppo"}) {
    const auto cfg = tiny_config(dir.path(), alg);
    const auto run = run_experiment(cfg);
    const auto ev = evaluate_checkpoint(cfg);
    EXPECT_EQ(ev.algorithm, alg);
    EXPECT_EQ(slurp(ev.strategy_csv), slurp(run.strategy_csv)) << alg;
    EXPECT_EQ(ev.states_within_5pct, run.states_within_5pct);
    EXPECT_DOUBLE_EQ(ev.point.mean_reward, run.final_point.mean_reward);
  }
}

TEST(Eval, MissingCheckpointThrows) {
  ScratchDir dir("eval_missing");
  EXPECT_THROW(evaluate_checkpoint(tiny_config(dir.path(), "gdm")), std::runtime_error);
}

TEST(Report, SummarizesManifestsAndComparesOnSharedStates) {
  ScratchDir dir("report");
  const auto g = run_experiment(tiny_config(dir.path(), "gdm"));
  const auto p = run_experiment(tiny_config(dir.path(), "ppo"));
  const auto rep = build_report(tiny_config(dir.path(), "gdm"));
  ASSERT_EQ(rep.rows.size(), 2u);
  ASSERT_TRUE(rep.gdm_vs_ppo_gap_pct.has_value());
  const double expected =
      (g.final_point.mean_reward - p.final_point.mean_reward) / std::abs(p.final_point.mean_reward) * 100.0;
  EXPECT_NEAR(*rep.gdm_vs_ppo_gap_pct, expected, 1e-9);
  const auto csv = read_csv(rep.csv);
  EXPECT_EQ(csv.header, kReportColumns);
  EXPECT_EQ(csv.rows.size(), 2u);
}

TEST(Report, EmptyDirectoryHasNothingToReport) {
  ScratchDir dir("report_empty");
  EXPECT_THROW(build_report(tiny_config(dir.path(), "gdm")), std::runtime_error);
}

TEST(Rag, MockRunUsesCorpusAndNeverTouchesTheNetwork) {
  ScratchDir dir("rag");
  auto transport = std::make_shared<llm::RecordingTransport>();
  const auto cfg = tiny_config(dir.path(), "gdm");
  const auto run = run_rag(cfg, kRequest, transport);
  EXPECT_TRUE(transport->calls().empty());
  EXPECT_EQ(run.response.backend_id.rfind("mock", 0), 0u);

  const auto index = rag::ChunkIndex::build(rag::chunk_corpus(rag::load_corpus(cfg.rag.corpus_dir), 1000, 200));
  const auto expected = rag::retrieve(index, kRequest, 4);
  ASSERT_EQ(run.retrieved.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_EQ(run.retrieved[i].chunk_id, expected[i].chunk_id);
  EXPECT_LE(run.prompt.total_tokens(), 4000u);

  const json t = read_json(run.transcript);
  EXPECT_EQ(t["request"], kRequest);
  EXPECT_EQ(t["response"]["content"], run.response.content);
  EXPECT_EQ(t["retrieved"].size(), expected.size());
}

TEST(Rag, EarlierExchangesSurfaceInLaterPrompts) {
  ScratchDir dir("rag_memory");
  const auto cfg = tiny_config(dir.path(), "gdm");
  const auto first = run_rag(cfg, kRequest, nullptr);
  EXPECT_TRUE(first.prompt.memory_entries.empty());
  const auto second = run_rag(cfg, kRequest + " Add a per-user power cap.", nullptr);
  ASSERT_FALSE(second.prompt.memory_entries.empty());
  EXPECT_EQ(second.prompt.memory_entries.front().request, kRequest);
  EXPECT_NE(second.prompt.user_message().find(first.response.content), std::string::npos);
  EXPECT_EQ(second.memory_sequence, first.memory_sequence + 1);
}

TEST(Rag, CannedFixtureAnswersTheSampleRequest) {
  ScratchDir dir("rag_fixture");
  std::ifstream in(std::string(CARBONOPT_DATA_DIR) + "/requests/carbon_offloading.txt");
  std::ostringstream buf;
  buf << in.rdbuf();
  const auto run = run_rag(tiny_config(dir.path(), "gdm"), buf.str(), nullptr);
  EXPECT_EQ(run.response.content.rfind("Decision variables", 0), 0u) << run.response.content;
}

TEST(Rag, EchoBackendReturnsThePrompt) {
  ScratchDir dir("rag_echo");
  auto cfg = tiny_config(dir.path(), "gdm");
  cfg.llm.backend = "mock:echo";
  const auto run = run_rag(cfg, kRequest, nullptr);
  EXPECT_NE(run.response.content.find(kRequest), std::string::npos);
}

TEST(Rag, MissingCorpusIsAConfigurationError) {
  ScratchDir dir("rag_nocorpus");
  auto cfg = tiny_config(dir.path(), "gdm");
  cfg.rag.corpus_dir = (dir / "nowhere").string();
  EXPECT_THROW(run_rag(cfg, kRequest, nullptr), config::ConfigError);
}

TEST(Rag, SavedIndexIsReused) {
  ScratchDir dir("rag_index");
  auto cfg = tiny_config(dir.path(), "gdm");
  cfg.rag.index_path = (dir / "index.json").string();
  const auto first = run_rag(cfg, kRequest, nullptr);
  ASSERT_TRUE(fs::exists(cfg.rag.index_path));
  cfg.rag.corpus_dir = (dir / "gone").string();
  const auto second = run_rag(cfg, kRequest, nullptr);
  ASSERT_EQ(second.retrieved.size(), first.retrieved.size());
  for (std::size_t i = 0; i < first.retrieved.size(); ++i)
    EXPECT_EQ(second.retrieved[i].chunk_id, first.retrieved[i].chunk_id);
}

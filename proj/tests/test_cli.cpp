/* Copyright 2026 The FedGTST Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "fedgtst/cli/experiment.hpp"
#include "json.hpp"
#include "test_util.hpp"

namespace fedgtst {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

class Quiet : public ::testing::Environment {
 public:
  void SetUp() override { set_warnings_enabled(false); }
};
const auto* const kQuiet = ::testing::AddGlobalTestEnvironment(new Quiet);

const char* kSmall = R"({
  "seed": 3,
  "model": {"kind": "logistic", "init_scale": 0.01},
  "data": {"num_classes": 4, "dim": 4, "samples_per_class": 20, "class_separation": 2.0},
  "shift": {"rotation_angle": 0.3},
  "partition": {"scheme": "label-subset", "num_clients": 6, "classes_per_client": 2},
  "training": {"algorithm": "fedgtst", "rounds": 6, "participation_fraction": 0.5,
               "std_subset_fraction": 0.2, "xi": 0.5,
               "lr_schedule": {"kind": "fixed", "initial": 0.5}},
  "transfer": {"lr": 0.5, "epochs": 10, "train_fraction": 0.5},
  "compare": {"algorithms": ["fedavg", "fedgtst"], "seeds": [1, 2], "stats_rounds": [2, 6]}
})";

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  f << s;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(FEDGTST_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

cli::ExperimentConfig small(const std::string& patch = "{}") {
  json base = json::parse(kSmall);
  base.merge_patch(json::parse(patch));
  return cli::parse_config(base.dump());
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

TEST(ConfigTest, RejectsUnknownKeys) {
  EXPECT_THROW(small(R"({"trainig": {}})"), ConfigError);
  EXPECT_THROW(small(R"({"training": {"xii": 1}})"), ConfigError);
  EXPECT_THROW(small(R"({"training": {"lr_schedule": {"kind": "cosine"}}})"), ConfigError);
  EXPECT_THROW(cli::parse_config("{not json"), ConfigError);
}

TEST(ConfigTest, RejectsInvalidRanges) {
  EXPECT_THROW(small(R"({"training": {"participation_fraction": 1.5}})"), ConfigError);
  EXPECT_THROW(small(R"({"training": {"xi": -1}})"), ConfigError);
  EXPECT_THROW(small(R"({"shift": {"label_noise_rate": 0.5}})"), ConfigError);
  EXPECT_THROW(small(R"({"training": {"rounds": 0}})"), ConfigError);
}

TEST(ConfigTest, Overrides) {
  auto c = small();
  cli::apply_overrides(c, 42, 4);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.threads, 4);
}

TEST(ConfigTest, ShippedConfigsParse) {
  for (const char* name : {"figure_ccs.json", "round_bound.json", "theorem2.json"}) {
    EXPECT_NO_THROW(cli::load_config(fs::path(FEDGTST_SOURCE_DIR) / "configs" / name)) << name;
  }
}

TEST(GenDataTest, ByteIdenticalReruns) {
  const auto dir = testing::temp_dir("gen");
  const auto c = small();
  cli::cmd_gen_data(c, dir / "a");
  cli::cmd_gen_data(c, dir / "b");
  for (const char* f : {"source.csv", "target.csv", "partition.json"}) {
    EXPECT_EQ(read_file(dir / "a" / f), read_file(dir / "b" / f)) << f;
  }
  const auto plan = domains::load_partition(dir / "a" / "partition.json");
  EXPECT_NO_THROW(plan.validate(domains::load_csv(dir / "a" / "source.csv").size()));
  fs::remove_all(dir);
}

TEST(GenDataTest, ZeroShiftTargetEqualsSource) {
  const auto dir = testing::temp_dir("zeroshift");
  cli::cmd_gen_data(small(R"({"shift": {"rotation_angle": 0.0}})"), dir);
  EXPECT_EQ(read_file(dir / "source.csv"), read_file(dir / "target.csv"));
  fs::remove_all(dir);
}

TEST(PretrainTest, MetricsLineCountAndFields) {
  const auto dir = testing::temp_dir("metrics");
  cli::cmd_pretrain(small(), dir);
  const std::string m = read_file(dir / "metrics.jsonl");
  EXPECT_EQ(line_count(m), 6u);
  const json first = json::parse(m.substr(0, m.find('\n')));
  std::vector<std::string> keys;
  for (const auto& [k, v] : first.items()) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  std::vector<std::string> want{"comm_scalars", "comm_vector_entries", "guide_norm", "jacobian_norm",
                                "jacobian_variance", "learning_rate", "round", "source_loss"};
  EXPECT_EQ(keys, want);
  EXPECT_TRUE(fs::exists(dir / "model.txt"));
  EXPECT_TRUE(fs::exists(dir / "history.jsonl"));
  fs::remove_all(dir);
}

TEST(PretrainTest, EarlyStopShortensMetrics) {
  const auto dir = testing::temp_dir("early");
  cli::cmd_pretrain(small(R"({"training": {"rounds": 50, "early_stop_patience": 2,
                                           "lr_schedule": {"initial": 1e-12}}})"),
                    dir);
  const auto summary = json::parse(read_file(dir / "pretrain_summary.json"));
  EXPECT_EQ(summary["stop_reason"], "early-stop");
  EXPECT_EQ(line_count(read_file(dir / "metrics.jsonl")), summary["rounds_run"].get<std::size_t>());
  EXPECT_LT(summary["rounds_run"].get<std::size_t>(), 50u);
  fs::remove_all(dir);
}

TEST(PretrainTest, FedAvgEqualsUnregularizedFedGtstExceptScalars) {
  const auto dir = testing::temp_dir("reduce");
  cli::cmd_pretrain(small(R"({"training": {"algorithm": "fedavg"}})"), dir / "avg");
  cli::cmd_pretrain(small(R"({"training": {"xi": 0.0, "std_subset_fraction": 0.0}})"), dir / "gt");
  std::istringstream a(read_file(dir / "avg" / "metrics.jsonl"));
  std::istringstream b(read_file(dir / "gt" / "metrics.jsonl"));
  std::string la, lb;
  int n = 0;
  while (std::getline(a, la) && std::getline(b, lb)) {
    json ja = json::parse(la), jb = json::parse(lb);
    EXPECT_EQ(ja["comm_scalars"], 0);
    EXPECT_GT(jb["comm_scalars"].get<int>(), 0);
    ja.erase("comm_scalars");
    jb.erase("comm_scalars");
    EXPECT_EQ(ja.dump(), jb.dump());
    ++n;
  }
  EXPECT_EQ(n, 6);
  fs::remove_all(dir);
}

TEST(PretrainTest, CommunicationCounts) {
  const auto dir = testing::temp_dir("comm");
  cli::cmd_pretrain(small(), dir / "gt");
  cli::cmd_pretrain(small(R"({"training": {"algorithm": "fediir-lite"}})"), dir / "iir");
  const std::size_t dim = 5 * 4;
  std::istringstream g(read_file(dir / "gt" / "metrics.jsonl"));
  std::istringstream f(read_file(dir / "iir" / "metrics.jsonl"));
  std::string lg, lf;
  while (std::getline(g, lg) && std::getline(f, lf)) {
    const json jg = json::parse(lg), jf = json::parse(lf);
    EXPECT_EQ(jg["comm_vector_entries"].get<std::size_t>(), dim * 3 * 2);
    EXPECT_EQ(jg["comm_scalars"].get<std::size_t>(), 3u + 1u);
    EXPECT_GE(jf["comm_vector_entries"].get<double>(), 1.5 * jg["comm_vector_entries"].get<double>());
  }
  fs::remove_all(dir);
}

TEST(ModelFileTest, RoundTripAndErrors) {
  const models::WeightVector w(Vec{0.1, -2.5e-300, 3.0, 1.0 / 3.0});
  EXPECT_EQ(cli::parse_model_file(cli::model_file(w)), w);
  EXPECT_THROW(cli::parse_model_file("bogus\n"), ConfigError);
  try {
    cli::parse_model_file("fedgtst-model v1 2\n1.0\nabc\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(TransferTest, SchemaAndFrozenBlock) {
  const auto dir = testing::temp_dir("transfer");
  const auto c = small(R"({"model": {"kind": "mlp", "hidden": [5]}})");
  cli::cmd_pretrain(c, dir);
  cli::cmd_transfer(c, dir / "model.txt", dir);
  const json j = json::parse(read_file(dir / "transfer.json"));
  for (const char* k : {"target_loss", "target_accuracy", "epochs_used"}) EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j["frozen_block_hash_before"], j["frozen_block_hash_after"]);
  EXPECT_GT(j["frozen_split_index"].get<int>(), 0);
  fs::remove_all(dir);
}

TEST(TransferTest, ZeroShiftReproducesSourceAccuracy) {
  // N = 2000 target points, half held out for evaluation.
  const auto c = small(R"({"data": {"samples_per_class": 500}, "shift": {"rotation_angle": 0.0},
                           "training": {"algorithm": "fedavg", "rounds": 30},
                           "transfer": {"epochs": 0}})");
  const auto d = cli::build_domains(c);
  const auto pre = cli::run_pretrain(c, d, c.seed, federation::Algorithm::kFedAvg);
  const double src = models::accuracy(pre.problem.spec, pre.result.final_weights, d.source);
  const auto tr = cli::run_transfer(c, d, pre.result.final_weights);
  EXPECT_NEAR(tr.test.target_accuracy.value(), src, 0.02);
}

TEST(VerifyBoundsTest, CertifiedConvexRun) {
  const auto dir = testing::temp_dir("verify");
  const auto c = cli::load_config(fs::path(FEDGTST_SOURCE_DIR) / "configs" / "round_bound.json");
  cli::cmd_pretrain(c, dir);
  cli::cmd_verify_bounds(c, dir / "history.jsonl", dir);
  const json s = json::parse(read_file(dir / "bounds_summary.json"));
  ASSERT_EQ(s["reports"].size(), 2u);
  for (const auto& r : s["reports"]) {
    EXPECT_TRUE(r["certified"].get<bool>());
    EXPECT_EQ(r["violations"], 0);
  }
  EXPECT_EQ(line_count(read_file(dir / "bounds_round-ub.jsonl")), 200u);
  fs::remove_all(dir);
}

TEST(VerifyBoundsTest, MlpRunIsDiagnostic) {
  const auto dir = testing::temp_dir("verify_mlp");
  const auto c = small(R"({"model": {"kind": "mlp", "hidden": [3]}, "training": {"algorithm": "fedavg"},
                           "bounds": {"theorem2": false}})");
  cli::cmd_pretrain(c, dir);
  cli::cmd_verify_bounds(c, dir / "history.jsonl", dir);
  const json s = json::parse(read_file(dir / "bounds_summary.json"));
  for (const auto& r : s["reports"]) EXPECT_FALSE(r["certified"].get<bool>());
  const std::string rows = read_file(dir / "bounds_round-ub.jsonl");
  EXPECT_NE(rows.find("\"certified\":false"), std::string::npos);
  fs::remove_all(dir);
}

TEST(VerifyBoundsTest, MalformedHistoryNamesLine) {
  const auto dir = testing::temp_dir("verify_bad");
  const auto c = small();
  cli::cmd_pretrain(c, dir);
  std::string h = read_file(dir / "history.jsonl");
  h += "{\"type\": \"round\"\n";
  write_file(dir / "bad.jsonl", h);
  try {
    cli::cmd_verify_bounds(c, dir / "bad.jsonl", dir);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 8"), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}

TEST(CompareTest, CellsAggregateSeedsAndAreDeterministic) {
  const auto dir = testing::temp_dir("compare");
  const auto c = small(R"({"compare": {"algorithms": ["fedavg", "fedgtst", "fedavg"], "seeds": [1, 2, 3]}})");
  cli::cmd_compare(c, dir);
  const std::string runs = read_file(dir / "compare_runs.csv");
  EXPECT_EQ(line_count(runs), 1u + 9u);
  std::istringstream in(read_file(dir / "compare_summary.csv"));
  std::string header, avg1, gt, avg2;
  std::getline(in, header);
  std::getline(in, avg1);
  std::getline(in, gt);
  std::getline(in, avg2);
  EXPECT_NE(header.find("jacobian_variance"), std::string::npos);
  EXPECT_NE(header.find("jacobian_norm"), std::string::npos);
  EXPECT_EQ(avg1.substr(0, avg1.find(',', 7)), "fedavg,3");
  EXPECT_EQ(avg1, avg2);
  fs::remove_all(dir);
}

TEST(BinaryTest, ExitCodes) {
  const auto dir = testing::temp_dir("exit");
  write_file(dir / "good.json", kSmall);
  write_file(dir / "typo.json", R"({"sed": 1})");
  json diverge = json::parse(kSmall);
  diverge["model"]["kind"] = "linear-regression";
  diverge["training"]["algorithm"] = "fedavg";
  diverge["training"]["local_steps"] = 5;
  diverge["training"]["lr_schedule"]["initial"] = 1e200;
  write_file(dir / "diverge.json", diverge.dump());
  const std::string d = dir.string();
  EXPECT_EQ(run_cli("gen-data --config " + d + "/good.json --out " + d + "/gen"), 0);
  EXPECT_EQ(run_cli("gen-data --config " + d + "/typo.json --out " + d + "/gen"), 2);
  EXPECT_EQ(run_cli("pretrain --config " + d + "/diverge.json --out " + d + "/div"), 3);
  EXPECT_EQ(run_cli("gen-data --config " + d + "/good.json --out /proc/nope"), 4);
  EXPECT_EQ(run_cli("no-such-command"), 2);
  EXPECT_EQ(run_cli("transfer --config " + d + "/good.json --model " + d + "/good.json --out " + d + "/t"), 2);
  fs::remove_all(dir);
}

TEST(BinaryTest, ThreadsDoNotChangeMetrics) {
  const auto dir = testing::temp_dir("threads");
  write_file(dir / "c.json", kSmall);
  const std::string d = dir.string();
  ASSERT_EQ(run_cli("pretrain --config " + d + "/c.json --out " + d + "/t1 --threads 1"), 0);
  ASSERT_EQ(run_cli("pretrain --config " + d + "/c.json --out " + d + "/t8 --threads 8"), 0);
  EXPECT_EQ(read_file(dir / "t1" / "metrics.jsonl"), read_file(dir / "t8" / "metrics.jsonl"));
  EXPECT_EQ(read_file(dir / "t1" / "history.jsonl"), read_file(dir / "t8" / "history.jsonl"));
  fs::remove_all(dir);
}

}  // namespace
}  // namespace fedgtst

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

#ifndef FEDGTST_CLI_EXPERIMENT_HPP_
#define FEDGTST_CLI_EXPERIMENT_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedgtst/bounds.hpp"
#include "fedgtst/domains.hpp"
#include "fedgtst/federation.hpp"
#include "fedgtst/models.hpp"
#include "fedgtst/transfer.hpp"

namespace fedgtst::cli {

struct ModelSection {
  models::ModelKind kind = models::ModelKind::kLogisticClassifier;
  bool bias = true;
  std::vector<std::size_t> hidden;
  models::Activation activation = models::Activation::kTanh;
  std::optional<std::size_t> split_index;  // unset: the model's default split
  double init_scale = 0.01;
};

struct DataSection {
  int num_classes = 10;
  std::size_t dim = 20;
  std::size_t samples_per_class = 100;
  double class_separation = 2.0;
  std::optional<std::filesystem::path> source_csv;
  std::optional<std::filesystem::path> target_csv;
  std::optional<std::filesystem::path> partition_file;
};

struct PartitionSection {
  domains::PartitionScheme scheme = domains::PartitionScheme::kLabelSubset;
  std::size_t num_clients = 50;
  std::size_t classes_per_client = 2;
  double concentration = 0.5;
};

struct TransferSection {
  double lr = 0.0;  // <= 0 picks 1 / alpha_head
  int epochs = 100;
  double train_fraction = 0.5;
};

struct BoundsSection {
  bool round_ub = true;
  bool telescoped = true;
  bool lemma1 = false;
  bool theorem2 = true;
  bool theorem1 = false;
  transfer::AscentOptions ascent;
  int head_max_steps = 20000;
  int random_feature_draws = 8;
};

struct CompareSection {
  std::vector<federation::Algorithm> algorithms{federation::Algorithm::kFedAvg,
                                                federation::Algorithm::kFedGtst,
                                                federation::Algorithm::kFedIirLite};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int stats_first_round = 10;
  int stats_last_round = 100;
};

struct ExperimentConfig {
  ModelSection model;
  DataSection data;
  domains::ShiftSpec shift;
  PartitionSection partition;
  federation::RoundConfig round;
  int rounds = 100;
  int early_stop_patience = 0;
  TransferSection transfer;
  BoundsSection bounds;
  CompareSection compare;
  std::uint64_t seed = 1;
  int threads = 1;
  std::filesystem::path output_dir = "out";

  void validate() const;
};

// Parses and validates a JSON config. Unknown keys are rejected. Relative CSV
// and partition paths resolve against `base_dir`.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

// Applies --seed / --threads overrides.
void apply_overrides(ExperimentConfig& config, std::optional<std::uint64_t> seed,
                     std::optional<int> threads);

struct Domains {
  Dataset source;
  Dataset target;
  domains::PartitionPlan plan;
};
Domains build_domains(const ExperimentConfig& config);

models::ModelSpec model_spec(const ExperimentConfig& config, const Dataset& source);

struct PretrainOutput {
  federation::FederatedProblem problem;
  federation::RoundConfig round_config;
  models::WeightVector initial;
  federation::PretrainResult result;
  bounds::TraceRegime regime;
};
// Pretraining with the data of `domains`; `training_seed` drives the
// initialization and every per-round stream.
PretrainOutput run_pretrain(const ExperimentConfig& config, const Domains& domains,
                            std::uint64_t training_seed,
                            federation::Algorithm algorithm);

struct TransferOutput {
  models::WeightVector weights;
  transfer::TransferResult train;  // finetuning result on the target training split
  transfer::TransferResult test;   // evaluation on the target test split
};
TransferOutput run_transfer(const ExperimentConfig& config, const Domains& domains,
                            const models::WeightVector& pretrained);

// Serializers shared by the subcommands.
std::string metrics_line(const federation::RoundRecord& record);
std::string model_file(const models::WeightVector& w);
models::WeightVector parse_model_file(const std::string& text);

std::string history_file(const PretrainOutput& out);
struct ParsedHistory {
  bounds::History history;
  std::optional<models::WeightVector> initial_weights;
  std::vector<models::WeightVector> round_weights;  // h_1 .. h_P when recorded
};
ParsedHistory parse_history_file(const std::string& text);

// Mean of a per-round statistic over rounds [first, last] of a history.
double mean_over_rounds(const std::vector<federation::RoundRecord>& history, int first, int last,
                        double (*field)(const federation::RoundRecord&));

struct CompareRow {
  federation::Algorithm algorithm;
  std::uint64_t seed = 0;
  double target_accuracy = 0.0;
  double mean_variance = 0.0;
  double mean_jacobian_norm = 0.0;
};
std::vector<CompareRow> run_compare(const ExperimentConfig& config);
std::string compare_runs_csv(const std::vector<CompareRow>& rows);
std::string compare_summary_csv(const ExperimentConfig& config, const std::vector<CompareRow>& rows);

// Subcommands. Each writes into `out_dir` and returns a short status line.
std::string cmd_gen_data(const ExperimentConfig& config, const std::filesystem::path& out_dir);
std::string cmd_pretrain(const ExperimentConfig& config, const std::filesystem::path& out_dir);
std::string cmd_transfer(const ExperimentConfig& config, const std::filesystem::path& model_path,
                         const std::filesystem::path& out_dir);
std::string cmd_verify_bounds(const ExperimentConfig& config,
                              const std::filesystem::path& history_path,
                              const std::filesystem::path& out_dir);
std::string cmd_compare(const ExperimentConfig& config, const std::filesystem::path& out_dir);

// Process exit code for an exception: 2 config, 3 numerical, 4 I/O, 1 other.
int exit_code_for(const std::exception& e);

}  // namespace fedgtst::cli

#endif  // FEDGTST_CLI_EXPERIMENT_HPP_

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

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "fedgtst/cli/experiment.hpp"

namespace {

namespace fs = std::filesystem;
using fedgtst::cli::ExperimentConfig;

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "Output directory (defaults to the config's output_dir)");
  cmd->add_option("--seed", f.seed, "Override the master seed");
  cmd->add_option("--threads", f.threads, "Worker threads; results do not depend on it")
      ->check(CLI::PositiveNumber);
}

ExperimentConfig load(const CommonFlags& f, fs::path& out_dir) {
  ExperimentConfig c = fedgtst::cli::load_config(f.config);
  fedgtst::cli::apply_overrides(c, f.seed, f.threads);
  out_dir = f.out.empty() ? c.output_dir : fs::path(f.out);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated transfer-learning simulator"};
  app.require_subcommand(1);

  CommonFlags gen_flags, pre_flags, tr_flags, vb_flags, cmp_flags;
  std::string model_path, history_path;

  auto* gen = app.add_subcommand("gen-data", "Write source/target CSVs and the client partition");
  add_common(gen, gen_flags);
  auto* pre = app.add_subcommand("pretrain", "Run federated pretraining");
  add_common(pre, pre_flags);
  auto* tr = app.add_subcommand("transfer", "Finetune a pretrained model on the target domain");
  add_common(tr, tr_flags);
  tr->add_option("--model", model_path, "Model file written by pretrain")->required()->check(CLI::ExistingFile);
  auto* vb = app.add_subcommand("verify-bounds", "Check the loss bounds against a training history");
  add_common(vb, vb_flags);
  vb->add_option("--history", history_path, "history.jsonl written by pretrain")->required()->check(CLI::ExistingFile);
  auto* cmp = app.add_subcommand("compare", "Compare algorithms over a list of seeds");
  add_common(cmp, cmp_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    fs::path out;
    std::string status;
    if (*gen) {
      status = fedgtst::cli::cmd_gen_data(load(gen_flags, out), out);
    } else if (*pre) {
      status = fedgtst::cli::cmd_pretrain(load(pre_flags, out), out);
    } else if (*tr) {
      status = fedgtst::cli::cmd_transfer(load(tr_flags, out), model_path, out);
    } else if (*vb) {
      status = fedgtst::cli::cmd_verify_bounds(load(vb_flags, out), history_path, out);
    } else if (*cmp) {
      status = fedgtst::cli::cmd_compare(load(cmp_flags, out), out);
    }
    std::cout << status << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return fedgtst::cli::exit_code_for(e);
  }
}

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

#include "fedgtst/cli/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace fedgtst::cli {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  if (f.bad()) throw IoError("failed reading '" + path.string() + "'");
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f << text;
  f.flush();
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

// Rejects keys outside `allowed` so typos fail loudly.
void expect_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
    if (!known) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_relative() && !base.empty() ? base / path : path;
}

double rr_variance(const federation::RoundRecord& r) { return r.stats.variance; }
double rr_norm(const federation::RoundRecord& r) { return r.stats.avg_norm; }

}  // namespace

void ExperimentConfig::validate() const {
  if (data.num_classes < 1) throw ConfigError("data.num_classes must be >= 1");
  if (data.dim < 1) throw ConfigError("data.dim must be >= 1");
  if (data.samples_per_class < 1) throw ConfigError("data.samples_per_class must be >= 1");
  if (!(data.class_separation > 0.0)) throw ConfigError("data.class_separation must be positive");
  if (!(shift.label_noise_rate >= 0.0 && shift.label_noise_rate < 0.5)) {
    throw ConfigError("shift.label_noise_rate must lie in [0, 0.5)");
  }
  if (partition.num_clients < 1) throw ConfigError("partition.num_clients must be >= 1");
  if (partition.scheme == domains::PartitionScheme::kLabelSubset && partition.classes_per_client < 1) {
    throw ConfigError("partition.classes_per_client must be >= 1");
  }
  if (partition.scheme == domains::PartitionScheme::kDirichlet && !(partition.concentration > 0.0)) {
    throw ConfigError("partition.concentration must be positive");
  }
  if (!(model.init_scale >= 0.0)) throw ConfigError("model.init_scale must be non-negative");
  round.validate();
  if (rounds < 1) throw ConfigError("training.rounds must be >= 1");
  if (transfer.epochs < 0) throw ConfigError("transfer.epochs must be >= 0");
  if (!(transfer.train_fraction > 0.0 && transfer.train_fraction < 1.0)) {
    throw ConfigError("transfer.train_fraction must lie in (0, 1)");
  }
  if (bounds.ascent.restarts < 1) throw ConfigError("bounds.restarts must be >= 1");
  if (bounds.ascent.ascent_steps < 0) throw ConfigError("bounds.ascent_steps must be >= 0");
  if (!(bounds.ascent.weight_radius >= 0.0)) throw ConfigError("bounds.weight_radius must be >= 0");
  if (bounds.head_max_steps < 0) throw ConfigError("bounds.head_max_steps must be >= 0");
  if (bounds.random_feature_draws < 0) throw ConfigError("bounds.random_feature_draws must be >= 0");
  if (compare.algorithms.empty()) throw ConfigError("compare.algorithms must not be empty");
  if (compare.seeds.empty()) throw ConfigError("compare.seeds must not be empty");
  if (compare.stats_first_round > compare.stats_last_round) {
    throw ConfigError("compare.stats_rounds must be an increasing pair");
  }
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

ExperimentConfig parse_config(const std::string& text, const fs::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  expect_keys(root, {"model", "data", "shift", "partition", "training", "transfer", "bounds", "compare",
                     "seed", "threads", "output_dir"},
              "config");
  ExperimentConfig c;
  read(root, "seed", c.seed, "config");
  read(root, "threads", c.threads, "config");
  if (root.contains("output_dir")) c.output_dir = root.at("output_dir").get<std::string>();

  if (root.contains("model")) {
    const json& m = root.at("model");
    expect_keys(m, {"kind", "bias", "hidden", "activation", "split_index", "init_scale"}, "model");
    if (m.contains("kind")) c.model.kind = models::parse_model_kind(m.at("kind").get<std::string>());
    read(m, "bias", c.model.bias, "model");
    read(m, "hidden", c.model.hidden, "model");
    if (m.contains("activation")) c.model.activation = models::parse_activation(m.at("activation").get<std::string>());
    if (m.contains("split_index")) {
      const json& si = m.at("split_index");
      if (si.is_string()) {
        if (si.get<std::string>() != "default") throw ConfigError("model.split_index must be an integer or \"default\"");
      } else {
        std::size_t v = 0;
        read(m, "split_index", v, "model");
        c.model.split_index = v;
      }
    }
    read(m, "init_scale", c.model.init_scale, "model");
  }
  if (root.contains("data")) {
    const json& d = root.at("data");
    expect_keys(d, {"num_classes", "dim", "samples_per_class", "class_separation", "source_csv", "target_csv",
                    "partition_file"},
                "data");
    read(d, "num_classes", c.data.num_classes, "data");
    read(d, "dim", c.data.dim, "data");
    read(d, "samples_per_class", c.data.samples_per_class, "data");
    read(d, "class_separation", c.data.class_separation, "data");
    if (d.contains("source_csv")) c.data.source_csv = resolve(base_dir, d.at("source_csv").get<std::string>());
    if (d.contains("target_csv")) c.data.target_csv = resolve(base_dir, d.at("target_csv").get<std::string>());
    if (d.contains("partition_file")) {
      c.data.partition_file = resolve(base_dir, d.at("partition_file").get<std::string>());
    }
  }
  if (root.contains("shift")) {
    const json& s = root.at("shift");
    expect_keys(s, {"rotation_angle", "mean_translation", "label_noise_rate", "seed"}, "shift");
    read(s, "rotation_angle", c.shift.rotation_angle, "shift");
    read(s, "mean_translation", c.shift.mean_translation, "shift");
    read(s, "label_noise_rate", c.shift.label_noise_rate, "shift");
    read(s, "seed", c.shift.seed, "shift");
  }
  if (root.contains("partition")) {
    const json& p = root.at("partition");
    expect_keys(p, {"scheme", "num_clients", "classes_per_client", "concentration"}, "partition");
    if (p.contains("scheme")) c.partition.scheme = domains::parse_partition_scheme(p.at("scheme").get<std::string>());
    read(p, "num_clients", c.partition.num_clients, "partition");
    read(p, "classes_per_client", c.partition.classes_per_client, "partition");
    read(p, "concentration", c.partition.concentration, "partition");
  }
  if (root.contains("training")) {
    const json& t = root.at("training");
    expect_keys(t, {"algorithm", "rounds", "participation_fraction", "std_subset_fraction", "xi", "lr_schedule",
                    "local_steps", "batch", "optimizer", "early_stop_patience"},
                "training");
    auto& r = c.round;
    if (t.contains("algorithm")) r.algorithm = federation::parse_algorithm(t.at("algorithm").get<std::string>());
    read(t, "rounds", c.rounds, "training");
    read(t, "participation_fraction", r.participation_fraction, "training");
    read(t, "std_subset_fraction", r.std_subset_fraction, "training");
    read(t, "xi", r.xi, "training");
    read(t, "local_steps", r.local_steps, "training");
    read(t, "early_stop_patience", c.early_stop_patience, "training");
    if (t.contains("lr_schedule")) {
      const json& l = t.at("lr_schedule");
      expect_keys(l, {"kind", "initial", "factor", "period"}, "training.lr_schedule");
      if (l.contains("kind")) r.lr_schedule.kind = federation::parse_lr_schedule(l.at("kind").get<std::string>());
      read(l, "initial", r.lr_schedule.initial, "training.lr_schedule");
      read(l, "factor", r.lr_schedule.factor, "training.lr_schedule");
      read(l, "period", r.lr_schedule.period, "training.lr_schedule");
    }
    if (t.contains("batch")) {
      const json& b = t.at("batch");
      expect_keys(b, {"mode", "size"}, "training.batch");
      std::string mode = "full";
      read(b, "mode", mode, "training.batch");
      if (mode == "full") {
        r.batch.full_batch = true;
      } else if (mode == "minibatch") {
        r.batch.full_batch = false;
        read(b, "size", r.batch.minibatch_size, "training.batch");
      } else {
        throw ConfigError("training.batch.mode must be \"full\" or \"minibatch\"");
      }
    }
    if (t.contains("optimizer")) {
      const json& o = t.at("optimizer");
      expect_keys(o, {"kind", "beta1", "beta2", "epsilon"}, "training.optimizer");
      std::string kind = "gd";
      read(o, "kind", kind, "training.optimizer");
      if (kind == "gd") {
        r.optimizer.kind = federation::OptimizerKind::kGd;
      } else if (kind == "adam") {
        r.optimizer.kind = federation::OptimizerKind::kAdam;
      } else {
        throw ConfigError("training.optimizer.kind must be \"gd\" or \"adam\"");
      }
      read(o, "beta1", r.optimizer.beta1, "training.optimizer");
      read(o, "beta2", r.optimizer.beta2, "training.optimizer");
      read(o, "epsilon", r.optimizer.epsilon, "training.optimizer");
    }
  }
  if (root.contains("transfer")) {
    const json& t = root.at("transfer");
    expect_keys(t, {"lr", "epochs", "train_fraction"}, "transfer");
    read(t, "lr", c.transfer.lr, "transfer");
    read(t, "epochs", c.transfer.epochs, "transfer");
    read(t, "train_fraction", c.transfer.train_fraction, "transfer");
  }
  if (root.contains("bounds")) {
    const json& b = root.at("bounds");
    expect_keys(b, {"round_ub", "telescoped", "lemma1", "theorem2", "theorem1", "restarts", "ascent_steps",
                    "weight_radius", "head_max_steps", "random_feature_draws"},
                "bounds");
    read(b, "round_ub", c.bounds.round_ub, "bounds");
    read(b, "telescoped", c.bounds.telescoped, "bounds");
    read(b, "lemma1", c.bounds.lemma1, "bounds");
    read(b, "theorem2", c.bounds.theorem2, "bounds");
    read(b, "theorem1", c.bounds.theorem1, "bounds");
    read(b, "restarts", c.bounds.ascent.restarts, "bounds");
    read(b, "ascent_steps", c.bounds.ascent.ascent_steps, "bounds");
    read(b, "weight_radius", c.bounds.ascent.weight_radius, "bounds");
    read(b, "head_max_steps", c.bounds.head_max_steps, "bounds");
    read(b, "random_feature_draws", c.bounds.random_feature_draws, "bounds");
  }
  if (root.contains("compare")) {
    const json& k = root.at("compare");
    expect_keys(k, {"algorithms", "seeds", "stats_rounds"}, "compare");
    if (k.contains("algorithms")) {
      c.compare.algorithms.clear();
      for (const auto& a : k.at("algorithms")) c.compare.algorithms.push_back(federation::parse_algorithm(a.get<std::string>()));
    }
    read(k, "seeds", c.compare.seeds, "compare");
    if (k.contains("stats_rounds")) {
      std::vector<int> sr;
      read(k, "stats_rounds", sr, "compare");
      if (sr.size() != 2) throw ConfigError("compare.stats_rounds must be [first, last]");
      c.compare.stats_first_round = sr[0];
      c.compare.stats_last_round = sr[1];
    }
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  return parse_config(read_text(path), path.parent_path());
}

void apply_overrides(ExperimentConfig& config, std::optional<std::uint64_t> seed,
                     std::optional<int> threads) {
  if (seed) config.seed = *seed;
  if (threads) config.threads = *threads;
  config.validate();
}

Domains build_domains(const ExperimentConfig& c) {
  Domains d;
  if (c.data.source_csv) {
    d.source = domains::load_csv(*c.data.source_csv);
  } else {
    d.source = domains::generate_gaussian_mixture(c.data.num_classes, c.data.dim, c.data.samples_per_class,
                                                  c.data.class_separation, derive_seed(c.seed, "data"));
  }
  if (c.data.target_csv) {
    d.target = domains::load_csv(*c.data.target_csv, d.source.num_classes);
  } else {
    domains::ShiftSpec s = c.shift;
    if (s.seed == 0) s.seed = derive_seed(c.seed, "shift");
    d.target = domains::apply_shift(d.source, s);
  }
  if (d.target.dim() != d.source.dim()) throw ConfigError("source and target feature dimensions differ");
  if (c.data.partition_file) {
    d.plan = domains::load_partition(*c.data.partition_file);
    d.plan.validate(d.source.size());
  } else {
    const std::uint64_t ps = derive_seed(c.seed, "partition");
    switch (c.partition.scheme) {
      case domains::PartitionScheme::kLabelSubset:
        d.plan = domains::partition_label_subset(d.source, c.partition.num_clients,
                                                 c.partition.classes_per_client, ps);
        break;
      case domains::PartitionScheme::kDirichlet:
        d.plan = domains::partition_dirichlet(d.source, c.partition.num_clients, c.partition.concentration, ps);
        break;
      case domains::PartitionScheme::kIid:
        d.plan = domains::partition_iid(d.source, c.partition.num_clients, ps);
        break;
    }
  }
  return d;
}

models::ModelSpec model_spec(const ExperimentConfig& c, const Dataset& source) {
  models::ModelSpec spec;
  const std::size_t classes = static_cast<std::size_t>(source.num_classes);
  switch (c.model.kind) {
    case models::ModelKind::kLinearRegression:
      spec = models::ModelSpec::linear_regression(source.dim(), c.model.bias);
      break;
    case models::ModelKind::kLogisticClassifier:
      spec = models::ModelSpec::logistic(source.dim(), classes, c.model.bias);
      break;
    case models::ModelKind::kMlp:
      spec = models::ModelSpec::mlp(source.dim(), c.model.hidden, classes, c.model.activation);
      spec.bias = c.model.bias;
      break;
  }
  spec.split_index = c.model.split_index.value_or(spec.default_split_index());
  spec.validate();
  return spec;
}

PretrainOutput run_pretrain(const ExperimentConfig& c, const Domains& d, std::uint64_t training_seed,
                            federation::Algorithm algorithm) {
  PretrainOutput out;
  const models::ModelSpec spec = model_spec(c, d.source);
  out.problem = federation::make_problem(spec, d.source, d.plan);
  out.round_config = c.round;
  out.round_config.algorithm = algorithm;
  out.round_config.threads = c.threads;
  out.round_config.seed = derive_seed(training_seed, "training");
  if (algorithm == federation::Algorithm::kFedAvg) out.round_config.std_subset_fraction = 0.0;
  out.initial = models::init_weights(spec, derive_seed(training_seed, "init"), c.model.init_scale);
  out.result = federation::run_pretraining(out.problem, out.initial, out.round_config, c.rounds,
                                           c.early_stop_patience);
  out.regime = bounds::TraceRegime::from(out.problem, out.round_config,
                                         out.problem.mean_client_loss(out.initial));
  return out;
}

TransferOutput run_transfer(const ExperimentConfig& c, const Domains& d, const models::WeightVector& pretrained) {
  const models::ModelSpec spec = model_spec(c, d.source);
  if (pretrained.size() != spec.total_dim()) {
    throw ConfigError("model has " + std::to_string(pretrained.size()) + " weights, config expects " +
                      std::to_string(spec.total_dim()));
  }
  auto [train, test] = domains::split_train_test(d.target, c.transfer.train_fraction,
                                                 derive_seed(c.seed, "target-split"));
  if (train.empty() || test.empty()) throw ConfigError("target split leaves an empty train or test set");
  const double lr = c.transfer.lr > 0.0 ? c.transfer.lr : transfer::default_head_learning_rate(spec, pretrained, train);
  TransferOutput out;
  auto [w, res] = transfer::finetune_classifier(spec, pretrained, train, lr, c.transfer.epochs);
  out.train = res;
  out.test = transfer::evaluate_target(spec, w, test);
  out.test.epochs_used = res.epochs_used;
  out.test.converged = res.converged;
  out.weights = std::move(w);
  return out;
}

std::string metrics_line(const federation::RoundRecord& r) {
  json j;
  j["round"] = r.round;
  j["source_loss"] = r.source_loss;
  j["jacobian_norm"] = r.stats.avg_norm;
  j["jacobian_variance"] = r.stats.variance;
  j["guide_norm"] = r.guide_norm;
  j["learning_rate"] = r.learning_rate;
  j["comm_scalars"] = r.comm.scalars;
  j["comm_vector_entries"] = r.comm.vector_entries;
  return j.dump();
}

std::string model_file(const models::WeightVector& w) {
  std::string out = "fedgtst-model v1 " + std::to_string(w.size()) + "\n";
  for (double v : w.values) {
    out += format_double(v);
    out += '\n';
  }
  return out;
}

models::WeightVector parse_model_file(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("model file is empty");
  std::istringstream head(line);
  std::string magic, version;
  std::size_t n = 0;
  if (!(head >> magic >> version >> n) || magic != "fedgtst-model") {
    throw ConfigError("model file line 1: missing 'fedgtst-model' header");
  }
  if (version != "v1") throw ConfigError("model file line 1: unsupported version '" + version + "'");
  models::WeightVector w;
  w.values.reserve(n);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
    if (ec != std::errc() || ptr != line.data() + line.size() || !std::isfinite(v)) {
      throw ConfigError("model file line " + std::to_string(lineno) + ": invalid weight '" + line + "'");
    }
    w.values.push_back(v);
  }
  if (w.size() != n) {
    throw ConfigError("model file declares " + std::to_string(n) + " weights but holds " + std::to_string(w.size()));
  }
  return w;
}

std::string history_file(const PretrainOutput& out) {
  json header = json::parse(bounds::history_header_json(out.regime));
  header["initial_weights"] = out.initial.values;
  std::string text = header.dump() + "\n";
  for (const auto& r : out.result.history) {
    json line = json::parse(bounds::round_record_json(r));
    line["global_weights"] = r.global_weights.values;
    text += line.dump();
    text += '\n';
  }
  return text;
}

ParsedHistory parse_history_file(const std::string& text) {
  ParsedHistory out;
  out.history = bounds::parse_history(text);
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    if (first) {
      if (j.contains("initial_weights")) out.initial_weights = models::WeightVector(j.at("initial_weights").get<Vec>());
      first = false;
    } else if (j.contains("global_weights")) {
      out.round_weights.emplace_back(j.at("global_weights").get<Vec>());
    }
  }
  for (std::size_t i = 0; i < out.round_weights.size() && i < out.history.rounds.size(); ++i) {
    out.history.rounds[i].global_weights = out.round_weights[i];
  }
  return out;
}

double mean_over_rounds(const std::vector<federation::RoundRecord>& history, int first, int last,
                        double (*field)(const federation::RoundRecord&)) {
  double s = 0.0;
  int n = 0;
  for (const auto& r : history) {
    if (r.round < first || r.round > last) continue;
    s += field(r);
    ++n;
  }
  return n == 0 ? std::nan("") : s / n;
}

std::vector<CompareRow> run_compare(const ExperimentConfig& c) {
  const Domains d = build_domains(c);
  std::vector<CompareRow> rows;
  for (auto alg : c.compare.algorithms) {
    for (std::uint64_t seed : c.compare.seeds) {
      const PretrainOutput pre = run_pretrain(c, d, seed, alg);
      const TransferOutput tr = run_transfer(c, d, pre.result.final_weights);
      CompareRow row;
      row.algorithm = alg;
      row.seed = seed;
      row.target_accuracy = tr.test.target_accuracy.value_or(std::nan(""));
      const auto& h = pre.result.history;
      row.mean_variance = mean_over_rounds(h, c.compare.stats_first_round, c.compare.stats_last_round, rr_variance);
      row.mean_jacobian_norm = mean_over_rounds(h, c.compare.stats_first_round, c.compare.stats_last_round, rr_norm);
      rows.push_back(row);
    }
  }
  return rows;
}

std::string compare_runs_csv(const std::vector<CompareRow>& rows) {
  std::string out = "algorithm,seed,target_accuracy,mean_jacobian_variance,mean_jacobian_norm\n";
  for (const auto& r : rows) {
    out += federation::to_string(r.algorithm) + "," + std::to_string(r.seed) + "," + format_double(r.target_accuracy) +
           "," + format_double(r.mean_variance) + "," + format_double(r.mean_jacobian_norm) + "\n";
  }
  return out;
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  const double sd = v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0;
  return {m, sd};
}

}  // namespace

std::string compare_summary_csv(const ExperimentConfig& c, const std::vector<CompareRow>& rows) {
  std::string out =
      "algorithm,runs,target_accuracy_mean,target_accuracy_std,jacobian_variance_mean,jacobian_variance_std,"
      "jacobian_norm_mean,jacobian_norm_std\n";
  // One row per listed entry; run_compare emits each entry's seeds contiguously.
  const std::size_t per = c.compare.seeds.size();
  for (std::size_t i = 0; i < c.compare.algorithms.size(); ++i) {
    const auto alg = c.compare.algorithms[i];
    std::vector<double> acc, var, nrm;
    for (std::size_t k = i * per; k < std::min(rows.size(), (i + 1) * per); ++k) {
      const auto& r = rows[k];
      acc.push_back(r.target_accuracy);
      var.push_back(r.mean_variance);
      nrm.push_back(r.mean_jacobian_norm);
    }
    if (acc.empty()) continue;
    const auto [am, as] = mean_std(acc);
    const auto [vm, vs] = mean_std(var);
    const auto [nm, ns] = mean_std(nrm);
    out += federation::to_string(alg) + "," + std::to_string(acc.size()) + "," + format_double(am) + "," +
           format_double(as) + "," + format_double(vm) + "," + format_double(vs) + "," + format_double(nm) + "," +
           format_double(ns) + "\n";
  }
  return out;
}

std::string cmd_gen_data(const ExperimentConfig& c, const fs::path& out_dir) {
  const Domains d = build_domains(c);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  domains::save_csv(d.source, out_dir / "source.csv");
  domains::save_csv(d.target, out_dir / "target.csv");
  domains::save_partition(d.plan, out_dir / "partition.json");
  return "wrote " + std::to_string(d.source.size()) + " source and " + std::to_string(d.target.size()) +
         " target samples, " + std::to_string(d.plan.num_clients()) + " clients";
}

std::string cmd_pretrain(const ExperimentConfig& c, const fs::path& out_dir) {
  const Domains d = build_domains(c);
  const PretrainOutput out = run_pretrain(c, d, c.seed, c.round.algorithm);
  std::string metrics;
  for (const auto& r : out.result.history) {
    metrics += metrics_line(r);
    metrics += '\n';
  }
  write_text(out_dir / "metrics.jsonl", metrics);
  write_text(out_dir / "history.jsonl", history_file(out));
  write_text(out_dir / "model.txt", model_file(out.result.final_weights));
  json s;
  s["algorithm"] = federation::to_string(out.round_config.algorithm);
  s["rounds_run"] = out.result.history.size();
  s["stop_reason"] = federation::to_string(out.result.stop_reason);
  s["alpha"] = out.problem.alpha;
  s["alpha_certified"] = out.problem.alpha_certified;
  s["num_clients"] = out.problem.num_clients();
  s["model_dim"] = out.problem.spec.total_dim();
  s["initial_source_loss"] = out.regime.initial_loss;
  s["final_source_loss"] = out.result.history.empty() ? out.regime.initial_loss : out.result.history.back().source_loss;
  write_text(out_dir / "pretrain_summary.json", s.dump(2) + "\n");
  return "pretrained " + std::to_string(out.result.history.size()) + " rounds (" +
         federation::to_string(out.result.stop_reason) + ")";
}

namespace {

std::string block_hash(std::span<const double> block) {
  // FNV-1a over the raw bytes.
  std::uint64_t h = 14695981039346656037ULL;
  for (double v : block) {
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    for (std::size_t i = 0; i < sizeof(double); ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  }
  std::ostringstream ss;
  ss << std::hex << h;
  return ss.str();
}

}  // namespace

std::string cmd_transfer(const ExperimentConfig& c, const fs::path& model_path, const fs::path& out_dir) {
  const models::WeightVector w = parse_model_file(read_text(model_path));
  const Domains d = build_domains(c);
  const models::ModelSpec spec = model_spec(c, d.source);
  const TransferOutput out = run_transfer(c, d, w);
  json j;
  j["target_loss"] = out.test.target_loss;
  if (out.test.target_accuracy) {
    j["target_accuracy"] = *out.test.target_accuracy;
  } else {
    j["target_accuracy"] = nullptr;
  }
  j["epochs_used"] = out.train.epochs_used;
  j["converged"] = out.train.converged;
  j["frozen_split_index"] = spec.split_index;
  j["finetune_train_loss"] = out.train.target_loss;
  j["frozen_block_hash_before"] = block_hash(w.feature_block(spec));
  j["frozen_block_hash_after"] = block_hash(out.weights.feature_block(spec));
  write_text(out_dir / "transfer.json", j.dump(2) + "\n");
  write_text(out_dir / "finetuned_model.txt", model_file(out.weights));
  std::string msg = "target loss " + format_double(out.test.target_loss);
  if (out.test.target_accuracy) msg += ", accuracy " + format_double(*out.test.target_accuracy);
  return msg;
}

std::string cmd_verify_bounds(const ExperimentConfig& c, const fs::path& history_path, const fs::path& out_dir) {
  const ParsedHistory ph = parse_history_file(read_text(history_path));
  const auto& rounds = ph.history.rounds;
  const auto& regime = ph.history.regime;
  std::vector<bounds::BoundReport> reports;
  json skipped = json::array();

  if (c.bounds.round_ub) reports.push_back(bounds::verify_round_bound(rounds, regime.alpha, regime));
  if (c.bounds.telescoped) {
    reports.push_back(bounds::verify_telescoped_source(rounds, regime.alpha, regime.initial_loss, regime));
  }

  const bool want_t2 = c.bounds.theorem2 && regime.lr_schedule == "optimal-from-stats";
  if (c.bounds.theorem2 && !want_t2) {
    skipped.push_back({{"bound_id", "theorem2"}, {"reason", "history was not trained with optimal-from-stats"}});
  }
  if (want_t2 || c.bounds.lemma1 || c.bounds.theorem1) {
    const Domains d = build_domains(c);
    const models::ModelSpec spec = model_spec(c, d.source);
    if (spec.total_dim() != regime.model_dim) throw ConfigError("history model dimension does not match the config");
    const federation::FederatedProblem problem = federation::make_problem(spec, d.source, d.plan);
    std::vector<Dataset> clients;
    for (const auto& cl : problem.clients) clients.push_back(cl.data);
    std::vector<models::WeightVector> trajectory;
    if (ph.initial_weights) trajectory.push_back(*ph.initial_weights);
    for (const auto& w : ph.round_weights) trajectory.push_back(w);
    if (trajectory.empty()) throw ConfigError("history carries no model weights");
    transfer::HeadFitOptions hf;
    hf.max_steps = c.bounds.head_max_steps;
    hf.threads = c.threads;
    const auto samples = transfer::gf_feature_samples(spec, trajectory, derive_seed(c.seed, "gf-samples"),
                                                      c.bounds.random_feature_draws, 1.0);
    const transfer::DiscrepancyEstimate gf = transfer::estimate_federated_gf_discrepancy(spec, clients, d.target, samples, hf);
    const transfer::HeadFit target_fit = transfer::fit_head(spec, trajectory.back(), d.target, hf.max_steps);
    if (want_t2) {
      reports.push_back(bounds::verify_theorem2(rounds, regime.alpha, regime.initial_loss, gf, target_fit.loss,
                                                bounds::Theorem2Form::kAppendix, regime));
      reports.push_back(bounds::verify_theorem2(rounds, regime.alpha, regime.initial_loss, gf, target_fit.loss,
                                                bounds::Theorem2Form::kMaintext, regime));
    }
    if (c.bounds.lemma1) {
      reports.push_back(bounds::verify_lemma1_full(rounds, regime.alpha, regime.initial_loss, gf, target_fit.loss, regime));
    }
    if (c.bounds.theorem1) {
      models::ModelSpec full = spec;
      full.split_index = 0;
      std::vector<bounds::LocalOptimum> optima;
      for (const auto& cl : clients) {
        const auto fit = transfer::fit_head(full, models::WeightVector(full.total_dim()), cl, hf.max_steps);
        optima.push_back({fit.loss, fit.converged});
      }
      transfer::AscentOptions ao = c.bounds.ascent;
      ao.seed = derive_seed(c.seed, "h-discrepancy");
      ao.threads = c.threads;
      const auto cross = clients.size() >= 2 ? transfer::estimate_cross_client_divergence(spec, clients, ao)
                                             : transfer::DiscrepancyEstimate{0.0, transfer::DiscrepancyKind::kCrossClient};
      reports.push_back(bounds::verify_theorem1(optima, cross, gf, target_fit.loss));
    }
  }

  json summary;
  summary["alpha"] = regime.alpha;
  summary["alpha_certified"] = regime.alpha_certified;
  summary["rounds"] = rounds.size();
  summary["reports"] = json::array();
  std::size_t total_violations = 0;
  for (const auto& rep : reports) {
    const std::string id = bounds::to_string(rep.id);
    write_text(out_dir / ("bounds_" + id + ".jsonl"), bounds::to_jsonl(rep));
    json r;
    r["bound_id"] = id;
    r["certified"] = rep.certified;
    r["tolerance"] = rep.tolerance;
    r["entries"] = rep.entries.size();
    r["violations"] = rep.violations();
    r["min_slack"] = rep.entries.empty() ? 0.0 : rep.min_slack();
    r["notes"] = rep.notes;
    summary["reports"].push_back(r);
    total_violations += rep.violations();
  }
  summary["skipped"] = skipped;
  write_text(out_dir / "bounds_summary.json", summary.dump(2) + "\n");
  return std::to_string(reports.size()) + " bound reports, " + std::to_string(total_violations) + " violations";
}

std::string cmd_compare(const ExperimentConfig& c, const fs::path& out_dir) {
  const auto rows = run_compare(c);
  write_text(out_dir / "compare_runs.csv", compare_runs_csv(rows));
  write_text(out_dir / "compare_summary.csv", compare_summary_csv(c, rows));
  return std::to_string(rows.size()) + " runs compared";
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const NumericalError*>(&e)) return 3;
  if (dynamic_cast<const IoError*>(&e)) return 4;
  return 1;
}

}  // namespace fedgtst::cli

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

#include "fedgtst/domains.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string_view>

#include "json.hpp"

namespace fedgtst::domains {

std::string to_string(PartitionScheme scheme) {
  switch (scheme) {
    case PartitionScheme::kLabelSubset:
      return "label-subset";
    case PartitionScheme::kDirichlet:
      return "dirichlet";
    case PartitionScheme::kIid:
      return "iid";
  }
  return "unknown";
}

PartitionScheme parse_partition_scheme(const std::string& name) {
  if (name == "label-subset") return PartitionScheme::kLabelSubset;
  if (name == "dirichlet") return PartitionScheme::kDirichlet;
  if (name == "iid") return PartitionScheme::kIid;
  throw ConfigError("unknown partition scheme '" + name + "'");
}

std::size_t PartitionPlan::assigned_count() const {
  std::size_t n = 0;
  for (const auto& a : assignments) n += a.size();
  return n;
}

void PartitionPlan::validate(std::size_t dataset_size) const {
  if (assignments.empty()) throw ConfigError("partition has no clients");
  std::vector<char> seen(dataset_size, 0);
  for (std::size_t k = 0; k < assignments.size(); ++k) {
    for (std::size_t idx : assignments[k]) {
      if (idx >= dataset_size) {
        throw ConfigError("partition index " + std::to_string(idx) + " of client " +
                          std::to_string(k) + " is out of range");
      }
      if (seen[idx]) {
        throw ConfigError("partition index " + std::to_string(idx) +
                          " is assigned to more than one client");
      }
      seen[idx] = 1;
    }
  }
}

Matrix mixture_means(int num_classes, std::size_t dim, double class_separation) {
  if (num_classes < 1 || dim < 1) throw ConfigError("mixture needs num_classes >= 1 and dim >= 1");
  if (!(class_separation > 0.0)) throw ConfigError("class_separation must be positive");
  const auto C = static_cast<std::size_t>(num_classes);
  Matrix means(C, dim);
  if (C == 1) return means;
  if (dim + 1 >= C) {
    // Centered scaled basis vectors e_c * s / sqrt(2), expressed in the
    // orthonormal Helmert basis of the sum-zero subspace.
    const double s = class_separation / std::numbers::sqrt2;
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t k = 1; k < C; ++k) {
        const double kk = static_cast<double>(k);
        const double norm = std::sqrt(kk * (kk + 1.0));
        double coord = 0.0;
        if (c < k) coord = 1.0 / norm;
        else if (c == k) coord = -kk / norm;
        means(c, k - 1) = s * coord;
      }
    }
    return means;
  }
  if (dim >= 2) {
    const double radius = class_separation / (2.0 * std::sin(std::numbers::pi / static_cast<double>(C)));
    for (std::size_t c = 0; c < C; ++c) {
      const double t = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(C);
      means(c, 0) = radius * std::cos(t);
      means(c, 1) = radius * std::sin(t);
    }
    return means;
  }
  for (std::size_t c = 0; c < C; ++c) {
    means(c, 0) = (static_cast<double>(c) - 0.5 * static_cast<double>(C - 1)) * class_separation;
  }
  return means;
}

Dataset generate_gaussian_mixture(int num_classes, std::size_t dim, std::size_t samples_per_class,
                                  double class_separation, std::uint64_t seed) {
  if (samples_per_class < 1) throw ConfigError("samples_per_class must be >= 1");
  const Matrix means = mixture_means(num_classes, dim, class_separation);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset out;
  out.num_classes = num_classes;
  out.features = Matrix(static_cast<std::size_t>(num_classes) * samples_per_class, dim);
  out.labels.reserve(out.features.rows());
  std::size_t r = 0;
  for (int c = 0; c < num_classes; ++c) {
    auto mu = means.row(static_cast<std::size_t>(c));
    for (std::size_t i = 0; i < samples_per_class; ++i, ++r) {
      auto row = out.features.row(r);
      for (std::size_t j = 0; j < dim; ++j) row[j] = mu[j] + noise(rng);
      out.labels.push_back(c);
    }
  }
  return out;
}

Dataset apply_shift(const Dataset& source, const ShiftSpec& shift) {
  if (!(shift.label_noise_rate >= 0.0 && shift.label_noise_rate < 0.5)) {
    throw ConfigError("label_noise_rate must lie in [0, 0.5)");
  }
  const std::size_t dim = source.dim();
  if (shift.rotation_angle != 0.0 && dim < 2) {
    throw ConfigError("rotation needs at least two feature dimensions");
  }
  if (!shift.mean_translation.empty() && shift.mean_translation.size() != dim) {
    throw DimensionError("translation length does not match feature dim");
  }
  Dataset out = source;
  if (shift.rotation_angle != 0.0) {
    const double c = std::cos(shift.rotation_angle);
    const double s = std::sin(shift.rotation_angle);
    for (std::size_t r = 0; r < out.size(); ++r) {
      auto row = out.features.row(r);
      for (std::size_t j = 0; j + 1 < dim; j += 2) {
        const double a = row[j];
        const double b = row[j + 1];
        row[j] = c * a - s * b;
        row[j + 1] = s * a + c * b;
      }
    }
  }
  if (!shift.mean_translation.empty()) {
    for (std::size_t r = 0; r < out.size(); ++r) {
      linalg::axpy(1.0, shift.mean_translation, out.features.row(r));
    }
  }
  if (shift.label_noise_rate > 0.0 && out.num_classes > 1) {
    std::mt19937_64 rng(shift.seed);
    std::bernoulli_distribution flip(shift.label_noise_rate);
    std::uniform_int_distribution<int> other(0, out.num_classes - 2);
    for (int& y : out.labels) {
      if (!flip(rng)) continue;
      const int pick = other(rng);
      y = pick >= y ? pick + 1 : pick;
    }
  }
  return out;
}

namespace {

std::vector<std::vector<std::size_t>> indices_by_class(const Dataset& dataset) {
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(dataset.num_classes));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    by_class[static_cast<std::size_t>(dataset.labels[i])].push_back(i);
  }
  return by_class;
}

void sort_assignments(PartitionPlan& plan) {
  for (auto& a : plan.assignments) std::sort(a.begin(), a.end());
}

}  // namespace

PartitionPlan partition_label_subset(const Dataset& dataset, std::size_t num_clients,
                                     std::size_t classes_per_client, std::uint64_t seed) {
  dataset.validate();
  const auto C = static_cast<std::size_t>(dataset.num_classes);
  if (num_clients < 1) throw ConfigError("number of clients must be >= 1");
  if (classes_per_client < 1 || classes_per_client > C) {
    throw ConfigError("classes_per_client must lie in [1, num_classes]");
  }
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> pickers(C);
  std::vector<std::size_t> classes(C);
  for (std::size_t k = 0; k < num_clients; ++k) {
    std::iota(classes.begin(), classes.end(), 0);
    std::shuffle(classes.begin(), classes.end(), rng);
    for (std::size_t j = 0; j < classes_per_client; ++j) pickers[classes[j]].push_back(k);
  }

  PartitionPlan plan;
  plan.scheme = PartitionScheme::kLabelSubset;
  plan.seed = seed;
  plan.assignments.resize(num_clients);
  auto by_class = indices_by_class(dataset);
  for (std::size_t c = 0; c < C; ++c) {
    const auto& who = pickers[c];
    if (who.empty()) continue;
    auto& pool = by_class[c];
    if (pool.size() < who.size()) {
      throw ConfigError("class " + std::to_string(c) + " has " + std::to_string(pool.size()) +
                        " samples for " + std::to_string(who.size()) +
                        " clients; lower the number of clients");
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    const std::size_t base = pool.size() / who.size();
    const std::size_t extra = pool.size() % who.size();
    std::size_t pos = 0;
    for (std::size_t j = 0; j < who.size(); ++j) {
      const std::size_t take = base + (j < extra ? 1 : 0);
      auto& dst = plan.assignments[who[j]];
      dst.insert(dst.end(), pool.begin() + static_cast<std::ptrdiff_t>(pos),
                 pool.begin() + static_cast<std::ptrdiff_t>(pos + take));
      pos += take;
    }
  }
  sort_assignments(plan);
  return plan;
}

PartitionPlan partition_dirichlet(const Dataset& dataset, std::size_t num_clients,
                                  double concentration, std::uint64_t seed) {
  dataset.validate();
  if (num_clients < 1) throw ConfigError("number of clients must be >= 1");
  if (!(concentration > 0.0)) throw ConfigError("dirichlet concentration must be positive");
  std::mt19937_64 rng(seed);
  std::gamma_distribution<double> gamma(concentration, 1.0);
  PartitionPlan plan;
  plan.scheme = PartitionScheme::kDirichlet;
  plan.seed = seed;
  plan.assignments.resize(num_clients);
  const auto by_class = indices_by_class(dataset);
  std::vector<double> props(num_clients);
  for (const auto& pool : by_class) {
    double total = 0.0;
    for (double& p : props) {
      p = gamma(rng);
      total += p;
    }
    if (!(total > 0.0)) {
      // Every gamma draw underflowed; put the whole class on one client.
      std::fill(props.begin(), props.end(), 0.0);
      props[std::uniform_int_distribution<std::size_t>(0, num_clients - 1)(rng)] = 1.0;
    }
    std::discrete_distribution<std::size_t> pick(props.begin(), props.end());
    for (std::size_t idx : pool) plan.assignments[pick(rng)].push_back(idx);
  }
  sort_assignments(plan);
  return plan;
}

PartitionPlan partition_iid(const Dataset& dataset, std::size_t num_clients, std::uint64_t seed) {
  if (num_clients < 1) throw ConfigError("number of clients must be >= 1");
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  PartitionPlan plan;
  plan.scheme = PartitionScheme::kIid;
  plan.seed = seed;
  plan.assignments.resize(num_clients);
  for (std::size_t i = 0; i < order.size(); ++i) plan.assignments[i % num_clients].push_back(order[i]);
  sort_assignments(plan);
  return plan;
}

std::vector<std::size_t> label_histogram(const Dataset& dataset,
                                         const std::vector<std::size_t>& indices) {
  std::vector<std::size_t> hist(static_cast<std::size_t>(dataset.num_classes), 0);
  for (std::size_t idx : indices) ++hist[static_cast<std::size_t>(dataset.labels.at(idx))];
  return hist;
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& data, double train_fraction,
                                             std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
    throw ConfigError("train fraction must lie in (0, 1]");
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(data.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, data.size());
  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {subset(data, train), subset(data, test)};
}

std::string to_csv(const Dataset& dataset) {
  std::string out = "label";
  for (std::size_t j = 0; j < dataset.dim(); ++j) out += ",f" + std::to_string(j);
  out += '\n';
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    out += std::to_string(dataset.labels[i]);
    for (double v : dataset.features.row(i)) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

void save_csv(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f << to_csv(dataset);
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return cells;
}

[[noreturn]] void parse_fail(std::size_t line_no, const std::string& what) {
  throw IoError("csv line " + std::to_string(line_no) + ": " + what);
}

}  // namespace

Dataset parse_csv(const std::string& text, int num_classes) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::size_t cols = 0;
  Dataset out;
  Vec row;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      const auto header = split_commas(line);
      if (header.empty() || header[0] != "label") parse_fail(1, "header must start with 'label'");
      cols = header.size() - 1;
      if (cols == 0) parse_fail(1, "header declares no feature columns");
      out.features = Matrix(0, cols);
      continue;
    }
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != cols + 1) {
      parse_fail(line_no, "expected " + std::to_string(cols + 1) + " columns, found " +
                              std::to_string(cells.size()));
    }
    int label = 0;
    const auto lres = std::from_chars(cells[0].data(), cells[0].data() + cells[0].size(), label);
    if (lres.ec != std::errc() || lres.ptr != cells[0].data() + cells[0].size()) {
      parse_fail(line_no, "label '" + std::string(cells[0]) + "' is not an integer");
    }
    if (label < 0) parse_fail(line_no, "negative label");
    row.assign(cols, 0.0);
    for (std::size_t j = 0; j < cols; ++j) {
      const std::string_view cell = cells[j + 1];
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(v)) {
        parse_fail(line_no, "feature '" + std::string(cell) + "' is not a finite number");
      }
      row[j] = v;
    }
    out.features.append_row(row);
    out.labels.push_back(label);
  }
  if (line_no == 0) throw IoError("csv is empty (missing header)");
  if (out.labels.empty()) throw IoError("empty dataset");
  const int max_label = *std::max_element(out.labels.begin(), out.labels.end());
  if (num_classes > 0) {
    if (max_label >= num_classes) {
      throw IoError("label " + std::to_string(max_label) + " exceeds num_classes " +
                    std::to_string(num_classes));
    }
    out.num_classes = num_classes;
  } else {
    out.num_classes = max_label + 1;
  }
  return out;
}

Dataset load_csv(const std::filesystem::path& path, int num_classes) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_csv(ss.str(), num_classes);
}

void save_partition(const PartitionPlan& plan, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["scheme"] = to_string(plan.scheme);
  j["seed"] = plan.seed;
  j["num_clients"] = plan.num_clients();
  j["assignments"] = plan.assignments;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f << j.dump() << '\n';
}

PartitionPlan load_partition(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  try {
    const auto j = nlohmann::json::parse(f);
    PartitionPlan plan;
    plan.scheme = parse_partition_scheme(j.at("scheme").get<std::string>());
    plan.seed = j.at("seed").get<std::uint64_t>();
    plan.assignments = j.at("assignments").get<std::vector<std::vector<std::size_t>>>();
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed partition file '" + path.string() + "': " + e.what());
  }
}

}  // namespace fedgtst::domains

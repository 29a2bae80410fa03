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

#ifndef FEDGTST_DOMAINS_HPP_
#define FEDGTST_DOMAINS_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "fedgtst/common.hpp"
#include "fedgtst/dataset.hpp"

namespace fedgtst::domains {

enum class PartitionScheme { kLabelSubset, kDirichlet, kIid };

std::string to_string(PartitionScheme scheme);
PartitionScheme parse_partition_scheme(const std::string& name);

// Disjoint assignment of sample indices to K clients. Indices not listed in any
// set are unassigned and take no part in pretraining.
struct PartitionPlan {
  std::vector<std::vector<std::size_t>> assignments;
  PartitionScheme scheme = PartitionScheme::kIid;
  std::uint64_t seed = 0;

  std::size_t num_clients() const { return assignments.size(); }
  std::size_t assigned_count() const;
  // Throws ConfigError on duplicate or out-of-range indices.
  void validate(std::size_t dataset_size) const;

  friend bool operator==(const PartitionPlan&, const PartitionPlan&) = default;
};

struct ShiftSpec {
  double rotation_angle = 0.0;  // radians, applied to coordinate pairs (0,1), (2,3), ...
  Vec mean_translation;         // empty means no translation
  double label_noise_rate = 0.0;
  std::uint64_t seed = 0;
};

// Isotropic unit-variance Gaussian per class. Class means sit on the vertices
// of a regular simplex (centered at the origin) with pairwise distance equal to
// class_separation whenever dim >= num_classes - 1; lower dimensions fall back
// to a circle (dim >= 2) or a line (dim = 1) with adjacent spacing equal to
// the separation.
Dataset generate_gaussian_mixture(int num_classes, std::size_t dim, std::size_t samples_per_class,
                                  double class_separation, std::uint64_t seed);

// Deterministic class means used by generate_gaussian_mixture.
Matrix mixture_means(int num_classes, std::size_t dim, double class_separation);

Dataset apply_shift(const Dataset& source, const ShiftSpec& shift);

// Each client independently draws classes_per_client distinct classes; each
// class's samples are shuffled and split as evenly as possible among the
// clients that drew it.
PartitionPlan partition_label_subset(const Dataset& dataset, std::size_t num_clients,
                                     std::size_t classes_per_client, std::uint64_t seed);

// For every class, client proportions p ~ Dirichlet(concentration * 1_K) and
// each sample of the class goes to a client drawn from p.
PartitionPlan partition_dirichlet(const Dataset& dataset, std::size_t num_clients,
                                  double concentration, std::uint64_t seed);

// Shuffled round-robin split; every client sees the pooled distribution.
PartitionPlan partition_iid(const Dataset& dataset, std::size_t num_clients, std::uint64_t seed);

// Label histogram of one client.
std::vector<std::size_t> label_histogram(const Dataset& dataset,
                                         const std::vector<std::size_t>& indices);

// Deterministic train/test split of a dataset; `train_fraction` of the shuffled
// rows go to the first dataset.
std::pair<Dataset, Dataset> split_train_test(const Dataset& data, double train_fraction,
                                             std::uint64_t seed);

// CSV: header `label,f0,...,f{m-1}` then one sample per line.
void save_csv(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_csv(const std::filesystem::path& path, int num_classes = 0);
std::string to_csv(const Dataset& dataset);
// num_classes <= 0 infers max(label) + 1.
Dataset parse_csv(const std::string& text, int num_classes = 0);

void save_partition(const PartitionPlan& plan, const std::filesystem::path& path);
PartitionPlan load_partition(const std::filesystem::path& path);

}  // namespace fedgtst::domains

#endif  // FEDGTST_DOMAINS_HPP_

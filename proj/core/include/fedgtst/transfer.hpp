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

#ifndef FEDGTST_TRANSFER_HPP_
#define FEDGTST_TRANSFER_HPP_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedgtst/dataset.hpp"
#include "fedgtst/domains.hpp"
#include "fedgtst/models.hpp"

namespace fedgtst::transfer {

using models::ModelSpec;
using models::WeightVector;

struct TransferResult {
  double target_loss = 0.0;
  std::optional<double> target_accuracy;  // classifiers only
  int epochs_used = 0;
  std::size_t frozen_split_index = 0;
  bool converged = false;  // head gradient norm reached the tolerance
};

// Full-batch GD on the head block only, stopping early once the head
// gradient norm drops to `grad_tolerance`. The feature block is never written.
// The result's loss and accuracy are measured on `target_train`.
std::pair<WeightVector, TransferResult> finetune_classifier(const ModelSpec& spec,
                                                            const WeightVector& pretrained,
                                                            const Dataset& target_train, double lr,
                                                            int epochs,
                                                            double grad_tolerance = 1e-8);

// 1 / alpha_head at the given weights; a safe GD step for the convex head.
double default_head_learning_rate(const ModelSpec& spec, const WeightVector& w, const Dataset& data);

TransferResult evaluate_target(const ModelSpec& spec, const WeightVector& w,
                               const Dataset& target_test);

// Approximate inf over the head of the loss on `data`, feature block of `w` fixed.
struct HeadFit {
  WeightVector weights;
  double loss = 0.0;
  double grad_norm = 0.0;
  int steps = 0;
  bool converged = false;
};
HeadFit fit_head(const ModelSpec& spec, const WeightVector& w, const Dataset& data, int max_steps,
                 double grad_tolerance = 1e-8);

enum class DiscrepancyKind { kHDiscrepancy, kCrossClient, kGfDiscrepancy };
std::string to_string(DiscrepancyKind kind);

// Every estimate is a lower bound on the supremum it targets.
struct DiscrepancyEstimate {
  double value = 0.0;
  DiscrepancyKind kind = DiscrepancyKind::kHDiscrepancy;
  int restarts = 0;
  bool budget_exhausted = false;  // some inner head fit hit its step budget
  static constexpr bool kLowerBoundOnly = true;
};

struct AscentOptions {
  int restarts = 8;
  int ascent_steps = 200;
  double weight_radius = 1.0;
  std::uint64_t seed = 0;
  int threads = 1;
};

// Multi-restart projected gradient ascent of |L_{D1}(w) - L_{D2}(w)| over the
// ball ||w|| <= weight_radius. Restart 0 starts at the origin, the others at
// seeded random points of the sphere of radius weight_radius.
DiscrepancyEstimate estimate_h_discrepancy(const ModelSpec& spec, const Dataset& d1,
                                           const Dataset& d2, const AscentOptions& options);

// Mean of d_H over ordered pairs of non-empty clients; every pair uses the
// same restart seed.
DiscrepancyEstimate estimate_cross_client_divergence(const ModelSpec& spec, const Dataset& source,
                                                     const domains::PartitionPlan& plan,
                                                     const AscentOptions& options);
DiscrepancyEstimate estimate_cross_client_divergence(const ModelSpec& spec,
                                                     const std::vector<Dataset>& clients,
                                                     const AscentOptions& options);

struct HeadFitOptions {
  int max_steps = 20000;
  double grad_tolerance = 1e-8;
  int threads = 1;
};

// max over sampled feature blocks of |inf_g L_{D_k}(g o f) - inf_g L_{D_T}(g o f)|.
// Only the feature block of each sample is used; heads start from zero.
DiscrepancyEstimate estimate_gf_discrepancy(const ModelSpec& spec, const Dataset& d_k,
                                            const Dataset& d_t,
                                            const std::vector<WeightVector>& feature_samples,
                                            const HeadFitOptions& options);

// Federated form: the mean of the per-client estimates.
DiscrepancyEstimate estimate_federated_gf_discrepancy(const ModelSpec& spec,
                                                      const std::vector<Dataset>& clients,
                                                      const Dataset& d_t,
                                                      const std::vector<WeightVector>& feature_samples,
                                                      const HeadFitOptions& options);

// Feature samples: the global models at rounds {0, P/4, P/2, 3P/4, P} of a
// trajectory (trajectory[p] = h_p) plus `random_draws` seeded initializations.
std::vector<WeightVector> gf_feature_samples(const ModelSpec& spec,
                                             const std::vector<WeightVector>& trajectory,
                                             std::uint64_t seed, int random_draws = 8,
                                             double scale = 1.0);

}  // namespace fedgtst::transfer

#endif  // FEDGTST_TRANSFER_HPP_

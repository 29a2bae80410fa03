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

#ifndef FEDGTST_STATISTICS_HPP_
#define FEDGTST_STATISTICS_HPP_

#include <cstddef>
#include <map>
#include <utility>
#include <vector>

#include "fedgtst/models.hpp"

namespace fedgtst::stats {

using models::WeightVector;

// Cross-client Jacobian statistics of one round, taken over the clients that
// reported a Jacobian (the round's participants).
struct CrossClientStats {
  int round = 0;
  WeightVector avg_jacobian;            // J_p = (1/K) sum_k J^(k)
  double avg_norm = 0.0;                // ||J_p||
  double avg_sq = 0.0;                  // ||J_p||^2, kept exact
  double variance = 0.0;                // (1/K) sum_k ||J^(k)||^2 - ||J_p||^2
  std::map<int, double> client_norms;   // ||J^(k)||
  std::size_t client_count = 0;

  double avg_norm_sq() const { return avg_sq; }
  // (1/K) sum_k ||J^(k)||^2
  double mean_sq_client_norm() const;
  double sum_sq_client_norm() const;
};

struct BoundCoefficients {
  double beta1 = 0.0;  // lambda - beta2
  double beta2 = 0.0;  // alpha * lambda^2 / 2
  double learning_rate = 0.0;
  double alpha = 0.0;
  // beta1 > 0, i.e. lambda < 2 / alpha (lambda > 0).
  bool beta1_positive = false;
};

// Negative variance within this tolerance of zero is clamped; anything more
// negative is an internal consistency failure.
inline constexpr double kVarianceClampTolerance = 1e-12;

CrossClientStats cross_client_stats(const std::vector<std::pair<int, WeightVector>>& jacobians,
                                    int round);

BoundCoefficients beta_coefficients(double lambda, double alpha);

// lambda* = ||J_p||^2 / (alpha (sigma_p^2 + ||J_p||^2)).
// Throws NumericalError when every client Jacobian is zero.
double optimal_learning_rate(const CrossClientStats& stats, double alpha);

// The same minimizer in client-sum form: K ||J_p||^2 / (alpha sum_k ||J^(k)||^2).
double optimal_learning_rate_sum_form(const CrossClientStats& stats, double alpha);

// prev_loss - beta1(lambda) ||J_p||^2 + beta2(lambda) sigma_p^2
double round_bound_rhs(double prev_loss, double lambda, double alpha, const CrossClientStats& stats);

}  // namespace fedgtst::stats

#endif  // FEDGTST_STATISTICS_HPP_

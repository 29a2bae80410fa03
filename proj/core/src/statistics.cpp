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

#include "fedgtst/statistics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fedgtst::stats {

double CrossClientStats::sum_sq_client_norm() const {
  double s = 0.0;
  for (const auto& [id, n] : client_norms) s += n * n;
  return s;
}

double CrossClientStats::mean_sq_client_norm() const {
  return client_count == 0 ? 0.0 : sum_sq_client_norm() / static_cast<double>(client_count);
}

CrossClientStats cross_client_stats(const std::vector<std::pair<int, WeightVector>>& jacobians,
                                    int round) {
  if (jacobians.empty()) throw ConfigError("cross-client statistics need at least one Jacobian");
  const std::size_t dim = jacobians.front().second.size();

  // Fixed summation order: ascending client id.
  std::vector<const std::pair<int, WeightVector>*> order;
  order.reserve(jacobians.size());
  for (const auto& j : jacobians) {
    if (j.second.size() != dim) throw DimensionError("client Jacobians differ in length");
    order.push_back(&j);
  }
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->first < b->first; });

  CrossClientStats out;
  out.round = round;
  out.client_count = order.size();
  out.avg_jacobian = WeightVector(dim);
  double mean_sq = 0.0;
  for (const auto* j : order) {
    if (!out.client_norms.emplace(j->first, linalg::norm(j->second.view())).second) {
      throw ConfigError("duplicate client id " + std::to_string(j->first) + " in statistics");
    }
    linalg::axpy(1.0, j->second.view(), out.avg_jacobian.view());
    mean_sq += linalg::squared_norm(j->second.view());
  }
  const double inv_k = 1.0 / static_cast<double>(out.client_count);
  linalg::scale(inv_k, out.avg_jacobian.view());
  mean_sq *= inv_k;
  const double avg_sq = linalg::squared_norm(out.avg_jacobian.view());
  out.avg_sq = avg_sq;
  out.avg_norm = std::sqrt(avg_sq);
  double var = mean_sq - avg_sq;
  if (var < 0.0) {
    if (var < -kVarianceClampTolerance * std::max(1.0, mean_sq)) {
      throw NumericalError("cross-client variance is negative beyond rounding: " +
                           std::to_string(var));
    }
    var = 0.0;
  }
  out.variance = var;
  return out;
}

BoundCoefficients beta_coefficients(double lambda, double alpha) {
  if (!(alpha > 0.0)) throw ConfigError("smoothness constant alpha must be positive");
  if (!(lambda >= 0.0)) throw ConfigError("learning rate must be non-negative");
  BoundCoefficients c;
  c.learning_rate = lambda;
  c.alpha = alpha;
  c.beta2 = alpha * lambda * lambda / 2.0;
  c.beta1 = lambda - c.beta2;
  c.beta1_positive = lambda > 0.0 && lambda < 2.0 / alpha;
  return c;
}

double optimal_learning_rate(const CrossClientStats& stats, double alpha) {
  if (!(alpha > 0.0)) throw ConfigError("smoothness constant alpha must be positive");
  const double jsq = stats.avg_norm_sq();
  const double denom = stats.variance + jsq;
  if (!(stats.sum_sq_client_norm() > 0.0) || !(denom > 0.0)) {
    throw NumericalError("all client Jacobians are zero; training has converged");
  }
  return jsq / (alpha * denom);
}

double optimal_learning_rate_sum_form(const CrossClientStats& stats, double alpha) {
  if (!(alpha > 0.0)) throw ConfigError("smoothness constant alpha must be positive");
  const double sum_sq = stats.sum_sq_client_norm();
  if (!(sum_sq > 0.0)) throw NumericalError("all client Jacobians are zero; training has converged");
  return static_cast<double>(stats.client_count) * stats.avg_norm_sq() / (alpha * sum_sq);
}

double round_bound_rhs(double prev_loss, double lambda, double alpha, const CrossClientStats& stats) {
  const BoundCoefficients c = beta_coefficients(lambda, alpha);
  return prev_loss - c.beta1 * stats.avg_norm_sq() + c.beta2 * stats.variance;
}

}  // namespace fedgtst::stats

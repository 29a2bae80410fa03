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

#include "fedgtst/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "fedgtst/federation.hpp"

namespace fedgtst::transfer {

namespace {

double head_grad_norm(const ModelSpec& spec, const WeightVector& g) {
  return linalg::norm(g.head_block(spec));
}

void require_nonempty(const Dataset& d, const char* what) {
  if (d.empty()) throw ConfigError(std::string(what) + " is empty");
}

WeightVector zero_head(const ModelSpec& spec, WeightVector w) {
  std::fill(w.values.begin() + static_cast<std::ptrdiff_t>(spec.split_index), w.values.end(), 0.0);
  return w;
}

}  // namespace

std::string to_string(DiscrepancyKind kind) {
  switch (kind) {
    case DiscrepancyKind::kHDiscrepancy:
      return "h-discrepancy";
    case DiscrepancyKind::kCrossClient:
      return "cross-client";
    case DiscrepancyKind::kGfDiscrepancy:
      return "gf-discrepancy";
  }
  return "unknown";
}

double default_head_learning_rate(const ModelSpec& spec, const WeightVector& w, const Dataset& data) {
  require_nonempty(data, "dataset");
  const double a = models::head_smoothness_constant(spec, w, data).alpha;
  if (!(a > 0.0)) throw NumericalError("head smoothness constant is zero");
  return 1.0 / a;
}

namespace {

// GD on the head block; shared by finetuning and the inner inf_g solves.
std::pair<WeightVector, TransferResult> descend_head(const ModelSpec& spec, const WeightVector& start,
                                                     const Dataset& data, double lr, int epochs,
                                                     double grad_tolerance) {
  require_nonempty(data, "target training set");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (!(lr >= 0.0)) throw ConfigError("finetune learning rate must be non-negative");
  if (start.size() != spec.total_dim()) throw DimensionError("pretrained weights do not match the model");
  WeightVector w = start;
  TransferResult r;
  r.frozen_split_index = spec.split_index;
  const std::size_t s = spec.split_index;
  int e = 0;
  for (; e < epochs; ++e) {
    const WeightVector g = models::gradient(spec, w, data);
    if (head_grad_norm(spec, g) <= grad_tolerance) {
      r.converged = true;
      break;
    }
    for (std::size_t i = s; i < w.size(); ++i) w[i] -= lr * g[i];
    if (!linalg::all_finite(w.view())) {
      throw NumericalError("non-finite weights at finetune epoch " + std::to_string(e));
    }
  }
  r.epochs_used = e;
  if (!r.converged) {
    r.converged = head_grad_norm(spec, models::gradient(spec, w, data)) <= grad_tolerance;
  }
  r.target_loss = models::loss(spec, w, data);
  if (spec.is_classifier()) r.target_accuracy = models::accuracy(spec, w, data);
  return {std::move(w), r};
}

}  // namespace

std::pair<WeightVector, TransferResult> finetune_classifier(const ModelSpec& spec,
                                                            const WeightVector& pretrained,
                                                            const Dataset& target_train, double lr,
                                                            int epochs, double grad_tolerance) {
  if (spec.split_index == 0) log_warning("split index 0: finetuning the whole model (linear-probe-degenerate)");
  return descend_head(spec, pretrained, target_train, lr, epochs, grad_tolerance);
}

TransferResult evaluate_target(const ModelSpec& spec, const WeightVector& w,
                               const Dataset& target_test) {
  require_nonempty(target_test, "target test set");
  TransferResult r;
  r.frozen_split_index = spec.split_index;
  r.target_loss = models::loss(spec, w, target_test);
  if (spec.is_classifier()) r.target_accuracy = models::accuracy(spec, w, target_test);
  return r;
}

HeadFit fit_head(const ModelSpec& spec, const WeightVector& w, const Dataset& data, int max_steps,
                 double grad_tolerance) {
  const double lr = default_head_learning_rate(spec, w, data);
  auto [fitted, res] = descend_head(spec, w, data, lr, max_steps, grad_tolerance);
  HeadFit out;
  out.loss = res.target_loss;
  out.steps = res.epochs_used;
  out.converged = res.converged;
  out.grad_norm = head_grad_norm(spec, models::gradient(spec, fitted, data));
  out.weights = std::move(fitted);
  return out;
}

DiscrepancyEstimate estimate_h_discrepancy(const ModelSpec& spec, const Dataset& d1,
                                           const Dataset& d2, const AscentOptions& options) {
  if (options.restarts < 1) throw ConfigError("restarts must be >= 1");
  if (options.ascent_steps < 0) throw ConfigError("ascent steps must be non-negative");
  if (!(options.weight_radius >= 0.0)) throw ConfigError("weight radius must be non-negative");
  require_nonempty(d1, "first dataset");
  require_nonempty(d2, "second dataset");
  const double r = options.weight_radius;
  const std::size_t dim = spec.total_dim();

  auto objective = [&](const WeightVector& w, WeightVector* grad) {
    const auto a = models::loss_and_gradient(spec, w, d1);
    const auto b = models::loss_and_gradient(spec, w, d2);
    const double diff = a.loss - b.loss;
    if (grad) {
      *grad = WeightVector(linalg::sub(a.gradient.view(), b.gradient.view()));
      bool flip = diff < 0.0;
      if (diff == 0.0) {
        // Kink of |.|: orient by the first nonzero entry so swapping d1, d2 is a no-op.
        const auto nz = std::find_if(grad->values.begin(), grad->values.end(), [](double v) { return v != 0.0; });
        flip = nz != grad->values.end() && *nz < 0.0;
      }
      if (flip) linalg::scale(-1.0, grad->view());
    }
    return std::abs(diff);
  };
  auto project = [&](WeightVector& w) {
    const double n = linalg::norm(w.view());
    if (n > r) linalg::scale(r / n, w.view());
  };

  std::vector<double> best(static_cast<std::size_t>(options.restarts), 0.0);
  federation::parallel_for(best.size(), options.threads, [&](std::size_t i) {
    WeightVector w(dim);
    if (i > 0 && r > 0.0) {
      std::mt19937_64 rng(derive_seed(options.seed, "hdisc-restart", i));
      std::normal_distribution<double> gauss(0.0, 1.0);
      for (auto& v : w.values) v = gauss(rng);
      const double n = linalg::norm(w.view());
      if (n > 0.0) linalg::scale(r / n, w.view());
    }
    WeightVector g;
    double cur = objective(w, &g);
    double top = cur;
    double step = 0.5 * r;
    const double min_step = 1e-12 * std::max(1.0, r);
    for (int t = 0; t < options.ascent_steps && step >= min_step; ++t) {
      const double gn = linalg::norm(g.view());
      if (!(gn > 0.0)) break;
      WeightVector cand = w;
      linalg::axpy(step / gn, g.view(), cand.view());
      project(cand);
      WeightVector cg;
      const double val = objective(cand, &cg);
      if (val > cur) {
        w = std::move(cand);
        g = std::move(cg);
        cur = val;
        step = std::min(2.0 * r, 1.5 * step);
      } else {
        step *= 0.5;
      }
      top = std::max(top, cur);
    }
    best[i] = top;
  });

  DiscrepancyEstimate est;
  est.kind = DiscrepancyKind::kHDiscrepancy;
  est.restarts = options.restarts;
  est.value = *std::max_element(best.begin(), best.end());
  return est;
}

DiscrepancyEstimate estimate_cross_client_divergence(const ModelSpec& spec,
                                                     const std::vector<Dataset>& clients,
                                                     const AscentOptions& options) {
  std::vector<const Dataset*> live;
  for (const auto& c : clients) {
    if (!c.empty()) live.push_back(&c);
  }
  const std::size_t K = live.size();
  if (K < 2) throw ConfigError("cross-client divergence needs at least two non-empty clients");
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t a = 0; a < K; ++a) {
    for (std::size_t b = a + 1; b < K; ++b) pairs.emplace_back(a, b);
  }
  AscentOptions inner = options;
  inner.threads = 1;
  std::vector<double> vals(pairs.size());
  federation::parallel_for(pairs.size(), options.threads, [&](std::size_t i) {
    vals[i] = estimate_h_discrepancy(spec, *live[pairs[i].first], *live[pairs[i].second], inner).value;
  });
  // d_H is symmetric, so each unordered pair stands for both orders.
  double sum = 0.0;
  for (double v : vals) sum += 2.0 * v;
  DiscrepancyEstimate est;
  est.kind = DiscrepancyKind::kCrossClient;
  est.restarts = options.restarts;
  est.value = sum / static_cast<double>(K * (K - 1));
  return est;
}

DiscrepancyEstimate estimate_cross_client_divergence(const ModelSpec& spec, const Dataset& source,
                                                     const domains::PartitionPlan& plan,
                                                     const AscentOptions& options) {
  plan.validate(source.size());
  std::vector<Dataset> clients;
  for (const auto& idx : plan.assignments) clients.push_back(subset(source, idx));
  return estimate_cross_client_divergence(spec, clients, options);
}

DiscrepancyEstimate estimate_gf_discrepancy(const ModelSpec& spec, const Dataset& d_k,
                                            const Dataset& d_t,
                                            const std::vector<WeightVector>& feature_samples,
                                            const HeadFitOptions& options) {
  if (feature_samples.empty()) throw ConfigError("gf-discrepancy needs at least one feature sample");
  require_nonempty(d_k, "client dataset");
  require_nonempty(d_t, "target dataset");
  std::vector<double> gaps(feature_samples.size());
  std::vector<char> exhausted(feature_samples.size(), 0);
  federation::parallel_for(feature_samples.size(), options.threads, [&](std::size_t i) {
    const WeightVector start = zero_head(spec, feature_samples[i]);
    const HeadFit a = fit_head(spec, start, d_k, options.max_steps, options.grad_tolerance);
    const HeadFit b = fit_head(spec, start, d_t, options.max_steps, options.grad_tolerance);
    gaps[i] = std::abs(a.loss - b.loss);
    exhausted[i] = !(a.converged && b.converged);
  });
  DiscrepancyEstimate est;
  est.kind = DiscrepancyKind::kGfDiscrepancy;
  est.restarts = static_cast<int>(feature_samples.size());
  est.value = *std::max_element(gaps.begin(), gaps.end());
  est.budget_exhausted = std::any_of(exhausted.begin(), exhausted.end(), [](char c) { return c != 0; });
  return est;
}

DiscrepancyEstimate estimate_federated_gf_discrepancy(const ModelSpec& spec,
                                                      const std::vector<Dataset>& clients,
                                                      const Dataset& d_t,
                                                      const std::vector<WeightVector>& feature_samples,
                                                      const HeadFitOptions& options) {
  if (clients.empty()) throw ConfigError("no clients given");
  DiscrepancyEstimate out;
  out.kind = DiscrepancyKind::kGfDiscrepancy;
  out.restarts = static_cast<int>(feature_samples.size());
  for (const auto& c : clients) {
    const auto e = estimate_gf_discrepancy(spec, c, d_t, feature_samples, options);
    out.value += e.value;
    out.budget_exhausted = out.budget_exhausted || e.budget_exhausted;
  }
  out.value /= static_cast<double>(clients.size());
  return out;
}

std::vector<WeightVector> gf_feature_samples(const ModelSpec& spec,
                                             const std::vector<WeightVector>& trajectory,
                                             std::uint64_t seed, int random_draws, double scale) {
  std::vector<WeightVector> out;
  if (!trajectory.empty()) {
    const std::size_t P = trajectory.size() - 1;
    std::vector<std::size_t> picks{0, P / 4, P / 2, 3 * P / 4, P};
    picks.erase(std::unique(picks.begin(), picks.end()), picks.end());
    for (std::size_t p : picks) out.push_back(trajectory[p]);
  }
  for (int i = 0; i < random_draws; ++i) {
    out.push_back(models::init_weights(spec, derive_seed(seed, "gf-feature", static_cast<std::uint64_t>(i)), scale));
  }
  return out;
}

}  // namespace fedgtst::transfer

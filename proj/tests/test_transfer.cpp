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

#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "fedgtst/domains.hpp"
#include "fedgtst/federation.hpp"
#include "fedgtst/transfer.hpp"
#include "test_util.hpp"

namespace fedgtst {
namespace {

using namespace transfer;

class Quiet : public ::testing::Environment {
 public:
  void SetUp() override { set_warnings_enabled(false); }
};
const auto* const kQuiet = ::testing::AddGlobalTestEnvironment(new Quiet);

ModelSpec mlp_spec(std::size_t in, std::size_t C) {
  ModelSpec s = ModelSpec::mlp(in, {4}, C, models::Activation::kTanh);
  s.split_index = s.default_split_index();
  return s;
}

// Closed-form inf over w of mean (w x - y)^2.
double ls_inf(const Dataset& d) {
  double xx = 0.0, xy = 0.0, yy = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double x = d.features(i, 0);
    const double y = d.labels[i];
    xx += x * x;
    xy += x * y;
    yy += y * y;
  }
  const double n = static_cast<double>(d.size());
  return yy / n - (xy / n) * (xy / n) / (xx / n);
}

TEST(FinetuneTest, ZeroEpochsKeepWeights) {
  std::mt19937_64 rng(1);
  const ModelSpec s = mlp_spec(3, 3);
  const Dataset d = testing::random_dataset(rng, 10, 3, 3);
  const WeightVector w = testing::random_weights(rng, s.total_dim());
  const auto [out, res] = finetune_classifier(s, w, d, 0.1, 0);
  EXPECT_EQ(out, w);
  EXPECT_EQ(res.epochs_used, 0);
}

TEST(FinetuneTest, FrozenBlockUnchanged) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    const ModelSpec s = mlp_spec(3, 3);
    const Dataset d = testing::random_dataset(rng, 12, 3, 3);
    const WeightVector w = testing::random_weights(rng, s.total_dim());
    const auto [out, res] = finetune_classifier(s, w, d, 0.2, 30);
    EXPECT_TRUE(std::equal(w.feature_block(s).begin(), w.feature_block(s).end(), out.feature_block(s).begin()));
    EXPECT_NE(out, w);
    EXPECT_EQ(res.frozen_split_index, s.split_index);
  }
}

TEST(FinetuneTest, SameDomainNeverWorsens) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const ModelSpec s = mlp_spec(3, 3);
    const Dataset d = testing::random_dataset(rng, 15, 3, 3);
    const WeightVector w = testing::random_weights(rng, s.total_dim());
    const double lr = default_head_learning_rate(s, w, d);
    const auto [out, res] = finetune_classifier(s, w, d, lr, 50);
    EXPECT_LE(res.target_loss, models::loss(s, w, d) + 1e-9);
  }
}

TEST(FinetuneTest, ConvergesOnConvexHead) {
  const Dataset d = domains::generate_gaussian_mixture(3, 2, 20, 2.0, 1);
  const ModelSpec s = ModelSpec::logistic(2, 3);
  const auto fit = fit_head(s, WeightVector(s.total_dim()), d, 200000, 1e-8);
  EXPECT_TRUE(fit.converged);
  EXPECT_LE(fit.grad_norm, 1e-8);
}

TEST(FinetuneTest, Errors) {
  const ModelSpec s = ModelSpec::logistic(2, 2);
  const Dataset empty;
  EXPECT_THROW(finetune_classifier(s, WeightVector(s.total_dim()), empty, 0.1, 1), ConfigError);
  const Dataset d = testing::make_dataset({{1.0, 0.0}}, {1}, 2);
  EXPECT_THROW(finetune_classifier(s, WeightVector(2), d, 0.1, 1), DimensionError);
  EXPECT_THROW(evaluate_target(s, WeightVector(s.total_dim()), empty), ConfigError);
}

TEST(EvaluateTest, PerfectModel) {
  const Dataset d = testing::make_dataset({{1.0}, {-1.0}}, {1, 0}, 2);
  const auto r = evaluate_target(ModelSpec::logistic(1, 2), WeightVector(Vec{-5.0, 5.0, 0.0, 0.0}), d);
  EXPECT_EQ(r.target_accuracy.value(), 1.0);
}

TEST(EvaluateTest, ZeroShiftMatchesSourceAccuracy) {
  const Dataset src = domains::generate_gaussian_mixture(4, 4, 200, 2.5, 1);
  const ModelSpec s = ModelSpec::logistic(4, 4);
  const auto fit = fit_head(s, WeightVector(s.total_dim()), src, 5000);
  const Dataset tgt = domains::generate_gaussian_mixture(4, 4, 200, 2.5, 2);
  const double a_src = models::accuracy(s, fit.weights, src);
  const double a_tgt = evaluate_target(s, fit.weights, domains::apply_shift(tgt, {})).target_accuracy.value();
  EXPECT_NEAR(a_src, a_tgt, 0.05);
}

TEST(EvaluateTest, LabelNoiseLowersCeiling) {
  const Dataset clean = domains::generate_gaussian_mixture(4, 4, 200, 4.0, 3);
  domains::ShiftSpec noisy;
  noisy.label_noise_rate = 0.2;
  noisy.seed = 5;
  const Dataset dirty = domains::apply_shift(clean, noisy);
  const ModelSpec s = ModelSpec::logistic(4, 4);
  const double a_clean = models::accuracy(s, fit_head(s, WeightVector(s.total_dim()), clean, 5000).weights, clean);
  const double a_dirty = models::accuracy(s, fit_head(s, WeightVector(s.total_dim()), dirty, 5000).weights, dirty);
  EXPECT_LT(a_dirty, a_clean);
}

TEST(HDiscrepancyTest, IdenticalDatasetsGiveZero) {
  std::mt19937_64 rng(4);
  const Dataset d = testing::random_dataset(rng, 10, 3, 3);
  AscentOptions o;
  o.seed = 1;
  EXPECT_EQ(estimate_h_discrepancy(ModelSpec::logistic(3, 3), d, d, o).value, 0.0);
}

TEST(HDiscrepancyTest, Symmetric) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 10; ++t) {
    const Dataset a = testing::random_dataset(rng, 8, 3, 3);
    const Dataset b = testing::random_dataset(rng, 8, 3, 3);
    AscentOptions o;
    o.seed = rng();
    o.restarts = 3;
    o.ascent_steps = 50;
    const ModelSpec s = ModelSpec::logistic(3, 3);
    EXPECT_EQ(estimate_h_discrepancy(s, a, b, o).value, estimate_h_discrepancy(s, b, a, o).value);
  }
}

TEST(HDiscrepancyTest, MatchesGridSearchInOneDimension) {
  std::mt19937_64 rng(6);
  const ModelSpec s = ModelSpec::linear_regression(1, false);
  for (int t = 0; t < 20; ++t) {
    const Dataset a = testing::random_dataset(rng, 4, 1, 3);
    const Dataset b = testing::random_dataset(rng, 4, 1, 3);
    AscentOptions o;
    o.seed = rng();
    o.weight_radius = 1.0;
    double grid = 0.0;
    for (int i = 0; i <= 20000; ++i) {
      const WeightVector w(Vec{-1.0 + 2.0 * i / 20000.0});
      grid = std::max(grid, std::abs(models::loss(s, w, a) - models::loss(s, w, b)));
    }
    EXPECT_NEAR(estimate_h_discrepancy(s, a, b, o).value, grid, 1e-3);
  }
}

TEST(HDiscrepancyTest, MonotoneInRadius) {
  std::mt19937_64 rng(7);
  const ModelSpec s = ModelSpec::linear_regression(2);
  for (int t = 0; t < 10; ++t) {
    const Dataset a = testing::random_dataset(rng, 6, 2, 3);
    const Dataset b = testing::random_dataset(rng, 6, 2, 3);
    AscentOptions o;
    o.seed = rng();
    double prev = 0.0;
    for (double r : {0.25, 0.5, 1.0, 2.0, 4.0}) {
      o.weight_radius = r;
      const double v = estimate_h_discrepancy(s, a, b, o).value;
      EXPECT_GE(v, prev - 1e-12) << "radius " << r;
      prev = v;
    }
  }
}

TEST(HDiscrepancyTest, DeterministicAcrossThreads) {
  std::mt19937_64 rng(8);
  const Dataset a = testing::random_dataset(rng, 8, 3, 3);
  const Dataset b = testing::random_dataset(rng, 8, 3, 3);
  AscentOptions o;
  o.seed = 9;
  const double v1 = estimate_h_discrepancy(ModelSpec::logistic(3, 3), a, b, o).value;
  o.threads = 4;
  EXPECT_EQ(estimate_h_discrepancy(ModelSpec::logistic(3, 3), a, b, o).value, v1);
  EXPECT_GE(v1, 0.0);
  o.restarts = 0;
  EXPECT_THROW(estimate_h_discrepancy(ModelSpec::logistic(3, 3), a, b, o), ConfigError);
}

TEST(CrossClientTest, TwoClientsEqualSinglePair) {
  std::mt19937_64 rng(9);
  const Dataset a = testing::random_dataset(rng, 8, 2, 2);
  const Dataset b = testing::random_dataset(rng, 8, 2, 2);
  AscentOptions o;
  o.seed = 3;
  const ModelSpec s = ModelSpec::logistic(2, 2);
  EXPECT_DOUBLE_EQ(estimate_cross_client_divergence(s, {a, b}, o).value, estimate_h_discrepancy(s, a, b, o).value);
  EXPECT_THROW(estimate_cross_client_divergence(s, {a}, o), ConfigError);
}

TEST(CrossClientTest, IidBelowLabelSubset) {
  const Dataset d = domains::generate_gaussian_mixture(4, 2, 100, 3.0, 1);
  const ModelSpec s = ModelSpec::logistic(2, 4);
  AscentOptions o;
  o.seed = 2;
  o.restarts = 4;
  o.ascent_steps = 100;
  const double iid = estimate_cross_client_divergence(s, d, domains::partition_iid(d, 4, 1), o).value;
  const double non = estimate_cross_client_divergence(s, d, domains::partition_label_subset(d, 4, 2, 1), o).value;
  EXPECT_LT(iid, non);
  // Finite-sample estimates of an iid split shrink toward 0 with more data.
  const Dataset big = domains::generate_gaussian_mixture(4, 2, 1600, 3.0, 1);
  const double iid_big = estimate_cross_client_divergence(s, big, domains::partition_iid(big, 4, 1), o).value;
  EXPECT_LT(iid_big, 0.5 * iid);
}

TEST(GfDiscrepancyTest, SameDomainIsZero) {
  std::mt19937_64 rng(10);
  const ModelSpec s = mlp_spec(3, 3);
  const Dataset d = testing::random_dataset(rng, 10, 3, 3);
  const auto samples = gf_feature_samples(s, {}, 1, 3, 0.5);
  HeadFitOptions o;
  o.max_steps = 500;
  EXPECT_EQ(estimate_gf_discrepancy(s, d, d, samples, o).value, 0.0);
}

TEST(GfDiscrepancyTest, ClosedFormLeastSquares) {
  std::mt19937_64 rng(11);
  const ModelSpec s = ModelSpec::linear_regression(1, false);
  for (int t = 0; t < 10; ++t) {
    const Dataset a = testing::random_dataset(rng, 6, 1, 4);
    const Dataset b = testing::random_dataset(rng, 6, 1, 4);
    const auto est = estimate_gf_discrepancy(s, a, b, {WeightVector(1)}, HeadFitOptions{});
    EXPECT_NEAR(est.value, std::abs(ls_inf(a) - ls_inf(b)), 1e-9);
    EXPECT_FALSE(est.budget_exhausted);
  }
}

TEST(GfDiscrepancyTest, GrowsWithRotation) {
  const ModelSpec s = mlp_spec(4, 4);
  const Dataset src = domains::generate_gaussian_mixture(4, 4, 40, 2.0, 1);
  const auto samples = gf_feature_samples(s, {}, 5, 8, 1.0);
  HeadFitOptions o;
  o.max_steps = 3000;
  double prev = -1.0;
  for (double angle : {0.0, 0.5, 1.0}) {
    domains::ShiftSpec sh;
    sh.rotation_angle = angle;
    const double v = estimate_gf_discrepancy(s, src, domains::apply_shift(src, sh), samples, o).value;
    EXPECT_GE(v, prev) << "angle " << angle;
    prev = v;
  }
}

TEST(GfDiscrepancyTest, FederatedIsClientMean) {
  std::mt19937_64 rng(12);
  const ModelSpec s = ModelSpec::linear_regression(1, false);
  const Dataset a = testing::random_dataset(rng, 6, 1, 4);
  const Dataset b = testing::random_dataset(rng, 6, 1, 4);
  const Dataset t = testing::random_dataset(rng, 6, 1, 4);
  const std::vector<WeightVector> f{WeightVector(1)};
  const double ea = estimate_gf_discrepancy(s, a, t, f, {}).value;
  const double eb = estimate_gf_discrepancy(s, b, t, f, {}).value;
  EXPECT_NEAR(estimate_federated_gf_discrepancy(s, {a, b}, t, f, {}).value, 0.5 * (ea + eb), 1e-15);
  EXPECT_THROW(estimate_gf_discrepancy(s, a, t, {}, {}), ConfigError);
}

TEST(GfDiscrepancyTest, FeatureSamplesFromTrajectory) {
  const ModelSpec s = ModelSpec::logistic(2, 2);
  std::vector<WeightVector> traj;
  for (int p = 0; p <= 8; ++p) traj.emplace_back(s.total_dim(), static_cast<double>(p));
  const auto out = gf_feature_samples(s, traj, 1, 8);
  ASSERT_EQ(out.size(), 13u);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(out[i][0], 2.0 * i);
  EXPECT_EQ(gf_feature_samples(s, std::vector<WeightVector>(1, WeightVector(6)), 1, 0).size(), 1u);
}

TEST(DiscrepancyTest, AlwaysLowerBound) {
  static_assert(DiscrepancyEstimate::kLowerBoundOnly);
  EXPECT_EQ(to_string(DiscrepancyKind::kCrossClient), "cross-client");
}

}  // namespace
}  // namespace fedgtst

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

#include <cmath>
#include <random>
#include <thread>

#include <gtest/gtest.h>

#include "fedgtst/models.hpp"
#include "test_util.hpp"

namespace fedgtst {
namespace {

using models::ModelSpec;
using models::WeightVector;
using testing::make_dataset;

std::vector<ModelSpec> all_specs() {
  ModelSpec mlp = ModelSpec::mlp(3, {4}, 3, models::Activation::kTanh);
  ModelSpec relu = ModelSpec::mlp(3, {5, 4}, 2, models::Activation::kRelu);
  return {ModelSpec::linear_regression(3), ModelSpec::linear_regression(3, false),
          ModelSpec::logistic(3, 4), ModelSpec::logistic(3, 2, false), mlp, relu};
}

TEST(ModelSpecTest, TotalDimCountsBias) {
  EXPECT_EQ(ModelSpec::linear_regression(3).total_dim(), 4u);
  EXPECT_EQ(ModelSpec::linear_regression(3, false).total_dim(), 3u);
  EXPECT_EQ(ModelSpec::logistic(3, 4).total_dim(), 16u);
  EXPECT_EQ(ModelSpec::mlp(3, {4}, 2, models::Activation::kTanh).total_dim(), 3u * 4 + 4 + 4 * 2 + 2);
}

TEST(ModelSpecTest, ValidateRejectsBadSplit) {
  ModelSpec s = ModelSpec::linear_regression(2);
  s.split_index = 4;
  EXPECT_THROW(s.validate(), ConfigError);
  s.split_index = 3;
  EXPECT_NO_THROW(s.validate());
  ModelSpec r = ModelSpec::linear_regression(2);
  r.num_classes = 2;
  EXPECT_THROW(r.validate(), ConfigError);
}

TEST(InitWeightsTest, DeterministicAndBounded) {
  const ModelSpec s = ModelSpec::logistic(5, 3);
  const WeightVector a = models::init_weights(s, 42, 0.3);
  EXPECT_EQ(a, models::init_weights(s, 42, 0.3));
  EXPECT_NE(a, models::init_weights(s, 43, 0.3));
  for (double v : a.values) {
    EXPECT_LE(std::abs(v), 0.3);
  }
}

TEST(InitWeightsTest, ZeroScaleGivesZeros) {
  const WeightVector w = models::init_weights(ModelSpec::linear_regression(3), 1, 0.0);
  EXPECT_EQ(w.size(), 4u);
  for (double v : w.values) EXPECT_EQ(v, 0.0);
}

TEST(LossTest, ZeroModelZeroTargets) {
  const Dataset d = make_dataset({{1.0, 2.0}, {-3.0, 0.5}}, {0, 0}, 1);
  EXPECT_EQ(models::loss(ModelSpec::linear_regression(2), WeightVector(3), d), 0.0);
}

TEST(LossTest, UniformSoftmaxIsLogC) {
  const Dataset d = make_dataset({{1.0, 2.0}, {-3.0, 0.5}, {0.0, 1.0}}, {0, 3, 2}, 4);
  const ModelSpec s = ModelSpec::logistic(2, 4);
  EXPECT_NEAR(models::loss(s, WeightVector(s.total_dim()), d), std::log(4.0), 1e-15);
}

TEST(LossTest, HandEvaluatedSquaredLoss) {
  // w = (1, 0) with a bias slot: prediction 1 * 2 + 0 = 2, target 1.
  const Dataset d = make_dataset({{2.0}}, {1}, 1);
  EXPECT_DOUBLE_EQ(models::loss(ModelSpec::linear_regression(1), WeightVector(Vec{1.0, 0.0}), d), 1.0);
}

TEST(LossTest, DimensionMismatchThrows) {
  const Dataset d = make_dataset({{2.0, 1.0}}, {1}, 1);
  EXPECT_THROW(models::loss(ModelSpec::linear_regression(3), WeightVector(4), d), DimensionError);
  EXPECT_THROW(models::loss(ModelSpec::linear_regression(2), WeightVector(4), d), DimensionError);
}

TEST(GradientTest, HandDifferentiated) {
  const Dataset d = make_dataset({{2.0}}, {1}, 1);
  const WeightVector g = models::gradient(ModelSpec::linear_regression(1, false), WeightVector(Vec{1.0}), d);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_DOUBLE_EQ(g[0], 4.0);
}

TEST(GradientTest, StationaryPointHasZeroGradient) {
  // y = 2x + 1 fits exactly.
  const Dataset d = make_dataset({{0.0}, {1.0}, {2.0}}, {1, 3, 5}, 1);
  const WeightVector g = models::gradient(ModelSpec::linear_regression(1), WeightVector(Vec{2.0, 1.0}), d);
  EXPECT_LT(linalg::norm(g.view()), 1e-8);
}

TEST(GradientTest, MatchesFiniteDifferencesAtRandomPoints) {
  std::mt19937_64 rng(7);
  int checked = 0;
  for (const auto& spec : all_specs()) {
    for (int t = 0; t < 20; ++t) {
      const Dataset d = testing::random_dataset(rng, 6, spec.input_dim, static_cast<int>(spec.num_classes));
      const WeightVector w = testing::random_weights(rng, spec.total_dim(), 0.7);
      const WeightVector g = models::gradient(spec, w, d);
      const Vec fd = testing::fd_gradient([&](const WeightVector& x) { return models::loss(spec, x, d); }, w);
      EXPECT_LT(linalg::relative_error(g.view(), fd), 1e-5) << models::to_string(spec.kind) << " trial " << t;
      ++checked;
    }
  }
  EXPECT_GE(checked, 100);
}

TEST(GradientTest, LossAndGradientAgreeWithSeparateCalls) {
  std::mt19937_64 rng(3);
  for (const auto& spec : all_specs()) {
    const Dataset d = testing::random_dataset(rng, 5, spec.input_dim, static_cast<int>(spec.num_classes));
    const WeightVector w = testing::random_weights(rng, spec.total_dim());
    const auto lg = models::loss_and_gradient(spec, w, d);
    EXPECT_EQ(lg.loss, models::loss(spec, w, d));
    EXPECT_EQ(lg.gradient, models::gradient(spec, w, d));
  }
}

TEST(HvpTest, LinearRegressionClosedForm) {
  const Dataset d = make_dataset({{1.0, 2.0}, {0.5, -1.0}, {3.0, 0.0}}, {1, 0, 2}, 1);
  const ModelSpec s = ModelSpec::linear_regression(2, false);
  const WeightVector v(Vec{0.3, -0.7});
  const WeightVector hv = models::hvp(s, WeightVector(Vec{0.1, 0.2}), d, v, models::HvpMode::kAnalytic);
  // (2/n) X^T X v
  Vec expect(2, 0.0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto x = d.features.row(i);
    const double xv = x[0] * v[0] + x[1] * v[1];
    expect[0] += 2.0 / 3.0 * x[0] * xv;
    expect[1] += 2.0 / 3.0 * x[1] * xv;
  }
  EXPECT_LT(linalg::relative_error(hv.view(), expect), 1e-14);
}

TEST(HvpTest, ZeroVectorGivesZero) {
  std::mt19937_64 rng(1);
  for (const auto& spec : all_specs()) {
    const Dataset d = testing::random_dataset(rng, 4, spec.input_dim, static_cast<int>(spec.num_classes));
    const WeightVector w = testing::random_weights(rng, spec.total_dim());
    const WeightVector hv = models::hvp(spec, w, d, WeightVector(spec.total_dim()), models::HvpMode::kFiniteDifference);
    EXPECT_EQ(linalg::norm(hv.view()), 0.0);
  }
}

TEST(HvpTest, AnalyticRejectedForMlp) {
  const ModelSpec s = ModelSpec::mlp(2, {3}, 2, models::Activation::kTanh);
  const Dataset d = make_dataset({{1.0, 2.0}}, {1}, 2);
  EXPECT_THROW(models::hvp(s, WeightVector(s.total_dim()), d, WeightVector(s.total_dim()), models::HvpMode::kAnalytic),
               ConfigError);
}

TEST(HvpTest, FiniteDifferenceMatchesAnalytic) {
  std::mt19937_64 rng(11);
  for (const auto& spec : {ModelSpec::linear_regression(4), ModelSpec::logistic(4, 3)}) {
    for (int t = 0; t < 25; ++t) {
      const Dataset d = testing::random_dataset(rng, 8, 4, static_cast<int>(spec.num_classes));
      const WeightVector w = testing::random_weights(rng, spec.total_dim());
      const WeightVector v = testing::random_weights(rng, spec.total_dim());
      const auto a = models::hvp(spec, w, d, v, models::HvpMode::kAnalytic);
      const auto f = models::hvp(spec, w, d, v, models::HvpMode::kFiniteDifference);
      const double tol = spec.kind == models::ModelKind::kLinearRegression ? 1e-6 : 1e-5;
      EXPECT_LT(linalg::relative_error(a.view(), f.view()), tol);
    }
  }
}

TEST(SmoothnessTest, SingleSample) {
  const Dataset d = make_dataset({{1.0}}, {0}, 1);
  const auto est = models::smoothness_constant(ModelSpec::linear_regression(1, false), d);
  EXPECT_NEAR(est.alpha, 2.0, 1e-9);
  EXPECT_TRUE(est.certified);
}

TEST(SmoothnessTest, ScalesQuadraticallyWithData) {
  std::mt19937_64 rng(5);
  Dataset d = testing::random_dataset(rng, 20, 3, 1);
  const ModelSpec s = ModelSpec::linear_regression(3, false);
  const double a1 = models::smoothness_constant(s, d).alpha;
  for (auto& v : d.features.data()) v *= 3.0;
  const double a3 = models::smoothness_constant(s, d).alpha;
  EXPECT_NEAR(a3 / a1, 9.0, 1e-6);
}

TEST(SmoothnessTest, EmptyDatasetThrows) {
  Dataset d;
  d.features = Matrix(0, 2);
  EXPECT_THROW(models::smoothness_constant(ModelSpec::linear_regression(2), d), ConfigError);
}

TEST(SmoothnessTest, LipschitzHoldsOnSampledPairs) {
  std::mt19937_64 rng(17);
  for (const auto& spec : {ModelSpec::linear_regression(3), ModelSpec::logistic(3, 3)}) {
    const Dataset d = testing::random_dataset(rng, 30, 3, static_cast<int>(spec.num_classes));
    const double alpha = models::smoothness_constant(spec, d).alpha;
    for (int t = 0; t < 1000; ++t) {
      const WeightVector a = testing::random_weights(rng, spec.total_dim(), 2.0);
      const WeightVector b = testing::random_weights(rng, spec.total_dim(), 2.0);
      const Vec dg = linalg::sub(models::gradient(spec, a, d).view(), models::gradient(spec, b, d).view());
      const double dw = linalg::norm(linalg::sub(a.view(), b.view()));
      ASSERT_LE(linalg::norm(dg), alpha * dw * (1.0 + 1e-9)) << models::to_string(spec.kind) << " pair " << t;
    }
  }
}

TEST(SmoothnessTest, MlpEstimateBelowCertifiedOnLinearNetwork) {
  // An mlp without hidden layers is the logistic classifier; the empirical
  // estimate must stay under the certified constant.
  std::mt19937_64 rng(23);
  const Dataset d = testing::random_dataset(rng, 40, 2, 2);
  const auto est = models::smoothness_constant(ModelSpec::mlp(2, {}, 2, models::Activation::kIdentity), d);
  const auto bound = models::smoothness_constant(ModelSpec::logistic(2, 2), d);
  EXPECT_FALSE(est.certified);
  EXPECT_TRUE(bound.certified);
  EXPECT_GT(est.alpha, 0.0);
  EXPECT_LE(est.alpha, bound.alpha * (1.0 + 1e-9));
}

TEST(ConvexityTest, LossConvexAlongSegments) {
  std::mt19937_64 rng(29);
  for (const auto& spec : {ModelSpec::linear_regression(3), ModelSpec::logistic(3, 4)}) {
    const Dataset d = testing::random_dataset(rng, 15, 3, static_cast<int>(spec.num_classes));
    for (int t = 0; t < 200; ++t) {
      const WeightVector w1 = testing::random_weights(rng, spec.total_dim(), 2.0);
      const WeightVector w2 = testing::random_weights(rng, spec.total_dim(), 2.0);
      const double s = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      WeightVector m(spec.total_dim());
      for (std::size_t i = 0; i < m.size(); ++i) m[i] = s * w1[i] + (1.0 - s) * w2[i];
      EXPECT_LE(models::loss(spec, m, d), s * models::loss(spec, w1, d) + (1.0 - s) * models::loss(spec, w2, d) + 1e-10);
    }
  }
}

TEST(AccuracyTest, PerfectFit) {
  const Dataset d = make_dataset({{1.0}, {-1.0}}, {1, 0}, 2);
  // logits: class 0 = -x, class 1 = x
  const WeightVector w(Vec{-1.0, 1.0, 0.0, 0.0});
  EXPECT_EQ(models::accuracy(ModelSpec::logistic(1, 2), w, d), 1.0);
}

TEST(AccuracyTest, ZeroWeightsPickClassZero) {
  const Dataset d = make_dataset({{1.0}, {2.0}, {3.0}, {4.0}}, {0, 2, 0, 1}, 3);
  const ModelSpec s = ModelSpec::logistic(1, 3);
  EXPECT_DOUBLE_EQ(models::accuracy(s, WeightVector(s.total_dim()), d), 0.5);
}

TEST(AccuracyTest, SingleCorrectPoint) {
  const Dataset d = make_dataset({{1.0}}, {1}, 2);
  EXPECT_EQ(models::accuracy(ModelSpec::logistic(1, 2), WeightVector(Vec{-1.0, 1.0, 0.0, 0.0}), d), 1.0);
}

TEST(AccuracyTest, RegressionThrows) {
  const Dataset d = make_dataset({{1.0}}, {1}, 1);
  EXPECT_THROW(models::accuracy(ModelSpec::linear_regression(1), WeightVector(2), d), ConfigError);
}

TEST(ModelsTest, ThreadSafePureFunctions) {
  // Same inputs from many threads give the same bits.
  std::mt19937_64 rng(31);
  const ModelSpec s = ModelSpec::mlp(3, {4}, 3, models::Activation::kTanh);
  const Dataset d = testing::random_dataset(rng, 20, 3, 3);
  const WeightVector w = testing::random_weights(rng, s.total_dim());
  const WeightVector ref = models::gradient(s, w, d);
  std::vector<WeightVector> got(8);
  {
    std::vector<std::jthread> ts;
    for (std::size_t i = 0; i < got.size(); ++i) ts.emplace_back([&, i] { got[i] = models::gradient(s, w, d); });
  }
  for (const auto& g : got) EXPECT_EQ(g, ref);
}

}  // namespace
}  // namespace fedgtst

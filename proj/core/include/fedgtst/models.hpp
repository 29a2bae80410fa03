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

#ifndef FEDGTST_MODELS_HPP_
#define FEDGTST_MODELS_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fedgtst/common.hpp"
#include "fedgtst/dataset.hpp"

namespace fedgtst::models {

enum class ModelKind { kLinearRegression, kLogisticClassifier, kMlp };
enum class Activation { kTanh, kRelu, kIdentity };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);
std::string to_string(Activation act);
Activation parse_activation(const std::string& name);

// Describes a small differentiable model h = g o f over a flat weight vector.
//
// Weight layout:
//   linear-regression:   [w_0 .. w_{m-1}, b]
//   logistic-classifier: [W (C x m, row-major), b (C)]
//   mlp:                 per layer l: [W_l (out x in, row-major), b_l (out)]
// Every weight with index < split_index belongs to the frozen feature block f;
// the rest form the classifier head g. For the mlp the natural split is the
// offset of the last layer (see default_split_index).
struct ModelSpec {
  ModelKind kind = ModelKind::kLinearRegression;
  std::size_t input_dim = 1;
  std::size_t num_classes = 1;
  bool bias = true;
  std::vector<std::size_t> hidden;  // mlp only
  Activation activation = Activation::kTanh;
  std::size_t split_index = 0;

  std::size_t total_dim() const;
  // Offset of the last layer for mlp, 0 for the linear models.
  std::size_t default_split_index() const;
  bool is_classifier() const { return kind != ModelKind::kLinearRegression; }
  // Convex in the weights with a certifiable smoothness constant.
  bool is_convex() const { return kind != ModelKind::kMlp; }
  void validate() const;

  static ModelSpec linear_regression(std::size_t input_dim, bool bias = true);
  static ModelSpec logistic(std::size_t input_dim, std::size_t num_classes, bool bias = true);
  static ModelSpec mlp(std::size_t input_dim, std::vector<std::size_t> hidden,
                       std::size_t num_classes, Activation act);

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// Flat model parameters w_h. Entries are expected to stay finite.
struct WeightVector {
  Vec values;

  WeightVector() = default;
  explicit WeightVector(Vec v) : values(std::move(v)) {}
  explicit WeightVector(std::size_t n, double fill = 0.0) : values(n, fill) {}

  std::size_t size() const { return values.size(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  std::span<const double> view() const { return values; }
  std::span<double> view() { return values; }

  std::span<const double> feature_block(const ModelSpec& spec) const {
    return view().first(spec.split_index);
  }
  std::span<const double> head_block(const ModelSpec& spec) const {
    return view().subspan(spec.split_index);
  }

  friend bool operator==(const WeightVector&, const WeightVector&) = default;
};

enum class HvpMode { kAnalytic, kFiniteDifference };

struct SmoothnessEstimate {
  double alpha = 0.0;
  // True when alpha is a proven upper bound on the gradient Lipschitz constant.
  bool certified = false;
};

struct LossAndGradient {
  double loss = 0.0;
  WeightVector gradient;
};

// Entries i.i.d. uniform in [-scale, scale]; scale == 0 gives zeros.
WeightVector init_weights(const ModelSpec& spec, std::uint64_t seed, double scale);

// Mean loss over the batch: squared error for regression, softmax
// cross-entropy for classifiers.
double loss(const ModelSpec& spec, const WeightVector& w, const Batch& batch);

// Exact gradient of loss() with respect to all weights.
WeightVector gradient(const ModelSpec& spec, const WeightVector& w, const Batch& batch);

LossAndGradient loss_and_gradient(const ModelSpec& spec, const WeightVector& w,
                                  const Batch& batch);

// Hessian-vector product H(w) v. The analytic mode is available for the two
// linear models; the finite-difference mode uses central differences of the
// gradient with step 1e-5 * max(1, ||w||).
WeightVector hvp(const ModelSpec& spec, const WeightVector& w, const Batch& batch,
                 const WeightVector& v, HvpMode mode);

// Largest eigenvalue of a symmetric PSD operator by power iteration.
double power_iteration(std::size_t dim, const std::function<Vec(const Vec&)>& apply,
                       double tolerance = 1e-9, std::size_t max_iters = 100000);

// X~^T X~ / n with a ones column appended when `bias`.
Matrix gram_matrix(const Matrix& x, bool bias);
// Largest eigenvalue of a symmetric PSD matrix (power iteration).
double symmetric_lambda_max(const Matrix& m);

// Gradient Lipschitz constant alpha.
//   linear-regression: 2 * lambda_max(X^T X / n)           (exact, certified)
//   logistic:          1/2 * lambda_max(X^T X / n)         (certified bound)
//   mlp:               sup over 64 sampled pairs of ||J(w) - J(w')|| / ||w - w'||
//                      (a lower bound, never certified)
// X carries an appended ones column when the model has a bias.
SmoothnessEstimate smoothness_constant(const ModelSpec& spec, const Batch& dataset);

// Smoothness of the loss restricted to the head block with the feature block
// of `w` held fixed. Certified for every kind since the head is linear in the
// extracted features.
SmoothnessEstimate head_smoothness_constant(const ModelSpec& spec, const WeightVector& w,
                                            const Batch& dataset);

// Fraction of argmax-correct predictions; ties go to the smaller class index.
double accuracy(const ModelSpec& spec, const WeightVector& w, const Batch& batch);

// Output of the feature extractor f for each row (the input itself for the
// linear models, last hidden activations for the mlp).
Matrix extract_features(const ModelSpec& spec, const WeightVector& w, const Batch& batch);

}  // namespace fedgtst::models

#endif  // FEDGTST_MODELS_HPP_

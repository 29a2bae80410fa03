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

#include "fedgtst/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace fedgtst::models {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kLinearRegression:
      return "linear-regression";
    case ModelKind::kLogisticClassifier:
      return "logistic-classifier";
    case ModelKind::kMlp:
      return "mlp";
  }
  return "unknown";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "linear-regression") return ModelKind::kLinearRegression;
  if (name == "logistic-classifier" || name == "logistic") return ModelKind::kLogisticClassifier;
  if (name == "mlp") return ModelKind::kMlp;
  throw ConfigError("unknown model kind '" + name + "'");
}

std::string to_string(Activation act) {
  switch (act) {
    case Activation::kTanh:
      return "tanh";
    case Activation::kRelu:
      return "relu";
    case Activation::kIdentity:
      return "identity";
  }
  return "unknown";
}

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  if (name == "identity") return Activation::kIdentity;
  throw ConfigError("unknown activation '" + name + "'");
}

namespace {

// Parameter offsets of an mlp with layer widths [m, hidden..., C].
struct MlpLayout {
  std::vector<std::size_t> sizes;
  std::vector<std::size_t> w_off;
  std::vector<std::size_t> b_off;
  std::size_t total = 0;

  explicit MlpLayout(const ModelSpec& spec) {
    sizes.push_back(spec.input_dim);
    sizes.insert(sizes.end(), spec.hidden.begin(), spec.hidden.end());
    sizes.push_back(spec.num_classes);
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      w_off.push_back(total);
      total += sizes[l] * sizes[l + 1];
      b_off.push_back(total);
      if (spec.bias) total += sizes[l + 1];
    }
  }
  std::size_t layers() const { return sizes.size() - 1; }
};

double activate(Activation act, double z) {
  switch (act) {
    case Activation::kTanh:
      return std::tanh(z);
    case Activation::kRelu:
      return z > 0.0 ? z : 0.0;
    case Activation::kIdentity:
      return z;
  }
  return z;
}

double activate_derivative(Activation act, double z, double a) {
  switch (act) {
    case Activation::kTanh:
      return 1.0 - a * a;
    case Activation::kRelu:
      return z > 0.0 ? 1.0 : 0.0;
    case Activation::kIdentity:
      return 1.0;
  }
  return 1.0;
}

void check_inputs(const ModelSpec& spec, const WeightVector& w, const Batch& batch) {
  if (w.size() != spec.total_dim()) {
    throw DimensionError("weight vector has " + std::to_string(w.size()) + " entries, model needs " +
                         std::to_string(spec.total_dim()));
  }
  if (batch.empty()) throw ConfigError("empty batch");
  if (batch.features.rows() != batch.labels.size()) {
    throw DimensionError("batch feature rows and labels differ in length");
  }
  if (batch.dim() != spec.input_dim) {
    throw DimensionError("batch has " + std::to_string(batch.dim()) + " features, model expects " +
                         std::to_string(spec.input_dim));
  }
  if (spec.is_classifier()) {
    for (int y : batch.labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= spec.num_classes) {
        throw ConfigError("label " + std::to_string(y) + " outside [0, " +
                          std::to_string(spec.num_classes) + ")");
      }
    }
  }
}

// Logits of the linear softmax model for one sample.
void logistic_logits(const ModelSpec& spec, std::span<const double> w, std::span<const double> x,
                     std::span<double> out) {
  const std::size_t m = spec.input_dim;
  const std::size_t b_off = spec.num_classes * m;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    double z = spec.bias ? w[b_off + c] : 0.0;
    const double* row = w.data() + c * m;
    for (std::size_t j = 0; j < m; ++j) z += row[j] * x[j];
    out[c] = z;
  }
}

// In-place softmax; returns log-sum-exp of the input logits.
double softmax_inplace(std::span<double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double& v : z) {
    v = std::exp(v - mx);
    s += v;
  }
  for (double& v : z) v /= s;
  return mx + std::log(s);
}

double linear_predict(const ModelSpec& spec, std::span<const double> w, std::span<const double> x) {
  double z = spec.bias ? w[spec.input_dim] : 0.0;
  for (std::size_t j = 0; j < spec.input_dim; ++j) z += w[j] * x[j];
  return z;
}

// Forward pass of the mlp for one sample. acts[0] is the input, acts[L] the
// logits; pre[l] holds pre-activations of layer l.
struct MlpPass {
  std::vector<Vec> acts;
  std::vector<Vec> pre;
};

void mlp_forward(const ModelSpec& spec, const MlpLayout& lay, std::span<const double> w,
                 std::span<const double> x, MlpPass& pass) {
  const std::size_t L = lay.layers();
  pass.acts.resize(L + 1);
  pass.pre.resize(L);
  pass.acts[0].assign(x.begin(), x.end());
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t in = lay.sizes[l];
    const std::size_t out = lay.sizes[l + 1];
    Vec& z = pass.pre[l];
    z.assign(out, 0.0);
    const Vec& a = pass.acts[l];
    for (std::size_t o = 0; o < out; ++o) {
      double s = spec.bias ? w[lay.b_off[l] + o] : 0.0;
      const double* row = w.data() + lay.w_off[l] + o * in;
      for (std::size_t i = 0; i < in; ++i) s += row[i] * a[i];
      z[o] = s;
    }
    Vec& next = pass.acts[l + 1];
    next.resize(out);
    const bool last = (l + 1 == L);
    for (std::size_t o = 0; o < out; ++o) next[o] = last ? z[o] : activate(spec.activation, z[o]);
  }
}

// Shared accumulation over the batch: loss, optionally gradient.
double accumulate(const ModelSpec& spec, const WeightVector& wv, const Batch& batch, Vec* grad) {
  const std::span<const double> w = wv.view();
  const std::size_t n = batch.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  if (grad) grad->assign(spec.total_dim(), 0.0);

  switch (spec.kind) {
    case ModelKind::kLinearRegression: {
      for (std::size_t i = 0; i < n; ++i) {
        auto x = batch.features.row(i);
        const double r = linear_predict(spec, w, x) - static_cast<double>(batch.labels[i]);
        total += r * r;
        if (grad) {
          const double g = 2.0 * r * inv_n;
          for (std::size_t j = 0; j < spec.input_dim; ++j) (*grad)[j] += g * x[j];
          if (spec.bias) (*grad)[spec.input_dim] += g;
        }
      }
      break;
    }
    case ModelKind::kLogisticClassifier: {
      const std::size_t C = spec.num_classes;
      const std::size_t m = spec.input_dim;
      Vec z(C);
      for (std::size_t i = 0; i < n; ++i) {
        auto x = batch.features.row(i);
        const auto y = static_cast<std::size_t>(batch.labels[i]);
        logistic_logits(spec, w, x, z);
        const double zy = z[y];
        const double lse = softmax_inplace(z);
        total += lse - zy;
        if (grad) {
          for (std::size_t c = 0; c < C; ++c) {
            const double d = (z[c] - (c == y ? 1.0 : 0.0)) * inv_n;
            double* row = grad->data() + c * m;
            for (std::size_t j = 0; j < m; ++j) row[j] += d * x[j];
            if (spec.bias) (*grad)[C * m + c] += d;
          }
        }
      }
      break;
    }
    case ModelKind::kMlp: {
      const MlpLayout lay(spec);
      const std::size_t L = lay.layers();
      MlpPass pass;
      Vec delta;
      Vec prev_delta;
      for (std::size_t i = 0; i < n; ++i) {
        const auto y = static_cast<std::size_t>(batch.labels[i]);
        mlp_forward(spec, lay, w, batch.features.row(i), pass);
        Vec probs = pass.acts[L];
        const double zy = probs[y];
        const double lse = softmax_inplace(probs);
        total += lse - zy;
        if (!grad) continue;
        delta = probs;
        delta[y] -= 1.0;
        for (std::size_t c = 0; c < delta.size(); ++c) delta[c] *= inv_n;
        for (std::size_t l = L; l-- > 0;) {
          const std::size_t in = lay.sizes[l];
          const std::size_t out = lay.sizes[l + 1];
          const Vec& a = pass.acts[l];
          for (std::size_t o = 0; o < out; ++o) {
            double* row = grad->data() + lay.w_off[l] + o * in;
            for (std::size_t k = 0; k < in; ++k) row[k] += delta[o] * a[k];
            if (spec.bias) (*grad)[lay.b_off[l] + o] += delta[o];
          }
          if (l == 0) break;
          prev_delta.assign(in, 0.0);
          for (std::size_t o = 0; o < out; ++o) {
            const double* row = w.data() + lay.w_off[l] + o * in;
            for (std::size_t k = 0; k < in; ++k) prev_delta[k] += row[k] * delta[o];
          }
          for (std::size_t k = 0; k < in; ++k) {
            prev_delta[k] *= activate_derivative(spec.activation, pass.pre[l - 1][k], a[k]);
          }
          delta.swap(prev_delta);
        }
      }
      break;
    }
  }
  return total * inv_n;
}

}  // namespace

Matrix gram_matrix(const Matrix& x, bool bias) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols() + (bias ? 1 : 0);
  Matrix g(d, d);
  Vec row(d, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto src = x.row(i);
    std::copy(src.begin(), src.end(), row.begin());
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = a; b < d; ++b) g(a, b) += row[a] * row[b];
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      g(a, b) *= inv_n;
      g(b, a) = g(a, b);
    }
  }
  return g;
}

double symmetric_lambda_max(const Matrix& g) {
  const std::size_t d = g.rows();
  return power_iteration(d, [&](const Vec& v) {
    Vec out(d, 0.0);
    for (std::size_t a = 0; a < d; ++a) out[a] = linalg::dot(g.row(a), v);
    return out;
  });
}

namespace {

double gram_lambda_max(const Matrix& x, bool bias) {
  return symmetric_lambda_max(gram_matrix(x, bias));
}

}  // namespace

std::size_t ModelSpec::total_dim() const {
  switch (kind) {
    case ModelKind::kLinearRegression:
      return input_dim + (bias ? 1 : 0);
    case ModelKind::kLogisticClassifier:
      return num_classes * input_dim + (bias ? num_classes : 0);
    case ModelKind::kMlp:
      return MlpLayout(*this).total;
  }
  return 0;
}

std::size_t ModelSpec::default_split_index() const {
  if (kind != ModelKind::kMlp) return 0;
  const MlpLayout lay(*this);
  return lay.w_off.back();
}

void ModelSpec::validate() const {
  if (input_dim == 0) throw ConfigError("model input_dim must be positive");
  if (num_classes == 0) throw ConfigError("model num_classes must be positive");
  if (kind == ModelKind::kLinearRegression && num_classes != 1) {
    throw ConfigError("linear-regression requires num_classes = 1");
  }
  if (kind != ModelKind::kMlp && !hidden.empty()) {
    throw ConfigError("hidden layers are only valid for the mlp");
  }
  for (std::size_t h : hidden) {
    if (h == 0) throw ConfigError("mlp hidden widths must be positive");
  }
  if (split_index > total_dim()) {
    throw ConfigError("split_index " + std::to_string(split_index) + " exceeds total dim " +
                      std::to_string(total_dim()));
  }
}

ModelSpec ModelSpec::linear_regression(std::size_t input_dim, bool bias) {
  ModelSpec s;
  s.kind = ModelKind::kLinearRegression;
  s.input_dim = input_dim;
  s.num_classes = 1;
  s.bias = bias;
  return s;
}

ModelSpec ModelSpec::logistic(std::size_t input_dim, std::size_t num_classes, bool bias) {
  ModelSpec s;
  s.kind = ModelKind::kLogisticClassifier;
  s.input_dim = input_dim;
  s.num_classes = num_classes;
  s.bias = bias;
  return s;
}

ModelSpec ModelSpec::mlp(std::size_t input_dim, std::vector<std::size_t> hidden,
                         std::size_t num_classes, Activation act) {
  ModelSpec s;
  s.kind = ModelKind::kMlp;
  s.input_dim = input_dim;
  s.num_classes = num_classes;
  s.hidden = std::move(hidden);
  s.activation = act;
  s.split_index = s.default_split_index();
  return s;
}

WeightVector init_weights(const ModelSpec& spec, std::uint64_t seed, double scale) {
  if (scale < 0.0) throw ConfigError("init scale must be non-negative");
  WeightVector w(spec.total_dim());
  if (scale == 0.0) return w;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (double& v : w.values) v = dist(rng);
  return w;
}

double loss(const ModelSpec& spec, const WeightVector& w, const Batch& batch) {
  check_inputs(spec, w, batch);
  return accumulate(spec, w, batch, nullptr);
}

WeightVector gradient(const ModelSpec& spec, const WeightVector& w, const Batch& batch) {
  return loss_and_gradient(spec, w, batch).gradient;
}

LossAndGradient loss_and_gradient(const ModelSpec& spec, const WeightVector& w,
                                  const Batch& batch) {
  check_inputs(spec, w, batch);
  LossAndGradient out;
  out.loss = accumulate(spec, w, batch, &out.gradient.values);
  return out;
}

WeightVector hvp(const ModelSpec& spec, const WeightVector& w, const Batch& batch,
                 const WeightVector& v, HvpMode mode) {
  check_inputs(spec, w, batch);
  if (v.size() != w.size()) throw DimensionError("hvp direction has wrong length");

  if (mode == HvpMode::kFiniteDifference) {
    const double eps = 1e-5 * std::max(1.0, linalg::norm(w.view()));
    WeightVector plus = w;
    WeightVector minus = w;
    linalg::axpy(eps, v.view(), plus.view());
    linalg::axpy(-eps, v.view(), minus.view());
    WeightVector out(linalg::sub(gradient(spec, plus, batch).view(),
                                 gradient(spec, minus, batch).view()));
    linalg::scale(1.0 / (2.0 * eps), out.view());
    return out;
  }

  const std::size_t n = batch.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  WeightVector out(spec.total_dim());
  switch (spec.kind) {
    case ModelKind::kLinearRegression: {
      // H = (2/n) X~^T X~
      for (std::size_t i = 0; i < n; ++i) {
        auto x = batch.features.row(i);
        double xv = spec.bias ? v[spec.input_dim] : 0.0;
        for (std::size_t j = 0; j < spec.input_dim; ++j) xv += x[j] * v[j];
        const double g = 2.0 * xv * inv_n;
        for (std::size_t j = 0; j < spec.input_dim; ++j) out[j] += g * x[j];
        if (spec.bias) out[spec.input_dim] += g;
      }
      return out;
    }
    case ModelKind::kLogisticClassifier: {
      // Per sample: (diag(p) - p p^T) (V x + v_b), outer product with x~.
      const std::size_t C = spec.num_classes;
      const std::size_t m = spec.input_dim;
      Vec p(C);
      Vec u(C);
      for (std::size_t i = 0; i < n; ++i) {
        auto x = batch.features.row(i);
        logistic_logits(spec, w.view(), x, p);
        softmax_inplace(p);
        logistic_logits(spec, v.view(), x, u);
        const double pu = linalg::dot(p, u);
        for (std::size_t c = 0; c < C; ++c) {
          const double s = p[c] * (u[c] - pu) * inv_n;
          for (std::size_t j = 0; j < m; ++j) out[c * m + j] += s * x[j];
          if (spec.bias) out[C * m + c] += s;
        }
      }
      return out;
    }
    case ModelKind::kMlp:
      throw ConfigError("analytic hvp is not available for the mlp; use finite-difference mode");
  }
  return out;
}

double power_iteration(std::size_t dim, const std::function<Vec(const Vec&)>& apply,
                       double tolerance, std::size_t max_iters) {
  if (dim == 0) return 0.0;
  std::mt19937_64 rng(0x5eed);
  std::uniform_real_distribution<double> dist(0.5, 1.5);
  Vec v(dim);
  for (double& x : v) x = dist(rng);
  linalg::scale(1.0 / linalg::norm(v), v);
  double lambda = 0.0;
  for (std::size_t it = 0; it < max_iters; ++it) {
    Vec av = apply(v);
    const double nrm = linalg::norm(av);
    if (nrm == 0.0) return 0.0;
    linalg::scale(1.0 / nrm, av);
    const bool done = std::abs(nrm - lambda) <= tolerance * std::max(1.0, nrm);
    lambda = nrm;
    v.swap(av);
    if (done && it > 2) break;
  }
  return lambda;
}

SmoothnessEstimate smoothness_constant(const ModelSpec& spec, const Batch& dataset) {
  if (dataset.empty()) throw ConfigError("empty dataset");
  if (dataset.dim() != spec.input_dim) throw DimensionError("dataset dim does not match model");
  switch (spec.kind) {
    case ModelKind::kLinearRegression:
      return {2.0 * gram_lambda_max(dataset.features, spec.bias), true};
    case ModelKind::kLogisticClassifier:
      // The softmax Jacobian diag(p) - p p^T has spectral norm at most 1/2.
      return {0.5 * gram_lambda_max(dataset.features, spec.bias), true};
    case ModelKind::kMlp: {
      constexpr int kPairs = 64;
      std::mt19937_64 rng(0x5400'7431);
      std::uniform_real_distribution<double> dir(-1.0, 1.0);
      double best = 0.0;
      for (int k = 0; k < kPairs; ++k) {
        const WeightVector w = init_weights(spec, rng(), 1.0);
        WeightVector delta(spec.total_dim());
        for (double& d : delta.values) d = dir(rng);
        linalg::scale(0.05 / linalg::norm(delta.view()), delta.view());
        const WeightVector w2(linalg::add(w.view(), delta.view()));
        const Vec dg = linalg::sub(gradient(spec, w, dataset).view(),
                                   gradient(spec, w2, dataset).view());
        best = std::max(best, linalg::norm(dg) / linalg::norm(delta.view()));
      }
      return {best, false};
    }
  }
  return {};
}

SmoothnessEstimate head_smoothness_constant(const ModelSpec& spec, const WeightVector& w,
                                            const Batch& dataset) {
  if (spec.kind != ModelKind::kMlp) return smoothness_constant(spec, dataset);
  if (spec.split_index != spec.default_split_index()) {
    SmoothnessEstimate est = smoothness_constant(spec, dataset);
    est.certified = false;
    return est;
  }
  const Matrix feats = extract_features(spec, w, dataset);
  return {0.5 * gram_lambda_max(feats, spec.bias), true};
}

double accuracy(const ModelSpec& spec, const WeightVector& w, const Batch& batch) {
  if (!spec.is_classifier()) throw ConfigError("accuracy is undefined for a regression model");
  check_inputs(spec, w, batch);
  std::size_t correct = 0;
  Vec z(spec.num_classes);
  const MlpLayout lay(spec);
  MlpPass pass;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (spec.kind == ModelKind::kLogisticClassifier) {
      logistic_logits(spec, w.view(), batch.features.row(i), z);
    } else {
      mlp_forward(spec, lay, w.view(), batch.features.row(i), pass);
      z = pass.acts.back();
    }
    std::size_t arg = 0;
    for (std::size_t c = 1; c < z.size(); ++c) {
      if (z[c] > z[arg]) arg = c;
    }
    if (arg == static_cast<std::size_t>(batch.labels[i])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(batch.size());
}

Matrix extract_features(const ModelSpec& spec, const WeightVector& w, const Batch& batch) {
  if (spec.kind != ModelKind::kMlp || spec.hidden.empty()) return batch.features;
  check_inputs(spec, w, batch);
  const MlpLayout lay(spec);
  const std::size_t L = lay.layers();
  Matrix out(batch.size(), lay.sizes[L - 1]);
  MlpPass pass;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    mlp_forward(spec, lay, w.view(), batch.features.row(i), pass);
    std::copy(pass.acts[L - 1].begin(), pass.acts[L - 1].end(), out.row(i).begin());
  }
  return out;
}

}  // namespace fedgtst::models

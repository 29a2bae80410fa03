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

#include "fedgtst/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>
#include <thread>

namespace fedgtst::federation {

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::kFedAvg:
      return "fedavg";
    case Algorithm::kFedGtst:
      return "fedgtst";
    case Algorithm::kFedIirLite:
      return "fediir-lite";
  }
  return "unknown";
}

Algorithm parse_algorithm(const std::string& name) {
  if (name == "fedavg") return Algorithm::kFedAvg;
  if (name == "fedgtst") return Algorithm::kFedGtst;
  if (name == "fediir-lite") return Algorithm::kFedIirLite;
  throw ConfigError("unknown algorithm '" + name + "'");
}

std::string to_string(LrScheduleKind k) {
  switch (k) {
    case LrScheduleKind::kFixed:
      return "fixed";
    case LrScheduleKind::kStepDecay:
      return "step-decay";
    case LrScheduleKind::kOptimalFromStats:
      return "optimal-from-stats";
  }
  return "unknown";
}

LrScheduleKind parse_lr_schedule(const std::string& name) {
  if (name == "fixed") return LrScheduleKind::kFixed;
  if (name == "step-decay") return LrScheduleKind::kStepDecay;
  if (name == "optimal-from-stats") return LrScheduleKind::kOptimalFromStats;
  throw ConfigError("unknown learning-rate schedule '" + name + "'");
}

std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::kRoundsExhausted:
      return "rounds-exhausted";
    case StopReason::kEarlyStop:
      return "early-stop";
    case StopReason::kConverged:
      return "converged";
  }
  return "unknown";
}

double LrSchedule::rate_for_round(int round) const {
  switch (kind) {
    case LrScheduleKind::kFixed:
      return initial;
    case LrScheduleKind::kStepDecay: {
      const int steps = std::max(0, round - 1) / std::max(1, period);
      return initial / std::pow(factor, steps);
    }
    case LrScheduleKind::kOptimalFromStats:
      throw ConfigError("optimal-from-stats learning rate depends on round statistics");
  }
  return initial;
}

void RoundConfig::validate() const {
  if (!(participation_fraction > 0.0 && participation_fraction <= 1.0)) {
    throw ConfigError("participation fraction must lie in (0, 1]");
  }
  if (!(std_subset_fraction >= 0.0 && std_subset_fraction <= 1.0)) {
    throw ConfigError("standard-subset fraction must lie in [0, 1]");
  }
  if (!(xi >= 0.0)) throw ConfigError("xi must be non-negative");
  if (local_steps < 1) throw ConfigError("local_steps must be >= 1");
  if (!batch.full_batch && batch.minibatch_size == 0) {
    throw ConfigError("minibatch size must be positive");
  }
  if (lr_schedule.kind == LrScheduleKind::kOptimalFromStats) {
    if (optimizer.kind != OptimizerKind::kGd || local_steps != 1) {
      throw ConfigError("optimal-from-stats requires the gd optimizer and local_steps = 1");
    }
  } else {
    if (!(lr_schedule.initial > 0.0)) throw ConfigError("learning rate must be positive");
    if (lr_schedule.kind == LrScheduleKind::kStepDecay &&
        (!(lr_schedule.factor > 0.0) || lr_schedule.period < 1)) {
      throw ConfigError("step-decay needs factor > 0 and period >= 1");
    }
  }
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

bool RoundConfig::single_step_gd() const {
  return optimizer.kind == OptimizerKind::kGd && local_steps == 1 && batch.full_batch &&
         participation_fraction == 1.0;
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) run(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) run(i);
      });
    }
  }
  // Lowest failing index wins so the reported error is schedule independent.
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

double FederatedProblem::mean_client_loss(const WeightVector& w, const std::vector<int>& ids) const {
  if (ids.empty()) throw ConfigError("mean client loss over an empty set");
  std::vector<int> sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  double s = 0.0;
  for (int id : sorted) s += models::loss(spec, w, clients.at(static_cast<std::size_t>(id)).data);
  return s / static_cast<double>(sorted.size());
}

double FederatedProblem::mean_client_loss(const WeightVector& w) const {
  std::vector<int> ids(clients.size());
  std::iota(ids.begin(), ids.end(), 0);
  return mean_client_loss(w, ids);
}

FederatedProblem make_problem(const ModelSpec& spec, const Dataset& source,
                              const domains::PartitionPlan& plan) {
  spec.validate();
  plan.validate(source.size());
  FederatedProblem problem;
  problem.spec = spec;
  for (const auto& idx : plan.assignments) {
    if (idx.empty()) continue;
    ClientState c;
    c.id = static_cast<int>(problem.clients.size());
    c.data = subset(source, idx);
    problem.clients.push_back(std::move(c));
  }
  if (problem.clients.empty()) throw ConfigError("partition assigns no samples to any client");
  if (problem.clients.size() < plan.num_clients()) {
    log_warning(std::to_string(plan.num_clients() - problem.clients.size()) +
                " empty clients dropped from the federation");
  }

  if (spec.is_convex()) {
    // Hessian of (1/K) sum_k L_k is bounded by c * (1/K) sum_k X_k^T X_k / n_k.
    Matrix avg;
    for (const auto& c : problem.clients) {
      Matrix g = models::gram_matrix(c.data.features, spec.bias);
      if (avg.empty()) avg = Matrix(g.rows(), g.cols());
      linalg::axpy(1.0, g.data(), avg.data());
    }
    linalg::scale(1.0 / static_cast<double>(problem.clients.size()), avg.data());
    const double lmax = models::symmetric_lambda_max(avg);
    problem.alpha = (spec.kind == models::ModelKind::kLinearRegression ? 2.0 : 0.5) * lmax;
    problem.alpha_certified = true;
  } else {
    Dataset pooled;
    for (const auto& c : problem.clients) pooled = pooled.empty() ? c.data : concatenate(pooled, c.data);
    problem.alpha = models::smoothness_constant(spec, pooled).alpha;
    problem.alpha_certified = false;
  }
  return problem;
}

models::HvpMode default_hvp_mode(const ModelSpec& spec) {
  return spec.is_convex() ? models::HvpMode::kAnalytic : models::HvpMode::kFiniteDifference;
}

ObjectiveValue regularized_objective(const ModelSpec& spec, const WeightVector& w,
                                     const Batch& batch, double guide_norm, double xi,
                                     models::HvpMode mode) {
  auto lg = models::loss_and_gradient(spec, w, batch);
  if (xi == 0.0) return {lg.loss, std::move(lg.gradient)};
  const double jn = linalg::norm(lg.gradient.view());
  const double resid = jn - guide_norm;
  ObjectiveValue out{lg.loss + xi * resid * resid, lg.gradient};
  if (jn < 1e-10) return out;
  const WeightVector hj = models::hvp(spec, w, batch, lg.gradient, mode);
  linalg::axpy(2.0 * xi * resid / jn, hj.view(), out.gradient.view());
  return out;
}

ObjectiveValue alignment_objective(const ModelSpec& spec, const WeightVector& w,
                                   const Batch& batch, const WeightVector& target, double xi,
                                   models::HvpMode mode) {
  auto lg = models::loss_and_gradient(spec, w, batch);
  if (xi == 0.0) return {lg.loss, std::move(lg.gradient)};
  const WeightVector diff(linalg::sub(lg.gradient.view(), target.view()));
  ObjectiveValue out{lg.loss + xi * linalg::squared_norm(diff.view()), lg.gradient};
  const WeightVector hd = models::hvp(spec, w, batch, diff, mode);
  linalg::axpy(2.0 * xi, hd.view(), out.gradient.view());
  return out;
}

namespace {

std::size_t rounded_count(double fraction, std::size_t total) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(total)));
}

// Plain or Adam steps on an arbitrary objective.
template <typename Objective>
LocalResult train_local(const ModelSpec& spec, const WeightVector& w0, const Batch& data, double lr,
                        int steps, const LocalTrainingOptions& opts, Objective&& objective) {
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (data.empty()) throw ConfigError("client has no data");
  WeightVector w = w0;
  std::mt19937_64 rng(opts.seed);
  const bool adam = opts.optimizer.kind == OptimizerKind::kAdam;
  Vec m1;
  Vec m2;
  if (adam) {
    m1.assign(w.size(), 0.0);
    m2.assign(w.size(), 0.0);
  }
  std::vector<std::size_t> order;
  const bool sample = !opts.batch.full_batch && opts.batch.minibatch_size < data.size();
  if (sample) {
    order.resize(data.size());
    std::iota(order.begin(), order.end(), 0);
  }
  for (int step = 0; step < steps; ++step) {
    ObjectiveValue ov;
    if (sample) {
      const std::size_t b = opts.batch.minibatch_size;
      for (std::size_t i = 0; i < b; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
        std::swap(order[i], order[pick(rng)]);
      }
      std::vector<std::size_t> idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(b));
      std::sort(idx.begin(), idx.end());
      ov = objective(w, subset(data, idx));
    } else {
      ov = objective(w, data);
    }
    if (!std::isfinite(ov.value) || !linalg::all_finite(ov.gradient.view())) {
      throw NumericalError("non-finite objective at local step " + std::to_string(step));
    }
    if (adam) {
      const auto& o = opts.optimizer;
      const double t = static_cast<double>(step + 1);
      const double c1 = 1.0 - std::pow(o.beta1, t);
      const double c2 = 1.0 - std::pow(o.beta2, t);
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double g = ov.gradient[i];
        m1[i] = o.beta1 * m1[i] + (1.0 - o.beta1) * g;
        m2[i] = o.beta2 * m2[i] + (1.0 - o.beta2) * g * g;
        w[i] -= lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + o.epsilon);
      }
    } else {
      linalg::axpy(-lr, ov.gradient.view(), w.view());
    }
  }
  if (!linalg::all_finite(w.view())) throw NumericalError("non-finite weights after local training");
  LocalResult out;
  out.grad_norm = linalg::norm(models::gradient(spec, w, data).view());
  out.weights = std::move(w);
  return out;
}

}  // namespace

std::vector<int> select_participants(std::size_t num_clients, double fraction, int round,
                                     std::uint64_t seed) {
  if (num_clients == 0) throw ConfigError("no clients to select from");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("participation fraction must lie in (0, 1]");
  const std::size_t count = std::clamp<std::size_t>(rounded_count(fraction, num_clients), 1, num_clients);
  std::vector<int> ids(num_clients);
  std::iota(ids.begin(), ids.end(), 0);
  if (count == num_clients) return ids;
  std::mt19937_64 rng(derive_seed(seed, "participation", static_cast<std::uint64_t>(round)));
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(count);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<int> select_standard_subset(const std::vector<int>& participants,
                                        std::size_t num_clients, double fraction, int round,
                                        std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("standard-subset fraction must lie in [0, 1]");
  const std::size_t floor_count = fraction > 0.0 ? 1 : 0;
  const std::size_t count =
      std::min(participants.size(), std::max(floor_count, rounded_count(fraction, num_clients)));
  std::vector<int> ids = participants;
  std::sort(ids.begin(), ids.end());
  if (count == ids.size()) return ids;
  std::mt19937_64 rng(derive_seed(seed, "std-subset", static_cast<std::uint64_t>(round)));
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(count);
  std::sort(ids.begin(), ids.end());
  return ids;
}

LocalResult local_update_regularized(const ModelSpec& spec, const WeightVector& w0,
                                     const Batch& client_batch, double guide_norm, double xi,
                                     double lr, int steps, const LocalTrainingOptions& opts) {
  if (!(xi >= 0.0)) throw ConfigError("xi must be non-negative");
  const auto mode = default_hvp_mode(spec);
  return train_local(spec, w0, client_batch, lr, steps, opts,
                     [&](const WeightVector& w, const Batch& b) {
                       return regularized_objective(spec, w, b, guide_norm, xi, mode);
                     });
}

LocalResult local_update_standard(const ModelSpec& spec, const WeightVector& w0,
                                  const Batch& client_batch, double lr, int steps,
                                  const LocalTrainingOptions& opts) {
  return train_local(spec, w0, client_batch, lr, steps, opts,
                     [&](const WeightVector& w, const Batch& b) {
                       auto lg = models::loss_and_gradient(spec, w, b);
                       return ObjectiveValue{lg.loss, std::move(lg.gradient)};
                     });
}

LocalResult local_update_alignment(const ModelSpec& spec, const WeightVector& w0,
                                   const Batch& client_batch, const WeightVector& target,
                                   double xi, double lr, int steps,
                                   const LocalTrainingOptions& opts) {
  const auto mode = default_hvp_mode(spec);
  return train_local(spec, w0, client_batch, lr, steps, opts,
                     [&](const WeightVector& w, const Batch& b) {
                       return alignment_objective(spec, w, b, target, xi, mode);
                     });
}

double surrogate_norm(double reg_norm, std::optional<double> std_norm) {
  return std_norm ? std::max(reg_norm, *std_norm) : reg_norm;
}

WeightVector aggregate(const std::vector<std::pair<int, WeightVector>>& models) {
  if (models.empty()) throw ConfigError("nothing to aggregate");
  std::vector<const std::pair<int, WeightVector>*> order;
  for (const auto& m : models) {
    if (m.second.size() != models.front().second.size()) {
      throw DimensionError("client models differ in length");
    }
    order.push_back(&m);
  }
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->first < b->first; });
  // Averaging identical models must return that model bit for bit.
  if (std::all_of(order.begin(), order.end(),
                  [&](auto* m) { return m->second == order.front()->second; })) {
    return order.front()->second;
  }
  WeightVector out(models.front().second.size());
  for (const auto* m : order) linalg::axpy(1.0, m->second.view(), out.view());
  linalg::scale(1.0 / static_cast<double>(order.size()), out.view());
  return out;
}

double update_guide_norm(const std::vector<double>& surrogate_norms) {
  if (surrogate_norms.empty()) throw ConfigError("no surrogate norms received");
  const double g = *std::max_element(surrogate_norms.begin(), surrogate_norms.end());
  if (g == 0.0) log_warning("all surrogate norms are zero; the federation has converged");
  return g;
}

CommCount communication_cost(Algorithm algorithm, std::size_t model_dim, std::size_t participants) {
  // Model broadcast to and upload from every participant.
  CommCount c;
  c.vector_entries = 2ULL * model_dim * participants;
  switch (algorithm) {
    case Algorithm::kFedAvg:
      break;
    case Algorithm::kFedGtst:
      // One surrogate norm per participant plus the broadcast guide norm.
      c.scalars = participants + 1;
      break;
    case Algorithm::kFedIirLite:
      // Local Jacobians up, averaged Jacobian down.
      c.vector_entries += 2ULL * model_dim * participants;
      break;
  }
  return c;
}

ServerState init_server(const WeightVector& initial, std::uint64_t seed) {
  ServerState s;
  s.global_weights = initial;
  s.rng_seed = seed;
  return s;
}

RoundRecord advance_round(ServerState& server, const FederatedProblem& problem,
                          const RoundConfig& config) {
  config.validate();
  const auto& spec = problem.spec;
  const int round = server.round + 1;
  const std::uint64_t seed = config.seed;
  const std::size_t K = problem.num_clients();
  const WeightVector& w_prev = server.global_weights;

  RoundRecord rec;
  rec.round = round;
  rec.participants = select_participants(K, config.participation_fraction, round, seed);
  const std::size_t P = rec.participants.size();

  // Plain-loss Jacobians at the broadcast model.
  std::vector<models::LossAndGradient> at_broadcast(P);
  parallel_for(P, config.threads, [&](std::size_t i) {
    const auto& client = problem.clients[static_cast<std::size_t>(rec.participants[i])];
    at_broadcast[i] = models::loss_and_gradient(spec, w_prev, client.data);
  });
  std::vector<std::pair<int, WeightVector>> jacobians;
  jacobians.reserve(P);
  double pre = 0.0;
  for (std::size_t i = 0; i < P; ++i) {
    jacobians.emplace_back(rec.participants[i], at_broadcast[i].gradient);
    pre += at_broadcast[i].loss;
  }
  rec.pre_loss = pre / static_cast<double>(P);
  rec.stats = stats::cross_client_stats(jacobians, round);

  if (config.lr_schedule.kind == LrScheduleKind::kOptimalFromStats) {
    if (!(rec.stats.sum_sq_client_norm() > 0.0)) {
      throw ConvergedSignal("all participant Jacobians are zero at round " + std::to_string(round));
    }
    rec.learning_rate = stats::optimal_learning_rate(rec.stats, problem.alpha);
  } else {
    rec.learning_rate = config.lr_schedule.rate_for_round(round);
  }

  switch (config.algorithm) {
    case Algorithm::kFedAvg:
      rec.effective_xi = 0.0;
      break;
    case Algorithm::kFedGtst:
      // No guide norm has been exchanged before the first round.
      rec.effective_xi = round == 1 ? 0.0 : config.xi;
      break;
    case Algorithm::kFedIirLite:
      rec.effective_xi = server.prev_avg_jacobian ? config.xi : 0.0;
      break;
  }
  if (config.algorithm == Algorithm::kFedGtst) {
    rec.std_subset = select_standard_subset(rec.participants, K, config.std_subset_fraction, round, seed);
  }

  std::vector<LocalResult> local(P);
  std::vector<std::optional<double>> std_norms(P);
  parallel_for(P, config.threads, [&](std::size_t i) {
    const int id = rec.participants[i];
    const auto& client = problem.clients[static_cast<std::size_t>(id)];
    LocalTrainingOptions opts{config.batch, config.optimizer,
                              derive_seed(seed, "client-local", static_cast<std::uint64_t>(round),
                                          static_cast<std::uint64_t>(id))};
    try {
      switch (config.algorithm) {
        case Algorithm::kFedAvg:
          local[i] = local_update_standard(spec, w_prev, client.data, rec.learning_rate,
                                           config.local_steps, opts);
          break;
        case Algorithm::kFedGtst:
          local[i] = local_update_regularized(spec, w_prev, client.data, server.guide_norm,
                                              rec.effective_xi, rec.learning_rate,
                                              config.local_steps, opts);
          if (std::binary_search(rec.std_subset.begin(), rec.std_subset.end(), id)) {
            LocalTrainingOptions std_opts = opts;
            std_opts.seed = derive_seed(seed, "client-standard", static_cast<std::uint64_t>(round),
                                        static_cast<std::uint64_t>(id));
            std_norms[i] = local_update_standard(spec, w_prev, client.data, rec.learning_rate,
                                                 config.local_steps, std_opts)
                               .grad_norm;
          }
          break;
        case Algorithm::kFedIirLite:
          if (server.prev_avg_jacobian) {
            local[i] = local_update_alignment(spec, w_prev, client.data, *server.prev_avg_jacobian,
                                              rec.effective_xi, rec.learning_rate,
                                              config.local_steps, opts);
          } else {
            local[i] = local_update_standard(spec, w_prev, client.data, rec.learning_rate,
                                             config.local_steps, opts);
          }
          break;
      }
    } catch (const NumericalError& e) {
      throw NumericalError("round " + std::to_string(round) + ", client " + std::to_string(id) +
                           ": " + e.what());
    }
  });

  std::vector<std::pair<int, WeightVector>> uploads;
  std::vector<double> surrogates;
  uploads.reserve(P);
  for (std::size_t i = 0; i < P; ++i) {
    const int id = rec.participants[i];
    const double s = surrogate_norm(local[i].grad_norm, std_norms[i]);
    rec.reg_norms.emplace_back(id, local[i].grad_norm);
    rec.surrogate_norms.emplace_back(id, s);
    surrogates.push_back(s);
    uploads.emplace_back(id, std::move(local[i].weights));
  }
  WeightVector next = aggregate(uploads);
  rec.guide_norm = update_guide_norm(surrogates);

  std::vector<double> losses(K);
  parallel_for(K, config.threads, [&](std::size_t k) {
    losses[k] = models::loss(spec, next, problem.clients[k].data);
  });
  double post = 0.0;
  for (int id : rec.participants) post += losses[static_cast<std::size_t>(id)];
  rec.post_loss = post / static_cast<double>(P);
  rec.source_loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(K);
  if (!std::isfinite(rec.source_loss)) {
    throw NumericalError("non-finite source loss after round " + std::to_string(round));
  }
  rec.comm = communication_cost(config.algorithm, spec.total_dim(), P);
  rec.global_weights = next;

  server.global_weights = std::move(next);
  server.guide_norm = rec.guide_norm;
  server.round = round;
  server.prev_avg_jacobian = rec.stats.avg_jacobian;
  server.history.push_back(rec);
  return rec;
}

std::pair<ServerState, RoundRecord> run_round(const ServerState& server,
                                              const FederatedProblem& problem,
                                              const RoundConfig& config) {
  ServerState next = server;
  RoundRecord rec = advance_round(next, problem, config);
  return {std::move(next), std::move(rec)};
}

PretrainResult run_pretraining(const FederatedProblem& problem, const WeightVector& initial,
                               const RoundConfig& config, int rounds, int early_stop_patience,
                               const std::function<void(const RoundRecord&)>& on_round) {
  if (rounds < 1) throw ConfigError("number of rounds must be >= 1");
  config.validate();
  ServerState server = init_server(initial, config.seed);
  PretrainResult result;
  double best = std::numeric_limits<double>::infinity();
  int stalled = 0;
  for (int r = 0; r < rounds; ++r) {
    RoundRecord rec;
    try {
      rec = advance_round(server, problem, config);
    } catch (const ConvergedSignal& e) {
      log_warning(e.what());
      result.stop_reason = StopReason::kConverged;
      break;
    }
    if (on_round) on_round(rec);
    if (rec.source_loss <= best - 1e-6) {
      best = rec.source_loss;
      stalled = 0;
    } else {
      ++stalled;
      best = std::min(best, rec.source_loss);
    }
    if (early_stop_patience > 0 && stalled >= early_stop_patience) {
      result.stop_reason = StopReason::kEarlyStop;
      break;
    }
  }
  result.final_weights = server.global_weights;
  result.history = std::move(server.history);
  return result;
}

}  // namespace fedgtst::federation

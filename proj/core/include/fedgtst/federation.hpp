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

#ifndef FEDGTST_FEDERATION_HPP_
#define FEDGTST_FEDERATION_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedgtst/dataset.hpp"
#include "fedgtst/domains.hpp"
#include "fedgtst/models.hpp"
#include "fedgtst/statistics.hpp"

namespace fedgtst::federation {

using models::ModelSpec;
using models::WeightVector;

enum class Algorithm { kFedAvg, kFedGtst, kFedIirLite };
std::string to_string(Algorithm a);
Algorithm parse_algorithm(const std::string& name);

enum class LrScheduleKind { kFixed, kStepDecay, kOptimalFromStats };
std::string to_string(LrScheduleKind k);
LrScheduleKind parse_lr_schedule(const std::string& name);

struct LrSchedule {
  LrScheduleKind kind = LrScheduleKind::kFixed;
  double initial = 0.01;
  double factor = 10.0;  // step-decay divisor
  int period = 50;       // rounds per decay step

  // Learning rate of round `round` (1-based) for the fixed and step-decay
  // schedules. The optimal-from-stats schedule is resolved by the engine.
  double rate_for_round(int round) const;
};

enum class OptimizerKind { kGd, kAdam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kGd;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct BatchMode {
  bool full_batch = true;
  std::size_t minibatch_size = 0;
};

struct RoundConfig {
  Algorithm algorithm = Algorithm::kFedAvg;
  double participation_fraction = 1.0;
  double std_subset_fraction = 0.0;
  double xi = 0.0;
  LrSchedule lr_schedule;
  int local_steps = 1;
  BatchMode batch;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;
  // Plain GD, one full-batch step, full participation, common learning rate.
  bool single_step_gd() const;
};

// Options shared by all local trainers.
struct LocalTrainingOptions {
  BatchMode batch;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;  // minibatch sampling stream
};

struct ClientState {
  int id = 0;
  Dataset data;
  double last_surrogate_norm = 0.0;
};

// Scalars and vector entries exchanged in one round (downlink + uplink).
struct CommCount {
  std::uint64_t scalars = 0;
  std::uint64_t vector_entries = 0;
  friend bool operator==(const CommCount&, const CommCount&) = default;
};

struct RoundRecord {
  int round = 0;
  std::vector<int> participants;
  std::vector<int> std_subset;
  double learning_rate = 0.0;
  double effective_xi = 0.0;
  // Mean loss over the participants before and after the round.
  double pre_loss = 0.0;
  double post_loss = 0.0;
  // Mean loss over all clients after the round.
  double source_loss = 0.0;
  stats::CrossClientStats stats;
  double guide_norm = 0.0;
  std::vector<std::pair<int, double>> surrogate_norms;
  std::vector<std::pair<int, double>> reg_norms;
  CommCount comm;
  WeightVector global_weights;  // h_p after aggregation
};

struct ServerState {
  WeightVector global_weights;
  double guide_norm = 0.0;
  int round = 0;
  std::uint64_t rng_seed = 0;
  std::optional<WeightVector> prev_avg_jacobian;  // fediir-lite alignment target
  std::vector<RoundRecord> history;
};

// Everything the engine needs besides the server state.
struct FederatedProblem {
  ModelSpec spec;
  std::vector<ClientState> clients;
  double alpha = 0.0;  // smoothness of the federated source objective
  bool alpha_certified = false;

  std::size_t num_clients() const { return clients.size(); }
  // (1/|ids|) sum_k L_k(w) over the listed clients, summed in id order.
  double mean_client_loss(const WeightVector& w, const std::vector<int>& ids) const;
  double mean_client_loss(const WeightVector& w) const;
};

// Builds one client per non-empty partition entry (client ids are
// renumbered densely) and computes the certified or estimated smoothness of
// the averaged client objective.
FederatedProblem make_problem(const ModelSpec& spec, const Dataset& source,
                              const domains::PartitionPlan& plan);

struct LocalResult {
  WeightVector weights;
  double grad_norm = 0.0;  // ||J^(k)|| of the plain loss after the update
};

// Value and gradient of L(w) + xi (||J(w)|| - guide)^2. The regularizer
// gradient 2 xi (||J|| - guide) H J / ||J|| is taken as zero for ||J|| < 1e-10.
struct ObjectiveValue {
  double value = 0.0;
  WeightVector gradient;
};
ObjectiveValue regularized_objective(const ModelSpec& spec, const WeightVector& w,
                                     const Batch& batch, double guide_norm, double xi,
                                     models::HvpMode mode);

// Value and gradient of L(w) + xi ||J(w) - target||^2.
ObjectiveValue alignment_objective(const ModelSpec& spec, const WeightVector& w,
                                   const Batch& batch, const WeightVector& target, double xi,
                                   models::HvpMode mode);

// Analytic hvp where available, finite differences for the mlp.
models::HvpMode default_hvp_mode(const ModelSpec& spec);

std::vector<int> select_participants(std::size_t num_clients, double fraction, int round,
                                     std::uint64_t seed);

std::vector<int> select_standard_subset(const std::vector<int>& participants,
                                        std::size_t num_clients, double fraction, int round,
                                        std::uint64_t seed);

LocalResult local_update_regularized(const ModelSpec& spec, const WeightVector& w0,
                                     const Batch& client_batch, double guide_norm, double xi,
                                     double lr, int steps, const LocalTrainingOptions& opts = {});

LocalResult local_update_standard(const ModelSpec& spec, const WeightVector& w0,
                                  const Batch& client_batch, double lr, int steps,
                                  const LocalTrainingOptions& opts = {});

LocalResult local_update_alignment(const ModelSpec& spec, const WeightVector& w0,
                                   const Batch& client_batch, const WeightVector& target,
                                   double xi, double lr, int steps,
                                   const LocalTrainingOptions& opts = {});

double surrogate_norm(double reg_norm, std::optional<double> std_norm);

// Unweighted mean, summed in ascending client-id order.
WeightVector aggregate(const std::vector<std::pair<int, WeightVector>>& models);

double update_guide_norm(const std::vector<double>& surrogate_norms);

CommCount communication_cost(Algorithm algorithm, std::size_t model_dim, std::size_t participants);

ServerState init_server(const WeightVector& initial, std::uint64_t seed);

// Thrown by a round when every participant Jacobian is zero under the
// optimal-from-stats schedule; the caller must stop training.
class ConvergedSignal : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// In-place variant of run_round used by long training loops.
RoundRecord advance_round(ServerState& server, const FederatedProblem& problem,
                          const RoundConfig& config);

// One federated round. Client updates may run on config.threads workers;
// results do not depend on the thread count.
std::pair<ServerState, RoundRecord> run_round(const ServerState& server,
                                              const FederatedProblem& problem,
                                              const RoundConfig& config);

enum class StopReason { kRoundsExhausted, kEarlyStop, kConverged };
std::string to_string(StopReason r);

struct PretrainResult {
  WeightVector final_weights;
  std::vector<RoundRecord> history;
  StopReason stop_reason = StopReason::kRoundsExhausted;
};

// Runs up to `rounds` rounds. With patience > 0 training stops after
// `patience` consecutive rounds without a source-loss improvement of 1e-6;
// patience <= 0 disables early stopping. Optional callback sees each record.
PretrainResult run_pretraining(const FederatedProblem& problem, const WeightVector& initial,
                               const RoundConfig& config, int rounds, int early_stop_patience,
                               const std::function<void(const RoundRecord&)>& on_round = {});

// Runs fn(i) for i in [0, n) on up to `threads` workers.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace fedgtst::federation

#endif  // FEDGTST_FEDERATION_HPP_

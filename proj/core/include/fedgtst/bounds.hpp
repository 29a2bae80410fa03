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

#ifndef FEDGTST_BOUNDS_HPP_
#define FEDGTST_BOUNDS_HPP_

#include <cstddef>
#include <string>
#include <vector>

#include "fedgtst/federation.hpp"
#include "fedgtst/transfer.hpp"

namespace fedgtst::bounds {

using federation::RoundRecord;

enum class BoundId {
  kRoundUb,
  kTelescopedSource,
  kLemma1Full,
  kTheorem2Appendix,
  kTheorem2Maintext,
  kTheorem1,
};
std::string to_string(BoundId id);

inline constexpr double kCertifiedTolerance = 1e-9;
inline constexpr double kDiagnosticTolerance = 1e-6;

// The training regime a history was recorded under. Certified checks need
// plain single-step full-batch GD with full participation, no regularizer,
// a convex model and a certified alpha.
struct TraceRegime {
  std::string algorithm = "fedavg";
  std::string lr_schedule = "fixed";
  std::string optimizer = "gd";
  std::string model_kind = "linear-regression";
  int local_steps = 1;
  bool full_batch = true;
  double participation_fraction = 1.0;
  double xi = 0.0;
  double alpha = 0.0;
  bool alpha_certified = false;
  bool convex = true;
  std::size_t num_clients = 0;
  std::size_t model_dim = 0;
  double initial_loss = 0.0;  // L_src(h_0) over all clients

  static TraceRegime from(const federation::FederatedProblem& problem,
                          const federation::RoundConfig& config, double initial_loss);
  bool single_step_gd() const;
  bool plain_gd() const;
  bool certifiable() const;
};

enum class EntryScope { kRound, kCumulative, kFinal };
std::string to_string(EntryScope scope);

struct BoundEntry {
  int round = 0;
  EntryScope scope = EntryScope::kRound;
  double lhs = 0.0;
  double rhs = 0.0;
  double slack = 0.0;  // rhs - lhs
  bool violated = false;
  double lambda = 0.0;
  double beta1 = 0.0;
  double beta2 = 0.0;
  bool beta1_positive = false;
  double avg_norm_sq = 0.0;
  double variance = 0.0;
  double decrement = 0.0;  // per-round RHS drop
};

struct BoundReport {
  BoundId id = BoundId::kRoundUb;
  std::vector<BoundEntry> entries;
  double alpha = 0.0;
  bool certified = false;
  double tolerance = kCertifiedTolerance;
  std::vector<std::string> notes;

  std::size_t violations() const;
  bool holds() const { return violations() == 0; }
  double min_slack() const;
};

// L(h_p) <= L(h_{p-1}) - beta1 ||J||^2 + beta2 sigma^2 for every round.
BoundReport verify_round_bound(const std::vector<RoundRecord>& history, double alpha,
                               const TraceRegime& regime);

// L(h_p) <= L(h_0) - sum beta1 ||J||^2 + sum beta2 sigma^2, one cumulative
// entry per round followed by the final inequality.
BoundReport verify_telescoped_source(const std::vector<RoundRecord>& history, double alpha,
                                     double initial_loss, const TraceRegime& regime);

// Target form of the telescoped bound with the (G,F)-discrepancy added.
BoundReport verify_lemma1_full(const std::vector<RoundRecord>& history, double alpha,
                               double initial_loss, const transfer::DiscrepancyEstimate& d,
                               double final_target_loss, const TraceRegime& regime);

enum class Theorem2Form { kAppendix, kMaintext };

// Per-round decrement of the optimal-learning-rate bound.
//   appendix: ||J||^4 / (2 alpha (sigma^2 + ||J||^2))
//   maintext: 2 ||J||^2 / (alpha (1 + sigma^2 / ||J||^2))
// Both are zero when ||J|| = 0.
double theorem2_decrement(const stats::CrossClientStats& stats, double alpha, Theorem2Form form);

// Requires a history recorded with the optimal-from-stats schedule.
BoundReport verify_theorem2(const std::vector<RoundRecord>& history, double alpha,
                            double initial_loss, const transfer::DiscrepancyEstimate& d,
                            double final_target_loss, Theorem2Form form,
                            const TraceRegime& regime);

struct LocalOptimum {
  double loss = 0.0;
  bool converged = true;
};

// L*_tgt <= (1/K) sum_k L_k(h*_k) + d_H-bar + d_{G,F}. Always diagnostic.
BoundReport verify_theorem1(const std::vector<LocalOptimum>& local_optima,
                            const transfer::DiscrepancyEstimate& cross_client,
                            const transfer::DiscrepancyEstimate& gf, double target_loss);

// One JSON object per entry, newline terminated.
std::string to_jsonl(const BoundReport& report);

// History file: a header line with the regime, then one line per round.
std::string history_header_json(const TraceRegime& regime);
std::string round_record_json(const RoundRecord& record);

struct History {
  TraceRegime regime;
  std::vector<RoundRecord> rounds;
};
// Throws ConfigError naming the offending line on malformed input.
History parse_history(const std::string& text);

}  // namespace fedgtst::bounds

#endif  // FEDGTST_BOUNDS_HPP_

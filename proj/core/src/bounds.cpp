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

#include "fedgtst/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace fedgtst::bounds {

using json = nlohmann::ordered_json;

std::string to_string(BoundId id) {
  switch (id) {
    case BoundId::kRoundUb:
      return "round-ub";
    case BoundId::kTelescopedSource:
      return "telescoped-source";
    case BoundId::kLemma1Full:
      return "lemma1-full";
    case BoundId::kTheorem2Appendix:
      return "theorem2-appendix-form";
    case BoundId::kTheorem2Maintext:
      return "theorem2-maintext-form";
    case BoundId::kTheorem1:
      return "theorem1";
  }
  return "unknown";
}

std::string to_string(EntryScope scope) {
  switch (scope) {
    case EntryScope::kRound:
      return "round";
    case EntryScope::kCumulative:
      return "cumulative";
    case EntryScope::kFinal:
      return "final";
  }
  return "unknown";
}

TraceRegime TraceRegime::from(const federation::FederatedProblem& problem,
                              const federation::RoundConfig& config, double initial_loss) {
  TraceRegime r;
  r.algorithm = federation::to_string(config.algorithm);
  r.lr_schedule = federation::to_string(config.lr_schedule.kind);
  r.optimizer = config.optimizer.kind == federation::OptimizerKind::kGd ? "gd" : "adam";
  r.model_kind = models::to_string(problem.spec.kind);
  r.local_steps = config.local_steps;
  r.full_batch = config.batch.full_batch;
  r.participation_fraction = config.participation_fraction;
  r.xi = config.algorithm == federation::Algorithm::kFedAvg ? 0.0 : config.xi;
  r.alpha = problem.alpha;
  r.alpha_certified = problem.alpha_certified;
  r.convex = problem.spec.is_convex();
  r.num_clients = problem.num_clients();
  r.model_dim = problem.spec.total_dim();
  r.initial_loss = initial_loss;
  return r;
}

bool TraceRegime::single_step_gd() const {
  return optimizer == "gd" && local_steps == 1 && full_batch && participation_fraction == 1.0;
}

bool TraceRegime::plain_gd() const { return single_step_gd() && xi == 0.0; }

bool TraceRegime::certifiable() const { return plain_gd() && convex && alpha_certified; }

std::size_t BoundReport::violations() const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [](const BoundEntry& e) { return e.violated; }));
}

double BoundReport::min_slack() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& e : entries) m = std::min(m, e.slack);
  return m;
}

namespace {

void check_alpha(double alpha) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be positive and finite");
}

// Sets certification and tolerance from the regime, explaining any downgrade.
void classify(BoundReport& rep, const TraceRegime& regime, double alpha) {
  rep.alpha = alpha;
  std::vector<std::string> why;
  if (!regime.single_step_gd()) why.push_back("history is not single-step full-batch GD with full participation");
  if (regime.xi != 0.0) why.push_back("regularized updates (xi > 0) are outside the descent lemma");
  if (!regime.convex) why.push_back("non-certified (nonconvex - smoothness assumption violated)");
  if (!regime.alpha_certified) why.push_back("smoothness constant is an estimate");
  if (regime.alpha_certified && alpha < regime.alpha) why.push_back("alpha below the certified smoothness constant");
  rep.certified = why.empty();
  rep.tolerance = rep.certified ? kCertifiedTolerance : kDiagnosticTolerance;
  for (auto& w : why) rep.notes.push_back("diagnostic: " + w);
}

void finish(BoundEntry& e, double tolerance) {
  e.slack = e.rhs - e.lhs;
  e.violated = !(e.slack >= -tolerance);
}

BoundEntry coefficient_entry(const RoundRecord& rec, double alpha) {
  const auto c = stats::beta_coefficients(rec.learning_rate, alpha);
  BoundEntry e;
  e.round = rec.round;
  e.lambda = rec.learning_rate;
  e.beta1 = c.beta1;
  e.beta2 = c.beta2;
  e.beta1_positive = c.beta1_positive;
  e.avg_norm_sq = rec.stats.avg_norm_sq();
  e.variance = rec.stats.variance;
  e.decrement = c.beta1 * e.avg_norm_sq - c.beta2 * e.variance;
  return e;
}

// Cumulative source entries shared by the telescoped, lemma-1 and theorem-2
// reports. Returns L_0 minus the summed decrements.
double cumulative_entries(BoundReport& rep, const std::vector<RoundRecord>& history, double alpha,
                          double initial_loss, const std::optional<Theorem2Form>& form) {
  double rhs = initial_loss;
  for (const auto& rec : history) {
    BoundEntry e = coefficient_entry(rec, alpha);
    if (form) e.decrement = theorem2_decrement(rec.stats, alpha, *form);
    rhs -= e.decrement;
    e.scope = EntryScope::kCumulative;
    e.lhs = rec.source_loss;
    e.rhs = rhs;
    finish(e, rep.tolerance);
    rep.entries.push_back(e);
  }
  return rhs;
}

}  // namespace

BoundReport verify_round_bound(const std::vector<RoundRecord>& history, double alpha,
                               const TraceRegime& regime) {
  check_alpha(alpha);
  BoundReport rep;
  rep.id = BoundId::kRoundUb;
  classify(rep, regime, alpha);
  for (const auto& rec : history) {
    BoundEntry e = coefficient_entry(rec, alpha);
    e.lhs = rec.post_loss;
    e.rhs = stats::round_bound_rhs(rec.pre_loss, rec.learning_rate, alpha, rec.stats);
    finish(e, rep.tolerance);
    rep.entries.push_back(e);
  }
  return rep;
}

BoundReport verify_telescoped_source(const std::vector<RoundRecord>& history, double alpha,
                                     double initial_loss, const TraceRegime& regime) {
  check_alpha(alpha);
  BoundReport rep;
  rep.id = BoundId::kTelescopedSource;
  classify(rep, regime, alpha);
  if (regime.participation_fraction < 1.0) {
    rep.notes.push_back("diagnostic: statistics cover participants only");
  }
  const double rhs = cumulative_entries(rep, history, alpha, initial_loss, std::nullopt);
  BoundEntry fin;
  fin.scope = EntryScope::kFinal;
  fin.round = history.empty() ? 0 : history.back().round;
  fin.lhs = history.empty() ? initial_loss : history.back().source_loss;
  fin.rhs = rhs;
  finish(fin, rep.tolerance);
  rep.entries.push_back(fin);
  return rep;
}

BoundReport verify_lemma1_full(const std::vector<RoundRecord>& history, double alpha,
                               double initial_loss, const transfer::DiscrepancyEstimate& d,
                               double final_target_loss, const TraceRegime& regime) {
  check_alpha(alpha);
  BoundReport rep;
  rep.id = BoundId::kLemma1Full;
  classify(rep, regime, alpha);
  rep.certified = false;
  rep.tolerance = kDiagnosticTolerance;
  rep.notes.push_back("diagnostic: discrepancy term is a lower-bound estimate; a violation is inconclusive");
  const double rhs = cumulative_entries(rep, history, alpha, initial_loss, std::nullopt);
  BoundEntry fin;
  fin.scope = EntryScope::kFinal;
  fin.round = history.empty() ? 0 : history.back().round;
  fin.lhs = final_target_loss;
  fin.rhs = rhs + d.value;
  finish(fin, rep.tolerance);
  rep.entries.push_back(fin);
  return rep;
}

double theorem2_decrement(const stats::CrossClientStats& stats, double alpha, Theorem2Form form) {
  check_alpha(alpha);
  const double j2 = stats.avg_norm_sq();
  if (!(j2 > 0.0)) return 0.0;
  const double s2 = stats.variance;
  switch (form) {
    case Theorem2Form::kAppendix:
      return j2 * j2 / (2.0 * alpha * (s2 + j2));
    case Theorem2Form::kMaintext:
      return 2.0 * j2 / (alpha * (1.0 + s2 / j2));
  }
  return 0.0;
}

BoundReport verify_theorem2(const std::vector<RoundRecord>& history, double alpha,
                            double initial_loss, const transfer::DiscrepancyEstimate& d,
                            double final_target_loss, Theorem2Form form,
                            const TraceRegime& regime) {
  check_alpha(alpha);
  if (regime.lr_schedule != "optimal-from-stats") {
    throw ConfigError("theorem-2 check needs a history trained with the optimal-from-stats schedule, got '" +
                      regime.lr_schedule + "'");
  }
  BoundReport rep;
  rep.id = form == Theorem2Form::kAppendix ? BoundId::kTheorem2Appendix : BoundId::kTheorem2Maintext;
  classify(rep, regime, alpha);
  rep.certified = false;
  rep.tolerance = kDiagnosticTolerance;
  rep.notes.push_back("diagnostic: discrepancy term is a lower-bound estimate; a violation is inconclusive");
  const double rhs = cumulative_entries(rep, history, alpha, initial_loss, form);
  BoundEntry fin;
  fin.scope = EntryScope::kFinal;
  fin.round = history.empty() ? 0 : history.back().round;
  fin.lhs = final_target_loss;
  fin.rhs = rhs + d.value;
  finish(fin, rep.tolerance);
  rep.entries.push_back(fin);
  return rep;
}

BoundReport verify_theorem1(const std::vector<LocalOptimum>& local_optima,
                            const transfer::DiscrepancyEstimate& cross_client,
                            const transfer::DiscrepancyEstimate& gf, double target_loss) {
  if (local_optima.empty()) throw ConfigError("theorem-1 check needs at least one local optimum");
  BoundReport rep;
  rep.id = BoundId::kTheorem1;
  rep.certified = false;
  rep.tolerance = kDiagnosticTolerance;
  rep.notes.push_back("diagnostic: both discrepancy terms are lower-bound estimates");
  double mean = 0.0;
  std::size_t unconverged = 0;
  for (const auto& lo : local_optima) {
    mean += lo.loss;
    if (!lo.converged) ++unconverged;
  }
  mean /= static_cast<double>(local_optima.size());
  if (unconverged > 0) {
    rep.notes.push_back("flag: " + std::to_string(unconverged) + " local optima did not converge");
  }
  BoundEntry e;
  e.scope = EntryScope::kFinal;
  e.lhs = target_loss;
  e.rhs = mean + cross_client.value + gf.value;
  finish(e, rep.tolerance);
  rep.entries.push_back(e);
  return rep;
}

std::string to_jsonl(const BoundReport& report) {
  std::string out;
  for (const auto& e : report.entries) {
    json j;
    j["bound_id"] = to_string(report.id);
    j["round"] = e.round;
    j["scope"] = to_string(e.scope);
    j["lhs"] = e.lhs;
    j["rhs"] = e.rhs;
    j["slack"] = e.slack;
    j["violated"] = e.violated;
    j["lambda"] = e.lambda;
    j["beta1"] = e.beta1;
    j["beta2"] = e.beta2;
    j["beta1_positive"] = e.beta1_positive;
    j["jacobian_norm_sq"] = e.avg_norm_sq;
    j["jacobian_variance"] = e.variance;
    j["decrement"] = e.decrement;
    j["alpha_used"] = report.alpha;
    j["certified"] = report.certified;
    j["tolerance"] = report.tolerance;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string history_header_json(const TraceRegime& r) {
  json j;
  j["type"] = "header";
  j["version"] = 1;
  j["algorithm"] = r.algorithm;
  j["lr_schedule"] = r.lr_schedule;
  j["optimizer"] = r.optimizer;
  j["model_kind"] = r.model_kind;
  j["local_steps"] = r.local_steps;
  j["full_batch"] = r.full_batch;
  j["participation_fraction"] = r.participation_fraction;
  j["xi"] = r.xi;
  j["alpha"] = r.alpha;
  j["alpha_certified"] = r.alpha_certified;
  j["convex"] = r.convex;
  j["num_clients"] = r.num_clients;
  j["model_dim"] = r.model_dim;
  j["initial_loss"] = r.initial_loss;
  return j.dump();
}

namespace {

json pairs_json(const std::vector<std::pair<int, double>>& v) {
  json a = json::array();
  for (const auto& [id, x] : v) a.push_back(json::array({id, x}));
  return a;
}

std::vector<std::pair<int, double>> pairs_from(const json& a) {
  std::vector<std::pair<int, double>> out;
  for (const auto& p : a) out.emplace_back(p.at(0).get<int>(), p.at(1).get<double>());
  return out;
}

}  // namespace

std::string round_record_json(const RoundRecord& r) {
  json j;
  j["type"] = "round";
  j["round"] = r.round;
  j["participants"] = r.participants;
  j["std_subset"] = r.std_subset;
  j["learning_rate"] = r.learning_rate;
  j["effective_xi"] = r.effective_xi;
  j["pre_loss"] = r.pre_loss;
  j["post_loss"] = r.post_loss;
  j["source_loss"] = r.source_loss;
  j["jacobian_norm"] = r.stats.avg_norm;
  j["jacobian_norm_sq"] = r.stats.avg_sq;
  j["jacobian_variance"] = r.stats.variance;
  json cn = json::array();
  for (const auto& [id, n] : r.stats.client_norms) cn.push_back(json::array({id, n}));
  j["client_norms"] = cn;
  j["guide_norm"] = r.guide_norm;
  j["surrogate_norms"] = pairs_json(r.surrogate_norms);
  j["reg_norms"] = pairs_json(r.reg_norms);
  j["comm_scalars"] = r.comm.scalars;
  j["comm_vector_entries"] = r.comm.vector_entries;
  return j.dump();
}

History parse_history(const std::string& text) {
  History h;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      const std::string type = j.at("type").get<std::string>();
      if (!have_header) {
        if (type != "header") throw ConfigError("expected a header line");
        if (j.at("version").get<int>() != 1) throw ConfigError("unsupported history version");
        TraceRegime& r = h.regime;
        r.algorithm = j.at("algorithm").get<std::string>();
        r.lr_schedule = j.at("lr_schedule").get<std::string>();
        r.optimizer = j.at("optimizer").get<std::string>();
        r.model_kind = j.at("model_kind").get<std::string>();
        r.local_steps = j.at("local_steps").get<int>();
        r.full_batch = j.at("full_batch").get<bool>();
        r.participation_fraction = j.at("participation_fraction").get<double>();
        r.xi = j.at("xi").get<double>();
        r.alpha = j.at("alpha").get<double>();
        r.alpha_certified = j.at("alpha_certified").get<bool>();
        r.convex = j.at("convex").get<bool>();
        r.num_clients = j.at("num_clients").get<std::size_t>();
        r.model_dim = j.at("model_dim").get<std::size_t>();
        r.initial_loss = j.at("initial_loss").get<double>();
        have_header = true;
        continue;
      }
      if (type != "round") throw ConfigError("expected a round record");
      RoundRecord r;
      r.round = j.at("round").get<int>();
      r.participants = j.at("participants").get<std::vector<int>>();
      r.std_subset = j.at("std_subset").get<std::vector<int>>();
      r.learning_rate = j.at("learning_rate").get<double>();
      r.effective_xi = j.at("effective_xi").get<double>();
      r.pre_loss = j.at("pre_loss").get<double>();
      r.post_loss = j.at("post_loss").get<double>();
      r.source_loss = j.at("source_loss").get<double>();
      r.stats.round = r.round;
      r.stats.avg_norm = j.at("jacobian_norm").get<double>();
      r.stats.avg_sq = j.contains("jacobian_norm_sq") ? j.at("jacobian_norm_sq").get<double>()
                                                      : r.stats.avg_norm * r.stats.avg_norm;
      r.stats.variance = j.at("jacobian_variance").get<double>();
      for (const auto& [id, n] : pairs_from(j.at("client_norms"))) r.stats.client_norms[id] = n;
      r.stats.client_count = r.stats.client_norms.size();
      r.guide_norm = j.at("guide_norm").get<double>();
      r.surrogate_norms = pairs_from(j.at("surrogate_norms"));
      r.reg_norms = pairs_from(j.at("reg_norms"));
      r.comm.scalars = j.at("comm_scalars").get<std::uint64_t>();
      r.comm.vector_entries = j.at("comm_vector_entries").get<std::uint64_t>();
      if (!h.rounds.empty() && r.round <= h.rounds.back().round) {
        throw ConfigError("round numbers must increase");
      }
      h.rounds.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ConfigError("history line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError("history line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_header) throw ConfigError("history is empty (no header line)");
  return h;
}

}  // namespace fedgtst::bounds

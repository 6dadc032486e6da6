// Copyright (c) 2026, the serattr authors. All rights reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SERATTR_METRICS_HPP_
#define SERATTR_METRICS_HPP_

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "serattr/sampling.hpp"
#include "serattr/types.hpp"

namespace serattr {

/** Concordance correlation coefficient,
 *      ccc = 2 cov(x,y) / (var(x) + var(y) + (mean(x) - mean(y))^2),
 *  with population (1/N) moments throughout. Mixing in sample variance
 *  would break the |ccc| <= 1 bound.
 *
 *  The all-constant-and-equal case is 0/0 and reported as an error rather
 *  than 1: evaluation must never silently reward a constant predictor. */
inline double ccc(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw ValidationError("ccc: length mismatch (" + std::to_string(x.size()) + " vs " +
                          std::to_string(y.size()) + ")");
  }
  const size_t n = x.size();
  if (n < 2) throw ValidationError("ccc: need at least 2 samples, got " + std::to_string(n));

  double mean_x = 0.0, mean_y = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mean_x += x[i];
    mean_y += y[i];
  }
  mean_x /= static_cast<double>(n);
  mean_y /= static_cast<double>(n);

  double var_x = 0.0, var_y = 0.0, cov = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mean_x;
    const double dy = y[i] - mean_y;
    var_x += dx * dx;
    var_y += dy * dy;
    cov += dx * dy;
  }
  var_x /= static_cast<double>(n);
  var_y /= static_cast<double>(n);
  cov /= static_cast<double>(n);

  const double mean_gap = mean_x - mean_y;
  const double denom = var_x + var_y + mean_gap * mean_gap;
  if (denom == 0.0) {
    throw ValidationError("ccc: undefined for constant, equal inputs (0/0)");
  }
  return 2.0 * cov / denom;
}

/** Per-attribute CCC plus the average; balanced-CCC statistics attach when
 *  the estimator ran. */
struct EvaluationReport {
  double ccc_arousal = 0.0;
  double ccc_valence = 0.0;
  double ccc_dominance = 0.0;
  double ccc_average = 0.0;
  std::optional<double> balanced_ccc_mean;
  std::optional<double> balanced_ccc_std;
  std::optional<std::vector<double>> balanced_per_trial;
  size_t n_samples = 0;
  // Config echo for provenance.
  std::optional<int> k;
  std::optional<int> n;
  std::optional<uint64_t> seed;
  std::string policy;
  // Moment convention note, carried into every serialized report.
  static constexpr std::string_view kVarianceNote = "population (1/N)";

  double ccc_attr(int i) const {
    return i == 0 ? ccc_arousal : (i == 1 ? ccc_valence : ccc_dominance);
  }
};

using PredictionMap = std::map<std::string, Attributes>;

namespace detail {

inline const Attributes& prediction_for(const PredictionMap& preds, const std::string& id) {
  auto it = preds.find(id);
  if (it == preds.end()) {
    throw ValidationError("evaluate: missing prediction for utterance \"" + id + "\"");
  }
  return it->second;
}

inline Attributes ccc_over_ids(const PredictionMap& preds,
                               const std::map<std::string, Attributes>& refs,
                               const std::vector<std::string>& ids) {
  std::array<std::vector<double>, kAttributeCount> xs, ys;
  for (int a = 0; a < kAttributeCount; ++a) {
    xs[a].reserve(ids.size());
    ys[a].reserve(ids.size());
  }
  for (const auto& id : ids) {
    const Attributes& p = prediction_for(preds, id);
    auto it = refs.find(id);
    if (it == refs.end()) throw ValidationError("evaluate: no reference labels for \"" + id + "\"");
    for (int a = 0; a < kAttributeCount; ++a) {
      xs[a].push_back(p[a]);
      ys[a].push_back(it->second[a]);
    }
  }
  Attributes out;
  for (int a = 0; a < kAttributeCount; ++a) out[a] = ccc(xs[a], ys[a]);
  return out;
}

inline std::map<std::string, Attributes> labeled_refs(const std::vector<UtteranceRecord>& refs) {
  std::map<std::string, Attributes> out;
  for (const auto& r : refs) {
    if (!r.labels) {
      throw ValidationError("evaluate: reference \"" + r.utterance_id + "\" has no labels");
    }
    out.emplace(r.utterance_id, *r.labels);
  }
  return out;
}

}  // namespace detail

/** Plain per-attribute CCC over the full reference set. */
inline EvaluationReport evaluate(const PredictionMap& preds,
                                 const std::vector<UtteranceRecord>& refs) {
  auto ref_map = detail::labeled_refs(refs);
  std::vector<std::string> ids;
  ids.reserve(refs.size());
  for (const auto& r : refs) ids.push_back(r.utterance_id);

  Attributes c = detail::ccc_over_ids(preds, ref_map, ids);
  EvaluationReport rep;
  rep.ccc_arousal = c.arousal;
  rep.ccc_valence = c.valence;
  rep.ccc_dominance = c.dominance;
  rep.ccc_average = (c.arousal + c.valence + c.dominance) / 3.0;
  rep.n_samples = refs.size();
  return rep;
}

struct BalancedCccResult {
  double mean = 0.0;
  double stddev = 0.0;  // population std across trials; 0 for a single trial
  std::vector<double> per_trial;
};

/** Average CCC over each balanced trial subset, aggregated by averaging the
 *  per-trial average-CCC values (trials are never concatenated). */
inline BalancedCccResult balanced_ccc(const PredictionMap& preds,
                                      const std::vector<UtteranceRecord>& refs,
                                      const BalancedTrialSet& trials) {
  auto ref_map = detail::labeled_refs(refs);
  BalancedCccResult res;
  res.per_trial.reserve(trials.trials.size());
  for (size_t t = 0; t < trials.trials.size(); ++t) {
    Attributes c = detail::ccc_over_ids(preds, ref_map, trials.trial_ids(t));
    res.per_trial.push_back((c.arousal + c.valence + c.dominance) / 3.0);
  }
  double sum = 0.0;
  for (double v : res.per_trial) sum += v;
  res.mean = sum / static_cast<double>(res.per_trial.size());
  double ss = 0.0;
  for (double v : res.per_trial) ss += (v - res.mean) * (v - res.mean);
  res.stddev = std::sqrt(ss / static_cast<double>(res.per_trial.size()));
  return res;
}

inline std::string report_to_kv(const EvaluationReport& r) {
  std::ostringstream out;
  out << "ccc_arousal=" << format_double(r.ccc_arousal) << '\n';
  out << "ccc_valence=" << format_double(r.ccc_valence) << '\n';
  out << "ccc_dominance=" << format_double(r.ccc_dominance) << '\n';
  out << "ccc_average=" << format_double(r.ccc_average) << '\n';
  if (r.balanced_ccc_mean) out << "balanced_ccc_mean=" << format_double(*r.balanced_ccc_mean) << '\n';
  if (r.balanced_ccc_std) out << "balanced_ccc_std=" << format_double(*r.balanced_ccc_std) << '\n';
  out << "n_samples=" << r.n_samples << '\n';
  if (r.k) out << "k=" << *r.k << '\n';
  if (r.n) out << "n=" << *r.n << '\n';
  if (r.seed) out << "seed=" << *r.seed << '\n';
  if (!r.policy.empty()) out << "policy=" << r.policy << '\n';
  out << "variance=" << EvaluationReport::kVarianceNote << '\n';
  return out.str();
}

inline nlohmann::json report_to_json(const EvaluationReport& r) {
  nlohmann::json j;
  j["ccc"] = {{"arousal", r.ccc_arousal},
              {"valence", r.ccc_valence},
              {"dominance", r.ccc_dominance},
              {"average", r.ccc_average}};
  if (r.balanced_ccc_mean) {
    j["balanced_ccc"] = {{"mean", *r.balanced_ccc_mean}, {"std", *r.balanced_ccc_std}};
    if (r.balanced_per_trial) j["balanced_ccc"]["per_trial"] = *r.balanced_per_trial;
  }
  j["n_samples"] = r.n_samples;
  nlohmann::json echo;
  if (r.k) echo["k"] = *r.k;
  if (r.n) echo["n"] = *r.n;
  if (r.seed) echo["seed"] = *r.seed;
  if (!r.policy.empty()) echo["policy"] = r.policy;
  if (!echo.empty()) j["config"] = echo;
  j["variance"] = EvaluationReport::kVarianceNote;
  return j;
}

}  // namespace serattr

#endif  // SERATTR_METRICS_HPP_

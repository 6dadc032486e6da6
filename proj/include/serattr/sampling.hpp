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

#ifndef SERATTR_SAMPLING_HPP_
#define SERATTR_SAMPLING_HPP_

#include <algorithm>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "serattr/corpus.hpp"
#include "serattr/rng.hpp"
#include "serattr/types.hpp"

namespace serattr {

/** Per-epoch class-balanced subset: exactly m ids from every class present
 *  in the source, m = the minimum class count. */
struct UndersamplePlan {
  size_t per_class_count = 0;  // m
  std::map<EmotionClass, std::vector<std::string>> selected_ids;
  uint64_t seed = 0;
  int64_t epoch = 0;

  size_t size() const { return per_class_count * selected_ids.size(); }

  std::vector<std::string> all_ids() const {
    std::vector<std::string> ids;
    ids.reserve(size());
    for (const auto& [cls, list] : selected_ids) {
      ids.insert(ids.end(), list.begin(), list.end());
    }
    return ids;
  }
};

/** Draws a fresh balanced plan for (seed, epoch). Every class present in the
 *  train assembly counts as a class, O/X included. The draw is a uniform
 *  random m-subset per class; redrawing each epoch lets majority-class data
 *  rotate through training while every epoch stays balanced. */
inline UndersamplePlan undersample(const DatasetAssembly& assembly, uint64_t seed, int64_t epoch) {
  std::map<EmotionClass, std::vector<const UtteranceRecord*>> by_class;
  for (const auto& r : assembly.train_records) {
    by_class[r.emotion].push_back(&r);
  }
  if (by_class.empty()) {
    throw ValidationError("undersample: train assembly has no records");
  }

  size_t m = SIZE_MAX;
  for (const auto& [cls, list] : by_class) m = std::min(m, list.size());

  UndersamplePlan plan;
  plan.per_class_count = m;
  plan.seed = seed;
  plan.epoch = epoch;
  for (const auto& [cls, list] : by_class) {
    Rng rng(mix_seed(mix_seed_tag(seed, "undersample"), static_cast<uint64_t>(epoch),
                     static_cast<uint64_t>(cls)));
    auto idx = rng.sample_indices(list.size(), m);
    std::vector<std::string> ids;
    ids.reserve(m);
    for (size_t i : idx) ids.push_back(list[i]->utterance_id);
    plan.selected_ids.emplace(cls, std::move(ids));
  }
  return plan;
}

/** n independent draws of k dev ids per primary emotion, for the balanced
 *  CCC estimator. O/X classes never participate. */
struct BalancedTrialSet {
  // trials[t] maps class -> k ids, without replacement within the trial.
  std::vector<std::map<EmotionClass, std::vector<std::string>>> trials;
  int k = 0;
  int n = 0;
  uint64_t seed = 0;

  std::vector<std::string> trial_ids(size_t t) const {
    std::vector<std::string> ids;
    for (const auto& [cls, list] : trials.at(t)) {
      ids.insert(ids.end(), list.begin(), list.end());
    }
    return ids;
  }
};

inline BalancedTrialSet balanced_trials(const std::vector<UtteranceRecord>& dev, int k, int n,
                                        uint64_t seed) {
  if (k < 2) throw ValidationError("balanced_trials: k must be >= 2, got " + std::to_string(k));
  if (n < 1) throw ValidationError("balanced_trials: n must be >= 1, got " + std::to_string(n));

  std::map<EmotionClass, std::vector<const UtteranceRecord*>> by_class;
  for (const auto& r : dev) {
    if (is_primary(r.emotion)) by_class[r.emotion].push_back(&r);
  }
  for (int c = 0; c < kPrimaryEmotionCount; ++c) {
    auto cls = static_cast<EmotionClass>(c);
    auto it = by_class.find(cls);
    size_t have = it == by_class.end() ? 0 : it->second.size();
    if (have < static_cast<size_t>(k)) {
      std::ostringstream ss;
      ss << "balanced_trials: class " << to_string(cls) << " has " << have
         << " dev samples, need k=" << k;
      throw ValidationError(ss.str());
    }
  }

  BalancedTrialSet set;
  set.k = k;
  set.n = n;
  set.seed = seed;
  set.trials.resize(n);
  for (int t = 0; t < n; ++t) {
    for (const auto& [cls, list] : by_class) {
      Rng rng(mix_seed(mix_seed_tag(seed, "balanced_trials"), static_cast<uint64_t>(t),
                       static_cast<uint64_t>(cls)));
      auto idx = rng.sample_indices(list.size(), static_cast<size_t>(k));
      std::vector<std::string> ids;
      ids.reserve(k);
      for (size_t i : idx) ids.push_back(list[i]->utterance_id);
      set.trials[t].emplace(cls, std::move(ids));
    }
  }
  return set;
}

// Audit format: '#' header comment with the draw parameters, then
// class,utterance_id rows.
inline std::string serialize_plan(const UndersamplePlan& plan) {
  std::ostringstream out;
  out << "# undersample seed=" << plan.seed << " epoch=" << plan.epoch
      << " m=" << plan.per_class_count << '\n';
  out << "class,utterance_id\n";
  for (const auto& [cls, ids] : plan.selected_ids) {
    for (const auto& id : ids) out << to_string(cls) << ',' << id << '\n';
  }
  return out.str();
}

inline std::string serialize_trials(const BalancedTrialSet& set) {
  std::ostringstream out;
  out << "# balanced_trials seed=" << set.seed << " k=" << set.k << " n=" << set.n << '\n';
  out << "trial,class,utterance_id\n";
  for (size_t t = 0; t < set.trials.size(); ++t) {
    for (const auto& [cls, ids] : set.trials[t]) {
      for (const auto& id : ids) out << t << ',' << to_string(cls) << ',' << id << '\n';
    }
  }
  return out.str();
}

}  // namespace serattr

#endif  // SERATTR_SAMPLING_HPP_

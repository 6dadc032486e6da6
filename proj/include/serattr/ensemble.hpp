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

#ifndef SERATTR_ENSEMBLE_HPP_
#define SERATTR_ENSEMBLE_HPP_

#include <sstream>
#include <string>
#include <vector>

#include "serattr/csv.hpp"
#include "serattr/metrics.hpp"

namespace serattr {

inline constexpr const char* kPredictionHeader = "utterance_id,arousal,valence,dominance";

inline std::string predictions_to_csv(const PredictionMap& preds) {
  std::ostringstream out;
  out << kPredictionHeader << '\n';
  for (const auto& [id, a] : preds) {
    out << csv_escape(id) << ',' << format_double(a.arousal) << ',' << format_double(a.valence)
        << ',' << format_double(a.dominance) << '\n';
  }
  return out.str();
}

inline PredictionMap parse_predictions_csv(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(source + ": empty prediction file");
  if (strip_cr(line) != kPredictionHeader) {
    throw ValidationError(source + ": bad prediction header (expected \"" +
                          std::string(kPredictionHeader) + "\")");
  }
  PredictionMap out;
  size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    line = strip_cr(line);
    if (line.empty()) continue;
    auto cells = csv_split(line);
    if (cells.size() != 4) {
      throw ValidationError(source + ": row " + std::to_string(row) + ": expected 4 fields");
    }
    Attributes a;
    for (int i = 0; i < kAttributeCount; ++i) {
      auto v = try_parse_double(cells[i + 1]);
      if (!v) {
        throw ValidationError(source + ": row " + std::to_string(row) + ": bad " +
                              std::string(kAttributeNames[i]));
      }
      a[i] = *v;
    }
    if (!out.emplace(cells[0], a).second) {
      throw ValidationError(source + ": row " + std::to_string(row) + ": duplicate id " +
                            cells[0]);
    }
  }
  return out;
}

inline PredictionMap load_predictions(const std::string& path) {
  return parse_predictions_csv(read_text_file(path), path);
}

/** Unweighted per-id, per-attribute mean over members. All members must
 *  cover the identical id set; the error lists the symmetric difference. */
inline PredictionMap average(const std::vector<PredictionMap>& members) {
  if (members.empty()) throw ValidationError("ensemble: needs at least one member");
  const PredictionMap& first = members.front();
  for (size_t m = 1; m < members.size(); ++m) {
    std::vector<std::string> only_first, only_member;
    for (const auto& [id, a] : first) {
      if (!members[m].count(id)) only_first.push_back(id);
    }
    for (const auto& [id, a] : members[m]) {
      if (!first.count(id)) only_member.push_back(id);
    }
    if (!only_first.empty() || !only_member.empty()) {
      std::ostringstream msg;
      msg << "ensemble: member " << m + 1 << " id set differs from member 1;";
      msg << " missing:";
      for (const auto& id : only_first) msg << ' ' << id;
      msg << " extra:";
      for (const auto& id : only_member) msg << ' ' << id;
      throw ValidationError(msg.str());
    }
  }

  PredictionMap out;
  const double inv = 1.0 / static_cast<double>(members.size());
  std::vector<double> vals(members.size());
  for (const auto& [id, a0] : first) {
    Attributes mean{};
    for (int i = 0; i < kAttributeCount; ++i) {
      for (size_t m = 0; m < members.size(); ++m) vals[m] = members[m].at(id)[i];
      // Value-ordered summation keeps the mean independent of member order.
      std::sort(vals.begin(), vals.end());
      double sum = 0.0;
      for (double v : vals) sum += v;
      mean[i] = sum * inv;
    }
    out.emplace(id, mean);
  }
  return out;
}

}  // namespace serattr

#endif  // SERATTR_ENSEMBLE_HPP_

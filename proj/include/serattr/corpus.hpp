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

#ifndef SERATTR_CORPUS_HPP_
#define SERATTR_CORPUS_HPP_

#include <array>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "serattr/csv.hpp"
#include "serattr/types.hpp"

namespace serattr {

inline constexpr std::string_view kManifestHeader =
    "utterance_id,audio_ref,transcript,emotion_class,arousal,valence,dominance,"
    "gender,speaker_id,split";

using ClassCounts = std::array<size_t, kEmotionClassCount>;

inline ClassCounts class_counts(const std::vector<UtteranceRecord>& records) {
  ClassCounts counts{};
  for (const auto& r : records) counts[static_cast<int>(r.emotion)]++;
  return counts;
}

inline size_t total_count(const ClassCounts& c) {
  size_t n = 0;
  for (size_t v : c) n += v;
  return n;
}

/** Fraction of Other/NoAgreement samples. Errors on an empty list. */
inline double ox_fraction(const std::vector<UtteranceRecord>& records) {
  if (records.empty()) throw ValidationError("ox_fraction: empty record list");
  size_t ox = 0;
  for (const auto& r : records) {
    if (is_ox(r.emotion)) ++ox;
  }
  return static_cast<double>(ox) / static_cast<double>(records.size());
}

struct LoadOptions {
  // Attribute labels may be omitted (test manifests, prediction-only mode).
  bool allow_missing_labels = false;
};

namespace detail {

inline ValidationError row_error(const std::string& path, size_t row, const std::string& msg) {
  std::ostringstream ss;
  ss << path << ": row " << row << ": " << msg;
  return ValidationError(ss.str());
}

}  // namespace detail

/** Parses and validates a manifest. Row numbers in errors are 1-based and
 *  count the header as row 1. Every row must carry the expected split tag. */
inline std::vector<UtteranceRecord> load_manifest(const std::string& path, Split expected_split,
                                                  const LoadOptions& opts = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("manifest not found: " + path);

  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path + ": empty manifest");
  if (strip_cr(line) != kManifestHeader) {
    throw ValidationError(path + ": bad header, expected \"" + std::string(kManifestHeader) + "\"");
  }

  const bool labels_optional =
      opts.allow_missing_labels || expected_split == Split::kTest;

  std::vector<UtteranceRecord> records;
  std::unordered_set<std::string> seen_ids;
  size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    auto stripped = strip_cr(line);
    if (stripped.empty()) continue;
    std::vector<std::string> f;
    try {
      f = csv_split(stripped);
    } catch (const ValidationError& e) {
      throw detail::row_error(path, row, e.what());
    }
    if (f.size() != 10) {
      throw detail::row_error(path, row,
                              "expected 10 fields, got " + std::to_string(f.size()));
    }

    UtteranceRecord rec;
    rec.utterance_id = f[0];
    if (rec.utterance_id.empty()) throw detail::row_error(path, row, "field utterance_id: empty");
    if (!seen_ids.insert(rec.utterance_id).second) {
      throw detail::row_error(path, row, "duplicate utterance_id \"" + rec.utterance_id + "\"");
    }
    rec.audio_ref = f[1];
    rec.transcript = f[2];

    auto emo = parse_emotion_class(f[3]);
    if (!emo) {
      throw detail::row_error(path, row, "field emotion_class: unknown label \"" + f[3] + "\"");
    }
    rec.emotion = *emo;

    const bool any_label = !f[4].empty() || !f[5].empty() || !f[6].empty();
    if (any_label) {
      Attributes a;
      for (int i = 0; i < kAttributeCount; ++i) {
        const std::string& cell = f[4 + i];
        std::string field_name(kAttributeNames[i]);
        auto parsed = cell.empty() ? std::nullopt : try_parse_double(cell);
        if (!parsed) {
          throw detail::row_error(path, row, "field " + field_name + ": not a number \"" + cell + "\"");
        }
        double v = *parsed;
        if (v < kRatingMin || v > kRatingMax) {
          throw detail::row_error(
              path, row, "field " + field_name + ": value " + cell + " outside [1,7]");
        }
        a[i] = v;
      }
      rec.labels = a;
    } else if (!labels_optional) {
      throw detail::row_error(path, row, "field arousal: missing attribute labels");
    }

    auto g = parse_gender(f[7]);
    if (!g) throw detail::row_error(path, row, "field gender: expected F/M/U, got \"" + f[7] + "\"");
    rec.gender = *g;
    rec.speaker_id = f[8];

    auto sp = parse_split(f[9]);
    if (!sp) throw detail::row_error(path, row, "field split: unknown tag \"" + f[9] + "\"");
    rec.split = *sp;
    if (rec.split != expected_split) {
      throw detail::row_error(path, row,
                              "field split: expected \"" + std::string(to_string(expected_split)) +
                                  "\", got \"" + f[9] + "\"");
    }

    records.push_back(std::move(rec));
  }
  return records;
}

inline void write_manifest(const std::string& path, const std::vector<UtteranceRecord>& records) {
  std::ostringstream out;
  out << kManifestHeader << '\n';
  for (const auto& r : records) {
    std::vector<std::string> f(10);
    f[0] = r.utterance_id;
    f[1] = r.audio_ref;
    f[2] = r.transcript;
    f[3] = std::string(to_string(r.emotion));
    if (r.labels) {
      for (int i = 0; i < kAttributeCount; ++i) f[4 + i] = format_double((*r.labels)[i]);
    }
    f[7] = std::string(to_string(r.gender));
    f[8] = r.speaker_id;
    f[9] = std::string(to_string(r.split));
    out << csv_join(f) << '\n';
  }
  write_text_file(path, out.str());
}

/** Which O/X samples go where when assembling train/dev. */
struct SplitPolicy {
  bool include_ox_from_dev = false;
  bool exclude_ox_from_train = false;
  bool exclude_nonox_from_train = false;

  void validate() const {
    if (exclude_ox_from_train && exclude_nonox_from_train) {
      throw ValidationError(
          "policy: exclude_ox_from_train and exclude_nonox_from_train would empty the train set");
    }
  }

  std::string to_string() const {
    std::string s;
    if (include_ox_from_dev) s += "+ox-dev,";
    if (exclude_ox_from_train) s += "-ox-train,";
    if (exclude_nonox_from_train) s += "-nonox-train,";
    if (s.empty()) return "baseline";
    s.pop_back();
    return s;
  }

  /** Parses a comma list of tokens: "+ox-dev", "-ox-train", "-nonox-train",
   *  or "baseline" (all flags off). */
  static SplitPolicy parse(std::string_view spec) {
    SplitPolicy p;
    size_t start = 0;
    while (start <= spec.size()) {
      size_t end = spec.find(',', start);
      if (end == std::string_view::npos) end = spec.size();
      std::string_view tok = spec.substr(start, end - start);
      if (tok.empty() || tok == "baseline") {
        // no-op
      } else if (tok == "+ox-dev") {
        p.include_ox_from_dev = true;
      } else if (tok == "-ox-train") {
        p.exclude_ox_from_train = true;
      } else if (tok == "-nonox-train") {
        p.exclude_nonox_from_train = true;
      } else {
        throw ValidationError("policy: unknown token \"" + std::string(tok) + "\"");
      }
      if (end == spec.size()) break;
      start = end + 1;
    }
    p.validate();
    return p;
  }
};

/** A resolved train/dev split. Records moved from dev keep their original
 *  split tag as provenance. */
struct DatasetAssembly {
  std::vector<UtteranceRecord> train_records;
  std::vector<UtteranceRecord> dev_records;
  ClassCounts train_counts{};
  ClassCounts dev_counts{};
  SplitPolicy policy;
};

/** Applies an O/X inclusion policy. Moves happen before exclusions:
 *  dev O/X first join train (when include_ox_from_dev), then train-side
 *  exclusions filter the combined list. Idempotent. */
inline DatasetAssembly assemble(std::vector<UtteranceRecord> train,
                                std::vector<UtteranceRecord> dev, const SplitPolicy& policy) {
  policy.validate();

  DatasetAssembly out;
  out.policy = policy;

  if (policy.include_ox_from_dev) {
    std::vector<UtteranceRecord> kept_dev;
    kept_dev.reserve(dev.size());
    for (auto& r : dev) {
      if (is_ox(r.emotion)) {
        train.push_back(std::move(r));
      } else {
        kept_dev.push_back(std::move(r));
      }
    }
    dev = std::move(kept_dev);
  }

  if (policy.exclude_ox_from_train || policy.exclude_nonox_from_train) {
    std::vector<UtteranceRecord> kept;
    kept.reserve(train.size());
    for (auto& r : train) {
      bool drop = is_ox(r.emotion) ? policy.exclude_ox_from_train : policy.exclude_nonox_from_train;
      if (!drop) kept.push_back(std::move(r));
    }
    train = std::move(kept);
  }

  out.train_records = std::move(train);
  out.dev_records = std::move(dev);
  out.train_counts = class_counts(out.train_records);
  out.dev_counts = class_counts(out.dev_records);
  return out;
}

inline DatasetAssembly assemble(const DatasetAssembly& base, const SplitPolicy& policy) {
  return assemble(base.train_records, base.dev_records, policy);
}

/** Plain-text class-count table for audit output. */
inline std::string assembly_summary(const DatasetAssembly& a) {
  std::ostringstream out;
  out << "policy: " << a.policy.to_string() << '\n';
  out << "class,train,dev\n";
  for (int i = 0; i < kEmotionClassCount; ++i) {
    out << kEmotionClassNames[i] << ',' << a.train_counts[i] << ',' << a.dev_counts[i] << '\n';
  }
  out << "total," << a.train_records.size() << ',' << a.dev_records.size() << '\n';
  if (!a.train_records.empty()) {
    out << "train_ox_fraction," << format_double(ox_fraction(a.train_records)) << ",\n";
  }
  return out.str();
}

}  // namespace serattr

#endif  // SERATTR_CORPUS_HPP_

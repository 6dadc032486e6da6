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

#ifndef SERATTR_TYPES_HPP_
#define SERATTR_TYPES_HPP_

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "serattr/common.hpp"

namespace serattr {

// Eight primary categories plus the two disagreement labels.
// "Other": outside the primary taxonomy; "NoAgreement": annotators did not
// converge. Both still carry attribute ratings.
enum class EmotionClass {
  kNeutral = 0,
  kHappy,
  kSad,
  kDisgust,
  kAngry,
  kContempt,
  kFear,
  kSurprise,
  kOther,
  kNoAgreement,
};

inline constexpr int kEmotionClassCount = 10;
inline constexpr int kPrimaryEmotionCount = 8;

inline constexpr std::array<std::string_view, kEmotionClassCount> kEmotionClassNames = {
    "Neutral", "Happy",    "Sad",  "Disgust", "Angry",
    "Contempt", "Fear", "Surprise", "Other",   "NoAgreement"};

inline std::string_view to_string(EmotionClass c) {
  return kEmotionClassNames[static_cast<int>(c)];
}

inline std::optional<EmotionClass> parse_emotion_class(std::string_view s) {
  for (int i = 0; i < kEmotionClassCount; ++i) {
    if (kEmotionClassNames[i] == s) return static_cast<EmotionClass>(i);
  }
  return std::nullopt;
}

// Other / NoAgreement, collectively "O/X".
inline bool is_ox(EmotionClass c) {
  return c == EmotionClass::kOther || c == EmotionClass::kNoAgreement;
}

inline bool is_primary(EmotionClass c) { return !is_ox(c); }

enum class Gender { kFemale = 0, kMale = 1, kUnknown = 2 };

inline constexpr int kKnownGenderCount = 2;

inline std::string_view to_string(Gender g) {
  switch (g) {
    case Gender::kFemale: return "F";
    case Gender::kMale: return "M";
    default: return "U";
  }
}

inline std::optional<Gender> parse_gender(std::string_view s) {
  if (s == "F") return Gender::kFemale;
  if (s == "M") return Gender::kMale;
  if (s == "U") return Gender::kUnknown;
  return std::nullopt;
}

enum class Split { kTrain = 0, kDev = 1, kTest = 2 };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    default: return "test";
  }
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "dev") return Split::kDev;
  if (s == "test") return Split::kTest;
  return std::nullopt;
}

inline constexpr int kAttributeCount = 3;
inline constexpr std::array<std::string_view, kAttributeCount> kAttributeNames = {
    "arousal", "valence", "dominance"};

// Attribute rating bounds on the annotation scale.
inline constexpr double kRatingMin = 1.0;
inline constexpr double kRatingMax = 7.0;

/** One (arousal, valence, dominance) triple. */
struct Attributes {
  double arousal = 0.0;
  double valence = 0.0;
  double dominance = 0.0;

  double operator[](int i) const {
    return i == 0 ? arousal : (i == 1 ? valence : dominance);
  }
  double& operator[](int i) {
    return i == 0 ? arousal : (i == 1 ? valence : dominance);
  }

  friend bool operator==(const Attributes& a, const Attributes& b) {
    return a.arousal == b.arousal && a.valence == b.valence && a.dominance == b.dominance;
  }
};

/** One labeled speech sample. `labels` is absent for label-free manifests
 *  (test split / prediction-only mode). An empty `speaker_id` means unknown;
 *  it is masked downstream, never imputed. */
struct UtteranceRecord {
  std::string utterance_id;
  std::string audio_ref;
  std::string transcript;
  EmotionClass emotion = EmotionClass::kNeutral;
  std::optional<Attributes> labels;
  Gender gender = Gender::kUnknown;
  std::string speaker_id;
  Split split = Split::kTrain;

  bool has_labels() const { return labels.has_value(); }
};

}  // namespace serattr

#endif  // SERATTR_TYPES_HPP_

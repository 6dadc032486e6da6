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

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "serattr/corpus.hpp"

#include "helpers.hpp"

using namespace serattr;
using serattr_test::TempDir;

namespace {

// Mirrors the published corpus statistics the assembly arithmetic is checked
// against. Index order follows EmotionClass.
constexpr ClassCounts kTrainCounts = {29243, 16717, 6306, 1432, 6731,
                                      2495,  1120,  1120, 2948, 15932};
constexpr ClassCounts kDevCounts = {7423, 6344, 2341, 542, 5836, 1459, 326, 987, 642, 6061};

std::vector<UtteranceRecord> make_records(const ClassCounts& counts, Split split,
                                          const std::string& prefix) {
  std::vector<UtteranceRecord> out;
  out.reserve(total_count(counts));
  size_t serial = 0;
  for (int c = 0; c < kEmotionClassCount; ++c) {
    for (size_t i = 0; i < counts[c]; ++i, ++serial) {
      UtteranceRecord r;
      std::ostringstream id;
      id << prefix << '-' << serial;
      r.utterance_id = id.str();
      r.audio_ref = "audio/" + id.str() + ".wav";
      r.transcript = "sample " + std::to_string(serial % 7);
      r.emotion = static_cast<EmotionClass>(c);
      Attributes a;
      for (int k = 0; k < kAttributeCount; ++k) {
        a[k] = 1.0 + 0.5 * static_cast<double>((serial + static_cast<size_t>(k)) % 13);
      }
      r.labels = a;
      r.gender = serial % 2 == 0 ? Gender::kFemale : Gender::kMale;
      r.speaker_id = "spk" + std::to_string(serial % 50);
      r.split = split;
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::set<std::string> id_set(const std::vector<UtteranceRecord>& recs) {
  std::set<std::string> ids;
  for (const auto& r : recs) ids.insert(r.utterance_id);
  return ids;
}

std::string basic_manifest() {
  std::ostringstream out;
  out << kManifestHeader << '\n';
  out << "u1,audio/u1.wav,hello there,Happy,3.5,5,4.25,F,spk1,train\n";
  out << "u2,audio/u2.wav,\"a, quoted transcript\",Neutral,4,4,4,M,spk2,train\n";
  out << "u3,audio/u3.wav,,NoAgreement,1,7,2.5,U,,train\n";
  return out.str();
}

void write_file(const std::string& path, const std::string& text) {
  write_text_file(path, text);
}

}  // namespace

TEST_CASE("manifest parsing accepts well-formed rows") {
  TempDir tmp("corpus");
  const auto path = tmp.str("m.csv");
  write_file(path, basic_manifest());

  auto recs = load_manifest(path, Split::kTrain);
  REQUIRE(recs.size() == 3);
  CHECK(recs[0].utterance_id == "u1");
  CHECK(recs[0].emotion == EmotionClass::kHappy);
  CHECK(recs[0].labels.has_value());
  CHECK((*recs[0].labels).arousal == 3.5);
  CHECK((*recs[0].labels).valence == 5.0);
  CHECK((*recs[0].labels).dominance == 4.25);
  CHECK(recs[0].gender == Gender::kFemale);
  CHECK(recs[1].transcript == "a, quoted transcript");
  CHECK(recs[2].emotion == EmotionClass::kNoAgreement);
  CHECK(recs[2].speaker_id.empty());
}

TEST_CASE("manifest parsing tolerates CRLF line endings and blank lines") {
  TempDir tmp("corpus");
  const auto path = tmp.str("m.csv");
  std::ostringstream out;
  out << kManifestHeader << "\r\n";
  out << "u1,a.wav,t,Sad,2,2,2,F,spk1,dev\r\n";
  out << "\r\n";
  out << "u2,b.wav,t,Angry,6,6,6,M,spk2,dev\r\n";
  write_file(path, out.str());

  auto recs = load_manifest(path, Split::kDev);
  REQUIRE(recs.size() == 2);
  CHECK(recs[1].utterance_id == "u2");
}

TEST_CASE("manifest validation names the offending row and field") {
  TempDir tmp("corpus");
  const auto path = tmp.str("m.csv");

  SECTION("missing file") {
    REQUIRE_THROWS_MATCHES(load_manifest(tmp.str("absent.csv"), Split::kTrain), ValidationError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("manifest not found")));
  }
  SECTION("empty file") {
    write_file(path, "");
    REQUIRE_THROWS_MATCHES(
        load_manifest(path, Split::kTrain), ValidationError,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("empty manifest")));
  }
  SECTION("wrong header") {
    write_file(path, "id,audio\nu1,a.wav\n");
    REQUIRE_THROWS_MATCHES(
        load_manifest(path, Split::kTrain), ValidationError,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("bad header")));
  }
  SECTION("wrong field count") {
    write_file(path, std::string(kManifestHeader) + "\nu1,a.wav,t,Happy,3,3,3,F,spk1\n");
    REQUIRE_THROWS_MATCHES(load_manifest(path, Split::kTrain), ValidationError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("row 2") &&
                               Catch::Matchers::ContainsSubstring("expected 10 fields, got 9")));
  }
  SECTION("empty utterance id") {
    write_file(path, std::string(kManifestHeader) + "\n,a.wav,t,Happy,3,3,3,F,spk1,train\n");
    REQUIRE_THROWS_MATCHES(
        load_manifest(path, Split::kTrain), ValidationError,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("utterance_id")));
  }
  SECTION("duplicate utterance id") {
    write_file(path, std::string(kManifestHeader) +
                         "\nu1,a.wav,t,Happy,3,3,3,F,spk1,train"
                         "\nu1,b.wav,t,Sad,2,2,2,M,spk2,train\n");
    REQUIRE_THROWS_MATCHES(load_manifest(path, Split::kTrain), ValidationError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("row 3") &&
                               Catch::Matchers::ContainsSubstring("duplicate utterance_id")));
  }
  SECTION("unknown emotion label") {
    write_file(path, std::string(kManifestHeader) + "\nu1,a.wav,t,Joyful,3,3,3,F,spk1,train\n");
    REQUIRE_THROWS_MATCHES(load_manifest(path, Split::kTrain), ValidationError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("emotion_class") &&
                               Catch::Matchers::ContainsSubstring("Joyful")));
  }
  SECTION("attribute outside the rating scale") {
    write_file(path, std::string(kManifestHeader) + "\nu1,a.wav,t,Happy,7.5,3,3,F,spk1,train\n");
    REQUIRE_THROWS_MATCHES(load_manifest(path, Split::kTrain), ValidationError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("row 2") &&
                               Catch::Matchers::ContainsSubstring("arousal") &&
                               Catch::Matchers::ContainsSubstring("outside [1,7]")));
  }
  SECTION("non-numeric attribute") {
    write_file(path, std::string(kManifestHeader) + "\nu1,a.wav,t,Happy,3,high,3,F,spk1,train\n");
    REQUIRE_THROWS_MATCHES(load_manifest(path, Split::kTrain), ValidationError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("valence") &&
                               Catch::Matchers::ContainsSubstring("not a number")));
  }
  SECTION("partially missing labels") {
    write_file(path, std::string(kManifestHeader) + "\nu1,a.wav,t,Happy,3,,3,F,spk1,train\n");
    REQUIRE_THROWS_AS(load_manifest(path, Split::kTrain), ValidationError);
  }
  SECTION("missing labels on a labeled split") {
    write_file(path, std::string(kManifestHeader) + "\nu1,a.wav,t,Happy,,,,F,spk1,train\n");
    REQUIRE_THROWS_MATCHES(load_manifest(path, Split::kTrain), ValidationError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("missing attribute labels")));
    LoadOptions opts;
    opts.allow_missing_labels = true;
    auto recs = load_manifest(path, Split::kTrain, opts);
    REQUIRE(recs.size() == 1);
    CHECK_FALSE(recs[0].has_labels());
  }
  SECTION("missing labels allowed on the test split") {
    write_file(path, std::string(kManifestHeader) + "\nu1,a.wav,t,Happy,,,,F,spk1,test\n");
    auto recs = load_manifest(path, Split::kTest);
    REQUIRE(recs.size() == 1);
    CHECK_FALSE(recs[0].has_labels());
  }
  SECTION("bad gender tag") {
    write_file(path, std::string(kManifestHeader) + "\nu1,a.wav,t,Happy,3,3,3,X,spk1,train\n");
    REQUIRE_THROWS_MATCHES(
        load_manifest(path, Split::kTrain), ValidationError,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("gender")));
  }
  SECTION("unknown split tag") {
    write_file(path, std::string(kManifestHeader) + "\nu1,a.wav,t,Happy,3,3,3,F,spk1,eval\n");
    REQUIRE_THROWS_MATCHES(
        load_manifest(path, Split::kTrain), ValidationError,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("split")));
  }
  SECTION("split tag mismatch") {
    write_file(path, std::string(kManifestHeader) + "\nu1,a.wav,t,Happy,3,3,3,F,spk1,dev\n");
    REQUIRE_THROWS_MATCHES(load_manifest(path, Split::kTrain), ValidationError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("expected \"train\"") &&
                               Catch::Matchers::ContainsSubstring("got \"dev\"")));
  }
}

TEST_CASE("manifest writing round-trips every field") {
  TempDir tmp("corpus");
  auto recs = make_records({3, 2, 0, 0, 1, 0, 0, 0, 2, 1}, Split::kDev, "rt");
  recs[1].transcript = "commas, \"quotes\" and more";
  recs[2].labels.reset();

  const auto path = tmp.str("out.csv");
  write_manifest(path, recs);
  LoadOptions opts;
  opts.allow_missing_labels = true;
  auto back = load_manifest(path, Split::kDev, opts);

  REQUIRE(back.size() == recs.size());
  for (size_t i = 0; i < recs.size(); ++i) {
    CHECK(back[i].utterance_id == recs[i].utterance_id);
    CHECK(back[i].audio_ref == recs[i].audio_ref);
    CHECK(back[i].transcript == recs[i].transcript);
    CHECK(back[i].emotion == recs[i].emotion);
    CHECK(back[i].labels == recs[i].labels);
    CHECK(back[i].gender == recs[i].gender);
    CHECK(back[i].speaker_id == recs[i].speaker_id);
    CHECK(back[i].split == recs[i].split);
  }

  // Line breaks cannot survive the line-oriented format, so writing them is
  // an error rather than silent corruption.
  recs[0].transcript = "broken\nrecord";
  CHECK_THROWS_MATCHES(
      write_manifest(tmp.str("bad.csv"), recs), ValidationError,
      Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("line break")));
}

TEST_CASE("ox fraction arithmetic") {
  auto recs = make_records({6, 0, 0, 0, 0, 0, 0, 0, 1, 3}, Split::kTrain, "f");
  CHECK(ox_fraction(recs) == Catch::Approx(0.4).margin(1e-15));
  CHECK_THROWS_AS(ox_fraction({}), ValidationError);
}

TEST_CASE("published class-count table drives the expected policy arithmetic") {
  TempDir tmp("corpus");
  auto train = make_records(kTrainCounts, Split::kTrain, "trn");
  auto dev = make_records(kDevCounts, Split::kDev, "dev");

  // Counts survive a trip through the CSV file format at full scale.
  const auto train_path = tmp.str("train.csv");
  const auto dev_path = tmp.str("dev.csv");
  write_manifest(train_path, train);
  write_manifest(dev_path, dev);
  train = load_manifest(train_path, Split::kTrain);
  dev = load_manifest(dev_path, Split::kDev);

  REQUIRE(train.size() == 84044);
  REQUIRE(dev.size() == 31961);
  CHECK(class_counts(train) == kTrainCounts);
  CHECK(class_counts(dev) == kDevCounts);

  // 18880 of 84044 train samples carry a disagreement label.
  const double fraction = ox_fraction(train);
  CHECK(fraction == Catch::Approx(18880.0 / 84044.0).margin(1e-12));
  CHECK(std::abs(fraction - 0.2246) < 0.0005);

  SECTION("baseline keeps both sides untouched") {
    auto a = assemble(train, dev, SplitPolicy::parse("baseline"));
    CHECK(a.train_records.size() == 84044);
    CHECK(a.dev_records.size() == 31961);
    CHECK(a.train_counts == kTrainCounts);
    CHECK(a.dev_counts == kDevCounts);
  }

  SECTION("adding dev disagreement samples grows train by 6703") {
    auto a = assemble(train, dev, SplitPolicy::parse("+ox-dev"));
    CHECK(a.train_records.size() == 84044 + 6703);
    CHECK(a.dev_records.size() == 31961 - 6703);
    CHECK(a.dev_counts[static_cast<int>(EmotionClass::kOther)] == 0);
    CHECK(a.dev_counts[static_cast<int>(EmotionClass::kNoAgreement)] == 0);
    CHECK(a.train_counts[static_cast<int>(EmotionClass::kOther)] == 2948 + 642);
    CHECK(a.train_counts[static_cast<int>(EmotionClass::kNoAgreement)] == 15932 + 6061);
    // Primary-class counts never move.
    for (int c = 0; c < kPrimaryEmotionCount; ++c) {
      CHECK(a.train_counts[c] == kTrainCounts[c]);
      CHECK(a.dev_counts[c] == kDevCounts[c]);
    }
    // Moved records keep their provenance tag.
    size_t moved = 0;
    for (const auto& r : a.train_records) {
      if (r.split == Split::kDev) {
        ++moved;
        CHECK(is_ox(r.emotion));
      }
    }
    CHECK(moved == 6703);
  }

  SECTION("dropping train disagreement samples removes 18880") {
    auto a = assemble(train, dev, SplitPolicy::parse("-ox-train"));
    CHECK(a.train_records.size() == 84044 - 18880);
    CHECK(a.train_counts[static_cast<int>(EmotionClass::kOther)] == 0);
    CHECK(a.train_counts[static_cast<int>(EmotionClass::kNoAgreement)] == 0);
    CHECK(a.dev_records.size() == 31961);
  }

  SECTION("keeping only disagreement samples leaves 18880") {
    auto a = assemble(train, dev, SplitPolicy::parse("-nonox-train"));
    CHECK(a.train_records.size() == 18880);
    for (const auto& r : a.train_records) CHECK(is_ox(r.emotion));
  }

  SECTION("moves happen before exclusions") {
    auto a = assemble(train, dev, SplitPolicy::parse("+ox-dev,-ox-train"));
    // Every disagreement sample, incoming ones included, is dropped.
    CHECK(a.train_records.size() == 84044 - 18880);
    CHECK(a.dev_records.size() == 31961 - 6703);
  }

  SECTION("assembly is idempotent") {
    const auto policy = SplitPolicy::parse("+ox-dev");
    auto once = assemble(train, dev, policy);
    auto twice = assemble(once, policy);
    CHECK(twice.train_counts == once.train_counts);
    CHECK(twice.dev_counts == once.dev_counts);
    CHECK(id_set(twice.train_records) == id_set(once.train_records));
    CHECK(id_set(twice.dev_records) == id_set(once.dev_records));
  }

  SECTION("no record is lost or duplicated") {
    auto a = assemble(train, dev, SplitPolicy::parse("+ox-dev"));
    auto all = id_set(a.train_records);
    auto dev_ids = id_set(a.dev_records);
    all.insert(dev_ids.begin(), dev_ids.end());
    CHECK(all.size() == 84044 + 31961);
  }
}

TEST_CASE("policy strings parse and print consistently") {
  CHECK(SplitPolicy::parse("baseline").to_string() == "baseline");
  CHECK(SplitPolicy::parse("").to_string() == "baseline");
  CHECK(SplitPolicy::parse("+ox-dev").to_string() == "+ox-dev");
  CHECK(SplitPolicy::parse("-ox-train").to_string() == "-ox-train");
  CHECK(SplitPolicy::parse("-nonox-train").to_string() == "-nonox-train");
  CHECK(SplitPolicy::parse("+ox-dev,-ox-train").to_string() == "+ox-dev,-ox-train");
  CHECK(SplitPolicy::parse("+ox-dev,-nonox-train").to_string() == "+ox-dev,-nonox-train");

  // Round trip through to_string for every valid flag combination.
  for (int mask = 0; mask < 8; ++mask) {
    SplitPolicy p;
    p.include_ox_from_dev = mask & 1;
    p.exclude_ox_from_train = mask & 2;
    p.exclude_nonox_from_train = mask & 4;
    if (p.exclude_ox_from_train && p.exclude_nonox_from_train) continue;
    auto q = SplitPolicy::parse(p.to_string());
    CHECK(q.include_ox_from_dev == p.include_ox_from_dev);
    CHECK(q.exclude_ox_from_train == p.exclude_ox_from_train);
    CHECK(q.exclude_nonox_from_train == p.exclude_nonox_from_train);
  }

  CHECK_THROWS_MATCHES(
      SplitPolicy::parse("+ox-dev,-everything"), ValidationError,
      Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("-everything")));
  CHECK_THROWS_MATCHES(SplitPolicy::parse("-ox-train,-nonox-train"), ValidationError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("empty the train set")));
}

TEST_CASE("assembly summary lists per-class counts and the ox fraction") {
  auto train = make_records({4, 2, 0, 0, 0, 0, 0, 0, 1, 1}, Split::kTrain, "t");
  auto dev = make_records({2, 1, 0, 0, 0, 0, 0, 0, 0, 0}, Split::kDev, "d");
  auto a = assemble(train, dev, SplitPolicy{});
  auto summary = assembly_summary(a);
  CHECK(summary.find("policy: baseline") != std::string::npos);
  CHECK(summary.find("Neutral,4,2") != std::string::npos);
  CHECK(summary.find("Happy,2,1") != std::string::npos);
  CHECK(summary.find("total,8,3") != std::string::npos);
  CHECK(summary.find("train_ox_fraction,0.25") != std::string::npos);
}

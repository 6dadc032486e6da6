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

#include <cstdlib>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include "serattr/corpus.hpp"
#include "serattr/ensemble.hpp"

#include "helpers.hpp"

using namespace serattr;
using serattr_test::TempDir;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

/** Runs the CLI with `args` from inside `cwd`, capturing both streams. */
CliResult run_cli(const std::string& cwd, const std::string& args) {
  const std::string out_path = cwd + "/.stdout";
  const std::string err_path = cwd + "/.stderr";
  const std::string cmd =
      "cd '" + cwd + "' && '" + SERA_CLI_PATH + "' " + args + " > '" + out_path + "' 2> '" +
      err_path + "'";
  const int raw = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(out_path);
  r.err = slurp(err_path);
  return r;
}

const std::string kTrainFlags =
    "--epochs 2 --batch-size 8 --filter-size 12 --learning-rate 1e-3 --k 3 --n 4 --seed 21";

/** Synthesizes the shared corpus and trains one reference run. */
void bootstrap(const std::string& dir) {
  auto synth = run_cli(dir, "synth --out corpus --seed 5 --train-per-class 12 "
                            "--dev-per-class 6 --speakers 8");
  REQUIRE(synth.code == 0);
  auto train = run_cli(dir, "train --train-manifest corpus/train.csv --dev-manifest "
                            "corpus/dev.csv --out run1 " + kTrainFlags);
  INFO(train.err);
  REQUIRE(train.code == 0);
}

std::string kv_value(const std::string& text, const std::string& key) {
  const std::string anchored = "\n" + text;
  const auto pos = anchored.find("\n" + key + "=");
  REQUIRE(pos != std::string::npos);
  const auto start = pos + key.size() + 2;
  return anchored.substr(start, anchored.find('\n', start) - start);
}

}  // namespace

TEST_CASE("the full command flow works end to end") {
  TempDir tmp("cli");
  const std::string dir = tmp.str();
  bootstrap(dir);

  for (const char* artifact : {"checkpoint.bin", "history.csv", "run_config.json",
                               "resolved.ini", "trials.csv", "report.txt", "report.json",
                               "run_manifest.json"}) {
    INFO(artifact);
    CHECK(std::filesystem::exists(tmp.path() / "run1" / artifact));
  }
  const auto history = slurp(tmp.str("run1/history.csv"));
  CHECK(history.rfind("epoch,loss_total", 0) == 0);
  CHECK(std::count(history.begin(), history.end(), '\n') == 3);

  auto prepare = run_cli(dir, "prepare --train corpus/train.csv --dev corpus/dev.csv "
                              "--policy baseline --out prep");
  REQUIRE(prepare.code == 0);
  CHECK(prepare.out.find("total,96,48") != std::string::npos);
  // The emitted manifests reload cleanly.
  CHECK(load_manifest(tmp.str("prep/train.csv"), Split::kTrain).size() == 96);

  auto predict = run_cli(dir, "predict --run run1 --manifest corpus/dev.csv --split dev "
                              "--out preds.csv");
  REQUIRE(predict.code == 0);
  auto preds = load_predictions(tmp.str("preds.csv"));
  CHECK(preds.size() == 48);

  auto evaluate = run_cli(dir, "evaluate --predictions preds.csv --manifest corpus/dev.csv "
                               "--split dev --k 3 --n 4 --seed 21");
  REQUIRE(evaluate.code == 0);
  CHECK(evaluate.out.find("variance=population (1/N)") != std::string::npos);

  // Scoring the shipped predictions reproduces the selection score the
  // training loop recorded for its best epoch.
  const auto report_json = slurp(tmp.str("run1/report.json"));
  const auto best_mean = kv_value(evaluate.out, "balanced_ccc_mean");
  CHECK(report_json.find("\"mean\": " + best_mean) != std::string::npos);

  SECTION("evaluate can re-predict straight from the run directory") {
    auto from_run = run_cli(dir, "evaluate --run run1 --manifest corpus/dev.csv --split dev");
    REQUIRE(from_run.code == 0);
    // k, n and seed fall back to the run config.
    CHECK(kv_value(from_run.out, "k") == "3");
    CHECK(kv_value(from_run.out, "n") == "4");
    CHECK(kv_value(from_run.out, "balanced_ccc_mean") == best_mean);
  }

  SECTION("a run replayed from its resolved config is bit-identical") {
    auto replay = run_cli(dir, "--config run1/resolved.ini train --out run2");
    INFO(replay.err);
    REQUIRE(replay.code == 0);
    CHECK(slurp(tmp.str("run2/history.csv")) == slurp(tmp.str("run1/history.csv")));
    CHECK(slurp(tmp.str("run2/checkpoint.bin")) == slurp(tmp.str("run1/checkpoint.bin")));
  }

  SECTION("command-line flags override the config file") {
    auto reseeded = run_cli(dir, "--config run1/resolved.ini train --out run3 --seed 22");
    REQUIRE(reseeded.code == 0);
    CHECK(slurp(tmp.str("run3/history.csv")) != slurp(tmp.str("run1/history.csv")));
  }

  SECTION("report compares runs") {
    auto report = run_cli(dir, "report run1 --out rep");
    REQUIRE(report.code == 0);
    const auto table = slurp(tmp.str("rep/comparison.txt"));
    CHECK(table.find("run1") != std::string::npos);
    CHECK(table.find("balanced_ccc") != std::string::npos);
    CHECK(std::filesystem::exists(tmp.path() / "rep" / "comparison.csv"));
  }

  SECTION("report projects speaker embeddings") {
    auto report = run_cli(dir, "report run1 --project-speakers corpus/dev.csv "
                               "--speaker-encoder toy-speaker --split dev --out rep2");
    REQUIRE(report.code == 0);
    const auto csv = slurp(tmp.str("rep2/speaker_projection.csv"));
    CHECK(csv.rfind("utterance_id,label,x,y", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 49);
    const auto svg = slurp(tmp.str("rep2/speaker_projection.svg"));
    CHECK(svg.find("<svg") != std::string::npos);
  }
}

TEST_CASE("self-evaluation of the reference labels scores a perfect 1") {
  TempDir tmp("cli");
  const std::string dir = tmp.str();
  auto synth = run_cli(dir, "synth --out corpus --seed 9 --train-per-class 4 "
                            "--dev-per-class 5 --speakers 6");
  REQUIRE(synth.code == 0);

  auto dev = load_manifest(tmp.str("corpus/dev.csv"), Split::kDev);
  PredictionMap refs;
  for (const auto& r : dev) refs.emplace(r.utterance_id, *r.labels);
  write_text_file(tmp.str("refs.csv"), predictions_to_csv(refs));

  auto evaluate = run_cli(dir, "evaluate --predictions refs.csv --manifest corpus/dev.csv "
                               "--split dev --k 2 --n 3 --seed 1");
  REQUIRE(evaluate.code == 0);
  CHECK(kv_value(evaluate.out, "ccc_arousal") == "1");
  CHECK(kv_value(evaluate.out, "ccc_valence") == "1");
  CHECK(kv_value(evaluate.out, "ccc_dominance") == "1");
  CHECK(kv_value(evaluate.out, "ccc_average") == "1");
  CHECK(kv_value(evaluate.out, "balanced_ccc_mean") == "1");
  CHECK(kv_value(evaluate.out, "balanced_ccc_std") == "0");
}

TEST_CASE("ensembling a single member reproduces its file") {
  TempDir tmp("cli");
  const std::string dir = tmp.str();
  PredictionMap preds;
  preds.emplace("u1", Attributes{1.5, 2.25, 3.75});
  preds.emplace("u2", Attributes{4.000000001, 5.5, 6.125});
  write_text_file(tmp.str("m1.csv"), predictions_to_csv(preds));

  auto one = run_cli(dir, "ensemble m1.csv --out out1.csv");
  REQUIRE(one.code == 0);
  CHECK(slurp(tmp.str("out1.csv")) == slurp(tmp.str("m1.csv")));

  SECTION("averaging two members") {
    PredictionMap other;
    other.emplace("u1", Attributes{2.5, 2.75, 4.25});
    other.emplace("u2", Attributes{4.000000001, 6.5, 6.375});
    write_text_file(tmp.str("m2.csv"), predictions_to_csv(other));
    auto two = run_cli(dir, "ensemble m1.csv m2.csv --out out2.csv");
    REQUIRE(two.code == 0);
    auto avg = load_predictions(tmp.str("out2.csv"));
    CHECK(avg.at("u1") == Attributes{2.0, 2.5, 4.0});
    CHECK(avg.at("u2").valence == 6.0);
  }

  SECTION("mismatched id sets fail with the symmetric difference") {
    PredictionMap other;
    other.emplace("u1", Attributes{2, 2, 2});
    other.emplace("u9", Attributes{3, 3, 3});
    write_text_file(tmp.str("m3.csv"), predictions_to_csv(other));
    auto bad = run_cli(dir, "ensemble m1.csv m3.csv --out out3.csv");
    CHECK(bad.code == 1);
    CHECK(bad.err.find("error[validation]:") != std::string::npos);
    CHECK(bad.err.find("missing: u2") != std::string::npos);
    CHECK(bad.err.find("extra: u9") != std::string::npos);
  }
}

TEST_CASE("exit codes separate validation from runtime failures") {
  TempDir tmp("cli");
  const std::string dir = tmp.str();

  SECTION("unusable flags are a parse error") {
    auto r = run_cli(dir, "train --no-such-flag");
    CHECK(r.code == 1);
  }
  SECTION("a missing manifest is a validation error") {
    auto r = run_cli(dir, "train --train-manifest nope.csv --dev-manifest nope.csv --out x");
    CHECK(r.code == 1);
    CHECK(r.err.rfind("error[validation]: ", 0) == 0);
    CHECK(r.err.find("manifest not found") != std::string::npos);
  }
  SECTION("an unknown policy is a validation error") {
    auto synth = run_cli(dir, "synth --out corpus --seed 1 --train-per-class 3 "
                              "--dev-per-class 2 --speakers 4");
    REQUIRE(synth.code == 0);
    auto r = run_cli(dir, "prepare --train corpus/train.csv --dev corpus/dev.csv "
                          "--policy +everything --out prep");
    CHECK(r.code == 1);
    CHECK(r.err.find("error[validation]: policy") != std::string::npos);
  }
  SECTION("prediction failures are a runtime error with a failures file") {
    bootstrap(dir);
    // Corrupt every dev audio ref.
    auto text = slurp(tmp.str("corpus/dev.csv"));
    size_t pos = 0;
    while ((pos = text.find("toy://a=", pos)) != std::string::npos) {
      text.replace(pos, 8, "toy://q=");
      pos += 8;
    }
    write_text_file(tmp.str("corpus/dev.csv"), text);

    auto r = run_cli(dir, "predict --run run1 --manifest corpus/dev.csv --split dev "
                          "--out bad.csv");
    CHECK(r.code == 2);
    CHECK(r.err.find("error[runtime]:") != std::string::npos);
    CHECK(r.err.find("failed to encode") != std::string::npos);
    const auto failures = slurp(tmp.str("bad.csv.failures.txt"));
    CHECK(std::count(failures.begin(), failures.end(), '\n') == 48);
    CHECK(failures.find("unknown ref key") != std::string::npos);
    // The prediction file still lands, holding the successes (none here).
    CHECK(slurp(tmp.str("bad.csv")) == std::string(kPredictionHeader) + "\n");
  }
  SECTION("a checkpoint trained under another config is rejected without --force") {
    bootstrap(dir);
    auto train2 = run_cli(dir, "train --train-manifest corpus/train.csv --dev-manifest "
                               "corpus/dev.csv --out run-alt --epochs 0 --batch-size 8 "
                               "--filter-size 14 --k 3 --n 4 --seed 21");
    REQUIRE(train2.code == 0);
    auto r = run_cli(dir, "predict --run run1 --checkpoint run-alt/checkpoint.bin "
                          "--manifest corpus/dev.csv --split dev --out x.csv");
    CHECK(r.code == 1);
    CHECK(r.err.find("config hash mismatch") != std::string::npos);

    auto forced = run_cli(dir, "predict --run run1 --checkpoint run-alt/checkpoint.bin "
                               "--manifest corpus/dev.csv --split dev --out y.csv --force");
    CHECK(forced.code == 0);
    CHECK(load_predictions(tmp.str("y.csv")).size() == 48);
  }
}

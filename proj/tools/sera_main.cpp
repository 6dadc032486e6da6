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

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "serattr/cli.hpp"
#include "serattr/corpus.hpp"
#include "serattr/encoders.hpp"
#include "serattr/ensemble.hpp"
#include "serattr/report.hpp"
#include "serattr/training.hpp"

namespace {

using namespace serattr;
namespace fs = std::filesystem;

// All strings quoted so values with commas (policies, paths) survive the
// INI round trip.
std::string resolved_train_ini(const RunConfig& cfg, const std::string& train_manifest,
                               const std::string& dev_manifest) {
  std::ostringstream out;
  out << "[train]\n";
  for (const auto& [key, value] : cfg.to_kv()) {
    std::string name = key;
    for (char& c : name) {
      if (c == '_') c = '-';
    }
    out << name << "=\"" << value << "\"\n";
  }
  out << "train-manifest=\"" << train_manifest << "\"\n";
  out << "dev-manifest=\"" << dev_manifest << "\"\n";
  return out.str();
}

Split split_from_flag(const std::string& s) {
  auto v = parse_split(s);
  if (!v) throw ValidationError("unknown split \"" + s + "\"");
  return *v;
}

std::optional<EmbeddingCache> open_cache_from_env() {
  const std::string dir = cache_dir_from_env();
  if (dir.empty()) return std::nullopt;
  return std::make_optional<EmbeddingCache>(dir);
}

int64_t unix_now() {
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

struct SynthArgs {
  std::string out;
  SynthSpec spec;
  int train_per_class = 200;
  int dev_per_class = 50;
  std::vector<int> train_counts;
  std::vector<int> dev_counts;
  bool no_valence_tokens = false;
};

int cmd_synth(const SynthArgs& a) {
  SynthSpec spec = a.spec;
  for (int c = 0; c < kPrimaryEmotionCount; ++c) {
    spec.train_counts[c] = a.train_per_class;
    spec.dev_counts[c] = a.dev_per_class;
  }
  for (int c = kPrimaryEmotionCount; c < kEmotionClassCount; ++c) {
    spec.train_counts[c] = 0;
    spec.dev_counts[c] = 0;
  }
  auto apply = [](const std::vector<int>& src, std::array<int, kEmotionClassCount>* dst) {
    if (src.empty()) return;
    if (src.size() != kEmotionClassCount) {
      throw ValidationError("synth: counts need exactly " + std::to_string(kEmotionClassCount) +
                            " values (one per class)");
    }
    std::copy(src.begin(), src.end(), dst->begin());
  };
  apply(a.train_counts, &spec.train_counts);
  apply(a.dev_counts, &spec.dev_counts);
  spec.text_valence_tokens = !a.no_valence_tokens;

  SynthCorpus corpus = generate_synthetic_corpus(spec);
  fs::create_directories(a.out);
  write_manifest((fs::path(a.out) / "train.csv").string(), corpus.train);
  write_manifest((fs::path(a.out) / "dev.csv").string(), corpus.dev);
  std::cout << "synth: wrote " << corpus.train.size() << " train and " << corpus.dev.size()
            << " dev records to " << a.out << "\n";
  return 0;
}

struct PrepareArgs {
  std::string train_manifest;
  std::string dev_manifest;
  std::string policy = "baseline";
  std::string out;
};

int cmd_prepare(const PrepareArgs& a) {
  SplitPolicy policy = SplitPolicy::parse(a.policy);
  auto train = load_manifest(a.train_manifest, Split::kTrain);
  auto dev = load_manifest(a.dev_manifest, Split::kDev);
  DatasetAssembly assembly = assemble(std::move(train), std::move(dev), policy);
  fs::create_directories(a.out);
  // Records moved across the split keep their provenance tag in memory; the
  // emitted manifests must reload as plain train/dev files, so retag here.
  auto retagged = [](std::vector<UtteranceRecord> recs, Split s) {
    for (auto& r : recs) r.split = s;
    return recs;
  };
  write_manifest((fs::path(a.out) / "train.csv").string(),
                 retagged(assembly.train_records, Split::kTrain));
  write_manifest((fs::path(a.out) / "dev.csv").string(),
                 retagged(assembly.dev_records, Split::kDev));
  const std::string summary = assembly_summary(assembly);
  write_text_file((fs::path(a.out) / "summary.csv").string(), summary);
  std::cout << summary;
  return 0;
}

struct TrainArgs {
  RunConfig cfg;
  std::string policy = "baseline";
  std::string train_manifest;
  std::string dev_manifest;
  std::string out;
  std::string config_path;  // informational, for the run manifest
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = a.cfg;
  cfg.policy = SplitPolicy::parse(a.policy);
  cfg.validate();

  auto train_recs = load_manifest(a.train_manifest, Split::kTrain);
  auto dev_recs = load_manifest(a.dev_manifest, Split::kDev);
  DatasetAssembly assembly = assemble(std::move(train_recs), std::move(dev_recs), cfg.policy);

  auto cache = open_cache_from_env();
  fs::create_directories(a.out);

  TrainResult res = serattr::train(cfg, assembly, a.out, cache ? &*cache : nullptr,
                                   [](const EpochStats& e) {
                                     std::cout << "epoch " << e.epoch << " loss "
                                               << format_double(e.loss_total) << " dev ccc "
                                               << format_double(e.ccc_average) << " balanced "
                                               << format_double(e.balanced_mean) << "\n";
                                   });

  save_run_config((fs::path(a.out) / "run_config.json").string(), cfg);
  write_text_file((fs::path(a.out) / "resolved.ini").string(),
                  resolved_train_ini(cfg, a.train_manifest, a.dev_manifest));
  if (cfg.epochs > 0) {
    std::vector<UtteranceRecord> dev_labeled;
    for (const auto& r : assembly.dev_records) {
      if (r.labels) dev_labeled.push_back(r);
    }
    BalancedTrialSet trials = balanced_trials(dev_labeled, cfg.k, cfg.n, cfg.seed);
    write_text_file((fs::path(a.out) / "trials.csv").string(), serialize_trials(trials));
    write_text_file((fs::path(a.out) / "report.txt").string(), report_to_kv(res.best_report));
    write_text_file((fs::path(a.out) / "report.json").string(),
                    report_to_json(res.best_report).dump(2) + "\n");
  }

  nlohmann::json manifest = {{"command", "train"},
                             {"config_file", a.config_path},
                             {"train_manifest", a.train_manifest},
                             {"dev_manifest", a.dev_manifest},
                             {"out_dir", a.out},
                             {"seed", cfg.seed},
                             {"config_hash", hex_u64(cfg.config_hash())},
                             {"created_unix", unix_now()},
                             {"best_epoch", res.best_epoch}};
  write_text_file((fs::path(a.out) / "run_manifest.json").string(), manifest.dump(2) + "\n");

  if (res.best_epoch >= 0) {
    std::cout << "train: best epoch " << res.best_epoch << " balanced ccc "
              << format_double(res.best_score) << "\n";
  } else {
    std::cout << "train: wrote initialization checkpoint (no epochs)\n";
  }
  std::cout << "train: artifacts in " << a.out << "\n";
  return 0;
}

struct PredictArgs {
  std::string run_dir;
  std::string run_config;
  std::string checkpoint;
  std::string manifest;
  std::string split = "dev";
  std::string out;
  bool force = false;
};

int cmd_predict(const PredictArgs& a) {
  const std::string cfg_path =
      !a.run_config.empty() ? a.run_config : (fs::path(a.run_dir) / "run_config.json").string();
  const std::string ckpt_path =
      !a.checkpoint.empty() ? a.checkpoint : (fs::path(a.run_dir) / "checkpoint.bin").string();
  RunConfig cfg = load_run_config(cfg_path);
  auto model = Model::load_checkpoint(ckpt_path, cfg.config_hash(), a.force);
  Encoders enc = make_encoders(cfg);

  LoadOptions opts;
  opts.allow_missing_labels = true;
  auto records = load_manifest(a.manifest, split_from_flag(a.split), opts);

  auto cache = open_cache_from_env();
  PredictOutcome outcome = predict(*model, records, cfg, enc, cache ? &*cache : nullptr);
  write_text_file(a.out, predictions_to_csv(outcome.predictions));
  std::cout << "predict: " << outcome.predictions.size() << " predictions to " << a.out << "\n";
  if (!outcome.failures.empty()) {
    write_text_file(a.out + ".failures.txt", [&] {
      std::string s;
      for (const auto& f : outcome.failures) s += f + "\n";
      return s;
    }());
    for (const auto& f : outcome.failures) std::cerr << "predict: skipped " << f << "\n";
    std::cerr << "error[runtime]: " << outcome.failures.size()
              << " utterance(s) failed to encode\n";
    return 2;
  }
  return 0;
}

struct EvaluateArgs {
  std::string predictions;
  std::string run_dir;
  std::string checkpoint;
  std::string manifest;
  std::string split = "dev";
  std::string out;
  int k = 300;
  int n = 20;
  uint64_t seed = 1;
  bool k_set = false, n_set = false, seed_set = false;
  bool no_balanced = false;
  bool force = false;
};

int cmd_evaluate(const EvaluateArgs& a) {
  auto refs = load_manifest(a.manifest, split_from_flag(a.split));

  PredictionMap preds;
  int k = a.k, n = a.n;
  uint64_t seed = a.seed;
  if (!a.predictions.empty()) {
    preds = load_predictions(a.predictions);
  } else if (!a.run_dir.empty() || !a.checkpoint.empty()) {
    const std::string cfg_path = (fs::path(a.run_dir) / "run_config.json").string();
    const std::string ckpt_path =
        !a.checkpoint.empty() ? a.checkpoint : (fs::path(a.run_dir) / "checkpoint.bin").string();
    RunConfig cfg = a.run_dir.empty() ? RunConfig{} : load_run_config(cfg_path);
    auto model = a.run_dir.empty() ? Model::load_checkpoint(ckpt_path, std::nullopt, a.force)
                                   : Model::load_checkpoint(ckpt_path, cfg.config_hash(), a.force);
    Encoders enc = make_encoders(cfg);
    auto cache = open_cache_from_env();
    PredictOutcome outcome = predict(*model, refs, cfg, enc, cache ? &*cache : nullptr);
    if (!outcome.failures.empty()) {
      for (const auto& f : outcome.failures) std::cerr << "evaluate: failed to encode " << f << "\n";
      throw RuntimeError("evaluate: " + std::to_string(outcome.failures.size()) +
                         " utterance(s) failed to encode");
    }
    preds = std::move(outcome.predictions);
    if (!a.k_set) k = cfg.k;
    if (!a.n_set) n = cfg.n;
    if (!a.seed_set) seed = cfg.seed;
  } else {
    throw ValidationError("evaluate: needs --predictions or --run/--checkpoint");
  }

  EvaluationReport report = evaluate(preds, refs);
  if (!a.no_balanced) {
    std::vector<UtteranceRecord> labeled;
    for (const auto& r : refs) {
      if (r.labels) labeled.push_back(r);
    }
    BalancedTrialSet trials = balanced_trials(labeled, k, n, seed);
    BalancedCccResult bal = balanced_ccc(preds, labeled, trials);
    report.balanced_ccc_mean = bal.mean;
    report.balanced_ccc_std = bal.stddev;
    report.balanced_per_trial = bal.per_trial;
    report.k = k;
    report.n = n;
    report.seed = seed;
  }
  std::cout << report_to_kv(report);
  if (!a.out.empty()) {
    write_text_file(a.out, report_to_json(report).dump(2) + "\n");
  }
  return 0;
}

struct EnsembleArgs {
  std::vector<std::string> members;
  std::string out;
};

int cmd_ensemble(const EnsembleArgs& a) {
  std::vector<PredictionMap> members;
  members.reserve(a.members.size());
  for (const auto& path : a.members) members.push_back(load_predictions(path));
  PredictionMap avg = average(members);
  write_text_file(a.out, predictions_to_csv(avg));
  std::cout << "ensemble: averaged " << members.size() << " member(s), " << avg.size()
            << " utterances to " << a.out << "\n";
  return 0;
}

struct ReportArgs {
  std::vector<std::string> run_dirs;
  std::string out;
  std::string project_manifest;
  std::string split = "dev";
  std::string speaker_encoder = "toy-speaker";
};

int cmd_report(const ReportArgs& a) {
  fs::create_directories(a.out);
  if (!a.run_dirs.empty()) {
    std::vector<RunRow> rows;
    rows.reserve(a.run_dirs.size());
    for (const auto& dir : a.run_dirs) rows.push_back(load_run_row(dir));
    const std::string table = comparison_table(rows);
    write_text_file((fs::path(a.out) / "comparison.txt").string(), table);
    write_text_file((fs::path(a.out) / "comparison.csv").string(), comparison_csv(rows));
    std::cout << table;
  }
  if (!a.project_manifest.empty()) {
    LoadOptions opts;
    opts.allow_missing_labels = true;
    auto records = load_manifest(a.project_manifest, split_from_flag(a.split), opts);
    if (records.size() < 2) throw ValidationError("report: projection needs >= 2 records");
    auto enc = make_speaker_encoder(a.speaker_encoder);
    Eigen::MatrixXd points(enc->dim(), static_cast<Eigen::Index>(records.size()));
    for (size_t i = 0; i < records.size(); ++i) {
      points.col(static_cast<Eigen::Index>(i)) = enc->encode(records[i].audio_ref).vector;
    }
    Eigen::MatrixXd proj = pca_project_2d(points);
    std::vector<ProjectedPoint> pts(records.size());
    for (size_t i = 0; i < records.size(); ++i) {
      pts[i].id = records[i].utterance_id;
      pts[i].label = records[i].speaker_id.empty() ? std::string("unknown") : records[i].speaker_id;
      pts[i].x = proj(0, static_cast<Eigen::Index>(i));
      pts[i].y = proj(1, static_cast<Eigen::Index>(i));
    }
    write_text_file((fs::path(a.out) / "speaker_projection.csv").string(), projection_to_csv(pts));
    write_text_file((fs::path(a.out) / "speaker_projection.svg").string(), projection_to_svg(pts));
    std::cout << "report: projected " << pts.size() << " speaker embeddings\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"speech emotion attribute pipeline: corpora, training, evaluation, ensembling"};
  app.require_subcommand(1);
  app.set_config("--config", "", "INI config; sections map to subcommands");

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "generate a deterministic synthetic corpus");
  synth->add_option("--out", synth_args.out, "output directory")->required();
  synth->add_option("--seed", synth_args.spec.seed, "corpus seed");
  synth->add_option("--train-per-class", synth_args.train_per_class,
                    "train samples per primary class");
  synth->add_option("--dev-per-class", synth_args.dev_per_class, "dev samples per primary class");
  synth->add_option("--train-counts", synth_args.train_counts,
                    "per-class train counts, 10 comma-separated values")
      ->delimiter(',');
  synth->add_option("--dev-counts", synth_args.dev_counts,
                    "per-class dev counts, 10 comma-separated values")
      ->delimiter(',');
  synth->add_option("--speakers", synth_args.spec.n_speakers, "speaker pool size");
  synth->add_option("--warp", synth_args.spec.warp, "feature-map nonlinearity in [0,1]");
  synth->add_option("--gender-arousal-shift", synth_args.spec.gender_arousal_shift,
                    "rating-only arousal offset: female +, male -");
  synth->add_option("--majority-center-spread", synth_args.spec.majority_center_spread,
                    "rate class 0 train items near 4 +/- spread");
  synth->add_flag("--no-valence-tokens", synth_args.no_valence_tokens,
                  "drop the valence cue from transcripts");
  synth->add_option("--token-count", synth_args.spec.text_token_count, "transcript token count");

  PrepareArgs prepare_args;
  auto* prepare = app.add_subcommand("prepare", "validate manifests and assemble a split policy");
  prepare->add_option("--train", prepare_args.train_manifest, "train manifest")->required();
  prepare->add_option("--dev", prepare_args.dev_manifest, "dev manifest")->required();
  prepare->add_option("--policy", prepare_args.policy,
                      "split policy: baseline or tokens from {+ox-dev,-ox-train,-nonox-train}");
  prepare->add_option("--out", prepare_args.out, "output directory")->required();

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a model and keep the best checkpoint");
  train_cmd->add_option("--train-manifest", train_args.train_manifest, "train manifest")
      ->required();
  train_cmd->add_option("--dev-manifest", train_args.dev_manifest, "dev manifest")->required();
  train_cmd->add_option("--out", train_args.out, "run directory")->required();
  train_cmd->add_option("--learning-rate", train_args.cfg.learning_rate, "optimizer step size");
  train_cmd->add_option("--epochs", train_args.cfg.epochs, "training epochs");
  train_cmd->add_option("--batch-size", train_args.cfg.batch_size, "samples per batch");
  train_cmd->add_option("--filter-size", train_args.cfg.filter_size,
                        "conv output width and head hidden width");
  train_cmd->add_option("--max-duration-s", train_args.cfg.max_duration_s,
                        "speech duration cap in seconds");
  train_cmd->add_option("--alpha", train_args.cfg.alpha, "gender loss weight");
  train_cmd->add_option("--beta", train_args.cfg.beta, "speaker loss weight");
  train_cmd->add_option("--speech-encoder", train_args.cfg.speech_encoder, "speech adapter name");
  train_cmd->add_flag("--use-text,!--no-use-text", train_args.cfg.use_text, "fuse text features");
  train_cmd->add_option("--text-encoder", train_args.cfg.text_encoder, "text adapter name");
  train_cmd->add_flag("--use-speaker-embedding,!--no-use-speaker-embedding",
                      train_args.cfg.use_speaker_embedding, "fuse a frozen speaker embedding");
  train_cmd->add_option("--speaker-encoder", train_args.cfg.speaker_encoder,
                        "speaker adapter name");
  train_cmd->add_flag("--predict-gender,!--no-predict-gender", train_args.cfg.predict_gender,
                      "add the gender classification loss");
  train_cmd->add_flag("--predict-speaker,!--no-predict-speaker", train_args.cfg.predict_speaker,
                      "add the speaker identification loss");
  train_cmd->add_flag("--undersample,!--no-undersample", train_args.cfg.undersample,
                      "redraw class-balanced training subsets every epoch");
  train_cmd->add_option("--policy", train_args.policy, "split policy");
  train_cmd->add_option("--seed", train_args.cfg.seed, "run seed");
  train_cmd->add_option("--k", train_args.cfg.k, "balanced selection: samples per primary class");
  train_cmd->add_option("--n", train_args.cfg.n, "balanced selection: trial count");
  train_cmd->add_option("--grad-clip-norm", train_args.cfg.grad_clip_norm,
                        "global gradient-norm cap; <= 0 disables");
  train_cmd->add_option("--speaker-head-dim", train_args.cfg.speaker_head_dim,
                        "speaker embedding head width");
  train_cmd->add_option("--aam-margin", train_args.cfg.aam_margin, "angular margin");
  train_cmd->add_option("--aam-scale", train_args.cfg.aam_scale, "cosine logit scale");

  PredictArgs predict_args;
  auto* predict_cmd = app.add_subcommand("predict", "run inference with a trained checkpoint");
  predict_cmd->add_option("--run", predict_args.run_dir, "run directory (config + checkpoint)");
  predict_cmd->add_option("--run-config", predict_args.run_config, "run_config.json path");
  predict_cmd->add_option("--checkpoint", predict_args.checkpoint, "checkpoint path override");
  predict_cmd->add_option("--manifest", predict_args.manifest, "input manifest")->required();
  predict_cmd->add_option("--split", predict_args.split, "expected manifest split")
      ->check(CLI::IsMember({"train", "dev", "test"}));
  predict_cmd->add_option("--out", predict_args.out, "prediction CSV path")->required();
  predict_cmd->add_flag("--force", predict_args.force, "ignore config-hash mismatch");

  EvaluateArgs eval_args;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "score predictions against references");
  evaluate_cmd->add_option("--predictions", eval_args.predictions, "prediction CSV to score");
  evaluate_cmd->add_option("--run", eval_args.run_dir, "run directory to predict with");
  evaluate_cmd->add_option("--checkpoint", eval_args.checkpoint, "checkpoint path override");
  evaluate_cmd->add_option("--manifest", eval_args.manifest, "reference manifest")->required();
  evaluate_cmd->add_option("--split", eval_args.split, "expected manifest split")
      ->check(CLI::IsMember({"train", "dev", "test"}));
  evaluate_cmd->add_option("--out", eval_args.out, "report JSON path");
  auto* k_opt = evaluate_cmd->add_option("--k", eval_args.k, "balanced: samples per class");
  auto* n_opt = evaluate_cmd->add_option("--n", eval_args.n, "balanced: trial count");
  auto* seed_opt = evaluate_cmd->add_option("--seed", eval_args.seed, "balanced: trial seed");
  evaluate_cmd->add_flag("--no-balanced", eval_args.no_balanced, "skip the balanced metric");
  evaluate_cmd->add_flag("--force", eval_args.force, "ignore config-hash mismatch");

  EnsembleArgs ensemble_args;
  auto* ensemble_cmd = app.add_subcommand("ensemble", "average prediction files");
  ensemble_cmd->add_option("members", ensemble_args.members, "prediction CSV files")
      ->required()
      ->expected(-1);
  ensemble_cmd->add_option("--out", ensemble_args.out, "averaged prediction CSV")->required();

  ReportArgs report_args;
  auto* report_cmd = app.add_subcommand("report", "compare runs and plot embedding projections");
  report_cmd->add_option("runs", report_args.run_dirs, "run directories to compare");
  report_cmd->add_option("--out", report_args.out, "output directory")->required();
  report_cmd->add_option("--project-speakers", report_args.project_manifest,
                         "manifest whose utterances get a 2-D speaker-embedding projection");
  report_cmd->add_option("--split", report_args.split, "expected split of that manifest")
      ->check(CLI::IsMember({"train", "dev", "test"}));
  report_cmd->add_option("--speaker-encoder", report_args.speaker_encoder,
                         "speaker adapter for the projection");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 1;
  }

  eval_args.k_set = k_opt->count() > 0;
  eval_args.n_set = n_opt->count() > 0;
  eval_args.seed_set = seed_opt->count() > 0;
  train_args.config_path = app.get_config_ptr()->count() > 0 ? app["--config"]->as<std::string>()
                                                             : std::string();

  try {
    if (synth->parsed()) return cmd_synth(synth_args);
    if (prepare->parsed()) return cmd_prepare(prepare_args);
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (predict_cmd->parsed()) return cmd_predict(predict_args);
    if (evaluate_cmd->parsed()) return cmd_evaluate(eval_args);
    if (ensemble_cmd->parsed()) return cmd_ensemble(ensemble_args);
    if (report_cmd->parsed()) return cmd_report(report_args);
  } catch (const ValidationError& e) {
    std::cerr << "error[validation]: " << e.what() << "\n";
    return 1;
  } catch (const RuntimeError& e) {
    std::cerr << "error[runtime]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error[runtime]: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

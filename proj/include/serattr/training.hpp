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

#ifndef SERATTR_TRAINING_HPP_
#define SERATTR_TRAINING_HPP_

#include <algorithm>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "serattr/cache.hpp"
#include "serattr/corpus.hpp"
#include "serattr/encoders.hpp"
#include "serattr/metrics.hpp"
#include "serattr/model.hpp"
#include "serattr/optimizer.hpp"
#include "serattr/sampling.hpp"

namespace serattr {

/** Everything a run needs, resolvable from a config file plus flag
 *  overrides. Numeric defaults follow the reference training recipe. */
struct RunConfig {
  double learning_rate = 5e-5;
  int epochs = 50;
  int batch_size = 32;
  int filter_size = 256;
  double max_duration_s = 15.0;
  double alpha = 1.0;  // gender loss weight
  double beta = 0.1;   // speaker loss weight

  std::string speech_encoder = "toy-wavlm";
  bool use_text = false;
  std::string text_encoder = "toy-text";
  bool use_speaker_embedding = false;
  std::string speaker_encoder = "toy-speaker";
  bool predict_gender = false;
  bool predict_speaker = false;

  bool undersample = true;
  SplitPolicy policy;
  uint64_t seed = 1;

  // Model selection: balanced CCC over n trials of k per primary emotion.
  int k = 300;
  int n = 20;

  double grad_clip_norm = 1.0;  // <= 0 disables clipping
  int speaker_head_dim = 32;
  double aam_margin = 0.2;
  double aam_scale = 30.0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ValidationError("config: learning_rate must be positive");
    if (epochs < 0) throw ValidationError("config: epochs must be non-negative");
    if (batch_size < 2) throw ValidationError("config: batch_size must be at least 2");
    if (filter_size <= 0) throw ValidationError("config: filter_size must be positive");
    if (!(max_duration_s > 0.0)) throw ValidationError("config: max_duration_s must be positive");
    if (alpha < 0.0 || beta < 0.0) throw ValidationError("config: loss weights must be >= 0");
    if (use_speaker_embedding && predict_speaker) {
      throw ValidationError(
          "config: use_speaker_embedding and predict_speaker are mutually exclusive");
    }
    if (k < 2) throw ValidationError("config: k must be at least 2");
    if (n < 1) throw ValidationError("config: n must be at least 1");
    policy.validate();
  }

  /** Stable key order; this listing is the run's identity. */
  std::vector<std::pair<std::string, std::string>> to_kv() const {
    auto b = [](bool v) { return v ? std::string("true") : std::string("false"); };
    return {
        {"learning_rate", format_double(learning_rate)},
        {"epochs", std::to_string(epochs)},
        {"batch_size", std::to_string(batch_size)},
        {"filter_size", std::to_string(filter_size)},
        {"max_duration_s", format_double(max_duration_s)},
        {"alpha", format_double(alpha)},
        {"beta", format_double(beta)},
        {"speech_encoder", speech_encoder},
        {"use_text", b(use_text)},
        {"text_encoder", text_encoder},
        {"use_speaker_embedding", b(use_speaker_embedding)},
        {"speaker_encoder", speaker_encoder},
        {"predict_gender", b(predict_gender)},
        {"predict_speaker", b(predict_speaker)},
        {"undersample", b(undersample)},
        {"policy", policy.to_string()},
        {"seed", std::to_string(seed)},
        {"k", std::to_string(k)},
        {"n", std::to_string(n)},
        {"grad_clip_norm", format_double(grad_clip_norm)},
        {"speaker_head_dim", std::to_string(speaker_head_dim)},
        {"aam_margin", format_double(aam_margin)},
        {"aam_scale", format_double(aam_scale)},
    };
  }

  std::string canonical_string() const {
    std::ostringstream out;
    for (const auto& [key, value] : to_kv()) out << key << '=' << value << '\n';
    return out.str();
  }

  uint64_t config_hash() const { return fnv1a64(canonical_string()); }
};

struct Encoders {
  std::shared_ptr<SpeechEncoder> speech;
  std::shared_ptr<TextEncoder> text;        // may be null when text is off
  std::shared_ptr<SpeakerEncoder> speaker;  // may be null when embedding is off
};

inline Encoders make_encoders(const RunConfig& cfg) {
  Encoders e;
  e.speech = make_speech_encoder(cfg.speech_encoder);
  if (cfg.use_text) e.text = make_text_encoder(cfg.text_encoder);
  if (cfg.use_speaker_embedding) e.speaker = make_speaker_encoder(cfg.speaker_encoder);
  return e;
}

namespace detail {

inline int gender_index(Gender g) {
  switch (g) {
    case Gender::kFemale:
      return 0;
    case Gender::kMale:
      return 1;
    default:
      return -1;
  }
}

inline SpeechEncoding encode_speech_cached(const SpeechEncoder& enc, const std::string& id,
                                           const std::string& audio_ref, double max_duration_s,
                                           EmbeddingCache* cache) {
  // The duration cap changes the frame count, so it is part of the cache key.
  const std::string key = enc.id() + "@" + format_double(max_duration_s);
  if (cache != nullptr) {
    if (auto hit = cache->get_speech(id, key)) return *hit;
  }
  SpeechEncoding out = enc.encode(audio_ref, max_duration_s);
  if (cache != nullptr) cache->put_speech(id, key, out);
  return out;
}

}  // namespace detail

/** Encodes one record into model input. Throws RuntimeError when an adapter
 *  cannot decode the ref. Targets are attached when the record has labels. */
inline EncodedSample encode_record(const UtteranceRecord& rec, const RunConfig& cfg,
                                   const Encoders& enc, const TargetNormalizer& norm,
                                   const std::map<std::string, int>& speaker_index,
                                   EmbeddingCache* cache = nullptr) {
  EncodedSample s;
  s.speech = detail::encode_speech_cached(*enc.speech, rec.utterance_id, rec.audio_ref,
                                          cfg.max_duration_s, cache);
  if (cfg.use_text) s.text = enc.text->encode(rec.transcript).vector;
  if (cfg.use_speaker_embedding) s.speaker = enc.speaker->encode(rec.audio_ref).vector;
  s.gender_label = detail::gender_index(rec.gender);
  if (!rec.speaker_id.empty()) {
    auto it = speaker_index.find(rec.speaker_id);
    if (it != speaker_index.end()) s.speaker_label = it->second;
  }
  if (rec.labels) {
    s.targets_norm = norm.normalize(*rec.labels);
    s.has_targets = true;
  }
  return s;
}

struct EpochStats {
  int epoch = 0;  // 1-based
  double loss_total = 0.0;
  double loss_emotion = 0.0;
  double loss_gender = 0.0;
  double loss_speaker = 0.0;
  double ccc_arousal = 0.0;
  double ccc_valence = 0.0;
  double ccc_dominance = 0.0;
  double ccc_average = 0.0;
  double balanced_mean = 0.0;
  double balanced_std = 0.0;
};

inline const char* kHistoryHeader =
    "epoch,loss_total,loss_emotion,loss_gender,loss_speaker,"
    "ccc_arousal,ccc_valence,ccc_dominance,ccc_average,balanced_ccc_mean,balanced_ccc_std";

inline std::string history_to_csv(const std::vector<EpochStats>& history) {
  std::ostringstream out;
  out << kHistoryHeader << '\n';
  for (const auto& e : history) {
    out << e.epoch << ',' << format_double(e.loss_total) << ',' << format_double(e.loss_emotion)
        << ',' << format_double(e.loss_gender) << ',' << format_double(e.loss_speaker) << ','
        << format_double(e.ccc_arousal) << ',' << format_double(e.ccc_valence) << ','
        << format_double(e.ccc_dominance) << ',' << format_double(e.ccc_average) << ','
        << format_double(e.balanced_mean) << ',' << format_double(e.balanced_std) << '\n';
  }
  return out.str();
}

struct TrainResult {
  std::vector<EpochStats> history;
  int best_epoch = -1;  // -1 when no evaluated epoch (epochs == 0)
  double best_score = std::numeric_limits<double>::quiet_NaN();
  std::string checkpoint_path;
  EvaluationReport best_report;
};

struct PredictOutcome {
  PredictionMap predictions;
  std::vector<std::string> failures;  // "<id>: <reason>" per skipped utterance
};

/** Deterministic inference over records. Adapter failures skip the
 *  utterance and are reported, not thrown. */
inline PredictOutcome predict(const Model& model, const std::vector<UtteranceRecord>& records,
                              const RunConfig& cfg, const Encoders& enc,
                              EmbeddingCache* cache = nullptr) {
  std::map<std::string, int> speaker_index;
  for (size_t i = 0; i < model.speaker_vocab().size(); ++i) {
    speaker_index[model.speaker_vocab()[i]] = static_cast<int>(i);
  }
  PredictOutcome out;
  for (const auto& rec : records) {
    EncodedSample s;
    try {
      s = encode_record(rec, cfg, enc, model.normalizer(), speaker_index, cache);
    } catch (const RuntimeError& e) {
      out.failures.push_back(rec.utterance_id + ": " + e.what());
      continue;
    }
    std::vector<EncodedSample> batch;
    batch.push_back(std::move(s));
    std::vector<Attributes> pred = model.predict(batch);
    out.predictions[rec.utterance_id] = pred[0];
  }
  return out;
}

/** The training loop.
 *
 *  Each epoch re-draws the undersample plan (when enabled), shuffles,
 *  optimizes the multi-task loss, then scores the dev set with plain and
 *  balanced CCC. The balanced trial subsets are drawn once and reused every
 *  epoch so the selection metric is comparable across epochs. The argmax
 *  checkpoint lands at `<run_dir>/checkpoint.bin`, the per-epoch history at
 *  `<run_dir>/history.csv`.
 */
inline TrainResult train(const RunConfig& cfg, const DatasetAssembly& assembly,
                         const std::string& run_dir, EmbeddingCache* cache = nullptr,
                         const std::function<void(const EpochStats&)>& progress = {}) {
  cfg.validate();
  if (assembly.train_records.empty()) throw ValidationError("train: empty training set");
  std::filesystem::create_directories(run_dir);

  Encoders enc = make_encoders(cfg);

  // Speaker vocabulary: sorted unique train speaker ids.
  std::map<std::string, int> speaker_index;
  std::vector<std::string> vocab;
  if (cfg.predict_speaker) {
    for (const auto& r : assembly.train_records) {
      if (!r.speaker_id.empty()) speaker_index.emplace(r.speaker_id, 0);
    }
    if (speaker_index.empty()) {
      throw ValidationError("train: predict_speaker requires train records with speaker ids");
    }
    for (auto& [sid, idx] : speaker_index) {
      idx = static_cast<int>(vocab.size());
      vocab.push_back(sid);
    }
  }

  ModelConfig mc;
  mc.speech_dim = enc.speech->dim();
  mc.speech_layers = enc.speech->layers();
  mc.text_dim = cfg.use_text ? enc.text->dim() : 0;
  mc.speaker_embed_dim = cfg.use_speaker_embedding ? enc.speaker->dim() : 0;
  mc.filter_size = cfg.filter_size;
  mc.predict_gender = cfg.predict_gender;
  mc.n_speakers = cfg.predict_speaker ? static_cast<int>(vocab.size()) : 0;
  mc.speaker_head_dim = cfg.speaker_head_dim;
  mc.aam_margin = cfg.aam_margin;
  mc.aam_scale = cfg.aam_scale;

  Model model(mc);
  model.init_parameters(cfg.seed);
  model.normalizer() = TargetNormalizer::fit(assembly.train_records);
  model.speaker_vocab() = vocab;

  // Encode everything once; toy adapters are cheap and real ones cache.
  std::map<std::string, EncodedSample> train_encoded;
  std::map<std::string, const UtteranceRecord*> train_by_id;
  for (const auto& r : assembly.train_records) {
    train_encoded.emplace(r.utterance_id, encode_record(r, cfg, enc, model.normalizer(),
                                                        speaker_index, cache));
    train_by_id.emplace(r.utterance_id, &r);
  }

  const std::string checkpoint_path = (std::filesystem::path(run_dir) / "checkpoint.bin").string();
  const std::string history_path = (std::filesystem::path(run_dir) / "history.csv").string();
  const uint64_t cfg_hash = cfg.config_hash();

  TrainResult result;
  result.checkpoint_path = checkpoint_path;

  if (cfg.epochs == 0) {
    model.save_checkpoint(checkpoint_path, cfg_hash);
    write_text_file(history_path, history_to_csv(result.history));
    return result;
  }

  // Labeled dev records back both the plain and the balanced metric; the
  // trial subsets are fixed for the whole run.
  std::vector<UtteranceRecord> dev_labeled;
  for (const auto& r : assembly.dev_records) {
    if (r.labels) dev_labeled.push_back(r);
  }
  if (dev_labeled.empty()) throw ValidationError("train: no labeled dev records for selection");
  BalancedTrialSet trials = balanced_trials(dev_labeled, cfg.k, cfg.n, cfg.seed);

  LossWeights weights{cfg.alpha, cfg.beta};
  Adam opt(model.parameters(), AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8});

  double best = -std::numeric_limits<double>::infinity();
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::string> ids;
    if (cfg.undersample) {
      ids = undersample(assembly, cfg.seed, epoch).all_ids();
    } else {
      ids.reserve(assembly.train_records.size());
      for (const auto& r : assembly.train_records) ids.push_back(r.utterance_id);
    }
    Rng shuffle_rng(mix_seed(mix_seed_tag(cfg.seed, "epoch-shuffle"), epoch));
    shuffle_rng.shuffle(ids);

    EpochStats stats;
    stats.epoch = epoch;
    int batches = 0;
    for (size_t start = 0; start < ids.size(); start += cfg.batch_size) {
      const size_t stop = std::min(ids.size(), start + cfg.batch_size);
      if (stop - start < 2) break;  // a CCC batch needs at least 2 samples
      std::vector<EncodedSample> batch;
      batch.reserve(stop - start);
      for (size_t i = start; i < stop; ++i) batch.push_back(train_encoded.at(ids[i]));

      LossParts parts = model.loss_and_gradient(batch, weights);
      const double total = total_loss(parts, weights);
      if (!std::isfinite(total)) {
        throw RuntimeError("train: non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batches + 1));
      }
      clip_gradients(model.parameters(), cfg.grad_clip_norm);
      opt.step();

      stats.loss_total += total;
      stats.loss_emotion += parts.emotion;
      stats.loss_gender += parts.gender;
      stats.loss_speaker += parts.speaker;
      ++batches;
    }
    if (batches == 0) throw ValidationError("train: no usable batch (undersample too small)");
    stats.loss_total /= batches;
    stats.loss_emotion /= batches;
    stats.loss_gender /= batches;
    stats.loss_speaker /= batches;

    PredictOutcome dev_pred = predict(model, dev_labeled, cfg, enc, cache);
    if (!dev_pred.failures.empty()) {
      throw RuntimeError("train: dev encoding failed for " + dev_pred.failures.front());
    }
    EvaluationReport rep = evaluate(dev_pred.predictions, dev_labeled);
    BalancedCccResult bal = balanced_ccc(dev_pred.predictions, dev_labeled, trials);
    stats.ccc_arousal = rep.ccc_arousal;
    stats.ccc_valence = rep.ccc_valence;
    stats.ccc_dominance = rep.ccc_dominance;
    stats.ccc_average = rep.ccc_average;
    stats.balanced_mean = bal.mean;
    stats.balanced_std = bal.stddev;
    result.history.push_back(stats);
    if (progress) progress(stats);

    if (bal.mean > best) {
      best = bal.mean;
      result.best_epoch = epoch;
      result.best_score = bal.mean;
      rep.balanced_ccc_mean = bal.mean;
      rep.balanced_ccc_std = bal.stddev;
      rep.balanced_per_trial = bal.per_trial;
      rep.k = cfg.k;
      rep.n = cfg.n;
      rep.seed = cfg.seed;
      rep.policy = cfg.policy.to_string();
      result.best_report = rep;
      model.save_checkpoint(checkpoint_path, cfg_hash);
    }
  }

  write_text_file(history_path, history_to_csv(result.history));
  return result;
}

}  // namespace serattr

#endif  // SERATTR_TRAINING_HPP_

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

#ifndef SERATTR_ENCODERS_HPP_
#define SERATTR_ENCODERS_HPP_

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "serattr/rng.hpp"
#include "serattr/types.hpp"

namespace serattr {

/** Frame sequence from a speech encoder. `layer_stack` is non-empty exactly
 *  when the encoder exposes intermediate layers; `frames` is the last-layer
 *  output either way. Rows are frames, columns dimensions. */
struct SpeechEncoding {
  std::vector<Eigen::MatrixXd> layer_stack;
  Eigen::MatrixXd frames;
  bool frozen = true;

  int frame_count() const { return static_cast<int>(frames.rows()); }
  int dim() const { return static_cast<int>(frames.cols()); }
  int layers() const { return static_cast<int>(layer_stack.size()); }
};

struct TextEncoding {
  Eigen::VectorXd vector;
  bool frozen = true;
};

struct SpeakerEncoding {
  Eigen::VectorXd vector;
  bool frozen = true;
};

/** Adapter interfaces. Real foundation-model encoders plug in behind these;
 *  the toy adapters below are deterministic stand-ins for desk-scale runs. */
class SpeechEncoder {
 public:
  virtual ~SpeechEncoder() = default;
  virtual SpeechEncoding encode(const std::string& audio_ref, double max_duration_s) const = 0;
  virtual std::string id() const = 0;
  virtual int dim() const = 0;
  virtual int layers() const = 0;  // 0 when only the last layer is exposed
};

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual TextEncoding encode(const std::string& transcript) const = 0;
  virtual std::string id() const = 0;
  virtual int dim() const = 0;
};

class SpeakerEncoder {
 public:
  virtual ~SpeakerEncoder() = default;
  virtual SpeakerEncoding encode(const std::string& audio_ref) const = 0;
  virtual std::string id() const = 0;
  virtual int dim() const = 0;
};

// ---------------------------------------------------------------------------
// Toy world: synthetic audio refs carry their own latent content, so every
// toy encoding is a pure function of (audio_ref, adapter constants).
// ---------------------------------------------------------------------------

/** Latent content of a synthetic utterance, serialized into its audio_ref. */
struct ToyLatents {
  Attributes attrs;
  int speaker = 0;
  double duration_s = 0.0;
  double warp = 0.0;  // cubic warp strength of the feature map, in [0,1]
};

inline std::string make_toy_ref(const ToyLatents& l) {
  std::ostringstream ss;
  ss << "toy://a=" << format_double(l.attrs.arousal) << ";v=" << format_double(l.attrs.valence)
     << ";d=" << format_double(l.attrs.dominance) << ";spk=" << l.speaker
     << ";dur=" << format_double(l.duration_s);
  if (l.warp != 0.0) ss << ";warp=" << format_double(l.warp);
  return ss.str();
}

inline bool is_toy_ref(const std::string& ref) { return ref.rfind("toy://", 0) == 0; }

inline ToyLatents parse_toy_ref(const std::string& ref) {
  if (!is_toy_ref(ref)) {
    throw RuntimeError("toy adapter: undecodable audio ref \"" + ref + "\"");
  }
  ToyLatents l;
  std::string_view body(ref);
  body.remove_prefix(6);
  size_t start = 0;
  while (start <= body.size()) {
    size_t end = body.find(';', start);
    if (end == std::string_view::npos) end = body.size();
    std::string_view item = body.substr(start, end - start);
    size_t eq = item.find('=');
    if (eq == std::string_view::npos) throw RuntimeError("toy adapter: malformed ref \"" + ref + "\"");
    std::string_view key = item.substr(0, eq);
    std::string_view val = item.substr(eq + 1);
    if (key == "spk") {
      auto inum = try_parse_int64(val);
      if (!inum) throw RuntimeError("toy adapter: malformed ref \"" + ref + "\"");
      l.speaker = static_cast<int>(*inum);
    } else {
      auto parsed = try_parse_double(val);
      if (!parsed) throw RuntimeError("toy adapter: malformed ref \"" + ref + "\"");
      double num = *parsed;
      if (key == "a") l.attrs.arousal = num;
      else if (key == "v") l.attrs.valence = num;
      else if (key == "d") l.attrs.dominance = num;
      else if (key == "dur") l.duration_s = num;
      else if (key == "warp") l.warp = num;
      else throw RuntimeError("toy adapter: unknown ref key \"" + std::string(key) + "\"");
    }
    if (end == body.size()) break;
    start = end + 1;
  }
  return l;
}

// Synthetic speakers alternate gender by index; generator and adapters share
// this rule so gender-bearing feature directions line up with the labels.
inline Gender toy_speaker_gender(int speaker) {
  return speaker % 2 == 0 ? Gender::kFemale : Gender::kMale;
}

// Per-speaker vocal register, a second voice factor independent of gender.
// The toy frames carry gender only as the register x brightness product
// (see ToySpeechEncoder::speaker_component), so neither direction alone
// correlates with gender and a gender label supervises structure that
// attribute-regression gradients are poor at discovering on their own.
inline double toy_speaker_register(int speaker) {
  Rng rng(mix_seed(mix_seed_tag(0x5e7a, "register"), static_cast<uint64_t>(speaker)));
  return rng.below(2) == 0 ? 1.0 : -1.0;
}

namespace detail {

inline Eigen::VectorXd hash_unit_vector(uint64_t seed, int dim) {
  Rng rng(seed);
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = rng.normal();
  double norm = v.norm();
  if (norm == 0.0) v[0] = 1.0;
  else v /= norm;
  return v;
}

inline Eigen::VectorXd hash_gaussian_vector(uint64_t seed, int dim) {
  Rng rng(seed);
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = rng.normal();
  return v;
}

// Odd, monotone warp on [-1,1]: identity at warp=0, cubic at warp=1.
inline double warp_signal(double x, double warp) {
  return (1.0 - warp) * x + warp * x * x * x;
}

}  // namespace detail

/** Deterministic multi/single-layer speech encoder over toy refs.
 *
 *  Frames are a fixed linear map of the warped, normalized attributes plus a
 *  speaker/gender component and per-frame noise. Attribute gains differ per
 *  preset; valence is the weakest speech channel, matching the usual
 *  modality gap that text embeddings close. */
class ToySpeechEncoder : public SpeechEncoder {
 public:
  struct Params {
    uint64_t seed = 0x7a115e;
    int dim = 24;
    int num_layers = 4;  // 0: single-layer encoder (no stack)
    double fps = 4.0;
    Attributes attr_gains{1.0, 0.35, 0.9};
    double speaker_gain = 0.4;
    double gender_gain = 1.0;  // weight of the register / brightness factor pair
    double noise = 0.5;
    std::string name = "toy-wavlm";
  };

  explicit ToySpeechEncoder(Params p) : p_(std::move(p)) {
    attr_dirs_.resize(kAttributeCount);
    for (int a = 0; a < kAttributeCount; ++a) {
      attr_dirs_[a] = detail::hash_unit_vector(mix_seed_tag(p_.seed, "attr-dir") + a, p_.dim);
    }
    register_dir_ = detail::hash_unit_vector(mix_seed_tag(p_.seed, "register-dir"), p_.dim);
    brightness_dir_ = detail::hash_unit_vector(mix_seed_tag(p_.seed, "brightness-dir"), p_.dim);
    layer_gains_.resize(std::max(1, p_.num_layers));
    const int L = static_cast<int>(layer_gains_.size());
    for (int l = 0; l < L; ++l) {
      layer_gains_[l] = 0.5 + 0.5 * std::sin(M_PI * (l + 1) / (L + 1));
    }
  }

  SpeechEncoding encode(const std::string& audio_ref, double max_duration_s) const override {
    ToyLatents lat = parse_toy_ref(audio_ref);
    if (lat.duration_s <= 0.0) {
      throw RuntimeError("toy adapter: zero-length input \"" + audio_ref + "\"");
    }
    const double dur = std::min(lat.duration_s, max_duration_s);
    const int frames = std::max(1, static_cast<int>(std::floor(dur * p_.fps)));

    Eigen::VectorXd signal = Eigen::VectorXd::Zero(p_.dim);
    for (int a = 0; a < kAttributeCount; ++a) {
      const double x = detail::warp_signal((lat.attrs[a] - 4.0) / 3.0, lat.warp);
      signal += p_.attr_gains[a] * x * attr_dirs_[a];
    }
    signal += p_.speaker_gain * speaker_component(lat.speaker);

    const uint64_t ref_hash = fnv1a64(audio_ref);
    SpeechEncoding enc;
    const int L = p_.num_layers;
    if (L > 0) {
      enc.layer_stack.reserve(L);
      for (int l = 0; l < L; ++l) {
        enc.layer_stack.push_back(render_frames(signal, layer_gains_[l], ref_hash, l, frames));
      }
      enc.frames = enc.layer_stack.back();
    } else {
      enc.frames = render_frames(signal, 1.0, ref_hash, 0, frames);
    }
    enc.frozen = true;
    return enc;
  }

  std::string id() const override {
    std::ostringstream ss;
    ss << p_.name << "/v1?dim=" << p_.dim << "&layers=" << p_.num_layers
       << "&seed=" << hex_u64(p_.seed);
    return ss.str();
  }

  int dim() const override { return p_.dim; }
  int layers() const override { return p_.num_layers; }
  const Params& params() const { return p_; }

 private:
  // Gender never appears as its own direction: the register factor is an
  // independent coin per speaker and brightness = register * gender, so only
  // the product of the two planted directions recovers gender.
  Eigen::VectorXd speaker_component(int speaker) const {
    Eigen::VectorXd c =
        detail::hash_unit_vector(mix_seed(mix_seed_tag(p_.seed, "speaker"),
                                          static_cast<uint64_t>(speaker)),
                                 p_.dim);
    const double reg = toy_speaker_register(speaker);
    const double sign = toy_speaker_gender(speaker) == Gender::kFemale ? 1.0 : -1.0;
    c += p_.gender_gain * (reg * register_dir_ + reg * sign * brightness_dir_);
    return c / c.norm();
  }

  Eigen::MatrixXd render_frames(const Eigen::VectorXd& signal, double gain, uint64_t ref_hash,
                                int layer, int frames) const {
    Eigen::MatrixXd m(frames, p_.dim);
    const double sigma = p_.noise / std::sqrt(static_cast<double>(p_.dim));
    for (int t = 0; t < frames; ++t) {
      Rng rng(mix_seed(mix_seed_tag(p_.seed, "frame"), ref_hash, static_cast<uint64_t>(layer),
                       static_cast<uint64_t>(t)));
      for (int dI = 0; dI < p_.dim; ++dI) {
        m(t, dI) = gain * signal[dI] + sigma * rng.normal();
      }
    }
    return m;
  }

  Params p_;
  std::vector<Eigen::VectorXd> attr_dirs_;
  Eigen::VectorXd register_dir_;
  Eigen::VectorXd brightness_dir_;
  std::vector<double> layer_gains_;
};

/** Hashed bag-of-tokens text embedding; the empty transcript maps to the
 *  designated null embedding (all zeros). */
class ToyTextEncoder : public TextEncoder {
 public:
  struct Params {
    uint64_t seed = 0x7e47;
    int dim = 16;
    std::string name = "toy-text";
  };

  explicit ToyTextEncoder(Params p) : p_(std::move(p)) {}

  TextEncoding encode(const std::string& transcript) const override {
    TextEncoding enc;
    enc.vector = Eigen::VectorXd::Zero(p_.dim);
    size_t tokens = 0;
    size_t start = 0;
    while (start < transcript.size()) {
      size_t end = transcript.find(' ', start);
      if (end == std::string::npos) end = transcript.size();
      if (end > start) {
        std::string_view tok(transcript.data() + start, end - start);
        enc.vector +=
            detail::hash_gaussian_vector(mix_seed(mix_seed_tag(p_.seed, "token"), fnv1a64(tok)),
                                         p_.dim) /
            std::sqrt(static_cast<double>(p_.dim));
        ++tokens;
      }
      start = end + 1;
    }
    if (tokens > 0) enc.vector /= static_cast<double>(tokens);
    return enc;
  }

  std::string id() const override {
    return p_.name + "/v1?dim=" + std::to_string(p_.dim) + "&seed=" + hex_u64(p_.seed);
  }
  int dim() const override { return p_.dim; }

 private:
  Params p_;
};

/** Per-speaker centroid plus small utterance noise, unit-normalized. */
class ToySpeakerEncoder : public SpeakerEncoder {
 public:
  struct Params {
    uint64_t seed = 0x5bea4e4;
    int dim = 64;
    double noise = 0.15;
    std::string name = "toy-speaker";
  };

  explicit ToySpeakerEncoder(Params p) : p_(std::move(p)) {}

  SpeakerEncoding encode(const std::string& audio_ref) const override {
    ToyLatents lat = parse_toy_ref(audio_ref);
    Eigen::VectorXd c = detail::hash_unit_vector(
        mix_seed(mix_seed_tag(p_.seed, "centroid"), static_cast<uint64_t>(lat.speaker)), p_.dim);
    Eigen::VectorXd n =
        detail::hash_unit_vector(mix_seed(mix_seed_tag(p_.seed, "utt-noise"), fnv1a64(audio_ref)),
                                 p_.dim);
    SpeakerEncoding enc;
    enc.vector = c + p_.noise * n;
    enc.vector /= enc.vector.norm();
    return enc;
  }

  std::string id() const override {
    return p_.name + "/v1?dim=" + std::to_string(p_.dim) + "&seed=" + hex_u64(p_.seed);
  }
  int dim() const override { return p_.dim; }

 private:
  Params p_;
};

// ---------------------------------------------------------------------------
// Adapter registry. Presets carry fixed seeds: an adapter is "pretrained",
// its output never depends on the run seed.
// ---------------------------------------------------------------------------

inline std::shared_ptr<SpeechEncoder> make_speech_encoder(const std::string& name) {
  if (name == "toy-wavlm") {
    return std::make_shared<ToySpeechEncoder>(ToySpeechEncoder::Params{});
  }
  if (name == "toy-whisper") {
    ToySpeechEncoder::Params p;
    p.seed = 0x3b15be6;
    p.dim = 20;
    p.num_layers = 0;
    p.fps = 3.0;
    p.attr_gains = Attributes{0.9, 0.3, 0.85};
    p.name = "toy-whisper";
    return std::make_shared<ToySpeechEncoder>(p);
  }
  throw ValidationError("unknown speech adapter \"" + name +
                        "\" (available: toy-wavlm, toy-whisper)");
}

inline std::shared_ptr<TextEncoder> make_text_encoder(const std::string& name) {
  if (name == "toy-text") return std::make_shared<ToyTextEncoder>(ToyTextEncoder::Params{});
  throw ValidationError("unknown text adapter \"" + name + "\" (available: toy-text)");
}

inline std::shared_ptr<SpeakerEncoder> make_speaker_encoder(const std::string& name) {
  if (name == "toy-speaker") {
    return std::make_shared<ToySpeakerEncoder>(ToySpeakerEncoder::Params{});
  }
  throw ValidationError("unknown speaker adapter \"" + name + "\" (available: toy-speaker)");
}

// ---------------------------------------------------------------------------
// Synthetic corpus generator.
// ---------------------------------------------------------------------------

/** Controls for the synthetic corpus. Defaults give the standard desk
 *  corpus: 8 balanced primary classes, attributes uniform in [1,7], linear
 *  feature map, valence tokens in the transcripts. */
struct SynthSpec {
  uint64_t seed = 1;
  std::array<int, kEmotionClassCount> train_counts{200, 200, 200, 200, 200, 200, 200, 200, 0, 0};
  std::array<int, kEmotionClassCount> dev_counts{50, 50, 50, 50, 50, 50, 50, 50, 0, 0};
  int n_speakers = 24;
  double gender_arousal_shift = 0.0;   // rating-only arousal offset: female +, male -
  double majority_center_spread = 0.0; // >0: Neutral train ratings collapse to 4 +/- spread
  double warp = 0.0;                   // nonlinearity of the toy feature map
  bool text_valence_tokens = true;
  int text_token_count = 12;
  double min_duration_s = 3.0;
  double max_duration_s = 12.0;
};

struct SynthCorpus {
  std::vector<UtteranceRecord> train;
  std::vector<UtteranceRecord> dev;
};

namespace detail {

inline UtteranceRecord synth_record(const SynthSpec& spec, Split split, EmotionClass cls, int i) {
  Rng rng(mix_seed(mix_seed_tag(spec.seed, "utt"), static_cast<uint64_t>(split),
                   static_cast<uint64_t>(cls), static_cast<uint64_t>(i)));

  Attributes attrs;
  for (int a = 0; a < kAttributeCount; ++a) {
    attrs[a] = kRatingMin + (kRatingMax - kRatingMin) * rng.uniform();
  }
  const int speaker = static_cast<int>(rng.below(spec.n_speakers));
  const Gender gender = toy_speaker_gender(speaker);
  // Both knobs distort the observed rating only; the audio latents keep the
  // drawn attributes. Collapse: majority-class train items are rated near the
  // scale center no matter what the audio carries, so a model trained on the
  // whole set inherits that bias. Shift: gender carries real rating
  // information, recoverable from the speaker component in the frames.
  Attributes ratings = attrs;
  if (spec.majority_center_spread > 0.0 && cls == EmotionClass::kNeutral &&
      split == Split::kTrain) {
    for (int a = 0; a < kAttributeCount; ++a) {
      ratings[a] = 4.0 + spec.majority_center_spread * (2.0 * rng.uniform() - 1.0);
    }
  }
  if (spec.gender_arousal_shift != 0.0) {
    ratings.arousal +=
        gender == Gender::kFemale ? spec.gender_arousal_shift : -spec.gender_arousal_shift;
    ratings.arousal = std::clamp(ratings.arousal, kRatingMin, kRatingMax);
  }
  const double dur = rng.uniform(spec.min_duration_s, spec.max_duration_s);

  UtteranceRecord rec;
  std::ostringstream id;
  id << "synth-" << to_string(split) << '-' << to_string(cls) << '-';
  id.fill('0');
  id.width(5);
  id << i;
  rec.utterance_id = id.str();
  rec.audio_ref = make_toy_ref(ToyLatents{attrs, speaker, dur, spec.warp});
  if (spec.text_valence_tokens) {
    const int n = spec.text_token_count;
    const int k = std::clamp(
        static_cast<int>(std::lround((attrs.valence - kRatingMin) / (kRatingMax - kRatingMin) * n)),
        0, n);
    std::string t;
    for (int j = 0; j < n; ++j) {
      if (j) t += ' ';
      t += j < k ? "bright" : "flat";
    }
    rec.transcript = t;
  }
  rec.emotion = cls;
  rec.labels = ratings;
  rec.gender = gender;
  {
    std::ostringstream sp;
    sp << "spk";
    sp.fill('0');
    sp.width(3);
    sp << speaker;
    rec.speaker_id = sp.str();
  }
  rec.split = split;
  return rec;
}

}  // namespace detail

inline SynthCorpus generate_synthetic_corpus(const SynthSpec& spec) {
  SynthCorpus corpus;
  for (int c = 0; c < kEmotionClassCount; ++c) {
    auto cls = static_cast<EmotionClass>(c);
    for (int i = 0; i < spec.train_counts[c]; ++i) {
      corpus.train.push_back(detail::synth_record(spec, Split::kTrain, cls, i));
    }
    for (int i = 0; i < spec.dev_counts[c]; ++i) {
      corpus.dev.push_back(detail::synth_record(spec, Split::kDev, cls, i));
    }
  }
  return corpus;
}

}  // namespace serattr

#endif  // SERATTR_ENCODERS_HPP_

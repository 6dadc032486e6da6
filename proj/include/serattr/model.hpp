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

#ifndef SERATTR_MODEL_HPP_
#define SERATTR_MODEL_HPP_

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "serattr/encoders.hpp"
#include "serattr/rng.hpp"
#include "serattr/types.hpp"

namespace serattr {

/** Min-max mapping between the rating scale and the sigmoid range.
 *  Bounds come from the assembled training labels, not hard-coded [1,7]. */
class TargetNormalizer {
 public:
  TargetNormalizer() {
    min_.fill(kRatingMin);
    max_.fill(kRatingMax);
  }

  TargetNormalizer(const std::array<double, kAttributeCount>& mins,
                   const std::array<double, kAttributeCount>& maxs)
      : min_(mins), max_(maxs) {
    for (int a = 0; a < kAttributeCount; ++a) {
      if (!(min_[a] < max_[a])) {
        throw ValidationError("TargetNormalizer: attribute " + std::string(kAttributeNames[a]) +
                              " has min >= max");
      }
    }
  }

  static TargetNormalizer fit(const std::vector<UtteranceRecord>& train) {
    std::array<double, kAttributeCount> mins, maxs;
    mins.fill(std::numeric_limits<double>::infinity());
    maxs.fill(-std::numeric_limits<double>::infinity());
    size_t labeled = 0;
    for (const auto& r : train) {
      if (!r.labels) continue;
      ++labeled;
      for (int a = 0; a < kAttributeCount; ++a) {
        mins[a] = std::min(mins[a], (*r.labels)[a]);
        maxs[a] = std::max(maxs[a], (*r.labels)[a]);
      }
    }
    if (labeled == 0) throw ValidationError("TargetNormalizer: no labeled training records");
    return TargetNormalizer(mins, maxs);
  }

  Attributes normalize(const Attributes& y) const {
    Attributes out;
    for (int a = 0; a < kAttributeCount; ++a) out[a] = (y[a] - min_[a]) / (max_[a] - min_[a]);
    return out;
  }

  // x in [0,1] mapped back to the rating range: x * (max - min) + min.
  Attributes denormalize(const Attributes& x) const {
    Attributes out;
    for (int a = 0; a < kAttributeCount; ++a) out[a] = x[a] * (max_[a] - min_[a]) + min_[a];
    return out;
  }

  double min_of(int a) const { return min_[a]; }
  double max_of(int a) const { return max_[a]; }

 private:
  std::array<double, kAttributeCount> min_{};
  std::array<double, kAttributeCount> max_{};
};

struct LossWeights {
  double alpha = 1.0;
  double beta = 0.1;

  void validate() const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha) || !(beta >= 0.0) || !std::isfinite(beta)) {
      throw ValidationError("loss weights must be finite and non-negative");
    }
  }
};

struct LossParts {
  double emotion = 0.0;
  double gender = 0.0;
  double speaker = 0.0;
  std::array<double, kAttributeCount> per_attr_ccc{};
};

// L = L_emotion + alpha * L_gender + beta * L_speaker
inline double total_loss(const LossParts& parts, const LossWeights& w) {
  return parts.emotion + w.alpha * parts.gender + w.beta * parts.speaker;
}

// ---------------------------------------------------------------------------
// Loss primitives (free functions; the model composes them).
// ---------------------------------------------------------------------------

/** Batch CCC with population moments; optionally the gradient of (1 - ccc)
 *  w.r.t. the predictions. The same centered-moment route backs both value
 *  and gradient so finite differences agree. */
inline double batch_ccc(const Eigen::VectorXd& pred, const Eigen::VectorXd& target,
                        Eigen::VectorXd* grad_loss_pred = nullptr) {
  const Eigen::Index n = pred.size();
  if (n != target.size()) throw ValidationError("ccc_loss: length mismatch");
  if (n < 2) throw ValidationError("ccc_loss: batch must have at least 2 samples");
  const double inv_n = 1.0 / static_cast<double>(n);

  const double mean_x = pred.mean();
  const double mean_y = target.mean();
  const Eigen::VectorXd cx = pred.array() - mean_x;
  const Eigen::VectorXd cy = target.array() - mean_y;
  const double var_x = cx.squaredNorm() * inv_n;
  const double var_y = cy.squaredNorm() * inv_n;
  const double cov = cx.dot(cy) * inv_n;
  const double gap = mean_x - mean_y;

  const double num = 2.0 * cov;
  const double den = var_x + var_y + gap * gap;
  if (den == 0.0) {
    throw RuntimeError("ccc_loss: degenerate batch (zero variance and mean gap)");
  }
  const double c = num / den;

  if (grad_loss_pred != nullptr) {
    // d(ccc)/dx_i = [2 cy_i/N * den - num * (2 cx_i + 2 gap)/N] / den^2;
    // the loss is 1 - ccc, so the gradient flips sign.
    grad_loss_pred->resize(n);
    const double inv_den2 = 1.0 / (den * den);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double dnum = 2.0 * cy[i] * inv_n;
      const double dden = (2.0 * cx[i] + 2.0 * gap) * inv_n;
      (*grad_loss_pred)[i] = -(dnum * den - num * dden) * inv_den2;
    }
  }
  return c;
}

/** Mean masked softmax cross-entropy. Labels < 0 are masked out; an
 *  all-masked batch contributes 0 (and a zero gradient). Logits are B x K. */
inline double cross_entropy_masked(const Eigen::MatrixXd& logits, const std::vector<int>& labels,
                                   Eigen::MatrixXd* grad_logits = nullptr) {
  const Eigen::Index b_count = logits.rows();
  if (static_cast<size_t>(b_count) != labels.size()) {
    throw ValidationError("cross_entropy: batch size mismatch");
  }
  if (grad_logits != nullptr) *grad_logits = Eigen::MatrixXd::Zero(logits.rows(), logits.cols());

  int unmasked = 0;
  for (int l : labels) {
    if (l >= 0) ++unmasked;
  }
  if (unmasked == 0) return 0.0;

  double loss = 0.0;
  for (Eigen::Index b = 0; b < b_count; ++b) {
    const int y = labels[b];
    if (y < 0) continue;
    if (y >= logits.cols()) throw ValidationError("cross_entropy: label outside vocabulary");
    const Eigen::VectorXd row = logits.row(b);
    const double m = row.maxCoeff();
    const Eigen::VectorXd ex = (row.array() - m).exp();
    const double z = ex.sum();
    loss += std::log(z) + m - row[y];
    if (grad_logits != nullptr) {
      grad_logits->row(b) = (ex / z).transpose() / static_cast<double>(unmasked);
      (*grad_logits)(b, y) -= 1.0 / static_cast<double>(unmasked);
    }
  }
  return loss / static_cast<double>(unmasked);
}

struct AamParams {
  double margin = 0.2;
  double scale = 30.0;
};

/** Additive-angular-margin softmax cross-entropy on cosine logits.
 *
 *  Class weight rows are unit-normalized before scoring; the target class
 *  logit is scale * cos(theta + margin), all others scale * cos(theta).
 *  With margin 0 and scale 1 this is plain softmax cross-entropy on cosine
 *  similarities. Gradients flow through both normalizations.
 *
 *  embeddings: E x B, class_weights: C x E, labels: B (< 0 masked).
 */
inline double aam_softmax_loss(const Eigen::MatrixXd& embeddings,
                               const Eigen::MatrixXd& class_weights,
                               const std::vector<int>& labels, const AamParams& p,
                               Eigen::MatrixXd* grad_embeddings = nullptr,
                               Eigen::MatrixXd* grad_class_weights = nullptr) {
  const Eigen::Index b_count = embeddings.cols();
  const Eigen::Index n_classes = class_weights.rows();
  if (static_cast<size_t>(b_count) != labels.size()) {
    throw ValidationError("speaker_loss: batch size mismatch");
  }
  if (grad_embeddings != nullptr) {
    *grad_embeddings = Eigen::MatrixXd::Zero(embeddings.rows(), embeddings.cols());
  }
  if (grad_class_weights != nullptr) {
    *grad_class_weights = Eigen::MatrixXd::Zero(class_weights.rows(), class_weights.cols());
  }

  int unmasked = 0;
  for (int l : labels) {
    if (l >= 0) {
      if (l >= n_classes) throw ValidationError("speaker_loss: label outside vocabulary");
      ++unmasked;
    }
  }
  if (unmasked == 0) return 0.0;
  const double inv_m = 1.0 / static_cast<double>(unmasked);

  const double cos_m = std::cos(p.margin);
  const double sin_m = std::sin(p.margin);

  // Unit-normalized class weights, kept alongside the raw norms for the
  // gradient through the normalization.
  Eigen::VectorXd w_norms(n_classes);
  Eigen::MatrixXd w_hat(n_classes, class_weights.cols());
  for (Eigen::Index c = 0; c < n_classes; ++c) {
    w_norms[c] = class_weights.row(c).norm();
    if (w_norms[c] == 0.0) throw RuntimeError("speaker_loss: zero-norm class weight row");
    w_hat.row(c) = class_weights.row(c) / w_norms[c];
  }

  double loss = 0.0;
  for (Eigen::Index b = 0; b < b_count; ++b) {
    const int y = labels[b];
    if (y < 0) continue;
    const double e_norm = embeddings.col(b).norm();
    if (e_norm == 0.0) throw RuntimeError("speaker_loss: zero-norm embedding");
    const Eigen::VectorXd e_hat = embeddings.col(b) / e_norm;

    Eigen::VectorXd cosines = w_hat * e_hat;
    for (Eigen::Index c = 0; c < n_classes; ++c) {
      cosines[c] = std::clamp(cosines[c], -1.0, 1.0);
    }

    const double cos_y = cosines[y];
    const double sin_y = std::sqrt(std::max(0.0, 1.0 - cos_y * cos_y));
    const double psi = cos_y * cos_m - sin_y * sin_m;  // cos(theta_y + margin)

    Eigen::VectorXd logits = p.scale * cosines;
    logits[y] = p.scale * psi;

    const double mx = logits.maxCoeff();
    const Eigen::VectorXd ex = (logits.array() - mx).exp();
    const double z = ex.sum();
    loss += (std::log(z) + mx - logits[y]) * inv_m;

    if (grad_embeddings == nullptr && grad_class_weights == nullptr) continue;

    Eigen::VectorXd dlogits = (ex / z) * inv_m;
    dlogits[y] -= inv_m;

    // d psi / d cos = cos_m + sin_m * cos / sin, guarded near |cos| = 1.
    const double dpsi = cos_m + sin_m * cos_y / std::max(sin_y, 1e-9);
    Eigen::VectorXd dcos = p.scale * dlogits;
    dcos[y] *= dpsi;

    // cos_c = e_hat . w_hat_c;  d cos / d e = (w_hat_c - cos_c e_hat)/|e|.
    if (grad_embeddings != nullptr) {
      Eigen::VectorXd de = Eigen::VectorXd::Zero(embeddings.rows());
      for (Eigen::Index c = 0; c < n_classes; ++c) {
        if (dcos[c] == 0.0) continue;
        de += dcos[c] * (w_hat.row(c).transpose() - cosines[c] * e_hat) / e_norm;
      }
      grad_embeddings->col(b) += de;
    }
    if (grad_class_weights != nullptr) {
      for (Eigen::Index c = 0; c < n_classes; ++c) {
        if (dcos[c] == 0.0) continue;
        grad_class_weights->row(c) +=
            dcos[c] * (e_hat.transpose() - cosines[c] * w_hat.row(c)) / w_norms[c];
      }
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// The trainable downstream model.
// ---------------------------------------------------------------------------

struct ModelConfig {
  int speech_dim = 0;
  int speech_layers = 0;      // 0: encoder exposes only the last layer
  int text_dim = 0;           // 0: text modality off
  int speaker_embed_dim = 0;  // 0: speaker embedding not fused
  int filter_size = 256;      // point-wise conv output width and head hidden width
  bool predict_gender = false;
  int n_speakers = 0;  // > 0: speaker-prediction head active
  int speaker_head_dim = 32;
  double aam_margin = 0.2;
  double aam_scale = 30.0;

  bool use_text() const { return text_dim > 0; }
  bool use_speaker_embedding() const { return speaker_embed_dim > 0; }
  bool predict_speaker() const { return n_speakers > 0; }

  // Fused vector: [speech projection; text projection?; speaker embedding?].
  int fused_dim() const {
    return filter_size + (use_text() ? filter_size : 0) + speaker_embed_dim;
  }

  void validate() const {
    if (speech_dim <= 0) throw ValidationError("model: speech_dim must be positive");
    if (filter_size <= 0) throw ValidationError("model: filter_size must be positive");
    if (use_speaker_embedding() && predict_speaker()) {
      throw ValidationError(
          "model: speaker embedding in fusion and speaker prediction are mutually exclusive");
    }
    if (predict_speaker() && speaker_head_dim <= 0) {
      throw ValidationError("model: speaker_head_dim must be positive");
    }
  }

  nlohmann::json to_json() const {
    return {{"speech_dim", speech_dim},
            {"speech_layers", speech_layers},
            {"text_dim", text_dim},
            {"speaker_embed_dim", speaker_embed_dim},
            {"filter_size", filter_size},
            {"predict_gender", predict_gender},
            {"n_speakers", n_speakers},
            {"speaker_head_dim", speaker_head_dim},
            {"aam_margin", aam_margin},
            {"aam_scale", aam_scale}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.speech_dim = j.at("speech_dim");
    c.speech_layers = j.at("speech_layers");
    c.text_dim = j.at("text_dim");
    c.speaker_embed_dim = j.at("speaker_embed_dim");
    c.filter_size = j.at("filter_size");
    c.predict_gender = j.at("predict_gender");
    c.n_speakers = j.at("n_speakers");
    c.speaker_head_dim = j.at("speaker_head_dim");
    c.aam_margin = j.at("aam_margin");
    c.aam_scale = j.at("aam_scale");
    return c;
  }
};

struct Parameter {
  std::string name;
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;

  Parameter() = default;
  Parameter(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)),
        value(Eigen::MatrixXd::Zero(rows, cols)),
        grad(Eigen::MatrixXd::Zero(rows, cols)) {}
};

/** One encoded utterance as the model consumes it. */
struct EncodedSample {
  SpeechEncoding speech;
  std::optional<Eigen::VectorXd> text;
  std::optional<Eigen::VectorXd> speaker;  // fused speaker embedding
  int gender_label = -1;                   // 0 female / 1 male, -1 masked
  int speaker_label = -1;                  // vocabulary index, -1 masked
  Attributes targets_norm;                 // targets in [0,1]
  bool has_targets = false;
};

class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    const int F = cfg_.filter_size;
    const int H = cfg_.filter_size;  // head hidden width = filter size
    const int Df = cfg_.fused_dim();

    if (cfg_.speech_layers > 0) add(&pool_logits_, "pool_logits", cfg_.speech_layers, 1);
    add(&speech_w_, "speech_conv_w", F, cfg_.speech_dim);
    add(&speech_b_, "speech_conv_b", F, 1);
    if (cfg_.use_text()) {
      add(&text_w_, "text_proj_w", F, cfg_.text_dim);
      add(&text_b_, "text_proj_b", F, 1);
    }
    for (int a = 0; a < kAttributeCount; ++a) {
      const std::string base = std::string(kAttributeNames[a]);
      add(&attr_w1_[a], base + "_w1", H, Df);
      add(&attr_b1_[a], base + "_b1", H, 1);
      add(&attr_w2_[a], base + "_w2", 1, H);
      add(&attr_b2_[a], base + "_b2", 1, 1);
    }
    if (cfg_.predict_gender) {
      add(&gender_w1_, "gender_w1", H, Df);
      add(&gender_b1_, "gender_b1", H, 1);
      add(&gender_w2_, "gender_w2", kKnownGenderCount, H);
      add(&gender_b2_, "gender_b2", kKnownGenderCount, 1);
    }
    if (cfg_.predict_speaker()) {
      add(&spk_w1_, "speaker_w1", H, Df);
      add(&spk_b1_, "speaker_b1", H, 1);
      add(&spk_w2_, "speaker_w2", cfg_.speaker_head_dim, H);
      add(&spk_b2_, "speaker_b2", cfg_.speaker_head_dim, 1);
      add(&aam_w_, "speaker_aam_w", cfg_.n_speakers, cfg_.speaker_head_dim);
    }
  }

  // params_ holds pointers into this object; relocation would dangle them.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = delete;
  Model& operator=(Model&&) = delete;

  /** Xavier-uniform weights, zero biases and pooling logits (zero logits
   *  give uniform layer weights), unit-gaussian AAM rows. */
  void init_parameters(uint64_t seed) {
    for (Parameter* p : params_) {
      Rng rng(mix_seed(mix_seed_tag(seed, "init"), fnv1a64(p->name)));
      const bool is_bias = p->value.cols() == 1 && p->name.find("_b") != std::string::npos;
      if (p == &pool_logits_ || is_bias) {
        p->value.setZero();
      } else if (p == &aam_w_) {
        for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = rng.normal();
      } else {
        const double s = std::sqrt(6.0 / static_cast<double>(p->value.rows() + p->value.cols()));
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
          p->value.data()[i] = rng.uniform(-s, s);
        }
      }
    }
  }

  const ModelConfig& config() const { return cfg_; }
  const std::vector<Parameter*>& parameters() const { return params_; }
  Parameter* parameter(const std::string& name) {
    for (Parameter* p : params_) {
      if (p->name == name) return p;
    }
    return nullptr;
  }

  void zero_grad() {
    for (Parameter* p : params_) p->grad.setZero();
  }

  Eigen::VectorXd layer_pool_weights() const {
    if (cfg_.speech_layers == 0) return Eigen::VectorXd::Ones(1);
    return softmax(pool_logits_.value.col(0));
  }

  TargetNormalizer& normalizer() { return normalizer_; }
  const TargetNormalizer& normalizer() const { return normalizer_; }
  std::vector<std::string>& speaker_vocab() { return speaker_vocab_; }
  const std::vector<std::string>& speaker_vocab() const { return speaker_vocab_; }

  struct Forward {
    // Per-sample caches needed by backward().
    std::vector<Eigen::MatrixXd> layer_means;  // L x Ds (or 1 x Ds) per sample
    Eigen::VectorXd pool_w;                    // softmax layer weights
    Eigen::MatrixXd pooled;                    // Ds x B pooled mean frames
    Eigen::MatrixXd fused;                     // Df x B
    std::array<Eigen::MatrixXd, kAttributeCount> attr_h;  // H x B
    Eigen::MatrixXd attr_out;                  // B x 3 sigmoid outputs
    Eigen::MatrixXd gender_h;                  // H x B
    Eigen::MatrixXd gender_logits;             // B x 2
    Eigen::MatrixXd spk_h;                     // H x B
    Eigen::MatrixXd spk_e;                     // E x B
  };

  Forward forward(const std::vector<EncodedSample>& batch) const {
    if (batch.empty()) throw ValidationError("forward: empty batch");
    const Eigen::Index b_count = static_cast<Eigen::Index>(batch.size());
    const int F = cfg_.filter_size;
    const int Df = cfg_.fused_dim();

    Forward fw;
    fw.pool_w = layer_pool_weights();
    fw.layer_means.reserve(batch.size());
    fw.pooled.resize(cfg_.speech_dim, b_count);
    fw.fused.resize(Df, b_count);

    for (Eigen::Index b = 0; b < b_count; ++b) {
      const EncodedSample& s = batch[b];
      fw.layer_means.push_back(layer_mean_frames(s.speech, b));
      const Eigen::MatrixXd& M = fw.layer_means.back();
      // Point-wise conv then temporal mean pooling: the conv is linear in
      // each frame, so pooling the mean frame is exact.
      fw.pooled.col(b) = M.transpose() * fw.pool_w;

      Eigen::VectorXd u = speech_w_.value * fw.pooled.col(b) + speech_b_.value.col(0);
      fw.fused.col(b).head(F) = u;
      int off = F;
      if (cfg_.use_text()) {
        if (!s.text || s.text->size() != cfg_.text_dim) {
          throw ValidationError("forward: text: dimension mismatch at batch index " +
                                std::to_string(b));
        }
        fw.fused.col(b).segment(off, F) = text_w_.value * (*s.text) + text_b_.value.col(0);
        off += F;
      }
      if (cfg_.use_speaker_embedding()) {
        if (!s.speaker || s.speaker->size() != cfg_.speaker_embed_dim) {
          throw ValidationError("forward: speaker: dimension mismatch at batch index " +
                                std::to_string(b));
        }
        fw.fused.col(b).segment(off, cfg_.speaker_embed_dim) = *s.speaker;
      }
    }

    fw.attr_out.resize(b_count, kAttributeCount);
    for (int a = 0; a < kAttributeCount; ++a) {
      fw.attr_h[a] =
          ((attr_w1_[a].value * fw.fused).colwise() + attr_b1_[a].value.col(0)).array().tanh();
      Eigen::RowVectorXd z =
          attr_w2_[a].value * fw.attr_h[a] + Eigen::RowVectorXd::Constant(b_count, attr_b2_[a].value(0, 0));
      fw.attr_out.col(a) = (1.0 / (1.0 + (-z.transpose().array()).exp())).matrix();
    }

    if (cfg_.predict_gender) {
      fw.gender_h =
          ((gender_w1_.value * fw.fused).colwise() + gender_b1_.value.col(0)).array().tanh();
      fw.gender_logits = ((gender_w2_.value * fw.gender_h).colwise() + gender_b2_.value.col(0))
                             .transpose();
    }
    if (cfg_.predict_speaker()) {
      fw.spk_h = ((spk_w1_.value * fw.fused).colwise() + spk_b1_.value.col(0)).array().tanh();
      fw.spk_e = (spk_w2_.value * fw.spk_h).colwise() + spk_b2_.value.col(0);
    }
    return fw;
  }

  /** Loss terms at the given weights. Requires targets on every sample. */
  LossParts compute_losses(const Forward& fw, const std::vector<EncodedSample>& batch,
                           const LossWeights& weights) const {
    return losses_impl(fw, batch, weights, nullptr);
  }

  /** Forward + losses + full backward pass. Gradients are written (not
   *  accumulated) into every parameter. Returns the loss parts. */
  LossParts loss_and_gradient(const std::vector<EncodedSample>& batch, const LossWeights& weights,
                              Forward* fw_out = nullptr) {
    Forward fw = forward(batch);
    zero_grad();
    Backward bw;
    LossParts parts = losses_impl(fw, batch, weights, &bw);
    backward(fw, batch, bw, weights);
    if (fw_out != nullptr) *fw_out = std::move(fw);
    return parts;
  }

  double loss_only(const std::vector<EncodedSample>& batch, const LossWeights& weights) const {
    Forward fw = forward(batch);
    return total_loss(compute_losses(fw, batch, weights), weights);
  }

  /** Denormalized [min,max]-scale predictions for one batch. */
  std::vector<Attributes> predict(const std::vector<EncodedSample>& batch) const {
    Forward fw = forward(batch);
    std::vector<Attributes> out(batch.size());
    for (size_t b = 0; b < batch.size(); ++b) {
      Attributes raw;
      for (int a = 0; a < kAttributeCount; ++a) raw[a] = fw.attr_out(static_cast<Eigen::Index>(b), a);
      out[b] = normalizer_.denormalize(raw);
    }
    return out;
  }

  // ---- checkpoint container ----

  static constexpr char kCheckpointMagic[9] = "SERACKP1";
  static constexpr int kCheckpointVersion = 1;

  void save_checkpoint(const std::string& path, uint64_t config_hash) const {
    nlohmann::json j;
    j["format"] = "serattr-checkpoint";
    j["version"] = kCheckpointVersion;
    j["config_hash"] = hex_u64(config_hash);
    j["model"] = cfg_.to_json();
    j["normalizer"] = {
        {"min", {normalizer_.min_of(0), normalizer_.min_of(1), normalizer_.min_of(2)}},
        {"max", {normalizer_.max_of(0), normalizer_.max_of(1), normalizer_.max_of(2)}}};
    j["speaker_vocab"] = speaker_vocab_;
    nlohmann::json params = nlohmann::json::object();
    for (const Parameter* p : params_) {
      std::vector<double> data(p->value.data(), p->value.data() + p->value.size());
      params[p->name] = {{"rows", p->value.rows()}, {"cols", p->value.cols()}, {"data", data}};
    }
    j["params"] = params;

    std::vector<uint8_t> blob = nlohmann::json::to_msgpack(j);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeError("checkpoint: cannot write " + path);
    out.write(kCheckpointMagic, 8);
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  }

  /** Loads a checkpoint. `expected_config_hash` (when set) must match the
   *  stored hash unless `force`. */
  static std::unique_ptr<Model> load_checkpoint(
      const std::string& path, std::optional<uint64_t> expected_config_hash = std::nullopt,
      bool force = false) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("checkpoint not found: " + path);
    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::string_view(magic, 8) != std::string_view(kCheckpointMagic, 8)) {
      throw ValidationError("checkpoint: bad magic in " + path);
    }
    std::vector<uint8_t> blob((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
    nlohmann::json j = nlohmann::json::from_msgpack(blob);
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw ValidationError("checkpoint: unsupported version");
    }
    if (expected_config_hash) {
      const std::string stored = j.at("config_hash");
      if (stored != hex_u64(*expected_config_hash) && !force) {
        throw ValidationError("checkpoint: config hash mismatch (stored " + stored +
                              ", expected " + hex_u64(*expected_config_hash) +
                              "); use force to override");
      }
    }

    auto m = std::make_unique<Model>(ModelConfig::from_json(j.at("model")));
    const auto& nj = j.at("normalizer");
    std::array<double, kAttributeCount> mins{nj.at("min")[0], nj.at("min")[1], nj.at("min")[2]};
    std::array<double, kAttributeCount> maxs{nj.at("max")[0], nj.at("max")[1], nj.at("max")[2]};
    m->normalizer_ = TargetNormalizer(mins, maxs);
    m->speaker_vocab_ = j.at("speaker_vocab").get<std::vector<std::string>>();
    for (Parameter* p : m->params_) {
      const auto& pj = j.at("params").at(p->name);
      const Eigen::Index rows = pj.at("rows"), cols = pj.at("cols");
      if (rows != p->value.rows() || cols != p->value.cols()) {
        throw ValidationError("checkpoint: shape mismatch for " + p->name);
      }
      const auto data = pj.at("data").get<std::vector<double>>();
      p->value = Eigen::Map<const Eigen::MatrixXd>(data.data(), rows, cols);
    }
    return m;
  }

 private:
  struct Backward {
    std::array<Eigen::VectorXd, kAttributeCount> d_attr_out;  // dL/d sigmoid output, size B
    Eigen::MatrixXd d_gender_logits;                          // B x 2
    Eigen::MatrixXd d_spk_e;                                  // E x B
  };

  void add(Parameter* p, const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    *p = Parameter(name, rows, cols);
    params_.push_back(p);
  }

  static Eigen::VectorXd softmax(const Eigen::VectorXd& v) {
    const double m = v.maxCoeff();
    Eigen::VectorXd e = (v.array() - m).exp();
    return e / e.sum();
  }

  // Mean frame per layer, rows = layers (a single row when no stack).
  Eigen::MatrixXd layer_mean_frames(const SpeechEncoding& enc, Eigen::Index b) const {
    if (enc.dim() != cfg_.speech_dim) {
      throw ValidationError("forward: speech: dimension mismatch at batch index " +
                            std::to_string(b) + " (got " + std::to_string(enc.dim()) +
                            ", expected " + std::to_string(cfg_.speech_dim) + ")");
    }
    if (cfg_.speech_layers > 0) {
      if (enc.layers() != cfg_.speech_layers) {
        throw ValidationError("forward: speech: layer count mismatch at batch index " +
                              std::to_string(b) + " (got " + std::to_string(enc.layers()) +
                              ", expected " + std::to_string(cfg_.speech_layers) + ")");
      }
      Eigen::MatrixXd M(cfg_.speech_layers, cfg_.speech_dim);
      for (int l = 0; l < cfg_.speech_layers; ++l) {
        M.row(l) = enc.layer_stack[l].colwise().mean();
      }
      return M;
    }
    if (enc.frame_count() < 1) throw ValidationError("forward: speech: empty frame sequence");
    Eigen::MatrixXd M(1, cfg_.speech_dim);
    M.row(0) = enc.frames.colwise().mean();
    return M;
  }

  LossParts losses_impl(const Forward& fw, const std::vector<EncodedSample>& batch,
                        const LossWeights& weights, Backward* bw) const {
    weights.validate();
    LossParts parts;
    const Eigen::Index b_count = static_cast<Eigen::Index>(batch.size());

    for (const auto& s : batch) {
      if (!s.has_targets) throw ValidationError("loss: sample without targets in training batch");
    }

    for (int a = 0; a < kAttributeCount; ++a) {
      Eigen::VectorXd target(b_count);
      for (Eigen::Index b = 0; b < b_count; ++b) target[b] = batch[b].targets_norm[a];
      Eigen::VectorXd pred = fw.attr_out.col(a);
      Eigen::VectorXd* grad = nullptr;
      if (bw != nullptr) grad = &bw->d_attr_out[a];
      const double c = batch_ccc(pred, target, grad);
      parts.per_attr_ccc[a] = c;
      parts.emotion += 1.0 - c;
    }

    if (cfg_.predict_gender) {
      std::vector<int> labels(batch.size());
      for (size_t b = 0; b < batch.size(); ++b) labels[b] = batch[b].gender_label;
      parts.gender = cross_entropy_masked(fw.gender_logits, labels,
                                          bw != nullptr ? &bw->d_gender_logits : nullptr);
    }
    if (cfg_.predict_speaker()) {
      std::vector<int> labels(batch.size());
      for (size_t b = 0; b < batch.size(); ++b) labels[b] = batch[b].speaker_label;
      parts.speaker = aam_softmax_loss(fw.spk_e, aam_w_.value, labels,
                                       AamParams{cfg_.aam_margin, cfg_.aam_scale},
                                       bw != nullptr ? &bw->d_spk_e : nullptr,
                                       bw != nullptr ? &aam_w_grad_scratch_ : nullptr);
    }
    return parts;
  }

  /** Chain rule from the head gradients down to every parameter. Loss
   *  weights scale the head gradients before they join the trunk. */
  void backward(const Forward& fw, const std::vector<EncodedSample>& batch, const Backward& bw,
                const LossWeights& w) {
    const Eigen::Index b_count = static_cast<Eigen::Index>(batch.size());
    const int F = cfg_.filter_size;
    const int Df = cfg_.fused_dim();

    Eigen::MatrixXd d_fused = Eigen::MatrixXd::Zero(Df, b_count);

    for (int a = 0; a < kAttributeCount; ++a) {
      // Through the sigmoid: dz = dL/do * o * (1 - o).
      Eigen::VectorXd o = fw.attr_out.col(a);
      Eigen::VectorXd dz = bw.d_attr_out[a].array() * o.array() * (1.0 - o.array());
      attr_w2_[a].grad += dz.transpose() * fw.attr_h[a].transpose();
      attr_b2_[a].grad(0, 0) += dz.sum();
      Eigen::MatrixXd dh = attr_w2_[a].value.transpose() * dz.transpose();  // H x B
      Eigen::MatrixXd dpre = dh.array() * (1.0 - fw.attr_h[a].array().square());
      attr_w1_[a].grad += dpre * fw.fused.transpose();
      attr_b1_[a].grad.col(0) += dpre.rowwise().sum();
      d_fused += attr_w1_[a].value.transpose() * dpre;
    }

    if (cfg_.predict_gender && bw.d_gender_logits.size() > 0) {
      Eigen::MatrixXd dlog = (w.alpha * bw.d_gender_logits).transpose();  // 2 x B
      gender_w2_.grad += dlog * fw.gender_h.transpose();
      gender_b2_.grad.col(0) += dlog.rowwise().sum();
      Eigen::MatrixXd dh = gender_w2_.value.transpose() * dlog;
      Eigen::MatrixXd dpre = dh.array() * (1.0 - fw.gender_h.array().square());
      gender_w1_.grad += dpre * fw.fused.transpose();
      gender_b1_.grad.col(0) += dpre.rowwise().sum();
      d_fused += gender_w1_.value.transpose() * dpre;
    }

    if (cfg_.predict_speaker() && bw.d_spk_e.size() > 0) {
      aam_w_.grad += w.beta * aam_w_grad_scratch_;
      Eigen::MatrixXd de = w.beta * bw.d_spk_e;  // E x B
      spk_w2_.grad += de * fw.spk_h.transpose();
      spk_b2_.grad.col(0) += de.rowwise().sum();
      Eigen::MatrixXd dh = spk_w2_.value.transpose() * de;
      Eigen::MatrixXd dpre = dh.array() * (1.0 - fw.spk_h.array().square());
      spk_w1_.grad += dpre * fw.fused.transpose();
      spk_b1_.grad.col(0) += dpre.rowwise().sum();
      d_fused += spk_w1_.value.transpose() * dpre;
    }

    // Trunk: split the fused gradient back into its components.
    Eigen::MatrixXd du = d_fused.topRows(F);  // F x B
    speech_w_.grad += du * fw.pooled.transpose();
    speech_b_.grad.col(0) += du.rowwise().sum();

    if (cfg_.use_text()) {
      Eigen::MatrixXd dt = d_fused.middleRows(F, F);
      for (Eigen::Index b = 0; b < b_count; ++b) {
        text_w_.grad += dt.col(b) * batch[b].text->transpose();
      }
      text_b_.grad.col(0) += dt.rowwise().sum();
    }
    // The fused speaker embedding is a frozen input: no gradient.

    if (cfg_.speech_layers > 0) {
      // p = M^T w  =>  dL/dw = M dL/dp, then through the softmax Jacobian.
      Eigen::VectorXd dw = Eigen::VectorXd::Zero(cfg_.speech_layers);
      for (Eigen::Index b = 0; b < b_count; ++b) {
        Eigen::VectorXd dp = speech_w_.value.transpose() * du.col(b);
        dw += fw.layer_means[b] * dp;
      }
      const Eigen::VectorXd& sw = fw.pool_w;
      const double dot = sw.dot(dw);
      pool_logits_.grad.col(0) += (sw.array() * (dw.array() - dot)).matrix();
    }
  }

  ModelConfig cfg_;
  std::vector<Parameter*> params_;

  Parameter pool_logits_;
  Parameter speech_w_, speech_b_;
  Parameter text_w_, text_b_;
  std::array<Parameter, kAttributeCount> attr_w1_, attr_b1_, attr_w2_, attr_b2_;
  Parameter gender_w1_, gender_b1_, gender_w2_, gender_b2_;
  Parameter spk_w1_, spk_b1_, spk_w2_, spk_b2_, aam_w_;

  TargetNormalizer normalizer_;
  std::vector<std::string> speaker_vocab_;

  mutable Eigen::MatrixXd aam_w_grad_scratch_;
};

}  // namespace serattr

#endif  // SERATTR_MODEL_HPP_

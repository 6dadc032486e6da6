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

#ifndef SERATTR_CLI_HPP_
#define SERATTR_CLI_HPP_

#include <cstdlib>
#include <map>
#include <string>

#include <json.hpp>

#include "serattr/training.hpp"

namespace serattr {

/** Exact inverse of RunConfig::to_kv: every value round-trips bit-exactly
 *  because numbers are stored in shortest round-trip form. */
inline RunConfig run_config_from_kv(const std::map<std::string, std::string>& kv) {
  RunConfig cfg;
  auto lookup = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ValidationError("run config: missing key \"" + key + "\"");
    return it->second;
  };
  auto req_double = [&](const std::string& key, double* out) {
    auto v = try_parse_double(lookup(key));
    if (!v) throw ValidationError("run config: bad number for " + key);
    *out = *v;
  };
  auto req_int = [&](const std::string& key, int* out) {
    auto v = try_parse_int64(lookup(key));
    if (!v) throw ValidationError("run config: bad integer for " + key);
    *out = static_cast<int>(*v);
  };
  auto req_bool = [&](const std::string& key, bool* out) {
    const std::string& s = lookup(key);
    if (s == "true") {
      *out = true;
    } else if (s == "false") {
      *out = false;
    } else {
      throw ValidationError("run config: bad boolean for " + key);
    }
  };
  req_double("learning_rate", &cfg.learning_rate);
  req_int("epochs", &cfg.epochs);
  req_int("batch_size", &cfg.batch_size);
  req_int("filter_size", &cfg.filter_size);
  req_double("max_duration_s", &cfg.max_duration_s);
  req_double("alpha", &cfg.alpha);
  req_double("beta", &cfg.beta);
  cfg.speech_encoder = lookup("speech_encoder");
  req_bool("use_text", &cfg.use_text);
  cfg.text_encoder = lookup("text_encoder");
  req_bool("use_speaker_embedding", &cfg.use_speaker_embedding);
  cfg.speaker_encoder = lookup("speaker_encoder");
  req_bool("predict_gender", &cfg.predict_gender);
  req_bool("predict_speaker", &cfg.predict_speaker);
  req_bool("undersample", &cfg.undersample);
  cfg.policy = SplitPolicy::parse(lookup("policy"));
  auto seed = try_parse_int64(lookup("seed"));
  if (!seed || *seed < 0) throw ValidationError("run config: bad seed");
  cfg.seed = static_cast<uint64_t>(*seed);
  req_int("k", &cfg.k);
  req_int("n", &cfg.n);
  req_double("grad_clip_norm", &cfg.grad_clip_norm);
  req_int("speaker_head_dim", &cfg.speaker_head_dim);
  req_double("aam_margin", &cfg.aam_margin);
  req_double("aam_scale", &cfg.aam_scale);
  return cfg;
}

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, value] : cfg.to_kv()) j[key] = value;
  return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  std::map<std::string, std::string> kv;
  for (auto it = j.begin(); it != j.end(); ++it) kv[it.key()] = it.value().get<std::string>();
  return run_config_from_kv(kv);
}

inline RunConfig load_run_config(const std::string& path) {
  return run_config_from_json(nlohmann::json::parse(read_text_file(path)));
}

inline void save_run_config(const std::string& path, const RunConfig& cfg) {
  write_text_file(path, run_config_to_json(cfg).dump(2) + "\n");
}

/** Cache directory from the environment; empty when caching is off. */
inline std::string cache_dir_from_env() {
  const char* dir = std::getenv("SERA_CACHE_DIR");
  return dir != nullptr ? std::string(dir) : std::string();
}

}  // namespace serattr

#endif  // SERATTR_CLI_HPP_

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

#ifndef SERATTR_CACHE_HPP_
#define SERATTR_CACHE_HPP_

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "serattr/csv.hpp"
#include "serattr/encoders.hpp"

namespace serattr {

/** Content-addressed store of encoded utterances, keyed by
 *  (utterance_id, encoder_id). Blobs are raw little-endian doubles behind a
 *  small header; a manifest carries the checksum per entry. A checksum
 *  mismatch on read is reported as a warning and treated as a miss. */
class EmbeddingCache {
 public:
  explicit EmbeddingCache(const std::filesystem::path& dir) : dir_(dir) {
    std::filesystem::create_directories(dir_);
    load_manifest();
  }

  void put_speech(const std::string& utterance_id, const std::string& encoder_id,
                  const SpeechEncoding& enc) {
    std::vector<double> payload;
    std::vector<uint32_t> dims;
    if (!enc.layer_stack.empty()) {
      dims = {static_cast<uint32_t>(enc.layer_stack.size()),
              static_cast<uint32_t>(enc.layer_stack[0].rows()),
              static_cast<uint32_t>(enc.layer_stack[0].cols())};
      for (const auto& m : enc.layer_stack) append_matrix(m, &payload);
    } else {
      dims = {0, static_cast<uint32_t>(enc.frames.rows()),
              static_cast<uint32_t>(enc.frames.cols())};
      append_matrix(enc.frames, &payload);
    }
    store(utterance_id, encoder_id, kKindSpeech, dims, payload);
  }

  std::optional<SpeechEncoding> get_speech(const std::string& utterance_id,
                                           const std::string& encoder_id) {
    std::vector<uint32_t> dims;
    std::vector<double> payload;
    if (!fetch(utterance_id, encoder_id, kKindSpeech, &dims, &payload)) return std::nullopt;
    if (dims.size() != 3) return corrupt(utterance_id, encoder_id);
    const uint32_t L = dims[0], T = dims[1], D = dims[2];
    const size_t expect = static_cast<size_t>(std::max<uint32_t>(L, 1)) * T * D;
    if (payload.size() != expect) return corrupt(utterance_id, encoder_id);
    SpeechEncoding enc;
    size_t off = 0;
    if (L > 0) {
      for (uint32_t l = 0; l < L; ++l) {
        enc.layer_stack.push_back(read_matrix(payload, &off, T, D));
      }
      enc.frames = enc.layer_stack.back();
    } else {
      enc.frames = read_matrix(payload, &off, T, D);
    }
    return enc;
  }

  void put_vector(const std::string& utterance_id, const std::string& encoder_id,
                  const Eigen::VectorXd& v) {
    std::vector<double> payload(v.data(), v.data() + v.size());
    store(utterance_id, encoder_id, kKindVector, {static_cast<uint32_t>(v.size())}, payload);
  }

  std::optional<Eigen::VectorXd> get_vector(const std::string& utterance_id,
                                            const std::string& encoder_id) {
    std::vector<uint32_t> dims;
    std::vector<double> payload;
    if (!fetch(utterance_id, encoder_id, kKindVector, &dims, &payload)) return std::nullopt;
    if (dims.size() != 1 || payload.size() != dims[0]) {
      corrupt(utterance_id, encoder_id);
      return std::nullopt;
    }
    return Eigen::Map<const Eigen::VectorXd>(payload.data(), payload.size()).eval();
  }

  size_t size() const { return entries_.size(); }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  static constexpr uint8_t kKindSpeech = 1;
  static constexpr uint8_t kKindVector = 2;

  struct Entry {
    std::string file;
    uint64_t checksum = 0;
    uint8_t kind = 0;
  };

  static void append_matrix(const Eigen::MatrixXd& m, std::vector<double>* out) {
    // Row-major frame order regardless of Eigen's internal layout.
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) out->push_back(m(r, c));
    }
  }

  static Eigen::MatrixXd read_matrix(const std::vector<double>& payload, size_t* off, uint32_t rows,
                                     uint32_t cols) {
    Eigen::MatrixXd m(rows, cols);
    for (uint32_t r = 0; r < rows; ++r) {
      for (uint32_t c = 0; c < cols; ++c) m(r, c) = payload[(*off)++];
    }
    return m;
  }

  std::string key(const std::string& utterance_id, const std::string& encoder_id) const {
    return utterance_id + "\x1f" + encoder_id;
  }

  void store(const std::string& utterance_id, const std::string& encoder_id, uint8_t kind,
             const std::vector<uint32_t>& dims, const std::vector<double>& payload) {
    std::string blob;
    blob.push_back(static_cast<char>(kind));
    blob.push_back(static_cast<char>(dims.size()));
    for (uint32_t d : dims) blob.append(reinterpret_cast<const char*>(&d), sizeof(d));
    blob.append(reinterpret_cast<const char*>(payload.data()), payload.size() * sizeof(double));
    const uint64_t checksum = fnv1a64(blob);

    const std::string file = hex_u64(fnv1a64(key(utterance_id, encoder_id))) + ".bin";
    const auto path = dir_ / file;
    const auto tmp = dir_ / (file + ".tmp");
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw RuntimeError("cache: cannot write " + tmp.string());
      out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    }
    std::filesystem::rename(tmp, path);

    Entry e{file, checksum, kind};
    entries_[key(utterance_id, encoder_id)] = e;
    append_manifest_row(utterance_id, encoder_id, e, dims);
  }

  bool fetch(const std::string& utterance_id, const std::string& encoder_id, uint8_t kind,
             std::vector<uint32_t>* dims, std::vector<double>* payload) {
    auto it = entries_.find(key(utterance_id, encoder_id));
    if (it == entries_.end()) return false;
    const Entry& e = it->second;
    std::ifstream in(dir_ / e.file, std::ios::binary);
    if (!in) {
      corrupt(utterance_id, encoder_id);
      return false;
    }
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (fnv1a64(blob) != e.checksum || blob.size() < 2 ||
        static_cast<uint8_t>(blob[0]) != kind) {
      corrupt(utterance_id, encoder_id);
      return false;
    }
    const size_t ndims = static_cast<uint8_t>(blob[1]);
    size_t off = 2;
    if (blob.size() < off + ndims * sizeof(uint32_t)) {
      corrupt(utterance_id, encoder_id);
      return false;
    }
    dims->resize(ndims);
    std::memcpy(dims->data(), blob.data() + off, ndims * sizeof(uint32_t));
    off += ndims * sizeof(uint32_t);
    const size_t n = (blob.size() - off) / sizeof(double);
    payload->resize(n);
    std::memcpy(payload->data(), blob.data() + off, n * sizeof(double));
    return true;
  }

  std::optional<SpeechEncoding> corrupt(const std::string& utterance_id,
                                        const std::string& encoder_id) {
    std::cerr << "warning: cache entry corrupt for (" << utterance_id << ", " << encoder_id
              << "); treating as absent\n";
    entries_.erase(key(utterance_id, encoder_id));
    return std::nullopt;
  }

  std::filesystem::path manifest_path() const { return dir_ / "cache_manifest.csv"; }

  void load_manifest() {
    std::ifstream in(manifest_path());
    if (!in) return;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      auto stripped = strip_cr(line);
      if (stripped.empty()) continue;
      auto f = csv_split(stripped);
      if (f.size() < 5) continue;
      Entry e;
      e.file = f[2];
      e.kind = static_cast<uint8_t>(try_parse_int64(f[4]).value_or(0));
      uint64_t sum = 0;
      std::istringstream(f[3]) >> sum;
      e.checksum = sum;
      entries_[key(f[0], f[1])] = e;
    }
  }

  void append_manifest_row(const std::string& utterance_id, const std::string& encoder_id,
                           const Entry& e, const std::vector<uint32_t>& dims) {
    const bool fresh = !std::filesystem::exists(manifest_path());
    std::ofstream out(manifest_path(), std::ios::app);
    if (!out) throw RuntimeError("cache: cannot write manifest");
    if (fresh) out << "utterance_id,encoder_id,file,checksum,kind,dims\n";
    std::string dim_str;
    for (size_t i = 0; i < dims.size(); ++i) {
      if (i) dim_str += 'x';
      dim_str += std::to_string(dims[i]);
    }
    out << csv_join({utterance_id, encoder_id, e.file, std::to_string(e.checksum),
                     std::to_string(e.kind), dim_str})
        << '\n';
  }

  std::filesystem::path dir_;
  std::map<std::string, Entry> entries_;
};

}  // namespace serattr

#endif  // SERATTR_CACHE_HPP_

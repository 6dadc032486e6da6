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

#ifndef SERATTR_COMMON_HPP_
#define SERATTR_COMMON_HPP_

#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace serattr {

/** Base error for the library. `kind()` maps to process exit codes:
 *  validation/config errors exit 1, runtime failures exit 2. */
class Error : public std::runtime_error {
 public:
  enum class Kind { kValidation, kRuntime };

  Error(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& msg) : Error(Kind::kValidation, msg) {}
};

class RuntimeError : public Error {
 public:
  explicit RuntimeError(const std::string& msg) : Error(Kind::kRuntime, msg) {}
};

// 64-bit FNV-1a. Used for cache checksums and config hashes.
inline uint64_t fnv1a64(std::string_view data, uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64_bytes(const void* data, size_t n) {
  return fnv1a64(std::string_view(static_cast<const char*>(data), n));
}

// splitmix64 finalizer; the standard way to stretch one seed into streams.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t seed) { return splitmix64(seed); }

template <typename... Rest>
uint64_t mix_seed(uint64_t seed, uint64_t first, Rest... rest) {
  return mix_seed(splitmix64(seed ^ splitmix64(first)), rest...);
}

inline uint64_t mix_seed_tag(uint64_t seed, std::string_view tag) {
  return splitmix64(seed ^ fnv1a64(tag));
}

/** Shortest round-trip decimal form of a double (via std::to_chars).
 *  All persisted floats use this so that parse(format(x)) == x bit-exactly. */
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::optional<double> try_parse_double(std::string_view s) {
  double out;
  const char* last = s.data() + s.size();
  auto res = std::from_chars(s.data(), last, out);
  if (res.ec != std::errc() || res.ptr != last) return std::nullopt;
  return out;
}

inline std::optional<int64_t> try_parse_int64(std::string_view s) {
  int64_t out;
  const char* last = s.data() + s.size();
  auto res = std::from_chars(s.data(), last, out);
  if (res.ec != std::errc() || res.ptr != last) return std::nullopt;
  return out;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeError("cannot write file: " + path);
  out << content;
  if (!out) throw RuntimeError("write failed: " + path);
}

inline std::string hex_u64(uint64_t v) {
  char buf[17];
  static const char* digits = "0123456789abcdef";
  for (int i = 15; i >= 0; --i) {
    buf[i] = digits[v & 0xf];
    v >>= 4;
  }
  buf[16] = '\0';
  return std::string(buf);
}

}  // namespace serattr

#endif  // SERATTR_COMMON_HPP_

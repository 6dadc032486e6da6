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

#ifndef SERATTR_RNG_HPP_
#define SERATTR_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "serattr/common.hpp"

namespace serattr {

/** Deterministic RNG for the whole pipeline.
 *
 *  mt19937_64 is fully specified by the standard, but the std distributions
 *  are not, so bounded ints, uniforms, gaussians and shuffles are derived
 *  here explicitly. Two runs with the same seed produce the same stream on
 *  any conforming implementation.
 */
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Unbiased integer in [0, n) via rejection.
  uint64_t below(uint64_t n) {
    if (n == 0) throw RuntimeError("Rng::below: n must be positive");
    uint64_t threshold = (0 - n) % n;  // 2^64 mod n
    for (;;) {
      uint64_t r = gen_();
      if (r >= threshold) return r % n;
    }
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return (gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; the sine companion is discarded to keep the stream stateless.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /** First m positions of a Fisher-Yates pass over [0, n): a uniform random
   *  m-subset without replacement, in selection order. */
  std::vector<size_t> sample_indices(size_t n, size_t m) {
    if (m > n) throw RuntimeError("Rng::sample_indices: m > n");
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    for (size_t i = 0; i < m; ++i) {
      size_t j = i + static_cast<size_t>(below(n - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(m);
    return idx;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace serattr

#endif  // SERATTR_RNG_HPP_

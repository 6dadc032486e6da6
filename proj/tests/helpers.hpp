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

#ifndef SERATTR_TESTS_HELPERS_HPP_
#define SERATTR_TESTS_HELPERS_HPP_

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "serattr/model.hpp"
#include "serattr/types.hpp"

namespace serattr_test {

/** Reference concordance computed along a different route than the library:
 *  raw-moment expectations and the Pearson-correlation identity
 *  ccc = 2 r sx sy / (vx + vy + (mx - my)^2). */
inline double oracle_ccc(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  const double mx = sx / n, my = sy / n;
  const double vx = sxx / n - mx * mx;
  const double vy = syy / n - my * my;
  const double cov = sxy / n - mx * my;
  const double r = cov / std::sqrt(vx * vy);
  return 2.0 * r * std::sqrt(vx) * std::sqrt(vy) / (vx + vy + (mx - my) * (mx - my));
}

/** Central finite differences over every entry of every parameter against
 *  the analytic gradient. Returns the worst relative error. */
inline double max_gradient_rel_error(serattr::Model& model,
                                     const std::vector<serattr::EncodedSample>& batch,
                                     const serattr::LossWeights& weights, double h = 1e-5) {
  model.loss_and_gradient(batch, weights);
  std::vector<Eigen::MatrixXd> analytic;
  analytic.reserve(model.parameters().size());
  for (const auto* p : model.parameters()) analytic.push_back(p->grad);

  double worst = 0.0;
  for (size_t pi = 0; pi < model.parameters().size(); ++pi) {
    serattr::Parameter* p = model.parameters()[pi];
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double keep = p->value.data()[i];
      p->value.data()[i] = keep + h;
      const double up = model.loss_only(batch, weights);
      p->value.data()[i] = keep - h;
      const double down = model.loss_only(batch, weights);
      p->value.data()[i] = keep;
      const double fd = (up - down) / (2.0 * h);
      const double an = analytic[pi].data()[i];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-3});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    auto base = std::filesystem::temp_directory_path() / ("serattr-" + tag + "-XXXXXX");
    std::string tmpl = base.string();
    if (::mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& child = "") const {
    return child.empty() ? path_.string() : (path_ / child).string();
  }

 private:
  std::filesystem::path path_;
};

}  // namespace serattr_test

#endif  // SERATTR_TESTS_HELPERS_HPP_

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

#ifndef SERATTR_OPTIMIZER_HPP_
#define SERATTR_OPTIMIZER_HPP_

#include <cmath>
#include <vector>

#include "serattr/model.hpp"

namespace serattr {

/** Scales all gradients so their global L2 norm is at most `max_norm`.
 *  Returns the pre-clip norm. `max_norm <= 0` disables clipping. */
inline double clip_gradients(const std::vector<Parameter*>& params, double max_norm) {
  double sq = 0.0;
  for (const Parameter* p : params) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (Parameter* p : params) p->grad *= scale;
  }
  return norm;
}

struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(lr > 0.0)) throw ValidationError("adam: lr must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ValidationError("adam: betas must lie in [0, 1)");
    }
  }
};

class Adam {
 public:
  Adam(const std::vector<Parameter*>& params, const AdamConfig& cfg) : params_(params), cfg_(cfg) {
    cfg_.validate();
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Parameter* p : params) {
      m_.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (size_t i = 0; i < params_.size(); ++i) {
      Parameter* p = params_[i];
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * p->grad;
      v_[i] = cfg_.beta2 * v_[i].array().matrix() +
              (1.0 - cfg_.beta2) * p->grad.array().square().matrix();
      const Eigen::ArrayXXd m_hat = m_[i].array() / bc1;
      const Eigen::ArrayXXd v_hat = v_[i].array() / bc2;
      p->value.array() -= cfg_.lr * m_hat / (v_hat.sqrt() + cfg_.eps);
    }
  }

  int steps_taken() const { return t_; }

 private:
  std::vector<Parameter*> params_;
  AdamConfig cfg_;
  std::vector<Eigen::MatrixXd> m_, v_;
  int t_ = 0;
};

}  // namespace serattr

#endif  // SERATTR_OPTIMIZER_HPP_

// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

#pragma once

#include "gccpc/nn/tape.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace gccpc::nn {

class Adam {
  public:
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    // One bias-corrected update of every parameter from its .grad.
    void step(std::span<Parameter* const> params, double lr)
    {
        if (m_.empty()) {
            for (const Parameter* p : params) {
                m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
                v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
            }
        }
        require(m_.size() == params.size(), "Adam: parameter list changed between steps");
        ++t_;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Parameter& p = *params[i];
            m_[i] = beta1 * m_[i] + (1.0 - beta1) * p.grad;
            v_[i] = beta2 * v_[i] + (1.0 - beta2) * p.grad.cwiseAbs2();
            p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
        }
    }

    long steps() const noexcept { return t_; }

  private:
    std::vector<Matrix> m_, v_;
    long t_ = 0;
};

inline std::vector<int> default_milestones(int epochs)
{
    if (epochs >= 30) {
        return {12, 18, 24, 26, 28};
    }
    return {6, 9, 12, 13, 14};
}

// base * 2^-d, d = number of milestones <= epoch (epochs counted from 0).
inline double lr_schedule(int epoch, std::span<const int> milestones, double base = 1e-3)
{
    require(epoch >= 0, "lr_schedule: epoch must be >= 0");
    int d = 0;
    for (int m : milestones) {
        d += m <= epoch ? 1 : 0;
    }
    return std::ldexp(base, -d);
}

} // namespace gccpc::nn

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

// Reverse-mode differentiation over matrix-valued nodes.
//
// Every recorded node owns its forward value and a closure that, given the
// node's accumulated adjoint, adds contributions into the adjoints of its
// inputs. Nodes are appended in evaluation order, so a single reverse sweep
// visits every node after all of its consumers.

#pragma once

#include "gccpc/common.hpp"

#include <deque>
#include <functional>
#include <string>
#include <utility>

namespace gccpc::nn {

struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    Parameter() = default;
    Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v))
    {
        zero_grad();
    }

    void zero_grad() { grad = Matrix::Zero(value.rows(), value.cols()); }
    Eigen::Index size() const { return value.size(); }
};

using Var = std::size_t;

class Tape {
  public:
    using Backward = std::function<void(Tape&, Var)>;

    // Constant input; no adjoint is propagated further.
    Var constant(Matrix value) { return record(std::move(value), nullptr); }

    // Leaf whose adjoint is kept for grad(), e.g. gradients w.r.t. inputs.
    Var input(Matrix value)
    {
        return record(std::move(value), [](Tape&, Var) {});
    }

    // Leaf bound to a parameter; its adjoint is added to p.grad.
    Var parameter(Parameter& p)
    {
        Parameter* target = &p;
        return record(p.value, [target](Tape& t, Var self) { target->grad += t.grad(self); });
    }

    Var record(Matrix value, Backward backward)
    {
        nodes_.push_back(Node{std::move(value), Matrix(), std::move(backward), false});
        return nodes_.size() - 1;
    }

    const Matrix& value(Var v) const { return nodes_.at(v).value; }

    // Adjoint of v, allocated as zeros on first use.
    Matrix& grad(Var v)
    {
        Node& n = nodes_.at(v);
        if (!n.has_grad) {
            n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
            n.has_grad = true;
        }
        return n.grad;
    }

    bool has_grad(Var v) const { return nodes_.at(v).has_grad; }
    // False for constants, whose adjoints would be discarded.
    bool differentiable(Var v) const { return static_cast<bool>(nodes_.at(v).backward); }
    std::size_t size() const noexcept { return nodes_.size(); }

    // Seeds d root / d root = 1 and sweeps backwards. Nodes whose adjoint was
    // never touched are skipped.
    void backward(Var root)
    {
        require(value(root).size() == 1, "Tape::backward: root must be a scalar");
        grad(root).setOnes();
        for (Var v = root + 1; v-- > 0;) {
            Node& n = nodes_[v];
            if (n.has_grad && n.backward) {
                n.backward(*this, v);
            }
        }
    }

  private:
    struct Node {
        Matrix value;
        Matrix grad;
        Backward backward;
        bool has_grad;
    };
    std::deque<Node> nodes_;
};

} // namespace gccpc::nn

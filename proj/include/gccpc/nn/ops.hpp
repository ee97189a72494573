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

#include "gccpc/compression.hpp"
#include "gccpc/interaction.hpp"
#include "gccpc/nn/tape.hpp"

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

namespace gccpc::nn {

// Work done by one convolution layer, summed over the models it touched.
struct LayerCounters {
    std::uint64_t features = 0; // input feature rows fed to the contraction
    std::uint64_t macs = 0;

    LayerCounters& operator+=(const LayerCounters& o)
    {
        features += o.features;
        macs += o.macs;
        return *this;
    }
};

// One model's geometry for one layer: either a compressed tensor (H, with
// representatives on both sides) or the sparse per-point tensor T.
struct ConvOperand {
    const CompressedInteraction* compressed = nullptr;
    std::shared_ptr<const SparseInteraction> sparse;

    std::size_t rows_in() const { return compressed ? compressed->M : sparse->num_inputs(); }
    std::size_t rows_out() const { return compressed ? compressed->N : sparse->num_outputs(); }
    std::size_t offsets() const { return compressed ? compressed->K : sparse->num_offsets(); }

    // M*N*K*C + N*K*C*C' compressed; nnz(T)*C + J*K*C*C' uncompressed.
    std::uint64_t macs(std::uint64_t c, std::uint64_t c_out) const
    {
        const std::uint64_t contraction =
            compressed ? std::uint64_t{compressed->M} * compressed->N * compressed->K * c : sparse->nnz() * c;
        return contraction + std::uint64_t{rows_out()} * offsets() * c * c_out;
    }
};

// h[n, k*C + c] = sum_m H[m, n, k] x[m, c]: one GEMM, then reading the
// (N*K) x C row-major result as N x (K*C).
inline Matrix compressed_interaction_apply(const CompressedInteraction& h, const Eigen::Ref<const Matrix>& x)
{
    require(static_cast<std::size_t>(x.rows()) == h.M, "compressed conv: representative count mismatch");
    Matrix g(static_cast<Eigen::Index>(h.N * h.K), x.cols());
    g.noalias() = h.tensor.transpose() * x;
    g.resize(static_cast<Eigen::Index>(h.N), static_cast<Eigen::Index>(h.K) * x.cols());
    return g;
}

// Adjoint of compressed_interaction_apply.
inline Matrix compressed_interaction_adjoint(const CompressedInteraction& h, const Matrix& grad_h, Eigen::Index channels)
{
    require(grad_h.rows() == static_cast<Eigen::Index>(h.N) && grad_h.cols() == static_cast<Eigen::Index>(h.K) * channels,
            "compressed conv: gradient shape mismatch");
    const ConstMatrixMap g(grad_h.data(), static_cast<Eigen::Index>(h.N * h.K), channels);
    Matrix out(static_cast<Eigen::Index>(h.M), channels);
    out.noalias() = h.tensor * g;
    return out;
}

// Point convolution over a batch of models stacked row-wise. x holds the
// models' input rows back to back in operand order; w is (K*C) x C'.
inline Var conv(Tape& tape, Var x, std::vector<ConvOperand> operands, Var w, LayerCounters* counters = nullptr)
{
    const Matrix& xv = tape.value(x);
    const Matrix& wv = tape.value(w);
    const Eigen::Index C = xv.cols();
    const Eigen::Index Cout = wv.cols();
    std::size_t rows_in = 0, rows_out = 0;
    for (const auto& op : operands) {
        require(op.compressed != nullptr || op.sparse != nullptr, "conv: empty operand");
        require(static_cast<Eigen::Index>(op.offsets()) * C == wv.rows(), "conv: weight shape mismatch");
        rows_in += op.rows_in();
        rows_out += op.rows_out();
    }
    require(static_cast<std::size_t>(xv.rows()) == rows_in, "conv: input rows do not match the operands");

    auto h = std::make_shared<Matrix>(static_cast<Eigen::Index>(rows_out), wv.rows());
    std::size_t in_off = 0, out_off = 0;
    for (const auto& op : operands) {
        const auto ri = static_cast<Eigen::Index>(op.rows_in());
        const auto ro = static_cast<Eigen::Index>(op.rows_out());
        const auto xb = xv.middleRows(static_cast<Eigen::Index>(in_off), ri);
        if (op.compressed) {
            h->middleRows(static_cast<Eigen::Index>(out_off), ro) = compressed_interaction_apply(*op.compressed, xb);
        } else {
            h->middleRows(static_cast<Eigen::Index>(out_off), ro) = apply_interaction(*op.sparse, xb);
        }
        if (counters) {
            counters->features += op.rows_in();
            counters->macs += op.macs(static_cast<std::uint64_t>(C), static_cast<std::uint64_t>(Cout));
        }
        in_off += op.rows_in();
        out_off += op.rows_out();
    }
    Matrix y(static_cast<Eigen::Index>(rows_out), Cout);
    y.noalias() = *h * wv;

    return tape.record(std::move(y), [x, w, h, ops = std::move(operands), C](Tape& t, Var self) {
        const Matrix& gy = t.grad(self);
        t.grad(w).noalias() += h->transpose() * gy;
        if (!t.differentiable(x)) {
            return;
        }
        Matrix gh(gy.rows(), t.value(w).rows());
        gh.noalias() = gy * t.value(w).transpose();
        Matrix& gx = t.grad(x);
        std::size_t in_off = 0, out_off = 0;
        for (const auto& op : ops) {
            const auto ri = static_cast<Eigen::Index>(op.rows_in());
            const auto ro = static_cast<Eigen::Index>(op.rows_out());
            const Matrix ghb = gh.middleRows(static_cast<Eigen::Index>(out_off), ro);
            if (op.compressed) {
                gx.middleRows(static_cast<Eigen::Index>(in_off), ri) +=
                    compressed_interaction_adjoint(*op.compressed, ghb, C);
            } else {
                gx.middleRows(static_cast<Eigen::Index>(in_off), ri) += apply_interaction_adjoint(*op.sparse, ghb, C);
            }
            in_off += op.rows_in();
            out_off += op.rows_out();
        }
    });
}

struct BatchNorm {
    Parameter gamma;
    Parameter beta;
    Vector running_mean;
    Vector running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    BatchNorm() = default;
    BatchNorm(const std::string& name, Eigen::Index channels)
        : gamma(name + ".gamma", Matrix::Ones(1, channels)), beta(name + ".beta", Matrix::Zero(1, channels)),
          running_mean(Vector::Zero(channels)), running_var(Vector::Ones(channels))
    {
    }
};

enum class BnMode {
    train,        // batch statistics, running statistics updated
    train_frozen, // batch statistics, running statistics untouched
    eval          // running statistics
};

struct BatchStats {
    Vector mean;
    Vector var; // biased
};

// Per-channel normalization over all rows of the batch. In compressed mode
// the rows are representatives and count equally.
inline Var batch_norm(Tape& tape, Var x, Var gamma, Var beta, BatchNorm& bn, BnMode mode,
                      BatchStats* stats_out = nullptr)
{
    const Matrix& xv = tape.value(x);
    const Eigen::Index n = xv.rows(), c = xv.cols();
    require(n > 0, "batch_norm: empty batch");
    require(c == bn.running_mean.size(), "batch_norm: channel count mismatch");
    Vector mean, var;
    if (mode == BnMode::eval) {
        mean = bn.running_mean;
        var = bn.running_var;
    } else {
        mean = xv.colwise().mean().transpose();
        var = (xv.rowwise() - mean.transpose()).array().square().colwise().mean().transpose();
        if (mode == BnMode::train) {
            bn.running_mean = (1.0 - bn.momentum) * bn.running_mean + bn.momentum * mean;
            bn.running_var = (1.0 - bn.momentum) * bn.running_var + bn.momentum * var;
        }
    }
    if (stats_out) {
        *stats_out = BatchStats{mean, var};
    }
    const Eigen::RowVectorXd inv_std = (var.array() + bn.eps).rsqrt().matrix().transpose();
    auto xhat = std::make_shared<Matrix>((xv.rowwise() - mean.transpose()).array().rowwise() * inv_std.array());
    const Matrix& g = tape.value(gamma);
    const Matrix& b = tape.value(beta);
    Matrix y = (xhat->array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
    const bool batch_stats = mode != BnMode::eval;
    return tape.record(std::move(y), [x, gamma, beta, xhat, inv_std, batch_stats](Tape& t, Var self) {
        const Matrix& gy = t.grad(self);
        t.grad(beta) += gy.colwise().sum();
        t.grad(gamma) += (gy.array() * xhat->array()).colwise().sum().matrix();
        const Eigen::RowVectorXd scale = t.value(gamma).row(0).array() * inv_std.array();
        if (!batch_stats) {
            t.grad(x) += (gy.array().rowwise() * scale.array()).matrix();
            return;
        }
        const double rows = static_cast<double>(gy.rows());
        const Eigen::RowVectorXd sum_gy = gy.colwise().sum();
        const Eigen::RowVectorXd sum_gy_xhat = (gy.array() * xhat->array()).colwise().sum();
        Matrix gx = gy;
        gx.rowwise() -= sum_gy / rows;
        gx.array() -= xhat->array().rowwise() * (sum_gy_xhat / rows).array();
        t.grad(x).array() += gx.array().rowwise() * scale.array();
    });
}

inline Var relu(Tape& tape, Var x)
{
    Matrix y = tape.value(x).cwiseMax(0.0);
    return tape.record(std::move(y), [x](Tape& t, Var self) {
        t.grad(x).array() += (t.value(x).array() > 0.0).select(t.grad(self).array(), 0.0);
    });
}

// Weighted mean of each model's rows: y[b] = sum_r w_r x_r / sum_r w_r over
// rows offsets[b] .. offsets[b+1]-1.
inline Var weighted_pool(Tape& tape, Var x, std::vector<std::size_t> offsets, std::vector<double> weights)
{
    const Matrix& xv = tape.value(x);
    require(offsets.size() >= 2 && offsets.back() == static_cast<std::size_t>(xv.rows()),
            "weighted_pool: offsets do not cover the rows");
    require(weights.size() == static_cast<std::size_t>(xv.rows()), "weighted_pool: one weight per row expected");
    const std::size_t B = offsets.size() - 1;
    Matrix y = Matrix::Zero(static_cast<Eigen::Index>(B), xv.cols());
    std::vector<double> total(B, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
        require(offsets[b + 1] > offsets[b], "weighted_pool: model without rows");
        for (std::size_t r = offsets[b]; r < offsets[b + 1]; ++r) {
            y.row(static_cast<Eigen::Index>(b)) += weights[r] * xv.row(static_cast<Eigen::Index>(r));
            total[b] += weights[r];
        }
        require(total[b] > 0.0, "weighted_pool: weights must be positive");
        y.row(static_cast<Eigen::Index>(b)) /= total[b];
    }
    return tape.record(std::move(y), [x, offs = std::move(offsets), w = std::move(weights),
                                      total = std::move(total)](Tape& t, Var self) {
        const Matrix& gy = t.grad(self);
        Matrix& gx = t.grad(x);
        for (std::size_t b = 0; b + 1 < offs.size(); ++b) {
            for (std::size_t r = offs[b]; r < offs[b + 1]; ++r) {
                gx.row(static_cast<Eigen::Index>(r)) += (w[r] / total[b]) * gy.row(static_cast<Eigen::Index>(b));
            }
        }
    });
}

// y = x w + b, with b a 1 x out row.
inline Var linear(Tape& tape, Var x, Var w, Var b)
{
    const Matrix& xv = tape.value(x);
    const Matrix& wv = tape.value(w);
    require(xv.cols() == wv.rows(), "linear: shape mismatch");
    Matrix y(xv.rows(), wv.cols());
    y.noalias() = xv * wv;
    y.rowwise() += tape.value(b).row(0);
    return tape.record(std::move(y), [x, w, b](Tape& t, Var self) {
        const Matrix& gy = t.grad(self);
        t.grad(x).noalias() += gy * t.value(w).transpose();
        t.grad(w).noalias() += t.value(x).transpose() * gy;
        t.grad(b) += gy.colwise().sum();
    });
}

inline Matrix log_softmax_rows(const Matrix& x)
{
    Matrix y(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mx = x.row(r).maxCoeff();
        y.row(r) = x.row(r).array() - mx;
        y.row(r).array() -= std::log(y.row(r).array().exp().sum());
    }
    return y;
}

inline Var log_softmax(Tape& tape, Var x)
{
    Matrix y = log_softmax_rows(tape.value(x));
    return tape.record(std::move(y), [x](Tape& t, Var self) {
        const Matrix& gy = t.grad(self);
        const Matrix p = t.value(self).array().exp();
        t.grad(x) += gy - (p.array().colwise() * gy.rowwise().sum().array()).matrix();
    });
}

// -log p[label] for one normalized row of log-probabilities.
inline double cross_entropy_loss(const Eigen::Ref<const Eigen::RowVectorXd>& log_probs, int label)
{
    require(label >= 0 && label < log_probs.size(), "cross_entropy_loss: label out of range");
    return -log_probs(label);
}

// Mean negative log-likelihood over the batch; returns a 1x1 node.
inline Var nll_loss(Tape& tape, Var log_probs, std::vector<int> labels)
{
    const Matrix& lp = tape.value(log_probs);
    require(static_cast<std::size_t>(lp.rows()) == labels.size(), "nll_loss: one label per row expected");
    double s = 0.0;
    for (std::size_t b = 0; b < labels.size(); ++b) {
        s += cross_entropy_loss(lp.row(static_cast<Eigen::Index>(b)), labels[b]);
    }
    Matrix y(1, 1);
    y(0, 0) = s / static_cast<double>(labels.size());
    return tape.record(std::move(y), [log_probs, lab = std::move(labels)](Tape& t, Var self) {
        const double g = t.grad(self)(0, 0) / static_cast<double>(lab.size());
        Matrix& gl = t.grad(log_probs);
        for (std::size_t b = 0; b < lab.size(); ++b) {
            gl(static_cast<Eigen::Index>(b), lab[b]) -= g;
        }
    });
}

} // namespace gccpc::nn
